//! End-to-end training of an APE system from triplets.

use std::str::FromStr;

use rayon::prelude::*;

use crate::align::{levenshtein_align, symmetrize, viterbi_align, LexiconModel, Symmetrization, WordAlignment};
use crate::corpus::{augment_identity, build_joint, JointSentence, Sentence, Triplet};
use crate::decoder::DecoderInput;
use crate::error::{ApeError, Result};
use crate::lm::{NGramLM, Smoothing};
use crate::tm::{PhraseCounts, PhraseTable, Provenance, DEFAULT_MAX_PHRASE_LEN, DEFAULT_SIGMA};

/// How mt and pe tokens are linked before phrase extraction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum MtPeAligner {
    /// IBM Model 1 in both directions, symmetrized.
    #[default]
    Ibm1,
    /// Edit-distance alignment.
    Levenshtein,
}

impl FromStr for MtPeAligner {
    type Err = ApeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ibm1" => Ok(MtPeAligner::Ibm1),
            "levenshtein" => Ok(MtPeAligner::Levenshtein),
            _ => Err(ApeError::InvalidArgument(format!("unknown aligner {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub provenance: Provenance,
    pub aligner: MtPeAligner,
    pub ibm_iterations: usize,
    pub symmetrization: Symmetrization,
    pub max_phrase_len: usize,
    pub lm_order: usize,
    pub smoothing: Smoothing,
    pub sigma: f64,
    /// Adds `(pe, pe)` pairs to the monolingual training data.
    pub augment: bool,
    pub dense_features: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            provenance: Provenance::Monolingual,
            aligner: MtPeAligner::Ibm1,
            ibm_iterations: 5,
            symmetrization: Symmetrization::GrowDiagFinalAnd,
            max_phrase_len: DEFAULT_MAX_PHRASE_LEN,
            lm_order: 3,
            smoothing: Smoothing::KneserNey,
            sigma: DEFAULT_SIGMA,
            augment: false,
            dense_features: true,
        }
    }
}

/// Source-mt lexicons used to build joint inputs at test time.
#[derive(Clone, Debug)]
pub struct JointAligner {
    pub src_to_mt: LexiconModel,
    pub mt_to_src: LexiconModel,
    pub symmetrization: Symmetrization,
}

impl JointAligner {
    pub fn train(pairs: &[(Sentence, Sentence)], iterations: usize, symmetrization: Symmetrization) -> Result<Self> {
        let reversed: Vec<(Sentence, Sentence)> = pairs.iter().map(|(a, b)| (b.clone(), a.clone())).collect();
        Ok(JointAligner {
            src_to_mt: LexiconModel::ibm1_train(pairs, iterations)?,
            mt_to_src: LexiconModel::ibm1_train(&reversed, iterations)?,
            symmetrization,
        })
    }

    /// `(src, mt)` links.
    pub fn align(&self, src: &[String], mt: &[String]) -> WordAlignment {
        align_both(&self.src_to_mt, &self.mt_to_src, src, mt, self.symmetrization)
    }

    pub fn joint(&self, src: &Sentence, mt: &Sentence) -> Result<JointSentence> {
        build_joint(src, mt, &self.align(src, mt))
    }
}

fn align_both(
    fwd: &LexiconModel,
    rev: &LexiconModel,
    a: &[String],
    b: &[String],
    heuristic: Symmetrization,
) -> WordAlignment {
    let f = viterbi_align(fwd, a, b);
    let r = viterbi_align(rev, b, a).transposed();
    symmetrize(&f, &r, heuristic, a.len(), b.len())
}

#[derive(Clone, Debug)]
pub struct TrainedSystem {
    pub table: PhraseTable,
    pub lm: NGramLM,
    /// Present for the context-aware representation.
    pub joint: Option<JointAligner>,
}

impl TrainedSystem {
    /// Decoder input for one test segment in this system's representation.
    pub fn input(&self, src: &Sentence, mt: &Sentence) -> Result<DecoderInput> {
        match &self.joint {
            Some(j) => Ok(DecoderInput::joint(&j.joint(src, mt)?)),
            None => Ok(DecoderInput::plain(mt.tokens().to_vec())),
        }
    }
}

/// Aligns mt with pe, extracts and scores phrases, and trains the pe-side LM.
pub fn train(triplets: &[Triplet], config: &TrainConfig) -> Result<TrainedSystem> {
    if triplets.is_empty() {
        return Err(ApeError::EmptyCorpus);
    }
    let joint = match config.provenance {
        Provenance::Monolingual => None,
        Provenance::ContextAware => {
            let pairs: Vec<(Sentence, Sentence)> = triplets.iter().map(|t| (t.src.clone(), t.mt.clone())).collect();
            Some(JointAligner::train(&pairs, config.ibm_iterations, config.symmetrization)?)
        }
    };
    // Inputs in the table's vocabulary paired with the surface mt used for
    // alignment and the post-edit.
    let mut rows: Vec<(Vec<String>, Sentence, Sentence)> = triplets
        .par_iter()
        .map(|t| {
            let input = match &joint {
                Some(j) => j.joint(&t.src, &t.mt)?.tokens.iter().map(|x| x.to_token()).collect(),
                None => t.mt.tokens().to_vec(),
            };
            Ok((input, t.mt.clone(), t.pe.clone()))
        })
        .collect::<Result<_>>()?;
    if config.augment && joint.is_none() {
        let pairs: Vec<(Sentence, Sentence)> = triplets.iter().map(|t| (t.mt.clone(), t.pe.clone())).collect();
        for (a, b) in augment_identity(&pairs).into_iter().skip(pairs.len()) {
            rows.push((a.tokens().to_vec(), a, b));
        }
    }

    let alignments: Vec<WordAlignment> = match config.aligner {
        MtPeAligner::Levenshtein => rows.par_iter().map(|(_, mt, pe)| levenshtein_align(mt, pe).alignment).collect(),
        MtPeAligner::Ibm1 => {
            let fwd_pairs: Vec<(Sentence, Sentence)> = rows.iter().map(|(_, mt, pe)| (mt.clone(), pe.clone())).collect();
            let j = JointAligner::train(&fwd_pairs, config.ibm_iterations, config.symmetrization)?;
            rows.par_iter().map(|(_, mt, pe)| j.align(mt, pe)).collect()
        }
    };

    let mut counts = PhraseCounts::new(config.max_phrase_len);
    for ((input, _, pe), al) in rows.iter().zip(&alignments) {
        counts.add_sentence(input, pe, al)?;
    }
    let fwd_in: Vec<(&[String], &[String], &WordAlignment)> = rows
        .iter()
        .zip(&alignments)
        .map(|((input, _, pe), al)| (input.as_slice(), pe.tokens(), al))
        .collect();
    let transposed: Vec<WordAlignment> = alignments.iter().map(WordAlignment::transposed).collect();
    let rev_in: Vec<(&[String], &[String], &WordAlignment)> = rows
        .iter()
        .zip(&transposed)
        .map(|((input, _, pe), al)| (pe.tokens(), input.as_slice(), al))
        .collect();
    let lex_fwd = LexiconModel::from_alignments(&fwd_in);
    let lex_rev = LexiconModel::from_alignments(&rev_in);
    let mut table = PhraseTable::estimate(&counts, &lex_fwd, &lex_rev, config.sigma, config.provenance)?;
    if config.dense_features {
        let segments: Vec<(Vec<String>, Vec<String>)> = rows
            .iter()
            .take(triplets.len())
            .map(|(input, _, pe)| (input.clone(), pe.tokens().to_vec()))
            .collect();
        table.compute_dense_features(&segments)?;
    }
    let pes: Vec<&[String]> = triplets.iter().map(|t| t.pe.tokens()).collect();
    let lm = NGramLM::train(&pes, config.lm_order, config.smoothing)?;
    Ok(TrainedSystem { table, lm, joint })
}
