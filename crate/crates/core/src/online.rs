//! Online post-editing over a stream of segments.
//!
//! Each step retrieves similar, already post-edited segments, builds small
//! models from them, merges in globally accumulated phrase statistics and
//! decodes. Feedback with the human post-edit then updates every store.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::align::{levenshtein_align, LexiconModel, WordAlignment, NULL_TOKEN};
use crate::decoder::{DecodeOptions, Decoder, DecoderInput, FeatureWeights, RuleSource, TraceStep};
use crate::error::{ApeError, Result};
use crate::lm::{NGramLM, Smoothing};
use crate::optimize::{self, TuneConfig};
use crate::tm::{find_phrase, PhraseCounts, PhraseTable, Provenance, DEFAULT_MAX_PHRASE_LEN, DEFAULT_SIGMA};

pub const DEFAULT_CUTOFF: f64 = 0.8;
pub const MIN_TUNING_INSTANCES: usize = 25;

/// Inverted tf-idf index over token sequences.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SimilarityIndex {
    docs: BTreeMap<usize, BTreeMap<String, u32>>,
    postings: BTreeMap<String, BTreeSet<usize>>,
}

fn term_counts(tokens: &[String]) -> BTreeMap<String, u32> {
    let mut tf = BTreeMap::new();
    for t in tokens {
        *tf.entry(t.clone()).or_default() += 1;
    }
    tf
}

impl SimilarityIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    /// Stores `tokens` under `id`, replacing any earlier document.
    pub fn add(&mut self, id: usize, tokens: &[String]) {
        self.remove(id);
        let tf = term_counts(tokens);
        for t in tf.keys() {
            self.postings.entry(t.clone()).or_default().insert(id);
        }
        self.docs.insert(id, tf);
    }

    pub fn remove(&mut self, id: usize) -> bool {
        let Some(tf) = self.docs.remove(&id) else {
            return false;
        };
        for t in tf.keys() {
            let list = self.postings.get_mut(t).unwrap();
            list.remove(&id);
            if list.is_empty() {
                self.postings.remove(t);
            }
        }
        true
    }

    pub fn df(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, BTreeSet::len)
    }

    /// `ln((1 + D) / (1 + df)) + 1`.
    pub fn idf(&self, term: &str) -> f64 {
        ((1.0 + self.docs.len() as f64) / (1.0 + self.df(term) as f64)).ln() + 1.0
    }

    fn norm(&self, tf: &BTreeMap<String, u32>) -> f64 {
        tf.iter()
            .map(|(t, &c)| (c as f64 * self.idf(t)).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Documents with cosine similarity at least `cutoff`, best first, ties
    /// by lower id.
    pub fn query(&self, tokens: &[String], cutoff: f64) -> Vec<(usize, f64)> {
        let q = term_counts(tokens);
        let qnorm = self.norm(&q);
        if qnorm == 0.0 {
            return Vec::new();
        }
        let mut cands: BTreeSet<usize> = BTreeSet::new();
        for t in q.keys() {
            if let Some(p) = self.postings.get(t) {
                cands.extend(p);
            }
        }
        let mut out: Vec<(usize, f64)> = cands
            .into_iter()
            .map(|id| {
                let d = &self.docs[&id];
                if *d == q {
                    return (id, 1.0);
                }
                let dot: f64 = q
                    .iter()
                    .filter_map(|(t, &c)| d.get(t).map(|&dc| c as f64 * dc as f64 * self.idf(t).powi(2)))
                    .sum();
                (id, (dot / (qnorm * self.norm(d))).min(1.0))
            })
            .filter(|&(_, s)| s >= cutoff)
            .collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        out
    }
}

/// Models estimated from a handful of retrieved segments.
#[derive(Clone, Debug)]
pub struct LocalModels {
    pub table: PhraseTable,
    pub lm: NGramLM,
}

fn lexicon_pair(pairs: &[(&[String], &[String], &WordAlignment)]) -> (LexiconModel, LexiconModel) {
    let fwd = LexiconModel::from_alignments(pairs);
    let transposed: Vec<WordAlignment> = pairs.iter().map(|p| p.2.transposed()).collect();
    let rev_pairs: Vec<(&[String], &[String], &WordAlignment)> = pairs
        .iter()
        .zip(&transposed)
        .map(|(p, t)| (p.1, p.0, t))
        .collect();
    (fwd, LexiconModel::from_alignments(&rev_pairs))
}

/// Phrase table (with reordering) and trigram-style LM from `(mt, pe)` pairs
/// aligned by edit distance.
pub fn build_local_models(
    instances: &[(&[String], &[String])],
    max_len: usize,
    lm_order: usize,
    smoothing: Smoothing,
    sigma: f64,
) -> Result<LocalModels> {
    if instances.is_empty() {
        return Err(ApeError::EmptyCorpus);
    }
    let alignments: Vec<WordAlignment> = instances
        .iter()
        .map(|(mt, pe)| levenshtein_align(mt, pe).alignment)
        .collect();
    let mut counts = PhraseCounts::new(max_len);
    for ((mt, pe), al) in instances.iter().zip(&alignments) {
        counts.add_sentence(mt, pe, al)?;
    }
    let triples: Vec<(&[String], &[String], &WordAlignment)> = instances
        .iter()
        .zip(&alignments)
        .map(|((mt, pe), al)| (*mt, *pe, al))
        .collect();
    let (fwd, rev) = lexicon_pair(&triples);
    let table = if counts.is_empty() {
        PhraseTable::new(max_len, Provenance::Monolingual, sigma)
    } else {
        PhraseTable::estimate(&counts, &fwd, &rev, sigma, Provenance::Monolingual)?
    };
    let pes: Vec<&[String]> = instances.iter().map(|(_, pe)| *pe).collect();
    let lm = NGramLM::train(&pes, lm_order, smoothing)?;
    Ok(LocalModels { table, lm })
}

/// Per-option feedback counters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FeedbackCounts {
    pub applied: u64,
    pub post_edited: u64,
    pub offered: u64,
    pub absent: u64,
}

impl FeedbackCounts {
    pub fn f1(&self) -> f64 {
        if self.applied == 0 {
            0.0
        } else {
            self.post_edited as f64 / self.applied as f64
        }
    }

    pub fn f2(&self) -> f64 {
        if self.offered == 0 {
            0.0
        } else {
            self.absent as f64 / self.offered as f64
        }
    }
}

/// Phrase statistics accumulated over every processed segment.
#[derive(Clone, Debug)]
pub struct DynamicKB {
    pub max_len: usize,
    pub sigma: f64,
    counts: PhraseCounts,
    targets: BTreeMap<Vec<String>, BTreeSet<Vec<String>>>,
    src_totals: BTreeMap<Vec<String>, u64>,
    tgt_totals: BTreeMap<Vec<String>, u64>,
    global: [u64; 6],
    lex_fwd: BTreeMap<(String, String), f64>,
    lex_rev: BTreeMap<(String, String), f64>,
    feedback: BTreeMap<(Vec<String>, Vec<String>), FeedbackCounts>,
}

impl DynamicKB {
    pub fn new(max_len: usize, sigma: f64) -> Self {
        DynamicKB {
            max_len,
            sigma,
            counts: PhraseCounts::new(max_len),
            targets: BTreeMap::new(),
            src_totals: BTreeMap::new(),
            tgt_totals: BTreeMap::new(),
            global: [0; 6],
            lex_fwd: BTreeMap::new(),
            lex_rev: BTreeMap::new(),
            feedback: BTreeMap::new(),
        }
    }

    /// Number of distinct phrase pairs.
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn joint_count(&self, src: &[String], tgt: &[String]) -> u64 {
        self.counts.joint_count(src, tgt)
    }

    pub fn update(&mut self, mt: &[String], pe: &[String]) -> Result<()> {
        let al = levenshtein_align(mt, pe).alignment;
        let mut local = PhraseCounts::new(self.max_len);
        local.add_sentence(mt, pe, &al)?;
        for (s, t, joint, orient) in local.pairs() {
            self.targets.entry(s.to_vec()).or_default().insert(t.to_vec());
            *self.src_totals.entry(s.to_vec()).or_default() += joint;
            *self.tgt_totals.entry(t.to_vec()).or_default() += joint;
            for i in 0..6 {
                self.global[i] += orient[i];
            }
        }
        self.counts.merge(&local);
        let mut mt_aligned = vec![false; mt.len()];
        let mut pe_aligned = vec![false; pe.len()];
        for &(i, j) in al.links() {
            mt_aligned[i] = true;
            pe_aligned[j] = true;
            *self.lex_fwd.entry((mt[i].clone(), pe[j].clone())).or_default() += 1.0;
            *self.lex_rev.entry((pe[j].clone(), mt[i].clone())).or_default() += 1.0;
        }
        for (w, _) in pe.iter().zip(&pe_aligned).filter(|(_, a)| !**a) {
            *self.lex_fwd.entry((NULL_TOKEN.to_owned(), w.clone())).or_default() += 1.0;
        }
        for (w, _) in mt.iter().zip(&mt_aligned).filter(|(_, a)| !**a) {
            *self.lex_rev.entry((NULL_TOKEN.to_owned(), w.clone())).or_default() += 1.0;
        }
        Ok(())
    }

    /// Every stored option for the requested source phrases, scored from the
    /// global counts.
    pub fn query<'a>(&self, src_phrases: impl IntoIterator<Item = &'a [String]>) -> PhraseTable {
        let mut table = PhraseTable::new(self.max_len, Provenance::Monolingual, self.sigma);
        let wanted: Vec<&[String]> = src_phrases
            .into_iter()
            .filter(|s| self.targets.contains_key(*s))
            .collect();
        if wanted.is_empty() {
            return table;
        }
        let fwd = LexiconModel::from_counts(self.lex_fwd.iter().map(|(k, v)| (k.clone(), *v)).collect::<HashMap<_, _>>());
        let rev = LexiconModel::from_counts(self.lex_rev.iter().map(|(k, v)| (k.clone(), *v)).collect::<HashMap<_, _>>());
        for s in wanted {
            for t in &self.targets[s] {
                if let Some(e) = self.counts.entry(
                    s,
                    t,
                    self.src_totals[s],
                    self.tgt_totals[t],
                    self.global,
                    &fwd,
                    &rev,
                    self.sigma,
                ) {
                    table.insert(e);
                }
            }
        }
        table.fill_similarity();
        table
    }

    pub fn feedback_counts(&self, src: &[String], tgt: &[String]) -> FeedbackCounts {
        self.feedback
            .get(&(src.to_vec(), tgt.to_vec()))
            .copied()
            .unwrap_or_default()
    }

    /// `(F1, F2)` for an option.
    pub fn negative_scores(&self, src: &[String], tgt: &[String]) -> (f64, f64) {
        let c = self.feedback_counts(src, tgt);
        (c.f1(), c.f2())
    }

    /// Updates F1 counters for the rules in `trace` and F2 counters for the
    /// `offered` options, judging each by whether its target occurs in `pe`.
    pub fn negative_feedback(&mut self, trace: &[TraceStep], pe: &[String], offered: &[(Vec<String>, Vec<String>)]) {
        for step in trace {
            if !matches!(step.source, RuleSource::Table(_)) {
                continue;
            }
            let c = self.feedback.entry((step.src_phrase.clone(), step.tgt.clone())).or_default();
            c.applied += 1;
            if find_phrase(pe, &step.tgt).is_none() {
                c.post_edited += 1;
            }
        }
        for (s, t) in offered {
            let c = self.feedback.entry((s.clone(), t.clone())).or_default();
            c.offered += 1;
            if find_phrase(pe, t).is_none() {
                c.absent += 1;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OnlineConfig {
    pub cutoff: f64,
    pub max_phrase_len: usize,
    pub lm_order: usize,
    pub smoothing: Smoothing,
    pub sigma: f64,
    pub decode: DecodeOptions,
    pub tune: TuneConfig,
    pub seed: u64,
    /// Most similar instances kept per step.
    pub max_instances: usize,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        OnlineConfig {
            cutoff: DEFAULT_CUTOFF,
            max_phrase_len: DEFAULT_MAX_PHRASE_LEN,
            lm_order: 3,
            smoothing: Smoothing::KneserNey,
            sigma: DEFAULT_SIGMA,
            decode: DecodeOptions {
                nbest: 20,
                ..DecodeOptions::default()
            },
            tune: TuneConfig {
                max_cycles: 2,
                ..TuneConfig::default()
            },
            seed: 1,
            max_instances: 200,
        }
    }
}

/// Result of tuning on retrieved instances.
#[derive(Clone, Debug, PartialEq)]
pub struct OnlineTuneResult {
    pub weights: FeatureWeights,
    pub tuned: bool,
}

/// Three random 80/20 splits, one tuning run each, averaged weights. Fewer
/// than [`MIN_TUNING_INSTANCES`] instances return `previous` untouched.
pub fn online_tune(
    instances: &[(&[String], &[String])],
    previous: &FeatureWeights,
    global_lm: &NGramLM,
    config: &OnlineConfig,
    seed: u64,
) -> Result<OnlineTuneResult> {
    if instances.len() < MIN_TUNING_INSTANCES {
        return Ok(OnlineTuneResult {
            weights: previous.clone(),
            tuned: false,
        });
    }
    let dev_len = (instances.len() / 5).max(5);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let splits: Vec<Vec<usize>> = (0..3)
        .map(|_| {
            let mut idx: Vec<usize> = (0..instances.len()).collect();
            idx.shuffle(&mut rng);
            idx
        })
        .collect();
    let runs: Vec<Result<FeatureWeights>> = splits
        .iter()
        .map(|idx| {
            let (dev, train) = idx.split_at(dev_len);
            let train: Vec<(&[String], &[String])> = train.iter().map(|&i| instances[i]).collect();
            let local = build_local_models(&train, config.max_phrase_len, config.lm_order, config.smoothing, config.sigma)?;
            let decoder = Decoder::new(vec![&local.table], vec![global_lm, &local.lm], previous.clone())
                .with_options(config.decode.clone());
            let inputs: Vec<DecoderInput> = dev.iter().map(|&i| DecoderInput::plain(instances[i].0.to_vec())).collect();
            let refs: Vec<Vec<String>> = dev.iter().map(|&i| instances[i].1.to_vec()).collect();
            Ok(optimize::tune(&decoder, &inputs, &refs, previous, &config.tune)?.0)
        })
        .collect();
    let mut sum = FeatureWeights::zeros();
    for r in runs {
        let w = r?;
        for (a, b) in sum.values.iter_mut().zip(&w.values) {
            *a += b;
        }
    }
    for v in &mut sum.values {
        *v /= 3.0;
    }
    Ok(OnlineTuneResult {
        weights: sum,
        tuned: true,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput {
    pub id: usize,
    pub output: Vec<String>,
    pub trace: Vec<TraceStep>,
    pub selected: usize,
    pub top_similarity: f64,
    pub tuned: bool,
}

#[derive(Clone, Debug)]
struct Pending {
    id: usize,
    src: Vec<String>,
    mt: Vec<String>,
    trace: Vec<TraceStep>,
    offered: Vec<(Vec<String>, Vec<String>)>,
}

#[derive(Clone, Debug)]
pub struct OnlineState {
    pub config: OnlineConfig,
    pub index: SimilarityIndex,
    pub kb: DynamicKB,
    pub global_lm: NGramLM,
    pub weights: FeatureWeights,
    history: Vec<(Vec<String>, Vec<String>, Vec<String>)>,
    pending: Option<Pending>,
}

impl OnlineState {
    pub fn new(config: OnlineConfig) -> Result<Self> {
        if !(0.0..=1.0).contains(&config.cutoff) {
            return Err(ApeError::InvalidArgument("cutoff must lie in [0, 1]".into()));
        }
        Ok(OnlineState {
            kb: DynamicKB::new(config.max_phrase_len, config.sigma),
            global_lm: NGramLM::empty(config.lm_order, config.smoothing, true)?,
            index: SimilarityIndex::new(),
            weights: FeatureWeights::default(),
            history: Vec::new(),
            pending: None,
            config,
        })
    }

    /// Segments processed so far.
    pub fn processed(&self) -> usize {
        self.history.len()
    }

    /// Retrieved history segments `(id, similarity)` for an mt sentence.
    pub fn select_instances(&self, mt: &[String]) -> Vec<(usize, f64)> {
        let mut found = self.index.query(mt, self.config.cutoff);
        found.truncate(self.config.max_instances);
        found
    }

    pub fn step(&mut self, src: &[String], mt: &[String]) -> Result<StepOutput> {
        if self.pending.is_some() {
            return Err(ApeError::Protocol("step called twice without feedback".into()));
        }
        let id = self.history.len();
        let selected = self.select_instances(mt);
        let unchanged = |state: &mut OnlineState, tuned| {
            state.pending = Some(Pending {
                id,
                src: src.to_vec(),
                mt: mt.to_vec(),
                trace: Vec::new(),
                offered: Vec::new(),
            });
            Ok(StepOutput {
                id,
                output: mt.to_vec(),
                trace: Vec::new(),
                selected: selected.len(),
                top_similarity: selected.first().map_or(0.0, |s| s.1),
                tuned,
            })
        };
        if selected.is_empty() {
            return unchanged(self, false);
        }
        let instances: Vec<(&[String], &[String])> = selected
            .iter()
            .map(|&(i, _)| (self.history[i].1.as_slice(), self.history[i].2.as_slice()))
            .collect();
        let c = &self.config;
        let local = build_local_models(&instances, c.max_phrase_len, c.lm_order, c.smoothing, c.sigma)?;

        // Globally estimated options take precedence over the local ones.
        let mut table = local.table.clone();
        let n = mt.len();
        let spans: Vec<&[String]> = (0..n)
            .flat_map(|i| (i + 1..=n.min(i + c.max_phrase_len)).map(move |j| &mt[i..j]))
            .collect();
        for e in self.kb.query(spans.iter().copied()).entries() {
            table.insert(e.clone());
        }

        let tune = online_tune(&instances, &self.weights, &self.global_lm, &self.config, self.config.seed.wrapping_add(id as u64))?;
        if tune.tuned {
            self.weights = tune.weights.clone();
        }
        let offered: Vec<(Vec<String>, Vec<String>)> = spans
            .iter()
            .flat_map(|s| table.lookup(s).iter().map(|e| (e.src.clone(), e.tgt.clone())))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let kb = &self.kb;
        let scores = |s: &[String], t: &[String]| kb.negative_scores(s, t);
        let mut decoder = Decoder::new(vec![&table], vec![&self.global_lm, &local.lm], self.weights.clone())
            .with_options(self.config.decode.clone());
        decoder.feedback = Some(&scores);
        let result = decoder.decode(&DecoderInput::plain(mt.to_vec()))?;
        let best = result.best();
        let out = StepOutput {
            id,
            output: best.tokens.clone(),
            trace: best.trace.clone(),
            selected: selected.len(),
            top_similarity: selected[0].1,
            tuned: tune.tuned,
        };
        self.pending = Some(Pending {
            id,
            src: src.to_vec(),
            mt: mt.to_vec(),
            trace: best.trace.clone(),
            offered,
        });
        Ok(out)
    }

    /// Folds the post-edit of the last stepped segment into every store.
    pub fn feedback(&mut self, id: usize, pe: &[String]) -> Result<()> {
        let Some(p) = self.pending.take() else {
            return Err(ApeError::Protocol("feedback without a preceding step".into()));
        };
        if p.id != id {
            let expected = p.id;
            self.pending = Some(p);
            return Err(ApeError::Protocol(format!("feedback for segment {id}, expected {expected}")));
        }
        self.index.add(id, &p.mt);
        self.kb.update(&p.mt, pe)?;
        self.global_lm.update(pe);
        self.kb.negative_feedback(&p.trace, pe, &p.offered);
        self.history.push((p.src, p.mt, pe.to_vec()));
        Ok(())
    }
}
