use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, ensure, Context, Result};

use ape_core::align::LexiconModel;
use ape_core::corpus::{load_corpus, read_sentences, Sentence, Triplet};
use ape_core::decoder::{format_nbest, DecodeOptions, DecodeResult, Decoder, DecoderInput, FeatureWeights};
use ape_core::lm::NGramLM;
use ape_core::metrics::EvalReport;
use ape_core::online::{OnlineConfig, OnlineState};
use ape_core::optimize::{self, RerankWeights, TuneConfig};
use ape_core::pipeline::{self, JointAligner, TrainConfig, TrainedSystem};
use ape_core::qe::{self, WordLabel};
use ape_core::tm::{PhraseTable, Provenance};

use crate::settings::{Settings, Strategy, Variant};

const TABLE: &str = "phrase-table.txt";
const TABLE_MONO: &str = "phrase-table.mono.txt";
const TABLE_CTX: &str = "phrase-table.ctx.txt";
const LM: &str = "lm.txt";
const SRC_MT: &str = "src-mt.lex";
const MT_SRC: &str = "mt-src.lex";
const WEIGHTS: &str = "weights.txt";

type Tokens = Vec<String>;

fn read_tokens(path: &Path, allow_empty: bool) -> Result<Vec<Tokens>> {
    Ok(read_sentences(path, allow_empty)?
        .into_iter()
        .map(Sentence::into_tokens)
        .collect())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("{}", path.display()))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("{}", path.display()))
}

/// Writes to `path`, or stdout when unset.
fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => write_file(p, text),
        None => {
            let mut out = io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

fn lines(rows: &[Tokens]) -> String {
    rows.iter().map(|r| r.join(" ") + "\n").collect()
}

fn same_length(a: usize, b: usize, what: &str) -> Result<()> {
    ensure!(a == b, "line count mismatch: {what} ({a} vs {b})");
    Ok(())
}

fn decode_options(s: &Settings) -> DecodeOptions {
    DecodeOptions {
        beam: s.beam,
        distortion_limit: s.distortion,
        nbest: s.nbest,
        mode: s.mode,
        table_limit: s.table_limit,
    }
}

fn tune_config(s: &Settings) -> TuneConfig {
    TuneConfig {
        objective: s.objective,
        max_cycles: s.tune_cycles,
        restarts: s.restarts,
        seed: s.seed,
        ..TuneConfig::default()
    }
}

struct Model {
    dir: PathBuf,
    tables: Vec<PhraseTable>,
    lm: NGramLM,
    joint: Option<JointAligner>,
}

impl Model {
    fn load(s: &Settings) -> Result<Model> {
        let dir = s.require(&s.model, "model")?.to_path_buf();
        let paths: Vec<PathBuf> = if s.tables.is_empty() {
            [TABLE, TABLE_MONO, TABLE_CTX]
                .iter()
                .map(|f| dir.join(f))
                .filter(|p| p.exists())
                .collect()
        } else {
            s.tables.clone()
        };
        ensure!(!paths.is_empty(), "{}: no phrase table found", dir.display());
        let tables = paths
            .iter()
            .map(|p| PhraseTable::from_text(&read_text(p)?).with_context(|| format!("{}", p.display())))
            .collect::<Result<Vec<_>>>()?;
        let lm_path = dir.join(LM);
        let lm = NGramLM::from_text(&read_text(&lm_path)?).with_context(|| format!("{}", lm_path.display()))?;
        let joint = if tables.iter().any(|t| t.provenance == Provenance::ContextAware) {
            let lex = |name: &str| -> Result<LexiconModel> {
                let p = dir.join(name);
                LexiconModel::from_text(&read_text(&p)?).with_context(|| format!("{}", p.display()))
            };
            Some(JointAligner {
                src_to_mt: lex(SRC_MT)?,
                mt_to_src: lex(MT_SRC)?,
                symmetrization: s.symmetrization,
            })
        } else {
            None
        };
        Ok(Model { dir, tables, lm, joint })
    }

    fn weights(&self, s: &Settings) -> Result<FeatureWeights> {
        let path = s.weights.clone().unwrap_or_else(|| self.dir.join(WEIGHTS));
        if s.weights.is_none() && !path.exists() {
            return Ok(FeatureWeights::default());
        }
        FeatureWeights::from_text(&read_text(&path)?).with_context(|| format!("{}", path.display()))
    }

    fn decoder(&self, s: &Settings, weights: FeatureWeights) -> Decoder<'_> {
        Decoder::new(self.tables.iter().collect(), vec![&self.lm], weights).with_options(decode_options(s))
    }

    /// Decoder input for surface mt tokens, joined with the source when a
    /// context-aware table is loaded.
    fn input(&self, src: Option<&Tokens>, mt: DecoderInput) -> Result<DecoderInput> {
        let Some(j) = &self.joint else { return Ok(mt) };
        let src = src.ok_or_else(|| anyhow!("--src is required with a context-aware table"))?;
        if mt.is_empty() {
            return Ok(mt);
        }
        let joint = j.joint(&Sentence::new(src.clone())?, &Sentence::new(mt.surface.clone())?)?;
        Ok(DecoderInput::joint(&joint).with_constraints(mt.constraints)?)
    }

    fn inputs(&self, src: Option<&[Tokens]>, mts: Vec<DecoderInput>) -> Result<Vec<DecoderInput>> {
        if let Some(src) = src {
            same_length(src.len(), mts.len(), "src vs mt")?;
        }
        mts.into_iter()
            .enumerate()
            .map(|(i, m)| self.input(src.map(|s| &s[i]), m))
            .collect()
    }
}

fn optional_tokens(path: &Option<PathBuf>, allow_empty: bool) -> Result<Option<Vec<Tokens>>> {
    path.as_deref().map(|p| read_tokens(p, allow_empty)).transpose()
}

/// Decodes every input; empty inputs yield `None`.
fn decode_many(decoder: &Decoder, inputs: &[DecoderInput]) -> Result<Vec<Option<DecodeResult>>> {
    let nonempty: Vec<DecoderInput> = inputs.iter().filter(|i| !i.is_empty()).cloned().collect();
    let mut results = decoder.decode_all(&nonempty)?.into_iter();
    Ok(inputs
        .iter()
        .map(|i| if i.is_empty() { None } else { results.next() })
        .collect())
}

pub fn train(s: &Settings) -> Result<()> {
    let dir = s.require(&s.model, "model")?;
    let mt = s.require(&s.mt, "mt")?;
    let pe = s.require(&s.pe, "pe")?;
    let triplets: Vec<Triplet> = match &s.src {
        Some(src) => load_corpus(src, mt, pe)?,
        None => {
            ensure!(s.variant == Variant::Monolingual, "--src is required for the {:?} variant", s.variant);
            load_corpus(mt, mt, pe)?
        }
    };
    let config = |provenance| TrainConfig {
        provenance,
        aligner: s.aligner,
        ibm_iterations: s.ibm_iterations,
        symmetrization: s.symmetrization,
        max_phrase_len: s.max_phrase_len,
        lm_order: s.lm_order,
        smoothing: s.smoothing,
        sigma: s.sigma,
        augment: s.augment,
        dense_features: s.dense_features,
    };
    let systems: Vec<(&str, TrainedSystem)> = match s.variant {
        Variant::Monolingual => vec![(TABLE, pipeline::train(&triplets, &config(Provenance::Monolingual))?)],
        Variant::ContextAware => vec![(TABLE, pipeline::train(&triplets, &config(Provenance::ContextAware))?)],
        Variant::Combined => vec![
            (TABLE_MONO, pipeline::train(&triplets, &config(Provenance::Monolingual))?),
            (TABLE_CTX, pipeline::train(&triplets, &config(Provenance::ContextAware))?),
        ],
    };
    fs::create_dir_all(dir).with_context(|| format!("{}", dir.display()))?;
    for (name, system) in &systems {
        write_file(&dir.join(name), &system.table.to_text())?;
        if let Some(j) = &system.joint {
            write_file(&dir.join(SRC_MT), &j.src_to_mt.to_text())?;
            write_file(&dir.join(MT_SRC), &j.mt_to_src.to_text())?;
        }
    }
    write_file(&dir.join(LM), &systems[0].1.lm.to_text())?;
    Ok(())
}

pub fn prune(s: &Settings) -> Result<()> {
    let path = s.require(&s.table, "table")?;
    let table = PhraseTable::from_text(&read_text(path)?).with_context(|| format!("{}", path.display()))?;
    emit(s.output.as_deref(), &table.prune(s.threshold)?.to_text())
}

pub fn tune(s: &Settings) -> Result<()> {
    let model = Model::load(s)?;
    let mt = read_tokens(s.require(&s.mt, "mt")?, false)?;
    let pe = read_tokens(s.require(&s.pe, "pe")?, false)?;
    same_length(mt.len(), pe.len(), "mt vs pe")?;
    let src = optional_tokens(&s.src, false)?;
    let inputs = model.inputs(src.as_deref(), mt.iter().cloned().map(DecoderInput::plain).collect())?;
    let initial = model.weights(s)?;
    let config = tune_config(s);
    let decoder = model.decoder(s, initial.clone());
    let (weights, run) = optimize::tune(&decoder, &inputs, &pe, &initial, &config)?;
    let start = run.history.first().map_or(run.final_objective, |h| h.previous_objective);
    eprintln!(
        "tune: {} {:.6} -> {:.6} over {} accepted cycles",
        config.objective.name(),
        start,
        run.final_objective,
        run.history.len()
    );
    let out = s.weights.clone().unwrap_or_else(|| model.dir.join(WEIGHTS));
    write_file(&out, &weights.to_text())?;
    if let Some(path) = &s.rerank {
        let decoder = model.decoder(s, weights);
        let nbests: Vec<_> = decoder.decode_all(&inputs)?.into_iter().map(|r| r.nbest).collect();
        let rerank = optimize::tune_rerank(&nbests, &mt, &pe, &config)?;
        write_file(path, &rerank.to_text())?;
    }
    Ok(())
}

pub fn decode(s: &Settings) -> Result<()> {
    let model = Model::load(s)?;
    let raw: Vec<DecoderInput> = match &s.constraints {
        Some(path) => read_text(path)?
            .lines()
            .enumerate()
            .map(|(i, l)| DecoderInput::parse_markup(l).with_context(|| format!("{}:{}", path.display(), i + 1)))
            .collect::<Result<_>>()?,
        None => read_tokens(s.require(&s.mt, "mt")?, true)?
            .into_iter()
            .map(DecoderInput::plain)
            .collect(),
    };
    let src = optional_tokens(&s.src, true)?;
    let inputs = model.inputs(src.as_deref(), raw)?;
    let decoder = model.decoder(s, model.weights(s)?);
    let results = decode_many(&decoder, &inputs)?;
    let rerank = match &s.rerank {
        Some(p) => Some(RerankWeights::from_text(&read_text(p)?).with_context(|| format!("{}", p.display()))?),
        None => None,
    };
    let mut out = Vec::with_capacity(results.len());
    let mut nbest = String::new();
    for (id, (input, r)) in inputs.iter().zip(&results).enumerate() {
        let Some(r) = r else {
            out.push(Vec::new());
            continue;
        };
        nbest.push_str(&format_nbest(id, r));
        let best = match &rerank {
            Some(w) => optimize::rerank(&r.nbest, &input.surface, w)?.swap_remove(0).tokens,
            None => r.best().tokens.clone(),
        };
        out.push(best);
    }
    if let Some(p) = &s.nbest_out {
        write_file(p, &nbest)?;
    }
    emit(s.output.as_deref(), &lines(&out))
}

pub fn evaluate(s: &Settings) -> Result<()> {
    let hyp = read_tokens(s.require(&s.hyp, "hyp")?, true)?;
    let reference = read_tokens(s.require(&s.reference, "reference")?, false)?;
    same_length(hyp.len(), reference.len(), "hyp vs reference")?;
    let mt = optional_tokens(&s.mt, true)?;
    if let Some(mt) = &mt {
        same_length(mt.len(), reference.len(), "mt vs reference")?;
    }
    let report = EvalReport::compute(&hyp, &reference, mt.as_deref())?;
    emit(s.output.as_deref(), &report.to_tsv())
}

pub fn online(s: &Settings) -> Result<()> {
    let mt = s.require(&s.mt, "mt")?;
    let pe = s.require(&s.pe, "pe")?;
    let triplets = load_corpus(s.src.as_deref().unwrap_or(mt), mt, pe)?;
    let mut state = OnlineState::new(OnlineConfig {
        cutoff: s.cutoff,
        max_phrase_len: s.max_phrase_len,
        lm_order: s.lm_order,
        smoothing: s.smoothing,
        sigma: s.sigma,
        decode: decode_options(s),
        tune: tune_config(s),
        seed: s.seed,
        max_instances: s.max_instances,
    })?;
    let mut log: Box<dyn Write> = match &s.log {
        Some(p) => Box::new(BufWriter::new(fs::File::create(p).with_context(|| format!("{}", p.display()))?)),
        None => Box::new(io::stderr()),
    };
    let mut out: Box<dyn Write> = match &s.output {
        Some(p) => Box::new(BufWriter::new(fs::File::create(p).with_context(|| format!("{}", p.display()))?)),
        None => Box::new(io::stdout().lock()),
    };
    for t in &triplets {
        let start = Instant::now();
        let step = state.step(t.src.tokens(), t.mt.tokens())?;
        state.feedback(step.id, t.pe.tokens())?;
        let seconds = start.elapsed().as_secs_f64();
        writeln!(out, "{}", step.output.join(" "))?;
        writeln!(
            log,
            "{}\t{}\t{:.6}\t{}\t{:.6}",
            step.id, step.selected, step.top_similarity, step.tuned, seconds
        )?;
    }
    out.flush()?;
    log.flush()?;
    Ok(())
}

fn read_scores(path: &Path) -> Result<Vec<f64>> {
    read_text(path)?
        .lines()
        .enumerate()
        .map(|(i, l)| {
            l.trim()
                .parse::<f64>()
                .map_err(|e| anyhow!("{}:{}: {e}", path.display(), i + 1))
        })
        .collect()
}

/// Labels from a file, or computed against `--pe` when the path is `oracle`.
fn word_labels(s: &Settings, path: &Option<PathBuf>, name: &str, hyps: &[Tokens]) -> Result<Vec<Vec<WordLabel>>> {
    let path = s.require(path, name)?;
    if path == Path::new("oracle") {
        let pe = read_tokens(s.require(&s.pe, "pe")?, true)?;
        same_length(hyps.len(), pe.len(), "labeled sentences vs pe")?;
        return hyps
            .iter()
            .zip(&pe)
            .map(|(h, p)| Ok(qe::oracle_word_labels(h, p)?))
            .collect();
    }
    let labels: Vec<Vec<WordLabel>> = read_text(path)?
        .lines()
        .enumerate()
        .map(|(i, l)| qe::parse_labels(l).with_context(|| format!("{}:{}", path.display(), i + 1)))
        .collect::<Result<_>>()?;
    same_length(hyps.len(), labels.len(), "sentences vs labels")?;
    for (i, (h, l)) in hyps.iter().zip(&labels).enumerate() {
        ensure!(h.len() == l.len(), "{}:{}: {} labels for {} tokens", path.display(), i + 1, l.len(), h.len());
    }
    Ok(labels)
}

pub fn qe_combine(s: &Settings) -> Result<()> {
    let mt = read_tokens(s.require(&s.mt, "mt")?, true)?;
    let ape = optional_tokens(&s.ape, true)?;
    if let Some(a) = &ape {
        same_length(mt.len(), a.len(), "mt vs ape")?;
    }
    let need_ape = || ape.as_ref().ok_or_else(|| anyhow!("--ape is required for this strategy"));
    let out: Vec<Tokens> = match s.strategy {
        Strategy::Activate => {
            let scores = read_scores(s.require(&s.qe_mt, "qe-mt")?)?;
            same_length(mt.len(), scores.len(), "mt vs qe-mt")?;
            let model = if ape.is_none() { Some(Model::load(s)?) } else { None };
            let decoder = match &model {
                Some(m) => Some(m.decoder(s, m.weights(s)?)),
                None => None,
            };
            let src = optional_tokens(&s.src, true)?;
            let mut out = Vec::with_capacity(mt.len());
            for (i, m) in mt.iter().enumerate() {
                out.push(qe::activate(m, scores[i], s.threshold, |m| {
                    if let Some(a) = &ape {
                        return Ok(a[i].clone());
                    }
                    let (model, decoder) = (model.as_ref().unwrap(), decoder.as_ref().unwrap());
                    if m.is_empty() {
                        return Ok(Vec::new());
                    }
                    let input = model
                        .input(src.as_ref().map(|s| &s[i]), DecoderInput::plain(m.to_vec()))
                        .map_err(|e| ape_core::ApeError::InvalidArgument(format!("{e:#}")))?;
                    Ok(decoder.decode(&input)?.best().tokens.clone())
                })?);
            }
            out
        }
        Strategy::Guide => {
            let labels = word_labels(s, &s.labels, "labels", &mt)?;
            let model = Model::load(s)?;
            let src = optional_tokens(&s.src, true)?;
            let raw = mt
                .iter()
                .zip(&labels)
                .map(|(m, l)| Ok(qe::guidance_annotate(m, l)?))
                .collect::<Result<Vec<_>>>()?;
            let inputs = model.inputs(src.as_deref(), raw)?;
            let decoder = model.decoder(s, model.weights(s)?);
            decode_many(&decoder, &inputs)?
                .into_iter()
                .map(|r| r.map(|r| r.best().tokens.clone()).unwrap_or_default())
                .collect()
        }
        Strategy::SelectSentence => {
            let ape = need_ape()?;
            let q_mt = read_scores(s.require(&s.qe_mt, "qe-mt")?)?;
            let q_ape = read_scores(s.require(&s.qe_ape, "qe-ape")?)?;
            same_length(mt.len(), q_mt.len(), "mt vs qe-mt")?;
            same_length(mt.len(), q_ape.len(), "mt vs qe-ape")?;
            (0..mt.len())
                .map(|i| qe::select_sentence(&mt[i], &ape[i], q_mt[i], q_ape[i], s.tau).to_vec())
                .collect()
        }
        Strategy::SelectWord => {
            let ape = need_ape()?;
            let l_mt = word_labels(s, &s.labels, "labels", &mt)?;
            let l_ape = word_labels(s, &s.labels_ape, "labels-ape", ape)?;
            (0..mt.len())
                .map(|i| Ok(qe::select_word(&mt[i], &ape[i], &l_mt[i], &l_ape[i])?))
                .collect::<Result<_>>()?
        }
    };
    emit(s.output.as_deref(), &lines(&out))
}
