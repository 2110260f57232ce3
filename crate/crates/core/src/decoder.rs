//! Log-linear phrase-based stack decoding.
//!
//! Hypotheses are grouped by the number of covered input tokens and pruned to
//! a fixed beam. Hypotheses whose future can no longer differ are recombined;
//! the losing arcs are kept so that n-best lists can be read off the search
//! graph afterwards. Inputs may carry per-position suggestions which are
//! either forced or offered as extra options.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rayon::prelude::*;
use rustc_hash::FxHashMap;

use crate::corpus::{JointSentence, JointToken};
use crate::error::{ApeError, Result};
use crate::lm::NGramLM;
use crate::metrics;
use crate::tm::{PhraseEntry, PhraseTable, Provenance};

/// Probability given to pass-through rules for tokens no table covers.
pub const IDENTITY_FLOOR: f64 = 1e-9;
/// Number of per-table bias features.
pub const MAX_TABLES: usize = 4;
/// Longest input the coverage bitset holds.
pub const MAX_INPUT_LEN: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Feature {
    PhraseFwd,
    PhraseRev,
    LexFwd,
    LexRev,
    Lm,
    Lm2,
    ReorderPrevMono,
    ReorderPrevSwap,
    ReorderPrevDisc,
    ReorderNextMono,
    ReorderNextSwap,
    ReorderNextDisc,
    WordPenalty,
    PhrasePenalty,
    Distortion,
    F1,
    F21,
    F22,
    F3,
    NegF1,
    NegF2,
    Bias(usize),
}

const FIXED: usize = 21;
pub const NUM_FEATURES: usize = FIXED + MAX_TABLES;

pub type FeatureVector = [f64; NUM_FEATURES];

const FIXED_FEATURES: [Feature; FIXED] = [
    Feature::PhraseFwd,
    Feature::PhraseRev,
    Feature::LexFwd,
    Feature::LexRev,
    Feature::Lm,
    Feature::Lm2,
    Feature::ReorderPrevMono,
    Feature::ReorderPrevSwap,
    Feature::ReorderPrevDisc,
    Feature::ReorderNextMono,
    Feature::ReorderNextSwap,
    Feature::ReorderNextDisc,
    Feature::WordPenalty,
    Feature::PhrasePenalty,
    Feature::Distortion,
    Feature::F1,
    Feature::F21,
    Feature::F22,
    Feature::F3,
    Feature::NegF1,
    Feature::NegF2,
];

const FIXED_NAMES: [&str; FIXED] = [
    "phrase_fwd",
    "phrase_rev",
    "lex_fwd",
    "lex_rev",
    "lm",
    "lm2",
    "reo_prev_mono",
    "reo_prev_swap",
    "reo_prev_disc",
    "reo_next_mono",
    "reo_next_swap",
    "reo_next_disc",
    "word_penalty",
    "phrase_penalty",
    "distortion",
    "f1",
    "f2_1",
    "f2_2",
    "f3",
    "neg_f1",
    "neg_f2",
];

impl Feature {
    pub fn index(self) -> usize {
        match self {
            Feature::Bias(k) => FIXED + k,
            f => FIXED_FEATURES.iter().position(|&g| g == f).unwrap(),
        }
    }

    pub fn from_index(i: usize) -> Feature {
        if i < FIXED {
            FIXED_FEATURES[i]
        } else {
            Feature::Bias(i - FIXED)
        }
    }

    pub fn all() -> impl Iterator<Item = Feature> {
        (0..NUM_FEATURES).map(Feature::from_index)
    }

    pub fn name(self) -> String {
        match self {
            Feature::Bias(k) => format!("bias{k}"),
            f => FIXED_NAMES[f.index()].to_owned(),
        }
    }

    fn reorder_prev(o: usize) -> Feature {
        FIXED_FEATURES[Feature::ReorderPrevMono.index() + o]
    }

    fn reorder_next(o: usize) -> Feature {
        FIXED_FEATURES[Feature::ReorderNextMono.index() + o]
    }
}

impl FromStr for Feature {
    type Err = ApeError;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(i) = FIXED_NAMES.iter().position(|&n| n == s) {
            return Ok(FIXED_FEATURES[i]);
        }
        if let Some(k) = s.strip_prefix("bias").and_then(|k| k.parse::<usize>().ok()) {
            if k < MAX_TABLES {
                return Ok(Feature::Bias(k));
            }
        }
        Err(ApeError::UnknownFeature(s.to_owned()))
    }
}

/// Log-linear weights, one per [`Feature`].
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureWeights {
    pub values: FeatureVector,
}

impl Default for FeatureWeights {
    fn default() -> Self {
        let mut w = FeatureWeights {
            values: [0.0; NUM_FEATURES],
        };
        for f in [Feature::PhraseFwd, Feature::PhraseRev, Feature::LexFwd, Feature::LexRev] {
            w.set(f, 0.2);
        }
        w.set(Feature::Lm, 0.5);
        w.set(Feature::Lm2, 0.5);
        for o in 0..3 {
            w.set(Feature::reorder_prev(o), 0.3);
            w.set(Feature::reorder_next(o), 0.3);
        }
        w.set(Feature::PhrasePenalty, 0.2);
        w.set(Feature::Distortion, 0.3);
        w.set(Feature::NegF1, -1.0);
        w.set(Feature::NegF2, -1.0);
        w
    }
}

impl FeatureWeights {
    pub fn zeros() -> Self {
        FeatureWeights {
            values: [0.0; NUM_FEATURES],
        }
    }

    pub fn get(&self, f: Feature) -> f64 {
        self.values[f.index()]
    }

    pub fn set(&mut self, f: Feature, v: f64) {
        self.values[f.index()] = v;
    }

    pub fn dot(&self, h: &FeatureVector) -> f64 {
        self.values.iter().zip(h).map(|(w, x)| w * x).sum()
    }

    /// `name=value` lines for every feature.
    pub fn to_text(&self) -> String {
        Feature::all()
            .map(|f| format!("{}={}\n", f.name(), self.get(f)))
            .collect()
    }

    /// Starts from the defaults and overrides the named weights. Unknown
    /// names are rejected.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut w = FeatureWeights::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ApeError::parse("<weights>", i + 1, "expected name=value"))?;
            let f: Feature = k.trim().parse()?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| ApeError::parse("<weights>", i + 1, "bad weight value"))?;
            if !v.is_finite() {
                return Err(ApeError::parse("<weights>", i + 1, "weight must be finite"));
            }
            w.set(f, v);
        }
        Ok(w)
    }
}

/// Tokens to translate plus optional per-position suggestions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecoderInput {
    /// Tokens as the tables see them (joint tokens for context-aware input).
    pub tokens: Vec<String>,
    /// Plain mt tokens, used by monolingual tables and for pass-through.
    pub surface: Vec<String>,
    pub constraints: Vec<Option<Vec<String>>>,
}

impl DecoderInput {
    pub fn plain(tokens: Vec<String>) -> Self {
        let n = tokens.len();
        DecoderInput {
            surface: tokens.clone(),
            tokens,
            constraints: vec![None; n],
        }
    }

    pub fn joint(joint: &JointSentence) -> Self {
        let tokens: Vec<String> = joint.tokens.iter().map(JointToken::to_token).collect();
        let surface: Vec<String> = joint.tokens.iter().map(|t| t.mt.clone()).collect();
        let n = tokens.len();
        DecoderInput {
            tokens,
            surface,
            constraints: vec![None; n],
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn with_constraints(mut self, constraints: Vec<Option<Vec<String>>>) -> Result<Self> {
        if constraints.len() != self.tokens.len() {
            return Err(ApeError::LengthMismatch {
                left: self.tokens.len(),
                right: constraints.len(),
            });
        }
        if constraints.iter().flatten().any(Vec::is_empty) {
            return Err(ApeError::InvalidArgument("empty suggestion".into()));
        }
        self.constraints = constraints;
        Ok(self)
    }

    /// Parses `<n translation="TGT">TOKEN</n>` markup around annotated tokens.
    pub fn parse_markup(line: &str) -> Result<Self> {
        let mut tokens = Vec::new();
        let mut constraints = Vec::new();
        let mut rest = line.trim_start();
        let bad = |m: &str| ApeError::InvalidArgument(format!("bad markup: {m}"));
        while !rest.is_empty() {
            if let Some(after) = rest.strip_prefix("<n ") {
                let after = after.trim_start();
                let after = after
                    .strip_prefix("translation=\"")
                    .ok_or_else(|| bad("expected translation attribute"))?;
                let q = after.find('"').ok_or_else(|| bad("unterminated attribute"))?;
                let suggestion: Vec<String> = unescape(&after[..q]).split_whitespace().map(str::to_owned).collect();
                let after = after[q + 1..].trim_start();
                let after = after.strip_prefix('>').ok_or_else(|| bad("expected '>'"))?;
                let close = after.find("</n>").ok_or_else(|| bad("missing </n>"))?;
                let tok = unescape(after[..close].trim());
                if tok.is_empty() || tok.contains(char::is_whitespace) {
                    return Err(bad("annotation must wrap exactly one token"));
                }
                if suggestion.is_empty() {
                    return Err(bad("empty suggestion"));
                }
                tokens.push(tok);
                constraints.push(Some(suggestion));
                rest = after[close + 4..].trim_start();
            } else {
                let end = rest.find(char::is_whitespace).unwrap_or(rest.len());
                tokens.push(unescape(&rest[..end]));
                constraints.push(None);
                rest = rest[end..].trim_start();
            }
        }
        let n = tokens.len();
        let mut input = DecoderInput::plain(tokens);
        input.constraints = constraints;
        debug_assert_eq!(input.constraints.len(), n);
        Ok(input)
    }

    pub fn to_markup(&self) -> String {
        self.tokens
            .iter()
            .zip(&self.constraints)
            .map(|(t, c)| match c {
                Some(s) => format!("<n translation=\"{}\">{}</n>", escape(&s.join(" ")), escape(t)),
                None => escape(t),
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('"', "&quot;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn unescape(s: &str) -> String {
    s.replace("&quot;", "\"")
        .replace("&lt;", "<")
        .replace("&gt;", ">")
        .replace("&amp;", "&")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ConstraintMode {
    /// Annotated positions may only produce their suggestion.
    #[default]
    Forced,
    /// Suggestions compete with the learned options.
    Inclusive,
}

impl FromStr for ConstraintMode {
    type Err = ApeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forced" => Ok(ConstraintMode::Forced),
            "inclusive" => Ok(ConstraintMode::Inclusive),
            _ => Err(ApeError::InvalidArgument(format!("unknown constraint mode {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeOptions {
    pub beam: usize,
    /// `None` allows unlimited reordering.
    pub distortion_limit: Option<usize>,
    pub nbest: usize,
    pub mode: ConstraintMode,
    /// Options kept per input span and table, best first.
    pub table_limit: usize,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        DecodeOptions {
            beam: 100,
            distortion_limit: Some(6),
            nbest: 50,
            mode: ConstraintMode::Forced,
            table_limit: 20,
        }
    }
}

/// Where an applied rule came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RuleSource {
    Table(usize),
    /// Pass-through for a token no table covers.
    Identity,
    /// A suggestion from the annotated input.
    Suggestion,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceStep {
    pub src: Range<usize>,
    pub src_phrase: Vec<String>,
    pub tgt: Vec<String>,
    pub source: RuleSource,
}

/// One complete translation with its feature values.
#[derive(Clone, Debug, PartialEq)]
pub struct Derivation {
    pub tokens: Vec<String>,
    pub score: f64,
    pub features: FeatureVector,
    pub trace: Vec<TraceStep>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeResult {
    /// Distinct output strings, best first.
    pub nbest: Vec<Derivation>,
}

impl DecodeResult {
    pub fn best(&self) -> &Derivation {
        &self.nbest[0]
    }

    /// Rules applied by the best derivation, in output order.
    pub fn trace(&self) -> &[TraceStep] {
        &self.best().trace
    }
}

/// Extra per-rule scores supplied by the caller, `(neg_f1, neg_f2)`.
pub type FeedbackFn<'a> = dyn Fn(&[String], &[String]) -> (f64, f64) + Sync + 'a;

#[derive(Clone)]
pub struct Decoder<'a> {
    pub tables: Vec<&'a PhraseTable>,
    /// At most two; the second feeds [`Feature::Lm2`].
    pub lms: Vec<&'a NGramLM>,
    pub weights: FeatureWeights,
    pub options: DecodeOptions,
    pub feedback: Option<&'a FeedbackFn<'a>>,
}

#[derive(Clone, Debug)]
struct TOption {
    start: usize,
    end: usize,
    src_phrase: Vec<String>,
    tgt: Vec<String>,
    lm_ids: Vec<Vec<u32>>,
    local: FeatureVector,
    reordering: [f64; 6],
    source: RuleSource,
    mask: Coverage,
}

type Coverage = [u64; MAX_INPUT_LEN / 64];

fn cover(mask: &mut Coverage, r: Range<usize>) {
    for i in r {
        mask[i / 64] |= 1 << (i % 64);
    }
}

fn covered(mask: &Coverage, i: usize) -> bool {
    mask[i / 64] & (1 << (i % 64)) != 0
}

fn overlaps(a: &Coverage, b: &Coverage) -> bool {
    a.iter().zip(b).any(|(x, y)| x & y != 0)
}

fn union(a: &Coverage, b: &Coverage) -> Coverage {
    let mut out = *a;
    for (o, y) in out.iter_mut().zip(b) {
        *o |= y;
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
struct StateKey {
    coverage: Coverage,
    lm_ctx: Vec<u32>,
    last_start: usize,
    last_end: usize,
    next_reo: [u64; 3],
}

#[derive(Clone, Debug)]
struct Arc {
    parent: usize,
    option: usize,
    score: f64,
    features: FeatureVector,
}

#[derive(Clone, Debug)]
struct Node {
    best: Option<Arc>,
    others: Vec<Arc>,
    coverage: Coverage,
    covered: usize,
    lm_ctx: Vec<Vec<u32>>,
    last_start: usize,
    last_end: usize,
    /// Next-orientation probabilities of the last phrase; `None` at the root.
    next_reo: Option<[f64; 3]>,
    future: f64,
}

impl Node {
    fn score(&self) -> f64 {
        self.best.as_ref().map_or(0.0, |a| a.score)
    }

    fn features(&self) -> FeatureVector {
        self.best.as_ref().map_or([0.0; NUM_FEATURES], |a| a.features)
    }
}

fn ln(p: f64) -> f64 {
    p.max(f64::MIN_POSITIVE).ln()
}

/// Orientation of a phrase starting at `start` and ending at `end` relative
/// to the previous phrase `[last_start, last_end)`.
fn orientation(start: usize, end: usize, last_start: usize, last_end: usize) -> usize {
    if start == last_end {
        0
    } else if end == last_start {
        1
    } else {
        2
    }
}

impl<'a> Decoder<'a> {
    pub fn new(tables: Vec<&'a PhraseTable>, lms: Vec<&'a NGramLM>, weights: FeatureWeights) -> Self {
        Decoder {
            tables,
            lms,
            weights,
            options: DecodeOptions::default(),
            feedback: None,
        }
    }

    pub fn with_options(mut self, options: DecodeOptions) -> Self {
        self.options = options;
        self
    }

    fn validate(&self, input: &DecoderInput) -> Result<()> {
        if self.options.beam < 1 {
            return Err(ApeError::InvalidArgument("beam size must be at least 1".into()));
        }
        if self.options.nbest < 1 {
            return Err(ApeError::InvalidArgument("n-best size must be at least 1".into()));
        }
        if self.tables.len() > MAX_TABLES {
            return Err(ApeError::InvalidArgument(format!("at most {MAX_TABLES} phrase tables")));
        }
        if self.lms.len() > 2 {
            return Err(ApeError::InvalidArgument("at most two language models".into()));
        }
        if input.len() > MAX_INPUT_LEN {
            return Err(ApeError::InvalidArgument(format!("input longer than {MAX_INPUT_LEN} tokens")));
        }
        if input.surface.len() != input.len() || input.constraints.len() != input.len() {
            return Err(ApeError::LengthMismatch {
                left: input.len(),
                right: input.constraints.len(),
            });
        }
        if input.constraints.iter().flatten().any(Vec::is_empty) {
            return Err(ApeError::InvalidArgument("empty suggestion".into()));
        }
        Ok(())
    }

    fn make_option(
        &self,
        span: Range<usize>,
        src_phrase: Vec<String>,
        e: &PhraseEntry,
        source: RuleSource,
    ) -> TOption {
        let mut local = [0.0; NUM_FEATURES];
        local[Feature::PhraseFwd.index()] = ln(e.p_tgt_given_src);
        local[Feature::PhraseRev.index()] = ln(e.p_src_given_tgt);
        local[Feature::LexFwd.index()] = ln(e.lex_tgt_given_src);
        local[Feature::LexRev.index()] = ln(e.lex_src_given_tgt);
        local[Feature::WordPenalty.index()] = -(e.tgt.len() as f64);
        local[Feature::PhrasePenalty.index()] = -1.0;
        local[Feature::F1.index()] = e.f1_similarity;
        local[Feature::F21.index()] = e.f2_1_median_hter;
        local[Feature::F22.index()] = e.f2_2_stdev_hter;
        local[Feature::F3.index()] = e.f3_pos_impact;
        if let (RuleSource::Table(_), Some(fb)) = (source, self.feedback) {
            let (f1, f2) = fb(&e.src, &e.tgt);
            local[Feature::NegF1.index()] = f1;
            local[Feature::NegF2.index()] = f2;
        }
        if let RuleSource::Table(k) = source {
            local[Feature::Bias(k).index()] = 1.0;
        }
        let mut mask = [0u64; MAX_INPUT_LEN / 64];
        cover(&mut mask, span.clone());
        TOption {
            start: span.start,
            end: span.end,
            src_phrase,
            tgt: e.tgt.clone(),
            lm_ids: self.lms.iter().map(|lm| e.tgt.iter().map(|w| lm.id(w)).collect()).collect(),
            local,
            reordering: e.reordering,
            source,
            mask,
        }
    }

    /// Whether `e`, applied to `span`, emits exactly the suggestion of every
    /// annotated position it covers.
    fn satisfies(input: &DecoderInput, span: Range<usize>, e: &PhraseEntry) -> bool {
        let annotated: Vec<usize> = span.clone().filter(|&i| input.constraints[i].is_some()).collect();
        if annotated.is_empty() {
            return true;
        }
        if annotated.len() == span.len() {
            let concat: Vec<&String> = span.clone().flat_map(|i| input.constraints[i].as_ref().unwrap()).collect();
            if concat.len() == e.tgt.len() && concat.iter().zip(&e.tgt).all(|(a, b)| *a == b) {
                return true;
            }
        }
        annotated.iter().all(|&i| {
            let off = i - span.start;
            let mut tgts: Vec<usize> = e.alignment.iter().filter(|a| a.0 == off).map(|a| a.1).collect();
            tgts.sort_unstable();
            tgts.dedup();
            if tgts.is_empty() || tgts[tgts.len() - 1] - tgts[0] + 1 != tgts.len() {
                return false;
            }
            let exclusive = e.alignment.iter().all(|a| a.0 == off || !tgts.contains(&a.1));
            let emitted: Vec<&String> = tgts.iter().map(|&t| &e.tgt[t]).collect();
            let want = input.constraints[i].as_ref().unwrap();
            exclusive && emitted.len() == want.len() && emitted.iter().zip(want).all(|(a, b)| *a == b)
        })
    }

    fn collect_options(&self, input: &DecoderInput) -> Vec<TOption> {
        let n = input.len();
        let max_len = self.tables.iter().map(|t| t.max_phrase_len).max().unwrap_or(1);
        let mut opts: Vec<TOption> = Vec::new();
        let mut single = vec![false; n];
        for start in 0..n {
            for end in start + 1..=n.min(start + max_len) {
                for (k, table) in self.tables.iter().enumerate() {
                    if end - start > table.max_phrase_len {
                        continue;
                    }
                    let key: &[String] = match table.provenance {
                        Provenance::Monolingual => &input.surface[start..end],
                        Provenance::ContextAware => &input.tokens[start..end],
                    };
                    let mut cands: Vec<TOption> = table
                        .lookup(key)
                        .iter()
                        .filter(|e| {
                            self.options.mode == ConstraintMode::Inclusive || Self::satisfies(input, start..end, e)
                        })
                        .map(|e| self.make_option(start..end, key.to_vec(), e, RuleSource::Table(k)))
                        .collect();
                    // Best local score first; the stable sort keeps table order on ties.
                    cands.sort_by(|a, b| self.weights.dot(&b.local).total_cmp(&self.weights.dot(&a.local)));
                    cands.truncate(self.options.table_limit);
                    if end - start == 1 && !cands.is_empty() {
                        single[start] = true;
                    }
                    opts.extend(cands);
                }
            }
        }
        for i in 0..n {
            if let Some(sugg) = &input.constraints[i] {
                let surface = vec![input.surface[i].clone()];
                let mut e = PhraseEntry::identity(vec![input.tokens[i].clone()], sugg.clone(), 1.0);
                let ter = metrics::ter(&surface, sugg).map_or(1.0, |r| r.score);
                e.f1_similarity = (1.0 - ter.min(1.0)).exp();
                e.alignment = (0..sugg.len()).map(|j| (0, j)).collect();
                opts.push(self.make_option(i..i + 1, vec![input.tokens[i].clone()], &e, RuleSource::Suggestion));
            } else if !single[i] {
                let e = PhraseEntry::identity(vec![input.tokens[i].clone()], vec![input.surface[i].clone()], IDENTITY_FLOOR);
                opts.push(self.make_option(i..i + 1, vec![input.tokens[i].clone()], &e, RuleSource::Identity));
            }
        }
        opts
    }

    /// Weighted phrase-local score plus an LM estimate with in-phrase context.
    fn option_estimate(&self, o: &TOption) -> f64 {
        let mut s = self.weights.dot(&o.local);
        for (k, lm) in self.lms.iter().enumerate() {
            let ids = &o.lm_ids[k];
            let lp: f64 = (0..ids.len()).map(|j| ln(lm.prob_ids(&ids[..j], ids[j]))).sum();
            s += self.weights.get(if k == 0 { Feature::Lm } else { Feature::Lm2 }) * lp;
        }
        s
    }

    fn future_table(&self, n: usize, opts: &[TOption]) -> Vec<Vec<f64>> {
        let mut fc = vec![vec![f64::NEG_INFINITY; n + 1]; n + 1];
        for o in opts {
            let s = self.option_estimate(o);
            if s > fc[o.start][o.end] {
                fc[o.start][o.end] = s;
            }
        }
        for len in 2..=n {
            for i in 0..=n - len {
                let j = i + len;
                for k in i + 1..j {
                    let s = fc[i][k] + fc[k][j];
                    if s > fc[i][j] {
                        fc[i][j] = s;
                    }
                }
            }
        }
        fc
    }

    fn future_cost(fc: &[Vec<f64>], coverage: &Coverage, n: usize) -> f64 {
        let mut total = 0.0;
        let mut i = 0;
        while i < n {
            if covered(coverage, i) {
                i += 1;
                continue;
            }
            let mut j = i;
            while j < n && !covered(coverage, j) {
                j += 1;
            }
            total += fc[i][j];
            i = j;
        }
        total
    }

    /// Feature delta for appending `o` to `node`.
    fn step_features(&self, node: &Node, o: &TOption) -> (FeatureVector, Vec<Vec<u32>>) {
        let mut f = o.local;
        let mut ctxs = Vec::with_capacity(self.lms.len());
        for (k, lm) in self.lms.iter().enumerate() {
            let mut ctx = node.lm_ctx[k].clone();
            let mut lp = 0.0;
            for &w in &o.lm_ids[k] {
                lp += ln(lm.prob_ids(&ctx, w));
                ctx.push(w);
            }
            let keep = lm.order() - 1;
            if ctx.len() > keep {
                ctx.drain(..ctx.len() - keep);
            }
            f[if k == 0 { Feature::Lm } else { Feature::Lm2 }.index()] += lp;
            ctxs.push(ctx);
        }
        let ori = match node.next_reo {
            None => {
                if o.start == 0 {
                    0
                } else {
                    2
                }
            }
            Some(_) => orientation(o.start, o.end, node.last_start, node.last_end),
        };
        f[Feature::reorder_prev(ori).index()] += ln(o.reordering[ori]);
        if let Some(next) = node.next_reo {
            f[Feature::reorder_next(ori).index()] += ln(next[ori]);
        }
        f[Feature::Distortion.index()] -= o.start.abs_diff(node.last_end) as f64;
        (f, ctxs)
    }

    /// End-of-sentence LM probabilities and the last phrase's orientation
    /// towards the sentence end.
    fn final_features(&self, node: &Node, n: usize) -> FeatureVector {
        let mut f = [0.0; NUM_FEATURES];
        for (k, lm) in self.lms.iter().enumerate() {
            if lm.boundaries() {
                f[if k == 0 { Feature::Lm } else { Feature::Lm2 }.index()] += ln(lm.prob_ids(&node.lm_ctx[k], lm.eos_id()));
            }
        }
        if let Some(next) = node.next_reo {
            let ori = if node.last_end == n { 0 } else { 2 };
            f[Feature::reorder_next(ori).index()] += ln(next[ori]);
        }
        f
    }

    pub fn decode(&self, input: &DecoderInput) -> Result<DecodeResult> {
        self.validate(input)?;
        let n = input.len();
        let opts = self.collect_options(input);
        let fc = self.future_table(n, &opts);
        let limit = self.options.distortion_limit;

        let root = Node {
            best: None,
            others: Vec::new(),
            coverage: [0; MAX_INPUT_LEN / 64],
            covered: 0,
            lm_ctx: self
                .lms
                .iter()
                .map(|lm| {
                    if lm.boundaries() {
                        vec![lm.bos_id(); lm.order() - 1]
                    } else {
                        Vec::new()
                    }
                })
                .collect(),
            last_start: usize::MAX,
            last_end: 0,
            next_reo: None,
            future: fc[0][n],
        };
        let mut nodes = vec![root];
        let mut stacks: Vec<Vec<usize>> = vec![Vec::new(); n + 1];
        stacks[0].push(0);
        let mut index: Vec<FxHashMap<StateKey, usize>> = vec![FxHashMap::default(); n + 1];

        for c in 0..n {
            let mut stack = std::mem::take(&mut stacks[c]);
            stack.sort_by(|&a, &b| {
                let sa = nodes[a].score() + nodes[a].future;
                let sb = nodes[b].score() + nodes[b].future;
                sb.total_cmp(&sa).then(a.cmp(&b))
            });
            stack.truncate(self.options.beam);
            for &h in &stack {
                for (oi, o) in opts.iter().enumerate() {
                    let node = &nodes[h];
                    if overlaps(&node.coverage, &o.mask) {
                        continue;
                    }
                    if let Some(l) = limit {
                        if o.start.abs_diff(node.last_end) > l {
                            continue;
                        }
                    }
                    let coverage = union(&node.coverage, &o.mask);
                    let total = node.covered + (o.end - o.start);
                    if let Some(l) = limit {
                        if let Some(gap) = (0..n).find(|&i| !covered(&coverage, i)) {
                            if gap.abs_diff(o.end) > l {
                                continue;
                            }
                        }
                    }
                    let (delta, lm_ctx) = self.step_features(node, o);
                    let mut features = node.features();
                    for (a, d) in features.iter_mut().zip(&delta) {
                        *a += d;
                    }
                    let score = node.score() + self.weights.dot(&delta);
                    let next = [o.reordering[3], o.reordering[4], o.reordering[5]];
                    let key = StateKey {
                        coverage,
                        lm_ctx: lm_ctx.concat(),
                        last_start: o.start,
                        last_end: o.end,
                        next_reo: next.map(f64::to_bits),
                    };
                    let arc = Arc {
                        parent: h,
                        option: oi,
                        score,
                        features,
                    };
                    match index[total].get(&key) {
                        Some(&existing) => {
                            let ex = &mut nodes[existing];
                            if score > ex.score() {
                                let old = ex.best.replace(arc).unwrap();
                                ex.others.push(old);
                            } else {
                                ex.others.push(arc);
                            }
                        }
                        None => {
                            let id = nodes.len();
                            nodes.push(Node {
                                best: Some(arc),
                                others: Vec::new(),
                                coverage,
                                covered: total,
                                lm_ctx,
                                last_start: o.start,
                                last_end: o.end,
                                next_reo: Some(next),
                                future: Self::future_cost(&fc, &coverage, n),
                            });
                            index[total].insert(key, id);
                            stacks[total].push(id);
                        }
                    }
                }
            }
            stacks[c] = stack;
        }

        let finals: Vec<(usize, FeatureVector)> = stacks[n]
            .iter()
            .map(|&h| (h, self.final_features(&nodes[h], n)))
            .collect();
        if finals.is_empty() {
            return Err(ApeError::InvalidArgument("no complete hypothesis".into()));
        }
        let nbest = self.extract_nbest(&nodes, &opts, &finals);
        Ok(DecodeResult { nbest })
    }

    /// Best-first enumeration of complete paths through the search graph.
    /// A partial path is scored by the best prefix of its earliest node plus
    /// the losses of the arcs chosen after it, which is exact.
    fn extract_nbest(&self, nodes: &[Node], opts: &[TOption], finals: &[(usize, FeatureVector)]) -> Vec<Derivation> {
        struct Partial {
            priority: f64,
            seq: usize,
            node: usize,
            /// Steps from this node to the end, last step first.
            suffix: Vec<(usize, FeatureVector)>,
            tail: FeatureVector,
        }
        impl PartialEq for Partial {
            fn eq(&self, o: &Self) -> bool {
                self.cmp(o) == Ordering::Equal
            }
        }
        impl Eq for Partial {}
        impl PartialOrd for Partial {
            fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
                Some(self.cmp(o))
            }
        }
        impl Ord for Partial {
            fn cmp(&self, o: &Self) -> Ordering {
                self.priority.total_cmp(&o.priority).then(o.seq.cmp(&self.seq))
            }
        }

        let mut heap = BinaryHeap::new();
        let mut seq = 0;
        for (h, end) in finals {
            heap.push(Partial {
                priority: nodes[*h].score() + self.weights.dot(end),
                seq,
                node: *h,
                suffix: Vec::new(),
                tail: *end,
            });
            seq += 1;
        }
        let mut out: Vec<Derivation> = Vec::new();
        let mut seen: HashSet<Vec<String>> = HashSet::new();
        let max_pops = self.options.nbest * 50 + 1000;
        let mut pops = 0;
        while let Some(p) = heap.pop() {
            pops += 1;
            let node = &nodes[p.node];
            let Some(best) = &node.best else {
                let mut features = p.tail;
                let mut tokens = Vec::new();
                let mut trace = Vec::new();
                for (oi, delta) in p.suffix.iter().rev() {
                    let o = &opts[*oi];
                    for (a, d) in features.iter_mut().zip(delta) {
                        *a += d;
                    }
                    tokens.extend(o.tgt.iter().cloned());
                    trace.push(TraceStep {
                        src: o.start..o.end,
                        src_phrase: o.src_phrase.clone(),
                        tgt: o.tgt.clone(),
                        source: o.source,
                    });
                }
                if seen.insert(tokens.clone()) {
                    out.push(Derivation {
                        tokens,
                        score: p.priority,
                        features,
                        trace,
                    });
                    if out.len() == self.options.nbest {
                        break;
                    }
                }
                if pops >= max_pops {
                    break;
                }
                continue;
            };
            for arc in std::iter::once(best).chain(&node.others) {
                let parent = &nodes[arc.parent];
                let loss = arc.score - best.score;
                let mut delta = arc.features;
                for (d, pf) in delta.iter_mut().zip(parent.features()) {
                    *d -= pf;
                }
                let mut suffix = p.suffix.clone();
                suffix.push((arc.option, delta));
                heap.push(Partial {
                    priority: p.priority + loss,
                    seq,
                    node: arc.parent,
                    suffix,
                    tail: p.tail,
                });
                seq += 1;
            }
            if pops >= max_pops && !out.is_empty() {
                break;
            }
        }
        out
    }

    /// Decodes every input; results keep input order.
    pub fn decode_all(&self, inputs: &[DecoderInput]) -> Result<Vec<DecodeResult>> {
        inputs.par_iter().map(|i| self.decode(i)).collect()
    }
}

impl fmt::Display for Derivation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tokens.join(" "))
    }
}

/// `id ||| hypothesis ||| name=value ... ||| total` lines.
pub fn format_nbest(id: usize, result: &DecodeResult) -> String {
    let mut out = String::new();
    for d in &result.nbest {
        let feats: Vec<String> = Feature::all()
            .filter(|f| d.features[f.index()] != 0.0)
            .map(|f| format!("{}={}", f.name(), d.features[f.index()]))
            .collect();
        out.push_str(&format!("{id} ||| {} ||| {} ||| {}\n", d.tokens.join(" "), feats.join(" "), d.score));
    }
    out
}
