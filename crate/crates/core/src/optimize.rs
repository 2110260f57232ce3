//! Weight tuning on n-best lists and shallow-feature reranking.
//!
//! Tuning alternates between decoding the dev set and an exact line search
//! over the accumulated n-best pool: along any direction each candidate's
//! model score is a line, so the chosen candidate per segment changes only
//! at envelope breakpoints and the objective is piecewise constant.

use std::collections::{HashMap, HashSet};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::decoder::{Decoder, DecoderInput, Derivation, Feature, FeatureWeights, NUM_FEATURES};
use crate::error::{ApeError, Result};
use crate::metrics::{self, BleuStats};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Objective {
    #[default]
    Ter,
    Bleu,
}

impl Objective {
    /// Maps a metric value so that larger is always better.
    fn utility(self, value: f64) -> f64 {
        match self {
            Objective::Ter => -value,
            Objective::Bleu => value,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Objective::Ter => "ter",
            Objective::Bleu => "bleu",
        }
    }
}

impl FromStr for Objective {
    type Err = ApeError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ter" => Ok(Objective::Ter),
            "bleu" => Ok(Objective::Bleu),
            _ => Err(ApeError::InvalidArgument(format!("unknown objective {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TuneConfig {
    pub objective: Objective,
    pub max_cycles: usize,
    pub restarts: usize,
    pub min_gain: f64,
    pub seed: u64,
    /// Features left untouched; everything else whose value varies in the
    /// pool is tuned.
    pub frozen: Vec<Feature>,
}

impl Default for TuneConfig {
    fn default() -> Self {
        TuneConfig {
            objective: Objective::Ter,
            max_cycles: 5,
            restarts: 3,
            min_gain: 1e-4,
            seed: 1,
            frozen: Vec::new(),
        }
    }
}

/// One accepted tuning cycle. Both objectives are measured on the pool as it
/// stood after that cycle's decoding.
#[derive(Clone, Debug, PartialEq)]
pub struct TuneStep {
    pub weights: FeatureWeights,
    pub objective: f64,
    pub previous_objective: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TuneRun {
    pub objective: Objective,
    pub min_gain: f64,
    pub max_cycles: usize,
    pub history: Vec<TuneStep>,
    /// Metric value of the returned weights on the final pool.
    pub final_objective: f64,
}

#[derive(Clone, Debug)]
struct Candidate {
    features: Vec<f64>,
    edits: i64,
    ref_len: i64,
    bleu: BleuStats,
}

/// Accumulated candidates per dev segment, deduplicated on their strings.
#[derive(Clone, Debug)]
pub struct NBestPool {
    refs: Vec<Vec<String>>,
    cands: Vec<Vec<Candidate>>,
    seen: Vec<HashSet<Vec<String>>>,
}

impl NBestPool {
    pub fn new(refs: Vec<Vec<String>>) -> Self {
        let n = refs.len();
        NBestPool {
            refs,
            cands: vec![Vec::new(); n],
            seen: vec![HashSet::new(); n],
        }
    }

    pub fn segments(&self) -> usize {
        self.refs.len()
    }

    pub fn len(&self) -> usize {
        self.cands.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Adds a candidate unless its string is already pooled for `seg`.
    pub fn add(&mut self, seg: usize, tokens: &[String], features: Vec<f64>) -> Result<bool> {
        if !self.seen[seg].insert(tokens.to_vec()) {
            return Ok(false);
        }
        let reference = &self.refs[seg];
        let (edits, ref_len) = if reference.is_empty() {
            (tokens.len() as i64, 0)
        } else {
            let r = metrics::ter(tokens, reference)?;
            (r.breakdown.edits() as i64, reference.len() as i64)
        };
        self.cands[seg].push(Candidate {
            features,
            edits,
            ref_len,
            bleu: BleuStats::of(tokens, reference),
        });
        Ok(true)
    }

    fn pick(&self, seg: usize, w: &[f64]) -> usize {
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for (i, c) in self.cands[seg].iter().enumerate() {
            let s = dot(w, &c.features);
            if s > best_score {
                best_score = s;
                best = i;
            }
        }
        best
    }

    /// Metric value of the candidates chosen by `w`.
    pub fn evaluate(&self, w: &[f64], objective: Objective) -> f64 {
        let mut t = Totals::default();
        for seg in 0..self.segments() {
            if !self.cands[seg].is_empty() {
                t.add(&self.cands[seg][self.pick(seg, w)], 1);
            }
        }
        t.value(objective)
    }
}

fn dot(w: &[f64], h: &[f64]) -> f64 {
    w.iter().zip(h).map(|(a, b)| a * b).sum()
}

#[derive(Clone, Copy, Debug, Default)]
struct Totals {
    edits: i64,
    ref_len: i64,
    matches: [i64; 4],
    totals: [i64; 4],
    hyp_len: i64,
    bleu_ref: i64,
}

impl Totals {
    fn add(&mut self, c: &Candidate, sign: i64) {
        self.edits += sign * c.edits;
        self.ref_len += sign * c.ref_len;
        for n in 0..4 {
            self.matches[n] += sign * c.bleu.matches[n] as i64;
            self.totals[n] += sign * c.bleu.totals[n] as i64;
        }
        self.hyp_len += sign * c.bleu.hyp_len as i64;
        self.bleu_ref += sign * c.bleu.ref_len as i64;
    }

    fn value(&self, objective: Objective) -> f64 {
        match objective {
            Objective::Ter => {
                if self.ref_len == 0 {
                    0.0
                } else {
                    self.edits as f64 / self.ref_len as f64
                }
            }
            Objective::Bleu => BleuStats {
                matches: self.matches.map(|x| x as u64),
                totals: self.totals.map(|x| x as u64),
                hyp_len: self.hyp_len as u64,
                ref_len: self.bleu_ref as u64,
            }
            .score(),
        }
    }
}

/// Exact search for the step `gamma` along `dir` maximizing the objective on
/// the pool. Returns `(gamma, metric value)`; `gamma` is 0 whenever no step
/// does strictly better.
pub fn line_search(pool: &NBestPool, w: &[f64], dir: &[f64], objective: Objective) -> (f64, f64) {
    struct Event {
        x: f64,
        seg: usize,
        from: usize,
        to: usize,
    }
    let mut totals = Totals::default();
    let mut events: Vec<Event> = Vec::new();
    for (seg, cands) in pool.cands.iter().enumerate() {
        if cands.is_empty() {
            continue;
        }
        // (slope, intercept, index)
        let mut lines: Vec<(f64, f64, usize)> = cands
            .iter()
            .enumerate()
            .map(|(i, c)| (dot(dir, &c.features), dot(w, &c.features), i))
            .collect();
        lines.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)).then(b.2.cmp(&a.2)));
        let mut hull: Vec<((f64, f64, usize), f64)> = Vec::new();
        for l in lines {
            loop {
                let Some(&(top, start)) = hull.last() else {
                    hull.push((l, f64::NEG_INFINITY));
                    break;
                };
                if top.0 == l.0 {
                    hull.pop();
                    continue;
                }
                let x = (top.1 - l.1) / (l.0 - top.0);
                if x <= start {
                    hull.pop();
                    continue;
                }
                hull.push((l, x));
                break;
            }
        }
        totals.add(&cands[hull[0].0 .2], 1);
        for k in 1..hull.len() {
            events.push(Event {
                x: hull[k].1,
                seg,
                from: hull[k - 1].0 .2,
                to: hull[k].0 .2,
            });
        }
    }
    events.sort_by(|a, b| a.x.total_cmp(&b.x));

    let mut best_gamma: f64 = 0.0;
    let mut best_value = f64::NEG_INFINITY;
    let mut consider = |value: f64, gamma: f64| {
        let u = objective.utility(value);
        let bu = objective.utility(best_value);
        if best_value == f64::NEG_INFINITY || u > bu + 1e-12 || ((u - bu).abs() <= 1e-12 && gamma.abs() < best_gamma.abs()) {
            best_value = value;
            best_gamma = gamma;
        }
    };
    let mut prev = f64::NEG_INFINITY;
    let mut i = 0;
    loop {
        let next = events.get(i).map_or(f64::INFINITY, |e| e.x);
        let gamma = if prev < 0.0 && 0.0 < next {
            0.0
        } else if prev == f64::NEG_INFINITY {
            next - 1.0
        } else if next == f64::INFINITY {
            prev + 1.0
        } else {
            0.5 * (prev + next)
        };
        if prev < next {
            consider(totals.value(objective), gamma);
        }
        if i == events.len() {
            break;
        }
        while i < events.len() && events[i].x == next {
            let e = &events[i];
            totals.add(&pool.cands[e.seg][e.from], -1);
            totals.add(&pool.cands[e.seg][e.to], 1);
            i += 1;
        }
        prev = next;
    }
    (best_gamma, best_value)
}

/// Coordinate ascent with exact line searches from `start`, then from
/// `restarts` random perturbations of it. Returns the best weights and their
/// metric value; ties keep the earlier start.
pub fn optimize_pool(
    pool: &NBestPool,
    start: &[f64],
    tunable: &[usize],
    objective: Objective,
    restarts: usize,
    seed: u64,
) -> (Vec<f64>, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut starts = vec![start.to_vec()];
    for _ in 0..restarts {
        let mut w = start.to_vec();
        for &k in tunable {
            w[k] += rng.gen_range(-1.0..1.0);
        }
        starts.push(w);
    }
    let mut best: Option<(Vec<f64>, f64)> = None;
    for w0 in starts {
        let (w, v) = coordinate_ascent(pool, w0, tunable, objective);
        let better = match &best {
            None => true,
            Some((_, bv)) => objective.utility(v) > objective.utility(*bv) + 1e-12,
        };
        if better {
            best = Some((w, v));
        }
    }
    best.unwrap()
}

fn coordinate_ascent(pool: &NBestPool, mut w: Vec<f64>, tunable: &[usize], objective: Objective) -> (Vec<f64>, f64) {
    let mut current = pool.evaluate(&w, objective);
    for _ in 0..100 {
        let dim = w.len();
        let results: Vec<(usize, f64, f64)> = tunable
            .par_iter()
            .map(|&k| {
                let mut dir = vec![0.0; dim];
                dir[k] = 1.0;
                let (g, v) = line_search(pool, &w, &dir, objective);
                (k, g, v)
            })
            .collect();
        let mut choice: Option<(usize, f64, f64)> = None;
        for (k, g, v) in results {
            if g == 0.0 {
                continue;
            }
            if choice.is_none_or(|c| objective.utility(v) > objective.utility(c.2) + 1e-12) {
                choice = Some((k, g, v));
            }
        }
        let Some((k, g, _)) = choice else { break };
        let mut next = w.clone();
        next[k] += g;
        // Re-scored directly so near-ties on the envelope cannot fake a gain.
        let v = pool.evaluate(&next, objective);
        if objective.utility(v) > objective.utility(current) + 1e-12 {
            w = next;
            current = v;
        } else {
            break;
        }
    }
    (w, current)
}

/// Tunes decoder weights on a dev set. `refs[i]` is the post-edit of
/// `inputs[i]`.
pub fn tune(
    decoder: &Decoder,
    inputs: &[DecoderInput],
    refs: &[Vec<String>],
    initial: &FeatureWeights,
    config: &TuneConfig,
) -> Result<(FeatureWeights, TuneRun)> {
    if inputs.is_empty() {
        return Err(ApeError::EmptyCorpus);
    }
    if inputs.len() != refs.len() {
        return Err(ApeError::LengthMismatch {
            left: inputs.len(),
            right: refs.len(),
        });
    }
    let objective = config.objective;
    let mut pool = NBestPool::new(refs.to_vec());
    let mut w = initial.values.to_vec();
    let mut history = Vec::new();
    for cycle in 0..config.max_cycles.max(1) {
        let mut dec = decoder.clone();
        dec.weights = FeatureWeights {
            values: w.clone().try_into().unwrap(),
        };
        let results = dec.decode_all(inputs)?;
        let mut added = 0;
        for (seg, r) in results.iter().enumerate() {
            for d in &r.nbest {
                if pool.add(seg, &d.tokens, d.features.to_vec())? {
                    added += 1;
                }
            }
        }
        let tunable = varying_features(&pool, &config.frozen);
        let before = pool.evaluate(&w, objective);
        let (next, value) = optimize_pool(&pool, &w, &tunable, objective, config.restarts, config.seed.wrapping_add(cycle as u64));
        let gain = objective.utility(value) - objective.utility(before);
        if gain > 1e-12 {
            w = next;
            history.push(TuneStep {
                weights: FeatureWeights {
                    values: w.clone().try_into().unwrap(),
                },
                objective: value,
                previous_objective: before,
            });
        }
        if gain < config.min_gain || added == 0 {
            break;
        }
    }
    let init_value = pool.evaluate(&initial.values, objective);
    let final_value = pool.evaluate(&w, objective);
    let (weights, final_objective) = if objective.utility(final_value) > objective.utility(init_value) {
        (
            FeatureWeights {
                values: w.try_into().unwrap(),
            },
            final_value,
        )
    } else {
        (initial.clone(), init_value)
    };
    Ok((
        weights,
        TuneRun {
            objective,
            min_gain: config.min_gain,
            max_cycles: config.max_cycles,
            history,
            final_objective,
        },
    ))
}

fn varying_features(pool: &NBestPool, frozen: &[Feature]) -> Vec<usize> {
    let frozen: HashSet<usize> = frozen.iter().map(|f| f.index()).collect();
    (0..NUM_FEATURES)
        .filter(|k| !frozen.contains(k))
        .filter(|&k| {
            pool.cands.iter().any(|c| {
                c.iter().any(|x| x.features[k] != c[0].features[k])
            })
        })
        .collect()
}

pub const RERANK_NAMES: [&str; 7] = [
    "insertions",
    "deletions",
    "substitutions",
    "shifts",
    "length_ratio",
    "precision_vs_mt",
    "recall_vs_mt",
];

/// Shallow comparison of a hypothesis with the mt it edits.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RerankFeatures {
    pub insertions: f64,
    pub deletions: f64,
    pub substitutions: f64,
    pub shifts: f64,
    pub length_ratio: f64,
    pub precision_vs_mt: f64,
    pub recall_vs_mt: f64,
}

impl RerankFeatures {
    pub fn compute(hyp: &[String], mt: &[String]) -> Result<Self> {
        let (ins, del, sub, shifts) = if mt.is_empty() {
            (0, hyp.len(), 0, 0)
        } else {
            let b = metrics::ter(hyp, mt)?.breakdown;
            (b.insertions, b.deletions, b.substitutions, b.shifts)
        };
        let mut bag: HashMap<&str, usize> = HashMap::new();
        for t in mt {
            *bag.entry(t).or_default() += 1;
        }
        let mut overlap = 0;
        for t in hyp {
            if let Some(c) = bag.get_mut(t.as_str()) {
                if *c > 0 {
                    *c -= 1;
                    overlap += 1;
                }
            }
        }
        let ratio = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
        Ok(RerankFeatures {
            insertions: ins as f64,
            deletions: del as f64,
            substitutions: sub as f64,
            shifts: shifts as f64,
            length_ratio: if mt.is_empty() {
                1.0 + hyp.len() as f64
            } else {
                hyp.len() as f64 / mt.len() as f64
            },
            precision_vs_mt: ratio(overlap, hyp.len()),
            recall_vs_mt: ratio(overlap, mt.len()),
        })
    }

    pub fn to_array(&self) -> [f64; 7] {
        [
            self.insertions,
            self.deletions,
            self.substitutions,
            self.shifts,
            self.length_ratio,
            self.precision_vs_mt,
            self.recall_vs_mt,
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct RerankWeights {
    pub values: [f64; 7],
}

impl RerankWeights {
    pub fn to_text(&self) -> String {
        RERANK_NAMES
            .iter()
            .zip(&self.values)
            .map(|(n, v)| format!("{n}={v}\n"))
            .collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut w = RerankWeights::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ApeError::parse("<rerank weights>", i + 1, "expected name=value"))?;
            let idx = RERANK_NAMES
                .iter()
                .position(|n| *n == k.trim())
                .ok_or_else(|| ApeError::UnknownFeature(k.trim().to_owned()))?;
            w.values[idx] = v
                .trim()
                .parse()
                .map_err(|_| ApeError::parse("<rerank weights>", i + 1, "bad weight value"))?;
        }
        Ok(w)
    }
}

/// Reorders by decoder score plus weighted rerank features. Ties keep their
/// incoming order.
pub fn rerank(nbest: &[Derivation], mt: &[String], weights: &RerankWeights) -> Result<Vec<Derivation>> {
    let mut scored: Vec<(f64, Derivation)> = nbest
        .iter()
        .map(|d| {
            let f = RerankFeatures::compute(&d.tokens, mt)?;
            Ok((d.score + dot(&weights.values, &f.to_array()), d.clone()))
        })
        .collect::<Result<_>>()?;
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    Ok(scored.into_iter().map(|(_, d)| d).collect())
}

/// Tunes rerank weights on fixed n-best lists with the same line search.
/// The decoder score enters with weight 1.
pub fn tune_rerank(
    nbests: &[Vec<Derivation>],
    mts: &[Vec<String>],
    refs: &[Vec<String>],
    config: &TuneConfig,
) -> Result<RerankWeights> {
    if nbests.is_empty() {
        return Err(ApeError::EmptyCorpus);
    }
    if nbests.len() != refs.len() || mts.len() != refs.len() {
        return Err(ApeError::LengthMismatch {
            left: nbests.len(),
            right: refs.len(),
        });
    }
    let mut pool = NBestPool::new(refs.to_vec());
    for (seg, list) in nbests.iter().enumerate() {
        for d in list {
            let mut h = vec![d.score];
            h.extend(RerankFeatures::compute(&d.tokens, &mts[seg])?.to_array());
            pool.add(seg, &d.tokens, h)?;
        }
    }
    let mut start = vec![0.0; 8];
    start[0] = 1.0;
    let tunable: Vec<usize> = (1..8).collect();
    let (w, _) = optimize_pool(&pool, &start, &tunable, config.objective, config.restarts, config.seed);
    let mut out = RerankWeights::default();
    out.values.copy_from_slice(&w[1..]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::{DecodeOptions, TraceStep};
    use crate::lm::{NGramLM, Smoothing};
    use crate::tm::{PhraseEntry, PhraseTable, Provenance};
    use proptest::prelude::*;
    use rand::Rng;

    fn s(x: &str) -> Vec<String> {
        x.split_whitespace().map(str::to_owned).collect()
    }

    fn deriv(tokens: &str, score: f64) -> Derivation {
        Derivation {
            tokens: s(tokens),
            score,
            features: [0.0; NUM_FEATURES],
            trace: Vec::<TraceStep>::new(),
        }
    }

    #[test]
    fn one_free_weight_against_grid() {
        // Candidate A is right and has feature +1; B is wrong with feature -1.
        let mut pool = NBestPool::new(vec![s("a b c")]);
        pool.add(0, &s("a b c"), vec![0.5, 1.0]).unwrap();
        pool.add(0, &s("x y z"), vec![1.0, -1.0]).unwrap();
        let (w, v) = optimize_pool(&pool, &[1.0, 0.0], &[1], Objective::Ter, 0, 0);
        let grid_best = (-50..=50)
            .map(|i| i as f64 / 10.0)
            .map(|l| pool.evaluate(&[1.0, l], Objective::Ter))
            .fold(f64::INFINITY, f64::min);
        assert!(w[1] > 0.0);
        assert_eq!(v, grid_best);
        assert_eq!(v, 0.0);
    }

    #[test]
    fn constant_objective_keeps_weights() {
        let mut pool = NBestPool::new(vec![s("a b")]);
        pool.add(0, &s("a c"), vec![1.0, 2.0]).unwrap();
        let (w, _) = optimize_pool(&pool, &[0.3, 0.7], &[0, 1], Objective::Bleu, 3, 4);
        assert_eq!(w, vec![0.3, 0.7]);
    }

    fn random_pool(rng: &mut ChaCha8Rng) -> NBestPool {
        let vocab = ["a", "b", "c", "d"];
        let segs = rng.gen_range(1..5);
        let refs: Vec<Vec<String>> = (0..segs)
            .map(|_| (0..rng.gen_range(1..5)).map(|_| vocab[rng.gen_range(0..4)].to_string()).collect())
            .collect();
        let mut pool = NBestPool::new(refs);
        for seg in 0..segs {
            for _ in 0..rng.gen_range(1..6) {
                let toks: Vec<String> = (0..rng.gen_range(1..5)).map(|_| vocab[rng.gen_range(0..4)].to_string()).collect();
                let f: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
                pool.add(seg, &toks, f).unwrap();
            }
        }
        pool
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn line_search_matches_dense_scan(seed in 0u64..10_000, k in 0usize..3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pool = random_pool(&mut rng);
            let w: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut dir = vec![0.0; 3];
            dir[k] = 1.0;
            let (g, v) = line_search(&pool, &w, &dir, Objective::Ter);
            let mut at = w.clone();
            at[k] += g;
            prop_assert!((pool.evaluate(&at, Objective::Ter) - v).abs() < 1e-12);
            prop_assert!(v <= pool.evaluate(&w, Objective::Ter) + 1e-12);
            // No grid point beats the exact optimum.
            for i in -400..=400 {
                let mut x = w.clone();
                x[k] += i as f64 * 0.025;
                prop_assert!(pool.evaluate(&x, Objective::Ter) >= v - 1e-12);
            }
        }

        #[test]
        fn optimize_never_worse(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pool = random_pool(&mut rng);
            let w: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            for obj in [Objective::Ter, Objective::Bleu] {
                let (_, v) = optimize_pool(&pool, &w, &[0, 1, 2], obj, 3, seed);
                prop_assert!(obj.utility(v) >= obj.utility(pool.evaluate(&w, obj)));
            }
        }
    }

    #[test]
    fn rerank_features_and_order() {
        let f = RerankFeatures::compute(&s("a b c"), &s("a b c")).unwrap();
        assert_eq!(f.to_array(), [0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);

        let list = vec![deriv("x y c", 1.0), deriv("a b d", 0.9)];
        assert_eq!(rerank(&list, &s("a b c"), &RerankWeights::default()).unwrap(), list);
        let mut w = RerankWeights::default();
        w.values[2] = -1.0;
        let out = rerank(&list, &s("a b c"), &w).unwrap();
        assert_eq!(out[0].tokens, s("a b d"));

        let tied = vec![deriv("p", 0.5), deriv("q", 0.5), deriv("r", 0.5)];
        assert_eq!(rerank(&tied, &s("z"), &RerankWeights::default()).unwrap(), tied);
    }

    #[test]
    fn rerank_weights_text() {
        let mut w = RerankWeights::default();
        w.values[4] = -0.25;
        assert_eq!(RerankWeights::from_text(&w.to_text()).unwrap(), w);
        assert!(RerankWeights::from_text("bogus=1").is_err());
    }

    #[test]
    fn tune_rerank_prefers_close_to_mt() {
        let nbests = vec![vec![deriv("q q q", 1.0), deriv("a b c", 0.5)], vec![deriv("r r", 1.0), deriv("d e", 0.2)]];
        let mts = vec![s("a b c"), s("d e")];
        let w = tune_rerank(&nbests, &mts, &mts, &TuneConfig::default()).unwrap();
        for (i, list) in nbests.iter().enumerate() {
            assert_eq!(rerank(list, &mts[i], &w).unwrap()[0].tokens, mts[i]);
        }
    }

    #[test]
    fn tune_finds_negative_lm_weight() {
        // The LM loves "a a", the post-edits want "b b".
        let lm = NGramLM::train(&[s("a a"), s("a a"), s("a a b")], 2, Smoothing::Add1).unwrap();
        let mut t = PhraseTable::new(7, Provenance::Monolingual, 0.5);
        t.insert(PhraseEntry::identity(s("x"), s("a"), 0.5));
        t.insert(PhraseEntry::identity(s("x"), s("b"), 0.5));
        let dec = Decoder::new(vec![&t], vec![&lm], FeatureWeights::default()).with_options(DecodeOptions {
            nbest: 10,
            ..DecodeOptions::default()
        });
        let inputs = vec![DecoderInput::plain(s("x x")), DecoderInput::plain(s("x"))];
        let refs = vec![s("b b"), s("b")];
        let initial = FeatureWeights::default();
        let (w, run) = tune(&dec, &inputs, &refs, &initial, &TuneConfig::default()).unwrap();
        assert!(w.get(Feature::Lm) < 0.0, "lm weight {}", w.get(Feature::Lm));
        let mut pool_init = dec.clone();
        pool_init.weights = initial.clone();
        let before: Vec<Vec<String>> = inputs.iter().map(|i| pool_init.decode(i).unwrap().best().tokens.clone()).collect();
        assert!(run.final_objective < metrics::corpus_ter(&before, &refs).unwrap().0);
        for step in &run.history {
            assert!(step.objective <= step.previous_objective);
        }
        let mut d2 = dec.clone();
        d2.weights = w;
        assert_eq!(d2.decode(&inputs[1]).unwrap().best().tokens, s("b"));
    }

    #[test]
    fn tune_errors() {
        let t = PhraseTable::new(7, Provenance::Monolingual, 0.5);
        let dec = Decoder::new(vec![&t], vec![], FeatureWeights::default());
        assert!(tune(&dec, &[], &[], &FeatureWeights::default(), &TuneConfig::default()).is_err());
    }
}
