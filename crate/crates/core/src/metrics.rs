//! Reference-based evaluation.
//!
//! TER counts word insertions, deletions, substitutions and block shifts
//! (each shift costs one edit) needed to turn a hypothesis into the
//! reference, divided by the reference length. Shifts are found greedily;
//! short hypotheses are additionally searched exhaustively within the bound
//! the greedy result leaves, so their scores are exact.

use std::collections::{HashMap, HashSet, VecDeque};

use rayon::prelude::*;

use crate::edit::{self, EditOp};
use crate::error::{ApeError, Result};

/// Largest block considered by the greedy shift search.
const MAX_SHIFT_SIZE: usize = 10;
/// Largest distance a block may travel in the greedy shift search.
const MAX_SHIFT_DIST: usize = 50;
/// Hypotheses up to this length get the bounded exhaustive refinement.
const EXACT_MAX_LEN: usize = 8;
/// Node budget for the refinement; past it the best result found so far is kept.
const EXACT_NODE_BUDGET: usize = 200_000;

/// Edit counts behind a TER score. Insertions are reference tokens missing
/// from the hypothesis, deletions are hypothesis tokens with no reference
/// counterpart.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EditBreakdown {
    pub insertions: usize,
    pub deletions: usize,
    pub substitutions: usize,
    pub shifts: usize,
    pub ref_len: usize,
}

impl EditBreakdown {
    pub fn edits(&self) -> usize {
        self.insertions + self.deletions + self.substitutions + self.shifts
    }

    pub fn ter(&self) -> f64 {
        if self.ref_len == 0 {
            return 0.0;
        }
        self.edits() as f64 / self.ref_len as f64
    }
}

impl std::ops::Add for EditBreakdown {
    type Output = EditBreakdown;

    fn add(self, o: EditBreakdown) -> EditBreakdown {
        EditBreakdown {
            insertions: self.insertions + o.insertions,
            deletions: self.deletions + o.deletions,
            substitutions: self.substitutions + o.substitutions,
            shifts: self.shifts + o.shifts,
            ref_len: self.ref_len + o.ref_len,
        }
    }
}

impl std::iter::Sum for EditBreakdown {
    fn sum<I: Iterator<Item = EditBreakdown>>(iter: I) -> Self {
        iter.fold(EditBreakdown::default(), |a, b| a + b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HypLabel {
    Match,
    Substitution,
    /// The token has no reference counterpart and is deleted.
    Deleted,
}

/// Token-level outcome of a TER computation, in original hypothesis order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TerAlignment {
    pub hyp_labels: Vec<HypLabel>,
    /// `true` for reference tokens the hypothesis lacks.
    pub ref_inserted: Vec<bool>,
    /// `(hyp_index, ref_index)` for matches and substitutions.
    pub links: Vec<(usize, usize)>,
    /// `true` for hypothesis tokens moved by a shift.
    pub shifted: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TerResult {
    pub score: f64,
    pub breakdown: EditBreakdown,
    pub alignment: TerAlignment,
}

/// A block move: take `len` tokens at `start`, reinsert them at `dest` in
/// the sequence that remains after removal.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Shift {
    start: usize,
    len: usize,
    dest: usize,
}

fn apply_shift<T: Copy>(seq: &[T], s: Shift) -> Vec<T> {
    let mut out = Vec::with_capacity(seq.len());
    let block = &seq[s.start..s.start + s.len];
    let rest = seq[..s.start].iter().chain(&seq[s.start + s.len..]);
    for (k, &x) in rest.enumerate() {
        if k == s.dest {
            out.extend_from_slice(block);
        }
        out.push(x);
    }
    if out.len() < seq.len() {
        out.extend_from_slice(block);
    }
    out
}

fn all_shifts(n: usize, max_len: usize, max_dist: usize) -> impl Iterator<Item = Shift> {
    (0..n).flat_map(move |start| {
        (1..=max_len.min(n - start)).flat_map(move |len| {
            let rest = n - len;
            (0..=rest)
                .filter(move |&dest| dest != start && dest.abs_diff(start) <= max_dist)
                .map(move |dest| Shift { start, len, dest })
        })
    })
}

/// Multiset lower bound on `shifts + edit distance`; shifts never change it.
fn bag_lower_bound(hyp: &[u32], reference: &[u32]) -> usize {
    let mut counts: HashMap<u32, i64> = HashMap::new();
    for &h in hyp {
        *counts.entry(h).or_default() += 1;
    }
    let mut overlap = 0usize;
    for &r in reference {
        let c = counts.entry(r).or_default();
        if *c > 0 {
            *c -= 1;
            overlap += 1;
        }
    }
    hyp.len().max(reference.len()) - overlap
}

fn intern_all<'a>(vocab: &mut HashMap<&'a str, u32>, side: &'a [String]) -> Vec<u32> {
    side.iter()
        .map(|t| {
            let next = vocab.len() as u32;
            *vocab.entry(t.as_str()).or_insert(next)
        })
        .collect()
}

/// Translation edit rate of `hyp` against `reference`.
pub fn ter(hyp: &[String], reference: &[String]) -> Result<TerResult> {
    if reference.is_empty() {
        return Err(ApeError::EmptyReference);
    }
    let mut vocab: HashMap<&str, u32> = HashMap::new();
    let r = intern_all(&mut vocab, reference);
    let h = intern_all(&mut vocab, hyp);

    let (shifts, perm) = search_shifts(&h, &r);
    let shifted_hyp: Vec<u32> = perm.iter().map(|&i| h[i]).collect();
    let (_, ops) = edit::path(&shifted_hyp, &r);

    let mut bd = EditBreakdown {
        shifts,
        ref_len: r.len(),
        ..Default::default()
    };
    let mut hyp_labels = vec![HypLabel::Deleted; h.len()];
    let mut ref_inserted = vec![false; r.len()];
    let mut links = Vec::new();
    for op in ops {
        match op {
            EditOp::Match(i, j) => {
                hyp_labels[perm[i]] = HypLabel::Match;
                links.push((perm[i], j));
            }
            EditOp::Substitute(i, j) => {
                bd.substitutions += 1;
                hyp_labels[perm[i]] = HypLabel::Substitution;
                links.push((perm[i], j));
            }
            EditOp::Delete(_) => bd.deletions += 1,
            EditOp::Insert(j) => {
                bd.insertions += 1;
                ref_inserted[j] = true;
            }
        }
    }
    links.sort_unstable();
    let mut shifted = vec![false; h.len()];
    for (pos, &orig) in perm.iter().enumerate() {
        if pos != orig {
            shifted[orig] = true;
        }
    }
    Ok(TerResult {
        score: bd.ter(),
        breakdown: bd,
        alignment: TerAlignment {
            hyp_labels,
            ref_inserted,
            links,
            shifted,
        },
    })
}

/// HTER: TER of an mt sentence against its post-edit.
pub fn hter(mt: &[String], pe: &[String]) -> Result<f64> {
    Ok(ter(mt, pe)?.score)
}

/// Returns the number of shifts and the final arrangement of hypothesis
/// indices.
fn search_shifts(h: &[u32], r: &[u32]) -> (usize, Vec<usize>) {
    let identity: Vec<usize> = (0..h.len()).collect();
    let lb = bag_lower_bound(h, r);
    let base = edit::distance(h, r);
    if base == lb {
        return (0, identity);
    }

    // Greedy: repeatedly apply the shift with the largest net gain. Ties go
    // to the shorter move, then the earlier block, then the longer block.
    let mut cur = h.to_vec();
    let mut perm = identity.clone();
    let mut cur_dist = base;
    let mut shifts = 0usize;
    while cur_dist > lb {
        let mut best: Option<(i64, Shift)> = None;
        for s in all_shifts(cur.len(), MAX_SHIFT_SIZE, MAX_SHIFT_DIST) {
            let cand = apply_shift(&cur, s);
            let gain = cur_dist as i64 - edit::distance(&cand, r) as i64 - 1;
            let better = match best {
                None => true,
                Some((bg, bs)) => {
                    let key = |g: i64, s: Shift| {
                        (
                            -g,
                            s.dest.abs_diff(s.start),
                            s.start,
                            std::cmp::Reverse(s.len),
                            s.dest,
                        )
                    };
                    key(gain, s) < key(bg, bs)
                }
            };
            if better {
                best = Some((gain, s));
            }
        }
        match best {
            Some((gain, s)) if gain > 0 => {
                cur = apply_shift(&cur, s);
                perm = apply_shift(&perm, s);
                cur_dist = (cur_dist as i64 - gain - 1) as usize;
                shifts += 1;
            }
            _ => break,
        }
    }

    let greedy_total = shifts + cur_dist;
    if h.len() > EXACT_MAX_LEN || greedy_total <= lb + 1 {
        return (shifts, perm);
    }
    // A cheaper solution needs at most `greedy_total - lb - 1` shifts.
    let max_depth = greedy_total - lb - 1;
    let mut best = (greedy_total, shifts, perm);
    let mut seen: HashSet<Vec<u32>> = HashSet::new();
    seen.insert(h.to_vec());
    let mut queue = VecDeque::from([(h.to_vec(), identity, 0usize)]);
    let mut nodes = 0usize;
    'bfs: while let Some((state, sperm, depth)) = queue.pop_front() {
        if depth >= max_depth || depth + 1 + lb >= best.0 {
            continue;
        }
        for s in all_shifts(state.len(), state.len(), state.len()) {
            let next = apply_shift(&state, s);
            if !seen.insert(next.clone()) {
                continue;
            }
            nodes += 1;
            let next_perm = apply_shift(&sperm, s);
            let total = depth + 1 + edit::distance(&next, r);
            if total < best.0 {
                best = (total, depth + 1, next_perm.clone());
                if total == lb {
                    break 'bfs;
                }
            }
            if nodes >= EXACT_NODE_BUDGET {
                break 'bfs;
            }
            queue.push_back((next, next_perm, depth + 1));
        }
    }
    (best.1, best.2)
}

/// Micro-averaged corpus TER: total edits over total reference tokens.
pub fn corpus_ter(hyps: &[Vec<String>], refs: &[Vec<String>]) -> Result<(f64, EditBreakdown)> {
    if hyps.len() != refs.len() {
        return Err(ApeError::LengthMismatch {
            left: hyps.len(),
            right: refs.len(),
        });
    }
    let parts: Vec<EditBreakdown> = hyps
        .par_iter()
        .zip(refs.par_iter())
        .map(|(h, r)| ter(h, r).map(|t| t.breakdown))
        .collect::<Result<_>>()?;
    let total: EditBreakdown = parts.into_iter().sum();
    Ok((total.ter(), total))
}

/// Additive BLEU sufficient statistics.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: [u64; 4],
    pub totals: [u64; 4],
    pub hyp_len: u64,
    pub ref_len: u64,
}

impl BleuStats {
    pub fn of(hyp: &[String], reference: &[String]) -> BleuStats {
        let mut st = BleuStats {
            hyp_len: hyp.len() as u64,
            ref_len: reference.len() as u64,
            ..Default::default()
        };
        for n in 1..=4 {
            if hyp.len() < n {
                continue;
            }
            let mut ref_counts: HashMap<&[String], u64> = HashMap::new();
            for g in reference.windows(n) {
                *ref_counts.entry(g).or_default() += 1;
            }
            let mut hyp_counts: HashMap<&[String], u64> = HashMap::new();
            for g in hyp.windows(n) {
                *hyp_counts.entry(g).or_default() += 1;
            }
            st.totals[n - 1] = (hyp.len() + 1 - n) as u64;
            st.matches[n - 1] = hyp_counts
                .iter()
                .map(|(g, &c)| c.min(ref_counts.get(g).copied().unwrap_or(0)))
                .sum();
        }
        st
    }

    pub fn add(&mut self, o: &BleuStats) {
        for n in 0..4 {
            self.matches[n] += o.matches[n];
            self.totals[n] += o.totals[n];
        }
        self.hyp_len += o.hyp_len;
        self.ref_len += o.ref_len;
    }

    /// Uniform 1/4 weights, no smoothing.
    pub fn score(&self) -> f64 {
        if self.hyp_len == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        for n in 0..4 {
            if self.matches[n] == 0 || self.totals[n] == 0 {
                return 0.0;
            }
            log_sum += 0.25 * (self.matches[n] as f64 / self.totals[n] as f64).ln();
        }
        let (c, r) = (self.hyp_len as f64, self.ref_len as f64);
        let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
        bp * log_sum.exp()
    }
}

/// Corpus-level BLEU against a single reference per segment.
pub fn bleu(hyps: &[Vec<String>], refs: &[Vec<String>]) -> Result<f64> {
    if hyps.len() != refs.len() {
        return Err(ApeError::LengthMismatch {
            left: hyps.len(),
            right: refs.len(),
        });
    }
    if refs.iter().all(|r| r.is_empty()) {
        return Err(ApeError::EmptyReference);
    }
    let mut st = BleuStats::default();
    for (h, r) in hyps.iter().zip(refs) {
        st.add(&BleuStats::of(h, r));
    }
    Ok(st.score())
}

/// Sentence-level comparison of an APE system with the MT it post-edits.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrecisionReport {
    pub modified: usize,
    pub improved: usize,
    /// `None` when no sentence was modified.
    pub precision: Option<f64>,
}

/// A segment counts as modified when its TER changed and improved when it
/// went down.
pub fn precision(mt: &[Vec<String>], ape: &[Vec<String>], refs: &[Vec<String>]) -> Result<PrecisionReport> {
    if mt.len() != ape.len() || ape.len() != refs.len() {
        return Err(ApeError::LengthMismatch {
            left: mt.len(),
            right: ape.len().max(refs.len()),
        });
    }
    let verdicts: Vec<(bool, bool)> = (0..mt.len())
        .into_par_iter()
        .map(|i| {
            // Both scores share the reference, so edit counts compare exactly.
            let before = ter(&mt[i], &refs[i])?.breakdown.edits();
            let after = ter(&ape[i], &refs[i])?.breakdown.edits();
            Ok((after != before, after < before))
        })
        .collect::<Result<_>>()?;
    let modified = verdicts.iter().filter(|v| v.0).count();
    let improved = verdicts.iter().filter(|v| v.1).count();
    Ok(PrecisionReport {
        modified,
        improved,
        precision: (modified > 0).then(|| improved as f64 / modified as f64),
    })
}

/// Geometric mean over n = 1..4 of the share of n-gram types seen more than
/// once in the whole corpus. An order with no n-grams contributes 1.
pub fn repetition_rate(corpus: &[Vec<String>]) -> Result<f64> {
    if corpus.is_empty() {
        return Err(ApeError::EmptyCorpus);
    }
    let mut product = 1.0f64;
    for n in 1..=4 {
        let mut counts: HashMap<&[String], usize> = HashMap::new();
        for s in corpus {
            for g in s.windows(n) {
                *counts.entry(g).or_default() += 1;
            }
        }
        if counts.is_empty() {
            continue;
        }
        let repeated = counts.values().filter(|&&c| c > 1).count();
        product *= repeated as f64 / counts.len() as f64;
    }
    Ok(product.powf(0.25))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub ter: f64,
    pub bleu: f64,
    pub sentences_modified: usize,
    pub sentences_improved: usize,
    pub precision: Option<f64>,
    pub repetition_rate: f64,
}

impl EvalReport {
    /// Scores `hyps` against `refs`; modification counts need the original mt.
    pub fn compute(hyps: &[Vec<String>], refs: &[Vec<String>], mt: Option<&[Vec<String>]>) -> Result<Self> {
        let (ter, _) = corpus_ter(hyps, refs)?;
        let bleu = bleu(hyps, refs)?;
        let prec = match mt {
            Some(mt) => precision(mt, hyps, refs)?,
            None => PrecisionReport {
                modified: 0,
                improved: 0,
                precision: None,
            },
        };
        Ok(EvalReport {
            ter,
            bleu,
            sentences_modified: prec.modified,
            sentences_improved: prec.improved,
            precision: prec.precision,
            repetition_rate: repetition_rate(hyps)?,
        })
    }

    /// Fixed-order `key<TAB>value` report.
    pub fn to_tsv(&self) -> String {
        let precision = self
            .precision
            .map(|p| format!("{p:.6}"))
            .unwrap_or_else(|| "undefined".into());
        format!(
            "TER\t{:.6}\nBLEU\t{:.6}\nmodified\t{}\nimproved\t{}\nprecision\t{}\nRR\t{:.6}\n",
            self.ter,
            self.bleu,
            self.sentences_modified,
            self.sentences_improved,
            precision,
            self.repetition_rate
        )
    }
}
