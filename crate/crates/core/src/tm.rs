//! Phrase tables: extraction, estimation, dense features and pruning.
//!
//! The "source" side of a table is whatever the decoder reads (mt tokens, or
//! joint `mt#src` tokens for context-aware tables) and the "target" side is
//! post-edit text.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::ops::Range;

use rayon::prelude::*;

use crate::align::{LexiconModel, WordAlignment, NULL_TOKEN, UNKNOWN_FLOOR};
use crate::corpus::JointToken;
use crate::error::{ApeError, Result};
use crate::metrics;

pub const DEFAULT_MAX_PHRASE_LEN: usize = 7;
pub const DEFAULT_SIGMA: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Orientation {
    Monotone,
    Swap,
    Discontinuous,
}

impl Orientation {
    pub fn index(self) -> usize {
        self as usize
    }
}

/// One consistent phrase pair found in an aligned sentence pair.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PhrasePair {
    pub src: Range<usize>,
    pub tgt: Range<usize>,
    /// Orientation with respect to the previous target phrase.
    pub prev: Orientation,
    /// Orientation with respect to the next target phrase.
    pub next: Orientation,
}

/// All phrase pairs consistent with `alignment` (links are `(src, tgt)`)
/// with both sides at most `max_len` tokens, unaligned source words at the
/// block edges included.
pub fn extract_phrases(
    src_len: usize,
    tgt_len: usize,
    alignment: &WordAlignment,
    max_len: usize,
) -> Vec<PhrasePair> {
    let mut by_src: Vec<Vec<usize>> = vec![Vec::new(); src_len];
    let mut by_tgt: Vec<Vec<usize>> = vec![Vec::new(); tgt_len];
    for &(s, t) in alignment.links() {
        by_src[s].push(t);
        by_tgt[t].push(s);
    }
    let src_aligned: Vec<bool> = by_src.iter().map(|l| !l.is_empty()).collect();
    let orient = |fs: usize, fe: usize, es: usize, ee: usize| {
        let prev = if (es == 0 && fs == 0) || (es > 0 && fs > 0 && alignment.contains(fs - 1, es - 1)) {
            Orientation::Monotone
        } else if es > 0 && alignment.contains(fe + 1, es - 1) {
            Orientation::Swap
        } else {
            Orientation::Discontinuous
        };
        let next = if (ee + 1 == tgt_len && fe + 1 == src_len) || alignment.contains(fe + 1, ee + 1) {
            Orientation::Monotone
        } else if fs > 0 && alignment.contains(fs - 1, ee + 1) {
            Orientation::Swap
        } else {
            Orientation::Discontinuous
        };
        (prev, next)
    };

    let mut out = Vec::new();
    for es in 0..tgt_len {
        let (mut fmin, mut fmax) = (usize::MAX, 0usize);
        for ee in es..tgt_len.min(es + max_len) {
            for &s in &by_tgt[ee] {
                fmin = fmin.min(s);
                fmax = fmax.max(s);
            }
            if fmin == usize::MAX {
                continue;
            }
            if fmax - fmin + 1 > max_len {
                break;
            }
            let consistent = (fmin..=fmax).all(|s| by_src[s].iter().all(|&t| t >= es && t <= ee));
            if !consistent {
                continue;
            }
            let mut fs = fmin;
            loop {
                let mut fe = fmax;
                while fe - fs < max_len {
                    let (prev, next) = orient(fs, fe, es, ee);
                    out.push(PhrasePair {
                        src: fs..fe + 1,
                        tgt: es..ee + 1,
                        prev,
                        next,
                    });
                    fe += 1;
                    if fe >= src_len || src_aligned[fe] {
                        break;
                    }
                }
                if fs == 0 || src_aligned[fs - 1] || fmax + 1 - (fs - 1) > max_len {
                    break;
                }
                fs -= 1;
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Monolingual,
    ContextAware,
}

impl Provenance {
    fn name(self) -> &'static str {
        match self {
            Provenance::Monolingual => "monolingual",
            Provenance::ContextAware => "context-aware",
        }
    }

    /// Plain mt token of a table-side token.
    pub fn surface(self, token: &str) -> String {
        match self {
            Provenance::Monolingual => token.to_owned(),
            Provenance::ContextAware => JointToken::parse(token).mt,
        }
    }
}

impl std::str::FromStr for Provenance {
    type Err = ApeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "monolingual" => Ok(Provenance::Monolingual),
            "context-aware" => Ok(Provenance::ContextAware),
            _ => Err(ApeError::InvalidArgument(format!("unknown provenance {s:?}"))),
        }
    }
}

/// A correction rule.
#[derive(Clone, Debug, PartialEq)]
pub struct PhraseEntry {
    pub src: Vec<String>,
    pub tgt: Vec<String>,
    pub p_tgt_given_src: f64,
    pub p_src_given_tgt: f64,
    pub lex_tgt_given_src: f64,
    pub lex_src_given_tgt: f64,
    pub f1_similarity: f64,
    pub f2_1_median_hter: f64,
    pub f2_2_stdev_hter: f64,
    pub f3_pos_impact: f64,
    pub neg_impact: f64,
    pub joint_count: u64,
    pub src_count: u64,
    pub tgt_count: u64,
    /// Smoothed msd probabilities: previous-phrase m/s/d, then next-phrase m/s/d.
    pub reordering: [f64; 6],
    /// Raw orientation counts in the same layout.
    pub orientation_counts: [u64; 6],
    /// Most frequent within-phrase alignment, `(src, tgt)` offsets.
    pub alignment: Vec<(usize, usize)>,
}

impl PhraseEntry {
    /// A pass-through rule with the given probabilities.
    pub fn identity(tokens: Vec<String>, surface: Vec<String>, p: f64) -> Self {
        let n = tokens.len();
        PhraseEntry {
            src: tokens,
            tgt: surface,
            p_tgt_given_src: p,
            p_src_given_tgt: p,
            lex_tgt_given_src: p,
            lex_src_given_tgt: p,
            f1_similarity: std::f64::consts::E,
            f2_1_median_hter: 0.0,
            f2_2_stdev_hter: 0.0,
            f3_pos_impact: 0.0,
            neg_impact: 0.0,
            joint_count: 1,
            src_count: 1,
            tgt_count: 1,
            reordering: [1.0 / 3.0; 6],
            orientation_counts: [0; 6],
            alignment: (0..n).map(|i| (i, i)).collect(),
        }
    }
}

#[derive(Clone, Debug, Default)]
struct PairStats {
    joint: u64,
    orient: [u64; 6],
    alignments: BTreeMap<Vec<(usize, usize)>, u64>,
}

/// Phrase-pair counts accumulated over a corpus, ready for estimation.
#[derive(Clone, Debug)]
pub struct PhraseCounts {
    pub max_len: usize,
    pairs: HashMap<(Vec<String>, Vec<String>), PairStats>,
}

impl PhraseCounts {
    pub fn new(max_len: usize) -> Self {
        PhraseCounts {
            max_len,
            pairs: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn add_sentence(&mut self, src: &[String], tgt: &[String], alignment: &WordAlignment) -> Result<()> {
        alignment.check_bounds(src.len(), tgt.len())?;
        for p in extract_phrases(src.len(), tgt.len(), alignment, self.max_len) {
            let inner: Vec<(usize, usize)> = alignment
                .links()
                .filter(|(s, t)| p.src.contains(s) && p.tgt.contains(t))
                .map(|&(s, t)| (s - p.src.start, t - p.tgt.start))
                .collect();
            let key = (src[p.src.clone()].to_vec(), tgt[p.tgt.clone()].to_vec());
            let stats = self.pairs.entry(key).or_default();
            stats.joint += 1;
            stats.orient[p.prev.index()] += 1;
            stats.orient[3 + p.next.index()] += 1;
            *stats.alignments.entry(inner).or_default() += 1;
        }
        Ok(())
    }

    /// Adds `count` occurrences of a pair directly.
    pub fn add_pair(&mut self, src: &[String], tgt: &[String], count: u64, prev: Orientation, next: Orientation) {
        let stats = self.pairs.entry((src.to_vec(), tgt.to_vec())).or_default();
        stats.joint += count;
        stats.orient[prev.index()] += count;
        stats.orient[3 + next.index()] += count;
        let n = src.len().min(tgt.len());
        *stats.alignments.entry((0..n).map(|i| (i, i)).collect()).or_default() += count;
    }

    pub fn merge(&mut self, other: &PhraseCounts) {
        for (k, v) in &other.pairs {
            let s = self.pairs.entry(k.clone()).or_default();
            s.joint += v.joint;
            for i in 0..6 {
                s.orient[i] += v.orient[i];
            }
            for (a, c) in &v.alignments {
                *s.alignments.entry(a.clone()).or_default() += c;
            }
        }
    }

    pub fn joint_count(&self, src: &[String], tgt: &[String]) -> u64 {
        self.pairs
            .get(&(src.to_vec(), tgt.to_vec()))
            .map_or(0, |s| s.joint)
    }

    /// Pairs with their joint and orientation counts, unordered.
    pub(crate) fn pairs(&self) -> impl Iterator<Item = (&[String], &[String], u64, [u64; 6])> {
        self.pairs.iter().map(|((s, t), st)| (s.as_slice(), t.as_slice(), st.joint, st.orient))
    }

    /// Estimates one pair given its marginals and the global orientation
    /// counts. `f1` is filled; the other dense features are left at zero.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn entry(
        &self,
        s: &[String],
        t: &[String],
        src_count: u64,
        tgt_count: u64,
        global: [u64; 6],
        lex_fwd: &LexiconModel,
        lex_rev: &LexiconModel,
        sigma: f64,
    ) -> Option<PhraseEntry> {
        let st = self.pairs.get(&(s.to_vec(), t.to_vec()))?;
        let alignment = most_frequent(&st.alignments);
        let reversed: Vec<(usize, usize)> = alignment.iter().map(|&(a, b)| (b, a)).collect();
        Some(PhraseEntry {
            src: s.to_vec(),
            tgt: t.to_vec(),
            p_tgt_given_src: st.joint as f64 / src_count as f64,
            p_src_given_tgt: st.joint as f64 / tgt_count as f64,
            lex_tgt_given_src: lexical_weight(s, t, &alignment, lex_fwd),
            lex_src_given_tgt: lexical_weight(t, s, &reversed, lex_rev),
            f1_similarity: 0.0,
            f2_1_median_hter: 0.0,
            f2_2_stdev_hter: 0.0,
            f3_pos_impact: 0.0,
            neg_impact: 0.0,
            joint_count: st.joint,
            src_count,
            tgt_count,
            reordering: smooth_both(st.orient, global, sigma),
            orientation_counts: st.orient,
            alignment,
        })
    }

    /// Sorted `(src, tgt)` keys.
    pub fn keys(&self) -> Vec<(&[String], &[String])> {
        let mut keys: Vec<_> = self.pairs.keys().map(|(s, t)| (s.as_slice(), t.as_slice())).collect();
        keys.sort();
        keys
    }
}

/// `(σ·p(o) + c_o) / (σ + Σc)` for one direction.
pub fn smooth_orientation(pair: [u64; 3], global: [u64; 3], sigma: f64) -> [f64; 3] {
    let gtotal: u64 = global.iter().sum();
    let total: u64 = pair.iter().sum();
    let mut out = [0.0; 3];
    for o in 0..3 {
        let prior = if gtotal == 0 {
            1.0 / 3.0
        } else {
            global[o] as f64 / gtotal as f64
        };
        out[o] = (sigma * prior + pair[o] as f64) / (sigma + total as f64);
    }
    out
}

fn smooth_both(pair: [u64; 6], global: [u64; 6], sigma: f64) -> [f64; 6] {
    let a = smooth_orientation([pair[0], pair[1], pair[2]], [global[0], global[1], global[2]], sigma);
    let b = smooth_orientation([pair[3], pair[4], pair[5]], [global[3], global[4], global[5]], sigma);
    [a[0], a[1], a[2], b[0], b[1], b[2]]
}

/// Lexical weight of `tgt` given `src` under a word alignment of the pair:
/// product over target words of the average lexicon probability of their
/// aligned source words (`NULL` when unaligned).
pub fn lexical_weight(
    src: &[String],
    tgt: &[String],
    alignment: &[(usize, usize)],
    lexicon: &LexiconModel,
) -> f64 {
    let mut w = 1.0;
    for (j, t) in tgt.iter().enumerate() {
        let linked: Vec<usize> = alignment.iter().filter(|a| a.1 == j).map(|a| a.0).collect();
        let p = if linked.is_empty() {
            lexicon.prob(NULL_TOKEN, t)
        } else {
            linked.iter().map(|&i| lexicon.prob(&src[i], t)).sum::<f64>() / linked.len() as f64
        };
        w *= p.max(UNKNOWN_FLOOR);
    }
    w
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhraseTable {
    pub max_phrase_len: usize,
    pub provenance: Provenance,
    pub sigma: f64,
    entries: BTreeMap<Vec<String>, Vec<PhraseEntry>>,
}

impl PhraseTable {
    pub fn new(max_phrase_len: usize, provenance: Provenance, sigma: f64) -> Self {
        PhraseTable {
            max_phrase_len,
            provenance,
            sigma,
            entries: BTreeMap::new(),
        }
    }

    /// MLE phrase probabilities, lexical weights and smoothed reordering.
    /// `lex_fwd` holds `t(tgt|src)` and `lex_rev` holds `t(src|tgt)`.
    pub fn estimate(
        counts: &PhraseCounts,
        lex_fwd: &LexiconModel,
        lex_rev: &LexiconModel,
        sigma: f64,
        provenance: Provenance,
    ) -> Result<Self> {
        if counts.is_empty() {
            return Err(ApeError::EmptyCorpus);
        }
        if sigma <= 0.0 {
            return Err(ApeError::InvalidArgument("sigma must be positive".into()));
        }
        let mut src_totals: HashMap<&[String], u64> = HashMap::new();
        let mut tgt_totals: HashMap<&[String], u64> = HashMap::new();
        let mut global = [0u64; 6];
        for ((s, t), st) in &counts.pairs {
            *src_totals.entry(s).or_default() += st.joint;
            *tgt_totals.entry(t).or_default() += st.joint;
            for i in 0..6 {
                global[i] += st.orient[i];
            }
        }
        let mut table = PhraseTable::new(counts.max_len, provenance, sigma);
        for (s, t) in counts.keys() {
            let e = counts
                .entry(s, t, src_totals[s], tgt_totals[t], global, lex_fwd, lex_rev, sigma)
                .expect("key from the same counts");
            table.insert(e);
        }
        table.fill_similarity();
        Ok(table)
    }

    /// Inserts or replaces the entry with the same `(src, tgt)`.
    pub fn insert(&mut self, entry: PhraseEntry) {
        let list = self.entries.entry(entry.src.clone()).or_default();
        match list.binary_search_by(|e| e.tgt.cmp(&entry.tgt)) {
            Ok(i) => list[i] = entry,
            Err(i) => list.insert(i, entry),
        }
    }

    pub fn lookup(&self, src: &[String]) -> &[PhraseEntry] {
        self.entries.get(src).map_or(&[], Vec::as_slice)
    }

    pub fn get(&self, src: &[String], tgt: &[String]) -> Option<&PhraseEntry> {
        self.lookup(src).iter().find(|e| e.tgt == tgt)
    }

    pub fn entries(&self) -> impl Iterator<Item = &PhraseEntry> {
        self.entries.values().flatten()
    }

    pub fn src_phrases(&self) -> impl Iterator<Item = &Vec<String>> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `f1 = e^(1 - ter(src, tgt))`, with TER capped at 1.
    pub(crate) fn fill_similarity(&mut self) {
        let prov = self.provenance;
        for list in self.entries.values_mut() {
            for e in list {
                let surface: Vec<String> = e.src.iter().map(|t| prov.surface(t)).collect();
                let ter = metrics::ter(&surface, &e.tgt).map_or(1.0, |r| r.score);
                e.f1_similarity = (1.0 - ter.min(1.0)).exp();
            }
        }
    }

    /// Fills f2.1, f2.2, f3 and neg-impact from training segments given as
    /// `(input in this table's vocabulary, post-edit)`.
    pub fn compute_dense_features(&mut self, segments: &[(Vec<String>, Vec<String>)]) -> Result<()> {
        let prov = self.provenance;
        let surfaces: Vec<Vec<String>> = segments
            .iter()
            .map(|(inp, _)| inp.iter().map(|t| prov.surface(t)).collect())
            .collect();
        let base: Vec<f64> = segments
            .par_iter()
            .zip(&surfaces)
            .map(|((_, pe), s)| metrics::ter(s, pe).map(|r| r.score))
            .collect::<Result<_>>()?;
        let mut index: HashMap<&str, Vec<usize>> = HashMap::new();
        for (i, (inp, _)) in segments.iter().enumerate() {
            for tok in inp {
                let list = index.entry(tok.as_str()).or_default();
                if list.last() != Some(&i) {
                    list.push(i);
                }
            }
        }

        let groups: Vec<(&Vec<String>, &Vec<PhraseEntry>)> = self.entries.iter().collect();
        let features: Vec<Vec<[f64; 4]>> = groups
            .par_iter()
            .map(|(src, list)| {
                let hits: Vec<(usize, usize)> = index
                    .get(src[0].as_str())
                    .into_iter()
                    .flatten()
                    .filter_map(|&seg| find_phrase(&segments[seg].0, src).map(|pos| (seg, pos)))
                    .collect();
                let hters: Vec<f64> = hits.iter().map(|&(seg, _)| base[seg]).collect();
                let (median, stdev) = median_and_stdev(&hters);
                list.iter()
                    .map(|e| {
                        if hits.is_empty() {
                            return [0.0; 4];
                        }
                        let (mut pos, mut neg) = (0usize, 0usize);
                        for &(seg, at) in &hits {
                            let s = &surfaces[seg];
                            let mut edited: Vec<String> = Vec::with_capacity(s.len() + e.tgt.len());
                            edited.extend_from_slice(&s[..at]);
                            edited.extend_from_slice(&e.tgt);
                            edited.extend_from_slice(&s[at + src.len()..]);
                            if edited == *s {
                                continue;
                            }
                            let after = metrics::ter(&edited, &segments[seg].1).map_or(base[seg], |r| r.score);
                            if after < base[seg] {
                                pos += 1;
                            } else if after > base[seg] {
                                neg += 1;
                            }
                        }
                        let n = hits.len() as f64;
                        [median, stdev, pos as f64 / n, neg as f64 / n]
                    })
                    .collect()
            })
            .collect();
        for (list, feats) in self.entries.values_mut().zip(features) {
            for (e, f) in list.iter_mut().zip(feats) {
                e.f2_1_median_hter = f[0];
                e.f2_2_stdev_hter = f[1];
                e.f3_pos_impact = f[2];
                e.neg_impact = f[3];
            }
        }
        Ok(())
    }

    /// Drops every entry whose neg-impact is at least `threshold`.
    pub fn prune(&self, threshold: f64) -> Result<PhraseTable> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(ApeError::InvalidArgument(format!("threshold {threshold} outside [0, 1]")));
        }
        let mut out = PhraseTable::new(self.max_phrase_len, self.provenance, self.sigma);
        for e in self.entries() {
            if e.neg_impact < threshold {
                out.insert(e.clone());
            }
        }
        Ok(out)
    }

    /// Sums counts key by key and re-derives phrase and reordering
    /// probabilities. For keys present in both tables the remaining scores
    /// come from the side with the larger joint count.
    pub fn merge_counts(&self, other: &PhraseTable) -> Result<PhraseTable> {
        if self.max_phrase_len != other.max_phrase_len {
            return Err(ApeError::InvalidArgument("phrase tables differ in max phrase length".into()));
        }
        let mut merged: BTreeMap<(Vec<String>, Vec<String>), PhraseEntry> = BTreeMap::new();
        let mut src_counts: HashMap<Vec<String>, u64> = HashMap::new();
        let mut tgt_counts: HashMap<Vec<String>, u64> = HashMap::new();
        for table in [self, other] {
            let mut seen_src: HashMap<&[String], u64> = HashMap::new();
            let mut seen_tgt: HashMap<&[String], u64> = HashMap::new();
            for e in table.entries() {
                seen_src.insert(&e.src, e.src_count);
                seen_tgt.insert(&e.tgt, e.tgt_count);
                let key = (e.src.clone(), e.tgt.clone());
                match merged.get_mut(&key) {
                    Some(m) => {
                        let joint = m.joint_count + e.joint_count;
                        let mut counts = m.orientation_counts;
                        for (c, x) in counts.iter_mut().zip(e.orientation_counts) {
                            *c += x;
                        }
                        if e.joint_count > m.joint_count {
                            *m = e.clone();
                        }
                        m.joint_count = joint;
                        m.orientation_counts = counts;
                    }
                    None => {
                        merged.insert(key, e.clone());
                    }
                }
            }
            for (s, c) in seen_src {
                *src_counts.entry(s.to_vec()).or_default() += c;
            }
            for (t, c) in seen_tgt {
                *tgt_counts.entry(t.to_vec()).or_default() += c;
            }
        }
        let mut global = [0u64; 6];
        for e in merged.values() {
            for i in 0..6 {
                global[i] += e.orientation_counts[i];
            }
        }
        let mut out = PhraseTable::new(self.max_phrase_len, self.provenance, self.sigma);
        for (_, mut e) in merged {
            e.src_count = src_counts[&e.src];
            e.tgt_count = tgt_counts[&e.tgt];
            e.p_tgt_given_src = e.joint_count as f64 / e.src_count as f64;
            e.p_src_given_tgt = e.joint_count as f64 / e.tgt_count as f64;
            e.reordering = smooth_both(e.orientation_counts, global, self.sigma);
            out.insert(e);
        }
        Ok(out)
    }

    /// One entry per line:
    /// `src ||| tgt ||| 9 scores ||| joint src tgt ||| 6 reordering ||| 6 orientation counts ||| alignment`.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "# phrase-table provenance={} max_len={} sigma={}\n",
            self.provenance.name(),
            self.max_phrase_len,
            self.sigma
        );
        for e in self.entries() {
            let scores = [
                e.p_tgt_given_src,
                e.p_src_given_tgt,
                e.lex_tgt_given_src,
                e.lex_src_given_tgt,
                e.f1_similarity,
                e.f2_1_median_hter,
                e.f2_2_stdev_hter,
                e.f3_pos_impact,
                e.neg_impact,
            ];
            let _ = writeln!(
                out,
                "{} ||| {} ||| {} ||| {} {} {} ||| {} ||| {} ||| {}",
                e.src.join(" "),
                e.tgt.join(" "),
                join_floats(&scores),
                e.joint_count,
                e.src_count,
                e.tgt_count,
                join_floats(&e.reordering),
                e.orientation_counts.map(|c| c.to_string()).join(" "),
                WordAlignment::from_links(e.alignment.iter().copied()),
            );
        }
        out
    }

    pub fn from_text(text: &str) -> Result<PhraseTable> {
        let mut table = PhraseTable::new(DEFAULT_MAX_PHRASE_LEN, Provenance::Monolingual, DEFAULT_SIGMA);
        for (i, line) in text.lines().enumerate() {
            let err = |msg: &str| ApeError::parse("<phrase-table>", i + 1, msg);
            if let Some(header) = line.strip_prefix("# phrase-table") {
                for kv in header.split_whitespace() {
                    let (k, v) = kv.split_once('=').ok_or_else(|| err("bad header field"))?;
                    match k {
                        "provenance" => table.provenance = v.parse()?,
                        "max_len" => table.max_phrase_len = v.parse().map_err(|_| err("bad max_len"))?,
                        "sigma" => table.sigma = v.parse().map_err(|_| err("bad sigma"))?,
                        _ => return Err(err("unknown header field")),
                    }
                }
                continue;
            }
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split("|||").map(str::trim).collect();
            if fields.len() < 4 {
                return Err(err("expected at least 4 fields"));
            }
            let tokens = |f: &str| -> Vec<String> { f.split_whitespace().map(str::to_owned).collect() };
            let floats = |f: &str, n: usize| -> Result<Vec<f64>> {
                let v: Vec<f64> = f
                    .split_whitespace()
                    .map(|x| x.parse::<f64>().map_err(|_| err("bad number")))
                    .collect::<Result<_>>()?;
                if v.len() == n {
                    Ok(v)
                } else {
                    Err(err("wrong number of scores"))
                }
            };
            let ints = |f: &str, n: usize| -> Result<Vec<u64>> {
                let v: Vec<u64> = f
                    .split_whitespace()
                    .map(|x| x.parse::<u64>().map_err(|_| err("bad count")))
                    .collect::<Result<_>>()?;
                if v.len() == n {
                    Ok(v)
                } else {
                    Err(err("wrong number of counts"))
                }
            };
            let (src, tgt) = (tokens(fields[0]), tokens(fields[1]));
            if src.is_empty() || tgt.is_empty() {
                return Err(err("empty phrase"));
            }
            let s = floats(fields[2], 9)?;
            let c = ints(fields[3], 3)?;
            let reordering = match fields.get(4) {
                Some(f) => floats(f, 6)?.try_into().unwrap(),
                None => [1.0 / 3.0; 6],
            };
            let orientation_counts = match fields.get(5) {
                Some(f) => ints(f, 6)?.try_into().unwrap(),
                None => [0; 6],
            };
            let alignment = match fields.get(6) {
                Some(f) => WordAlignment::parse_pharaoh(f)?.links().copied().collect(),
                None => Vec::new(),
            };
            table.insert(PhraseEntry {
                src,
                tgt,
                p_tgt_given_src: s[0],
                p_src_given_tgt: s[1],
                lex_tgt_given_src: s[2],
                lex_src_given_tgt: s[3],
                f1_similarity: s[4],
                f2_1_median_hter: s[5],
                f2_2_stdev_hter: s[6],
                f3_pos_impact: s[7],
                neg_impact: s[8],
                joint_count: c[0],
                src_count: c[1],
                tgt_count: c[2],
                reordering,
                orientation_counts,
                alignment,
            });
        }
        Ok(table)
    }
}

fn most_frequent(alignments: &BTreeMap<Vec<(usize, usize)>, u64>) -> Vec<(usize, usize)> {
    let mut best: Option<(&Vec<(usize, usize)>, u64)> = None;
    for (a, &c) in alignments {
        if best.is_none_or(|(_, bc)| c > bc) {
            best = Some((a, c));
        }
    }
    best.map(|(a, _)| a.clone()).unwrap_or_default()
}

/// Decimal with six significant digits, trailing zeros dropped.
pub fn format_float(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x.is_finite() { "0".into() } else { x.to_string() };
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (5 - magnitude).max(0) as usize;
    let s = format!("{x:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_owned()
    } else {
        s
    }
}

fn join_floats(xs: &[f64]) -> String {
    xs.iter().map(|&x| format_float(x)).collect::<Vec<_>>().join(" ")
}

/// Start of the first contiguous occurrence of `needle` in `hay`.
pub fn find_phrase(hay: &[String], needle: &[String]) -> Option<usize> {
    if needle.is_empty() || needle.len() > hay.len() {
        return None;
    }
    hay.windows(needle.len()).position(|w| w == needle)
}

/// Median (mean of the middle pair for even sizes) and population standard
/// deviation; both zero for an empty sample.
pub fn median_and_stdev(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let median = if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    };
    let mean = v.iter().sum::<f64>() / n as f64;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
    (median, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Sentence;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn s(x: &str) -> Vec<String> {
        x.split_whitespace().map(str::to_owned).collect()
    }

    type Block = ((usize, usize), (usize, usize));

    fn spans(pairs: &[PhrasePair]) -> BTreeSet<Block> {
        pairs.iter().map(|p| ((p.src.start, p.src.end), (p.tgt.start, p.tgt.end))).collect()
    }

    /// Enumerates every block pair and checks consistency directly.
    fn brute_force(src_len: usize, tgt_len: usize, al: &WordAlignment, max_len: usize) -> BTreeSet<Block> {
        let mut out = BTreeSet::new();
        for fs in 0..src_len {
            for fe in fs + 1..=src_len.min(fs + max_len) {
                for es in 0..tgt_len {
                    for ee in es + 1..=tgt_len.min(es + max_len) {
                        let mut inside = false;
                        let mut ok = true;
                        for &(a, b) in al.links() {
                            let fi = (fs..fe).contains(&a);
                            let ei = (es..ee).contains(&b);
                            if fi && ei {
                                inside = true;
                            } else if fi || ei {
                                ok = false;
                            }
                        }
                        if ok && inside {
                            out.insert(((fs, fe), (es, ee)));
                        }
                    }
                }
            }
        }
        out
    }

    fn uniform_lexicon() -> LexiconModel {
        LexiconModel::from_counts(HashMap::new())
    }

    #[test]
    fn extraction_examples() {
        let diag = WordAlignment::from_links([(0, 0), (1, 1)]);
        let got = spans(&extract_phrases(2, 2, &diag, 7));
        let want: BTreeSet<_> = [((0, 1), (0, 1)), ((1, 2), (1, 2)), ((0, 2), (0, 2))].into_iter().collect();
        assert_eq!(got, want);

        // Each single word keeps its only link inside its block, so the two
        // crossed one-word pairs are consistent along with the full block.
        let crossed = WordAlignment::from_links([(0, 1), (1, 0)]);
        let got = spans(&extract_phrases(2, 2, &crossed, 7));
        let want: BTreeSet<_> = [((0, 1), (1, 2)), ((1, 2), (0, 1)), ((0, 2), (0, 2))].into_iter().collect();
        assert_eq!(got, want);
        assert_eq!(got, brute_force(2, 2, &crossed, 7));

        assert!(extract_phrases(2, 2, &WordAlignment::default(), 7).is_empty());
    }

    #[test]
    fn orientations() {
        let diag = WordAlignment::from_links([(0, 0), (1, 1)]);
        for p in extract_phrases(2, 2, &diag, 7) {
            assert_eq!((p.prev, p.next), (Orientation::Monotone, Orientation::Monotone));
        }
        let crossed = WordAlignment::from_links([(0, 1), (1, 0)]);
        let p = extract_phrases(2, 2, &crossed, 7)
            .into_iter()
            .find(|p| p.src == (1..2) && p.tgt == (0..1))
            .unwrap();
        assert_eq!(p.prev, Orientation::Discontinuous);
        assert_eq!(p.next, Orientation::Swap);
    }

    #[test]
    fn translation_probabilities() {
        let mut c = PhraseCounts::new(7);
        c.add_pair(&s("a"), &s("x"), 2, Orientation::Monotone, Orientation::Monotone);
        c.add_pair(&s("a"), &s("y"), 2, Orientation::Monotone, Orientation::Monotone);
        let lex = uniform_lexicon();
        let t = PhraseTable::estimate(&c, &lex, &lex, DEFAULT_SIGMA, Provenance::Monolingual).unwrap();
        assert_eq!(t.get(&s("a"), &s("x")).unwrap().p_tgt_given_src, 0.5);

        let mut c = PhraseCounts::new(7);
        c.add_pair(&s("a"), &s("x"), 1, Orientation::Monotone, Orientation::Monotone);
        let t = PhraseTable::estimate(&c, &lex, &lex, DEFAULT_SIGMA, Provenance::Monolingual).unwrap();
        let e = t.get(&s("a"), &s("x")).unwrap();
        assert_eq!((e.p_tgt_given_src, e.p_src_given_tgt), (1.0, 1.0));

        let mut c = PhraseCounts::new(7);
        c.add_pair(&s("a"), &s("x"), 1, Orientation::Monotone, Orientation::Monotone);
        c.add_pair(&s("b"), &s("x"), 3, Orientation::Monotone, Orientation::Monotone);
        let t = PhraseTable::estimate(&c, &lex, &lex, DEFAULT_SIGMA, Provenance::Monolingual).unwrap();
        assert_eq!(t.get(&s("a"), &s("x")).unwrap().p_src_given_tgt, 0.25);
        assert!(PhraseTable::estimate(&PhraseCounts::new(7), &lex, &lex, 0.5, Provenance::Monolingual).is_err());
    }

    #[test]
    fn lexical_weight_by_hand() {
        let mut counts = HashMap::new();
        counts.insert(("a".to_string(), "x".to_string()), 3.0);
        counts.insert(("a".to_string(), "y".to_string()), 1.0);
        counts.insert(("b".to_string(), "y".to_string()), 1.0);
        counts.insert((NULL_TOKEN.to_string(), "z".to_string()), 1.0);
        let lex = LexiconModel::from_counts(counts);
        // x <- a: 0.75; y <- {a, b}: (0.25 + 1) / 2; z unaligned: t(z|NULL) = 1.
        let w = lexical_weight(&s("a b"), &s("x y z"), &[(0, 0), (0, 1), (1, 1)], &lex);
        assert!((w - 0.75 * 0.625).abs() < 1e-12);
    }

    #[test]
    fn reordering_smoothing() {
        let p = smooth_orientation([3, 1, 0], [6, 3, 1], 0.5);
        assert!((p[0] - (0.5 * 0.6 + 3.0) / 4.5).abs() < 1e-12);
        assert!((p[0] - 0.733_333_333_333).abs() < 1e-9);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let p = smooth_orientation([0, 0, 0], [6, 3, 1], 0.5);
        assert_eq!(p, [0.6, 0.3, 0.1]);
        let p = smooth_orientation([3, 1, 0], [6, 3, 1], 1e-9);
        assert!((p[0] - 0.75).abs() < 1e-9 && (p[1] - 0.25).abs() < 1e-9);
    }

    fn diag_table(pairs: &[(&str, &str)]) -> PhraseTable {
        let mut c = PhraseCounts::new(7);
        for (a, b) in pairs {
            let (a, b) = (s(a), s(b));
            let al = WordAlignment::from_links((0..a.len().min(b.len())).map(|i| (i, i)));
            c.add_sentence(&a, &b, &al).unwrap();
        }
        let lex = uniform_lexicon();
        PhraseTable::estimate(&c, &lex, &lex, DEFAULT_SIGMA, Provenance::Monolingual).unwrap()
    }

    #[test]
    fn probabilities_normalize() {
        let t = diag_table(&[("a b c", "a x c"), ("a b", "a b"), ("b c", "y c")]);
        for src in t.src_phrases() {
            let total: f64 = t.lookup(src).iter().map(|e| e.p_tgt_given_src).sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
        for e in t.entries() {
            assert!((e.reordering[..3].iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!((e.reordering[3..].iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn dense_features() {
        let mut t = diag_table(&[("a b c", "a x c")]);
        let e = t.get(&s("a"), &s("a")).unwrap();
        assert!((e.f1_similarity - std::f64::consts::E).abs() < 1e-12);
        assert_eq!(median_and_stdev(&[10.0, 20.0, 30.0]).0, 20.0);
        let (_, sd) = median_and_stdev(&[1.0, 3.0]);
        assert_eq!(sd, 1.0);

        // Rule b -> x helps the segment it came from.
        t.compute_dense_features(&[(s("a b c"), s("a x c"))]).unwrap();
        let e = t.get(&s("b"), &s("x")).unwrap();
        assert_eq!((e.f3_pos_impact, e.neg_impact), (1.0, 0.0));
        assert!((e.f2_1_median_hter - 1.0 / 3.0).abs() < 1e-12);

        // Against a segment where b is already right, the rule hurts.
        t.compute_dense_features(&[(s("a b c"), s("a b c"))]).unwrap();
        let e = t.get(&s("b"), &s("x")).unwrap();
        assert_eq!((e.f3_pos_impact, e.neg_impact), (0.0, 1.0));

        // No segment contains the phrase.
        t.compute_dense_features(&[(s("q"), s("q"))]).unwrap();
        let e = t.get(&s("b"), &s("x")).unwrap();
        assert_eq!([e.f2_1_median_hter, e.f2_2_stdev_hter, e.f3_pos_impact, e.neg_impact], [0.0; 4]);
    }

    #[test]
    fn context_aware_surface() {
        let joint = Sentence::parse("Siehe#See von#on");
        let mut t = diag_table(&[(&joint.to_line(), "Siehe von")]);
        t.provenance = Provenance::ContextAware;
        t.fill_similarity();
        let e = t.get(&s("Siehe#See"), &s("Siehe")).unwrap();
        assert!((e.f1_similarity - std::f64::consts::E).abs() < 1e-12);
    }

    fn with_neg(t: &PhraseTable, values: &[f64]) -> PhraseTable {
        let mut out = t.clone();
        let entries: Vec<PhraseEntry> = t.entries().cloned().collect();
        for (mut e, v) in entries.into_iter().zip(values.iter().cycle()) {
            e.neg_impact = *v;
            out.insert(e);
        }
        out
    }

    #[test]
    fn pruning() {
        let t = with_neg(&diag_table(&[("a b", "a x")]), &[0.25, 0.1, 0.0]);
        let p = t.prune(0.2).unwrap();
        assert!(p.entries().all(|e| e.neg_impact < 0.2));
        assert!(p.len() < t.len());
        let zeros = with_neg(&t, &[0.0]);
        assert_eq!(zeros.prune(1.0).unwrap(), zeros);
        assert!(t.prune(1.5).is_err());
    }

    #[test]
    fn merging() {
        let t = diag_table(&[("a b", "a x"), ("a b", "a b")]);
        let empty = PhraseTable::new(7, Provenance::Monolingual, DEFAULT_SIGMA);
        assert_eq!(t.merge_counts(&empty).unwrap(), t);
        let d = t.merge_counts(&t).unwrap();
        for (a, b) in t.entries().zip(d.entries()) {
            assert_eq!(b.joint_count, 2 * a.joint_count);
            assert_eq!(b.src_count, 2 * a.src_count);
            assert_eq!(a.p_tgt_given_src, b.p_tgt_given_src);
        }
        let u = diag_table(&[("q", "r")]);
        let m = t.merge_counts(&u).unwrap();
        assert_eq!(m.len(), t.len() + u.len());
        assert!(t.merge_counts(&PhraseTable::new(3, Provenance::Monolingual, 0.5)).is_err());
    }

    #[test]
    fn text_round_trip() {
        let t = diag_table(&[("a b c", "a x c"), ("a b", "a b")]);
        let back = PhraseTable::from_text(&t.to_text()).unwrap();
        assert_eq!(back.len(), t.len());
        assert_eq!(back.to_text(), t.to_text());
        let e = back.get(&s("b"), &s("x")).unwrap();
        assert_eq!(e.p_tgt_given_src, 0.5);
        assert!(PhraseTable::from_text("a ||| b ||| 1 2").is_err());
    }

    #[test]
    fn float_format() {
        assert_eq!(format_float(0.5), "0.5");
        assert_eq!(format_float(1.0 / 3.0), "0.333333");
        assert_eq!(format_float(std::f64::consts::E), "2.71828");
        assert_eq!(format_float(0.000123456789), "0.000123457");
        assert_eq!(format_float(0.0), "0");
        assert_eq!(format_float(1234567.0), "1234567");
    }

    fn alignment_strategy() -> impl Strategy<Value = (usize, usize, WordAlignment)> {
        (1usize..=8, 1usize..=8).prop_flat_map(|(n, m)| {
            prop::collection::btree_set((0..n, 0..m), 0..=n * m / 2)
                .prop_map(move |links| (n, m, WordAlignment::from_links(links)))
        })
    }

    proptest! {
        #[test]
        fn extraction_matches_brute_force((n, m, al) in alignment_strategy(), max_len in 1usize..=8) {
            let got = extract_phrases(n, m, &al, max_len);
            let set = spans(&got);
            prop_assert_eq!(set.len(), got.len());
            prop_assert_eq!(set, brute_force(n, m, &al, max_len));
        }

        #[test]
        fn prune_is_monotone(values in prop::collection::vec(0.0f64..=1.0, 1..10), t1 in 0.0f64..=1.0, t2 in 0.0f64..=1.0) {
            let t = with_neg(&diag_table(&[("a b c d", "a x c y")]), &values);
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let a = t.prune(lo).unwrap();
            let b = t.prune(hi).unwrap();
            prop_assert!(a.entries().all(|e| b.get(&e.src, &e.tgt).is_some()));
        }
    }
}
