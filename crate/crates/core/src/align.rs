//! Word alignment.
//!
//! IBM Model 1 is trained with EM and decoded per target word; two
//! directional alignments are combined with intersection, union or
//! grow-diag-final-and. Monolingual `(mt, pe)` pairs are aligned with a
//! Levenshtein backtrace instead.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use rayon::prelude::*;

use crate::corpus::Sentence;
use crate::edit::{self, EditOp};
use crate::error::{ApeError, Result};

/// Source-side token standing for "aligned to nothing".
pub const NULL_TOKEN: &str = "<null>";
/// Probability assigned to word pairs the lexicon has never seen.
pub const UNKNOWN_FLOOR: f64 = 1e-9;

/// A set of `(src_index, tgt_index)` links.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct WordAlignment {
    links: BTreeSet<(usize, usize)>,
}

impl WordAlignment {
    pub fn from_links(links: impl IntoIterator<Item = (usize, usize)>) -> Self {
        WordAlignment {
            links: links.into_iter().collect(),
        }
    }

    pub fn links(&self) -> impl Iterator<Item = &(usize, usize)> + '_ {
        self.links.iter()
    }

    pub fn contains(&self, src: usize, tgt: usize) -> bool {
        self.links.contains(&(src, tgt))
    }

    pub fn insert(&mut self, src: usize, tgt: usize) -> bool {
        self.links.insert((src, tgt))
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    /// Swaps source and target roles.
    pub fn transposed(&self) -> Self {
        WordAlignment::from_links(self.links.iter().map(|&(s, t)| (t, s)))
    }

    pub fn intersection(&self, other: &Self) -> Self {
        WordAlignment {
            links: self.links.intersection(&other.links).copied().collect(),
        }
    }

    pub fn union(&self, other: &Self) -> Self {
        WordAlignment {
            links: self.links.union(&other.links).copied().collect(),
        }
    }

    pub fn is_subset(&self, other: &Self) -> bool {
        self.links.is_subset(&other.links)
    }

    pub fn check_bounds(&self, src_len: usize, tgt_len: usize) -> Result<()> {
        match self.links.iter().find(|&&(s, t)| s >= src_len || t >= tgt_len) {
            Some(&(src, tgt)) => Err(ApeError::LinkOutOfBounds {
                src,
                tgt,
                src_len,
                tgt_len,
            }),
            None => Ok(()),
        }
    }

    /// Parses Pharaoh `i-j` pairs separated by spaces.
    pub fn parse_pharaoh(line: &str) -> Result<Self> {
        line.split_whitespace()
            .map(|pair| {
                let (s, t) = pair
                    .split_once('-')
                    .ok_or_else(|| ApeError::InvalidArgument(format!("bad link {pair:?}")))?;
                let parse = |x: &str| {
                    x.parse::<usize>()
                        .map_err(|_| ApeError::InvalidArgument(format!("bad link {pair:?}")))
                };
                Ok((parse(s)?, parse(t)?))
            })
            .collect::<Result<BTreeSet<_>>>()
            .map(|links| WordAlignment { links })
    }
}

impl fmt::Display for WordAlignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (s, t) in &self.links {
            if !first {
                f.write_str(" ")?;
            }
            write!(f, "{s}-{t}")?;
            first = false;
        }
        Ok(())
    }
}

/// Lexical translation table `t(tgt | src)`.
#[derive(Clone, Debug)]
pub struct LexiconModel {
    src_vocab: HashMap<String, u32>,
    tgt_vocab: HashMap<String, u32>,
    /// Target ids co-occurring with each source id, sorted.
    cooc: Vec<Vec<u32>>,
    t: HashMap<(u32, u32), f64>,
    /// Normalization constant in the sentence likelihood. Posteriors do not
    /// depend on it.
    pub epsilon: f64,
}

fn intern(vocab: &mut HashMap<String, u32>, w: &str) -> u32 {
    if let Some(&id) = vocab.get(w) {
        return id;
    }
    let id = vocab.len() as u32;
    vocab.insert(w.to_owned(), id);
    id
}

impl LexiconModel {
    fn empty() -> Self {
        LexiconModel {
            src_vocab: HashMap::new(),
            tgt_vocab: HashMap::new(),
            cooc: Vec::new(),
            t: HashMap::new(),
            epsilon: 1.0,
        }
    }

    /// Model 1 before any EM iteration: `t(e|f) = 1/|V_e|` for every
    /// co-occurring pair.
    pub fn ibm1_init(pairs: &[(Sentence, Sentence)]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(ApeError::EmptyCorpus);
        }
        let mut m = LexiconModel::empty();
        let mut cooc: Vec<BTreeSet<u32>> = Vec::new();
        for (f, e) in pairs {
            if f.is_empty() || e.is_empty() {
                return Err(ApeError::InvalidArgument("empty sentence in alignment corpus".into()));
            }
            let es: Vec<u32> = e.iter().map(|w| intern(&mut m.tgt_vocab, w)).collect();
            for w in f.iter() {
                let fid = intern(&mut m.src_vocab, w) as usize;
                if cooc.len() <= fid {
                    cooc.resize_with(fid + 1, BTreeSet::new);
                }
                cooc[fid].extend(es.iter().copied());
            }
        }
        let uniform = 1.0 / m.tgt_vocab.len() as f64;
        m.cooc = cooc.into_iter().map(|s| s.into_iter().collect()).collect();
        for (f, es) in m.cooc.iter().enumerate() {
            for &e in es {
                m.t.insert((f as u32, e), uniform);
            }
        }
        Ok(m)
    }

    /// Trains IBM Model 1 without a NULL source word.
    pub fn ibm1_train(pairs: &[(Sentence, Sentence)], iterations: usize) -> Result<Self> {
        if iterations == 0 {
            return Err(ApeError::InvalidArgument("iterations must be at least 1".into()));
        }
        let mut m = LexiconModel::ibm1_init(pairs)?;
        for _ in 0..iterations {
            m.em_step(pairs);
        }
        Ok(m)
    }

    /// One E-step over `pairs` followed by renormalization.
    pub fn em_step(&mut self, pairs: &[(Sentence, Sentence)]) {
        const CHUNK: usize = 256;
        let ids: Vec<(Vec<u32>, Vec<u32>)> = pairs
            .iter()
            .map(|(f, e)| {
                (
                    f.iter().map(|w| self.src_vocab[w.as_str()]).collect(),
                    e.iter().map(|w| self.tgt_vocab[w.as_str()]).collect(),
                )
            })
            .collect();
        let t = &self.t;
        let partial: Vec<HashMap<(u32, u32), f64>> = ids
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut counts: HashMap<(u32, u32), f64> = HashMap::new();
                for (fs, es) in chunk {
                    for &e in es {
                        let denom: f64 = fs.iter().map(|&f| t[&(f, e)]).sum();
                        for &f in fs {
                            *counts.entry((f, e)).or_default() += t[&(f, e)] / denom;
                        }
                    }
                }
                counts
            })
            .collect();
        // Chunk maps are merged in chunk order so every key's sum has a fixed
        // association order.
        let mut counts: HashMap<(u32, u32), f64> = HashMap::new();
        for part in partial {
            for (k, v) in part {
                *counts.entry(k).or_default() += v;
            }
        }
        for (f, es) in self.cooc.iter().enumerate() {
            let f = f as u32;
            let total: f64 = es.iter().map(|&e| counts.get(&(f, e)).copied().unwrap_or(0.0)).sum();
            if total <= 0.0 {
                continue;
            }
            for &e in es {
                let c = counts.get(&(f, e)).copied().unwrap_or(0.0);
                self.t.insert((f, e), c / total);
            }
        }
    }

    /// Lexicon from counts of aligned word pairs; unaligned target words are
    /// counted against [`NULL_TOKEN`]. Alignments are `(src_index, tgt_index)`.
    pub fn from_alignments(pairs: &[(&[String], &[String], &WordAlignment)]) -> Self {
        let mut counts: HashMap<(String, String), f64> = HashMap::new();
        for (src, tgt, al) in pairs {
            let mut tgt_aligned = vec![false; tgt.len()];
            for &(s, t) in al.links() {
                tgt_aligned[t] = true;
                *counts.entry((src[s].clone(), tgt[t].clone())).or_default() += 1.0;
            }
            for (t, _) in tgt_aligned.iter().enumerate().filter(|(_, a)| !**a) {
                *counts
                    .entry((NULL_TOKEN.to_owned(), tgt[t].clone()))
                    .or_default() += 1.0;
            }
        }
        LexiconModel::from_counts(counts)
    }

    /// Normalizes joint `(src, tgt)` counts into `t(tgt|src)`.
    pub fn from_counts(counts: HashMap<(String, String), f64>) -> Self {
        let mut keys: Vec<_> = counts.keys().cloned().collect();
        keys.sort();
        let mut m = LexiconModel::empty();
        let mut cooc: Vec<Vec<u32>> = Vec::new();
        let mut totals: Vec<f64> = Vec::new();
        for (s, t) in &keys {
            let f = intern(&mut m.src_vocab, s) as usize;
            let e = intern(&mut m.tgt_vocab, t);
            if cooc.len() <= f {
                cooc.resize_with(f + 1, Vec::new);
                totals.resize(f + 1, 0.0);
            }
            cooc[f].push(e);
            totals[f] += counts[&(s.clone(), t.clone())];
        }
        for (s, t) in &keys {
            let f = m.src_vocab[s];
            let e = m.tgt_vocab[t];
            m.t.insert((f, e), counts[&(s.clone(), t.clone())] / totals[f as usize]);
        }
        for es in &mut cooc {
            es.sort_unstable();
        }
        m.cooc = cooc;
        m
    }

    /// `t(tgt|src)`, or 0 when the pair was never seen.
    pub fn prob(&self, src: &str, tgt: &str) -> f64 {
        match (self.src_vocab.get(src), self.tgt_vocab.get(tgt)) {
            (Some(&f), Some(&e)) => self.t.get(&(f, e)).copied().unwrap_or(0.0),
            _ => 0.0,
        }
    }

    pub fn src_vocab_size(&self) -> usize {
        self.src_vocab.len()
    }

    pub fn tgt_vocab_size(&self) -> usize {
        self.tgt_vocab.len()
    }

    /// `Σ_e t(e|src)` over stored entries.
    pub fn row_sum(&self, src: &str) -> f64 {
        match self.src_vocab.get(src) {
            Some(&f) => self.cooc[f as usize].iter().map(|&e| self.t[&(f, e)]).sum(),
            None => 0.0,
        }
    }

    pub fn src_words(&self) -> impl Iterator<Item = &str> {
        self.src_vocab.keys().map(String::as_str)
    }

    /// `log p(e|f)` summed over pairs, with uniform alignment prior `1/l_f`.
    pub fn log_likelihood(&self, pairs: &[(Sentence, Sentence)]) -> f64 {
        pairs
            .iter()
            .map(|(f, e)| {
                let mut ll = self.epsilon.ln() - e.len() as f64 * (f.len() as f64).ln();
                for w in e.iter() {
                    let s: f64 = f.iter().map(|v| self.prob(v, w)).sum();
                    ll += s.max(f64::MIN_POSITIVE).ln();
                }
                ll
            })
            .sum()
    }

    /// Writes `src tgt prob` lines, sorted.
    pub fn to_text(&self) -> String {
        let src_names = invert(&self.src_vocab);
        let tgt_names = invert(&self.tgt_vocab);
        let mut rows: Vec<(&str, &str, f64)> = self
            .t
            .iter()
            .map(|(&(f, e), &p)| (src_names[f as usize], tgt_names[e as usize], p))
            .collect();
        rows.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut out = String::new();
        for (s, t, p) in rows {
            out.push_str(&format!("{s} {t} {p:e}\n"));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut counts = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.is_empty() {
                continue;
            }
            let p = match parts.as_slice() {
                [_, _, p] => p.parse::<f64>().ok(),
                _ => None,
            }
            .ok_or_else(|| ApeError::parse("<lexicon>", i + 1, "expected `src tgt prob`"))?;
            counts.insert((parts[0].to_owned(), parts[1].to_owned()), p);
        }
        Ok(LexiconModel::from_counts(counts))
    }
}

fn invert(vocab: &HashMap<String, u32>) -> Vec<&str> {
    let mut names = vec![""; vocab.len()];
    for (w, &id) in vocab {
        names[id as usize] = w;
    }
    names
}

/// Links every target word to its most probable source word; ties go to the
/// smallest source index and unseen pairs score [`UNKNOWN_FLOOR`].
pub fn viterbi_align(model: &LexiconModel, f: &[String], e: &[String]) -> WordAlignment {
    let mut al = WordAlignment::default();
    if f.is_empty() {
        return al;
    }
    for (j, ew) in e.iter().enumerate() {
        let mut best = (0usize, f64::NEG_INFINITY);
        for (i, fw) in f.iter().enumerate() {
            let p = model.prob(fw, ew).max(UNKNOWN_FLOOR);
            if p > best.1 {
                best = (i, p);
            }
        }
        al.insert(best.0, j);
    }
    al
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Symmetrization {
    Intersection,
    Union,
    GrowDiagFinalAnd,
}

impl std::str::FromStr for Symmetrization {
    type Err = ApeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "intersection" => Ok(Symmetrization::Intersection),
            "union" => Ok(Symmetrization::Union),
            "grow-diag-final-and" => Ok(Symmetrization::GrowDiagFinalAnd),
            _ => Err(ApeError::InvalidArgument(format!("unknown heuristic {s:?}"))),
        }
    }
}

/// Combines two directional alignments, both given as `(src, tgt)` links over
/// a `src_len x tgt_len` sentence pair.
pub fn symmetrize(
    fwd: &WordAlignment,
    rev: &WordAlignment,
    heuristic: Symmetrization,
    src_len: usize,
    tgt_len: usize,
) -> WordAlignment {
    match heuristic {
        Symmetrization::Intersection => fwd.intersection(rev),
        Symmetrization::Union => fwd.union(rev),
        Symmetrization::GrowDiagFinalAnd => grow_diag_final_and(fwd, rev, src_len, tgt_len),
    }
}

fn grow_diag_final_and(
    fwd: &WordAlignment,
    rev: &WordAlignment,
    src_len: usize,
    tgt_len: usize,
) -> WordAlignment {
    const NEIGHBORS: [(isize, isize); 8] = [
        (-1, 0),
        (0, -1),
        (1, 0),
        (0, 1),
        (-1, -1),
        (-1, 1),
        (1, -1),
        (1, 1),
    ];
    let union = fwd.union(rev);
    let mut al = fwd.intersection(rev);
    let mut src_aligned = vec![false; src_len];
    let mut tgt_aligned = vec![false; tgt_len];
    for &(s, t) in al.links() {
        src_aligned[s] = true;
        tgt_aligned[t] = true;
    }
    loop {
        let mut added = false;
        for t in 0..tgt_len {
            for s in 0..src_len {
                if !al.contains(s, t) {
                    continue;
                }
                for (ds, dt) in NEIGHBORS {
                    let (ns, nt) = (s as isize + ds, t as isize + dt);
                    if ns < 0 || nt < 0 || ns >= src_len as isize || nt >= tgt_len as isize {
                        continue;
                    }
                    let (ns, nt) = (ns as usize, nt as usize);
                    if (!src_aligned[ns] || !tgt_aligned[nt])
                        && union.contains(ns, nt)
                        && al.insert(ns, nt)
                    {
                        src_aligned[ns] = true;
                        tgt_aligned[nt] = true;
                        added = true;
                    }
                }
            }
        }
        if !added {
            break;
        }
    }
    for directional in [fwd, rev] {
        for t in 0..tgt_len {
            for s in 0..src_len {
                if directional.contains(s, t) && !src_aligned[s] && !tgt_aligned[t] {
                    al.insert(s, t);
                    src_aligned[s] = true;
                    tgt_aligned[t] = true;
                }
            }
        }
    }
    al
}

/// Per-token outcome of a monolingual alignment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AlignOp {
    Match(usize, usize),
    Substitution(usize, usize),
    /// `mt[i]` is dropped.
    Deletion(usize),
    /// `pe[j]` is added.
    Insertion(usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MonolingualAlignment {
    /// `(mt_index, pe_index)` links for matches and substitutions.
    pub alignment: WordAlignment,
    /// Edit path in sentence order.
    pub ops: Vec<AlignOp>,
}

/// Word-level edit-distance alignment of an mt sentence with its post-edit.
pub fn levenshtein_align(mt: &[String], pe: &[String]) -> MonolingualAlignment {
    let (_, path) = edit::path(mt, pe);
    let ops: Vec<AlignOp> = path
        .into_iter()
        .map(|op| match op {
            EditOp::Match(i, j) => AlignOp::Match(i, j),
            EditOp::Substitute(i, j) => AlignOp::Substitution(i, j),
            EditOp::Delete(i) => AlignOp::Deletion(i),
            EditOp::Insert(j) => AlignOp::Insertion(j),
        })
        .collect();
    let alignment = WordAlignment::from_links(ops.iter().filter_map(|op| match *op {
        AlignOp::Match(i, j) | AlignOp::Substitution(i, j) => Some((i, j)),
        _ => None,
    }));
    MonolingualAlignment { alignment, ops }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pair(f: &str, e: &str) -> (Sentence, Sentence) {
        (Sentence::parse(f), Sentence::parse(e))
    }

    #[test]
    fn uniform_before_iterations() {
        let pairs = vec![pair("das Haus", "the house"), pair("das Buch", "the book")];
        let m = LexiconModel::ibm1_init(&pairs).unwrap();
        assert_eq!(m.prob("das", "the"), 1.0 / 3.0);
        assert_eq!(m.prob("Haus", "house"), 1.0 / 3.0);
    }

    #[test]
    fn one_em_iteration_by_hand() {
        // Uniform 1/3; each target word splits its count evenly over the two
        // source words, so das collects the:1, house:1/2, book:1/2.
        let pairs = vec![pair("das Haus", "the house"), pair("das Buch", "the book")];
        let m = LexiconModel::ibm1_train(&pairs, 1).unwrap();
        assert_eq!(m.prob("das", "the"), 0.5);
        assert_eq!(m.prob("das", "house"), 0.25);
        assert_eq!(m.prob("Haus", "the"), 0.5);
        assert_eq!(m.prob("Haus", "house"), 0.5);
    }

    #[test]
    fn single_pair_single_link() {
        let m = LexiconModel::ibm1_train(&[pair("a", "x")], 1).unwrap();
        assert_eq!(m.prob("a", "x"), 1.0);
    }

    #[test]
    fn training_errors() {
        assert!(matches!(LexiconModel::ibm1_train(&[], 5), Err(ApeError::EmptyCorpus)));
        assert!(LexiconModel::ibm1_train(&[pair("a", "x")], 0).is_err());
    }

    fn random_corpus(rng: &mut ChaCha8Rng) -> Vec<(Sentence, Sentence)> {
        let n = rng.gen_range(1..6);
        (0..n)
            .map(|_| {
                let lf = rng.gen_range(1..5);
                let le = rng.gen_range(1..5);
                let f: Vec<String> = (0..lf).map(|_| format!("f{}", rng.gen_range(0..4))).collect();
                let e: Vec<String> = (0..le).map(|_| format!("e{}", rng.gen_range(0..4))).collect();
                (Sentence::new(f).unwrap(), Sentence::new(e).unwrap())
            })
            .collect()
    }

    #[test]
    fn em_likelihood_is_monotone_and_rows_normalize() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let pairs = random_corpus(&mut rng);
            let mut m = LexiconModel::ibm1_init(&pairs).unwrap();
            let mut prev = m.log_likelihood(&pairs);
            for _ in 0..10 {
                m.em_step(&pairs);
                let ll = m.log_likelihood(&pairs);
                assert!(ll >= prev - 1e-9, "{ll} < {prev}");
                prev = ll;
                let words: Vec<String> = m.src_words().map(str::to_owned).collect();
                for f in words {
                    assert!((m.row_sum(&f) - 1.0).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn viterbi_examples() {
        let mut counts = HashMap::new();
        counts.insert(("a".to_string(), "x".to_string()), 9.0);
        counts.insert(("a".to_string(), "y".to_string()), 1.0);
        counts.insert(("b".to_string(), "x".to_string()), 1.0);
        counts.insert(("b".to_string(), "y".to_string()), 9.0);
        let m = LexiconModel::from_counts(counts);
        let f = Sentence::parse("a b");
        assert_eq!(viterbi_align(&m, &f, &Sentence::parse("x")), WordAlignment::from_links([(0, 0)]));
        assert_eq!(viterbi_align(&m, &f, &Sentence::parse("zzz")), WordAlignment::from_links([(0, 0)]));

        // 2x2: enumerate all four link assignments and keep the best product.
        let e = Sentence::parse("y x");
        let mut best = (f64::MIN, (0, 0));
        for a0 in 0..2 {
            for a1 in 0..2 {
                let p = m.prob(&f[a0], &e[0]) * m.prob(&f[a1], &e[1]);
                if p > best.0 {
                    best = (p, (a0, a1));
                }
            }
        }
        let expected = WordAlignment::from_links([(best.1 .0, 0), (best.1 .1, 1)]);
        assert_eq!(viterbi_align(&m, &f, &e), expected);
        assert_eq!(expected, WordAlignment::from_links([(1, 0), (0, 1)]));
    }

    #[test]
    fn symmetrize_trivial_cases() {
        let a = WordAlignment::from_links([(0, 0), (1, 2), (2, 1)]);
        for h in [Symmetrization::Intersection, Symmetrization::Union, Symmetrization::GrowDiagFinalAnd] {
            assert_eq!(symmetrize(&a, &a, h, 3, 3), a);
        }
        let b = WordAlignment::from_links([(0, 1)]);
        let c = WordAlignment::from_links([(1, 0)]);
        assert!(symmetrize(&b, &c, Symmetrization::Intersection, 2, 2).is_empty());
    }

    #[test]
    fn grow_diag_final_and_hand_trace() {
        // fwd = {(0,0),(1,1),(2,1)}, rev = {(0,0),(1,1),(1,2),(2,2)}
        // intersection {(0,0),(1,1)}; union adds (2,1),(1,2),(2,2).
        // Grow, scanning target-major: from (1,1) the neighbour (2,1) is in
        // the union with src 2 unaligned -> added; then (1,2) with tgt 2
        // unaligned -> added. (2,2) has both words aligned by then -> skipped.
        // Final-and adds nothing since every word is covered.
        let fwd = WordAlignment::from_links([(0, 0), (1, 1), (2, 1)]);
        let rev = WordAlignment::from_links([(0, 0), (1, 1), (1, 2), (2, 2)]);
        let got = symmetrize(&fwd, &rev, Symmetrization::GrowDiagFinalAnd, 3, 3);
        assert_eq!(got, WordAlignment::from_links([(0, 0), (1, 1), (2, 1), (1, 2)]));

        // A union-only link with no aligned neighbour arrives in final-and.
        let fwd = WordAlignment::from_links([(0, 0), (2, 2)]);
        let rev = WordAlignment::from_links([(0, 0)]);
        let got = symmetrize(&fwd, &rev, Symmetrization::GrowDiagFinalAnd, 3, 3);
        assert_eq!(got, WordAlignment::from_links([(0, 0), (2, 2)]));
    }

    #[test]
    fn levenshtein_examples() {
        let s = |x: &str| Sentence::parse(x);
        let a = levenshtein_align(&s("a b c"), &s("a x c"));
        assert_eq!(a.alignment, WordAlignment::from_links([(0, 0), (1, 1), (2, 2)]));
        assert_eq!(a.ops[1], AlignOp::Substitution(1, 1));

        let a = levenshtein_align(&s("a b"), &s("a b"));
        assert!(a.ops.iter().all(|o| matches!(o, AlignOp::Match(..))));

        let a = levenshtein_align(&s("a c"), &s("a b c"));
        assert_eq!(a.alignment, WordAlignment::from_links([(0, 0), (1, 2)]));
        assert!(a.ops.contains(&AlignOp::Insertion(1)));
    }

    #[test]
    fn pharaoh_round_trip() {
        let a = WordAlignment::from_links([(0, 1), (2, 0)]);
        assert_eq!(a.to_string(), "0-1 2-0");
        assert_eq!(WordAlignment::parse_pharaoh("0-1 2-0").unwrap(), a);
        assert!(WordAlignment::parse_pharaoh("0:1").is_err());
    }

    proptest! {
        #[test]
        fn gdfa_between_intersection_and_union(
            f in prop::collection::btree_set((0usize..5, 0usize..5), 0..10),
            r in prop::collection::btree_set((0usize..5, 0usize..5), 0..10),
        ) {
            let fwd = WordAlignment::from_links(f);
            let rev = WordAlignment::from_links(r);
            let g = symmetrize(&fwd, &rev, Symmetrization::GrowDiagFinalAnd, 5, 5);
            prop_assert!(fwd.intersection(&rev).is_subset(&g));
            prop_assert!(g.is_subset(&fwd.union(&rev)));
        }

        #[test]
        fn levenshtein_links_consistent(
            mt in prop::collection::vec(prop::sample::select(vec!["a", "b", "c"]), 0..8),
            pe in prop::collection::vec(prop::sample::select(vec!["a", "b", "c"]), 0..8),
        ) {
            let mt: Vec<String> = mt.into_iter().map(String::from).collect();
            let pe: Vec<String> = pe.into_iter().map(String::from).collect();
            let a = levenshtein_align(&mt, &pe);
            let deletions = a.ops.iter().filter(|o| matches!(o, AlignOp::Deletion(_))).count();
            let insertions = a.ops.iter().filter(|o| matches!(o, AlignOp::Insertion(_))).count();
            prop_assert_eq!(a.alignment.len(), mt.len() - deletions);
            prop_assert_eq!(a.alignment.len(), pe.len() - insertions);
            for &(i, j) in a.alignment.links() {
                let is_match = a.ops.contains(&AlignOp::Match(i, j));
                prop_assert_eq!(is_match, mt[i] == pe[j]);
            }
        }
    }
}
