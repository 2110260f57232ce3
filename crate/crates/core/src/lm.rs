//! N-gram language models with add-one or interpolated Kneser-Ney smoothing.
//!
//! Counts are kept for every order up to `n` together with the continuation
//! statistics Kneser-Ney needs, and all of them can be updated one sentence at
//! a time. Sentences are padded with `n - 1` start markers and one end marker
//! unless boundaries are switched off.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::str::FromStr;

use rustc_hash::FxHashMap;

use crate::error::{ApeError, Result};

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";

const BOS_ID: u32 = 0;
const EOS_ID: u32 = 1;
const UNK_ID: u32 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Smoothing {
    Add1,
    KneserNey,
}

impl FromStr for Smoothing {
    type Err = ApeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "add1" | "add-1" => Ok(Smoothing::Add1),
            "kneser-ney" | "kn" => Ok(Smoothing::KneserNey),
            _ => Err(ApeError::InvalidArgument(format!("unknown smoothing {s:?}"))),
        }
    }
}

impl Smoothing {
    pub fn name(self) -> &'static str {
        match self {
            Smoothing::Add1 => "add1",
            Smoothing::KneserNey => "kneser-ney",
        }
    }
}

/// Sum and number of distinct successors for one context.
#[derive(Clone, Copy, Debug, Default)]
struct Mass {
    sum: u64,
    types: u64,
}

/// Statistics for the k-grams of one order.
#[derive(Clone, Debug, Default)]
struct Order {
    raw: FxHashMap<Vec<u32>, u64>,
    raw_ctx: FxHashMap<Vec<u32>, Mass>,
    /// `N1+(· g)`: distinct left extensions of `g` seen one order up.
    cont: FxHashMap<Vec<u32>, u64>,
    cont_ctx: FxHashMap<Vec<u32>, Mass>,
}

#[derive(Clone, Debug)]
pub struct NGramLM {
    order: usize,
    smoothing: Smoothing,
    discount: f64,
    boundaries: bool,
    vocab: FxHashMap<String, u32>,
    words: Vec<String>,
    orders: Vec<Order>,
}

impl NGramLM {
    /// Trains with sentence-boundary padding.
    pub fn train<S: AsRef<[String]>>(corpus: &[S], order: usize, smoothing: Smoothing) -> Result<Self> {
        NGramLM::train_with(corpus, order, smoothing, true)
    }

    pub fn train_with<S: AsRef<[String]>>(
        corpus: &[S],
        order: usize,
        smoothing: Smoothing,
        boundaries: bool,
    ) -> Result<Self> {
        if corpus.is_empty() {
            return Err(ApeError::EmptyCorpus);
        }
        let mut lm = NGramLM::empty(order, smoothing, boundaries)?;
        for s in corpus {
            lm.add_counts(s.as_ref());
        }
        lm.discount = lm.estimate_discount();
        Ok(lm)
    }

    pub fn empty(order: usize, smoothing: Smoothing, boundaries: bool) -> Result<Self> {
        if order == 0 {
            return Err(ApeError::InvalidArgument("LM order must be at least 1".into()));
        }
        let mut lm = NGramLM {
            order,
            smoothing,
            discount: 0.5,
            boundaries,
            vocab: FxHashMap::default(),
            words: Vec::new(),
            orders: vec![Order::default(); order + 1],
        };
        for w in [BOS, EOS, UNK] {
            lm.intern(w);
        }
        Ok(lm)
    }

    /// Adds one sentence's counts. The discount is left as it was.
    pub fn update(&mut self, sentence: &[String]) {
        self.add_counts(sentence);
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn smoothing(&self) -> Smoothing {
        self.smoothing
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn boundaries(&self) -> bool {
        self.boundaries
    }

    fn intern(&mut self, w: &str) -> u32 {
        if let Some(&id) = self.vocab.get(w) {
            return id;
        }
        let id = self.words.len() as u32;
        self.vocab.insert(w.to_owned(), id);
        self.words.push(w.to_owned());
        id
    }

    /// Id of `w`, or of the unknown token.
    pub fn id(&self, w: &str) -> u32 {
        self.vocab.get(w).copied().unwrap_or(UNK_ID)
    }

    pub fn bos_id(&self) -> u32 {
        BOS_ID
    }

    pub fn eos_id(&self) -> u32 {
        EOS_ID
    }

    /// Words that can be predicted: the vocabulary without `<s>`, with the
    /// unknown token.
    pub fn vocabulary(&self) -> Vec<&str> {
        self.words[1..].iter().map(String::as_str).collect()
    }

    fn vocab_size(&self) -> u64 {
        (self.words.len() - 1) as u64
    }

    fn padded(&mut self, sentence: &[String]) -> Vec<u32> {
        let mut ids = Vec::with_capacity(sentence.len() + self.order);
        if self.boundaries {
            ids.extend(std::iter::repeat_n(BOS_ID, self.order - 1));
        }
        for w in sentence {
            let id = self.intern(w);
            ids.push(id);
        }
        if self.boundaries {
            ids.push(EOS_ID);
        }
        ids
    }

    fn add_counts(&mut self, sentence: &[String]) {
        let ids = self.padded(sentence);
        let start = if self.boundaries { self.order - 1 } else { 0 };
        for i in start..ids.len() {
            for k in 1..=self.order.min(i + 1) {
                self.add_gram(&ids[i + 1 - k..=i]);
            }
        }
    }

    fn add_gram(&mut self, g: &[u32]) {
        let k = g.len();
        let ord = &mut self.orders[k];
        let c = ord.raw.entry(g.to_vec()).or_insert(0);
        *c += 1;
        let new_type = *c == 1;
        let m = ord.raw_ctx.entry(g[..k - 1].to_vec()).or_default();
        m.sum += 1;
        if new_type {
            m.types += 1;
        }
        if k >= 2 && new_type {
            let lower = &mut self.orders[k - 1];
            let suffix = &g[1..];
            let c = lower.cont.entry(suffix.to_vec()).or_insert(0);
            *c += 1;
            let m = lower.cont_ctx.entry(suffix[..k - 2].to_vec()).or_default();
            m.sum += 1;
            if *c == 1 {
                m.types += 1;
            }
        }
    }

    /// `D = n1 / (n1 + 2 n2)` from bigram count-of-counts (unigram counts for
    /// order 1). Falls back to 0.5 when the ratio leaves `(0, 1)`; at `D = 1`
    /// every singleton count would be discarded.
    fn estimate_discount(&self) -> f64 {
        let k = self.order.min(2);
        let (mut n1, mut n2) = (0u64, 0u64);
        for &c in self.orders[k].raw.values() {
            match c {
                1 => n1 += 1,
                2 => n2 += 1,
                _ => {}
            }
        }
        let d = n1 as f64 / (n1 + 2 * n2) as f64;
        if d > 0.0 && d < 1.0 {
            d
        } else {
            0.5
        }
    }

    /// `p(w | ctx)` where `ctx` holds the preceding ids, most recent last.
    /// Only the last `n - 1` are used; a shorter context is scored with the
    /// corresponding lower-order distribution.
    pub fn prob_ids(&self, ctx: &[u32], w: u32) -> f64 {
        let ctx = &ctx[ctx.len().saturating_sub(self.order - 1)..];
        match self.smoothing {
            Smoothing::Add1 => {
                let k = ctx.len() + 1;
                let ord = &self.orders[k];
                let mut g = Vec::with_capacity(k);
                g.extend_from_slice(ctx);
                g.push(w);
                let c = ord.raw.get(&g).copied().unwrap_or(0);
                let total = ord.raw_ctx.get(ctx).map_or(0, |m| m.sum);
                (c + 1) as f64 / (total + self.vocab_size()) as f64
            }
            Smoothing::KneserNey => {
                let mut g = Vec::with_capacity(ctx.len() + 1);
                g.extend_from_slice(ctx);
                g.push(w);
                self.kn(&g, ctx.len() + 1 == self.order)
            }
        }
    }

    /// Interpolated Kneser-Ney for the last word of `g` given the rest.
    fn kn(&self, g: &[u32], top: bool) -> f64 {
        let k = g.len();
        let lower = if k == 1 {
            1.0 / self.vocab_size() as f64
        } else {
            self.kn(&g[1..], false)
        };
        let ord = &self.orders[k];
        let (counts, ctxs) = if top {
            (&ord.raw, &ord.raw_ctx)
        } else {
            (&ord.cont, &ord.cont_ctx)
        };
        let mass = match ctxs.get(&g[..k - 1]) {
            Some(m) if m.sum > 0 => *m,
            _ => return lower,
        };
        let c = counts.get(g).copied().unwrap_or(0) as f64;
        let d = self.discount;
        let sum = mass.sum as f64;
        (c - d).max(0.0) / sum + d * mass.types as f64 / sum * lower
    }

    pub fn log10_prob_ids(&self, ctx: &[u32], w: u32) -> f64 {
        self.prob_ids(ctx, w).log10()
    }

    /// `p(w | ctx)` on strings; unknown words map to the unknown token.
    pub fn prob(&self, ctx: &[&str], w: &str) -> f64 {
        let ctx: Vec<u32> = ctx.iter().map(|c| self.id(c)).collect();
        self.prob_ids(&ctx, self.id(w))
    }

    /// Raw continuation probability `N1+(· w) / N1+(· ·)`.
    pub fn continuation_prob(&self, w: &str) -> f64 {
        if self.order < 2 {
            return 0.0;
        }
        let ord = &self.orders[1];
        let total = ord.cont_ctx.get(&[][..]).map_or(0, |m| m.sum);
        if total == 0 {
            return 0.0;
        }
        ord.cont.get(&[self.id(w)][..]).copied().unwrap_or(0) as f64 / total as f64
    }

    /// Log10 probability of a whole sentence.
    pub fn score(&self, sentence: &[String]) -> f64 {
        let mut ctx: Vec<u32> = if self.boundaries {
            vec![BOS_ID; self.order - 1]
        } else {
            Vec::new()
        };
        let mut total = 0.0;
        for w in sentence {
            let id = self.id(w);
            total += self.log10_prob_ids(&ctx, id);
            ctx.push(id);
        }
        if self.boundaries {
            total += self.log10_prob_ids(&ctx, EOS_ID);
        }
        total
    }

    /// Raw count of a k-gram, `k <= n`.
    pub fn count(&self, gram: &[&str]) -> u64 {
        if gram.is_empty() || gram.len() > self.order {
            return 0;
        }
        let ids: Vec<u32> = gram.iter().map(|w| self.id(w)).collect();
        self.orders[ids.len()].raw.get(&ids).copied().unwrap_or(0)
    }

    /// Every context observed before some word at the highest order.
    pub fn observed_contexts(&self) -> Vec<Vec<String>> {
        let mut out: Vec<Vec<String>> = self.orders[self.order]
            .raw_ctx
            .keys()
            .map(|h| h.iter().map(|&i| self.words[i as usize].clone()).collect())
            .collect();
        out.sort();
        out
    }

    /// Text form: a header line, the vocabulary, then `k-gram<TAB>count<TAB>log10 p`
    /// for every order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "\\lm order={} smoothing={} discount={} boundaries={}",
            self.order,
            self.smoothing.name(),
            self.discount,
            self.boundaries
        );
        let _ = writeln!(out, "\\vocab {}", self.words.len() - 3);
        for w in &self.words[3..] {
            let _ = writeln!(out, "{w}");
        }
        for k in 1..=self.order {
            let _ = writeln!(out, "\\{k}-grams");
            let rows: BTreeMap<Vec<&str>, (u64, f64)> = self.orders[k]
                .raw
                .iter()
                .map(|(g, &c)| {
                    let words = g.iter().map(|&i| self.words[i as usize].as_str()).collect();
                    (words, (c, self.log10_prob_ids(&g[..k - 1], g[k - 1])))
                })
                .collect();
            for (g, (c, lp)) in rows {
                let _ = writeln!(out, "{}\t{c}\t{lp:.6}", g.join(" "));
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let err = |line: usize, msg: &str| ApeError::parse("<lm>", line, msg);
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| err(1, "missing header"))?;
        let mut fields: HashMap<&str, &str> = HashMap::new();
        for kv in header.strip_prefix("\\lm ").ok_or_else(|| err(1, "bad header"))?.split_whitespace() {
            let (k, v) = kv.split_once('=').ok_or_else(|| err(1, "bad header field"))?;
            fields.insert(k, v);
        }
        let get = |k: &str| fields.get(k).copied().ok_or_else(|| err(1, "missing header field"));
        let order: usize = get("order")?.parse().map_err(|_| err(1, "bad order"))?;
        let smoothing: Smoothing = get("smoothing")?.parse()?;
        let discount: f64 = get("discount")?.parse().map_err(|_| err(1, "bad discount"))?;
        let boundaries: bool = get("boundaries")?.parse().map_err(|_| err(1, "bad boundaries"))?;
        let mut lm = NGramLM::empty(order, smoothing, boundaries)?;
        lm.discount = discount;

        let (i, vocab_line) = lines.next().ok_or_else(|| err(2, "missing vocab"))?;
        let n: usize = vocab_line
            .strip_prefix("\\vocab ")
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| err(i + 1, "bad vocab line"))?;
        for _ in 0..n {
            let (_, w) = lines.next().ok_or_else(|| err(i + 1, "truncated vocab"))?;
            lm.intern(w);
        }
        let mut grams: Vec<(Vec<u32>, u64)> = Vec::new();
        for (i, line) in lines {
            if line.starts_with('\\') {
                continue;
            }
            let mut cols = line.split('\t');
            let (g, c) = match (cols.next(), cols.next()) {
                (Some(g), Some(c)) => (g, c),
                _ => return Err(err(i + 1, "expected k-gram and count")),
            };
            let c: u64 = c.parse().map_err(|_| err(i + 1, "bad count"))?;
            let ids: Vec<u32> = g
                .split(' ')
                .map(|w| lm.vocab.get(w).copied().ok_or_else(|| err(i + 1, "word not in vocab")))
                .collect::<Result<_>>()?;
            if ids.is_empty() || ids.len() > order {
                return Err(err(i + 1, "k-gram longer than order"));
            }
            grams.push((ids, c));
        }
        lm.rebuild(grams);
        Ok(lm)
    }

    fn rebuild(&mut self, grams: Vec<(Vec<u32>, u64)>) {
        for (g, c) in grams {
            let k = g.len();
            let ord = &mut self.orders[k];
            let m = ord.raw_ctx.entry(g[..k - 1].to_vec()).or_default();
            m.sum += c;
            m.types += 1;
            if k >= 2 {
                let lower = &mut self.orders[k - 1];
                let suffix = &g[1..];
                let e = lower.cont.entry(suffix.to_vec()).or_insert(0);
                *e += 1;
                let first = *e == 1;
                let m = lower.cont_ctx.entry(suffix[..k - 2].to_vec()).or_default();
                m.sum += 1;
                if first {
                    m.types += 1;
                }
            }
            self.orders[k].raw.insert(g, c);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(x: &str) -> Vec<String> {
        x.split_whitespace().map(str::to_owned).collect()
    }

    fn assert_normalized(lm: &NGramLM) {
        let vocab = lm.vocabulary();
        for h in lm.observed_contexts() {
            let h: Vec<&str> = h.iter().map(String::as_str).collect();
            let total: f64 = vocab.iter().map(|w| lm.prob(&h, w)).sum();
            assert!((total - 1.0).abs() < 1e-9, "context {h:?} sums to {total}");
        }
    }

    #[test]
    fn continuation_probability_example() {
        let corpus = [s("a b"), s("c b"), s("a d")];
        let lm = NGramLM::train_with(&corpus, 2, Smoothing::KneserNey, false).unwrap();
        assert!((lm.continuation_prob("b") - 2.0 / 3.0).abs() < 1e-12);
        assert!((lm.continuation_prob("d") - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn add1_unseen_context() {
        // Eight words plus </s> and <unk> give |V| = 10.
        let lm = NGramLM::train(&[s("a b c d e f g h")], 2, Smoothing::Add1).unwrap();
        assert_eq!(lm.vocabulary().len(), 10);
        assert!((lm.prob(&["zzz"], "a") - 0.1).abs() < 1e-15);
    }

    #[test]
    fn trained_sentence_scores_highest() {
        let lm = NGramLM::train(&[s("a b")], 2, Smoothing::Add1).unwrap();
        let best = lm.score(&s("a b"));
        assert!(best.is_finite() && best < 0.0);
        for x in ["a", "b"] {
            for y in ["a", "b"] {
                let cand = s(&format!("{x} {y}"));
                if cand != s("a b") {
                    assert!(lm.score(&cand) < best);
                }
            }
        }
    }

    #[test]
    fn empty_and_unknown_sentences() {
        for sm in [Smoothing::Add1, Smoothing::KneserNey] {
            let lm = NGramLM::train(&[s("a b c"), s("b c")], 3, sm).unwrap();
            let e = lm.score(&[]);
            assert_eq!(e, lm.log10_prob_ids(&[BOS_ID, BOS_ID], EOS_ID));
            assert!(lm.score(&s("qq rr ss")).is_finite());
        }
    }

    #[test]
    fn update_matches_batch_for_add1() {
        let s1 = s("a b c a");
        let s2 = s("c a d");
        let mut inc = NGramLM::train(std::slice::from_ref(&s1), 3, Smoothing::Add1).unwrap();
        inc.update(&s2);
        let batch = NGramLM::train(&[s1, s2], 3, Smoothing::Add1).unwrap();
        for q in [s("a b"), s("d a c"), s("x"), s("")] {
            assert_eq!(inc.score(&q), batch.score(&q));
        }
    }

    #[test]
    fn kn_update_keeps_discount_and_matches_counts() {
        let s1 = s("a b c a");
        let s2 = s("c a d");
        let mut inc = NGramLM::train(std::slice::from_ref(&s1), 3, Smoothing::KneserNey).unwrap();
        let d = inc.discount();
        inc.update(&s2);
        assert_eq!(inc.discount(), d);
        let batch = NGramLM::train(&[s1, s2], 3, Smoothing::KneserNey).unwrap();
        for g in [vec!["c", "a"], vec!["a"], vec!["<s>", "c", "a"], vec!["a", "d", "</s>"]] {
            assert_eq!(inc.count(&g), batch.count(&g));
        }
        assert_eq!(inc.continuation_prob("a"), batch.continuation_prob("a"));
    }

    #[test]
    fn update_with_empty_and_repeated_sentences() {
        let mut lm = NGramLM::train(&[s("a b")], 2, Smoothing::Add1).unwrap();
        lm.update(&[]);
        assert_eq!(lm.count(&["<s>", "</s>"]), 1);
        assert_eq!(lm.count(&["a", "b"]), 1);
        lm.update(&s("a b"));
        lm.update(&s("a b"));
        assert_eq!(lm.count(&["a", "b"]), 3);
    }

    #[test]
    fn reversal_scores_lower() {
        let lm = NGramLM::train(&[s("a b c d e")], 3, Smoothing::KneserNey).unwrap();
        assert!(lm.score(&s("e d c b a")) < lm.score(&s("a b c d e")));
        let lm = NGramLM::train(&[s("a b c d e")], 2, Smoothing::Add1).unwrap();
        assert!(lm.score(&s("e d c b a")) < lm.score(&s("a b c d e")));
    }

    #[test]
    fn text_round_trip() {
        let corpus = [s("a b c"), s("b c d"), s("a a")];
        for sm in [Smoothing::Add1, Smoothing::KneserNey] {
            let lm = NGramLM::train(&corpus, 3, sm).unwrap();
            let back = NGramLM::from_text(&lm.to_text()).unwrap();
            for q in [s("a b c"), s("d d"), s("zz a")] {
                assert_eq!(lm.score(&q), back.score(&q));
            }
            assert_normalized(&back);
        }
    }

    #[test]
    fn order_one() {
        for sm in [Smoothing::Add1, Smoothing::KneserNey] {
            let lm = NGramLM::train(&[s("a b a")], 1, sm).unwrap();
            assert_normalized(&lm);
            assert!(lm.prob(&[], "a") > lm.prob(&[], "b"));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn normalized_for_every_observed_context(
            corpus in prop::collection::vec(
                prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "e"]), 0..9), 1..8),
            order in 1usize..=5,
            kn in any::<bool>(),
            boundaries in any::<bool>(),
        ) {
            let corpus: Vec<Vec<String>> = corpus
                .into_iter()
                .map(|v| v.into_iter().map(String::from).collect())
                .collect();
            let sm = if kn { Smoothing::KneserNey } else { Smoothing::Add1 };
            let lm = NGramLM::train_with(&corpus, order, sm, boundaries).unwrap();
            assert_normalized(&lm);
        }
    }
}
