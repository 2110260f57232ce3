//! Synthetic post-editing data for the benchmarks.

use ape_core::{Sentence, Triplet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CONTEXTS: usize = 4;

/// Triplets where `t{k}` is mistranslated as `e{k}` after `c{k}`, plus
/// random token noise in the mt.
pub fn synthetic(seed: u64, n: usize, max_len: usize, noise: f64) -> Vec<Triplet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|id| {
            let len = rng.gen_range(4..=max_len.max(4));
            let mut pe: Vec<String> = Vec::with_capacity(len);
            while pe.len() < len {
                let r: f64 = rng.gen();
                let k = rng.gen_range(0..CONTEXTS);
                if r < 0.2 && pe.len() + 2 <= len {
                    pe.push(format!("c{k}"));
                    pe.push(format!("t{k}"));
                } else if r < 0.35 {
                    pe.push(format!("t{k}"));
                } else {
                    pe.push(format!("w{}", rng.gen_range(0..30)));
                }
            }
            let mut mt = pe.clone();
            for i in 1..pe.len() {
                if let Some(k) = pe[i].strip_prefix('t') {
                    if pe[i - 1] == format!("c{k}") {
                        mt[i] = format!("e{k}");
                    }
                }
            }
            for tok in mt.iter_mut() {
                if rng.gen_bool(noise) {
                    *tok = format!("n{}", rng.gen_range(0..50));
                }
            }
            let src = pe.iter().map(|t| format!("s{t}")).collect();
            Triplet::new(
                id,
                Sentence::new(src).unwrap(),
                Sentence::new(mt).unwrap(),
                Sentence::new(pe).unwrap(),
            )
            .unwrap()
        })
        .collect()
}
