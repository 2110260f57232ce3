//! Combining quality estimates with automatic post-editing.

use std::fmt;
use std::str::FromStr;

use crate::align::{levenshtein_align, AlignOp};
use crate::decoder::DecoderInput;
use crate::error::{ApeError, Result};
use crate::metrics::{self, HypLabel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum WordLabel {
    Good,
    Bad,
}

impl FromStr for WordLabel {
    type Err = ApeError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "GOOD" | "OK" => Ok(WordLabel::Good),
            "BAD" => Ok(WordLabel::Bad),
            _ => Err(ApeError::InvalidArgument(format!("unknown word label {s:?}"))),
        }
    }
}

impl fmt::Display for WordLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WordLabel::Good => "GOOD",
            WordLabel::Bad => "BAD",
        })
    }
}

pub fn parse_labels(line: &str) -> Result<Vec<WordLabel>> {
    line.split_whitespace().map(str::parse).collect()
}

/// Good iff the TER alignment matches the token to an identical one.
pub fn oracle_word_labels(mt: &[String], pe: &[String]) -> Result<Vec<WordLabel>> {
    if pe.is_empty() {
        return Ok(vec![WordLabel::Bad; mt.len()]);
    }
    let r = metrics::ter(mt, pe)?;
    Ok(r.alignment
        .hyp_labels
        .iter()
        .map(|l| match l {
            HypLabel::Match => WordLabel::Good,
            _ => WordLabel::Bad,
        })
        .collect())
}

/// Runs `decode` unless the predicted TER is already below `threshold`.
pub fn activate<F>(mt: &[String], predicted_ter: f64, threshold: f64, decode: F) -> Result<Vec<String>>
where
    F: FnOnce(&[String]) -> Result<Vec<String>>,
{
    if predicted_ter < threshold {
        Ok(mt.to_vec())
    } else {
        decode(mt)
    }
}

/// Pins every good token to itself; bad tokens stay free.
pub fn guidance_annotate(mt: &[String], labels: &[WordLabel]) -> Result<DecoderInput> {
    if mt.len() != labels.len() {
        return Err(ApeError::LengthMismatch {
            left: mt.len(),
            right: labels.len(),
        });
    }
    let constraints = mt
        .iter()
        .zip(labels)
        .map(|(t, l)| (*l == WordLabel::Good).then(|| vec![t.clone()]))
        .collect();
    DecoderInput::plain(mt.to_vec()).with_constraints(constraints)
}

/// The APE output iff its predicted TER is lower than the mt's by more than
/// `tau`.
pub fn select_sentence<'a>(mt: &'a [String], ape: &'a [String], qe_mt: f64, qe_ape: f64, tau: f64) -> &'a [String] {
    if qe_mt - qe_ape > tau {
        ape
    } else {
        mt
    }
}

/// Word-level merge with the mt as backbone. A bad mt token linked to a good
/// ape token takes the ape token; unlinked mt tokens survive iff good;
/// unlinked good ape tokens are inserted right after the last linked mt
/// token that precedes them.
pub fn select_word(
    mt: &[String],
    ape: &[String],
    labels_mt: &[WordLabel],
    labels_ape: &[WordLabel],
) -> Result<Vec<String>> {
    if labels_mt.len() != mt.len() {
        return Err(ApeError::LengthMismatch {
            left: mt.len(),
            right: labels_mt.len(),
        });
    }
    if labels_ape.len() != ape.len() {
        return Err(ApeError::LengthMismatch {
            left: ape.len(),
            right: labels_ape.len(),
        });
    }
    let ops = levenshtein_align(mt, ape).ops;
    let mut link: Vec<Option<usize>> = vec![None; mt.len()];
    // Insertions keyed by one past the last linked mt index before them.
    let mut inserted: Vec<Vec<usize>> = vec![Vec::new(); mt.len() + 1];
    let mut last_linked = 0;
    for op in &ops {
        match *op {
            AlignOp::Match(i, j) | AlignOp::Substitution(i, j) => {
                link[i] = Some(j);
                last_linked = i + 1;
            }
            AlignOp::Insertion(j) => inserted[last_linked].push(j),
            AlignOp::Deletion(_) => {}
        }
    }
    let mut out = Vec::with_capacity(mt.len());
    let emit_insertions = |out: &mut Vec<String>, slot: &[usize]| {
        for &j in slot {
            if labels_ape[j] == WordLabel::Good {
                out.push(ape[j].clone());
            }
        }
    };
    emit_insertions(&mut out, &inserted[0]);
    for i in 0..mt.len() {
        match link[i] {
            Some(j) => {
                if labels_mt[i] == WordLabel::Bad && labels_ape[j] == WordLabel::Good {
                    out.push(ape[j].clone());
                } else {
                    out.push(mt[i].clone());
                }
            }
            None => {
                if labels_mt[i] == WordLabel::Good {
                    out.push(mt[i].clone());
                }
            }
        }
        emit_insertions(&mut out, &inserted[i + 1]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use WordLabel::{Bad, Good};

    fn s(x: &str) -> Vec<String> {
        x.split_whitespace().map(str::to_owned).collect()
    }

    #[test]
    fn oracle_labels() {
        assert_eq!(oracle_word_labels(&s("a b c"), &s("a b c")).unwrap(), vec![Good; 3]);
        assert_eq!(oracle_word_labels(&s("a b c"), &s("a x c")).unwrap(), vec![Good, Bad, Good]);
        assert_eq!(oracle_word_labels(&s("a"), &s("b c")).unwrap(), vec![Bad]);
        assert_eq!(oracle_word_labels(&s("a b"), &[]).unwrap(), vec![Bad, Bad]);
    }

    #[test]
    fn activation() {
        let mt = s("a b");
        let ape = |_: &[String]| Ok(s("z"));
        assert_eq!(activate(&mt, 5.0, 10.0, ape).unwrap(), mt);
        assert_eq!(activate(&mt, 15.0, 10.0, ape).unwrap(), s("z"));
        assert_eq!(activate(&mt, 0.0, 0.0, ape).unwrap(), s("z"));
        assert_eq!(activate(&mt, 1e9, f64::INFINITY, ape).unwrap(), mt);
    }

    #[test]
    fn guidance() {
        let g = guidance_annotate(&s("a b c"), &[Good, Bad, Good]).unwrap();
        assert_eq!(g.constraints, vec![Some(s("a")), None, Some(s("c"))]);
        let g = guidance_annotate(&s("a b"), &[Bad, Bad]).unwrap();
        assert!(g.constraints.iter().all(Option::is_none));
        assert!(guidance_annotate(&s("a"), &[]).is_err());
    }

    #[test]
    fn sentence_selection() {
        let (mt, ape) = (s("m"), s("a"));
        assert_eq!(select_sentence(&mt, &ape, 50.0, 40.0, 5.0), ape.as_slice());
        assert_eq!(select_sentence(&mt, &ape, 43.0, 40.0, 5.0), mt.as_slice());
        assert_eq!(select_sentence(&mt, &ape, 0.0, 100.0, f64::NEG_INFINITY), ape.as_slice());
    }

    #[test]
    fn word_selection() {
        let mt = s("a b c");
        assert_eq!(select_word(&mt, &s("x y"), &[Good; 3], &[Good; 2]).unwrap(), mt);
        assert_eq!(select_word(&mt, &s("a x c"), &[Good, Bad, Good], &[Good; 3]).unwrap(), s("a x c"));
        assert_eq!(select_word(&mt, &s("a b y c"), &[Good; 3], &[Good; 4]).unwrap(), s("a b y c"));
        assert_eq!(select_word(&mt, &s("a b y c"), &[Good; 3], &[Good, Good, Bad, Good]).unwrap(), mt);
        // Both bad: keep mt.
        assert_eq!(select_word(&mt, &s("a x c"), &[Good, Bad, Good], &[Good, Bad, Good]).unwrap(), mt);
        // Unlinked bad mt token is dropped.
        assert_eq!(select_word(&mt, &s("a c"), &[Good, Bad, Good], &[Good, Good]).unwrap(), s("a c"));
        assert!(select_word(&mt, &s("a"), &[Good], &[Good]).is_err());
    }

    #[test]
    fn labels_parse() {
        assert_eq!(parse_labels("GOOD bad OK").unwrap(), vec![Good, Bad, Good]);
        assert!(parse_labels("meh").is_err());
    }
}
