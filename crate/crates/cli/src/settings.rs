//! Flat `key=value` configuration with flag overrides.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;

use ape_core::align::Symmetrization;
use ape_core::decoder::ConstraintMode;
use ape_core::lm::Smoothing;
use ape_core::optimize::Objective;
use ape_core::pipeline::MtPeAligner;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Monolingual,
    ContextAware,
    Combined,
}

impl FromStr for Variant {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "monolingual" => Ok(Variant::Monolingual),
            "context-aware" => Ok(Variant::ContextAware),
            "combined" => Ok(Variant::Combined),
            _ => bail!("unknown variant {s:?}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    Activate,
    Guide,
    SelectSentence,
    SelectWord,
}

impl FromStr for Strategy {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "activate" => Ok(Strategy::Activate),
            "guide" => Ok(Strategy::Guide),
            "select-sentence" => Ok(Strategy::SelectSentence),
            "select-word" => Ok(Strategy::SelectWord),
            _ => bail!("unknown strategy {s:?}"),
        }
    }
}

/// Parsing of one setting value.
trait Value: Sized {
    fn parse_value(s: &str) -> Result<Self>;
}

macro_rules! from_str_values {
    ($($t:ty),*) => {$(
        impl Value for $t {
            fn parse_value(s: &str) -> Result<Self> {
                s.parse::<$t>().map_err(|e| anyhow!("{e}"))
            }
        }
    )*};
}

from_str_values!(usize, u64, f64, bool, Smoothing, Symmetrization, MtPeAligner, ConstraintMode, Objective, Variant, Strategy);

impl Value for Option<PathBuf> {
    fn parse_value(s: &str) -> Result<Self> {
        Ok((s != "none").then(|| PathBuf::from(s)))
    }
}

impl Value for Option<usize> {
    fn parse_value(s: &str) -> Result<Self> {
        if s == "none" {
            Ok(None)
        } else {
            Ok(Some(usize::parse_value(s)?))
        }
    }
}

impl Value for Vec<PathBuf> {
    fn parse_value(s: &str) -> Result<Self> {
        if s == "none" {
            return Ok(Vec::new());
        }
        Ok(s.split(',').map(PathBuf::from).collect())
    }
}

macro_rules! settings {
    ($($field:ident: $ty:ty = $default:literal, $help:literal;)*) => {
        /// Overrides for every configuration key.
        #[derive(Args, Clone, Debug, Default)]
        pub struct Flags {
            $(
                #[arg(long, global = true, value_name = "VALUE", help = concat!($help, " [default: ", $default, "]"))]
                pub $field: Option<String>,
            )*
        }

        #[derive(Clone, Debug)]
        pub struct Settings {
            $(pub $field: $ty,)*
        }

        impl Settings {
            /// Defaults, then the config file, then flags.
            pub fn resolve(file: &[(usize, String, String)], flags: &Flags) -> Result<Settings> {
                $(let mut $field: &str = $default;)*
                for (line, key, value) in file {
                    match key.replace('-', "_").as_str() {
                        $(stringify!($field) => $field = value,)*
                        _ => bail!("config line {line}: unknown key {key:?}"),
                    }
                }
                $(
                    if let Some(v) = &flags.$field {
                        $field = v;
                    }
                )*
                Ok(Settings {
                    $(
                        $field: <$ty as Value>::parse_value($field)
                            .with_context(|| format!("invalid value {:?} for {}", $field, stringify!($field).replace('_', "-")))?,
                    )*
                })
            }
        }
    };
}

settings! {
    variant: Variant = "monolingual", "Model representation: monolingual, context-aware or combined";
    aligner: MtPeAligner = "ibm1", "mt-pe word aligner: ibm1 or levenshtein";
    ibm_iterations: usize = "5", "IBM Model 1 EM iterations";
    symmetrization: Symmetrization = "grow-diag-final-and", "Alignment symmetrization: intersection, union, grow-diag-final-and";
    max_phrase_len: usize = "7", "Longest extracted phrase";
    lm_order: usize = "3", "Language model order";
    smoothing: Smoothing = "kneser-ney", "LM smoothing: add1 or kneser-ney";
    sigma: f64 = "0.5", "Reordering smoothing constant";
    augment: bool = "false", "Add (pe, pe) pairs to the training data";
    dense_features: bool = "true", "Compute f1, f2.1, f2.2, f3 and neg-impact";
    beam: usize = "100", "Decoder stack size";
    distortion: Option<usize> = "6", "Distortion limit, or none";
    nbest: usize = "50", "N-best list size";
    table_limit: usize = "20", "Options kept per span and table";
    mode: ConstraintMode = "forced", "Constraint mode: forced or inclusive";
    threshold: f64 = "0.5", "prune: neg-impact threshold; qe-combine activate: QE score threshold";
    tau: f64 = "0", "select-sentence margin";
    cutoff: f64 = "0.8", "Online retrieval similarity cutoff";
    max_instances: usize = "200", "Online retrieved instances per segment";
    objective: Objective = "ter", "Tuning objective: ter or bleu";
    tune_cycles: usize = "5", "MERT decode-optimize cycles";
    restarts: usize = "3", "Random restarts per MERT cycle";
    seed: u64 = "1", "Seed for every stochastic step";
    jobs: usize = "0", "Worker threads (0 = all cores)";
    strategy: Strategy = "select-sentence", "qe-combine strategy: activate, guide, select-sentence, select-word";
    src: Option<PathBuf> = "none", "Source sentences";
    mt: Option<PathBuf> = "none", "MT sentences";
    pe: Option<PathBuf> = "none", "Post-edited sentences";
    ape: Option<PathBuf> = "none", "APE output sentences (qe-combine)";
    hyp: Option<PathBuf> = "none", "Hypotheses to evaluate";
    reference: Option<PathBuf> = "none", "References for evaluate";
    model: Option<PathBuf> = "none", "Model directory";
    weights: Option<PathBuf> = "none", "Feature weights file (tune writes, decode reads; defaults to MODEL/weights.txt)";
    rerank: Option<PathBuf> = "none", "Rerank weights file (tune writes, decode reads)";
    constraints: Option<PathBuf> = "none", "Annotated decoder input, replaces --mt";
    tables: Vec<PathBuf> = "none", "Comma-separated phrase tables used instead of the model's";
    table: Option<PathBuf> = "none", "Phrase table to prune";
    output: Option<PathBuf> = "none", "Output file (stdout if unset)";
    nbest_out: Option<PathBuf> = "none", "N-best output file";
    log: Option<PathBuf> = "none", "Online per-segment log file (stderr if unset)";
    qe_mt: Option<PathBuf> = "none", "Sentence QE scores of the mt, one per line";
    qe_ape: Option<PathBuf> = "none", "Sentence QE scores of the APE output, one per line";
    labels: Option<PathBuf> = "none", "Word labels of the mt (GOOD/BAD per token), or oracle";
    labels_ape: Option<PathBuf> = "none", "Word labels of the APE output, or oracle";
}

/// Reads `key=value` lines; blank lines and `#` comments are skipped.
pub fn read_config(path: &Path) -> Result<Vec<(usize, String, String)>> {
    let text = fs::read_to_string(path).with_context(|| format!("{}", path.display()))?;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("{}:{}: expected key=value", path.display(), i + 1))?;
        out.push((i + 1, k.trim().to_owned(), v.trim().to_owned()));
    }
    Ok(out)
}

impl Settings {
    pub fn require<'a>(&self, value: &'a Option<PathBuf>, name: &str) -> Result<&'a Path> {
        value.as_deref().ok_or_else(|| anyhow!("--{name} is required"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entries(pairs: &[(&str, &str)]) -> Vec<(usize, String, String)> {
        pairs.iter().enumerate().map(|(i, (k, v))| (i + 1, k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn defaults_file_then_flags() {
        let s = Settings::resolve(&[], &Flags::default()).unwrap();
        assert_eq!(s.lm_order, 3);
        assert_eq!(s.distortion, Some(6));
        assert!(s.src.is_none());

        let file = entries(&[("lm-order", "4"), ("beam", "7"), ("distortion", "none")]);
        let flags = Flags {
            beam: Some("9".into()),
            ..Flags::default()
        };
        let s = Settings::resolve(&file, &flags).unwrap();
        assert_eq!((s.lm_order, s.beam, s.distortion), (4, 9, None));
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let e = Settings::resolve(&entries(&[("colour", "red")]), &Flags::default()).unwrap_err();
        assert!(e.to_string().contains("unknown key"));
        let flags = Flags {
            smoothing: Some("witten-bell".into()),
            ..Flags::default()
        };
        assert!(Settings::resolve(&[], &flags).is_err());
    }

    #[test]
    fn path_lists() {
        let flags = Flags {
            tables: Some("a.txt,b.txt".into()),
            ..Flags::default()
        };
        let s = Settings::resolve(&[], &flags).unwrap();
        assert_eq!(s.tables, vec![PathBuf::from("a.txt"), PathBuf::from("b.txt")]);
    }
}
