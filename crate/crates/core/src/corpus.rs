//! Sentences, triplets and the joint `mt#src` representation.
//!
//! Input text is expected to be tokenized already: a line is split on
//! whitespace and nothing else. Casing is kept as-is.

use std::fmt;
use std::fs;
use std::ops::Deref;
use std::path::Path;

use crate::align::WordAlignment;
use crate::error::{ApeError, Result};

/// Separates an mt token from its source annotation.
pub const JOINT_SEP: char = '#';
/// Separates source tokens inside an annotation.
pub const ANNOTATION_SEP: char = '_';

/// An ordered sequence of non-empty, whitespace-free tokens.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Sentence(Vec<String>);

impl Sentence {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        for t in &tokens {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(ApeError::InvalidToken(t.clone()));
            }
        }
        Ok(Sentence(tokens))
    }

    /// Whitespace tokenization of a pre-tokenized line.
    pub fn parse(line: &str) -> Self {
        Sentence(line.split_whitespace().map(str::to_owned).collect())
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn into_tokens(self) -> Vec<String> {
        self.0
    }

    pub fn to_line(&self) -> String {
        self.0.join(" ")
    }
}

impl Deref for Sentence {
    type Target = [String];

    fn deref(&self) -> &[String] {
        &self.0
    }
}

impl fmt::Display for Sentence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_line())
    }
}

impl From<&str> for Sentence {
    fn from(line: &str) -> Self {
        Sentence::parse(line)
    }
}

/// One training or evaluation unit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Triplet {
    pub id: usize,
    pub src: Sentence,
    pub mt: Sentence,
    pub pe: Sentence,
}

impl Triplet {
    pub fn new(id: usize, src: Sentence, mt: Sentence, pe: Sentence) -> Result<Self> {
        if src.is_empty() || mt.is_empty() || pe.is_empty() {
            return Err(ApeError::InvalidArgument(format!(
                "triplet {id} has an empty sentence"
            )));
        }
        Ok(Triplet { id, src, mt, pe })
    }
}

/// Reads one sentence per line. Empty lines are rejected unless `allow_empty`.
pub fn read_sentences(path: impl AsRef<Path>, allow_empty: bool) -> Result<Vec<Sentence>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| ApeError::io(path, e))?;
    let mut body: &[u8] = &bytes;
    if body.last() == Some(&b'\n') {
        body = &body[..body.len() - 1];
    }
    if body.is_empty() {
        return Ok(Vec::new());
    }
    body.split(|&b| b == b'\n')
        .enumerate()
        .map(|(i, raw)| {
            let raw = raw.strip_suffix(b"\r").unwrap_or(raw);
            let line = std::str::from_utf8(raw)
                .map_err(|_| ApeError::parse(path, i + 1, "undecodable bytes (not UTF-8)"))?;
            let sentence = Sentence::parse(line);
            if sentence.is_empty() && !allow_empty {
                return Err(ApeError::parse(path, i + 1, "empty line"));
            }
            Ok(sentence)
        })
        .collect()
}

/// Loads three parallel files into triplets whose ids are 0-based line numbers.
pub fn load_corpus(
    src_path: impl AsRef<Path>,
    mt_path: impl AsRef<Path>,
    pe_path: impl AsRef<Path>,
) -> Result<Vec<Triplet>> {
    let src = read_sentences(src_path.as_ref(), false)?;
    let mt = read_sentences(mt_path.as_ref(), false)?;
    let pe = read_sentences(pe_path.as_ref(), false)?;
    if src.len() != mt.len() || mt.len() != pe.len() {
        return Err(ApeError::LineCountMismatch(format!(
            "{} has {} lines, {} has {}, {} has {}",
            src_path.as_ref().display(),
            src.len(),
            mt_path.as_ref().display(),
            mt.len(),
            pe_path.as_ref().display(),
            pe.len()
        )));
    }
    src.into_iter()
        .zip(mt)
        .zip(pe)
        .enumerate()
        .map(|(id, ((s, m), p))| Triplet::new(id, s, m, p))
        .collect()
}

/// An mt token optionally annotated with the source tokens aligned to it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct JointToken {
    pub mt: String,
    pub annotation: Option<Vec<String>>,
}

impl JointToken {
    /// Serialized form, e.g. `Bemalen#Paint_on`.
    pub fn to_token(&self) -> String {
        let mut out = escape(&self.mt);
        if let Some(ann) = &self.annotation {
            out.push(JOINT_SEP);
            let parts: Vec<String> = ann.iter().map(|t| escape(t)).collect();
            out.push_str(&parts.join(&ANNOTATION_SEP.to_string()));
        }
        out
    }

    pub fn parse(token: &str) -> JointToken {
        let mut parts = split_unescaped(token, JOINT_SEP);
        let mt = unescape(&parts.remove(0));
        let annotation = if parts.is_empty() {
            None
        } else {
            let rest = parts.join(&JOINT_SEP.to_string());
            Some(
                split_unescaped(&rest, ANNOTATION_SEP)
                    .iter()
                    .map(|s| unescape(s))
                    .collect(),
            )
        };
        JointToken { mt, annotation }
    }
}

/// The mt sentence with each token annotated by its aligned source words.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct JointSentence {
    pub tokens: Vec<JointToken>,
}

impl JointSentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Serialized tokens, usable as a phrase-table source vocabulary.
    pub fn to_sentence(&self) -> Sentence {
        Sentence(self.tokens.iter().map(JointToken::to_token).collect())
    }

    pub fn to_line(&self) -> String {
        self.to_sentence().to_line()
    }

    pub fn parse(line: &str) -> JointSentence {
        JointSentence {
            tokens: line.split_whitespace().map(JointToken::parse).collect(),
        }
    }

    /// The plain mt tokens, annotations dropped.
    pub fn mt(&self) -> Sentence {
        Sentence(self.tokens.iter().map(|t| t.mt.clone()).collect())
    }
}

/// Annotates every mt token with the source tokens linked to it, joined in
/// source order. `alignment` links are `(src_index, mt_index)`.
pub fn build_joint(src: &Sentence, mt: &Sentence, alignment: &WordAlignment) -> Result<JointSentence> {
    alignment.check_bounds(src.len(), mt.len())?;
    let mut linked: Vec<Vec<usize>> = vec![Vec::new(); mt.len()];
    for &(s, t) in alignment.links() {
        linked[t].push(s);
    }
    let tokens = mt
        .iter()
        .zip(linked)
        .map(|(tok, mut srcs)| {
            srcs.sort_unstable();
            srcs.dedup();
            JointToken {
                mt: tok.clone(),
                annotation: (!srcs.is_empty())
                    .then(|| srcs.iter().map(|&s| src[s].clone()).collect()),
            }
        })
        .collect();
    Ok(JointSentence { tokens })
}

/// Appends one `(pe, pe)` pair per input pair so identity patterns are learnt.
pub fn augment_identity(corpus: &[(Sentence, Sentence)]) -> Vec<(Sentence, Sentence)> {
    let mut out = Vec::with_capacity(corpus.len() * 2);
    out.extend(corpus.iter().cloned());
    out.extend(corpus.iter().map(|(_, pe)| (pe.clone(), pe.clone())));
    out
}

fn escape(token: &str) -> String {
    let mut out = String::with_capacity(token.len());
    for c in token.chars() {
        if c == '\\' || c == JOINT_SEP || c == ANNOTATION_SEP {
            out.push('\\');
        }
        out.push(c);
    }
    out
}

fn unescape(token: &str) -> String {
    let mut out = String::with_capacity(token.len());
    let mut chars = token.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            if let Some(n) = chars.next() {
                out.push(n);
                continue;
            }
        }
        out.push(c);
    }
    out
}

/// Splits on `sep` where it is not preceded by an escaping backslash. Parts
/// keep their escapes.
fn split_unescaped(s: &str, sep: char) -> Vec<String> {
    let mut parts = vec![String::new()];
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            let last = parts.last_mut().unwrap();
            last.push(c);
            if let Some(n) = chars.next() {
                last.push(n);
            }
        } else if c == sep {
            parts.push(String::new());
        } else {
            parts.last_mut().unwrap().push(c);
        }
    }
    parts
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, body: &[u8]) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::File::create(&p).unwrap().write_all(body).unwrap();
        p
    }

    #[test]
    fn loads_triplets_in_file_order() {
        let dir = tempfile::tempdir().unwrap();
        let s = write(dir.path(), "a.src", b"s one\ns two\n");
        let m = write(dir.path(), "a.mt", b"m one\nm two\n");
        let p = write(dir.path(), "a.pe", b"p one\np two\n");
        let c = load_corpus(&s, &m, &p).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].id, 0);
        assert_eq!(c[1].id, 1);
        assert_eq!(c[1].mt.to_line(), "m two");
    }

    #[test]
    fn line_count_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let s = write(dir.path(), "a.src", b"a\nb\n");
        let m = write(dir.path(), "a.mt", b"a\nb\nc\n");
        let p = write(dir.path(), "a.pe", b"a\nb\n");
        let err = load_corpus(&s, &m, &p).unwrap_err();
        assert!(err.to_string().contains("line count mismatch"), "{err}");
    }

    #[test]
    fn empty_line_and_bad_bytes_report_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let s = write(dir.path(), "a.src", b"a\n\n");
        let err = read_sentences(&s, false).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");
        let b = write(dir.path(), "b.src", b"ok\nfine\n\xff\xfe\n");
        let err = read_sentences(&b, false).unwrap_err();
        assert!(err.to_string().contains(":3:"), "{err}");
    }

    #[test]
    fn whitespace_split() {
        let s = Sentence::parse("Hello , world .");
        assert_eq!(s.tokens(), ["Hello", ",", "world", "."]);
    }

    #[test]
    fn joint_representation_example() {
        let src = Sentence::parse("See Paint on 3D models .");
        let mt = Sentence::parse("Siehe Bemalen von 3D-Modellen .");
        let al = WordAlignment::from_links([(0, 0), (1, 1), (2, 1), (2, 2), (3, 3), (4, 3)]);
        let joint = build_joint(&src, &mt, &al).unwrap();
        assert_eq!(
            joint.to_line(),
            "Siehe#See Bemalen#Paint_on von#on 3D-Modellen#3D_models ."
        );
        assert_eq!(joint.len(), mt.len());
    }

    #[test]
    fn empty_alignment_leaves_mt_untouched() {
        let src = Sentence::parse("a b");
        let mt = Sentence::parse("x y z");
        let joint = build_joint(&src, &mt, &WordAlignment::default()).unwrap();
        assert_eq!(joint.to_line(), "x y z");
        assert!(joint.tokens.iter().all(|t| t.annotation.is_none()));
    }

    #[test]
    fn annotation_follows_source_order() {
        let src = Sentence::parse("tok0 tok1 tok2");
        let mt = Sentence::parse("x");
        // Enumerate every non-empty subset of source positions and every
        // insertion order of its links.
        for mask in 1u32..8 {
            let positions: Vec<usize> = (0..3).filter(|i| mask & (1 << i) != 0).collect();
            for rev in [false, true] {
                let mut links: Vec<(usize, usize)> = positions.iter().map(|&s| (s, 0)).collect();
                if rev {
                    links.reverse();
                }
                let joint = build_joint(&src, &mt, &WordAlignment::from_links(links)).unwrap();
                let expected: Vec<String> = positions.iter().map(|i| format!("tok{i}")).collect();
                assert_eq!(joint.tokens[0].annotation.as_ref().unwrap(), &expected);
            }
        }
        let al = WordAlignment::from_links([(2, 0), (1, 0)]);
        assert_eq!(build_joint(&src, &mt, &al).unwrap().to_line(), "x#tok1_tok2");
    }

    #[test]
    fn out_of_bounds_link_is_rejected() {
        let src = Sentence::parse("a");
        let mt = Sentence::parse("x");
        assert!(build_joint(&src, &mt, &WordAlignment::from_links([(1, 0)])).is_err());
    }

    #[test]
    fn reserved_characters_are_escaped() {
        let src = Sentence::parse("C# a_b");
        let mt = Sentence::parse("x#y z");
        let al = WordAlignment::from_links([(0, 0), (1, 0)]);
        let joint = build_joint(&src, &mt, &al).unwrap();
        let line = joint.to_line();
        assert_eq!(line, r"x\#y#C\#_a\_b z");
        assert_eq!(JointSentence::parse(&line), joint);
    }

    #[test]
    fn augmentation_doubles_with_identity_half() {
        let pairs = vec![(Sentence::parse("a b"), Sentence::parse("a c"))];
        let out = augment_identity(&pairs);
        assert_eq!(out.len(), 2);
        assert_eq!(out[1].0, out[1].1);
        assert_eq!(out[1].1.to_line(), "a c");
        assert!(augment_identity(&[]).is_empty());

        let big: Vec<_> = (0..12_000)
            .map(|i| (Sentence::parse(&format!("m{i}")), Sentence::parse(&format!("p{i}"))))
            .collect();
        let out = augment_identity(&big);
        assert_eq!(out.len(), 24_000);
        assert!(out[12_000..].iter().all(|(a, b)| a == b));
    }

    #[test]
    fn augmenting_identity_pairs_only_adds_duplicates() {
        let pairs = vec![(Sentence::parse("a"), Sentence::parse("a"))];
        let out = augment_identity(&pairs);
        assert!(out.iter().all(|p| p == &pairs[0]));
    }

    proptest! {
        #[test]
        fn line_round_trip(tokens in prop::collection::vec("[a-zA-Z0-9#_.,-]{1,6}", 0..10)) {
            let line = tokens.join(" ");
            prop_assert_eq!(Sentence::parse(&line).to_line(), line);
        }

        #[test]
        fn joint_round_trip_and_length(
            src in prop::collection::vec("[a-c#_\\\\]{1,3}", 1..5),
            mt in prop::collection::vec("[x-z#_\\\\]{1,3}", 1..5),
            raw_links in prop::collection::vec((0usize..5, 0usize..5), 0..6),
        ) {
            let src = Sentence::new(src).unwrap();
            let mt = Sentence::new(mt).unwrap();
            let links: Vec<_> = raw_links
                .into_iter()
                .filter(|&(s, t)| s < src.len() && t < mt.len())
                .collect();
            let joint = build_joint(&src, &mt, &WordAlignment::from_links(links)).unwrap();
            prop_assert_eq!(joint.len(), mt.len());
            prop_assert_eq!(&joint.mt(), &mt);
            prop_assert_eq!(JointSentence::parse(&joint.to_line()), joint);
        }
    }
}
