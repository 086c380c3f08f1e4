//! Domain types shared by every stage of the pipeline.
//!
//! Word positions are 1-based and inclusive throughout. Sentence boundary
//! tokens are never part of the pointer space; the model layer owns any
//! internal offset.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sentiment class. Declaration order fixes the class-index assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Polarity {
    #[serde(rename = "POS")]
    Positive,
    #[serde(rename = "NEG")]
    Negative,
    #[serde(rename = "NEU")]
    Neutral,
}

impl Polarity {
    pub const ALL: [Polarity; 3] = [Polarity::Positive, Polarity::Negative, Polarity::Neutral];

    /// Number of polarity classes (`l`).
    pub const COUNT: usize = 3;

    /// Zero-based rank under POS < NEG < NEU.
    pub fn rank(self) -> usize {
        self as usize
    }

    pub fn from_rank(rank: usize) -> Option<Self> {
        Self::ALL.get(rank).copied()
    }

    pub fn tag(self) -> &'static str {
        match self {
            Polarity::Positive => "POS",
            Polarity::Negative => "NEG",
            Polarity::Neutral => "NEU",
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Polarity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "POS" => Ok(Polarity::Positive),
            "NEG" => Ok(Polarity::Negative),
            "NEU" => Ok(Polarity::Neutral),
            other => Err(Error::validation(format!("unknown polarity {other:?}"))),
        }
    }
}

/// A contiguous run of words, 1-based and inclusive on both ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Span {
    start: usize,
    end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Result<Self> {
        if start == 0 || start > end {
            return Err(Error::validation(format!(
                "invalid span [{start},{end}]: need 1 <= start <= end"
            )));
        }
        Ok(Span { start, end })
    }

    /// Single-word span.
    pub fn word(position: usize) -> Result<Self> {
        Self::new(position, position)
    }

    pub fn start(self) -> usize {
        self.start
    }

    pub fn end(self) -> usize {
        self.end
    }

    pub fn len(self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(self) -> bool {
        false
    }

    pub fn fits(self, n: usize) -> bool {
        self.end <= n
    }

    /// The words covered by this span.
    pub fn words(self, words: &[String]) -> &[String] {
        &words[self.start - 1..self.end]
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{}]", self.start, self.end)
    }
}

impl Serialize for Span {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        [self.start, self.end].serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Span {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let [start, end] = <[usize; 2]>::deserialize(deserializer)?;
        Span::new(start, end).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub aspect: Span,
    pub opinion: Span,
    pub polarity: Polarity,
}

impl Triplet {
    pub fn new(aspect: Span, opinion: Span, polarity: Polarity) -> Self {
        Triplet {
            aspect,
            opinion,
            polarity,
        }
    }

    pub fn project(&self, subtask: SubtaskKind) -> Extraction {
        match subtask {
            SubtaskKind::Aesc => Extraction::Aesc {
                aspect: self.aspect,
                polarity: self.polarity,
            },
            SubtaskKind::Pair => Extraction::Pair {
                aspect: self.aspect,
                opinion: self.opinion,
            },
            SubtaskKind::Triplet => Extraction::Triplet(*self),
        }
    }
}

/// The unit compared by exact-match scoring: a triplet projected onto the
/// fields one subtask cares about. Pairs carry no polarity at all.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Extraction {
    Aesc { aspect: Span, polarity: Polarity },
    Pair { aspect: Span, opinion: Span },
    Triplet(Triplet),
}

impl Extraction {
    pub fn aspect(&self) -> Span {
        match self {
            Extraction::Aesc { aspect, .. } | Extraction::Pair { aspect, .. } => *aspect,
            Extraction::Triplet(t) => t.aspect,
        }
    }

    pub fn opinion(&self) -> Option<Span> {
        match self {
            Extraction::Aesc { .. } => None,
            Extraction::Pair { opinion, .. } => Some(*opinion),
            Extraction::Triplet(t) => Some(t.opinion),
        }
    }

    pub fn polarity(&self) -> Option<Polarity> {
        match self {
            Extraction::Aesc { polarity, .. } => Some(*polarity),
            Extraction::Pair { .. } => None,
            Extraction::Triplet(t) => Some(t.polarity),
        }
    }

    /// Narrows this extraction to `subtask`, or `None` if it lacks a field
    /// the subtask needs.
    pub fn project(&self, subtask: SubtaskKind) -> Option<Extraction> {
        match (self, subtask) {
            (Extraction::Triplet(t), s) => Some(t.project(s)),
            (e @ Extraction::Aesc { .. }, SubtaskKind::Aesc) => Some(*e),
            (e @ Extraction::Pair { .. }, SubtaskKind::Pair) => Some(*e),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubtaskKind {
    Aesc,
    Pair,
    Triplet,
}

impl SubtaskKind {
    pub const ALL: [SubtaskKind; 3] = [SubtaskKind::Aesc, SubtaskKind::Pair, SubtaskKind::Triplet];

    /// Indices per base prediction.
    pub fn group_size(self) -> usize {
        match self {
            SubtaskKind::Aesc => 3,
            SubtaskKind::Pair => 4,
            SubtaskKind::Triplet => 5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SubtaskKind::Aesc => "aesc",
            SubtaskKind::Pair => "pair",
            SubtaskKind::Triplet => "triplet",
        }
    }
}

impl fmt::Display for SubtaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SubtaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "aesc" => Ok(SubtaskKind::Aesc),
            "pair" => Ok(SubtaskKind::Pair),
            "triplet" => Ok(SubtaskKind::Triplet),
            other => Err(Error::Argument(format!("unknown subtask {other:?}"))),
        }
    }
}

/// A tokenized sentence with its gold triplets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AnnotatedSentence {
    #[serde(skip_serializing_if = "String::is_empty")]
    pub id: String,
    pub raw_text: String,
    pub words: Vec<String>,
    pub triplets: Vec<Triplet>,
}

impl AnnotatedSentence {
    pub fn new(
        id: impl Into<String>,
        raw_text: impl Into<String>,
        words: Vec<String>,
        triplets: Vec<Triplet>,
    ) -> Result<Self> {
        let sentence = AnnotatedSentence {
            id: id.into(),
            raw_text: raw_text.into(),
            words,
            triplets,
        };
        sentence.validate()?;
        Ok(sentence)
    }

    /// Builds a sentence from whitespace-separated text.
    pub fn from_text(id: impl Into<String>, text: &str, triplets: Vec<Triplet>) -> Result<Self> {
        let words = text.split_whitespace().map(str::to_owned).collect();
        Self::new(id, text, words, triplets)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.words.len();
        if n == 0 {
            return Err(Error::validation("sentence has no words"));
        }
        let mut pairs = BTreeSet::new();
        for t in &self.triplets {
            if !t.aspect.fits(n) || !t.opinion.fits(n) {
                return Err(Error::validation(format!(
                    "triplet ({}, {}, {}) out of bounds for {n} words",
                    t.aspect, t.opinion, t.polarity
                )));
            }
            if !pairs.insert((t.aspect, t.opinion)) {
                return Err(Error::validation(format!(
                    "duplicate aspect-opinion pair ({}, {})",
                    t.aspect, t.opinion
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn aspects(&self) -> BTreeSet<Span> {
        self.triplets.iter().map(|t| t.aspect).collect()
    }

    pub fn opinions(&self) -> BTreeSet<Span> {
        self.triplets.iter().map(|t| t.opinion).collect()
    }

    pub fn gold_pairs(&self) -> BTreeSet<(Span, Span)> {
        self.triplets.iter().map(|t| (t.aspect, t.opinion)).collect()
    }

    /// Gold annotation projected onto `subtask`.
    pub fn project(&self, subtask: SubtaskKind) -> BTreeSet<Extraction> {
        self.triplets.iter().map(|t| t.project(subtask)).collect()
    }

    /// More than one distinct aspect or more than one distinct opinion.
    pub fn is_multi_triplet(&self) -> bool {
        self.aspects().len() > 1 || self.opinions().len() > 1
    }

    pub fn span_text(&self, span: Span) -> String {
        span.words(&self.words).join(" ")
    }
}

impl<'de> Deserialize<'de> for AnnotatedSentence {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            #[serde(default)]
            id: String,
            raw_text: String,
            words: Vec<String>,
            #[serde(default)]
            triplets: Vec<Triplet>,
        }
        let raw = Raw::deserialize(deserializer)?;
        AnnotatedSentence::new(raw.id, raw.raw_text, raw.words, raw.triplets)
            .map_err(serde::de::Error::custom)
    }
}

/// Flat index encoding of one sentence's annotation for one subtask.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetSequence {
    pub indices: Vec<usize>,
    pub n: usize,
    pub class_count: usize,
    pub subtask: SubtaskKind,
}

impl TargetSequence {
    pub fn new(indices: Vec<usize>, n: usize, subtask: SubtaskKind) -> Self {
        TargetSequence {
            indices,
            n,
            class_count: Polarity::COUNT,
            subtask,
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn is_pointer(&self, index: usize) -> bool {
        (1..=self.n).contains(&index)
    }

    pub fn max_index(&self) -> usize {
        self.n + self.class_count
    }
}

/// Malformed-group counts collected while decoding.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceDiagnostics {
    pub err_length_count: usize,
    pub err_order_count: usize,
    pub total_groups: usize,
}

impl SequenceDiagnostics {
    pub fn valid_groups(&self) -> usize {
        self.total_groups - self.err_length_count - self.err_order_count
    }

    pub fn is_clean(&self) -> bool {
        self.err_length_count == 0 && self.err_order_count == 0
    }
}

impl std::ops::AddAssign for SequenceDiagnostics {
    fn add_assign(&mut self, rhs: Self) {
        self.err_length_count += rhs.err_length_count;
        self.err_order_count += rhs.err_order_count;
        self.total_groups += rhs.total_groups;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polarity_order_is_fixed() {
        assert!(Polarity::Positive < Polarity::Negative);
        assert!(Polarity::Negative < Polarity::Neutral);
        assert_eq!(Polarity::Neutral.rank(), 2);
    }

    #[test]
    fn span_rejects_zero_and_inverted() {
        assert!(Span::new(0, 1).is_err());
        assert!(Span::new(3, 2).is_err());
        assert_eq!(Span::new(2, 4).unwrap().len(), 3);
    }

    #[test]
    fn sentence_rejects_duplicate_pairs_and_out_of_bounds() {
        let a = Span::word(1).unwrap();
        let o = Span::word(2).unwrap();
        let dup = vec![
            Triplet::new(a, o, Polarity::Positive),
            Triplet::new(a, o, Polarity::Negative),
        ];
        assert!(AnnotatedSentence::from_text("", "x y", dup).is_err());
        let oob = vec![Triplet::new(a, Span::word(3).unwrap(), Polarity::Positive)];
        assert!(AnnotatedSentence::from_text("", "x y", oob).is_err());
        assert!(AnnotatedSentence::from_text("", "", vec![]).is_err());
    }

    #[test]
    fn sentence_json_uses_plain_spans() {
        let s = AnnotatedSentence::from_text(
            "s1",
            "Good Sushi",
            vec![Triplet::new(Span::word(2).unwrap(), Span::word(1).unwrap(), Polarity::Positive)],
        )
        .unwrap();
        let json = serde_json::to_string(&s).unwrap();
        assert!(json.contains(r#""aspect":[2,2]"#), "{json}");
        assert!(json.contains(r#""polarity":"POS""#), "{json}");
        let back: AnnotatedSentence = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
    }
}
