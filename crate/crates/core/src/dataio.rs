//! Dataset import, export, few-shot sampling and corpus statistics.
//!
//! Two on-disk formats are understood:
//!
//! * `jsonl`: one [`AnnotatedSentence`] per line with 1-based inclusive spans,
//!   `{"raw_text": .., "words": [..], "triplets": [{"aspect": [s, e], "opinion": [s, e], "polarity": "POS"}]}`.
//! * `legacy`: the benchmark text format,
//!   `sentence####[([aspect idxs], [opinion idxs], 'POS'), ...]` with 0-based
//!   word indices.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{AnnotatedSentence, Polarity, Span, Triplet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Dev,
    Test,
}

impl SplitName {
    /// Guesses the split from a file name such as `train_triplets.txt`.
    pub fn infer(path: &Path) -> SplitName {
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().to_ascii_lowercase())
            .unwrap_or_default();
        if stem.contains("test") {
            SplitName::Test
        } else if stem.contains("dev") || stem.contains("valid") {
            SplitName::Dev
        } else {
            SplitName::Train
        }
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitName::Train => "train",
            SplitName::Dev => "dev",
            SplitName::Test => "test",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    Jsonl,
    Legacy,
}

impl DatasetFormat {
    /// `.jsonl`/`.json` files are canonical; anything else is legacy text.
    pub fn from_extension(path: &Path) -> DatasetFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl" | "json") => DatasetFormat::Jsonl,
            _ => DatasetFormat::Legacy,
        }
    }
}

impl FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" => Ok(DatasetFormat::Jsonl),
            "legacy" | "txt" => Ok(DatasetFormat::Legacy),
            other => Err(Error::Argument(format!("unknown dataset format {other:?}"))),
        }
    }
}

/// An immutable, validated list of sentences.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub name: SplitName,
    pub sentences: Vec<AnnotatedSentence>,
    pub source_version: String,
    /// Set when the source file held no sentences.
    pub empty_source: bool,
}

impl DatasetSplit {
    pub fn new(name: SplitName, sentences: Vec<AnnotatedSentence>, source_version: impl Into<String>) -> Self {
        let empty_source = sentences.is_empty();
        DatasetSplit {
            name,
            sentences,
            source_version: source_version.into(),
            empty_source,
        }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn max_triplets(&self) -> usize {
        self.sentences.iter().map(|s| s.triplets.len()).max().unwrap_or(0)
    }
}

/// Parses one line of the legacy triplet format.
pub fn parse_legacy_line(line: &str) -> Result<AnnotatedSentence> {
    parse_legacy_line_at(line, 1)
}

fn parse_legacy_line_at(line: &str, line_no: usize) -> Result<AnnotatedSentence> {
    let parse_err = |message: String| Error::Parse {
        line: line_no,
        message,
    };
    let (text, annotation) = line
        .split_once("####")
        .ok_or_else(|| parse_err("missing '####' separator".into()))?;
    let words: Vec<String> = text.split_whitespace().map(str::to_owned).collect();
    let raw = LegacyParser::new(annotation)
        .parse()
        .map_err(parse_err)?;

    let with_line = |e: Error| match e {
        Error::Validation { message, .. } => Error::Validation {
            line: Some(line_no),
            message,
        },
        other => other,
    };
    let mut triplets = Vec::with_capacity(raw.len());
    for (aspect, opinion, tag) in raw {
        let aspect = contiguous_span(&aspect).map_err(with_line)?;
        let opinion = contiguous_span(&opinion).map_err(with_line)?;
        let polarity = tag.parse::<Polarity>().map_err(with_line)?;
        triplets.push(Triplet::new(aspect, opinion, polarity));
    }
    AnnotatedSentence::new(String::new(), text.trim(), words, triplets).map_err(with_line)
}

/// Converts a 0-based contiguous index list into a 1-based span.
fn contiguous_span(indices: &[usize]) -> Result<Span> {
    let (first, last) = match (indices.first(), indices.last()) {
        (Some(&f), Some(&l)) => (f, l),
        _ => return Err(Error::validation("empty word-index list")),
    };
    if indices.windows(2).any(|w| w[1] != w[0] + 1) {
        return Err(Error::validation(format!(
            "non-contiguous word-index list {indices:?}"
        )));
    }
    Span::new(first + 1, last + 1)
}

type RawTriplet = (Vec<usize>, Vec<usize>, String);

/// Recursive-descent reader for `[([..], [..], 'TAG'), ...]`.
struct LegacyParser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> LegacyParser<'a> {
    fn new(src: &'a str) -> Self {
        LegacyParser {
            src: src.as_bytes(),
            pos: 0,
        }
    }

    fn parse(mut self) -> std::result::Result<Vec<RawTriplet>, String> {
        let mut out = Vec::new();
        self.expect(b'[')?;
        if !self.eat(b']') {
            loop {
                out.push(self.tuple()?);
                if self.eat(b']') {
                    break;
                }
                self.expect(b',')?;
            }
        }
        self.skip_ws();
        if self.pos != self.src.len() {
            return Err(format!("trailing characters at column {}", self.pos + 1));
        }
        Ok(out)
    }

    fn tuple(&mut self) -> std::result::Result<RawTriplet, String> {
        self.expect(b'(')?;
        let aspect = self.int_list()?;
        self.expect(b',')?;
        let opinion = self.int_list()?;
        self.expect(b',')?;
        let tag = self.quoted()?;
        self.expect(b')')?;
        Ok((aspect, opinion, tag))
    }

    fn int_list(&mut self) -> std::result::Result<Vec<usize>, String> {
        let mut out = Vec::new();
        self.expect(b'[')?;
        if self.eat(b']') {
            return Ok(out);
        }
        loop {
            out.push(self.int()?);
            if self.eat(b']') {
                return Ok(out);
            }
            self.expect(b',')?;
        }
    }

    fn int(&mut self) -> std::result::Result<usize, String> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(format!("expected an integer at column {}", start + 1));
        }
        std::str::from_utf8(&self.src[start..self.pos])
            .unwrap()
            .parse()
            .map_err(|e| format!("bad integer: {e}"))
    }

    fn quoted(&mut self) -> std::result::Result<String, String> {
        self.skip_ws();
        let quote = match self.src.get(self.pos) {
            Some(&q @ (b'\'' | b'"')) => q,
            _ => return Err(format!("expected a quoted polarity at column {}", self.pos + 1)),
        };
        self.pos += 1;
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos] != quote {
            self.pos += 1;
        }
        if self.pos == self.src.len() {
            return Err("unterminated polarity string".into());
        }
        let tag = String::from_utf8_lossy(&self.src[start..self.pos]).into_owned();
        self.pos += 1;
        Ok(tag)
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn eat(&mut self, c: u8) -> bool {
        self.skip_ws();
        if self.src.get(self.pos) == Some(&c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> std::result::Result<(), String> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(format!("expected '{}' at column {}", c as char, self.pos + 1))
        }
    }
}

/// Loads a split, validating every line. The split name is guessed from the
/// file name and the version tag from the parent directory.
pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<DatasetSplit> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut sentences = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut sentence = match format {
            DatasetFormat::Legacy => parse_legacy_line_at(line, line_no)?,
            DatasetFormat::Jsonl => serde_json::from_str::<AnnotatedSentence>(line).map_err(|e| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })?,
        };
        if sentence.id.is_empty() {
            sentence.id = format!("{stem}:{line_no}");
        }
        sentences.push(sentence);
    }
    let version = path
        .parent()
        .and_then(|p| p.file_name())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let split = DatasetSplit::new(SplitName::infer(path), sentences, version);
    if split.empty_source {
        log::warn!("{} contains no sentences", path.display());
    }
    Ok(split)
}

/// Writes `sentences` in the canonical jsonl format.
pub fn write_jsonl(path: &Path, sentences: &[AnnotatedSentence]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in sentences {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FewShotSpec {
    pub fraction: f64,
    pub seed: u64,
}

impl FewShotSpec {
    /// Subset size for a split of `total` sentences: `floor(fraction * total)`,
    /// at least one.
    pub fn subset_size(&self, total: usize) -> usize {
        // the epsilon keeps products like 0.29 * 100 from flooring to 28
        let k = (self.fraction * total as f64 + 1e-9).floor() as usize;
        k.clamp(1, total.max(1))
    }
}

/// Seeded uniform sample without replacement; kept sentences retain their
/// original order.
pub fn few_shot_sample(split: &DatasetSplit, spec: FewShotSpec) -> Result<DatasetSplit> {
    if !(spec.fraction > 0.0 && spec.fraction <= 1.0) {
        return Err(Error::Argument(format!(
            "few-shot fraction {} outside (0, 1]",
            spec.fraction
        )));
    }
    if split.is_empty() {
        return Err(Error::Argument("cannot sample from an empty split".into()));
    }
    let k = spec.subset_size(split.len());
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut chosen = rand::seq::index::sample(&mut rng, split.len(), k).into_vec();
    chosen.sort_unstable();
    let sentences = chosen.into_iter().map(|i| split.sentences[i].clone()).collect();
    Ok(DatasetSplit {
        name: split.name,
        sentences,
        source_version: split.source_version.clone(),
        empty_source: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_sentences: usize,
    pub n_triplets: usize,
    pub n_multi_triplet: usize,
}

pub fn dataset_stats(sentences: &[AnnotatedSentence]) -> DatasetStats {
    DatasetStats {
        n_sentences: sentences.len(),
        n_triplets: sentences.iter().map(|s| s.triplets.len()).sum(),
        n_multi_triplet: sentences.iter().filter(|s| s.is_multi_triplet()).count(),
    }
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "n_sentences={}", self.n_sentences)?;
        writeln!(f, "n_triplets={}", self.n_triplets)?;
        write!(f, "n_multi_triplet={}", self.n_multi_triplet)
    }
}
