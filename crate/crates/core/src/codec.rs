//! Conversion between triplet annotations and flat index sequences.
//!
//! Pointer indices address words (`1..=n`); class indices follow them
//! (`n+1..=n+l`) in the fixed polarity order POS, NEG, NEU.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::types::{
    AnnotatedSentence, Extraction, Polarity, SequenceDiagnostics, Span, SubtaskKind,
    TargetSequence, Triplet,
};

/// Class index of `polarity` for a sentence of `n` words.
pub fn class_index(n: usize, polarity: Polarity) -> usize {
    n + 1 + polarity.rank()
}

/// Encodes the gold triplets of `sentence` as the target sequence for
/// `subtask`. Groups are ordered by aspect start, then opinion start.
pub fn encode_targets(sentence: &AnnotatedSentence, subtask: SubtaskKind) -> TargetSequence {
    let n = sentence.len();
    let mut triplets = sentence.triplets.clone();
    triplets.sort_by_key(|t| (t.aspect.start(), t.opinion.start(), t.aspect, t.opinion, t.polarity));

    let mut indices = Vec::with_capacity(triplets.len() * subtask.group_size());
    let mut seen = BTreeSet::new();
    for t in &triplets {
        match subtask {
            SubtaskKind::Aesc => {
                if !seen.insert((t.aspect, t.polarity)) {
                    continue;
                }
                indices.extend([t.aspect.start(), t.aspect.end(), class_index(n, t.polarity)]);
            }
            SubtaskKind::Pair => {
                indices.extend([
                    t.aspect.start(),
                    t.aspect.end(),
                    t.opinion.start(),
                    t.opinion.end(),
                ]);
            }
            SubtaskKind::Triplet => {
                indices.extend([
                    t.aspect.start(),
                    t.aspect.end(),
                    t.opinion.start(),
                    t.opinion.end(),
                    class_index(n, t.polarity),
                ]);
            }
        }
    }
    TargetSequence::new(indices, n, subtask)
}

/// Result of decoding one index sequence.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Decoded {
    pub extractions: BTreeSet<Extraction>,
    pub diagnostics: SequenceDiagnostics,
}

pub fn decode_sequence(sequence: &TargetSequence) -> Result<Decoded> {
    decode_indices(&sequence.indices, sequence.n, sequence.subtask)
}

/// Decodes `indices` for a sentence of `n` words.
///
/// A class index closes the pending pointer buffer. Buffers of the wrong
/// size count as length errors, buffers whose start exceeds their end count
/// as order errors; neither aborts decoding. A pointer buffer still open at
/// the end of the sequence is one more length error. Pair sequences carry no
/// class indices and are cut every four pointers instead.
pub fn decode_indices(indices: &[usize], n: usize, subtask: SubtaskKind) -> Result<Decoded> {
    let max = n + Polarity::COUNT;
    if let Some(&bad) = indices.iter().find(|&&y| y == 0 || y > max) {
        return Err(Error::InputFormat(format!(
            "index {bad} outside [1, {max}] for a {n}-word sentence"
        )));
    }

    let mut out = Decoded::default();
    let mut buffer: Vec<usize> = Vec::with_capacity(4);
    let pointer_len = subtask.group_size() - usize::from(subtask != SubtaskKind::Pair);

    for &y in indices {
        if y <= n {
            buffer.push(y);
            if subtask == SubtaskKind::Pair && buffer.len() == 4 {
                close_group(&mut out, &buffer, None, subtask);
                buffer.clear();
            }
            continue;
        }
        let polarity = Polarity::from_rank(y - n - 1);
        if subtask == SubtaskKind::Pair || buffer.len() != pointer_len {
            out.diagnostics.total_groups += 1;
            out.diagnostics.err_length_count += 1;
        } else {
            close_group(&mut out, &buffer, polarity, subtask);
        }
        buffer.clear();
    }
    if !buffer.is_empty() {
        out.diagnostics.total_groups += 1;
        out.diagnostics.err_length_count += 1;
    }
    Ok(out)
}

/// Scores a correctly sized buffer: either an order error or a new extraction.
fn close_group(out: &mut Decoded, buffer: &[usize], polarity: Option<Polarity>, subtask: SubtaskKind) {
    out.diagnostics.total_groups += 1;
    let ordered = buffer.chunks(2).all(|pair| pair[0] <= pair[1]);
    if !ordered {
        out.diagnostics.err_order_count += 1;
        return;
    }
    // Spans built from ordered, nonzero indices cannot fail.
    let span = |i: usize| Span::new(buffer[i], buffer[i + 1]).expect("ordered span");
    let extraction = match (subtask, polarity) {
        (SubtaskKind::Aesc, Some(polarity)) => Extraction::Aesc {
            aspect: span(0),
            polarity,
        },
        (SubtaskKind::Pair, _) => Extraction::Pair {
            aspect: span(0),
            opinion: span(2),
        },
        (SubtaskKind::Triplet, Some(polarity)) => {
            Extraction::Triplet(Triplet::new(span(0), span(2), polarity))
        }
        _ => unreachable!("class-closed groups always carry a polarity"),
    };
    out.extractions.insert(extraction);
}

/// True iff encoding then decoding reproduces the projected gold annotation
/// with no malformed groups.
pub fn round_trip_check(sentence: &AnnotatedSentence, subtask: SubtaskKind) -> bool {
    let encoded = encode_targets(sentence, subtask);
    match decode_sequence(&encoded) {
        Ok(decoded) => decoded.diagnostics.is_clean() && decoded.extractions == sentence.project(subtask),
        Err(_) => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sushi() -> AnnotatedSentence {
        let w = |i| Span::word(i).unwrap();
        AnnotatedSentence::from_text(
            "sushi",
            "Good Sushi High Price",
            vec![
                Triplet::new(w(4), w(3), Polarity::Negative),
                Triplet::new(w(2), w(1), Polarity::Positive),
            ],
        )
        .unwrap()
    }

    fn triplet(a: (usize, usize), o: (usize, usize), p: Polarity) -> Extraction {
        Extraction::Triplet(Triplet::new(
            Span::new(a.0, a.1).unwrap(),
            Span::new(o.0, o.1).unwrap(),
            p,
        ))
    }

    #[test]
    fn encodes_triplet_layout() {
        let seq = encode_targets(&sushi(), SubtaskKind::Triplet);
        assert_eq!(seq.indices, vec![2, 2, 1, 1, 5, 4, 4, 3, 3, 6]);
    }

    #[test]
    fn encodes_aesc_and_pair_layouts() {
        assert_eq!(encode_targets(&sushi(), SubtaskKind::Aesc).indices, vec![2, 2, 5, 4, 4, 6]);
        assert_eq!(
            encode_targets(&sushi(), SubtaskKind::Pair).indices,
            vec![2, 2, 1, 1, 4, 4, 3, 3]
        );
    }

    #[test]
    fn aesc_deduplicates_shared_aspect_polarity() {
        let w = |i| Span::word(i).unwrap();
        let s = AnnotatedSentence::from_text(
            "",
            "great tasty pizza",
            vec![
                Triplet::new(w(3), w(1), Polarity::Positive),
                Triplet::new(w(3), w(2), Polarity::Positive),
            ],
        )
        .unwrap();
        assert_eq!(encode_targets(&s, SubtaskKind::Aesc).indices, vec![3, 3, 4]);
        assert!(round_trip_check(&s, SubtaskKind::Aesc));
    }

    #[test]
    fn empty_annotation_encodes_to_empty() {
        let s = AnnotatedSentence::from_text("", "fine .", vec![]).unwrap();
        for subtask in SubtaskKind::ALL {
            assert!(encode_targets(&s, subtask).is_empty());
            assert!(round_trip_check(&s, subtask));
        }
    }

    #[test]
    fn decodes_clean_sequence() {
        let d = decode_indices(&[2, 2, 1, 1, 5, 4, 4, 3, 3, 6], 4, SubtaskKind::Triplet).unwrap();
        let expected: BTreeSet<_> = [
            triplet((2, 2), (1, 1), Polarity::Positive),
            triplet((4, 4), (3, 3), Polarity::Negative),
        ]
        .into();
        assert_eq!(d.extractions, expected);
        assert_eq!(d.diagnostics, SequenceDiagnostics { total_groups: 2, ..Default::default() });
    }

    #[test]
    fn short_group_is_length_error() {
        let d = decode_indices(&[2, 2, 1, 5], 4, SubtaskKind::Triplet).unwrap();
        assert!(d.extractions.is_empty());
        assert_eq!(d.diagnostics.err_length_count, 1);
        assert_eq!(d.diagnostics.total_groups, 1);
    }

    #[test]
    fn inverted_span_is_order_error() {
        let d = decode_indices(&[2, 1, 1, 1, 5], 4, SubtaskKind::Triplet).unwrap();
        assert!(d.extractions.is_empty());
        assert_eq!(d.diagnostics.err_order_count, 1);
        assert_eq!(d.diagnostics.err_length_count, 0);
    }

    #[test]
    fn length_takes_precedence_over_order() {
        let d = decode_indices(&[3, 1, 2, 5], 4, SubtaskKind::Triplet).unwrap();
        assert_eq!(d.diagnostics.err_length_count, 1);
        assert_eq!(d.diagnostics.err_order_count, 0);
    }

    #[test]
    fn trailing_buffer_counts_as_length_error() {
        let d = decode_indices(&[2, 2, 1, 1, 5, 4, 4], 4, SubtaskKind::Triplet).unwrap();
        assert_eq!(d.extractions.len(), 1);
        assert_eq!(d.diagnostics.total_groups, 2);
        assert_eq!(d.diagnostics.err_length_count, 1);
    }

    #[test]
    fn empty_sequence_decodes_clean() {
        let d = decode_indices(&[], 4, SubtaskKind::Triplet).unwrap();
        assert!(d.extractions.is_empty());
        assert_eq!(d.diagnostics, SequenceDiagnostics::default());
    }

    #[test]
    fn out_of_range_is_input_error() {
        assert!(matches!(
            decode_indices(&[2, 8], 4, SubtaskKind::Triplet),
            Err(Error::InputFormat(_))
        ));
        assert!(decode_indices(&[0], 4, SubtaskKind::Triplet).is_err());
    }

    #[test]
    fn pair_decoding_uses_stride_four() {
        let d = decode_indices(&[2, 2, 1, 1, 4, 4, 3], 4, SubtaskKind::Pair).unwrap();
        assert_eq!(d.extractions.len(), 1);
        assert_eq!(d.diagnostics.err_length_count, 1);
        let d = decode_indices(&[2, 2, 5, 1, 1, 3, 4], 4, SubtaskKind::Pair).unwrap();
        // the class index breaks the first group; the second is a valid pair
        assert_eq!(d.diagnostics.err_length_count, 1);
        assert_eq!(d.extractions.len(), 1);
    }

    #[test]
    fn round_trips_shared_aspect() {
        let w = |i| Span::word(i).unwrap();
        let s = AnnotatedSentence::from_text(
            "",
            "cheap but slow service",
            vec![
                Triplet::new(w(4), w(1), Polarity::Positive),
                Triplet::new(w(4), w(3), Polarity::Negative),
            ],
        )
        .unwrap();
        for subtask in SubtaskKind::ALL {
            assert!(round_trip_check(&s, subtask), "{subtask}");
        }
        assert!(round_trip_check(&sushi(), SubtaskKind::Triplet));
    }
}
