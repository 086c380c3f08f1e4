//! Shared generators for the integration tests.
#![allow(dead_code)]

use absa_core::{AnnotatedSentence, Polarity, Span, Triplet};
use rand::Rng;

pub fn random_span<R: Rng>(rng: &mut R, n: usize, max_len: usize) -> Span {
    let start = rng.random_range(1..=n);
    let end = (start + rng.random_range(0..max_len)).min(n);
    Span::new(start, end).unwrap()
}

pub fn random_polarity<R: Rng>(rng: &mut R) -> Polarity {
    Polarity::ALL[rng.random_range(0..3)]
}

/// A sentence of `1..=max_n` words with up to `max_triplets` triplets whose
/// (aspect, opinion) pairs are distinct.
pub fn random_sentence<R: Rng>(rng: &mut R, id: &str, max_n: usize, max_triplets: usize) -> AnnotatedSentence {
    let n = rng.random_range(1..=max_n);
    let words: Vec<String> = (0..n).map(|_| format!("w{}", rng.random_range(0..40))).collect();
    let want = rng.random_range(0..=max_triplets);
    let mut triplets: Vec<Triplet> = Vec::new();
    for _ in 0..want * 4 {
        if triplets.len() == want {
            break;
        }
        let t = Triplet::new(random_span(rng, n, 3), random_span(rng, n, 3), random_polarity(rng));
        if !triplets.iter().any(|u| u.aspect == t.aspect && u.opinion == t.opinion) {
            triplets.push(t);
        }
    }
    let text = words.join(" ");
    AnnotatedSentence::new(id, text, words, triplets).unwrap()
}

fn span(s: usize, e: usize) -> Span {
    Span::new(s, e).unwrap()
}

/// Eight short review sentences with known triplets, including multi-word
/// spans and sentences with two triplets.
pub fn overfit_corpus() -> Vec<AnnotatedSentence> {
    use Polarity::*;
    let rows: Vec<(&str, Vec<Triplet>)> = vec![
        (
            "the sushi was fresh and tasty",
            vec![
                Triplet::new(span(2, 2), span(4, 4), Positive),
                Triplet::new(span(2, 2), span(6, 6), Positive),
            ],
        ),
        ("service is slow", vec![Triplet::new(span(1, 1), span(3, 3), Negative)]),
        (
            "the wine list is interesting but overpriced",
            vec![
                Triplet::new(span(2, 3), span(5, 5), Positive),
                Triplet::new(span(2, 3), span(7, 7), Negative),
            ],
        ),
        (
            "decor is nice though the music is too loud",
            vec![
                Triplet::new(span(1, 1), span(3, 3), Positive),
                Triplet::new(span(6, 6), span(8, 9), Negative),
            ],
        ),
        ("food was okay", vec![Triplet::new(span(1, 1), span(3, 3), Neutral)]),
        (
            "great pizza and friendly staff",
            vec![
                Triplet::new(span(2, 2), span(1, 1), Positive),
                Triplet::new(span(5, 5), span(4, 4), Positive),
            ],
        ),
        ("the battery life is terrible", vec![Triplet::new(span(2, 3), span(5, 5), Negative)]),
        (
            "prices are average for the portion size",
            vec![Triplet::new(span(1, 1), span(3, 3), Neutral)],
        ),
    ];
    rows.into_iter()
        .enumerate()
        .map(|(i, (text, triplets))| AnnotatedSentence::from_text(format!("s{i}"), text, triplets).unwrap())
        .collect()
}
