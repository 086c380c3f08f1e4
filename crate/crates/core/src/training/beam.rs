//! Length-capped beam search over 1-based candidate indices.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::model::{AbsaModel, EncodedSentence};

/// Next-index log-probabilities given a prefix. Entry `i` of the returned
/// vector scores index `i + 1`.
pub trait StepScorer {
    fn candidate_count(&self) -> usize;

    /// 1-based index that terminates a hypothesis.
    fn end_index(&self) -> usize;

    fn log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamHypothesis {
    /// Generated indices, without the end index.
    pub indices: Vec<usize>,
    pub log_prob: f64,
    pub finished: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamOutput {
    pub best: BeamHypothesis,
    /// No hypothesis produced the end index within `max_len` steps.
    pub truncated: bool,
}

/// Higher score first; on equal scores the lexicographically smaller index
/// sequence wins.
fn rank(a: &(Vec<usize>, f64), b: &(Vec<usize>, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

/// `max_len` bounds the number of generated indices, the end index included.
pub fn beam_generate<S: StepScorer + ?Sized>(scorer: &S, beam_size: usize, max_len: usize) -> Result<BeamOutput> {
    if beam_size == 0 {
        return Err(Error::Argument("beam size must be at least 1".into()));
    }
    if max_len == 0 {
        return Err(Error::Argument("max_len must be at least 1".into()));
    }
    let end = scorer.end_index();
    let count = scorer.candidate_count();
    let mut live: Vec<(Vec<usize>, f64)> = vec![(Vec::new(), 0.0)];
    let mut finished: Vec<(Vec<usize>, f64)> = Vec::new();

    for _ in 0..max_len {
        let mut expansions = Vec::with_capacity(live.len() * count);
        for (prefix, score) in &live {
            let lp = scorer.log_probs(prefix)?;
            if lp.len() != count {
                return Err(Error::Shape(format!("scorer returned {} entries, expected {count}", lp.len())));
            }
            for (i, l) in lp.iter().enumerate() {
                if *l == f64::NEG_INFINITY {
                    continue;
                }
                let mut next = prefix.clone();
                next.push(i + 1);
                expansions.push((next, score + l));
            }
        }
        if expansions.is_empty() {
            return Err(Error::InputFormat("every candidate has zero probability".into()));
        }
        expansions.sort_by(rank);
        expansions.truncate(beam_size);
        live.clear();
        for (mut seq, score) in expansions {
            if seq.last() == Some(&end) {
                seq.pop();
                finished.push((seq, score));
            } else {
                live.push((seq, score));
            }
        }
        finished.sort_by(rank);
        // Scores only fall as prefixes grow, so a finished hypothesis that
        // beats every live one can no longer be overtaken.
        let best_live = live.iter().map(|h| h.1).fold(f64::NEG_INFINITY, f64::max);
        if live.is_empty() || finished.len() >= beam_size || finished.first().is_some_and(|f| f.1 >= best_live) {
            break;
        }
    }

    if let Some((indices, log_prob)) = finished.into_iter().next() {
        return Ok(BeamOutput {
            best: BeamHypothesis {
                indices,
                log_prob,
                finished: true,
            },
            truncated: false,
        });
    }
    live.sort_by(rank);
    let (indices, log_prob) = live.into_iter().next().expect("beam never empties without finishing");
    Ok(BeamOutput {
        best: BeamHypothesis {
            indices,
            log_prob,
            finished: false,
        },
        truncated: true,
    })
}

/// Stepwise argmax with the lower index winning ties.
pub fn greedy_generate<S: StepScorer + ?Sized>(scorer: &S, max_len: usize) -> Result<BeamOutput> {
    let end = scorer.end_index();
    let mut indices = Vec::new();
    let mut log_prob = 0.0;
    for _ in 0..max_len {
        let lp = scorer.log_probs(&indices)?;
        let (best, score) = lp
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &l)| if l > acc.1 { (i, l) } else { acc });
        log_prob += score;
        if best + 1 == end {
            return Ok(BeamOutput {
                best: BeamHypothesis {
                    indices,
                    log_prob,
                    finished: true,
                },
                truncated: false,
            });
        }
        indices.push(best + 1);
    }
    Ok(BeamOutput {
        best: BeamHypothesis {
            indices,
            log_prob,
            finished: false,
        },
        truncated: true,
    })
}

/// Scores next indices with a model over one encoded sentence.
pub struct ModelScorer<'a> {
    pub model: &'a AbsaModel,
    pub encoded: &'a EncodedSentence,
}

impl StepScorer for ModelScorer<'_> {
    fn candidate_count(&self) -> usize {
        self.encoded.candidate_count()
    }

    fn end_index(&self) -> usize {
        self.encoded.end_index()
    }

    fn log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>> {
        self.model.step_log_probs(self.encoded, prefix)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use std::collections::HashMap;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Random but prefix-deterministic log-probabilities.
    pub(crate) struct TableScorer {
        pub count: usize,
        pub seed: u64,
        pub peak: f64,
        pub cache: std::cell::RefCell<HashMap<Vec<usize>, Vec<f64>>>,
    }

    impl TableScorer {
        pub(crate) fn new(count: usize, seed: u64, peak: f64) -> Self {
            TableScorer {
                count,
                seed,
                peak,
                cache: Default::default(),
            }
        }
    }

    impl StepScorer for TableScorer {
        fn candidate_count(&self) -> usize {
            self.count
        }
        fn end_index(&self) -> usize {
            self.count
        }
        fn log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>> {
            let mut cache = self.cache.borrow_mut();
            let entry = cache.entry(prefix.to_vec()).or_insert_with(|| {
                let mut h = self.seed;
                for &p in prefix {
                    h = h.wrapping_mul(1_000_003).wrapping_add(p as u64);
                }
                let mut rng = ChaCha8Rng::seed_from_u64(h);
                let logits: Vec<f64> = (0..self.count).map(|_| rng.random::<f64>() * self.peak).collect();
                let z = logits.iter().map(|l| l.exp()).sum::<f64>().ln();
                logits.iter().map(|l| l - z).collect()
            });
            Ok(entry.clone())
        }
    }

    /// Best finished sequence of at most `max_len` steps by exhaustive search.
    pub(crate) fn brute_force<S: StepScorer>(scorer: &S, max_len: usize) -> Option<(Vec<usize>, f64)> {
        let mut best: Option<(Vec<usize>, f64)> = None;
        let mut stack = vec![(Vec::new(), 0.0)];
        while let Some((prefix, score)) = stack.pop() {
            if prefix.len() >= max_len {
                continue;
            }
            let lp = scorer.log_probs(&prefix).unwrap();
            for (i, l) in lp.iter().enumerate() {
                let s = score + l;
                if i + 1 == scorer.end_index() {
                    let cand = (prefix.clone(), s);
                    if best.as_ref().is_none_or(|b| rank(&cand, b) == Ordering::Less) {
                        best = Some(cand);
                    }
                } else {
                    let mut next = prefix.clone();
                    next.push(i + 1);
                    stack.push((next, s));
                }
            }
        }
        best
    }

    #[test]
    fn beam_one_is_greedy() {
        for seed in 0..50 {
            let s = TableScorer::new(5, seed, 3.0);
            let b = beam_generate(&s, 1, 8).unwrap();
            let g = greedy_generate(&s, 8).unwrap();
            assert_eq!(b.best.indices, g.best.indices);
            assert_eq!(b.truncated, g.truncated);
        }
    }

    #[test]
    fn wide_beam_matches_exhaustive_search() {
        // With beam width >= all live prefixes the search is exhaustive.
        for seed in 0..20 {
            let s = TableScorer::new(3, seed, 4.0);
            let b = beam_generate(&s, 64, 5).unwrap();
            let (seq, score) = brute_force(&s, 5).unwrap();
            assert_eq!(b.best.indices, seq);
            assert!((b.best.log_prob - score).abs() < 1e-12);
        }
    }

    #[test]
    fn truncation_is_flagged() {
        struct Never;
        impl StepScorer for Never {
            fn candidate_count(&self) -> usize {
                2
            }
            fn end_index(&self) -> usize {
                2
            }
            fn log_probs(&self, _: &[usize]) -> Result<Vec<f64>> {
                Ok(vec![0.0, f64::NEG_INFINITY])
            }
        }
        let out = beam_generate(&Never, 3, 4).unwrap();
        assert!(out.truncated);
        assert_eq!(out.best.indices, vec![1, 1, 1, 1]);
    }

    #[test]
    fn ties_prefer_lower_index() {
        struct Flat;
        impl StepScorer for Flat {
            fn candidate_count(&self) -> usize {
                3
            }
            fn end_index(&self) -> usize {
                3
            }
            fn log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>> {
                let l = (1.0f64 / 3.0).ln();
                Ok(if prefix.is_empty() {
                    vec![l, l, f64::NEG_INFINITY]
                } else {
                    vec![f64::NEG_INFINITY, f64::NEG_INFINITY, 0.0]
                })
            }
        }
        assert_eq!(beam_generate(&Flat, 2, 5).unwrap().best.indices, vec![1]);
        assert_eq!(greedy_generate(&Flat, 5).unwrap().best.indices, vec![1]);
    }
}
