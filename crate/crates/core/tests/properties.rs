mod common;

use absa_core::dataio::{few_shot_sample, DatasetSplit, FewShotSpec, SplitName};
use absa_core::evaluation::{exact_match_scores, multi_triplet_breakdown, SentenceTuples};
use absa_core::model::nn::Identity;
use absa_core::model::pointer_distribution;
use absa_core::prompting::{build_prompt_batch, PromptConfig, Template};
use absa_core::training::joint_loss;
use absa_core::{
    decode_indices, round_trip_check, AnnotatedSentence, Extraction, Polarity, Span, SubtaskKind, Triplet,
};
use candle_core::{Device, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn sentence_strategy(max_n: usize, max_triplets: usize) -> impl Strategy<Value = AnnotatedSentence> {
    (1..=max_n).prop_flat_map(move |n| {
        let span = (1..=n, 0..3usize).prop_map(move |(s, len)| Span::new(s, (s + len).min(n)).unwrap());
        let triplet = (span.clone(), span, 0..3usize)
            .prop_map(|(a, o, p)| Triplet::new(a, o, Polarity::ALL[p]));
        proptest::collection::vec(triplet, 0..=max_triplets).prop_map(move |ts| {
            let mut kept: Vec<Triplet> = Vec::new();
            for t in ts {
                if !kept.iter().any(|k| k.aspect == t.aspect && k.opinion == t.opinion) {
                    kept.push(t);
                }
            }
            let words: Vec<String> = (0..n).map(|i| format!("w{}", i % 7)).collect();
            AnnotatedSentence::new("p", words.join(" "), words, kept).unwrap()
        })
    })
}

fn indices_strategy() -> impl Strategy<Value = (usize, Vec<usize>)> {
    (1..=10usize).prop_flat_map(|n| (Just(n), proptest::collection::vec(1..=n + 3, 0..24)))
}

proptest! {
    #[test]
    fn round_trip_holds(s in sentence_strategy(30, 5)) {
        for subtask in SubtaskKind::ALL {
            prop_assert!(round_trip_check(&s, subtask));
        }
    }

    #[test]
    fn decoding_is_total_and_consistent((n, seq) in indices_strategy(), k in 0..3usize) {
        let subtask = SubtaskKind::ALL[k];
        let d = decode_indices(&seq, n, subtask).unwrap();
        let diag = d.diagnostics;
        prop_assert!(diag.err_length_count + diag.err_order_count <= diag.total_groups);
        prop_assert!(d.extractions.len() <= diag.valid_groups());
        for e in &d.extractions {
            prop_assert!(e.aspect().fits(n));
            prop_assert!(e.opinion().is_none_or(|o| o.fits(n)));
        }
    }

    #[test]
    fn out_of_range_indices_are_rejected((n, mut seq) in indices_strategy(), at in 0usize..24, zero in any::<bool>()) {
        let bad = if zero { 0 } else { n + 4 };
        let pos = at % (seq.len() + 1);
        seq.insert(pos, bad);
        prop_assert!(decode_indices(&seq, n, SubtaskKind::Triplet).is_err());
    }

    #[test]
    fn scores_are_bounded_and_gold_scores_perfectly(s in sentence_strategy(8, 4), seed in any::<u64>()) {
        let gold = vec![SentenceTuples::from(&s)];
        for subtask in SubtaskKind::ALL {
            let perfect = exact_match_scores(&gold, &gold, subtask).unwrap();
            if !s.triplets.is_empty() {
                prop_assert_eq!(perfect.f1, 1.0);
            }
            // noise predictions never raise the true-positive count above gold
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let noisy = common::random_sentence(&mut rng, "p", s.len(), 4);
            let pred = vec![SentenceTuples::new("p", noisy.triplets.iter().map(|t| Extraction::Triplet(*t)))];
            let r = exact_match_scores(&pred, &gold, subtask).unwrap();
            prop_assert!((0.0..=1.0).contains(&r.precision) && (0.0..=1.0).contains(&r.recall));
            prop_assert!(r.f1 <= r.precision.max(r.recall) + 1e-12);
            prop_assert!(r.true_positives <= r.gold.min(r.predicted));
        }
    }

    #[test]
    fn adding_a_correct_prediction_never_hurts_recall(s in sentence_strategy(8, 4), extra in 0usize..4) {
        prop_assume!(!s.triplets.is_empty());
        let gold = vec![SentenceTuples::from(&s)];
        let partial: Vec<Extraction> = s.triplets.iter().skip(1).map(|t| Extraction::Triplet(*t)).collect();
        let before = exact_match_scores(&[SentenceTuples::new("p", partial.clone())], &gold, SubtaskKind::Triplet).unwrap();
        let mut more = partial;
        more.push(Extraction::Triplet(s.triplets[extra % s.triplets.len()]));
        let after = exact_match_scores(&[SentenceTuples::new("p", more)], &gold, SubtaskKind::Triplet).unwrap();
        prop_assert!(after.true_positives >= before.true_positives);
        prop_assert!(after.recall >= before.recall);
    }

    #[test]
    fn multi_triplet_slice_is_a_subset(ss in proptest::collection::vec(sentence_strategy(8, 3), 1..6)) {
        let golds: Vec<SentenceTuples> = ss
            .iter()
            .enumerate()
            .map(|(i, s)| SentenceTuples::new(format!("s{i}"), SentenceTuples::from(s).tuples))
            .collect();
        let preds: Vec<SentenceTuples> = golds
            .iter()
            .map(|g| SentenceTuples::new(g.id.clone(), g.tuples.iter().skip(1).cloned()))
            .collect();
        for subtask in SubtaskKind::ALL {
            let all = exact_match_scores(&preds, &golds, subtask).unwrap();
            let slice = multi_triplet_breakdown(&preds, &golds, subtask).unwrap();
            prop_assert!(slice.scores.true_positives <= all.true_positives);
            prop_assert!(slice.scores.gold <= all.gold);
            prop_assert!(slice.sentences <= golds.len());
            prop_assert_eq!(slice.empty, slice.sentences == 0);
        }
    }

    #[test]
    fn prompt_labels_match_gold_membership(s in sentence_strategy(12, 4), seed in any::<u64>(), t in 0usize..4, prob in 0.0..=1.0f64) {
        prop_assume!(!s.triplets.is_empty());
        let template = &Template::presets()[t];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let config = PromptConfig { k_samples: 3, manipulation_prob: prob };
        for sample in build_prompt_batch(&s, template, &config, &mut rng).unwrap() {
            let gold = s.gold_pairs().contains(&(sample.aspect, sample.opinion));
            prop_assert_eq!(sample.consistent, gold);
            prop_assert_eq!(sample.mask_count(), if gold { 2 } else { 1 });
            prop_assert!(sample.aspect.fits(s.len()) && sample.opinion.fits(s.len()));
        }
    }

    #[test]
    fn few_shot_subsets_are_deterministic_sorted_subsets(total in 1usize..300, fraction in 0.01..=1.0f64, seed in any::<u64>()) {
        let sentences: Vec<AnnotatedSentence> = (0..total)
            .map(|i| AnnotatedSentence::from_text(format!("{i}"), "a b", vec![]).unwrap())
            .collect();
        let split = DatasetSplit::new(SplitName::Train, sentences, "v");
        let spec = FewShotSpec { fraction, seed };
        let a = few_shot_sample(&split, spec).unwrap();
        let b = few_shot_sample(&split, spec).unwrap();
        prop_assert_eq!(&a.sentences, &b.sentences);
        prop_assert_eq!(a.len(), ((fraction * total as f64 + 1e-9).floor() as usize).max(1));
        let ids: Vec<usize> = a.sentences.iter().map(|s| s.id.parse().unwrap()).collect();
        prop_assert!(ids.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn pointer_distribution_is_normalised(n in 1usize..12, d in 1usize..10, alpha in 0.0..=1.0f64, seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = |r: usize| {
            let v: Vec<f64> = (0..r * d).map(|_| rng.random::<f64>() * 6.0 - 3.0).collect();
            Tensor::from_vec(v, (r, d), &Device::Cpu).unwrap()
        };
        let (h, e, c, ht) = (m(n), m(n), m(3), m(1));
        let p = pointer_distribution(&h, &e, &c, &ht, alpha, &Identity).unwrap().to_vec1::<f64>().unwrap();
        prop_assert_eq!(p.len(), n + 3);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn joint_loss_is_linear(a in 0.0..5.0f64, b in 0.0..5.0f64, w1 in 0.0..3.0f64, w2 in 0.0..3.0f64, k in 0.0..4.0f64) {
        let t = |x: f64| Tensor::new(x, &Device::Cpu).unwrap();
        let j = |p: f64, g: f64| joint_loss(&t(p), &t(g), w1, w2).unwrap().to_scalar::<f64>().unwrap();
        prop_assert!((j(a + k, b) - j(a, b) - w1 * k).abs() < 1e-9);
        prop_assert!((j(a, b + k) - j(a, b) - w2 * k).abs() < 1e-9);
    }
}
