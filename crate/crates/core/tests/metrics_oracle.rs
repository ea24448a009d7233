use proptest::prelude::*;
use qecs::corpus::{Language, Triple};
use qecs::encoder::sample_negative;
use qecs::metrics::{frank, mrr, recall_at_k, RankResult};
use qecs::ranker::build_eval_pools;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn harmonic(n: usize) -> f64 {
    (1..=n).map(|k| 1.0 / k as f64).sum()
}

fn random_pool_mrr(queries: usize, pool: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ranks: Vec<RankResult> = (0..queries)
        .map(|_| {
            let scores: Vec<(usize, f64)> = (0..pool).map(|i| (i, rng.gen())).collect();
            frank(&scores, &0).unwrap()
        })
        .collect();
    mrr(&ranks).unwrap()
}

#[test]
fn random_scorer_matches_harmonic_expectation() {
    let oracle = harmonic(1000) / 1000.0;
    assert!((oracle - 0.0075).abs() < 1e-4);
    let m = random_pool_mrr(2000, 1000, 3);
    assert!((m - oracle).abs() <= 0.002, "MRR {m} vs {oracle}");
}

#[test]
fn negative_sampling_is_uniform() {
    let ids: Vec<usize> = (0..20).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let draws = 19_000;
    let mut counts = [0usize; 20];
    for _ in 0..draws {
        let n = sample_negative(&ids, &0, &mut rng).unwrap();
        counts[n] += 1;
    }
    assert_eq!(counts[0], 0);
    let expected = draws as f64 / 19.0;
    let chi2: f64 = counts[1..]
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    // 18 degrees of freedom: mean 18, sd 6; allow five sd.
    assert!(chi2 < 18.0 + 5.0 * 6.0, "chi2 {chi2}");
}

#[test]
fn pool_negatives_cover_the_corpus_evenly() {
    let corpus: Vec<String> = (0..1100).map(|i| format!("c{i:04}")).collect();
    let test: Vec<Triple> = corpus[..300]
        .iter()
        .map(|id| Triple {
            id: id.clone(),
            language: Language::Synthetic,
            code: "x".into(),
            description: "y".into(),
            query: None,
        })
        .collect();
    let set = build_eval_pools(&test, &corpus, 5).unwrap();
    assert!(!set.fallback);
    let mut counts = vec![0usize; corpus.len()];
    for p in &set.pools {
        assert_eq!(p.negative_ids.len(), 999);
        assert!(!p.negative_ids.contains(&p.positive_id));
        for id in &p.negative_ids {
            counts[id[1..].parse::<usize>().unwrap()] += 1;
        }
    }
    // Ids outside the test split are eligible in all 300 pools, test ids in 299.
    let p: f64 = 999.0 / 1099.0;
    for (i, &c) in counts.iter().enumerate() {
        let trials = if i < 300 { 299.0 } else { 300.0 };
        let (mean, sd) = (trials * p, (trials * p * (1.0 - p)).sqrt());
        assert!(
            (c as f64 - mean).abs() < 5.0 * sd,
            "id {i}: {c} vs {mean:.1}"
        );
    }
}

fn brute_frank(scores: &[f64], positive: usize) -> usize {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap()
            .then_with(|| (a == positive).cmp(&(b == positive)))
    });
    order.iter().position(|&i| i == positive).unwrap() + 1
}

proptest! {
    #[test]
    fn frank_matches_sorting(
        scores in prop::collection::vec(prop_oneof![Just(0.0f64), Just(0.5), -1.0f64..1.0], 1..60),
        pick in any::<prop::sample::Index>(),
    ) {
        let positive = pick.index(scores.len());
        let keyed: Vec<(usize, f64)> = scores.iter().copied().enumerate().collect();
        let r = frank(&keyed, &positive).unwrap();
        prop_assert_eq!(r.frank, brute_frank(&scores, positive));
        prop_assert_eq!(r.pool_size, scores.len());
    }

    #[test]
    fn metrics_are_bounded(fr in prop::collection::vec(1usize..2000, 1..100)) {
        let ranks: Vec<RankResult> = fr.iter().map(|&f| RankResult { frank: f, pool_size: 2000 }).collect();
        let m = mrr(&ranks).unwrap();
        prop_assert!(m > 0.0 && m <= 1.0);
        prop_assert!(recall_at_k(&ranks, 1).unwrap() <= m + 1e-12);
    }
}
