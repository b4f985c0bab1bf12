//! Chart quantities against exhaustive enumeration.

mod common;

use common::*;
use ctrlgen_core::semicrf::{
    brute_force_oracle, entropy, log_partition, map_segmentation, posterior,
    sample_segmentation, score_segmentation, span_marginals, Sampler, Segmentation, Span,
};
use rand::Rng;

#[test]
fn partition_entropy_marginals_and_map_match_enumeration() {
    let mut rng = rng(2024);
    for _ in 0..250 {
        let pt = random_small_table(&mut rng);
        let all = enumerate(&pt);

        let lz = log_partition(&pt);
        let olz = oracle_log_z(&pt);
        assert!((lz - olz).abs() <= 1e-6 * olz.abs().max(1.0), "{lz} vs {olz}");

        let h = entropy(&pt);
        assert!((h - oracle_entropy(&pt)).abs() < 1e-6);

        let q = span_marginals(&pt);
        for i in 0..pt.len() {
            for d in 1..=pt.max_len_at(i) {
                for c in 0..pt.labels() {
                    let o = oracle_span_marginal(&all, i, d, c);
                    assert!((q.get(i, d, c) - o).abs() < 1e-8);
                }
            }
        }

        let (z, score) = map_segmentation(&pt);
        let best = brute_force_oracle(&pt)
            .unwrap()
            .into_iter()
            .map(|(_, s)| s)
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((score - score_segmentation(&z, &pt).unwrap()).abs() < 1e-12);
        assert!((score - best).abs() < 1e-12);
    }
}

#[test]
fn token_marginals_normalize_and_match_enumeration() {
    let mut rng = rng(7);
    for _ in 0..100 {
        let pt = random_small_table(&mut rng);
        let all = enumerate(&pt);
        let tok = span_marginals(&pt).token_marginals();
        for (t, row) in tok.iter().enumerate() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            for (c, &v) in row.iter().enumerate() {
                let o: f64 = all
                    .iter()
                    .filter(|(z, _)| z.token_labels()[t] == c)
                    .map(|(_, p)| p)
                    .sum();
                assert!((v - o).abs() < 1e-8);
            }
        }
    }
}

#[test]
fn transition_and_start_counts_match_enumeration() {
    let mut rng = rng(99);
    for _ in 0..50 {
        let pt = random_small_table(&mut rng);
        let all = enumerate(&pt);
        let post = posterior(&pt);
        let k = pt.labels();
        for a in 0..k {
            let start: f64 = all
                .iter()
                .filter(|(z, _)| z.spans()[0].label == a)
                .map(|(_, p)| p)
                .sum();
            assert!((post.start[a] - start).abs() < 1e-8);
            for b in 0..k {
                let count: f64 = all
                    .iter()
                    .map(|(z, p)| {
                        let n = z
                            .spans()
                            .windows(2)
                            .filter(|w| w[0].label == a && w[1].label == b)
                            .count();
                        n as f64 * p
                    })
                    .sum();
                assert!((post.transition[a * k + b] - count).abs() < 1e-8);
            }
        }
    }
}

#[test]
fn score_matches_direct_factor_lookup() {
    let mut rng = rng(3);
    let pt = random_table(&mut rng, 4, 3, 2, 1.5);
    for (z, score) in brute_force_oracle(&pt).unwrap() {
        let spans = z.spans();
        let mut direct = pt.start(spans[0].label);
        for w in spans.windows(2) {
            direct += pt.transition(w[0].label, w[1].label);
        }
        for s in spans {
            direct += pt.emission(s.start, s.end - s.start, s.label) + pt.length(s.end - s.start);
        }
        assert!((score - direct).abs() < 1e-12);
    }
}

#[test]
fn entropy_of_lifted_half_potential_matches_enumeration() {
    // Two segmentations {(0,1)(1,2)} and {(0,2)} with the second at phi = 0.5.
    let mut pt = ctrlgen_core::semicrf::PotentialTable::zeros(2, 2, 1).unwrap();
    pt.set_emission(0, 2, 0, 0.5f64.ln());
    let p: [f64; 2] = [1.0 / 1.5, 0.5 / 1.5];
    let expected = -(p[0] * p[0].ln() + p[1] * p[1].ln());
    assert!((entropy(&pt) - expected).abs() < 1e-12);
    assert!((oracle_entropy(&pt) - expected).abs() < 1e-12);
}

#[test]
fn linear_chain_special_case_matches_independent_forward_algorithm() {
    let mut rng = rng(41);
    for _ in 0..50 {
        let len = rng.random_range(1..=12);
        let k = rng.random_range(1..=4);
        let pt = random_table(&mut rng, len, 1, k, 2.0);
        // Plain HMM-style forward recursion over unary and pairwise scores.
        let unary = |t: usize, c: usize| pt.emission(t, 1, c) + pt.length(1);
        let mut alpha: Vec<f64> = (0..k).map(|c| pt.start(c) + unary(0, c)).collect();
        for t in 1..len {
            alpha = (0..k)
                .map(|c| {
                    let terms: Vec<f64> = (0..k).map(|p| alpha[p] + pt.transition(p, c)).collect();
                    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    m + terms.iter().map(|x| (x - m).exp()).sum::<f64>().ln() + unary(t, c)
                })
                .collect();
        }
        let m = alpha.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lz = m + alpha.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        assert!((log_partition(&pt) - lz).abs() < 1e-9);
    }
}

#[test]
fn sampler_frequencies_match_marginals() {
    let mut rng = rng(5);
    let pt = random_table(&mut rng, 5, 3, 3, 1.0);
    let q = span_marginals(&pt);
    let sampler = Sampler::new(&pt);
    let n = 20_000;
    let mut counts = vec![0usize; 5 * 3 * 3];
    for _ in 0..n {
        let z: Segmentation = sampler.sample(&mut rng);
        for s in z.spans() {
            counts[(s.start * 3 + s.len() - 1) * 3 + s.label] += 1;
        }
    }
    for i in 0..5 {
        for d in 1..=pt.max_len_at(i) {
            for c in 0..3 {
                let f = counts[(i * 3 + d - 1) * 3 + c] as f64 / n as f64;
                assert!((f - q.get(i, d, c)).abs() < 0.02);
            }
        }
    }
}

#[test]
fn seeded_sampling_is_reproducible_and_valid() {
    let mut rng = rng(8);
    let pt = random_table(&mut rng, 6, 3, 2, 1.0);
    for seed in 0..20 {
        let z = sample_segmentation(&pt, seed);
        z.validate(6, 3, 2).unwrap();
        assert_eq!(z, sample_segmentation(&pt, seed));
    }
    let _ = Span::new(0, 1, 0);
}
