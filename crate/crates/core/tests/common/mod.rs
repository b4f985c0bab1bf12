#![allow(dead_code)]

use ctrlgen_core::semicrf::{brute_force_oracle, PotentialTable, Segmentation};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_table(rng: &mut impl Rng, len: usize, max_seg: usize, labels: usize, scale: f64) -> PotentialTable {
    let mut pt = PotentialTable::zeros(len, max_seg, labels).unwrap();
    for i in 0..len {
        for d in 1..=pt.max_len_at(i) {
            for c in 0..labels {
                pt.set_emission(i, d, c, rng.random_range(-scale..scale));
            }
        }
    }
    for a in 0..labels {
        pt.set_start(a, rng.random_range(-scale..scale));
        for b in 0..labels {
            pt.set_transition(a, b, rng.random_range(-scale..scale));
        }
    }
    for d in 1..=max_seg {
        pt.set_length(d, rng.random_range(-scale..scale));
    }
    pt
}

/// Normalized probabilities of every segmentation, from enumeration.
pub fn enumerate(pt: &PotentialTable) -> Vec<(Segmentation, f64)> {
    let all = brute_force_oracle(pt).unwrap();
    let max = all.iter().map(|(_, s)| *s).fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = all.iter().map(|(_, s)| (s - max).exp()).sum();
    all.into_iter()
        .map(|(seg, s)| (seg, (s - max).exp() / z))
        .collect()
}

pub fn oracle_log_z(pt: &PotentialTable) -> f64 {
    let all = brute_force_oracle(pt).unwrap();
    let max = all.iter().map(|(_, s)| *s).fold(f64::NEG_INFINITY, f64::max);
    max + all.iter().map(|(_, s)| (s - max).exp()).sum::<f64>().ln()
}

pub fn oracle_entropy(pt: &PotentialTable) -> f64 {
    -enumerate(pt)
        .iter()
        .filter(|(_, p)| *p > 0.0)
        .map(|(_, p)| p * p.ln())
        .sum::<f64>()
}

/// `q(z_{i:i+d} = c)` by summing enumerated probabilities.
pub fn oracle_span_marginal(all: &[(Segmentation, f64)], i: usize, d: usize, c: usize) -> f64 {
    all.iter()
        .filter(|(z, _)| {
            z.spans()
                .iter()
                .any(|s| s.start == i && s.len() == d && s.label == c)
        })
        .map(|(_, p)| p)
        .sum()
}

/// Random charts of the sizes the oracle suite covers.
pub fn random_small_table(rng: &mut impl Rng) -> PotentialTable {
    let len = rng.random_range(1..=6);
    let max_seg = rng.random_range(1..=3);
    let labels = rng.random_range(1..=3);
    random_table(rng, len, max_seg, labels, 2.0)
}
