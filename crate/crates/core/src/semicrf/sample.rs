use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::chart::{run_chart, ChartTables};
use super::{PotentialTable, Segmentation, Span};
use crate::math::exp;
use crate::semiring::LogSemiring;

/// Exact sampler: one backward chart under the log semiring, then
/// left-to-right categorical draws of label, length, next label, ...
#[derive(Debug, Clone)]
pub struct Sampler<'a> {
    pt: &'a PotentialTable,
    chart: ChartTables<f64>,
    log_z: f64,
}

impl<'a> Sampler<'a> {
    pub fn new(pt: &'a PotentialTable) -> Self {
        let (chart, log_z) = run_chart::<LogSemiring>(pt);
        Self { pt, chart, log_z }
    }

    pub fn log_partition(&self) -> f64 {
        self.log_z
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Segmentation {
        let pt = self.pt;
        let k = pt.labels();
        let mut weights = Vec::with_capacity(k.max(pt.max_seg()));

        weights.extend((0..k).map(|c| self.chart.beta_prime(0, c) + pt.start(c)));
        let mut label = draw(rng, &weights, self.log_z);

        let mut spans = Vec::new();
        let mut i = 0;
        loop {
            weights.clear();
            weights.extend((1..=pt.max_len_at(i)).map(|d| {
                self.chart.beta(i + d, label) + pt.length(d) + pt.emission(i, d, label)
            }));
            let d = draw(rng, &weights, self.chart.beta_prime(i, label)) + 1;
            spans.push(Span::new(i, i + d, label));
            i += d;
            if i == pt.len() {
                break;
            }
            weights.clear();
            weights.extend((0..k).map(|c| self.chart.beta_prime(i, c) + pt.transition(label, c)));
            label = draw(rng, &weights, self.chart.beta(i, label));
        }
        Segmentation::new(spans)
    }
}

/// Draws an index with probability `exp(w_i - log_norm)`.
fn draw<R: Rng + ?Sized>(rng: &mut R, log_weights: &[f64], log_norm: f64) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &w) in log_weights.iter().enumerate() {
        let p = exp(w - log_norm);
        if p > 0.0 {
            last = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last
}

/// One exact sample from `q`, deterministic in `seed`.
pub fn sample_segmentation(pt: &PotentialTable, seed: u64) -> Segmentation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Sampler::new(pt).sample(&mut rng)
}
