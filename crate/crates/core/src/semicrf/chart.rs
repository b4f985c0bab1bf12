use alloc::vec;
use alloc::vec::Vec;

use super::{PotentialGradient, PotentialTable, Segmentation, Span};
use crate::error::{Error, Result};
use crate::math::exp;
use crate::semiring::{
    Expectation, ExpectationSemiring, LogSemiring, MaxSemiring, Scored, Semiring,
    SemiringElement, SemiringKind, SumProduct,
};

/// One factor of the segmentation score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Factor {
    Start { label: usize },
    Transition { prev: usize, next: usize },
    Emission { start: usize, len: usize, label: usize },
    Length { len: usize },
}

impl Factor {
    fn log_potential(self, pt: &PotentialTable) -> f64 {
        match self {
            Factor::Start { label } => pt.start(label),
            Factor::Transition { prev, next } => pt.transition(prev, next),
            Factor::Emission { start, len, label } => pt.emission(start, len, label),
            Factor::Length { len } => pt.length(len),
        }
    }
}

/// Backward tables: `beta[t][c]` sums suffixes starting at the boundary `t`
/// after a span labeled `c`; `beta_prime[t][c]` sums suffixes whose next span
/// starts at `t` with label `c`. Both are `(T + 1) x |C|`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChartTables<E> {
    labels: usize,
    beta: Vec<E>,
    beta_prime: Vec<E>,
}

impl<E: Copy> ChartTables<E> {
    #[inline]
    pub fn beta(&self, t: usize, c: usize) -> E {
        self.beta[t * self.labels + c]
    }

    #[inline]
    pub fn beta_prime(&self, t: usize, c: usize) -> E {
        self.beta_prime[t * self.labels + c]
    }
}

/// Forward tables: `alpha[t][c]` sums prefixes ending at `t` with a span
/// labeled `c`; `alpha_prime[t][c]` sums prefixes that continue with a span
/// labeled `c` starting at `t`, transition included.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTables<E> {
    labels: usize,
    alpha: Vec<E>,
    alpha_prime: Vec<E>,
}

impl<E: Copy> ForwardTables<E> {
    #[inline]
    pub fn alpha(&self, t: usize, c: usize) -> E {
        self.alpha[t * self.labels + c]
    }

    #[inline]
    pub fn alpha_prime(&self, t: usize, c: usize) -> E {
        self.alpha_prime[t * self.labels + c]
    }
}

/// Right-to-left chart over an arbitrary factor embedding.
pub fn inside_with<S, F>(pt: &PotentialTable, lift: F) -> (ChartTables<S::Elem>, S::Elem)
where
    S: Semiring,
    F: Fn(Factor, f64) -> S::Elem,
{
    let (n, k) = (pt.len(), pt.labels());
    let mut beta = vec![S::zero(); (n + 1) * k];
    let mut beta_prime = vec![S::zero(); (n + 1) * k];
    let lengths: Vec<S::Elem> = (1..=pt.max_seg())
        .map(|d| lift(Factor::Length { len: d }, pt.length(d)))
        .collect();
    let transitions: Vec<S::Elem> = (0..k * k)
        .map(|ix| {
            let f = Factor::Transition {
                prev: ix / k,
                next: ix % k,
            };
            lift(f, f.log_potential(pt))
        })
        .collect();
    for c in 0..k {
        beta[n * k + c] = S::one();
    }
    for i in (0..n).rev() {
        for c in 0..k {
            let mut acc = S::zero();
            for d in 1..=pt.max_len_at(i) {
                let f = Factor::Emission {
                    start: i,
                    len: d,
                    label: c,
                };
                let cand = S::times(
                    S::times(beta[(i + d) * k + c], lengths[d - 1]),
                    lift(f, f.log_potential(pt)),
                );
                acc = S::plus(acc, S::tag(cand, d as u32));
            }
            beta_prime[i * k + c] = acc;
        }
        for c in 0..k {
            let mut acc = S::zero();
            for next in 0..k {
                let cand = S::times(beta_prime[i * k + next], transitions[c * k + next]);
                acc = S::plus(acc, S::tag(cand, next as u32));
            }
            beta[i * k + c] = acc;
        }
    }
    let mut total = S::zero();
    for c in 0..k {
        let f = Factor::Start { label: c };
        let cand = S::times(beta_prime[c], lift(f, f.log_potential(pt)));
        total = S::plus(total, S::tag(cand, c as u32));
    }
    (
        ChartTables {
            labels: k,
            beta,
            beta_prime,
        },
        total,
    )
}

/// Left-to-right chart; its total equals the inside total.
pub fn forward_with<S, F>(pt: &PotentialTable, lift: F) -> (ForwardTables<S::Elem>, S::Elem)
where
    S: Semiring,
    F: Fn(Factor, f64) -> S::Elem,
{
    let (n, k) = (pt.len(), pt.labels());
    let mut alpha = vec![S::zero(); (n + 1) * k];
    let mut alpha_prime = vec![S::zero(); (n + 1) * k];
    let lengths: Vec<S::Elem> = (1..=pt.max_seg())
        .map(|d| lift(Factor::Length { len: d }, pt.length(d)))
        .collect();
    for c in 0..k {
        let f = Factor::Start { label: c };
        alpha_prime[c] = lift(f, f.log_potential(pt));
    }
    for j in 1..=n {
        for c in 0..k {
            let mut acc = S::zero();
            for d in 1..=pt.max_seg().min(j) {
                let i = j - d;
                let f = Factor::Emission {
                    start: i,
                    len: d,
                    label: c,
                };
                let cand = S::times(
                    S::times(alpha_prime[i * k + c], lengths[d - 1]),
                    lift(f, f.log_potential(pt)),
                );
                acc = S::plus(acc, cand);
            }
            alpha[j * k + c] = acc;
        }
        if j < n {
            for c in 0..k {
                let mut acc = S::zero();
                for prev in 0..k {
                    let f = Factor::Transition { prev, next: c };
                    let cand = S::times(alpha[j * k + prev], lift(f, f.log_potential(pt)));
                    acc = S::plus(acc, cand);
                }
                alpha_prime[j * k + c] = acc;
            }
        }
    }
    let mut total = S::zero();
    for c in 0..k {
        total = S::plus(total, alpha[n * k + c]);
    }
    (
        ForwardTables {
            labels: k,
            alpha,
            alpha_prime,
        },
        total,
    )
}

/// Runs the backward chart under semiring `S`, returning the tables and the
/// total over all segmentations.
pub fn run_chart<S: Semiring>(pt: &PotentialTable) -> (ChartTables<S::Elem>, S::Elem) {
    inside_with::<S, _>(pt, |_, log_phi| S::lift(log_phi))
}

pub fn run_forward<S: Semiring>(pt: &PotentialTable) -> (ForwardTables<S::Elem>, S::Elem) {
    forward_with::<S, _>(pt, |_, log_phi| S::lift(log_phi))
}

/// Chart tables for a semiring picked at runtime.
#[derive(Debug, Clone, PartialEq)]
pub enum DynamicChart {
    SumProduct(ChartTables<f64>),
    Log(ChartTables<f64>),
    Max(ChartTables<Scored>),
    Expectation(ChartTables<Expectation>),
}

impl DynamicChart {
    pub fn run(pt: &PotentialTable, kind: SemiringKind) -> Result<(Self, SemiringElement)> {
        pt.validate()?;
        Ok(match kind {
            SemiringKind::SumProduct => {
                let (c, z) = run_chart::<SumProduct>(pt);
                (Self::SumProduct(c), SemiringElement::SumProduct(z))
            }
            SemiringKind::Log => {
                let (c, z) = run_chart::<LogSemiring>(pt);
                (Self::Log(c), SemiringElement::Log(z))
            }
            SemiringKind::Max => {
                let (c, z) = run_chart::<MaxSemiring>(pt);
                (Self::Max(c), SemiringElement::Max(z))
            }
            SemiringKind::Expectation => {
                let (c, z) = run_chart::<ExpectationSemiring>(pt);
                (Self::Expectation(c), SemiringElement::Expectation(z))
            }
        })
    }
}

/// `log Z`.
pub fn log_partition(pt: &PotentialTable) -> f64 {
    run_chart::<LogSemiring>(pt).1
}

/// Log-mass of the segmentations whose token expansion equals `labels`.
pub fn log_partition_consistent(pt: &PotentialTable, labels: &[usize]) -> Result<f64> {
    if labels.len() != pt.len() {
        return Err(Error::LengthMismatch {
            tokens: pt.len(),
            states: labels.len(),
        });
    }
    let (_, total) = inside_with::<LogSemiring, _>(pt, |f, log_phi| match f {
        Factor::Emission { start, len, label }
            if labels[start..start + len].iter().any(|&l| l != label) =>
        {
            f64::NEG_INFINITY
        }
        Factor::Start { label } if labels[0] != label => f64::NEG_INFINITY,
        _ => log_phi,
    });
    Ok(total)
}

/// Highest-scoring segmentation and its log-score. Ties prefer the smaller
/// label, then the shorter span, left to right.
pub fn map_segmentation(pt: &PotentialTable) -> (Segmentation, f64) {
    let (chart, total) = run_chart::<MaxSemiring>(pt);
    let mut spans = Vec::new();
    let mut label = total.decision.expect("non-empty label set") as usize;
    let mut i = 0;
    while i < pt.len() {
        let d = chart
            .beta_prime(i, label)
            .decision
            .expect("every position has a span") as usize;
        spans.push(Span::new(i, i + d, label));
        i += d;
        if i < pt.len() {
            label = chart.beta(i, label).decision.expect("transition decision") as usize;
        }
    }
    (Segmentation::new(spans), total.score)
}

/// Shannon entropy of `q(z)`, via the expectation semiring: `R / Z + log Z`.
pub fn entropy(pt: &PotentialTable) -> f64 {
    let (_, total) = run_chart::<ExpectationSemiring>(pt);
    (total.ratio + total.log_p).max(0.0)
}

/// Per-factor semiring totals `(+)_{z uses u} w(z)`. Transition and length
/// factors are shared across positions and accumulate over all of them.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorTotals<E> {
    pub total: E,
    pub emission: Vec<E>,
    pub transition: Vec<E>,
    pub start: Vec<E>,
    pub length: Vec<E>,
}

/// Combines forward and backward tables into per-factor totals under any
/// commutative semiring.
pub fn factor_totals_with<S, F>(pt: &PotentialTable, lift: F) -> FactorTotals<S::Elem>
where
    S: Semiring,
    F: Fn(Factor, f64) -> S::Elem + Copy,
{
    let (n, k, l) = (pt.len(), pt.labels(), pt.max_seg());
    let (back, total) = inside_with::<S, _>(pt, lift);
    let (fwd, _) = forward_with::<S, _>(pt, lift);
    let lengths: Vec<S::Elem> = (1..=l)
        .map(|d| lift(Factor::Length { len: d }, pt.length(d)))
        .collect();
    let mut emission = vec![S::zero(); n * l * k];
    let mut length = vec![S::zero(); l];
    for i in 0..n {
        for d in 1..=pt.max_len_at(i) {
            for c in 0..k {
                let f = Factor::Emission {
                    start: i,
                    len: d,
                    label: c,
                };
                let w = S::times(
                    S::times(fwd.alpha_prime(i, c), lengths[d - 1]),
                    S::times(lift(f, f.log_potential(pt)), back.beta(i + d, c)),
                );
                emission[(i * l + d - 1) * k + c] = w;
                length[d - 1] = S::plus(length[d - 1], w);
            }
        }
    }
    let mut transition = vec![S::zero(); k * k];
    for prev in 0..k {
        for next in 0..k {
            let f = Factor::Transition { prev, next };
            let phi = lift(f, f.log_potential(pt));
            let mut acc = S::zero();
            for t in 1..n {
                acc = S::plus(
                    acc,
                    S::times(S::times(fwd.alpha(t, prev), phi), back.beta_prime(t, next)),
                );
            }
            transition[prev * k + next] = acc;
        }
    }
    let start = (0..k)
        .map(|c| {
            let f = Factor::Start { label: c };
            S::times(lift(f, f.log_potential(pt)), back.beta_prime(0, c))
        })
        .collect();
    FactorTotals {
        total,
        emission,
        transition,
        start,
        length,
    }
}

pub fn factor_totals<S: Semiring>(pt: &PotentialTable) -> FactorTotals<S::Elem> {
    factor_totals_with::<S, _>(pt, |_, log_phi| S::lift(log_phi))
}

/// Span marginals `q(z_{i:i+d} = c)`, indexed like the emission table.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanMarginals {
    len: usize,
    max_seg: usize,
    labels: usize,
    data: Vec<f64>,
}

impl SpanMarginals {
    /// Wraps values laid out like the emission table, `[i][d - 1][c]`.
    pub fn from_data(len: usize, max_seg: usize, labels: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), len * max_seg * labels, "span marginal layout");
        Self {
            len,
            max_seg,
            labels,
            data,
        }
    }

    /// The raw `[i][d - 1][c]` buffer.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn max_seg(&self) -> usize {
        self.max_seg
    }

    pub fn labels(&self) -> usize {
        self.labels
    }

    /// Longest span starting at `i`.
    pub fn max_len_at(&self, i: usize) -> usize {
        self.max_seg.min(self.len - i)
    }

    /// Marginal of span `[i, i + d)` with label `c`; zero outside the chart.
    #[inline]
    pub fn get(&self, i: usize, d: usize, c: usize) -> f64 {
        if d == 0 || d > self.max_seg || i + d > self.len {
            return 0.0;
        }
        self.data[(i * self.max_seg + d - 1) * self.labels + c]
    }

    /// Marginal of the span `[start, end)` labeled `c`.
    pub fn span(&self, start: usize, end: usize, c: usize) -> f64 {
        if end <= start {
            return 0.0;
        }
        self.get(start, end - start, c)
    }

    /// `q(z_t = c)` for every token: sums of the span marginals covering `t`.
    pub fn token_marginals(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.labels]; self.len];
        for i in 0..self.len {
            for d in 1..=self.max_len_at(i) {
                for c in 0..self.labels {
                    let q = self.get(i, d, c);
                    for row in &mut out[i..i + d] {
                        row[c] += q;
                    }
                }
            }
        }
        out
    }

    /// Expected number of spans labeled `c`.
    pub fn expected_usage(&self, c: usize) -> f64 {
        let mut total = 0.0;
        for i in 0..self.len {
            for d in 1..=self.max_len_at(i) {
                total += self.get(i, d, c);
            }
        }
        total
    }
}

/// Exact posterior statistics of `q`: `log Z` and the expected count of every
/// factor.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub log_z: f64,
    pub spans: SpanMarginals,
    pub transition: Vec<f64>,
    pub start: Vec<f64>,
    pub length: Vec<f64>,
}

impl Posterior {
    /// Expected counts as a vector in log-potential space; this is also the
    /// gradient of `log Z`.
    pub fn as_gradient(&self) -> PotentialGradient {
        PotentialGradient {
            len: self.spans.len,
            max_seg: self.spans.max_seg,
            labels: self.spans.labels,
            emission: self.spans.data.clone(),
            transition: self.transition.clone(),
            start: self.start.clone(),
            length: self.length.clone(),
        }
    }
}

pub fn posterior(pt: &PotentialTable) -> Posterior {
    let totals = factor_totals::<LogSemiring>(pt);
    let log_z = totals.total;
    let norm = |v: Vec<f64>| -> Vec<f64> { v.into_iter().map(|x| exp(x - log_z)).collect() };
    Posterior {
        log_z,
        spans: SpanMarginals {
            len: pt.len(),
            max_seg: pt.max_seg(),
            labels: pt.labels(),
            data: norm(totals.emission),
        },
        transition: norm(totals.transition),
        start: norm(totals.start),
        length: norm(totals.length),
    }
}

pub fn span_marginals(pt: &PotentialTable) -> SpanMarginals {
    posterior(pt).spans
}

pub fn token_marginals(pt: &PotentialTable) -> Vec<Vec<f64>> {
    span_marginals(pt).token_marginals()
}

/// `Cov_q(n_u(z), s(z))` for every factor `u`, where `n_u` counts uses of
/// `u` and `s(z) = sum_u w_u n_u(z)` is the additive statistic with weights
/// `w`. This is the Hessian of `log Z` applied to `w`, which is how
/// functions of the marginals are differentiated.
pub fn covariance(pt: &PotentialTable, weights: &PotentialGradient) -> PotentialGradient {
    let totals = factor_totals_with::<ExpectationSemiring, _>(pt, |f, log_phi| {
        let w = match f {
            Factor::Start { label } => weights.start[label],
            Factor::Transition { prev, next } => weights.transition(prev, next),
            Factor::Emission { start, len, label } => weights.emission(start, len, label),
            Factor::Length { len } => weights.length[len - 1],
        };
        Expectation::weighted(log_phi, w)
    });
    let log_z = totals.total.log_p;
    let mean = totals.total.ratio;
    let cov = |e: &Expectation| -> f64 {
        if e.log_p == f64::NEG_INFINITY {
            0.0
        } else {
            exp(e.log_p - log_z) * (e.ratio - mean)
        }
    };
    let mut out = PotentialGradient::zeros_like(pt);
    for (o, e) in out.emission.iter_mut().zip(&totals.emission) {
        *o = cov(e);
    }
    for (o, e) in out.transition.iter_mut().zip(&totals.transition) {
        *o = cov(e);
    }
    for (o, e) in out.start.iter_mut().zip(&totals.start) {
        *o = cov(e);
    }
    for (o, e) in out.length.iter_mut().zip(&totals.length) {
        *o = cov(e);
    }
    out
}

/// Gradient of the entropy with respect to every log-potential:
/// `-Cov(n_u, log phi(z))`.
pub fn entropy_gradient(pt: &PotentialTable) -> PotentialGradient {
    let mut g = covariance(pt, &pt.as_gradient());
    g.scale(-1.0);
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::ln;
    use core::f64::consts::LN_2;

    fn uniform(len: usize, max_seg: usize, labels: usize) -> PotentialTable {
        PotentialTable::zeros(len, max_seg, labels).unwrap()
    }

    #[test]
    fn two_token_chart_counts_two_segmentations() {
        let pt = uniform(2, 2, 1);
        assert!((run_chart::<SumProduct>(&pt).1 - 2.0).abs() < 1e-12);
        assert!((log_partition(&pt) - LN_2).abs() < 1e-12);
        let (_, z) = DynamicChart::run(&pt, SemiringKind::SumProduct).unwrap();
        assert_eq!(z, SemiringElement::SumProduct(2.0));
    }

    #[test]
    fn forced_segmentation_has_zero_log_partition_and_entropy() {
        let pt = uniform(3, 1, 1);
        assert!(log_partition(&pt).abs() < 1e-12);
        assert!(entropy(&pt).abs() < 1e-12);
    }

    #[test]
    fn entropy_of_two_equal_segmentations_is_log_two() {
        assert!((entropy(&uniform(2, 2, 1)) - LN_2).abs() < 1e-12);
    }

    #[test]
    fn dominant_span_wins_map() {
        let mut pt = uniform(2, 2, 1);
        pt.set_emission(0, 2, 0, 1.0);
        let (z, score) = map_segmentation(&pt);
        assert_eq!(z.spans(), &[Span::new(0, 2, 0)]);
        assert!((score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_map_uses_the_tie_break() {
        let (z, score) = map_segmentation(&uniform(3, 2, 2));
        assert_eq!(
            z.spans(),
            &[Span::new(0, 1, 0), Span::new(1, 2, 0), Span::new(2, 3, 0)]
        );
        assert_eq!(score, 0.0);
    }

    #[test]
    fn uniform_marginals_split_evenly() {
        let q = span_marginals(&uniform(2, 2, 1));
        assert!((q.get(0, 2, 0) - 0.5).abs() < 1e-12);
        assert!((q.get(0, 1, 0) - 0.5).abs() < 1e-12);
        let tok = q.token_marginals();
        assert!((tok[0][0] - 1.0).abs() < 1e-12 && (tok[1][0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn saturated_chart_has_one_hot_marginals() {
        let mut pt = uniform(4, 2, 3);
        // Reward spans (0,2,label 1) and (2,4,label 2) heavily.
        pt.set_emission(0, 2, 1, 30.0);
        pt.set_emission(2, 2, 2, 30.0);
        let q = span_marginals(&pt);
        assert!(q.get(0, 2, 1) > 1.0 - 1e-9);
        assert!(q.get(2, 2, 2) > 1.0 - 1e-9);
        let tok = q.token_marginals();
        let (map, _) = map_segmentation(&pt);
        for (row, label) in tok.iter().zip(map.token_labels()) {
            assert!(row[label] > 1.0 - 1e-9);
        }
    }

    #[test]
    fn consistent_partition_restricts_to_one_label_sequence() {
        let pt = uniform(3, 3, 2);
        // Labels [0, 0, 1]: tilings of the first run {(0,1)(1,2)}, {(0,2)}.
        let lz = log_partition_consistent(&pt, &[0, 0, 1]).unwrap();
        assert!((lz - ln(2.0)).abs() < 1e-12);
        assert!(log_partition_consistent(&pt, &[0, 1]).is_err());
    }

    #[test]
    fn forward_and_backward_totals_agree() {
        let mut pt = uniform(5, 3, 2);
        let mut v = 0.1;
        for i in 0..5 {
            for d in 1..=pt.max_len_at(i) {
                for c in 0..2 {
                    v = (v * 7.3 + 0.37) % 1.9 - 0.9;
                    pt.set_emission(i, d, c, v);
                }
            }
        }
        pt.set_transition(0, 1, 0.4);
        pt.set_start(1, -0.3);
        let a = run_forward::<LogSemiring>(&pt).1;
        let b = log_partition(&pt);
        assert!((a - b).abs() < 1e-12);
    }
}
