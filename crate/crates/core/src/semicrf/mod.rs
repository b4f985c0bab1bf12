//! Semi-Markov conditional random field over labeled segmentations.
//!
//! A sentence of `len` tokens is tiled by spans of at most `max_seg` tokens,
//! each carrying one of `labels` states. The score of a segmentation is the
//! product of one start potential, the transitions between consecutive span
//! labels, and an emission and length potential per span. All potentials are
//! stored as logs.
//!
//! Positions are 0-based and spans are half-open `[start, end)`. Alignment
//! tables written with 1-based token numbers map to `start = first - 1`,
//! `end = last`.

mod chart;
mod oracle;
mod sample;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use chart::{
    covariance, entropy, entropy_gradient, factor_totals, log_partition, log_partition_consistent,
    map_segmentation, posterior, run_chart, run_forward, span_marginals, token_marginals,
    ChartTables, DynamicChart, Factor, FactorTotals, ForwardTables, Posterior, SpanMarginals,
};
pub use oracle::{brute_force_oracle, ENUMERATION_LIMIT};
pub use sample::{sample_segmentation, Sampler};

/// The state inventory. The start symbol sits outside it and only appears
/// as the source of the initial transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSet {
    size: usize,
    names: Option<Vec<String>>,
}

impl LabelSet {
    pub fn new(size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::InvalidPotentials("label set must be non-empty".into()));
        }
        Ok(Self { size, names: None })
    }

    pub fn named(names: Vec<String>) -> Result<Self> {
        let mut set = Self::new(names.len())?;
        set.names = Some(names);
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    pub fn name(&self, label: usize) -> Option<&str> {
        self.names.as_ref()?.get(label).map(String::as_str)
    }
}

/// Log-potentials of one sentence.
///
/// `emission[(i, d, c)]` scores the span `[i, i + d)` labeled `c`; cells with
/// `d > len - i` exist but are never read. `start[c]` is the transition out of
/// the start symbol and `length[d - 1]` the label-free length potential.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialTable {
    len: usize,
    max_seg: usize,
    labels: usize,
    emission: Vec<f64>,
    transition: Vec<f64>,
    start: Vec<f64>,
    length: Vec<f64>,
}

impl PotentialTable {
    /// All log-potentials zero: the uniform distribution over segmentations.
    pub fn zeros(len: usize, max_seg: usize, labels: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::EmptySentence);
        }
        if max_seg == 0 || labels == 0 {
            return Err(Error::InvalidPotentials(format!(
                "max segment length ({max_seg}) and label count ({labels}) must be positive"
            )));
        }
        Ok(Self {
            len,
            max_seg,
            labels,
            emission: vec![0.0; len * max_seg * labels],
            transition: vec![0.0; labels * labels],
            start: vec![0.0; labels],
            length: vec![0.0; max_seg],
        })
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

    /// Longest span that may start at `i`.
    #[inline]
    pub fn max_len_at(&self, i: usize) -> usize {
        self.max_seg.min(self.len - i)
    }

    #[inline]
    fn emission_index(&self, i: usize, d: usize, c: usize) -> usize {
        debug_assert!(d >= 1 && d <= self.max_seg && i < self.len && c < self.labels);
        (i * self.max_seg + (d - 1)) * self.labels + c
    }

    #[inline]
    pub fn emission(&self, i: usize, d: usize, c: usize) -> f64 {
        self.emission[self.emission_index(i, d, c)]
    }

    pub fn set_emission(&mut self, i: usize, d: usize, c: usize, value: f64) {
        let k = self.emission_index(i, d, c);
        self.emission[k] = value;
    }

    /// Label scores of span `[i, i + d)` as a slice over labels.
    pub fn emission_row(&self, i: usize, d: usize) -> &[f64] {
        let k = self.emission_index(i, d, 0);
        &self.emission[k..k + self.labels]
    }

    pub fn emission_row_mut(&mut self, i: usize, d: usize) -> &mut [f64] {
        let k = self.emission_index(i, d, 0);
        &mut self.emission[k..k + self.labels]
    }

    #[inline]
    pub fn transition(&self, prev: usize, next: usize) -> f64 {
        self.transition[prev * self.labels + next]
    }

    pub fn set_transition(&mut self, prev: usize, next: usize, value: f64) {
        self.transition[prev * self.labels + next] = value;
    }

    #[inline]
    pub fn start(&self, c: usize) -> f64 {
        self.start[c]
    }

    pub fn set_start(&mut self, c: usize, value: f64) {
        self.start[c] = value;
    }

    #[inline]
    pub fn length(&self, d: usize) -> f64 {
        self.length[d - 1]
    }

    pub fn set_length(&mut self, d: usize, value: f64) {
        self.length[d - 1] = value;
    }

    /// Checks that every readable entry is finite.
    pub fn validate(&self) -> Result<()> {
        for i in 0..self.len {
            for d in 1..=self.max_len_at(i) {
                if let Some(&v) = self.emission_row(i, d).iter().find(|v| !v.is_finite()) {
                    return Err(Error::NonFinitePotential(v));
                }
            }
        }
        let rest = self.transition.iter().chain(&self.start).chain(&self.length);
        if let Some(&v) = rest.clone().find(|v| !v.is_finite()) {
            return Err(Error::NonFinitePotential(v));
        }
        Ok(())
    }

    /// The log-potentials themselves, laid out as a factor-weight vector.
    pub fn as_gradient(&self) -> PotentialGradient {
        PotentialGradient {
            len: self.len,
            max_seg: self.max_seg,
            labels: self.labels,
            emission: self.emission.clone(),
            transition: self.transition.clone(),
            start: self.start.clone(),
            length: self.length.clone(),
        }
    }
}

/// A vector in the space of log-potentials: gradients, or per-factor
/// weights of an additive statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialGradient {
    pub len: usize,
    pub max_seg: usize,
    pub labels: usize,
    pub emission: Vec<f64>,
    pub transition: Vec<f64>,
    pub start: Vec<f64>,
    pub length: Vec<f64>,
}

impl PotentialGradient {
    pub fn zeros(len: usize, max_seg: usize, labels: usize) -> Self {
        Self {
            len,
            max_seg,
            labels,
            emission: vec![0.0; len * max_seg * labels],
            transition: vec![0.0; labels * labels],
            start: vec![0.0; labels],
            length: vec![0.0; max_seg],
        }
    }

    pub fn zeros_like(pt: &PotentialTable) -> Self {
        Self {
            len: pt.len,
            max_seg: pt.max_seg,
            labels: pt.labels,
            emission: vec![0.0; pt.emission.len()],
            transition: vec![0.0; pt.transition.len()],
            start: vec![0.0; pt.start.len()],
            length: vec![0.0; pt.length.len()],
        }
    }

    #[inline]
    fn emission_index(&self, i: usize, d: usize, c: usize) -> usize {
        (i * self.max_seg + (d - 1)) * self.labels + c
    }

    #[inline]
    pub fn emission(&self, i: usize, d: usize, c: usize) -> f64 {
        self.emission[self.emission_index(i, d, c)]
    }

    #[inline]
    pub fn emission_mut(&mut self, i: usize, d: usize, c: usize) -> &mut f64 {
        let k = self.emission_index(i, d, c);
        &mut self.emission[k]
    }

    pub fn emission_row(&self, i: usize, d: usize) -> &[f64] {
        let k = self.emission_index(i, d, 0);
        &self.emission[k..k + self.labels]
    }

    #[inline]
    pub fn transition(&self, prev: usize, next: usize) -> f64 {
        self.transition[prev * self.labels + next]
    }

    #[inline]
    pub fn transition_mut(&mut self, prev: usize, next: usize) -> &mut f64 {
        &mut self.transition[prev * self.labels + next]
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &PotentialGradient, scale: f64) {
        let pairs = self
            .emission
            .iter_mut()
            .zip(&other.emission)
            .chain(self.transition.iter_mut().zip(&other.transition))
            .chain(self.start.iter_mut().zip(&other.start))
            .chain(self.length.iter_mut().zip(&other.length));
        for (a, b) in pairs {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        for v in self
            .emission
            .iter_mut()
            .chain(self.transition.iter_mut())
            .chain(self.start.iter_mut())
            .chain(self.length.iter_mut())
        {
            *v *= k;
        }
    }

    /// Adds the sufficient statistics of `z` (one count per factor it uses).
    pub fn add_counts(&mut self, z: &Segmentation, scale: f64) {
        let mut prev: Option<usize> = None;
        for span in z.spans() {
            let d = span.len();
            match prev {
                None => self.start[span.label] += scale,
                Some(p) => *self.transition_mut(p, span.label) += scale,
            }
            *self.emission_mut(span.start, d, span.label) += scale;
            self.length[d - 1] += scale;
            prev = Some(span.label);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.emission
            .iter()
            .chain(&self.transition)
            .chain(&self.start)
            .chain(&self.length)
            .all(|v| v.is_finite())
    }
}

/// A labeled half-open span `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub label: usize,
}

impl Span {
    pub fn new(start: usize, end: usize, label: usize) -> Self {
        Self { start, end, label }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

/// An ordered tiling of `[0, T)` by labeled spans.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Segmentation {
    spans: Vec<Span>,
}

impl Segmentation {
    /// Wraps spans without checking them; see [`Segmentation::validate`].
    pub fn new(spans: Vec<Span>) -> Self {
        Self { spans }
    }

    pub fn spans(&self) -> &[Span] {
        &self.spans
    }

    pub fn into_spans(self) -> Vec<Span> {
        self.spans
    }

    /// Number of tokens covered.
    pub fn coverage(&self) -> usize {
        self.spans.last().map_or(0, |s| s.end)
    }

    pub fn validate(&self, len: usize, max_seg: usize, labels: usize) -> Result<()> {
        let mut cursor = 0;
        for span in &self.spans {
            if span.start != cursor {
                return Err(Error::InvalidSegmentation(format!(
                    "span {span:?} does not start at position {cursor}"
                )));
            }
            if span.is_empty() || span.len() > max_seg {
                return Err(Error::InvalidSegmentation(format!(
                    "span {span:?} has length outside [1, {max_seg}]"
                )));
            }
            if span.label >= labels {
                return Err(Error::InvalidSegmentation(format!(
                    "span {span:?} uses a label outside 0..{labels}"
                )));
            }
            cursor = span.end;
        }
        if cursor != len {
            return Err(Error::InvalidSegmentation(format!(
                "spans cover {cursor} of {len} tokens"
            )));
        }
        Ok(())
    }

    /// Expands spans into one state per token.
    pub fn token_labels(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.coverage());
        for span in &self.spans {
            out.extend(core::iter::repeat(span.label).take(span.len()));
        }
        out
    }

    /// Groups maximal runs of equal states into spans, splitting runs longer
    /// than `max_seg`.
    pub fn from_token_labels(labels: &[usize], max_seg: usize) -> Self {
        let mut spans = Vec::new();
        let mut start = 0;
        for t in 1..=labels.len() {
            let run_ends = t == labels.len() || labels[t] != labels[start] || t - start == max_seg;
            if run_ends {
                spans.push(Span::new(start, t, labels[start]));
                start = t;
            }
        }
        Self { spans }
    }
}

/// `log phi(x, y, z)`: the sum of every log-potential `z` uses.
pub fn score_segmentation(z: &Segmentation, pt: &PotentialTable) -> Result<f64> {
    z.validate(pt.len, pt.max_seg, pt.labels)?;
    let mut score = 0.0;
    let mut prev: Option<usize> = None;
    for span in z.spans() {
        score += match prev {
            None => pt.start(span.label),
            Some(p) => pt.transition(p, span.label),
        };
        score += pt.emission(span.start, span.len(), span.label) + pt.length(span.len());
        prev = Some(span.label);
    }
    Ok(score)
}
