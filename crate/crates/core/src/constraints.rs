//! Weak supervision from table-text overlap and the posterior penalties
//! built on it.
//!
//! Every penalty is a function of the span marginals (and, in one-to-many
//! mode, of the mapping logits `M`). Each returns its value together with the
//! gradient with respect to the span marginals laid out like the emission
//! table; [`crate::semicrf::covariance`] turns that into a gradient with
//! respect to the log-potentials.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{FieldInventory, Table};
use crate::error::{Error, Result};
use crate::math::{exp, ln, log_sum_exp, softmax};
use crate::semicrf::{PotentialGradient, SpanMarginals};

/// An aligned span `[start, end)` of the sentence and the global index of
/// the field it matches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Alignment {
    pub start: usize,
    pub end: usize,
    pub field: usize,
}

impl Alignment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    /// Splits into consecutive pieces of at most `max_seg` tokens.
    pub fn pieces(&self, max_seg: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.start..self.end)
            .step_by(max_seg)
            .map(move |s| (s, (s + max_seg).min(self.end)))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentSet {
    pub spans: Vec<Alignment>,
}

impl AlignmentSet {
    pub fn new(mut spans: Vec<Alignment>) -> Self {
        spans.sort();
        Self { spans }
    }

    pub fn len(&self) -> usize {
        self.spans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }

    pub fn contains(&self, start: usize, end: usize, field: usize) -> bool {
        self.spans
            .iter()
            .any(|a| a.start == start && a.end == end && a.field == field)
    }

    pub fn validate(&self, len: usize, active: &[usize]) -> Result<()> {
        for a in &self.spans {
            if a.start >= a.end || a.end > len {
                return Err(Error::InvalidSegmentation(alloc::format!(
                    "alignment [{}, {}) outside a sentence of {len} tokens",
                    a.start,
                    a.end
                )));
            }
            if !active.contains(&a.field) {
                return Err(Error::InvalidTable(alloc::format!(
                    "alignment to field {} which is not in the table",
                    a.field
                )));
            }
        }
        Ok(())
    }
}

fn fold(s: &str) -> String {
    s.to_lowercase()
}

/// Spans of `tokens` that reproduce a contiguous piece of some field value.
///
/// Candidates are maximal matches (they cannot be extended on either side).
/// Overlaps are resolved greedily: longest first, then leftmost, then the
/// field's position in the table. A value occurring twice is aligned twice.
pub fn extract_alignments(table: &Table, tokens: &[String], fields: &FieldInventory) -> Result<AlignmentSet> {
    let active = fields.active(table)?;
    let y: Vec<String> = tokens.iter().map(|t| fold(t)).collect();
    // (len, start, field order, global field)
    let mut candidates: Vec<(usize, usize, usize, usize)> = Vec::new();
    for (order, (field, &gf)) in table.fields.iter().zip(&active).enumerate() {
        let v: Vec<String> = field.value.iter().map(|t| fold(t)).collect();
        for s in 0..y.len() {
            for vs in 0..v.len() {
                if y[s] != v[vs] {
                    continue;
                }
                if s > 0 && vs > 0 && y[s - 1] == v[vs - 1] {
                    continue;
                }
                let mut n = 0;
                while s + n < y.len() && vs + n < v.len() && y[s + n] == v[vs + n] {
                    n += 1;
                }
                candidates.push((n, s, order, gf));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    candidates.dedup();
    let mut taken = vec![false; y.len()];
    let mut spans = Vec::new();
    for (n, s, _, gf) in candidates {
        if taken[s..s + n].iter().any(|&t| t) {
            continue;
        }
        taken[s..s + n].iter_mut().for_each(|t| *t = true);
        spans.push(Alignment {
            start: s,
            end: s + n,
            field: gf,
        });
    }
    Ok(AlignmentSet::new(spans))
}

/// Static one-to-one map `sigma: F -> C` plus the generic state used for
/// unaligned tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldStateMap {
    pub states: Vec<usize>,
    pub other: usize,
    pub num_states: usize,
}

impl FieldStateMap {
    /// Field `k` maps to state `k`; the generic state is `|F|`.
    pub fn identity(num_fields: usize, num_states: usize) -> Result<Self> {
        if num_states < num_fields + 1 {
            return Err(Error::InvalidConfig(alloc::format!(
                "{num_states} states cannot hold {num_fields} fields and a generic state"
            )));
        }
        Ok(Self {
            states: (0..num_fields).collect(),
            other: num_fields,
            num_states,
        })
    }

    pub fn state(&self, field: usize) -> usize {
        self.states[field]
    }

    /// The field whose state is `c`, if any.
    pub fn field_of(&self, c: usize) -> Option<usize> {
        self.states.iter().position(|&s| s == c)
    }

    pub fn num_fields(&self) -> usize {
        self.states.len()
    }
}

/// Learned soft map `sigma(c | f; M) = softmax(M_f)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicMapping {
    pub fields: usize,
    pub states: usize,
    pub logits: Vec<f64>,
}

impl DynamicMapping {
    pub fn zeros(fields: usize, states: usize) -> Self {
        Self {
            fields,
            states,
            logits: vec![0.0; fields * states],
        }
    }

    pub fn row(&self, f: usize) -> &[f64] {
        &self.logits[f * self.states..(f + 1) * self.states]
    }

    pub fn probs(&self, f: usize) -> Vec<f64> {
        softmax(self.row(f))
    }

    /// Most likely state of field `f`; ties go to the smaller index.
    pub fn argmax(&self, f: usize) -> usize {
        crate::math::argmax(self.row(f))
    }

    /// Hard map taken from the row argmaxes, for evaluation.
    pub fn hard_map(&self, other: usize) -> FieldStateMap {
        FieldStateMap {
            states: (0..self.fields).map(|f| self.argmax(f)).collect(),
            other,
            num_states: self.states,
        }
    }
}

/// Pulls a gradient on `softmax(m)` back to `m`.
fn softmax_backward(p: &[f64], g: &[f64], out: &mut [f64]) {
    let inner: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
    for k in 0..p.len() {
        out[k] += p[k] * (g[k] - inner);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConstraintMode {
    OneToOne,
    OneToMany,
}

/// The value of one penalty and its gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Penalty {
    pub value: f64,
    /// Gradient with respect to the span marginals, emission layout.
    pub grad: PotentialGradient,
    /// Gradient with respect to the mapping logits, when `M` is involved.
    pub grad_mapping: Option<Vec<f64>>,
    /// Marginals that hit the log floor.
    pub clamped: usize,
}

impl Penalty {
    fn new(q: &SpanMarginals) -> Self {
        Self {
            value: 0.0,
            grad: PotentialGradient::zeros(q.len(), q.max_seg(), q.labels()),
            grad_mapping: None,
            clamped: 0,
        }
    }
}

/// `sum_{(i,j,f) in A} [1 - q(z_{i:j} = sigma(f))]`. Aligned spans longer
/// than the maximum segment length are split into pieces, one unit each.
pub fn inclusion_penalty(q: &SpanMarginals, align: &AlignmentSet, sigma: &FieldStateMap) -> Penalty {
    let mut out = Penalty::new(q);
    for a in &align.spans {
        let c = sigma.state(a.field);
        for (s, e) in a.pieces(q.max_seg()) {
            out.value += 1.0 - q.span(s, e, c);
            *out.grad.emission_mut(s, e - s, c) -= 1.0;
        }
    }
    out
}

/// Mass that active fields' states put on chart spans not aligned to them.
pub fn exclusion_penalty(q: &SpanMarginals, align: &AlignmentSet, sigma: &FieldStateMap, active: &[usize]) -> Penalty {
    let mut out = Penalty::new(q);
    let mut seen: Vec<usize> = Vec::new();
    for &f in active {
        let c = sigma.state(f);
        let aligned: Vec<(usize, usize)> = align
            .spans
            .iter()
            .filter(|a| sigma.state(a.field) == c)
            .flat_map(|a| a.pieces(q.max_seg()))
            .collect();
        if seen.contains(&c) {
            continue;
        }
        seen.push(c);
        for i in 0..q.len() {
            for d in 1..=q.max_len_at(i) {
                if aligned.contains(&(i, i + d)) {
                    continue;
                }
                out.value += q.get(i, d, c);
                *out.grad.emission_mut(i, d, c) += 1.0;
            }
        }
    }
    out
}

/// `sum_{f in F} |E[#spans labeled sigma(f)] - 1(f in x)|`.
pub fn coverage_penalty(q: &SpanMarginals, sigma: &FieldStateMap, active: &[usize]) -> Penalty {
    let mut out = Penalty::new(q);
    for f in 0..sigma.num_fields() {
        let c = sigma.state(f);
        let target = if active.contains(&f) { 1.0 } else { 0.0 };
        let diff = q.expected_usage(c) - target;
        out.value += diff.abs();
        let sign = if diff > 0.0 {
            1.0
        } else if diff < 0.0 {
            -1.0
        } else {
            0.0
        };
        if sign != 0.0 {
            for i in 0..q.len() {
                for d in 1..=q.max_len_at(i) {
                    *out.grad.emission_mut(i, d, c) += sign;
                }
            }
        }
    }
    out
}

/// `sum_f H[sigma(. | f)]`; returns the value and the gradient on `M`.
pub fn sparsity_penalty(m: &DynamicMapping) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; m.logits.len()];
    let mut total = 0.0;
    for f in 0..m.fields {
        let row = m.row(f);
        let lse = log_sum_exp(row);
        let logp: Vec<f64> = row.iter().map(|x| x - lse).collect();
        let h: f64 = -logp.iter().map(|lp| exp(*lp) * lp).sum::<f64>();
        total += h;
        for k in 0..m.states {
            let p = exp(logp[k]);
            grad[f * m.states + k] = -p * (logp[k] + h);
        }
    }
    (total, grad)
}

/// `sum_{(i,j,f) in A} -sum_c sigma(c|f) log q(z_{i:j} = c)`, with the log
/// argument floored at `floor`.
pub fn fit_penalty(q: &SpanMarginals, align: &AlignmentSet, m: &DynamicMapping, floor: f64) -> Penalty {
    let mut out = Penalty::new(q);
    let mut gm = vec![0.0; m.logits.len()];
    for a in &align.spans {
        let sigma = m.probs(a.field);
        for (s, e) in a.pieces(q.max_seg()) {
            let mut g_sigma = vec![0.0; m.states];
            for c in 0..m.states {
                let mu = q.span(s, e, c);
                let (logq, clamped) = if mu > floor { (ln(mu), false) } else { (ln(floor), true) };
                if clamped && sigma[c] > 0.0 {
                    out.clamped += 1;
                }
                out.value -= sigma[c] * logq;
                g_sigma[c] = -logq;
                if !clamped {
                    *out.grad.emission_mut(s, e - s, c) -= sigma[c] / mu;
                }
            }
            let row = &mut gm[a.field * m.states..(a.field + 1) * m.states];
            softmax_backward(&sigma, &g_sigma, row);
        }
    }
    out.grad_mapping = Some(gm);
    out
}

/// `log |C| - H[p_agg]` with `p_agg(c)` proportional to `sum_t q(z_t = c)`.
pub fn diversity_penalty(q: &SpanMarginals, floor: f64) -> Penalty {
    let mut out = Penalty::new(q);
    let k = q.labels();
    let usage: Vec<f64> = q
        .token_marginals()
        .iter()
        .fold(vec![0.0; k], |mut acc, row| {
            acc.iter_mut().zip(row).for_each(|(a, b)| *a += b);
            acc
        });
    let total: f64 = usage.iter().sum();
    let p: Vec<f64> = usage.iter().map(|u| u / total).collect();
    let logp: Vec<f64> = p.iter().map(|&v| if v > floor { ln(v) } else { ln(floor) }).collect();
    let h: f64 = -p.iter().zip(&logp).map(|(a, b)| a * b).sum::<f64>();
    out.value = ln(k as f64) - h;
    // d(-H)/dS_c = (log p_c + H) / sum(S)
    for i in 0..q.len() {
        for d in 1..=q.max_len_at(i) {
            for c in 0..k {
                *out.grad.emission_mut(i, d, c) = d as f64 * (logp[c] + h) / total;
            }
        }
    }
    out
}

/// Constraint selection and strengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    pub lambda: f64,
    pub mode: ConstraintMode,
    /// Per-term weights: inclusion/exclusion/coverage in one-to-one mode,
    /// sparsity/fit/diversity in one-to-many mode. A zero weight disables
    /// the term.
    pub weights: [f64; 3],
    pub floor: f64,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            mode: ConstraintMode::OneToOne,
            weights: [1.0; 3],
            floor: 1e-12,
        }
    }
}

impl PenaltyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(alloc::format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidConfig("penalty weights must be >= 0".into()));
        }
        Ok(())
    }

    pub fn term_names(&self) -> [&'static str; 3] {
        match self.mode {
            ConstraintMode::OneToOne => ["inclusion", "exclusion", "coverage"],
            ConstraintMode::OneToMany => ["sparsity", "fit", "diversity"],
        }
    }
}

/// Either side of the field-to-state relation.
#[derive(Debug, Clone, Copy)]
pub enum Mapping<'a> {
    Static(&'a FieldStateMap),
    Learned(&'a DynamicMapping),
}

/// `lambda * sum_k w_k R_k`, with the unscaled terms.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyReport {
    pub terms: Vec<(&'static str, f64)>,
    pub total: f64,
    pub grad: PotentialGradient,
    pub grad_mapping: Option<Vec<f64>>,
    pub clamped: usize,
}

pub fn total_penalty(
    cfg: &PenaltyConfig,
    q: &SpanMarginals,
    align: &AlignmentSet,
    mapping: Mapping<'_>,
    active: &[usize],
) -> Result<PenaltyReport> {
    let names = cfg.term_names();
    let mut report = PenaltyReport {
        terms: Vec::new(),
        total: 0.0,
        grad: PotentialGradient::zeros(q.len(), q.max_seg(), q.labels()),
        grad_mapping: None,
        clamped: 0,
    };
    let parts: [Penalty; 3] = match (cfg.mode, mapping) {
        (ConstraintMode::OneToOne, Mapping::Static(sigma)) => [
            inclusion_penalty(q, align, sigma),
            exclusion_penalty(q, align, sigma, active),
            coverage_penalty(q, sigma, active),
        ],
        (ConstraintMode::OneToMany, Mapping::Learned(m)) => {
            let (value, g) = sparsity_penalty(m);
            let mut sparsity = Penalty::new(q);
            sparsity.value = value;
            sparsity.grad_mapping = Some(g);
            [sparsity, fit_penalty(q, align, m, cfg.floor), diversity_penalty(q, cfg.floor)]
        }
        _ => {
            return Err(Error::InvalidConfig(
                "one-to-one penalties need a static map and one-to-many a learned one".into(),
            ))
        }
    };
    for ((name, part), w) in names.iter().zip(parts).zip(cfg.weights) {
        report.terms.push((name, part.value));
        let k = cfg.lambda * w;
        report.total += k * part.value;
        report.clamped += part.clamped;
        if k != 0.0 {
            report.grad.add_scaled(&part.grad, k);
            if let Some(g) = part.grad_mapping {
                let acc = report.grad_mapping.get_or_insert_with(|| vec![0.0; g.len()]);
                acc.iter_mut().zip(&g).for_each(|(a, b)| *a += k * b);
            }
        }
    }
    Ok(report)
}
