//! Penalized evidence-bound training, the hard-label baseline and the
//! evaluation metrics.
//!
//! Gradients reported here are gradients of the *loss*, the negated
//! objective, so they feed the optimizer directly.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, Gradients, Graph, ParamStore, Var};
use crate::constraints::{
    extract_alignments, total_penalty, AlignmentSet, ConstraintMode, DynamicMapping, FieldStateMap, Mapping,
    PenaltyConfig,
};
use crate::data::{encode_table, FieldInventory, Table, TableToken, Vocab, BOS_ID, EOS_ID};
use crate::decoder::{
    beam_search, constrained_beam_search, state_runs, BeamConfig, Decoder, DecoderConfig, Hypothesis, JointTerms,
};
use crate::error::{Error, Result};
use crate::inference_net::{InferenceConfig, InferenceNet};
use crate::math::{exp, ln, log_sum_exp};
use crate::semicrf::{
    covariance, entropy, entropy_gradient, log_partition_consistent, posterior, score_segmentation,
    PotentialGradient, PotentialTable, Sampler, Segmentation,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// Unconstrained evidence bound.
    PC0,
    /// Fully observed heuristic states, no inference network.
    PCInf,
    /// Evidence bound minus `lambda` times the posterior penalties.
    PCLambda,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_states: usize,
    pub max_seg: usize,
    pub q_embed: usize,
    pub q_hidden: usize,
    pub q_label: usize,
    pub table_feature: bool,
    pub p_embed: usize,
    pub p_hidden: usize,
    pub p_state: usize,
    pub p_field: usize,
    pub p_pos: usize,
    pub p_ctx: usize,
    pub p_attn: usize,
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_states: 8,
            max_seg: 8,
            q_embed: 32,
            q_hidden: 64,
            q_label: 32,
            table_feature: false,
            p_embed: 32,
            p_hidden: 64,
            p_state: 16,
            p_field: 16,
            p_pos: 8,
            p_ctx: 32,
            p_attn: 32,
            init_std: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: Mode,
    pub constraints: ConstraintMode,
    pub lambda: f64,
    /// Per-term weights in the order of [`crate::constraints::PenaltyConfig`].
    pub penalty_weights: [f64; 3],
    pub k_samples: usize,
    /// Optimizer steps until the annealed terms reach full weight; `None`
    /// means one epoch.
    pub anneal_steps: Option<usize>,
    pub lr_gen: f64,
    pub lr_inf: f64,
    pub lr_mapping: f64,
    pub clip: f64,
    pub max_epochs: usize,
    /// First epoch (1-based) at which a validation plateau halves the rates.
    pub decay_start_epoch: usize,
    pub decay_factor: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub batch_size: usize,
    /// Validation examples scored per epoch.
    pub valid_limit: usize,
    pub seed: u64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::PCLambda,
            constraints: ConstraintMode::OneToOne,
            lambda: 10.0,
            penalty_weights: [10.0, 1.0, 1.0],
            k_samples: 4,
            anneal_steps: None,
            lr_gen: 0.002,
            lr_inf: 0.001,
            lr_mapping: 0.001,
            clip: 1.0,
            max_epochs: 30,
            decay_start_epoch: 8,
            decay_factor: 2.0,
            patience: 3,
            batch_size: 20,
            valid_limit: 200,
            seed: 1,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.lr_gen > 0.0 && self.lr_inf > 0.0 && self.lr_mapping > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.k_samples < 2 && self.mode != Mode::PCInf {
            return bad("at least two samples are needed for the mean baseline");
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch size and epoch count must be positive");
        }
        if self.model.num_states == 0 || self.model.max_seg == 0 {
            return bad("state count and maximum segment length must be positive");
        }
        if !(self.clip > 0.0) || !(self.decay_factor >= 1.0) {
            return bad("clip must be positive and the decay factor at least 1");
        }
        self.penalty().validate()
    }

    /// Penalty settings implied by the mode; PC0 runs with `lambda = 0`.
    pub fn penalty(&self) -> PenaltyConfig {
        PenaltyConfig {
            lambda: if self.mode == Mode::PC0 { 0.0 } else { self.lambda },
            mode: self.constraints,
            weights: self.penalty_weights,
            floor: 1e-12,
        }
    }
}

/// `min(step / horizon, 1)`.
pub fn anneal_coefficient(step: usize, horizon: usize) -> Result<f64> {
    if horizon == 0 {
        return Err(Error::InvalidConfig("anneal horizon must be positive".into()));
    }
    Ok((step as f64 / horizon as f64).min(1.0))
}

/// Mean baseline and centered rewards.
pub fn centered_rewards(rewards: &[f64]) -> (f64, Vec<f64>) {
    let b = rewards.iter().sum::<f64>() / rewards.len().max(1) as f64;
    (b, rewards.iter().map(|r| r - b).collect())
}

/// Score-function estimate of the gradient of `E_q[r]` with respect to the
/// log-potentials, with the mean of the other samples' rewards as baseline:
/// `1/(K-1) sum_k (r_k - mean r) n(z_k)`. The `-mu` part of the score cancels
/// because the centered rewards sum to zero.
pub fn reinforce_gradient(pt: &PotentialTable, samples: &[Segmentation], rewards: &[f64]) -> Result<PotentialGradient> {
    if samples.len() != rewards.len() || samples.len() < 2 {
        return Err(Error::InvalidConfig("need at least two samples with one reward each".into()));
    }
    let (_, centered) = centered_rewards(rewards);
    let mut g = PotentialGradient::zeros_like(pt);
    let k = 1.0 / (samples.len() - 1) as f64;
    for (z, a) in samples.iter().zip(&centered) {
        if *a != 0.0 {
            g.add_counts(z, k * a);
        }
    }
    Ok(g)
}

/// Global vocabulary and field inventory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabularies {
    pub vocab: Vocab,
    pub fields: FieldInventory,
}

impl Vocabularies {
    /// Collects every text and table token and every field name.
    pub fn from_corpus<'a>(pairs: impl IntoIterator<Item = (&'a Table, &'a [String])>) -> Self {
        let mut vocab = Vocab::new();
        let mut fields = FieldInventory::default();
        for (table, text) in pairs {
            for f in &table.fields {
                fields.add(&f.name);
                for w in &f.value {
                    vocab.add(w);
                }
            }
            for w in text {
                vocab.add(w);
            }
        }
        Self { vocab, fields }
    }
}

/// One encoded training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub table: Table,
    pub tokens: Vec<String>,
    pub ids: Vec<usize>,
    pub table_tokens: Vec<TableToken>,
    pub active: Vec<usize>,
    pub align: AlignmentSet,
}

impl Instance {
    pub fn new(table: Table, tokens: Vec<String>, voc: &Vocabularies) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::EmptySentence);
        }
        let table_tokens = encode_table(&table, &voc.vocab, &voc.fields)?;
        let active = voc.fields.active(&table)?;
        let align = extract_alignments(&table, &tokens, &voc.fields)?;
        Ok(Self {
            ids: voc.vocab.encode(&tokens),
            table,
            tokens,
            table_tokens,
            active,
            align,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn table_words(&self) -> Vec<usize> {
        self.table_tokens.iter().map(|t| t.word).collect()
    }

    /// Tokens with the end marker appended.
    pub fn ids_with_eos(&self) -> Vec<usize> {
        let mut y = self.ids.clone();
        y.push(EOS_ID);
        y
    }
}

/// Per-token states with the end marker's state (the last span's label)
/// appended.
pub fn with_eos_state(labels: &[usize]) -> Vec<usize> {
    let mut z = labels.to_vec();
    if let Some(&last) = labels.last() {
        z.push(last);
    }
    z
}

/// Aligned tokens take their field's state, every other token the generic
/// state.
pub fn heuristic_states(inst: &Instance, sigma: &FieldStateMap) -> Vec<usize> {
    let mut z = vec![sigma.other; inst.len()];
    for a in &inst.align.spans {
        z[a.start..a.end].iter_mut().for_each(|s| *s = sigma.state(a.field));
    }
    z
}

/// In one-to-one mode with room beyond the fields and the generic state, the
/// last state is reserved as the start state: spans never take it.
pub fn start_state(constraints: ConstraintMode, num_fields: usize, num_states: usize) -> Option<usize> {
    (constraints == ConstraintMode::OneToOne && num_states >= num_fields + 2).then(|| num_states - 1)
}

/// Generative model, inference network and field-state relation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub voc: Vocabularies,
    pub mode: Mode,
    pub constraints: ConstraintMode,
    pub decoder: Decoder,
    pub inference: InferenceNet,
    pub sigma: FieldStateMap,
    pub mapping: Option<DynamicMapping>,
    /// Decoding length limit, end marker included.
    pub max_len: usize,
}

impl Model {
    pub fn new<R: Rng + ?Sized>(voc: Vocabularies, cfg: &TrainConfig, max_len: usize, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let m = &cfg.model;
        let nf = voc.fields.len();
        let (sigma, mapping) = match cfg.constraints {
            ConstraintMode::OneToOne => (FieldStateMap::identity(nf, m.num_states)?, None),
            ConstraintMode::OneToMany => {
                if cfg.mode == Mode::PCInf {
                    return Err(Error::InvalidConfig(
                        "the hard-label baseline needs the one-to-one map".into(),
                    ));
                }
                let mut dm = DynamicMapping::zeros(nf, m.num_states);
                let normal = rand_distr::Normal::new(0.0, 0.1).expect("valid std");
                dm.logits.iter_mut().for_each(|v| *v = rand_distr::Distribution::sample(&normal, rng));
                let other = m.num_states - 1;
                (dm.hard_map(other), Some(dm))
            }
        };
        let dcfg = DecoderConfig {
            embed_dim: m.p_embed,
            field_dim: m.p_field,
            pos_dim: m.p_pos,
            ctx_dim: m.p_ctx,
            hidden: m.p_hidden,
            state_dim: m.p_state,
            attn_dim: m.p_attn,
            init_std: m.init_std,
            ..DecoderConfig::new(voc.vocab.len(), nf, m.num_states)
        };
        let icfg = InferenceConfig {
            embed_dim: m.q_embed,
            hidden: m.q_hidden,
            label_dim: m.q_label,
            table_feature: m.table_feature,
            init_std: m.init_std,
            excluded_label: start_state(cfg.constraints, nf, m.num_states),
            ..InferenceConfig::new(voc.vocab.len(), m.num_states, m.max_seg)
        };
        let decoder = Decoder::new(dcfg, rng);
        let inference = InferenceNet::new(icfg, rng);
        Ok(Self {
            voc,
            mode: cfg.mode,
            constraints: cfg.constraints,
            decoder,
            inference,
            sigma,
            mapping,
            max_len,
        })
    }

    pub fn num_states(&self) -> usize {
        self.decoder.cfg.num_states
    }

    pub fn instance(&self, table: Table, tokens: Vec<String>) -> Result<Instance> {
        Instance::new(table, tokens, &self.voc)
    }

    /// The field-to-state map used for evaluation and hard labels.
    pub fn state_map(&self) -> FieldStateMap {
        match &self.mapping {
            Some(m) => m.hard_map(self.sigma.other),
            None => self.sigma.clone(),
        }
    }

    pub fn beam_config(&self, beam: usize) -> BeamConfig {
        BeamConfig {
            beam,
            alpha: 1.0,
            max_len: self.max_len,
            bos: BOS_ID,
            eos: EOS_ID,
        }
    }

    pub fn table_tokens(&self, table: &Table) -> Result<Vec<TableToken>> {
        encode_table(table, &self.voc.vocab, &self.voc.fields)
    }

    pub fn decode(&self, table: &Table, beam: usize) -> Result<Hypothesis> {
        let toks = self.table_tokens(table)?;
        let mut s = self.decoder.session(&toks)?;
        beam_search(&mut s, &self.beam_config(beam))
    }

    pub fn control_decode(&self, table: &Table, plan: &[usize], beam: usize) -> Result<Hypothesis> {
        let toks = self.table_tokens(table)?;
        let mut s = self.decoder.session(&toks)?;
        constrained_beam_search(&mut s, plan, &self.beam_config(beam))
    }

    pub fn words(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| String::from(self.voc.vocab.token(i))).collect()
    }

    pub fn posterior_table(&self, inst: &Instance) -> Result<PotentialTable> {
        self.inference.potential_table(&inst.ids, &inst.table_words())
    }

    /// `(sum log p(z_t|.), sum log p(y_t|., z_t))` over the sentence and its
    /// end marker.
    pub fn joint_terms(&self, inst: &Instance, labels: &[usize]) -> Result<(f64, f64)> {
        let mut g = Graph::new(&self.decoder.params);
        let tv = self.decoder.encode_table_vars(&mut g, &inst.table_tokens)?;
        let j = self
            .decoder
            .joint_terms(&mut g, &tv, &inst.ids_with_eos(), &with_eos_state(labels), BOS_ID)?;
        Ok((g.scalar(j.prior), g.scalar(j.recon)))
    }
}

/// Settings of one evaluation of the objective.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveConfig {
    pub k: usize,
    pub anneal: f64,
    pub penalty: PenaltyConfig,
}

/// Values of the terms of the objective on one example.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveTerms {
    /// PRLBO estimate: `recon + a * (prior + entropy) - penalty`.
    pub objective: f64,
    /// The same without the penalty.
    pub elbo: f64,
    pub recon: f64,
    pub prior: f64,
    pub entropy: f64,
    /// `lambda * sum_k w_k R_k`.
    pub penalty: f64,
    pub penalty_terms: Vec<(&'static str, f64)>,
    pub rewards: Vec<f64>,
    pub baseline: f64,
    pub clamped: usize,
}

/// Loss-gradient buffers for the three parameter sets.
#[derive(Debug, Clone, PartialEq)]
pub struct Accumulator {
    pub theta: Gradients,
    pub phi: Gradients,
    pub mapping: Vec<f64>,
    /// Loss gradient with respect to the log-potentials of the last example.
    pub potentials: Option<PotentialGradient>,
}

impl Accumulator {
    pub fn new(model: &Model) -> Self {
        Self {
            theta: Gradients::zeros(&model.decoder.params),
            phi: Gradients::zeros(&model.inference.params),
            mapping: vec![0.0; model.mapping.as_ref().map_or(0, |m| m.logits.len())],
            potentials: None,
        }
    }

    pub fn clear(&mut self) {
        self.theta.clear();
        self.phi.clear();
        self.mapping.iter_mut().for_each(|v| *v = 0.0);
        self.potentials = None;
    }
}

fn finite(v: f64, term: &'static str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteLoss { term })
    }
}

/// One-example PRLBO with its loss gradients added into `acc` (skipped when
/// `acc` is `None`).
pub fn prlbo_loss<R: Rng + ?Sized>(
    model: &Model,
    inst: &Instance,
    obj: &ObjectiveConfig,
    rng: &mut R,
    acc: Option<&mut Accumulator>,
) -> Result<ObjectiveTerms> {
    if obj.k < 2 {
        return Err(Error::InvalidConfig("at least two samples are needed for the mean baseline".into()));
    }
    let table_words = inst.table_words();
    let mut gq = Graph::new(&model.inference.params);
    let tape = model.inference.potentials(&mut gq, &inst.ids, &table_words)?;
    let pt = &tape.table;
    pt.validate()?;

    let sampler = Sampler::new(pt);
    let samples: Vec<Segmentation> = (0..obj.k).map(|_| sampler.sample(rng)).collect();

    let mut gp = Graph::new(&model.decoder.params);
    let tv = model.decoder.encode_table_vars(&mut gp, &inst.table_tokens)?;
    let y = inst.ids_with_eos();
    let mut joint: Vec<JointTerms> = Vec::with_capacity(obj.k);
    for z in &samples {
        let labels = with_eos_state(&z.token_labels());
        joint.push(model.decoder.joint_terms(&mut gp, &tv, &y, &labels, BOS_ID)?);
    }
    let a = obj.anneal;
    let kf = obj.k as f64;
    let recon = finite(joint.iter().map(|j| gp.scalar(j.recon)).sum::<f64>() / kf, "reconstruction")?;
    let prior = finite(joint.iter().map(|j| gp.scalar(j.prior)).sum::<f64>() / kf, "state prior")?;
    let rewards: Vec<f64> = joint.iter().map(|j| gp.scalar(j.recon) + a * gp.scalar(j.prior)).collect();
    let h = finite(entropy(pt), "entropy")?;

    let penalty_on = obj.penalty.lambda > 0.0 && obj.penalty.weights.iter().any(|w| *w > 0.0);
    let report = if penalty_on || acc.is_none() {
        let q = posterior(pt).spans;
        let mapping = match (&model.mapping, obj.penalty.mode) {
            (Some(m), ConstraintMode::OneToMany) => Mapping::Learned(m),
            _ => Mapping::Static(&model.sigma),
        };
        Some(total_penalty(&obj.penalty, &q, &inst.align, mapping, &inst.active)?)
    } else {
        None
    };
    let penalty = finite(report.as_ref().map_or(0.0, |r| r.total), "penalty")?;
    let elbo = recon + a * (prior + h);
    let (baseline, _) = centered_rewards(&rewards);
    let terms = ObjectiveTerms {
        objective: elbo - penalty,
        elbo,
        recon,
        prior,
        entropy: h,
        penalty,
        penalty_terms: report.as_ref().map(|r| r.terms.clone()).unwrap_or_default(),
        rewards: rewards.clone(),
        baseline,
        clamped: report.as_ref().map_or(0, |r| r.clamped),
    };

    let Some(acc) = acc else {
        return Ok(terms);
    };

    // Decoder: maximize the sample mean of recon + a * prior.
    let weights: Vec<(Var, f64)> = joint
        .iter()
        .flat_map(|j| [(j.recon, -1.0 / kf), (j.prior, -a / kf)])
        .collect();
    let loss = gp.weighted_sum(&weights);
    gp.backward(loss, &mut acc.theta);

    // Inference network: d objective / d log-potentials.
    let mut d_eta = reinforce_gradient(pt, &samples, &rewards)?;
    if a > 0.0 {
        d_eta.add_scaled(&entropy_gradient(pt), a);
    }
    if let Some(r) = &report {
        if penalty_on {
            d_eta.add_scaled(&covariance(pt, &r.grad), -1.0);
            if let Some(gm) = &r.grad_mapping {
                acc.mapping.iter_mut().zip(gm).for_each(|(x, y)| *x += y);
            }
        }
    }
    d_eta.scale(-1.0);
    if !d_eta.is_finite() {
        return Err(Error::NonFiniteLoss { term: "posterior gradient" });
    }
    model.inference.backward(&gq, &tape, &d_eta, &mut acc.phi);
    acc.potentials = Some(d_eta);
    Ok(terms)
}

/// `-log p(y, z* | x)` for the heuristic states, with its gradient.
pub fn train_pcinf(model: &Model, inst: &Instance, acc: Option<&mut Accumulator>) -> Result<f64> {
    let z = with_eos_state(&heuristic_states(inst, &model.sigma));
    let mut g = Graph::new(&model.decoder.params);
    let tv = model.decoder.encode_table_vars(&mut g, &inst.table_tokens)?;
    let j = model.decoder.joint_terms(&mut g, &tv, &inst.ids_with_eos(), &z, BOS_ID)?;
    let loss = g.weighted_sum(&[(j.prior, -1.0), (j.recon, -1.0)]);
    let value = finite(g.scalar(loss), "heuristic likelihood")?;
    if let Some(acc) = acc {
        g.backward(loss, &mut acc.theta);
    }
    Ok(value)
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub elbo: f64,
    pub entropy: f64,
    pub penalty: f64,
    pub penalty_terms: Vec<(String, f64)>,
    pub anneal: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub train_objective: f64,
    pub valid_objective: f64,
    pub lr_gen: f64,
    pub lr_inf: f64,
}

/// Progress that survives between epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub epoch: usize,
    pub step: usize,
    pub anneal: f64,
    pub best_valid: f64,
    pub best_decoder: ParamStore,
    pub best_inference: ParamStore,
    pub best_mapping: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochSummary>,
    pub steps: usize,
    pub best_valid: f64,
    pub stopped_early: bool,
}

fn objective_config(cfg: &TrainConfig, anneal: f64) -> ObjectiveConfig {
    ObjectiveConfig {
        k: cfg.k_samples,
        anneal,
        penalty: cfg.penalty(),
    }
}

/// Mean objective on held-out pairs with annealing complete.
pub fn validation_objective(model: &Model, valid: &[Instance], cfg: &TrainConfig) -> Result<f64> {
    if valid.is_empty() {
        return Ok(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_7a11);
    let n = valid.len().min(cfg.valid_limit.max(1));
    let obj = objective_config(cfg, 1.0);
    let mut total = 0.0;
    for inst in &valid[..n] {
        total += match cfg.mode {
            Mode::PCInf => -train_pcinf(model, inst, None)?,
            _ => prlbo_loss(model, inst, &obj, &mut rng, None)?.objective,
        };
    }
    Ok(total / n as f64)
}

fn to_store(m: &[f64]) -> ParamStore {
    let mut s = ParamStore::new();
    s.push("mapping", 1, m.len(), m.to_vec());
    s
}

/// Trains `model` in place and restores the parameters of the best
/// validation epoch.
pub fn fit(
    model: &mut Model,
    train: &[Instance],
    valid: &[Instance],
    cfg: &TrainConfig,
    log: &mut dyn FnMut(&StepLog),
) -> Result<TrainReport> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidConfig("empty training set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let steps_per_epoch = train.len().div_ceil(cfg.batch_size);
    let horizon = cfg.anneal_steps.unwrap_or(steps_per_epoch).max(1);
    let mut opt_gen = Adam::new(&model.decoder.params, cfg.lr_gen);
    let mut opt_inf = Adam::new(&model.inference.params, cfg.lr_inf);
    let mut map_store = to_store(model.mapping.as_ref().map_or(&[][..], |m| &m.logits));
    let mut opt_map = Adam::new(&map_store, cfg.lr_mapping);
    let mut acc = Accumulator::new(model);
    let mut map_grad = Gradients::zeros(&map_store);

    let mut state = TrainState {
        epoch: 0,
        step: 0,
        anneal: 0.0,
        best_valid: f64::NEG_INFINITY,
        best_decoder: model.decoder.params.clone(),
        best_inference: model.inference.params.clone(),
        best_mapping: model.mapping.as_ref().map(|m| m.logits.clone()),
    };
    let mut report = TrainReport {
        epochs: Vec::new(),
        steps: 0,
        best_valid: f64::NEG_INFINITY,
        stopped_early: false,
    };
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut stale = 0;
    for epoch in 1..=cfg.max_epochs {
        state.epoch = epoch;
        order.shuffle(&mut rng);
        let mut epoch_total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            state.anneal = anneal_coefficient(state.step, horizon)?;
            let obj = objective_config(cfg, state.anneal);
            acc.clear();
            let mut sums = (0.0, 0.0, 0.0);
            let mut term_sums: Vec<(String, f64)> = Vec::new();
            for &i in batch {
                match cfg.mode {
                    Mode::PCInf => {
                        let l = train_pcinf(model, &train[i], Some(&mut acc))?;
                        sums.0 -= l;
                    }
                    _ => {
                        let t = prlbo_loss(model, &train[i], &obj, &mut rng, Some(&mut acc))?;
                        sums.0 += t.elbo;
                        sums.1 += t.entropy;
                        sums.2 += t.penalty;
                        for (k, (name, v)) in t.penalty_terms.iter().enumerate() {
                            match term_sums.get_mut(k) {
                                Some(e) => e.1 += v,
                                None => term_sums.push((String::from(*name), *v)),
                            }
                        }
                    }
                }
            }
            let n = batch.len() as f64;
            acc.theta.scale(1.0 / n);
            acc.theta.clip_norm(cfg.clip);
            opt_gen.update(&mut model.decoder.params, &acc.theta);
            if cfg.mode != Mode::PCInf {
                acc.phi.scale(1.0 / n);
                acc.phi.clip_norm(cfg.clip);
                opt_inf.update(&mut model.inference.params, &acc.phi);
                if let Some(m) = model.mapping.as_mut() {
                    map_grad.data[0].copy_from_slice(&acc.mapping);
                    map_grad.scale(1.0 / n);
                    map_grad.clip_norm(cfg.clip);
                    opt_map.update(&mut map_store, &map_grad);
                    m.logits.copy_from_slice(&map_store.params()[0].data);
                }
            }
            if !(model.decoder.params.is_finite() && model.inference.params.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    value: f64::NAN,
                });
            }
            state.step += 1;
            epoch_total += sums.0 - sums.2;
            for t in &mut term_sums {
                t.1 /= n;
            }
            log(&StepLog {
                step: state.step,
                epoch,
                elbo: sums.0 / n,
                entropy: sums.1 / n,
                penalty: sums.2 / n,
                penalty_terms: term_sums,
                anneal: state.anneal,
                lr: opt_gen.lr,
            });
        }
        if let Some(m) = model.mapping.as_mut() {
            m.logits.copy_from_slice(&map_store.params()[0].data);
            model.sigma = m.hard_map(model.sigma.other);
        }
        let valid_obj = if valid.is_empty() {
            epoch_total / train.len() as f64
        } else {
            validation_objective(model, valid, cfg)?
        };
        if !valid_obj.is_finite() {
            return Err(Error::Diverged {
                epoch,
                value: valid_obj,
            });
        }
        report.epochs.push(EpochSummary {
            epoch,
            train_objective: epoch_total / train.len() as f64,
            valid_objective: valid_obj,
            lr_gen: opt_gen.lr,
            lr_inf: opt_inf.lr,
        });
        if valid_obj > state.best_valid {
            state.best_valid = valid_obj;
            state.best_decoder = model.decoder.params.clone();
            state.best_inference = model.inference.params.clone();
            state.best_mapping = model.mapping.as_ref().map(|m| m.logits.clone());
            stale = 0;
        } else {
            stale += 1;
            if epoch >= cfg.decay_start_epoch {
                opt_gen.lr /= cfg.decay_factor;
                opt_inf.lr /= cfg.decay_factor;
                opt_map.lr /= cfg.decay_factor;
            }
            if stale >= cfg.patience {
                report.stopped_early = true;
                break;
            }
        }
    }
    model.decoder.params = state.best_decoder;
    model.inference.params = state.best_inference;
    if let (Some(m), Some(best)) = (model.mapping.as_mut(), state.best_mapping) {
        m.logits = best;
        model.sigma = m.hard_map(model.sigma.other);
    }
    report.steps = state.step;
    report.best_valid = state.best_valid;
    Ok(report)
}

/// Controllability of decoded state spans against their tables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlScores {
    pub precision: f64,
    pub recall: f64,
    pub coverage: f64,
    pub matched: usize,
    pub field_span_tokens: usize,
    /// Decodes with no span on an active field's state.
    pub empty: usize,
}

/// Clipped unigram overlap between a span and a field value.
fn unigram_overlap(span: &[String], value: &[String]) -> usize {
    let mut pool: Vec<String> = value.iter().map(|w| w.to_lowercase()).collect();
    let mut n = 0;
    for w in span {
        let w = w.to_lowercase();
        if let Some(k) = pool.iter().position(|v| *v == w) {
            pool.swap_remove(k);
            n += 1;
        }
    }
    n
}

/// Precision, recall and coverage of state spans `(tokens, per-token
/// states)` against `tables`. A span is a maximal run of one state; it counts
/// when the state is `sigma(f)` for a field `f` of the table. Coverage is the
/// fraction of active fields with at least one such span.
pub fn evaluate_control(
    decodes: &[(Vec<String>, Vec<usize>)],
    tables: &[Table],
    sigma: &FieldStateMap,
    fields: &FieldInventory,
) -> Result<ControlScores> {
    if decodes.len() != tables.len() {
        return Err(Error::InvalidConfig("one table per decode is required".into()));
    }
    let (mut matched, mut span_tokens, mut value_tokens) = (0usize, 0usize, 0usize);
    let (mut covered, mut active_total, mut empty) = (0usize, 0usize, 0usize);
    for ((tokens, states), table) in decodes.iter().zip(tables) {
        if tokens.len() != states.len() {
            return Err(Error::LengthMismatch {
                tokens: tokens.len(),
                states: states.len(),
            });
        }
        let active = fields.active(table)?;
        value_tokens += table.num_tokens();
        active_total += active.len();
        let mut hit = vec![false; active.len()];
        let mut any = false;
        for (i, j, c) in state_runs(states) {
            for (k, (&f, field)) in active.iter().zip(&table.fields).enumerate() {
                if sigma.state(f) == c {
                    matched += unigram_overlap(&tokens[i..j], &field.value);
                    span_tokens += j - i;
                    hit[k] = true;
                    any = true;
                }
            }
        }
        covered += hit.iter().filter(|h| **h).count();
        if !any {
            empty += 1;
        }
    }
    let ratio = |a: usize, b: usize, empty_value: f64| if b == 0 { empty_value } else { a as f64 / b as f64 };
    Ok(ControlScores {
        precision: ratio(matched, span_tokens, 1.0),
        recall: ratio(matched, value_tokens, 0.0),
        coverage: ratio(covered, active_total, 0.0),
        matched,
        field_span_tokens: span_tokens,
        empty,
    })
}

/// Samples `k` segmentations and scores each under both models: returns
/// `(prior, recon, log q(token labels))` per sample. Token-level `q` sums
/// over the segmentations that share a labeling.
fn scored_samples<R: Rng + ?Sized>(model: &Model, inst: &Instance, k: usize, rng: &mut R) -> Result<Vec<(f64, f64, f64)>> {
    let pt = model.posterior_table(inst)?;
    let sampler = Sampler::new(&pt);
    let log_z = sampler.log_partition();
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let z = sampler.sample(rng);
        let labels = z.token_labels();
        let log_q = log_partition_consistent(&pt, &labels)? - log_z;
        let (prior, recon) = model.joint_terms(inst, &labels)?;
        out.push((prior, recon, log_q));
    }
    Ok(out)
}

/// Importance-sampled `log p(y | x)` with `q` as proposal.
pub fn importance_logprob<R: Rng + ?Sized>(model: &Model, inst: &Instance, k: usize, rng: &mut R) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidConfig("need at least one sample".into()));
    }
    let s = scored_samples(model, inst, k, rng)?;
    let w: Vec<f64> = s.iter().map(|(p, r, q)| p + r - q).collect();
    Ok(log_sum_exp(&w) - ln(k as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Distributional {
    /// `exp(-E_q[log p(y | x, z)] / T)`.
    pub rec: f64,
    /// Importance-sampled perplexity.
    pub ppl: f64,
    /// `E_q[log q(z) - log p(z | x)]` per sentence, in nats.
    pub kl: f64,
}

/// Reconstruction perplexity, perplexity and KL averaged over `insts`;
/// per-token quantities count the end marker.
pub fn evaluate_distributional(model: &Model, insts: &[Instance], k: usize, seed: u64) -> Result<Distributional> {
    if insts.is_empty() || k == 0 {
        return Err(Error::InvalidConfig("need instances and at least one sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut rec, mut lp, mut kl, mut tokens) = (0.0, 0.0, 0.0, 0usize);
    for inst in insts {
        let s = scored_samples(model, inst, k, &mut rng)?;
        let kf = k as f64;
        rec += s.iter().map(|x| x.1).sum::<f64>() / kf;
        kl += s.iter().map(|x| x.2 - x.0).sum::<f64>() / kf;
        let w: Vec<f64> = s.iter().map(|(p, r, q)| p + r - q).collect();
        lp += log_sum_exp(&w) - ln(kf);
        tokens += inst.len() + 1;
    }
    let t = tokens as f64;
    Ok(Distributional {
        rec: exp(-rec / t),
        ppl: exp(-lp / t),
        kl: kl / insts.len() as f64,
    })
}

/// `log q(z)` of a segmentation under the model's posterior.
pub fn segmentation_logprob(pt: &PotentialTable, z: &Segmentation) -> Result<f64> {
    Ok(score_segmentation(z, pt)? - crate::semicrf::log_partition(pt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Field;
    use alloc::string::ToString;

    #[test]
    fn anneal_is_linear_then_flat() {
        assert_eq!(anneal_coefficient(0, 10).unwrap(), 0.0);
        assert_eq!(anneal_coefficient(5, 10).unwrap(), 0.5);
        assert_eq!(anneal_coefficient(10, 10).unwrap(), 1.0);
        assert_eq!(anneal_coefficient(25, 10).unwrap(), 1.0);
        assert!(anneal_coefficient(1, 0).is_err());
    }

    #[test]
    fn mean_baseline_centers_rewards() {
        let (b, c) = centered_rewards(&[2.0, 4.0]);
        assert_eq!(b, 3.0);
        assert_eq!(c, vec![-1.0, 1.0]);
    }

    fn words(s: &str) -> Vec<String> {
        s.split_whitespace().map(|w| w.to_string()).collect()
    }

    #[test]
    fn control_scores_of_hand_counted_spans() {
        let fields = FieldInventory::new(vec!["name".into()]).unwrap();
        let sigma = FieldStateMap::identity(1, 2).unwrap();
        let table = Table::new(vec![Field::new("name", &["Clowns"])]);
        let one = evaluate_control(&[(words("Clowns is"), vec![0, 1])], &[table.clone()], &sigma, &fields).unwrap();
        assert_eq!((one.precision, one.recall, one.coverage), (1.0, 1.0, 1.0));
        let two = evaluate_control(&[(words("the Clowns"), vec![0, 0])], &[table], &sigma, &fields).unwrap();
        assert_eq!((two.precision, two.recall), (0.5, 1.0));
    }

    #[test]
    fn heuristic_states_fill_generic_state() {
        let voc = Vocabularies::from_corpus(core::iter::empty());
        let mut voc = voc;
        voc.fields.add("name");
        let table = Table::new(vec![Field::new("name", &["aromi"])]);
        let sigma = FieldStateMap::identity(1, 3).unwrap();
        let inst = Instance::new(table.clone(), words("aromi is good"), &voc).unwrap();
        assert_eq!(heuristic_states(&inst, &sigma), vec![0, 1, 1]);
        let none = Instance::new(table, words("a pub"), &voc).unwrap();
        assert_eq!(heuristic_states(&none, &sigma), vec![1, 1]);
    }
}
