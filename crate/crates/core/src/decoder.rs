//! The generative model `p(y, z | x)`.
//!
//! An LSTM reads `[emb(y_{t-1}); g(z_{t-1}); fields(x); seen_t]`, where
//! `fields(x)` marks which fields the table has and `seen_t` which states
//! occurred before `t`. Writing `u_t = [fields(x); seen_t]`, it predicts the
//! control state `z_t` from `[h_t; u_t]`, then the token `y_t` from
//! `[h_t; g(z_t); u_t]` as a gated mixture of a vocabulary softmax and a copy
//! distribution over table tokens. The copy attention query is a per-state
//! projection of `h_t`.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamId, ParamStore, Var};
use crate::data::TableToken;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub vocab_size: usize,
    pub num_fields: usize,
    pub num_states: usize,
    pub embed_dim: usize,
    pub field_dim: usize,
    pub pos_dim: usize,
    /// Positions at or past this index share the last embedding.
    pub max_pos: usize,
    pub ctx_dim: usize,
    pub hidden: usize,
    pub state_dim: usize,
    pub attn_dim: usize,
    pub init_std: f64,
}

impl DecoderConfig {
    pub fn new(vocab_size: usize, num_fields: usize, num_states: usize) -> Self {
        Self {
            vocab_size,
            num_fields,
            num_states,
            embed_dim: 32,
            field_dim: 16,
            pos_dim: 8,
            max_pos: 12,
            ctx_dim: 32,
            hidden: 64,
            state_dim: 16,
            attn_dim: 32,
            init_std: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct Ids {
    word: ParamId,
    field: ParamId,
    fwd: ParamId,
    bwd: ParamId,
    table_w: ParamId,
    table_b: ParamId,
    init_w: ParamId,
    init_b: ParamId,
    state: ParamId,
    start: ParamId,
    lstm_w: ParamId,
    lstm_b: ParamId,
    w0: ParamId,
    b0: ParamId,
    w1: ParamId,
    b1: ParamId,
    attn_w: ParamId,
    attn_b: ParamId,
    key_w: ParamId,
    key_b: ParamId,
    gate_w: ParamId,
    gate_b: ParamId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decoder {
    pub cfg: DecoderConfig,
    pub params: ParamStore,
    ids: Ids,
}

/// Per-table-token context vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct TableContext {
    pub tokens: Vec<TableToken>,
    pub vectors: Vec<Vec<f64>>,
}

/// Table encoding on a tape.
#[derive(Debug, Clone)]
pub struct TableVars {
    words: Vec<usize>,
    keys: Vec<Var>,
    h0: Var,
    c0: Var,
    ctx: Vec<Var>,
    /// Multi-hot indicator of the table's fields.
    presence: Var,
    seen0: Var,
}

/// Recurrent state on a tape.
#[derive(Debug, Clone, Copy)]
pub struct StepVars {
    pub h: Var,
    pub c: Var,
    /// Multi-hot indicator of the states consumed so far.
    pub seen: Var,
}

/// Log-probability of a state/token sequence split into its two factors.
#[derive(Debug, Clone, Copy)]
pub struct JointTerms {
    /// `sum_t log p(z_t | .)`.
    pub prior: Var,
    /// `sum_t log p(y_t | ., z_t)`.
    pub recon: Var,
}

impl Decoder {
    pub fn new<R: Rng + ?Sized>(cfg: DecoderConfig, rng: &mut R) -> Self {
        let mut p = ParamStore::new();
        let s = cfg.init_std;
        let c = &cfg;
        let tok_in = c.embed_dim + c.field_dim + 2 * c.pos_dim;
        let h = c.hidden;
        let nf = c.num_fields.max(1);
        let ids = Ids {
            word: p.add_gaussian("p.word", c.vocab_size, c.embed_dim, s, rng),
            field: p.add_gaussian("p.field", c.num_fields.max(1), c.field_dim, s, rng),
            fwd: p.add_gaussian("p.pos.fwd", c.max_pos, c.pos_dim, s, rng),
            bwd: p.add_gaussian("p.pos.bwd", c.max_pos, c.pos_dim, s, rng),
            table_w: p.add_gaussian("p.table.w", c.ctx_dim, tok_in, s, rng),
            table_b: p.add_zeros("p.table.b", c.ctx_dim, 1),
            init_w: p.add_gaussian("p.init.w", h, c.ctx_dim + nf, s, rng),
            init_b: p.add_zeros("p.init.b", h, 1),
            state: p.add_gaussian("p.state", c.num_states, c.state_dim, s, rng),
            start: p.add_gaussian("p.state.start", 1, c.state_dim, s, rng),
            lstm_w: p.add_gaussian("p.lstm.w", 4 * h, c.embed_dim + c.state_dim + nf + c.num_states + h, s, rng),
            lstm_b: p.push("p.lstm.b", 4 * h, 1, forget_bias(h)),
            w0: p.add_gaussian("p.w0", c.num_states, h + nf + c.num_states, s, rng),
            b0: p.add_zeros("p.b0", c.num_states, 1),
            w1: p.add_gaussian("p.w1", c.vocab_size, h + c.state_dim + nf + c.num_states, s, rng),
            b1: p.add_zeros("p.b1", c.vocab_size, 1),
            attn_w: p.add_gaussian("p.attn.w", c.num_states * c.attn_dim, h, s, rng),
            attn_b: p.add_gaussian("p.attn.b", c.num_states * c.attn_dim, 1, s, rng),
            key_w: p.add_gaussian("p.key.w", c.attn_dim, c.ctx_dim, s, rng),
            key_b: p.add_zeros("p.key.b", c.attn_dim, 1),
            gate_w: p.add_gaussian("p.gate.w", 1, h + c.state_dim, s, rng),
            gate_b: p.add_zeros("p.gate.b", 1, 1),
        };
        Self { cfg, params: p, ids }
    }

    /// Same shapes with every parameter zero.
    pub fn zeroed(cfg: DecoderConfig) -> Self {
        let mut d = Self::new(cfg, &mut ChaCha8Rng::seed_from_u64(0));
        d.params.zero_all();
        d
    }

    pub fn load_params(&mut self, params: ParamStore) -> Result<()> {
        self.params.check_compatible(&params)?;
        self.params = params;
        Ok(())
    }

    /// The copy gate's bias; a large positive value forces copying.
    pub fn gate_bias(&self) -> ParamId {
        self.ids.gate_b
    }

    pub fn num_states(&self) -> usize {
        self.cfg.num_states
    }

    pub fn encode_table_vars(&self, g: &mut Graph<'_>, tokens: &[TableToken]) -> Result<TableVars> {
        if tokens.is_empty() {
            return Err(Error::EmptyTable);
        }
        let last = self.cfg.max_pos - 1;
        let mut ctx = Vec::with_capacity(tokens.len());
        let mut keys = Vec::with_capacity(tokens.len());
        for t in tokens {
            let parts = [
                g.row(self.ids.word, t.word),
                g.row(self.ids.field, t.field),
                g.row(self.ids.fwd, t.fwd.min(last)),
                g.row(self.ids.bwd, t.bwd.min(last)),
            ];
            let inp = g.concat(&parts);
            let pre = g.linear(self.ids.table_w, Some(self.ids.table_b), inp);
            let v = g.tanh(pre);
            keys.push(g.linear(self.ids.key_w, Some(self.ids.key_b), v));
            ctx.push(v);
        }
        let mut pooled = ctx[0];
        for v in &ctx[1..] {
            pooled = g.add(pooled, *v);
        }
        let pooled = g.affine(pooled, 1.0 / ctx.len() as f64, 0.0);
        let mut fields = vec![0.0; self.cfg.num_fields.max(1)];
        for t in tokens {
            fields[t.field] = 1.0;
        }
        let presence = g.input(fields);
        let summary = g.concat(&[pooled, presence]);
        let pre = g.linear(self.ids.init_w, Some(self.ids.init_b), summary);
        let h0 = g.tanh(pre);
        let c0 = g.input(vec![0.0; self.cfg.hidden]);
        let seen0 = g.input(vec![0.0; self.cfg.num_states]);
        Ok(TableVars {
            words: tokens.iter().map(|t| t.word).collect(),
            keys,
            h0,
            c0,
            ctx,
            presence,
            seen0,
        })
    }

    /// Context vectors as plain values.
    pub fn encode_table(&self, tokens: &[TableToken]) -> Result<TableContext> {
        let mut g = Graph::new(&self.params);
        let tv = self.encode_table_vars(&mut g, tokens)?;
        Ok(TableContext {
            tokens: tokens.to_vec(),
            vectors: tv.ctx.iter().map(|v| g.value(*v).to_vec()).collect(),
        })
    }

    pub fn initial(&self, tv: &TableVars) -> StepVars {
        StepVars {
            h: tv.h0,
            c: tv.c0,
            seen: tv.seen0,
        }
    }

    /// Advances the LSTM on `(y_prev, z_prev)`, the table's field indicator
    /// and the states seen so far, and returns the new state with `log p(z_t | .)`.
    /// `z_prev = None` uses the start embedding.
    pub fn advance(
        &self,
        g: &mut Graph<'_>,
        tv: &TableVars,
        s: StepVars,
        y_prev: usize,
        z_prev: Option<usize>,
    ) -> (StepVars, Var) {
        let h = self.cfg.hidden;
        let ey = g.row(self.ids.word, y_prev);
        let (ez, seen) = match z_prev {
            Some(z) => {
                let mut seen = g.value(s.seen).to_vec();
                seen[z] = 1.0;
                (g.row(self.ids.state, z), g.input(seen))
            }
            None => (g.row(self.ids.start, 0), s.seen),
        };
        let inp = g.concat(&[ey, ez, tv.presence, seen, s.h]);
        let gates = g.linear(self.ids.lstm_w, Some(self.ids.lstm_b), inp);
        let hc = g.lstm_cell(gates, s.c);
        let hn = g.slice(hc, 0, h);
        let cn = g.slice(hc, h, h);
        let u = g.concat(&[hn, tv.presence, seen]);
        let logits = g.linear(self.ids.w0, Some(self.ids.b0), u);
        let lz = g.log_softmax(logits);
        (StepVars { h: hn, c: cn, seen }, lz)
    }

    /// Generation and copy distributions with the copy gate, for state `z`.
    fn token_parts(&self, g: &mut Graph<'_>, tv: &TableVars, s: StepVars, z: usize) -> (Var, Var, Var) {
        let a = self.cfg.attn_dim;
        let h = s.h;
        let ez = g.row(self.ids.state, z);
        let hz = g.concat(&[h, ez]);
        let hzu = g.concat(&[h, ez, tv.presence, s.seen]);
        let logits = g.linear(self.ids.w1, Some(self.ids.b1), hzu);
        let gen = g.softmax(logits);
        let q = g.linear_block(self.ids.attn_w, z * a, a, Some((self.ids.attn_b, z * a)), h);
        let scores = g.dot_many(q, &tv.keys);
        let attn = g.softmax(scores);
        let copy = g.scatter(attn, &tv.words, self.cfg.vocab_size);
        let gl = g.linear(self.ids.gate_w, Some(self.ids.gate_b), hz);
        let gate = g.sigmoid(gl);
        (gen, copy, gate)
    }

    /// `log p(y_t | ., z_t = z)` for every token.
    pub fn token_logprobs(&self, g: &mut Graph<'_>, tv: &TableVars, s: StepVars, z: usize) -> Var {
        let (gen, copy, gate) = self.token_parts(g, tv, s, z);
        let keep = g.affine(gate, -1.0, 1.0);
        let a = g.mul_scalar(keep, gen);
        let b = g.mul_scalar(gate, copy);
        let p = g.add(a, b);
        g.log(p)
    }

    /// `log p(y_t = y | ., z_t = z)`.
    pub fn token_logprob(&self, g: &mut Graph<'_>, tv: &TableVars, s: StepVars, z: usize, y: usize) -> Var {
        let (gen, copy, gate) = self.token_parts(g, tv, s, z);
        let keep = g.affine(gate, -1.0, 1.0);
        let gy = g.pick(gen, y);
        let cy = g.pick(copy, y);
        let a = g.mul(keep, gy);
        let b = g.mul(gate, cy);
        let p = g.add(a, b);
        g.log(p)
    }

    /// Teacher-forced `log p(y, z | x)` split into its state and token
    /// factors. `y_0` is `bos`.
    pub fn joint_terms(&self, g: &mut Graph<'_>, tv: &TableVars, y: &[usize], z: &[usize], bos: usize) -> Result<JointTerms> {
        if y.len() != z.len() {
            return Err(Error::LengthMismatch {
                tokens: y.len(),
                states: z.len(),
            });
        }
        if y.is_empty() {
            return Err(Error::EmptySentence);
        }
        let mut s = self.initial(tv);
        let mut prior = Vec::with_capacity(y.len());
        let mut recon = Vec::with_capacity(y.len());
        for t in 0..y.len() {
            let (yp, zp) = if t == 0 { (bos, None) } else { (y[t - 1], Some(z[t - 1])) };
            let (ns, lz) = self.advance(g, tv, s, yp, zp);
            s = ns;
            prior.push(g.pick(lz, z[t]));
            recon.push(self.token_logprob(g, tv, s, z[t], y[t]));
        }
        let ps: Vec<(Var, f64)> = prior.into_iter().map(|v| (v, 1.0)).collect();
        let rs: Vec<(Var, f64)> = recon.into_iter().map(|v| (v, 1.0)).collect();
        Ok(JointTerms {
            prior: g.weighted_sum(&ps),
            recon: g.weighted_sum(&rs),
        })
    }

    /// `log p(y, z | x)` with per-token states `z`.
    pub fn joint_logprob(&self, table: &[TableToken], y: &[usize], z: &[usize], bos: usize) -> Result<f64> {
        let mut g = Graph::new(&self.params);
        let tv = self.encode_table_vars(&mut g, table)?;
        let j = self.joint_terms(&mut g, &tv, y, z, bos)?;
        Ok(g.scalar(j.prior) + g.scalar(j.recon))
    }

    /// A decoding session over one table.
    pub fn session<'a>(&'a self, table: &[TableToken]) -> Result<Session<'a>> {
        let mut graph = Graph::new(&self.params);
        let tv = self.encode_table_vars(&mut graph, table)?;
        Ok(Session { dec: self, graph, tv })
    }
}

fn forget_bias(h: usize) -> Vec<f64> {
    let mut b = vec![0.0; 4 * h];
    b[h..2 * h].iter_mut().for_each(|v| *v = 1.0);
    b
}

/// One step of an autoregressive model over `(z_t, y_t)` pairs.
pub trait StepModel {
    type State: Clone;

    fn num_states(&self) -> usize;
    fn initial(&mut self) -> Self::State;
    /// New state and `log p(z_t | .)` after consuming `(y_prev, z_prev)`.
    fn advance(&mut self, state: &Self::State, y_prev: usize, z_prev: Option<usize>) -> (Self::State, Vec<f64>);
    /// `log p(y_t | ., z_t = z)`.
    fn token_logprobs(&mut self, state: &Self::State, z: usize) -> Vec<f64>;
}

/// The decoder with a table already encoded.
pub struct Session<'a> {
    dec: &'a Decoder,
    graph: Graph<'a>,
    tv: TableVars,
}

impl StepModel for Session<'_> {
    type State = StepVars;

    fn num_states(&self) -> usize {
        self.dec.cfg.num_states
    }

    fn initial(&mut self) -> StepVars {
        self.dec.initial(&self.tv)
    }

    fn advance(&mut self, state: &StepVars, y_prev: usize, z_prev: Option<usize>) -> (StepVars, Vec<f64>) {
        let (s, lz) = self.dec.advance(&mut self.graph, &self.tv, *state, y_prev, z_prev);
        (s, self.graph.value(lz).to_vec())
    }

    fn token_logprobs(&mut self, state: &StepVars, z: usize) -> Vec<f64> {
        let v = self.dec.token_logprobs(&mut self.graph, &self.tv, *state, z);
        self.graph.value(v).to_vec()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamConfig {
    pub beam: usize,
    /// Final ranking uses `logprob / len^alpha`.
    pub alpha: f64,
    pub max_len: usize,
    pub bos: usize,
    pub eos: usize,
}

/// A decoded sentence; `tokens` and `states` exclude the end marker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    pub states: Vec<usize>,
    pub logprob: f64,
    pub score: f64,
    /// No hypothesis reached the end marker within the length limit.
    pub truncated: bool,
}

fn normalized(logprob: f64, len: usize, alpha: f64) -> f64 {
    logprob / crate::math::powf(len.max(1) as f64, alpha)
}

struct Live<S> {
    state: S,
    tokens: Vec<usize>,
    states: Vec<usize>,
    logprob: f64,
}

/// Indices of the `k` largest entries, ties to the smaller index.
fn top_k(xs: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..xs.len()).filter(|&i| xs[i] > f64::NEG_INFINITY).collect();
    idx.sort_by(|&a, &b| xs[b].partial_cmp(&xs[a]).unwrap_or(core::cmp::Ordering::Equal));
    idx.truncate(k);
    idx
}

fn search<M: StepModel>(m: &mut M, cfg: &BeamConfig, plan: Option<&[usize]>) -> Result<Hypothesis> {
    if cfg.beam == 0 {
        return Err(Error::InvalidConfig("beam size must be at least 1".into()));
    }
    if let Some(p) = plan {
        if p.is_empty() {
            return Err(Error::EmptySentence);
        }
        if let Some(&bad) = p.iter().find(|&&c| c >= m.num_states()) {
            return Err(Error::InvalidSegmentation(alloc::format!("state {bad} out of range")));
        }
    }
    let max_len = plan.map(|p| p.len() + 1).unwrap_or(cfg.max_len);
    let init = m.initial();
    let mut live = vec![Live {
        state: init,
        tokens: Vec::new(),
        states: Vec::new(),
        logprob: 0.0,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for t in 0..max_len {
        // (logprob, beam, z, y, next state index)
        let mut cands: Vec<(f64, usize, usize, usize, usize)> = Vec::new();
        let mut next_states = Vec::with_capacity(live.len());
        for (b, hyp) in live.iter().enumerate() {
            let (yp, zp) = match hyp.tokens.last() {
                None => (cfg.bos, None),
                Some(&y) => (y, hyp.states.last().copied()),
            };
            let (s, lz) = m.advance(&hyp.state, yp, zp);
            let zs: Vec<usize> = match plan {
                Some(p) => vec![p[t.min(p.len() - 1)]],
                None => (0..lz.len()).collect(),
            };
            for z in zs {
                let mut ly = m.token_logprobs(&s, z);
                if let Some(p) = plan {
                    if t < p.len() {
                        ly[cfg.eos] = f64::NEG_INFINITY;
                    } else {
                        ly.iter_mut().enumerate().for_each(|(k, v)| {
                            if k != cfg.eos {
                                *v = f64::NEG_INFINITY;
                            }
                        });
                    }
                }
                for y in top_k(&ly, cfg.beam) {
                    cands.push((hyp.logprob + lz[z] + ly[y], b, z, y, next_states.len()));
                }
            }
            next_states.push(s);
        }
        cands.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(core::cmp::Ordering::Equal));
        cands.truncate(cfg.beam);
        let mut next = Vec::new();
        for (lp, b, z, y, si) in cands {
            let mut tokens = live[b].tokens.clone();
            let mut states = live[b].states.clone();
            if y == cfg.eos {
                finished.push(Hypothesis {
                    score: normalized(lp, tokens.len() + 1, cfg.alpha),
                    tokens,
                    states,
                    logprob: lp,
                    truncated: false,
                });
            } else {
                tokens.push(y);
                states.push(z);
                next.push(Live {
                    state: next_states[si].clone(),
                    tokens,
                    states,
                    logprob: lp,
                });
            }
        }
        live = next;
        if live.is_empty() {
            break;
        }
    }
    let best = |hs: Vec<Hypothesis>| {
        hs.into_iter().fold(None::<Hypothesis>, |acc, h| match acc {
            Some(a) if a.score >= h.score => Some(a),
            _ => Some(h),
        })
    };
    if let Some(h) = best(finished) {
        return Ok(h);
    }
    let partial: Vec<Hypothesis> = live
        .into_iter()
        .map(|l| Hypothesis {
            score: normalized(l.logprob, l.tokens.len(), cfg.alpha),
            tokens: l.tokens,
            states: l.states,
            logprob: l.logprob,
            truncated: true,
        })
        .collect();
    best(partial).ok_or_else(|| Error::InvalidConfig("search produced no hypothesis".into()))
}

/// Joint search over `(z_t, y_t)`: every state crossed with each beam's top
/// tokens for that state.
pub fn beam_search<M: StepModel>(m: &mut M, cfg: &BeamConfig) -> Result<Hypothesis> {
    search(m, cfg, None)
}

/// Search over tokens with `z_t = plan[t]`, followed by the end marker under
/// the last planned state.
pub fn constrained_beam_search<M: StepModel>(m: &mut M, plan: &[usize], cfg: &BeamConfig) -> Result<Hypothesis> {
    search(m, cfg, Some(plan))
}

/// Picks the best `(z, y)` pair at every step.
pub fn greedy_decode<M: StepModel>(m: &mut M, cfg: &BeamConfig) -> Hypothesis {
    let mut state = m.initial();
    let mut tokens = Vec::new();
    let mut states = Vec::new();
    let mut logprob = 0.0;
    for _ in 0..cfg.max_len {
        let (yp, zp) = match tokens.last() {
            None => (cfg.bos, None),
            Some(&y) => (y, states.last().copied()),
        };
        let (s, lz) = m.advance(&state, yp, zp);
        state = s;
        let mut best = (f64::NEG_INFINITY, 0, 0);
        for (z, &pz) in lz.iter().enumerate() {
            let ly = m.token_logprobs(&state, z);
            for (y, &py) in ly.iter().enumerate() {
                if pz + py > best.0 {
                    best = (pz + py, z, y);
                }
            }
        }
        logprob += best.0;
        if best.2 == cfg.eos {
            return Hypothesis {
                score: normalized(logprob, tokens.len() + 1, cfg.alpha),
                tokens,
                states,
                logprob,
                truncated: false,
            };
        }
        tokens.push(best.2);
        states.push(best.1);
    }
    Hypothesis {
        score: normalized(logprob, tokens.len(), cfg.alpha),
        tokens,
        states,
        logprob,
        truncated: true,
    }
}

/// Maximal runs of equal states as `(start, end, state)`.
pub fn state_runs(states: &[usize]) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < states.len() {
        let mut j = i + 1;
        while j < states.len() && states[j] == states[i] {
            j += 1;
        }
        out.push((i, j, states[i]));
        i = j;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::TableToken;

    fn tiny() -> DecoderConfig {
        DecoderConfig {
            embed_dim: 3,
            field_dim: 2,
            pos_dim: 2,
            max_pos: 3,
            ctx_dim: 3,
            hidden: 4,
            state_dim: 2,
            attn_dim: 2,
            ..DecoderConfig::new(4, 1, 2)
        }
    }

    fn table() -> Vec<TableToken> {
        vec![TableToken { word: 3, field: 0, fwd: 0, bwd: 0 }]
    }

    #[test]
    fn uniform_model_joint_logprob() {
        // A zero model still mixes in the copy distribution, so pin the gate
        // closed to get the pure uniform softmax.
        let mut d = Decoder::zeroed(tiny());
        let gb = d.gate_bias();
        d.params.get_mut(gb).data[0] = -800.0;
        let lp = d.joint_logprob(&table(), &[0, 2], &[1, 0], 1).unwrap();
        assert!((lp - 2.0 * (0.5f64.ln() + 0.25f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let d = Decoder::zeroed(tiny());
        assert!(matches!(
            d.joint_logprob(&table(), &[0, 2], &[1], 1),
            Err(Error::LengthMismatch { tokens: 2, states: 1 })
        ));
        assert!(d.encode_table(&[]).is_err());
    }

    #[test]
    fn runs_merge_equal_neighbours() {
        assert_eq!(state_runs(&[2, 2, 0, 1, 1]), vec![(0, 2, 2), (2, 3, 0), (3, 5, 1)]);
        assert!(state_runs(&[]).is_empty());
    }
}
