//! Amortized posterior `q(z | x, y)`: a bidirectional LSTM over the sentence
//! whose endpoint states score spans against label embeddings.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Graph, ParamId, ParamStore, Var};
use crate::error::{Error, Result};
use crate::semicrf::{PotentialGradient, PotentialTable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceConfig {
    pub vocab_size: usize,
    pub num_states: usize,
    pub max_seg: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    pub label_dim: usize,
    /// Concatenate a mean-pooled table embedding to every span feature.
    pub table_feature: bool,
    pub init_std: f64,
    /// A label no span may take (the decoder's start state). Its emission
    /// log-potential is pinned to [`EXCLUDED`].
    #[serde(default)]
    pub excluded_label: Option<usize>,
}

/// Log-potential of an excluded label; small enough that its mass
/// underflows to zero.
pub const EXCLUDED: f64 = -1e4;

impl InferenceConfig {
    pub fn new(vocab_size: usize, num_states: usize, max_seg: usize) -> Self {
        Self {
            vocab_size,
            num_states,
            max_seg,
            embed_dim: 32,
            hidden: 64,
            label_dim: 32,
            table_feature: false,
            init_std: 0.1,
            excluded_label: None,
        }
    }

    pub fn feature_dim(&self) -> usize {
        2 * self.hidden + if self.table_feature { self.embed_dim } else { 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct Ids {
    emb: ParamId,
    fw_w: ParamId,
    fw_b: ParamId,
    bw_w: ParamId,
    bw_b: ParamId,
    proj_w: ParamId,
    proj_b: ParamId,
    labels: ParamId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceNet {
    pub cfg: InferenceConfig,
    pub params: ParamStore,
    ids: Ids,
}

/// Span features `[f_{i+d} - f_i ; b_i - b_{i+d}]` as plain values.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanFeatures {
    pub len: usize,
    pub max_seg: usize,
    pub dim: usize,
    /// `[i][d - 1]` feature vectors; entries past the sentence end are empty.
    pub data: Vec<Vec<f64>>,
}

impl SpanFeatures {
    pub fn get(&self, i: usize, d: usize) -> &[f64] {
        &self.data[i * self.max_seg + d - 1]
    }
}

/// Potentials together with the tape nodes they were read from.
pub struct PotentialTape {
    pub table: PotentialTable,
    emission: Vec<(usize, usize, Var)>,
    transition: Vec<Var>,
}

impl InferenceNet {
    pub fn new<R: Rng + ?Sized>(cfg: InferenceConfig, rng: &mut R) -> Self {
        let mut p = ParamStore::new();
        let s = cfg.init_std;
        let (e, h) = (cfg.embed_dim, cfg.hidden);
        let ids = Ids {
            emb: p.add_gaussian("q.emb", cfg.vocab_size, e, s, rng),
            fw_w: p.add_gaussian("q.fw.w", 4 * h, e + h, s, rng),
            fw_b: p.add_zeros("q.fw.b", 4 * h, 1),
            bw_w: p.add_gaussian("q.bw.w", 4 * h, e + h, s, rng),
            bw_b: p.add_zeros("q.bw.b", 4 * h, 1),
            proj_w: p.add_gaussian("q.proj.w", cfg.label_dim, cfg.feature_dim(), s, rng),
            proj_b: p.add_zeros("q.proj.b", cfg.label_dim, 1),
            labels: p.add_gaussian("q.labels", cfg.num_states + 1, cfg.label_dim, s, rng),
        };
        Self { cfg, params: p, ids }
    }

    /// Same shapes with every parameter zero.
    pub fn zeroed(cfg: InferenceConfig) -> Self {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut net = Self::new(cfg, &mut rng);
        net.params.zero_all();
        net
    }

    /// Replaces the parameters, checking names and shapes.
    pub fn load_params(&mut self, params: ParamStore) -> Result<()> {
        self.params.check_compatible(&params)?;
        self.params = params;
        Ok(())
    }

    pub fn label_param(&self) -> ParamId {
        self.ids.labels
    }

    pub fn projection_param(&self) -> (ParamId, ParamId) {
        (self.ids.proj_w, self.ids.proj_b)
    }

    fn run_lstm(&self, g: &mut Graph<'_>, embs: &[Var], w: ParamId, b: ParamId, reverse: bool) -> Vec<Var> {
        let h = self.cfg.hidden;
        let mut hs = vec![g.input(vec![0.0; h])];
        let mut c = g.input(vec![0.0; h]);
        let order: Vec<usize> = if reverse {
            (0..embs.len()).rev().collect()
        } else {
            (0..embs.len()).collect()
        };
        for t in order {
            let prev = *hs.last().unwrap();
            let inp = g.concat(&[embs[t], prev]);
            let gates = g.linear(w, Some(b), inp);
            let hc = g.lstm_cell(gates, c);
            hs.push(g.slice(hc, 0, h));
            c = g.slice(hc, h, h);
        }
        if reverse {
            hs.reverse();
        }
        hs
    }

    /// Span feature nodes, `[i][d - 1]`, for the sentence `y`.
    pub fn encode_vars(&self, g: &mut Graph<'_>, y: &[usize], table_words: &[usize]) -> Result<Vec<Option<Var>>> {
        if y.is_empty() {
            return Err(Error::EmptySentence);
        }
        let n = y.len();
        let l = self.cfg.max_seg;
        let embs: Vec<Var> = y.iter().map(|&w| g.row(self.ids.emb, w)).collect();
        let fw = self.run_lstm(g, &embs, self.ids.fw_w, self.ids.fw_b, false);
        let bw = self.run_lstm(g, &embs, self.ids.bw_w, self.ids.bw_b, true);
        let pooled = if self.cfg.table_feature {
            if table_words.is_empty() {
                return Err(Error::EmptyTable);
            }
            let rows: Vec<Var> = table_words.iter().map(|&w| g.row(self.ids.emb, w)).collect();
            let mut acc = rows[0];
            for r in &rows[1..] {
                acc = g.add(acc, *r);
            }
            Some(g.affine(acc, 1.0 / rows.len() as f64, 0.0))
        } else {
            None
        };
        let mut out = vec![None; n * l];
        for i in 0..n {
            for d in 1..=l.min(n - i) {
                let a = g.sub(fw[i + d], fw[i]);
                let b = g.sub(bw[i], bw[i + d]);
                let f = match pooled {
                    Some(p) => g.concat(&[a, b, p]),
                    None => g.concat(&[a, b]),
                };
                out[i * l + d - 1] = Some(f);
            }
        }
        Ok(out)
    }

    /// Plain-valued span features.
    pub fn encode_pair(&self, y: &[usize], table_words: &[usize]) -> Result<SpanFeatures> {
        let mut g = Graph::new(&self.params);
        let vars = self.encode_vars(&mut g, y, table_words)?;
        Ok(SpanFeatures {
            len: y.len(),
            max_seg: self.cfg.max_seg,
            dim: self.cfg.feature_dim(),
            data: vars
                .iter()
                .map(|v| v.map(|v| g.value(v).to_vec()).unwrap_or_default())
                .collect(),
        })
    }

    /// Scores spans from precomputed features with the current parameters.
    pub fn build_potentials(&self, features: &SpanFeatures) -> Result<PotentialTable> {
        let mut g = Graph::new(&self.params);
        let vars: Vec<Option<Var>> = features
            .data
            .iter()
            .map(|f| if f.is_empty() { None } else { Some(g.input(f.clone())) })
            .collect();
        Ok(self.score(&mut g, features.len, &vars)?.table)
    }

    fn score(&self, g: &mut Graph<'_>, len: usize, feats: &[Option<Var>]) -> Result<PotentialTape> {
        let k = self.cfg.num_states;
        let l = self.cfg.max_seg;
        let mut table = PotentialTable::zeros(len, l, k)?;
        let mut emission = Vec::new();
        for i in 0..len {
            for d in 1..=l.min(len - i) {
                let f = feats[i * l + d - 1].expect("feature inside the chart");
                let p = g.linear(self.ids.proj_w, Some(self.ids.proj_b), f);
                let s = g.dot_rows(p, self.ids.labels, 0, k);
                let row = table.emission_row_mut(i, d);
                row.copy_from_slice(g.value(s));
                if let Some(c) = self.cfg.excluded_label {
                    row[c] = EXCLUDED;
                }
                emission.push((i, d, s));
            }
        }
        let mut transition = Vec::with_capacity(k + 1);
        for prev in 0..=k {
            let r = g.row(self.ids.labels, prev);
            let s = g.dot_rows(r, self.ids.labels, 0, k);
            for (next, v) in g.value(s).iter().enumerate() {
                if prev == k {
                    table.set_start(next, *v);
                } else {
                    table.set_transition(prev, next, *v);
                }
            }
            transition.push(s);
        }
        Ok(PotentialTape {
            table,
            emission,
            transition,
        })
    }

    /// Encodes `y` and scores every span on `g`.
    pub fn potentials(&self, g: &mut Graph<'_>, y: &[usize], table_words: &[usize]) -> Result<PotentialTape> {
        let feats = self.encode_vars(g, y, table_words)?;
        self.score(g, y.len(), &feats)
    }

    /// Potentials without keeping the tape.
    pub fn potential_table(&self, y: &[usize], table_words: &[usize]) -> Result<PotentialTable> {
        let mut g = Graph::new(&self.params);
        Ok(self.potentials(&mut g, y, table_words)?.table)
    }

    /// Pulls a gradient on the log-potentials back to the parameters. The
    /// length potentials are fixed, so their gradient is dropped.
    pub fn backward(&self, g: &Graph<'_>, tape: &PotentialTape, grad: &PotentialGradient, out: &mut Gradients) {
        let k = self.cfg.num_states;
        let mut seeds = Vec::with_capacity(tape.emission.len() + k + 1);
        for &(i, d, v) in &tape.emission {
            let mut row = grad.emission_row(i, d).to_vec();
            if let Some(c) = self.cfg.excluded_label {
                row[c] = 0.0;
            }
            seeds.push((v, row));
        }
        for (prev, &v) in tape.transition.iter().enumerate() {
            let row = if prev == k {
                grad.start.clone()
            } else {
                grad.transition[prev * k..(prev + 1) * k].to_vec()
            };
            seeds.push((v, row));
        }
        g.backward_seeded(&seeds, out);
    }
}
