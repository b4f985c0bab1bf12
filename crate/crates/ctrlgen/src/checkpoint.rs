//! Binary checkpoint: magic, header length (u64 LE), JSON header, then every
//! parameter as f64 LE in manifest order.

use std::io::{Read, Write};
use std::path::Path;

use ctrlgen_core::autodiff::ParamStore;
use ctrlgen_core::constraints::FieldStateMap;
use ctrlgen_core::training::{Model, TrainConfig, Vocabularies};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const MAGIC: &[u8; 8] = b"CTRLGEN\x01";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entry {
    pub set: String,
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format_version: u32,
    pub config: TrainConfig,
    pub vocab: Vocabularies,
    pub max_len: usize,
    pub sigma: FieldStateMap,
    pub manifest: Vec<Entry>,
}

fn entries<'a>(set: &'a str, store: &'a ParamStore) -> impl Iterator<Item = (Entry, &'a [f64])> + 'a {
    store.params().iter().map(move |p| {
        (
            Entry {
                set: set.into(),
                name: p.name.clone(),
                rows: p.rows,
                cols: p.cols,
            },
            &p.data[..],
        )
    })
}

pub fn encode(model: &Model, cfg: &TrainConfig) -> Result<Vec<u8>, CliError> {
    let mut manifest = Vec::new();
    let mut payload: Vec<u8> = Vec::new();
    let mut push = |e: Entry, data: &[f64]| {
        manifest.push(e);
        for v in data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    };
    for (e, d) in entries("decoder", &model.decoder.params) {
        push(e, d);
    }
    for (e, d) in entries("inference", &model.inference.params) {
        push(e, d);
    }
    if let Some(m) = &model.mapping {
        push(
            Entry {
                set: "mapping".into(),
                name: "mapping".into(),
                rows: m.fields,
                cols: m.states,
            },
            &m.logits,
        );
    }
    let header = Header {
        format_version: FORMAT_VERSION,
        config: cfg.clone(),
        vocab: model.voc.clone(),
        max_len: model.max_len,
        sigma: model.sigma.clone(),
        manifest,
    };
    let json = serde_json::to_vec(&header).map_err(|e| CliError::Internal(e.to_string()))?;
    let mut out = Vec::with_capacity(16 + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<(Model, TrainConfig), CliError> {
    let bad = |m: String| CliError::Checkpoint {
        path: path.display().to_string(),
        message: m,
    };
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint (bad magic)".into()));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let json = bytes.get(16..16 + n).ok_or_else(|| bad("truncated header".into()))?;
    let header: Header = serde_json::from_slice(json).map_err(|e| bad(format!("header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {}", header.format_version)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut model = Model::new(header.vocab, &header.config, header.max_len, &mut rng).map_err(|e| bad(e.to_string()))?;
    model.sigma = header.sigma;

    let mut payload = &bytes[16 + n..];
    let mut take = |count: usize| -> Result<Vec<f64>, CliError> {
        if payload.len() < 8 * count {
            return Err(bad("truncated payload".into()));
        }
        let (head, tail) = payload.split_at(8 * count);
        payload = tail;
        Ok(head.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    };
    let mut dec = ParamStore::new();
    let mut inf = ParamStore::new();
    for e in &header.manifest {
        let data = take(e.rows * e.cols)?;
        match e.set.as_str() {
            "decoder" => drop(dec.push(&e.name, e.rows, e.cols, data)),
            "inference" => drop(inf.push(&e.name, e.rows, e.cols, data)),
            "mapping" => match model.mapping.as_mut() {
                Some(m) if m.logits.len() == data.len() => m.logits = data,
                _ => return Err(bad("mapping does not match the constraint mode".into())),
            },
            other => return Err(bad(format!("unknown parameter set {other:?}"))),
        }
    }
    if !payload.is_empty() {
        return Err(bad("trailing bytes after payload".into()));
    }
    model.decoder.load_params(dec).map_err(|e| bad(e.to_string()))?;
    model.inference.load_params(inf).map_err(|e| bad(e.to_string()))?;
    Ok((model, header.config))
}

pub fn save(path: &Path, model: &Model, cfg: &TrainConfig) -> Result<(), CliError> {
    let bytes = encode(model, cfg)?;
    let mut f = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(&bytes).map_err(|e| CliError::io(path, e))
}

pub fn load(path: &Path) -> Result<(Model, TrainConfig), CliError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| CliError::Checkpoint {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
    decode(&bytes, path)
}
