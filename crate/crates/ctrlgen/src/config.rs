//! Flat `key = value` configuration files.

use std::path::Path;
use std::str::FromStr;

use ctrlgen_core::constraints::ConstraintMode;
use ctrlgen_core::training::{Mode, TrainConfig};

use crate::error::CliError;

pub fn parse_mode(s: &str) -> Result<Mode, CliError> {
    match s.to_ascii_lowercase().as_str() {
        "pc0" => Ok(Mode::PC0),
        "pcinf" => Ok(Mode::PCInf),
        "pclambda" => Ok(Mode::PCLambda),
        _ => Err(CliError::Usage(format!("unknown mode {s:?}; expected pc0, pcinf or pclambda"))),
    }
}

pub fn parse_constraints(s: &str) -> Result<ConstraintMode, CliError> {
    match s.to_ascii_lowercase().as_str() {
        "one2one" => Ok(ConstraintMode::OneToOne),
        "one2many" => Ok(ConstraintMode::OneToMany),
        _ => Err(CliError::Usage(format!("unknown constraint mode {s:?}; expected one2one or one2many"))),
    }
}

pub fn mode_name(m: Mode) -> &'static str {
    match m {
        Mode::PC0 => "pc0",
        Mode::PCInf => "pcinf",
        Mode::PCLambda => "pclambda",
    }
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T, CliError> {
    v.parse()
        .map_err(|_| CliError::Usage(format!("bad value {v:?} for {key}")))
}

/// Sets one named option.
pub fn apply(cfg: &mut TrainConfig, key: &str, v: &str) -> Result<(), CliError> {
    let m = &mut cfg.model;
    match key {
        "mode" => cfg.mode = parse_mode(v)?,
        "constraints" => cfg.constraints = parse_constraints(v)?,
        "lambda" => cfg.lambda = num(key, v)?,
        "penalty_weights" => {
            let w: Vec<f64> = v.split(',').map(|x| num(key, x.trim())).collect::<Result<_, _>>()?;
            cfg.penalty_weights = w
                .try_into()
                .map_err(|_| CliError::Usage("penalty_weights needs three numbers".into()))?;
        }
        "k_samples" => cfg.k_samples = num(key, v)?,
        "anneal_steps" => cfg.anneal_steps = Some(num(key, v)?),
        "lr_gen" => cfg.lr_gen = num(key, v)?,
        "lr_inf" => cfg.lr_inf = num(key, v)?,
        "lr_mapping" => cfg.lr_mapping = num(key, v)?,
        "clip" => cfg.clip = num(key, v)?,
        "max_epochs" => cfg.max_epochs = num(key, v)?,
        "decay_start_epoch" => cfg.decay_start_epoch = num(key, v)?,
        "decay_factor" => cfg.decay_factor = num(key, v)?,
        "patience" => cfg.patience = num(key, v)?,
        "batch_size" => cfg.batch_size = num(key, v)?,
        "valid_limit" => cfg.valid_limit = num(key, v)?,
        "seed" => cfg.seed = num(key, v)?,
        "states" => m.num_states = num(key, v)?,
        "max_seg_len" => m.max_seg = num(key, v)?,
        "q_embed" => m.q_embed = num(key, v)?,
        "q_hidden" => m.q_hidden = num(key, v)?,
        "q_label" => m.q_label = num(key, v)?,
        "table_feature" => m.table_feature = num(key, v)?,
        "p_embed" => m.p_embed = num(key, v)?,
        "p_hidden" => m.p_hidden = num(key, v)?,
        "p_state" => m.p_state = num(key, v)?,
        "p_field" => m.p_field = num(key, v)?,
        "p_pos" => m.p_pos = num(key, v)?,
        "p_ctx" => m.p_ctx = num(key, v)?,
        "p_attn" => m.p_attn = num(key, v)?,
        "init_std" => m.init_std = num(key, v)?,
        _ => return Err(CliError::Usage(format!("unknown option {key:?}"))),
    }
    Ok(())
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse(text: &str, path: &Path) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| CliError::Format {
            path: path.display().to_string(),
            line: n + 1,
            message: "expected key = value".into(),
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn load(path: &Path, cfg: &mut TrainConfig) -> Result<(), CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    for (k, v) in parse(&text, path)? {
        apply(cfg, &k, &v)?;
    }
    Ok(())
}
