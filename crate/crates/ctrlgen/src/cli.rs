//! Command surface: `gen-data`, `train`, `decode`, `control-decode`,
//! `evaluate` and `inspect`.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use ctrlgen_core::data::Table;
use ctrlgen_core::decoder::{state_runs, Hypothesis};
use ctrlgen_core::training::{
    evaluate_control, evaluate_distributional, fit, ControlScores, Distributional, Instance, Model, StepLog,
    TrainConfig, TrainReport, Vocabularies,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::checkpoint;
use crate::config::{self, parse_constraints, parse_mode};
use crate::error::CliError;
use crate::formats::{read_jsonl, read_plans, write_jsonl, AlignmentRecord, CorpusRecord, DecodeRecord, Span};
use crate::synth::SyntheticSpec;

#[derive(Debug, Parser)]
#[command(name = "ctrlgen", version, about = "Controllable data-to-text generation with latent control states")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic train/valid/test corpus.
    GenData(GenData),
    /// Train a model and write a checkpoint.
    Train(Train),
    /// Beam-decode every table of a corpus.
    Decode(Decode),
    /// Decode one table under each plan of a plan file.
    ControlDecode(ControlDecode),
    /// Control and distributional metrics on a corpus.
    Evaluate(Evaluate),
    /// Print tokens with their states and the state legend.
    Inspect(Inspect),
}

#[derive(Debug, Args)]
pub struct GenData {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub size: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Fraction of records whose `near` value repeats the `name` value.
    #[arg(long, default_value_t = 0.0)]
    pub duplicate_rate: f64,
    #[arg(long)]
    pub align_out: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct TrainFlags {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub constraints: Option<String>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub states: Option<usize>,
    #[arg(long)]
    pub max_seg_len: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub k_samples: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Extra `key=value` options, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl TrainFlags {
    /// Defaults, then the config file, then flags.
    pub fn resolve(&self) -> Result<TrainConfig, CliError> {
        let mut cfg = TrainConfig::default();
        if let Some(p) = &self.config {
            config::load(p, &mut cfg)?;
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            config::apply(&mut cfg, k.trim(), v.trim())?;
        }
        if let Some(m) = &self.mode {
            cfg.mode = parse_mode(m)?;
        }
        if let Some(c) = &self.constraints {
            cfg.constraints = parse_constraints(c)?;
        }
        if let Some(v) = self.lambda {
            cfg.lambda = v;
        }
        if let Some(v) = self.states {
            cfg.model.num_states = v;
        }
        if let Some(v) = self.max_seg_len {
            cfg.model.max_seg = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.k_samples {
            cfg.k_samples = v;
        }
        if let Some(v) = self.epochs {
            cfg.max_epochs = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct Train {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub valid: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON-lines training log.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[command(flatten)]
    pub flags: TrainFlags,
}

#[derive(Debug, Args)]
pub struct Decode {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub beam: usize,
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ControlDecode {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Record of `--data` whose table is decoded.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    /// One plan per line: whitespace-separated state ids, one per token.
    #[arg(long)]
    pub plans: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub beam: usize,
}

#[derive(Debug, Args)]
pub struct Evaluate {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Score these decodes instead of decoding `--data`.
    #[arg(long)]
    pub decodes: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub beam: usize,
    #[arg(long, default_value_t = 20)]
    pub k_samples: usize,
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct Inspect {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Decodes to render; without it the posterior MAP states of `--data` are shown.
    #[arg(long)]
    pub decodes: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub limit: usize,
    /// ANSI colors per state.
    #[arg(long)]
    pub color: bool,
}

/// Rejects tables that name fields the model has never seen.
pub fn check_fields(voc: &Vocabularies, tables: &[Table]) -> Result<(), CliError> {
    for t in tables {
        for f in &t.fields {
            if voc.fields.index(&f.name).is_none() {
                return Err(CliError::Vocabulary(format!("field {:?} is not in the checkpoint", f.name)));
            }
        }
    }
    Ok(())
}

pub fn instances(voc: &Vocabularies, records: &[CorpusRecord]) -> Result<Vec<Instance>, CliError> {
    check_fields(voc, &records.iter().map(|r| r.to_table()).collect::<Vec<_>>())?;
    records
        .iter()
        .map(|r| Instance::new(r.to_table(), r.text.clone(), voc).map_err(CliError::from))
        .collect()
}

/// Builds the vocabulary from `train_set`, trains and returns the model.
pub fn train_model(
    train_set: &[CorpusRecord],
    valid_set: &[CorpusRecord],
    cfg: &TrainConfig,
    log: &mut dyn FnMut(&StepLog),
) -> Result<(Model, TrainReport), CliError> {
    if train_set.is_empty() {
        return Err(CliError::Usage("empty training corpus".into()));
    }
    let tables: Vec<Table> = train_set.iter().map(|r| r.to_table()).collect();
    let voc = Vocabularies::from_corpus(tables.iter().zip(train_set.iter().map(|r| &r.text[..])));
    let max_len = 2 * train_set.iter().map(|r| r.text.len()).max().unwrap_or(1) + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Model::new(voc, cfg, max_len, &mut rng)?;
    let train = instances(&model.voc, train_set)?;
    let valid = instances(&model.voc, valid_set)?;
    let report = fit(&mut model, &train, &valid, cfg, log)?;
    Ok((model, report))
}

pub fn decode_record(model: &Model, h: &Hypothesis, plan: Option<Vec<usize>>) -> DecodeRecord {
    DecodeRecord {
        tokens: model.words(&h.tokens),
        states: state_runs(&h.states),
        logprob: h.logprob,
        score: h.score,
        truncated: h.truncated,
        plan,
    }
}

pub fn decode_tables(model: &Model, tables: &[Table], beam: usize) -> Result<Vec<DecodeRecord>, CliError> {
    check_fields(&model.voc, tables)?;
    tables
        .iter()
        .map(|t| Ok(decode_record(model, &model.decode(t, beam)?, None)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    #[serde(flatten)]
    pub control: ControlScores,
    #[serde(flatten)]
    pub distributional: Distributional,
}

pub fn control_scores(model: &Model, decodes: &[DecodeRecord], tables: &[Table]) -> Result<ControlScores, CliError> {
    let pairs: Vec<(Vec<String>, Vec<usize>)> = decodes
        .iter()
        .map(|d| (d.tokens.clone(), d.token_states()))
        .collect();
    Ok(evaluate_control(&pairs, tables, &model.state_map(), &model.voc.fields)?)
}

fn take<T: Clone>(v: Vec<T>, limit: Option<usize>) -> Vec<T> {
    match limit {
        Some(n) => v.into_iter().take(n).collect(),
        None => v,
    }
}

fn gen_data(a: &GenData) -> Result<(), CliError> {
    let spec = SyntheticSpec {
        size: a.size,
        seed: a.seed,
        duplicate_rate: a.duplicate_rate,
        ..SyntheticSpec::default()
    };
    let splits = spec.generate()?;
    std::fs::create_dir_all(&a.out).map_err(|e| CliError::io(&a.out, e))?;
    write_jsonl(&a.out.join("train.jsonl"), &splits.train)?;
    write_jsonl(&a.out.join("valid.jsonl"), &splits.valid)?;
    write_jsonl(&a.out.join("test.jsonl"), &splits.test)?;
    if let Some(p) = &a.align_out {
        let mut voc = Vocabularies::from_corpus(core::iter::empty());
        for f in &spec.fields {
            voc.fields.add(&f.name);
        }
        let dump: Vec<AlignmentRecord> = splits
            .train
            .iter()
            .map(|r| alignment_record(&voc, r))
            .collect::<Result<_, _>>()?;
        write_jsonl(p, &dump)?;
    }
    println!(
        "wrote {} / {} / {} records to {}",
        splits.train.len(),
        splits.valid.len(),
        splits.test.len(),
        a.out.display()
    );
    Ok(())
}

/// Alignments `extract_alignments` finds for one record.
pub fn alignment_record(voc: &Vocabularies, r: &CorpusRecord) -> Result<AlignmentRecord, CliError> {
    let a = ctrlgen_core::constraints::extract_alignments(&r.to_table(), &r.text, &voc.fields)?;
    Ok(AlignmentRecord {
        spans: a
            .spans
            .iter()
            .map(|s| Span(s.start, s.end, voc.fields.name(s.field).to_string()))
            .collect(),
    })
}

fn train(a: &Train) -> Result<(), CliError> {
    let cfg = a.flags.resolve()?;
    let train_set: Vec<CorpusRecord> = read_jsonl(&a.train)?;
    let valid_set: Vec<CorpusRecord> = match &a.valid {
        Some(p) => read_jsonl(p)?,
        None => Vec::new(),
    };
    let mut sink: Option<BufWriter<File>> = match &a.log {
        Some(p) => Some(BufWriter::new(File::create(p).map_err(|e| CliError::io(p, e))?)),
        None => None,
    };
    let mut log = |s: &StepLog| {
        if let Some(w) = sink.as_mut() {
            let _ = serde_json::to_writer(&mut *w, s);
            let _ = writeln!(w);
        }
    };
    let (model, report) = train_model(&train_set, &valid_set, &cfg, &mut log)?;
    drop(log);
    if let (Some(w), Some(p)) = (sink.as_mut(), &a.log) {
        w.flush().map_err(|e| CliError::io(p, e))?;
    }
    checkpoint::save(&a.out, &model, &cfg)?;
    for e in &report.epochs {
        println!(
            "epoch {:>2}  train {:>10.4}  valid {:>10.4}  lr {:.5}",
            e.epoch, e.train_objective, e.valid_objective, e.lr_gen
        );
    }
    println!("saved {} after {} steps", a.out.display(), report.steps);
    Ok(())
}

fn decode(a: &Decode) -> Result<(), CliError> {
    let (model, _) = checkpoint::load(&a.checkpoint)?;
    let records: Vec<CorpusRecord> = take(read_jsonl(&a.data)?, a.limit);
    let tables: Vec<Table> = records.iter().map(|r| r.to_table()).collect();
    let out = decode_tables(&model, &tables, a.beam)?;
    write_jsonl(&a.out, &out)
}

fn control_decode(a: &ControlDecode) -> Result<(), CliError> {
    let (model, _) = checkpoint::load(&a.checkpoint)?;
    let records: Vec<CorpusRecord> = read_jsonl(&a.data)?;
    let rec = records
        .get(a.index)
        .ok_or_else(|| CliError::Usage(format!("record {} out of range ({} records)", a.index, records.len())))?;
    let table = rec.to_table();
    check_fields(&model.voc, std::slice::from_ref(&table))?;
    let mut out = Vec::new();
    for plan in read_plans(&a.plans)? {
        if let Some(&bad) = plan.iter().find(|&&c| c >= model.num_states()) {
            return Err(CliError::Usage(format!("plan state {bad} exceeds the {} states", model.num_states())));
        }
        let h = model.control_decode(&table, &plan, a.beam)?;
        out.push(decode_record(&model, &h, Some(plan)));
    }
    write_jsonl(&a.out, &out)
}

fn evaluate(a: &Evaluate) -> Result<(), CliError> {
    let (model, _) = checkpoint::load(&a.checkpoint)?;
    let records: Vec<CorpusRecord> = take(read_jsonl(&a.data)?, a.limit);
    let tables: Vec<Table> = records.iter().map(|r| r.to_table()).collect();
    let decodes = match &a.decodes {
        Some(p) => take(read_jsonl(p)?, Some(tables.len())),
        None => decode_tables(&model, &tables, a.beam)?,
    };
    let control = control_scores(&model, &decodes, &tables[..decodes.len()])?;
    if control.field_span_tokens == 0 {
        eprintln!("no decoded span carries a field state; precision reported as 1");
    }
    let insts = instances(&model.voc, &records)?;
    let distributional = evaluate_distributional(&model, &insts, a.k_samples, a.seed)?;
    let m = Metrics { control, distributional };
    println!("{}", serde_json::to_string(&m).map_err(|e| CliError::Internal(e.to_string()))?);
    Ok(())
}

/// `word/state` tokens; with `color`, each state gets its own ANSI color.
pub fn render(tokens: &[String], states: &[usize], color: bool) -> String {
    let mut parts = Vec::new();
    for (i, j, c) in state_runs(states) {
        let words = tokens[i..j.min(tokens.len())].join(" ");
        if color {
            parts.push(format!("\x1b[{}m[{words}]\x1b[0m{c}", 31 + (c % 6)));
        } else {
            parts.push(format!("[{words}]{c}"));
        }
    }
    parts.join(" ")
}

pub fn legend(model: &Model) -> Vec<String> {
    let sigma = model.state_map();
    (0..model.num_states())
        .map(|c| match sigma.field_of(c) {
            Some(f) => format!("{c} = {}", model.voc.fields.name(f)),
            None if c == sigma.other => format!("{c} = (other)"),
            None if model.inference.cfg.excluded_label == Some(c) => format!("{c} = (start)"),
            None => format!("{c} = (free)"),
        })
        .collect()
}

fn inspect(a: &Inspect) -> Result<(), CliError> {
    let (model, _) = checkpoint::load(&a.checkpoint)?;
    let rows: Vec<(Vec<String>, Vec<usize>)> = match (&a.decodes, &a.data) {
        (Some(p), _) => read_jsonl::<DecodeRecord>(p)?
            .into_iter()
            .take(a.limit)
            .map(|d| {
                let z = d.token_states();
                (d.tokens, z)
            })
            .collect(),
        (None, Some(p)) => {
            let records: Vec<CorpusRecord> = take(read_jsonl(p)?, Some(a.limit));
            let mut rows = Vec::new();
            for inst in instances(&model.voc, &records)? {
                let pt = model.posterior_table(&inst)?;
                let (z, _) = ctrlgen_core::semicrf::map_segmentation(&pt);
                rows.push((inst.tokens.clone(), z.token_labels()));
            }
            rows
        }
        (None, None) => return Err(CliError::Usage("inspect needs --decodes or --data".into())),
    };
    for (t, s) in &rows {
        println!("{}", render(t, s, a.color));
    }
    println!("states:");
    for l in legend(&model) {
        println!("  {l}");
    }
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Decode(a) => decode(a),
        Command::ControlDecode(a) => control_decode(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Inspect(a) => inspect(a),
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            e.exit_code()
        }
    }
}

