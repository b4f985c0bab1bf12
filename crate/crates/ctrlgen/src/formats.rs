//! JSONL records for corpora, decodes and alignment dumps.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ctrlgen_core::data::{Field, Table};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldEntry {
    pub field: String,
    pub value: Vec<String>,
}

/// `[start, end, field]`, 0-based and end-exclusive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span(pub usize, pub usize, pub String);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub table: Vec<FieldEntry>,
    pub text: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub align: Option<Vec<Span>>,
}

impl CorpusRecord {
    pub fn to_table(&self) -> Table {
        Table {
            fields: self
                .table
                .iter()
                .map(|f| Field {
                    name: f.field.clone(),
                    value: f.value.clone(),
                })
                .collect(),
        }
    }

    pub fn from_table(table: &Table, text: Vec<String>, align: Option<Vec<Span>>) -> Self {
        Self {
            table: table
                .fields
                .iter()
                .map(|f| FieldEntry {
                    field: f.name.clone(),
                    value: f.value.clone(),
                })
                .collect(),
            text,
            align,
        }
    }
}

/// One decoded sentence; `states` holds maximal runs `[start, end, state]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeRecord {
    pub tokens: Vec<String>,
    pub states: Vec<(usize, usize, usize)>,
    pub logprob: f64,
    pub score: f64,
    #[serde(default)]
    pub truncated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<Vec<usize>>,
}

impl DecodeRecord {
    /// Per-token states expanded from the runs.
    pub fn token_states(&self) -> Vec<usize> {
        let mut z = Vec::with_capacity(self.tokens.len());
        for &(i, j, c) in &self.states {
            z.extend(std::iter::repeat_n(c, j.saturating_sub(i)));
        }
        z
    }
}

/// Extracted alignments of one record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentRecord {
    pub spans: Vec<Span>,
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    parse_jsonl(BufReader::new(file), path)
}

pub fn parse_jsonl<T: DeserializeOwned>(reader: impl BufRead, path: &Path) -> Result<Vec<T>, CliError> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line).map_err(|e| CliError::Format {
            path: path.display().to_string(),
            line: n + 1,
            message: e.to_string(),
        })?;
        out.push(v);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for it in items {
        let s = serde_json::to_string(it).map_err(|e| CliError::Internal(e.to_string()))?;
        writeln!(w, "{s}").map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Plans are whitespace-separated state ids, one plan per line.
pub fn read_plans(path: &Path) -> Result<Vec<Vec<usize>>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut plans = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let plan = line
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::Format {
                path: path.display().to_string(),
                line: n + 1,
                message: e.to_string(),
            })?;
        plans.push(plan);
    }
    Ok(plans)
}
