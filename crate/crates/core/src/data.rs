//! Tables, sentences and the vocabularies that index them.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const UNK: &str = "<unk>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";

pub const UNK_ID: usize = 0;
pub const BOS_ID: usize = 1;
pub const EOS_ID: usize = 2;

/// One named field and its value tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Field {
    pub name: String,
    pub value: Vec<String>,
}

impl Field {
    pub fn new(name: &str, value: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            value: value.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// The conditioning record `x`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Table {
    pub fields: Vec<Field>,
}

impl Table {
    pub fn new(fields: Vec<Field>) -> Self {
        Self { fields }
    }

    /// Unique names, non-empty values, at least one field.
    pub fn validate(&self) -> Result<()> {
        if self.fields.is_empty() {
            return Err(Error::EmptyTable);
        }
        for (k, f) in self.fields.iter().enumerate() {
            if f.value.is_empty() {
                return Err(Error::InvalidTable(format!("field {} has an empty value", f.name)));
            }
            if self.fields[..k].iter().any(|g| g.name == f.name) {
                return Err(Error::InvalidTable(format!("duplicate field {}", f.name)));
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Field> {
        self.fields.iter().find(|f| f.name == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    pub fn num_tokens(&self) -> usize {
        self.fields.iter().map(|f| f.value.len()).sum()
    }
}

/// Word types, with `<unk>`, `<bos>` and `<eos>` at fixed indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        Self::from_tokens(tokens)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Default for Vocab {
    fn default() -> Self {
        Self::from_tokens([UNK, BOS, EOS].iter().map(|s| s.to_string()).collect())
            .expect("special tokens are distinct")
    }
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuilds a vocabulary from its token list; the first three entries
    /// must be the special tokens.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 3 || tokens[UNK_ID] != UNK || tokens[BOS_ID] != BOS || tokens[EOS_ID] != EOS {
            return Err(Error::InvalidConfig("vocabulary must start with <unk> <bos> <eos>".into()));
        }
        let mut index = BTreeMap::new();
        for (k, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), k).is_some() {
                return Err(Error::InvalidConfig(format!("duplicate vocabulary entry {t}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn add(&mut self, token: &str) -> usize {
        if let Some(&k) = self.index.get(token) {
            return k;
        }
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), self.tokens.len() - 1);
        self.tokens.len() - 1
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map(String::as_str).unwrap_or(UNK)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }
}

/// The global field inventory `F`, in a fixed order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FieldInventory {
    names: Vec<String>,
}

impl FieldInventory {
    pub fn new(names: Vec<String>) -> Result<Self> {
        for (k, n) in names.iter().enumerate() {
            if names[..k].contains(n) {
                return Err(Error::InvalidConfig(format!("duplicate field {n}")));
            }
        }
        Ok(Self { names })
    }

    pub fn add(&mut self, name: &str) -> usize {
        match self.index(name) {
            Some(k) => k,
            None => {
                self.names.push(name.to_string());
                self.names.len() - 1
            }
        }
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn name(&self, k: usize) -> &str {
        &self.names[k]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Global indices of the fields present in `table`; unknown fields are
    /// an error.
    pub fn active(&self, table: &Table) -> Result<Vec<usize>> {
        table
            .fields
            .iter()
            .map(|f| {
                self.index(&f.name)
                    .ok_or_else(|| Error::InvalidTable(format!("unknown field {}", f.name)))
            })
            .collect()
    }
}

/// A table token with its field and within-field positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TableToken {
    pub word: usize,
    pub field: usize,
    /// Position counted from the left of the value, 0-based.
    pub fwd: usize,
    /// Position counted from the right of the value, 0-based.
    pub bwd: usize,
}

/// Flattens `table` to token records; fails on an empty or invalid table.
pub fn encode_table(table: &Table, vocab: &Vocab, fields: &FieldInventory) -> Result<Vec<TableToken>> {
    table.validate()?;
    let active = fields.active(table)?;
    let mut out = Vec::with_capacity(table.num_tokens());
    for (f, &gf) in table.fields.iter().zip(&active) {
        let n = f.value.len();
        for (k, w) in f.value.iter().enumerate() {
            out.push(TableToken {
                word: vocab.id(w),
                field: gf,
                fwd: k,
                bwd: n - 1 - k,
            });
        }
    }
    Ok(out)
}
