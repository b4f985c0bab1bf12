//! Restaurant-style synthetic corpus with exact gold alignments.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::formats::{CorpusRecord, FieldEntry, Span};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldPool {
    pub name: String,
    pub values: Vec<String>,
    /// Phrases realizing the field; `{}` marks the slot.
    pub phrases: Vec<String>,
    /// Probability that a record has this field; the first field is always present.
    pub presence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub fields: Vec<FieldPool>,
    pub size: usize,
    pub seed: u64,
    /// Fraction of records whose last field repeats the value of the first.
    pub duplicate_rate: f64,
    pub max_len: usize,
    pub valid_fraction: f64,
    pub test_fraction: f64,
}

fn pool(name: &str, presence: f64, values: &[&str], phrases: &[&str]) -> FieldPool {
    FieldPool {
        name: name.into(),
        values: values.iter().map(|s| s.to_string()).collect(),
        phrases: phrases.iter().map(|s| s.to_string()).collect(),
        presence,
    }
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        let fields = vec![
            pool(
                "name",
                1.0,
                &[
                    "aromi", "golden palace", "blue spice", "cotto", "giraffe", "wrestlers", "zizzi",
                    "loch fyne", "green man", "strada", "bibimbap house", "eagle", "mill", "phoenix",
                ],
                &["{}"],
            ),
            pool(
                "eatType",
                0.8,
                &["coffee shop", "pub", "bistro", "diner", "tea room"],
                &["is a {}", "is a kind of {}"],
            ),
            pool(
                "food",
                0.8,
                &["italian", "french", "chinese", "indian", "japanese", "fast food", "english", "thai"],
                &["serves {} dishes", "serves great {} dishes", "offers {} meals"],
            ),
            pool(
                "rating",
                0.7,
                &["low", "average", "high", "excellent", "poor"],
                &["has a {} rating", "has a very {} rating", "is rated {}"],
            ),
            pool(
                "area",
                0.7,
                &["riverside", "city centre", "old town", "harbour"],
                &["is located in {}", "is located in the {} area", "sits in {}"],
            ),
            pool(
                "near",
                0.6,
                &[
                    "burger king", "crowne plaza hotel", "rainbow vegetarian cafe", "ranch", "sicilia",
                    "yippee noodle bar", "avalon", "clare hall", "portland arms",
                ],
                &["is near {}", "is near the {}", "can be found close to {}"],
            ),
        ];
        Self {
            fields,
            size: 2000,
            seed: 1,
            duplicate_rate: 0.0,
            max_len: 48,
            valid_fraction: 0.1,
            test_fraction: 0.1,
        }
    }
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.fields.is_empty() {
            return Err(CliError::Usage("synthetic spec has no fields".into()));
        }
        for f in &self.fields {
            if f.values.is_empty() || f.phrases.is_empty() {
                return Err(CliError::Usage(format!("field {} needs values and phrases", f.name)));
            }
            for p in &f.phrases {
                let slots: Vec<&str> = p.split_whitespace().filter(|w| is_slot(w)).collect();
                if slots.len() != 1 {
                    return Err(CliError::Usage(format!("phrase {p:?} of {} needs exactly one slot", f.name)));
                }
                let named = &slots[0][1..slots[0].len() - 1];
                if !named.is_empty() && named != f.name {
                    return Err(CliError::Usage(format!("phrase {p:?} references unknown field {named:?}")));
                }
            }
            if f.values.iter().any(|v| words(v).is_empty() || words(v).len() > 8) {
                return Err(CliError::Usage(format!("values of {} must have 1 to 8 tokens", f.name)));
            }
        }
        if !(0.0..=1.0).contains(&self.duplicate_rate) {
            return Err(CliError::Usage("duplicate rate must lie in [0, 1]".into()));
        }
        if self.valid_fraction + self.test_fraction >= 1.0 {
            return Err(CliError::Usage("validation and test fractions leave no training data".into()));
        }
        Ok(())
    }

    pub fn vocabulary_size(&self) -> usize {
        let mut all: Vec<String> = Vec::new();
        for f in &self.fields {
            all.extend(f.values.iter().flat_map(|v| words(v)));
            all.extend(f.phrases.iter().flat_map(|p| words(p)).filter(|w| !is_slot(w)));
        }
        all.extend(["and", "."].map(String::from));
        all.sort();
        all.dedup();
        all.len()
    }

    fn record(&self, rng: &mut ChaCha8Rng) -> CorpusRecord {
        let first = &self.fields[0];
        let mut table = vec![FieldEntry {
            field: first.name.clone(),
            value: words(first.values.choose(rng).expect("nonempty")),
        }];
        let mut rest: Vec<usize> = (1..self.fields.len())
            .filter(|&k| rng.random::<f64>() < self.fields[k].presence)
            .collect();
        if rest.is_empty() && self.fields.len() > 1 {
            rest.push(rng.random_range(1..self.fields.len()));
        }
        let duplicate = self.fields.len() > 1 && rng.random::<f64>() < self.duplicate_rate;
        let last = self.fields.len() - 1;
        if duplicate && !rest.contains(&last) {
            rest.push(last);
            rest.sort();
        }
        for &k in &rest {
            let f = &self.fields[k];
            let value = if duplicate && k == last {
                table[0].value.clone()
            } else {
                words(f.values.choose(rng).expect("nonempty"))
            };
            table.push(FieldEntry {
                field: f.name.clone(),
                value,
            });
        }
        let mut order = rest.clone();
        order.shuffle(rng);

        let mut text = Vec::new();
        let mut align = Vec::new();
        let mut place = |text: &mut Vec<String>, k: usize, phrase: &str| {
            let value = &table.iter().find(|e| e.field == self.fields[k].name).expect("active").value;
            for w in phrase.split_whitespace() {
                if is_slot(w) {
                    let i = text.len();
                    text.extend(value.iter().cloned());
                    align.push(Span(i, text.len(), self.fields[k].name.clone()));
                } else {
                    text.push(w.to_string());
                }
            }
        };
        place(&mut text, 0, first.phrases.choose(rng).expect("nonempty"));
        for (n, &k) in order.iter().enumerate() {
            if n > 0 {
                text.push("and".into());
            }
            let phrase = self.fields[k].phrases.choose(rng).expect("nonempty").clone();
            place(&mut text, k, &phrase);
        }
        text.push(".".into());
        CorpusRecord {
            table,
            text,
            align: Some(align),
        }
    }

    /// Train, validation and test splits; deterministic in `seed`.
    pub fn generate(&self) -> Result<Splits, CliError> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut all = Vec::with_capacity(self.size);
        while all.len() < self.size {
            let r = self.record(&mut rng);
            if r.text.len() <= self.max_len {
                all.push(r);
            }
        }
        let n_valid = (self.size as f64 * self.valid_fraction).round() as usize;
        let n_test = (self.size as f64 * self.test_fraction).round() as usize;
        let test = all.split_off(self.size - n_test);
        let valid = all.split_off(self.size - n_test - n_valid);
        Ok(Splits { train: all, valid, test })
    }
}

/// `{}` or `{field}`.
fn is_slot(w: &str) -> bool {
    w.len() >= 2 && w.starts_with('{') && w.ends_with('}')
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Vec<CorpusRecord>,
    pub valid: Vec<CorpusRecord>,
    pub test: Vec<CorpusRecord>,
}
