//! Finite symbol alphabets for observations, actions and rewards.
//!
//! Every symbol carries a dense index `0..size`; all bookkeeping elsewhere in
//! the crate runs on indices, labels only appear at the file-format boundary.
//! Reward symbols additionally carry a real value used by estimation and
//! planning.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// An ordered finite set of labeled symbols.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alphabet {
    labels: Vec<String>,
    by_label: HashMap<String, usize>,
}

impl Alphabet {
    /// Builds an alphabet from labels in the given order.
    ///
    /// Labels must be non-empty, unique, and free of commas and line breaks
    /// (they appear verbatim in CSV trace files).
    pub fn new<I, S>(labels: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.is_empty() {
            return Err(Error::InvalidAlphabet("no symbols".into()));
        }
        let mut by_label = HashMap::with_capacity(labels.len());
        for (i, label) in labels.iter().enumerate() {
            if label.is_empty() {
                return Err(Error::InvalidAlphabet(format!("symbol {i} has an empty label")));
            }
            if label.contains(',') || label.contains('\n') || label.contains('\r') {
                return Err(Error::InvalidAlphabet(format!(
                    "label {label:?} contains a separator character"
                )));
            }
            if by_label.insert(label.clone(), i).is_some() {
                return Err(Error::InvalidAlphabet(format!("duplicate label {label:?}")));
            }
        }
        Ok(Alphabet { labels, by_label })
    }

    /// Binary `{0, 1}` alphabet, handy in tests and the coin-flip environment.
    pub fn binary() -> Self {
        Alphabet::new(["0", "1"]).expect("static labels")
    }

    /// Alphabet `{0, 1, ..., n-1}` with decimal labels.
    pub fn numeric(n: usize) -> Result<Self> {
        Alphabet::new((0..n).map(|i| i.to_string()))
    }

    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn label(&self, index: usize) -> &str {
        &self.labels[index]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.by_label.get(label).copied()
    }

    pub fn contains_index(&self, index: usize) -> bool {
        index < self.labels.len()
    }
}

/// Reward alphabet: symbols plus the real value each symbol stands for.
///
/// Counting and coding work on the indices; planning uses the values.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardAlphabet {
    alphabet: Alphabet,
    values: Vec<f64>,
}

impl RewardAlphabet {
    pub fn new(alphabet: Alphabet, values: Vec<f64>) -> Result<Self> {
        if values.len() != alphabet.size() {
            return Err(Error::InvalidAlphabet(format!(
                "{} reward values for {} symbols",
                values.len(),
                alphabet.size()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidAlphabet("non-finite reward value".into()));
        }
        Ok(RewardAlphabet { alphabet, values })
    }

    /// Rewards whose labels are their decimal values, e.g. `["0", "1", "3"]`.
    pub fn from_numeric_labels<I, S>(labels: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let alphabet = Alphabet::new(labels)?;
        let values = alphabet
            .labels()
            .iter()
            .map(|l| {
                l.parse::<f64>().map_err(|_| {
                    Error::InvalidAlphabet(format!("reward label {l:?} is not numeric"))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        RewardAlphabet::new(alphabet, values)
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn size(&self) -> usize {
        self.alphabet.size()
    }

    pub fn label(&self, index: usize) -> &str {
        self.alphabet.label(index)
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.alphabet.index_of(label)
    }

    pub fn value(&self, index: usize) -> f64 {
        self.values[index]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}
