//! Label schemas and compact label sets.
//!
//! A [`LabelSchema`] fixes the canonical order of a dataset's labels. Every
//! label set in the harness is a [`LabelSet`], a bitmask over schema indices,
//! so set algebra and canonical ordering are free.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Upper bound on the number of labels a schema may declare.
pub const MAX_LABELS: usize = 64;

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("schema `{0}` declares no labels")]
    Empty(String),
    #[error("schema `{schema}` declares label `{label}` more than once")]
    DuplicateLabel { schema: String, label: String },
    #[error("schema `{schema}` declares {count} labels; at most {MAX_LABELS} are supported")]
    TooManyLabels { schema: String, count: usize },
    #[error("label `{label}` is not part of schema `{schema}`")]
    UnknownLabel { schema: String, label: String },
    #[error("cannot read schema file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse schema file {path}: {message}")]
    Format { path: String, message: String },
}

/// Lowercase, trim, and collapse internal whitespace runs to one space.
pub fn canonical_label(raw: &str) -> String {
    raw.split_whitespace()
        .map(|w| w.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Deserialize)]
struct RawSchema {
    dataset_name: String,
    task_phrase: String,
    labels: Vec<String>,
}

/// Ordered label vocabulary of one dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LabelSchema {
    dataset_name: String,
    task_phrase: String,
    labels: Vec<String>,
}

impl LabelSchema {
    pub fn new(
        dataset_name: impl Into<String>,
        task_phrase: impl Into<String>,
        labels: impl IntoIterator<Item = impl AsRef<str>>,
    ) -> Result<Self, SchemaError> {
        let dataset_name = dataset_name.into();
        let labels: Vec<String> = labels
            .into_iter()
            .map(|l| canonical_label(l.as_ref()))
            .collect();
        if labels.is_empty() || labels.iter().any(|l| l.is_empty()) {
            return Err(SchemaError::Empty(dataset_name));
        }
        if labels.len() > MAX_LABELS {
            return Err(SchemaError::TooManyLabels {
                schema: dataset_name,
                count: labels.len(),
            });
        }
        for (i, label) in labels.iter().enumerate() {
            if labels[..i].contains(label) {
                return Err(SchemaError::DuplicateLabel {
                    schema: dataset_name,
                    label: label.clone(),
                });
            }
        }
        Ok(Self {
            dataset_name,
            task_phrase: task_phrase.into(),
            labels,
        })
    }

    /// Loads a schema from a `.toml` or `.json` file.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, SchemaError> {
        let path = path.as_ref();
        let shown = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| SchemaError::Io {
            path: shown.clone(),
            source,
        })?;
        let raw: RawSchema = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| SchemaError::Format {
                path: shown.clone(),
                message: e.to_string(),
            })?
        } else {
            toml::from_str(&text).map_err(|e| SchemaError::Format {
                path: shown.clone(),
                message: e.to_string(),
            })?
        };
        Self::new(raw.dataset_name, raw.task_phrase, raw.labels)
    }

    /// The 28 GoEmotions categories in canonical order.
    pub fn goemotions() -> Self {
        Self::from_toml_str(include_str!("../schemas/goemotions.toml"))
            .expect("bundled schema is valid")
    }

    /// The Unhealthy Conversations attributes followed by `healthy`.
    pub fn unhealthy_conversations() -> Self {
        Self::from_toml_str(include_str!("../schemas/unhealthy_conversations.toml"))
            .expect("bundled schema is valid")
    }

    pub fn from_toml_str(text: &str) -> Result<Self, SchemaError> {
        let raw: RawSchema = toml::from_str(text).map_err(|e| SchemaError::Format {
            path: "<inline>".into(),
            message: e.to_string(),
        })?;
        Self::new(raw.dataset_name, raw.task_phrase, raw.labels)
    }

    pub fn dataset_name(&self) -> &str {
        &self.dataset_name
    }

    pub fn task_phrase(&self) -> &str {
        &self.task_phrase
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Index of a label given in canonical form.
    pub fn index_of(&self, canonical: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == canonical)
    }

    pub fn label(&self, index: usize) -> &str {
        &self.labels[index]
    }

    /// Builds a set from raw label strings, canonicalizing each one.
    pub fn set_from_names<I, S>(&self, names: I) -> Result<LabelSet, SchemaError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut set = LabelSet::empty();
        for name in names {
            let canonical = canonical_label(name.as_ref());
            let index = self
                .index_of(&canonical)
                .ok_or_else(|| SchemaError::UnknownLabel {
                    schema: self.dataset_name.clone(),
                    label: name.as_ref().to_string(),
                })?;
            set.insert(index);
        }
        Ok(set)
    }

    /// Label names of `set` in schema order.
    pub fn names(&self, set: LabelSet) -> Vec<&str> {
        set.iter().map(|i| self.labels[i].as_str()).collect()
    }

    /// The set containing every schema label.
    pub fn full_set(&self) -> LabelSet {
        LabelSet::from_indices(0..self.len())
    }
}

/// A subset of a schema's labels, stored as a bitmask over label indices.
///
/// Iteration yields indices in ascending (schema) order.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct LabelSet(u64);

impl LabelSet {
    pub const fn empty() -> Self {
        Self(0)
    }

    pub const fn from_bits(bits: u64) -> Self {
        Self(bits)
    }

    pub fn from_indices(indices: impl IntoIterator<Item = usize>) -> Self {
        let mut set = Self::empty();
        for i in indices {
            set.insert(i);
        }
        set
    }

    pub const fn bits(self) -> u64 {
        self.0
    }

    pub fn insert(&mut self, index: usize) {
        assert!(index < MAX_LABELS, "label index {index} out of range");
        self.0 |= 1 << index;
    }

    pub fn remove(&mut self, index: usize) {
        if index < MAX_LABELS {
            self.0 &= !(1 << index);
        }
    }

    pub fn contains(self, index: usize) -> bool {
        index < MAX_LABELS && self.0 & (1 << index) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn union(self, other: Self) -> Self {
        Self(self.0 | other.0)
    }

    pub fn intersection(self, other: Self) -> Self {
        Self(self.0 & other.0)
    }

    pub fn is_subset(self, other: Self) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = usize> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                None
            } else {
                let i = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                Some(i)
            }
        })
    }

    /// Dense 0/1 vector of length `n_labels`.
    pub fn to_vector(self, n_labels: usize) -> Vec<u8> {
        (0..n_labels).map(|i| u8::from(self.contains(i))).collect()
    }
}

impl FromIterator<usize> for LabelSet {
    fn from_iter<T: IntoIterator<Item = usize>>(iter: T) -> Self {
        Self::from_indices(iter)
    }
}

impl fmt::Display for LabelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (n, i) in self.iter().enumerate() {
            if n > 0 {
                write!(f, ",")?;
            }
            write!(f, "{i}")?;
        }
        write!(f, "}}")
    }
}
