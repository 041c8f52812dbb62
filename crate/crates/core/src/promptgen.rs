//! Prompt rendering for every scenario, few-shot selection and JSONL emission.
//!
//! Templates are plain text files with `<placeholder>` slots, one file per
//! dataset and scenario (`templates/<dataset>/<scenario>.txt`). The bundled
//! set is compiled in; [`Templates::from_dir`] loads an edited copy.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{AnnotationRecord, Partition, SplitCorpus, UserIndex};
use crate::hashing::stable_hash_parts;
use crate::labels::{LabelSchema, LabelSet};
use crate::parser::serialize_labels;
use crate::scenario::ScenarioId;

pub mod slot {
    pub const TEXT: &str = "text";
    pub const USER_ID: &str = "user ID";
    pub const LABEL_LIST: &str = "list of the all possible labels from hyphens";
    pub const EXAMPLE_TEXT: &str = "example text";
    pub const EXAMPLE_RESPONSE: &str = "user's annotations for the example";
    pub const FIRST_EXAMPLE_TEXT: &str = "first example text";
    pub const FIRST_EXAMPLE_RESPONSE: &str = "user's annotations for the first example";
    pub const SECOND_EXAMPLE_TEXT: &str = "second example text";
    pub const SECOND_EXAMPLE_RESPONSE: &str = "user's annotations for the second example";
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("template has placeholder <{0}> but no value was supplied")]
    MissingSlot(String),
    #[error("value supplied for <{0}> but the template has no such placeholder")]
    UnusedSlot(String),
    #[error("no template for dataset `{dataset}`, scenario `{scenario}`")]
    MissingTemplate {
        dataset: String,
        scenario: ScenarioId,
    },
    #[error("user `{user}` has {pool_size} usable training examples, {needed} needed")]
    FewShot {
        user: String,
        pool_size: usize,
        needed: usize,
    },
    #[error("scenario `{scenario}` needs a user context for annotator `{annotator}`, none found in the training split")]
    MissingUser {
        scenario: ScenarioId,
        annotator: String,
    },
    #[error(transparent)]
    Labels(#[from] crate::parser::SerializeError),
    #[error("cannot read template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("write failed on {partition} output at line {line}: {source}")]
    Sink {
        partition: &'static str,
        line: usize,
        #[source]
        source: std::io::Error,
    },
}

/// Byte ranges of `<name>` placeholders in `template`.
fn placeholders(template: &str) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let bytes = template.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'<' {
            if let Some(len) = bytes[i + 1..]
                .iter()
                .position(|&b| b == b'>' || b == b'<' || b == b'\n')
            {
                let end = i + 1 + len;
                if bytes[end] == b'>' && len > 0 {
                    out.push((i, end + 1));
                    i = end + 1;
                    continue;
                }
            }
        }
        i += 1;
    }
    out
}

/// Substitutes every `<name>` placeholder with `slots[name]`.
///
/// Substitution is purely textual: values are not re-scanned, nothing is
/// trimmed, newlines are kept as they are. Every placeholder must have a
/// value and every value must be used.
pub fn render_template(
    template: &str,
    slots: &BTreeMap<&str, String>,
) -> Result<String, PromptError> {
    let spans = placeholders(template);
    let mut used = vec![false; slots.len()];
    let keys: Vec<&str> = slots.keys().copied().collect();
    let mut out =
        String::with_capacity(template.len() + slots.values().map(String::len).sum::<usize>());
    let mut last = 0;
    for (start, end) in spans {
        let name = &template[start + 1..end - 1];
        let k = keys
            .iter()
            .position(|k| *k == name)
            .ok_or_else(|| PromptError::MissingSlot(name.to_string()))?;
        used[k] = true;
        out.push_str(&template[last..start]);
        out.push_str(&slots[name]);
        last = end;
    }
    out.push_str(&template[last..]);
    if let Some(k) = used.iter().position(|u| !u) {
        return Err(PromptError::UnusedSlot(keys[k].to_string()));
    }
    Ok(out)
}

macro_rules! bundled {
    ($($ds:literal => [$($sc:literal),*]),*) => {
        &[$($(($ds, $sc, include_str!(concat!("../templates/", $ds, "/", $sc, ".txt")))),*),*]
    };
}

const BUNDLED: &[(&str, &str, &str)] = bundled!(
    "goemotions" => ["q0s", "q1s", "q2s", "lm", "lmp", "cls", "clsp"],
    "unhealthy_conversations" => ["q0s", "q1s", "q2s", "lm", "lmp", "cls", "clsp"]
);

#[derive(Debug, Clone, Default)]
pub struct Templates {
    by_key: HashMap<(String, ScenarioId), String>,
}

impl Templates {
    pub fn bundled() -> Self {
        let mut t = Self::default();
        for (ds, sc, body) in BUNDLED {
            t.insert(
                ds,
                sc.parse().expect("bundled scenario name"),
                body.to_string(),
            );
        }
        t
    }

    /// Loads `<dir>/<dataset>/<scenario>.txt` for every dataset directory found.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self, PromptError> {
        let dir = dir.as_ref();
        let io = |path: &Path, source| PromptError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut t = Self::default();
        for entry in std::fs::read_dir(dir).map_err(|e| io(dir, e))? {
            let entry = entry.map_err(|e| io(dir, e))?;
            if !entry.path().is_dir() {
                continue;
            }
            let dataset = entry.file_name().to_string_lossy().into_owned();
            for scenario in ScenarioId::ALL {
                let path = entry.path().join(format!("{scenario}.txt"));
                if path.exists() {
                    let body = std::fs::read_to_string(&path).map_err(|e| io(&path, e))?;
                    t.insert(&dataset, scenario, body);
                }
            }
        }
        Ok(t)
    }

    pub fn insert(&mut self, dataset: &str, scenario: ScenarioId, body: String) {
        self.by_key.insert((dataset.to_string(), scenario), body);
    }

    pub fn get(&self, dataset: &str, scenario: ScenarioId) -> Result<&str, PromptError> {
        self.by_key
            .get(&(dataset.to_string(), scenario))
            .map(String::as_str)
            .ok_or_else(|| PromptError::MissingTemplate {
                dataset: dataset.to_string(),
                scenario,
            })
    }
}

/// A training annotation usable as an in-context example.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FewShotExample {
    pub text_id: String,
    pub text: String,
    pub labels: LabelSet,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserContext {
    pub user_id: String,
    /// Position of the user's first appearance in the training split.
    pub user_index: usize,
    /// The user's own training annotations, in training-split order.
    pub few_shot_pool: Vec<FewShotExample>,
}

/// User contexts for every annotator of a split's training partition.
#[derive(Debug, Clone, Default)]
pub struct UserContexts {
    index: UserIndex,
    contexts: Vec<UserContext>,
}

impl UserContexts {
    pub fn from_split(split: &SplitCorpus) -> Self {
        let index = UserIndex::from_corpus(&split.train);
        let mut contexts: Vec<UserContext> = index
            .ids()
            .iter()
            .enumerate()
            .map(|(i, id)| UserContext {
                user_id: id.clone(),
                user_index: i,
                few_shot_pool: Vec::new(),
            })
            .collect();
        for r in &split.train.records {
            let i = index
                .get(&r.annotator_id)
                .expect("indexed from the same records");
            contexts[i].few_shot_pool.push(FewShotExample {
                text_id: r.text_id.clone(),
                text: r.text.clone(),
                labels: r.labels,
            });
        }
        Self { index, contexts }
    }

    pub fn get(&self, annotator_id: &str) -> Option<&UserContext> {
        self.index.get(annotator_id).map(|i| &self.contexts[i])
    }

    pub fn index(&self) -> &UserIndex {
        &self.index
    }

    pub fn len(&self) -> usize {
        self.contexts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contexts.is_empty()
    }
}

/// Draws `k` distinct examples from the user's pool, never the target text.
///
/// Examples whose id or text equals the target are excluded first. The draw
/// is a seeded partial shuffle keyed on (user, target text id, seed).
pub fn select_few_shot(
    user: &UserContext,
    k: usize,
    exclude_text_id: &str,
    exclude_text: &str,
    seed: u64,
) -> Result<Vec<FewShotExample>, PromptError> {
    if k == 0 {
        return Ok(Vec::new());
    }
    let mut pool: Vec<&FewShotExample> = user
        .few_shot_pool
        .iter()
        .filter(|e| e.text_id != exclude_text_id && e.text != exclude_text)
        .collect();
    if pool.len() < k {
        return Err(PromptError::FewShot {
            user: user.user_id.clone(),
            pool_size: pool.len(),
            needed: k,
        });
    }
    let mut rng =
        ChaCha8Rng::seed_from_u64(stable_hash_parts(&[&user.user_id, exclude_text_id], seed));
    let (chosen, _) = pool.partial_shuffle(&mut rng, k);
    Ok(chosen.iter().map(|e| (*e).clone()).collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptInstance {
    pub scenario: ScenarioId,
    pub prompt_text: String,
    pub text_id: String,
    pub annotator_id: String,
    pub gold_labels: LabelSet,
    pub render_seed: u64,
}

/// Value of the label-list slot: the template already supplies the first
/// `- `, so labels are joined with a newline and a fresh hyphen.
pub fn label_list_slot(schema: &LabelSchema) -> String {
    schema.labels().join("\n- ")
}

pub fn build_prompt(
    scenario: ScenarioId,
    record: &AnnotationRecord,
    schema: &LabelSchema,
    templates: &Templates,
    user: Option<&UserContext>,
    seed: u64,
) -> Result<PromptInstance, PromptError> {
    let template = templates.get(schema.dataset_name(), scenario)?;
    let needs_user = scenario.is_personalized() || scenario.few_shot_count() > 0;
    let user = match (needs_user, user) {
        (true, None) => {
            return Err(PromptError::MissingUser {
                scenario,
                annotator: record.annotator_id.clone(),
            })
        }
        (_, u) => u,
    };

    let mut slots: BTreeMap<&str, String> = BTreeMap::new();
    slots.insert(slot::TEXT, record.text.clone());
    slots.insert(slot::LABEL_LIST, label_list_slot(schema));
    if scenario.is_personalized() {
        let user = user.expect("checked above");
        slots.insert(slot::USER_ID, user.user_index.to_string());
    }
    let k = scenario.few_shot_count();
    if k > 0 {
        let user = user.expect("checked above");
        let examples = select_few_shot(user, k, &record.text_id, &record.text, seed)?;
        let names: &[(&str, &str)] = if k == 1 {
            &[(slot::EXAMPLE_TEXT, slot::EXAMPLE_RESPONSE)]
        } else {
            &[
                (slot::FIRST_EXAMPLE_TEXT, slot::FIRST_EXAMPLE_RESPONSE),
                (slot::SECOND_EXAMPLE_TEXT, slot::SECOND_EXAMPLE_RESPONSE),
            ]
        };
        for ((text_slot, response_slot), example) in names.iter().zip(&examples) {
            slots.insert(text_slot, example.text.clone());
            slots.insert(response_slot, serialize_labels(example.labels, schema)?);
        }
    }
    Ok(PromptInstance {
        scenario,
        prompt_text: render_template(template, &slots)?,
        text_id: record.text_id.clone(),
        annotator_id: record.annotator_id.clone(),
        gold_labels: record.labels,
        render_seed: seed,
    })
}

/// Line format for prompts sent to a model (query scenarios and any
/// inference-only use).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InferenceLine {
    pub scenario: ScenarioId,
    pub text_id: String,
    pub annotator_id: String,
    pub prompt: String,
    pub gold: Vec<String>,
}

/// Line format for fine-tuning records.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainLine {
    pub scenario: ScenarioId,
    pub text_id: String,
    pub annotator_id: String,
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_vector: Option<Vec<u8>>,
}

impl PromptInstance {
    pub fn to_inference_line(&self, schema: &LabelSchema) -> InferenceLine {
        InferenceLine {
            scenario: self.scenario,
            text_id: self.text_id.clone(),
            annotator_id: self.annotator_id.clone(),
            prompt: self.prompt_text.clone(),
            gold: schema
                .names(self.gold_labels)
                .into_iter()
                .map(String::from)
                .collect(),
        }
    }

    /// Training target: the canonical label string for LM/LM-P, the 0/1
    /// vector for CLS/CLS-P.
    pub fn to_train_line(&self, schema: &LabelSchema) -> Result<TrainLine, PromptError> {
        let (target_text, target_vector) = if self.scenario.is_classification() {
            (None, Some(self.gold_labels.to_vector(schema.len())))
        } else {
            (Some(serialize_labels(self.gold_labels, schema)?), None)
        };
        Ok(TrainLine {
            scenario: self.scenario,
            text_id: self.text_id.clone(),
            annotator_id: self.annotator_id.clone(),
            prompt: self.prompt_text.clone(),
            target_text,
            target_vector,
        })
    }
}

impl InferenceLine {
    pub fn from_train_line(line: &TrainLine, schema: &LabelSchema) -> Option<Self> {
        let gold = match (&line.target_text, &line.target_vector) {
            (_, Some(v)) => v
                .iter()
                .enumerate()
                .filter(|(_, &b)| b != 0)
                .filter_map(|(i, _)| schema.labels().get(i).cloned())
                .collect(),
            (Some(t), None) => crate::parser::parse_label_list(t, schema)
                .labels
                .iter()
                .map(|i| schema.label(i).to_string())
                .collect(),
            (None, None) => return None,
        };
        Some(Self {
            scenario: line.scenario,
            text_id: line.text_id.clone(),
            annotator_id: line.annotator_id.clone(),
            prompt: line.prompt.clone(),
            gold,
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmitCounts {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

impl EmitCounts {
    fn bump(&mut self, p: Partition) {
        match p {
            Partition::Train => self.train += 1,
            Partition::Validation => self.validation += 1,
            Partition::Test => self.test += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.train + self.validation + self.test
    }
}

/// Partitions a scenario emits: query prompts are only built for test
/// texts, fine-tuning records for all three partitions.
pub fn emitted_partitions(scenario: ScenarioId) -> &'static [Partition] {
    if scenario.is_query() {
        &[Partition::Test]
    } else {
        &Partition::ALL
    }
}

/// Renders one JSONL line per record of the relevant partitions, sorted by
/// (text_id, annotator_id), and hands each line to `sink`.
///
/// Rendering runs in parallel; lines reach the sink in the sorted order.
pub fn emit_corpus<W, F>(
    split: &SplitCorpus,
    scenario: ScenarioId,
    templates: &Templates,
    seed: u64,
    mut sink: F,
) -> Result<EmitCounts, PromptError>
where
    W: Write,
    F: FnMut(Partition) -> W,
{
    let schema = split.schema();
    let users = UserContexts::from_split(split);
    let mut counts = EmitCounts::default();
    for &partition in emitted_partitions(scenario) {
        let mut records: Vec<&AnnotationRecord> =
            split.partition(partition).records.iter().collect();
        records.sort_by(|a, b| (&a.text_id, &a.annotator_id).cmp(&(&b.text_id, &b.annotator_id)));
        let lines: Vec<Vec<u8>> = records
            .par_iter()
            .map(|r| {
                let prompt = build_prompt(
                    scenario,
                    r,
                    schema,
                    templates,
                    users.get(&r.annotator_id),
                    seed,
                )?;
                let mut line = if scenario.is_query() {
                    serde_json::to_vec(&prompt.to_inference_line(schema))
                } else {
                    serde_json::to_vec(&prompt.to_train_line(schema)?)
                }
                .expect("plain structs serialize");
                line.push(b'\n');
                Ok(line)
            })
            .collect::<Result<_, PromptError>>()?;
        let mut out = sink(partition);
        for (i, line) in lines.iter().enumerate() {
            out.write_all(line).map_err(|source| PromptError::Sink {
                partition: partition.name(),
                line: i + 1,
                source,
            })?;
            counts.bump(partition);
        }
        out.flush().map_err(|source| PromptError::Sink {
            partition: partition.name(),
            line: lines.len(),
            source,
        })?;
    }
    Ok(counts)
}
