//! Multi-label F1-macro, the relative gain metric, and report tables.
//!
//! The evaluation unit is one (text, annotator) pair scored against that
//! annotator's own gold labels. Counts are pooled over all pairs before
//! per-label F1 is taken. Scores are fractions internally and percentage
//! points only when rendered.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::AnnotationRecord;
use crate::labels::{LabelSchema, LabelSet, SchemaError};
use crate::parser::PredictionRecord;
use crate::scenario::ScenarioId;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("prediction for text `{text_id}`, annotator `{annotator_id}` has no gold record")]
    Unjoined {
        text_id: String,
        annotator_id: String,
    },
    #[error("more than one prediction for text `{text_id}`, annotator `{annotator_id}`")]
    DuplicatePrediction {
        text_id: String,
        annotator_id: String,
    },
    #[error("gain is undefined for a baseline score of {0}")]
    UndefinedGain(f64),
    #[error(transparent)]
    Labels(#[from] SchemaError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl LabelCounts {
    /// 2tp / (2tp + fp + fn), with 0/0 taken as 0.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        }
    }

    /// Number of gold positives.
    pub fn support(&self) -> u64 {
        self.tp + self.fn_
    }
}

/// Per-label confusion counts. Merging is associative and commutative, so
/// counts from disjoint record shards can be combined in any order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub per_label: Vec<LabelCounts>,
    pub records: u64,
}

impl ConfusionCounts {
    pub fn new(n_labels: usize) -> Self {
        Self {
            per_label: vec![LabelCounts::default(); n_labels],
            records: 0,
        }
    }

    pub fn add(&mut self, gold: LabelSet, predicted: LabelSet) {
        self.records += 1;
        let n = self.per_label.len();
        let (g, p) = (gold.bits(), predicted.bits());
        for i in LabelSet::from_bits(g & p).iter().filter(|&i| i < n) {
            self.per_label[i].tp += 1;
        }
        for i in LabelSet::from_bits(p & !g).iter().filter(|&i| i < n) {
            self.per_label[i].fp += 1;
        }
        for i in LabelSet::from_bits(g & !p).iter().filter(|&i| i < n) {
            self.per_label[i].fn_ += 1;
        }
    }

    pub fn merge(mut self, other: &Self) -> Self {
        assert_eq!(
            self.per_label.len(),
            other.per_label.len(),
            "label count mismatch"
        );
        for (a, b) in self.per_label.iter_mut().zip(&other.per_label) {
            a.tp += b.tp;
            a.fp += b.fp;
            a.fn_ += b.fn_;
        }
        self.records += other.records;
        self
    }

    pub fn from_pairs(pairs: &[(LabelSet, LabelSet)], n_labels: usize) -> Self {
        let mut c = Self::new(n_labels);
        for &(gold, pred) in pairs {
            c.add(gold, pred);
        }
        c
    }

    pub fn scores(&self) -> F1Scores {
        let per_label: Vec<f64> = self.per_label.iter().map(LabelCounts::f1).collect();
        let support: Vec<u64> = self.per_label.iter().map(LabelCounts::support).collect();
        let macro_f1 = if per_label.is_empty() {
            0.0
        } else {
            per_label.iter().sum::<f64>() / per_label.len() as f64
        };
        let supported: Vec<f64> = per_label
            .iter()
            .zip(&support)
            .filter(|(_, &s)| s > 0)
            .map(|(f, _)| *f)
            .collect();
        let macro_f1_supported = if supported.is_empty() {
            0.0
        } else {
            supported.iter().sum::<f64>() / supported.len() as f64
        };
        F1Scores {
            macro_f1,
            macro_f1_supported,
            per_label,
            support,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Scores {
    /// Unweighted mean over all schema labels.
    pub macro_f1: f64,
    /// Mean over labels with at least one gold positive.
    pub macro_f1_supported: f64,
    pub per_label: Vec<f64>,
    pub support: Vec<u64>,
}

/// F1-macro over (gold, predicted) pairs.
pub fn f1_macro(pairs: &[(LabelSet, LabelSet)], n_labels: usize) -> F1Scores {
    ConfusionCounts::from_pairs(pairs, n_labels).scores()
}

/// Relative improvement in percent: (personalized - baseline) / baseline * 100.
pub fn gain(personalized: f64, baseline: f64) -> Result<f64, MetricsError> {
    if baseline.is_nan() || baseline <= 0.0 {
        return Err(MetricsError::UndefinedGain(baseline));
    }
    Ok((personalized - baseline) / baseline * 100.0)
}

/// Predictions matched to their gold annotations.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Joined {
    pub pairs: Vec<(LabelSet, LabelSet)>,
    /// Predictions whose parse left at least one unmatched token.
    pub with_unmatched: usize,
    /// Predictions that carry a query error.
    pub errored: usize,
    /// Gold records nobody predicted.
    pub missing: usize,
}

impl Joined {
    pub fn unmatched_rate(&self) -> f64 {
        if self.pairs.is_empty() {
            0.0
        } else {
            self.with_unmatched as f64 / self.pairs.len() as f64
        }
    }
}

/// Joins each prediction to the gold record with the same
/// (text_id, annotator_id). Errored predictions count as empty predictions.
pub fn join_predictions(
    gold: &[AnnotationRecord],
    predictions: &[PredictionRecord],
    schema: &LabelSchema,
) -> Result<Joined, MetricsError> {
    let gold_by_key: HashMap<(&str, &str), LabelSet> = gold
        .iter()
        .map(|r| ((r.text_id.as_str(), r.annotator_id.as_str()), r.labels))
        .collect();
    let mut seen: HashMap<(&str, &str), ()> = HashMap::with_capacity(predictions.len());
    let mut joined = Joined::default();
    for p in predictions {
        let key = (p.text_id.as_str(), p.annotator_id.as_str());
        let Some(&gold_labels) = gold_by_key.get(&key) else {
            return Err(MetricsError::Unjoined {
                text_id: p.text_id.clone(),
                annotator_id: p.annotator_id.clone(),
            });
        };
        if seen.insert(key, ()).is_some() {
            return Err(MetricsError::DuplicatePrediction {
                text_id: p.text_id.clone(),
                annotator_id: p.annotator_id.clone(),
            });
        }
        let predicted = schema.set_from_names(&p.labels)?;
        if !p.unmatched.is_empty() {
            joined.with_unmatched += 1;
        }
        if p.error.is_some() {
            joined.errored += 1;
        }
        joined.pairs.push((gold_labels, predicted));
    }
    joined.missing = gold_by_key.len() - seen.len();
    Ok(joined)
}

/// Score of one model on one dataset under one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioScore {
    pub dataset: String,
    pub model: String,
    pub scenario: ScenarioId,
    /// Fraction in [0, 1].
    pub f1_macro: f64,
    pub f1_macro_supported: f64,
    #[serde(default)]
    pub per_label: Vec<(String, f64)>,
    pub n_records: usize,
    pub unmatched_rate: f64,
}

impl ScenarioScore {
    pub fn from_joined(
        dataset: &str,
        model: &str,
        scenario: ScenarioId,
        joined: &Joined,
        schema: &LabelSchema,
    ) -> Self {
        let scores = f1_macro(&joined.pairs, schema.len());
        Self {
            dataset: dataset.to_string(),
            model: model.to_string(),
            scenario,
            f1_macro: scores.macro_f1,
            f1_macro_supported: scores.macro_f1_supported,
            per_label: schema
                .labels()
                .iter()
                .cloned()
                .zip(scores.per_label)
                .collect(),
            n_records: joined.pairs.len(),
            unmatched_rate: joined.unmatched_rate(),
        }
    }

    /// A score known only by its F1 value, e.g. a reference value.
    pub fn from_value(dataset: &str, model: &str, scenario: ScenarioId, f1_macro: f64) -> Self {
        Self {
            dataset: dataset.to_string(),
            model: model.to_string(),
            scenario,
            f1_macro,
            f1_macro_supported: f1_macro,
            per_label: Vec::new(),
            n_records: 0,
            unmatched_rate: 0.0,
        }
    }
}

/// Personalized-vs-baseline comparison for one model and dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainRow {
    pub dataset: String,
    pub model: String,
    pub baseline: ScenarioId,
    pub personalized: ScenarioId,
    pub baseline_f1: f64,
    pub personalized_f1: f64,
    /// Percent; `None` when the baseline score is zero.
    pub gain_pct: Option<f64>,
}

/// LM vs LM-P and CLS vs CLS-P gains for every (dataset, model) that has both.
pub fn gain_rows(scores: &[ScenarioScore]) -> Vec<GainRow> {
    let mut rows = Vec::new();
    for (dataset, models) in group(scores) {
        for (model, by_scenario) in models {
            for personalized in [ScenarioId::Lmp, ScenarioId::Clsp] {
                let baseline = personalized.baseline().expect("personalized scenario");
                if let (Some(b), Some(p)) =
                    (by_scenario.get(&baseline), by_scenario.get(&personalized))
                {
                    rows.push(GainRow {
                        dataset: dataset.to_string(),
                        model: model.to_string(),
                        baseline,
                        personalized,
                        baseline_f1: b.f1_macro,
                        personalized_f1: p.f1_macro,
                        gain_pct: gain(p.f1_macro, b.f1_macro).ok(),
                    });
                }
            }
        }
    }
    rows
}

type Grouped<'a> = Vec<(
    &'a str,
    Vec<(&'a str, BTreeMap<ScenarioId, &'a ScenarioScore>)>,
)>;

/// Groups scores by dataset then model, both in first-appearance order.
/// A later score for the same cell replaces an earlier one.
fn group(scores: &[ScenarioScore]) -> Grouped<'_> {
    let mut out: Grouped<'_> = Vec::new();
    for s in scores {
        let ds = match out.iter().position(|(d, _)| *d == s.dataset) {
            Some(i) => i,
            None => {
                out.push((&s.dataset, Vec::new()));
                out.len() - 1
            }
        };
        let models = &mut out[ds].1;
        let m = match models.iter().position(|(m, _)| *m == s.model) {
            Some(i) => i,
            None => {
                models.push((&s.model, BTreeMap::new()));
                models.len() - 1
            }
        };
        models[m].1.insert(s.scenario, s);
    }
    out
}

pub const SCORE_CSV_HEADER: &str =
    "dataset,model,scenario,f1_macro_pp,f1_macro_excl_pp,n_records,unmatched_rate";
pub const GAIN_CSV_HEADER: &str =
    "dataset,model,baseline,personalized,baseline_pp,personalized_pp,gain_pct";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedReport {
    pub text: String,
    pub scores_csv: String,
    pub gains_csv: String,
    pub json: String,
}

fn pp(fraction: f64) -> String {
    format!("{:.2}", fraction * 100.0)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[derive(Serialize)]
struct JsonScore<'a> {
    dataset: &'a str,
    model: &'a str,
    scenario: &'static str,
    f1_macro_pp: f64,
    f1_macro_excl_pp: f64,
    n_records: usize,
    unmatched_rate: f64,
}

#[derive(Serialize)]
struct JsonGain<'a> {
    dataset: &'a str,
    model: &'a str,
    baseline: &'static str,
    personalized: &'static str,
    baseline_pp: f64,
    personalized_pp: f64,
    gain_pct: Option<f64>,
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Renders one F1 table per dataset (rows are models, columns scenarios),
/// a gain table, and CSV/JSON mirrors. Output depends only on the input.
pub fn report(scores: &[ScenarioScore]) -> RenderedReport {
    let grouped = group(scores);
    let gains = gain_rows(scores);
    let mut text = String::new();

    if grouped.is_empty() {
        text.push_str("Model\n-----\n");
    }
    for (dataset, models) in &grouped {
        let columns: Vec<ScenarioId> = ScenarioId::ALL
            .into_iter()
            .filter(|s| models.iter().any(|(_, m)| m.contains_key(s)))
            .collect();
        let model_width = models
            .iter()
            .map(|(m, _)| m.len())
            .max()
            .unwrap_or(0)
            .max(5);
        let _ = writeln!(text, "{dataset} (F1-macro, pp)");
        let mut header = format!("{:<model_width$}", "Model");
        for c in &columns {
            let _ = write!(header, " | {:>6}", c.display_name());
        }
        let _ = writeln!(text, "{header}");
        let _ = writeln!(text, "{}", "-".repeat(header.len()));
        for (model, by_scenario) in models {
            let _ = write!(text, "{model:<model_width$}");
            for c in &columns {
                let cell = by_scenario
                    .get(c)
                    .map(|s| pp(s.f1_macro))
                    .unwrap_or_else(|| "---".into());
                let _ = write!(text, " | {cell:>6}");
            }
            text.push('\n');
        }
        text.push('\n');
    }

    if !gains.is_empty() {
        let _ = writeln!(text, "Gain of personalized over non-personalized (%)");
        let model_width = gains
            .iter()
            .map(|g| g.model.len())
            .max()
            .unwrap_or(0)
            .max(5);
        let dataset_width = gains
            .iter()
            .map(|g| g.dataset.len())
            .max()
            .unwrap_or(0)
            .max(7);
        let header = format!(
            "{:<dataset_width$} | {:<model_width$} | {:>13} | {:>13}",
            "Dataset", "Model", "LM vs LM-P", "CLS vs CLS-P"
        );
        let _ = writeln!(text, "{header}");
        let _ = writeln!(text, "{}", "-".repeat(header.len()));
        let mut seen: Vec<(&str, &str)> = Vec::new();
        for g in &gains {
            let key = (g.dataset.as_str(), g.model.as_str());
            if seen.contains(&key) {
                continue;
            }
            seen.push(key);
            let cell = |p: ScenarioId| {
                gains
                    .iter()
                    .find(|r| r.dataset == g.dataset && r.model == g.model && r.personalized == p)
                    .and_then(|r| r.gain_pct)
                    .map(|v| format!("{v:.2}"))
                    .unwrap_or_else(|| "---".into())
            };
            let _ = writeln!(
                text,
                "{:<dataset_width$} | {:<model_width$} | {:>13} | {:>13}",
                g.dataset,
                g.model,
                cell(ScenarioId::Lmp),
                cell(ScenarioId::Clsp)
            );
        }
    }

    let mut scores_csv = format!("{SCORE_CSV_HEADER}\n");
    let mut json_scores = Vec::new();
    for (dataset, models) in &grouped {
        for (model, by_scenario) in models {
            for (scenario, s) in by_scenario {
                let _ = writeln!(
                    scores_csv,
                    "{},{},{},{},{},{},{:.4}",
                    csv_field(dataset),
                    csv_field(model),
                    scenario.as_str(),
                    pp(s.f1_macro),
                    pp(s.f1_macro_supported),
                    s.n_records,
                    s.unmatched_rate
                );
                json_scores.push(JsonScore {
                    dataset,
                    model,
                    scenario: scenario.as_str(),
                    f1_macro_pp: round2(s.f1_macro * 100.0),
                    f1_macro_excl_pp: round2(s.f1_macro_supported * 100.0),
                    n_records: s.n_records,
                    unmatched_rate: (s.unmatched_rate * 1e4).round() / 1e4,
                });
            }
        }
    }

    let mut gains_csv = format!("{GAIN_CSV_HEADER}\n");
    let mut json_gains = Vec::new();
    for g in &gains {
        let _ = writeln!(
            gains_csv,
            "{},{},{},{},{},{},{}",
            csv_field(&g.dataset),
            csv_field(&g.model),
            g.baseline.as_str(),
            g.personalized.as_str(),
            pp(g.baseline_f1),
            pp(g.personalized_f1),
            g.gain_pct.map(|v| format!("{v:.2}")).unwrap_or_default()
        );
        json_gains.push(JsonGain {
            dataset: &g.dataset,
            model: &g.model,
            baseline: g.baseline.as_str(),
            personalized: g.personalized.as_str(),
            baseline_pp: round2(g.baseline_f1 * 100.0),
            personalized_pp: round2(g.personalized_f1 * 100.0),
            gain_pct: g.gain_pct.map(round2),
        });
    }

    let json = serde_json::to_string_pretty(&serde_json::json!({
        "scores": json_scores,
        "gains": json_gains,
    }))
    .expect("report json");

    RenderedReport {
        text,
        scores_csv,
        gains_csv,
        json,
    }
}
