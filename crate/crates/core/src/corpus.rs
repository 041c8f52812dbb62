//! Per-annotator corpora: ingestion, outlier-annotator filtering, text-disjoint
//! splitting and annotator-coverage enforcement.
//!
//! The cleaning order is fixed: empty annotations are dropped at ingestion,
//! then outlier annotators are filtered, then texts are split, then
//! annotators missing from any partition are removed. Record order is the
//! ingestion order throughout; nothing here reorders records.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::labels::{LabelSchema, LabelSet, SchemaError};

/// Default outlier threshold: annotators below 5% of the busiest one are dropped.
pub const DEFAULT_OUTLIER_THRESHOLD: f64 = 0.05;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("duplicate annotation for text `{text_id}` by annotator `{annotator_id}`")]
    Duplicate {
        text_id: String,
        annotator_id: String,
    },
    #[error("split error: {0}")]
    Split(String),
    #[error("coverage error: {0}")]
    Coverage(String),
    #[error("{path}:{line}: {message}")]
    Format {
        path: String,
        line: usize,
        message: String,
    },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One line of the normalized input format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizedRow {
    pub text_id: String,
    pub text: String,
    pub annotator_id: String,
    pub labels: Vec<String>,
}

/// One (text, annotator, label set) triple.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationRecord {
    pub text_id: String,
    pub text: String,
    pub annotator_id: String,
    pub labels: LabelSet,
}

impl AnnotationRecord {
    pub fn to_row(&self, schema: &LabelSchema) -> NormalizedRow {
        NormalizedRow {
            text_id: self.text_id.clone(),
            text: self.text.clone(),
            annotator_id: self.annotator_id.clone(),
            labels: schema
                .names(self.labels)
                .into_iter()
                .map(String::from)
                .collect(),
        }
    }
}

/// What each cleaning step removed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CleaningLog {
    pub rows_read: usize,
    pub dropped_empty: usize,
    pub outlier_threshold: Option<f64>,
    pub max_annotator_count: Option<usize>,
    pub removed_outlier_annotators: Vec<String>,
    pub removed_outlier_records: usize,
    pub removed_uncovered_annotators: Vec<String>,
    pub removed_uncovered_records: usize,
    pub coverage_passes: usize,
    pub final_sizes: Option<PartitionSizes>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionSizes {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// SHA-256 of the ingested bytes, when ingested from a file.
    pub source_digest: Option<String>,
    pub log: CleaningLog,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationCorpus {
    pub schema: LabelSchema,
    pub records: Vec<AnnotationRecord>,
    pub provenance: Provenance,
}

impl AnnotationCorpus {
    pub fn new(schema: LabelSchema, records: Vec<AnnotationRecord>) -> Self {
        Self {
            schema,
            records,
            provenance: Provenance::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn annotator_counts(&self) -> BTreeMap<&str, usize> {
        let mut counts = BTreeMap::new();
        for r in &self.records {
            *counts.entry(r.annotator_id.as_str()).or_insert(0) += 1;
        }
        counts
    }

    pub fn annotators(&self) -> BTreeSet<&str> {
        self.records
            .iter()
            .map(|r| r.annotator_id.as_str())
            .collect()
    }

    pub fn text_ids(&self) -> BTreeSet<&str> {
        self.records.iter().map(|r| r.text_id.as_str()).collect()
    }

    /// Same schema and provenance, different records.
    pub fn with_records(&self, records: Vec<AnnotationRecord>) -> Self {
        Self {
            schema: self.schema.clone(),
            records,
            provenance: self.provenance.clone(),
        }
    }

    /// Writes the corpus in the normalized JSONL format, in record order.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, &r.to_row(&self.schema))?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Builds a corpus from normalized rows.
///
/// Rows whose label list is empty are dropped and counted. Labels are
/// canonicalized before lookup, so `"Joy"` and `"joy"` are the same label.
pub fn ingest<I>(rows: I, schema: &LabelSchema) -> Result<AnnotationCorpus, CorpusError>
where
    I: IntoIterator<Item = Result<NormalizedRow, CorpusError>>,
{
    let mut seen: HashSet<(String, String)> = HashSet::new();
    let mut records = Vec::new();
    let mut log = CleaningLog::default();
    for row in rows {
        let row = row?;
        log.rows_read += 1;
        if !seen.insert((row.text_id.clone(), row.annotator_id.clone())) {
            return Err(CorpusError::Duplicate {
                text_id: row.text_id,
                annotator_id: row.annotator_id,
            });
        }
        let labels = schema.set_from_names(&row.labels)?;
        if labels.is_empty() {
            log.dropped_empty += 1;
            continue;
        }
        records.push(AnnotationRecord {
            text_id: row.text_id,
            text: row.text,
            annotator_id: row.annotator_id,
            labels,
        });
    }
    Ok(AnnotationCorpus {
        schema: schema.clone(),
        records,
        provenance: Provenance {
            source_digest: None,
            log,
        },
    })
}

/// Parses normalized JSONL from a reader; errors carry 1-based line numbers.
pub fn read_rows<R: BufRead>(
    reader: R,
    origin: impl Into<String>,
) -> impl Iterator<Item = Result<NormalizedRow, CorpusError>> {
    let origin = origin.into();
    reader
        .lines()
        .enumerate()
        .filter(|(_, line)| !matches!(line, Ok(l) if l.trim().is_empty()))
        .map(move |(i, line)| {
            let line = line.map_err(|source| CorpusError::Io {
                path: origin.clone(),
                source,
            })?;
            serde_json::from_str(&line).map_err(|e| CorpusError::Format {
                path: origin.clone(),
                line: i + 1,
                message: e.to_string(),
            })
        })
}

/// Reads and ingests a normalized JSONL file, recording its SHA-256.
pub fn ingest_path(
    path: impl AsRef<Path>,
    schema: &LabelSchema,
) -> Result<AnnotationCorpus, CorpusError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let bytes = std::fs::read(path).map_err(|source| CorpusError::Io {
        path: shown.clone(),
        source,
    })?;
    let mut corpus = ingest(read_rows(bytes.as_slice(), shown.clone()), schema)?;
    corpus.provenance.source_digest = Some(sha256_hex(&bytes));
    Ok(corpus)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Removes every annotator whose record count is strictly below
/// `threshold * max_count`. The busiest annotator always survives for
/// `threshold <= 1`.
pub fn filter_outlier_annotators(corpus: &AnnotationCorpus, threshold: f64) -> AnnotationCorpus {
    let counts = corpus.annotator_counts();
    let mut out = corpus.with_records(Vec::new());
    out.provenance.log.outlier_threshold = Some(threshold);
    let Some(&max) = counts.values().max() else {
        out.provenance
            .log
            .warnings
            .push("outlier filter applied to an empty corpus".into());
        return out;
    };
    let cutoff = threshold * max as f64;
    let removed: BTreeSet<&str> = counts
        .iter()
        .filter(|(_, &c)| (c as f64) < cutoff)
        .map(|(&a, _)| a)
        .collect();
    out.records = corpus
        .records
        .iter()
        .filter(|r| !removed.contains(r.annotator_id.as_str()))
        .cloned()
        .collect();
    let log = &mut out.provenance.log;
    log.max_annotator_count = Some(max);
    log.removed_outlier_records += corpus.len() - out.records.len();
    log.removed_outlier_annotators
        .extend(removed.iter().map(|a| a.to_string()));
    if out.records.is_empty() {
        log.warnings
            .push("outlier filter left the corpus empty".into());
    }
    out
}

/// Train/validation/test fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            validation: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn new(train: f64, validation: f64, test: f64) -> Result<Self, CorpusError> {
        let r = Self {
            train,
            validation,
            test,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let parts = [self.train, self.validation, self.test];
        if parts.iter().any(|p| !p.is_finite() || *p <= 0.0) {
            return Err(CorpusError::Split(format!(
                "ratios must be positive, got {parts:?}"
            )));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(CorpusError::Split(format!(
                "ratios must sum to 1, got {sum}"
            )));
        }
        Ok(())
    }

    /// Text counts per partition: validation and test get `floor(r * n)`,
    /// train gets the remainder.
    pub fn partition_counts(&self, n: usize) -> PartitionSizes {
        // The epsilon absorbs representation error such as 0.7 * 10 = 7.000000000000001
        // or 0.3 * 10 = 2.9999999999999996.
        let take = |r: f64| ((r * n as f64) + 1e-9).floor() as usize;
        let validation = take(self.validation);
        let test = take(self.test);
        PartitionSizes {
            train: n - validation - test,
            validation,
            test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Validation,
    Test,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Partition::Train, Partition::Validation, Partition::Test];

    pub fn name(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Validation => "validation",
            Partition::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitCorpus {
    pub train: AnnotationCorpus,
    pub validation: AnnotationCorpus,
    pub test: AnnotationCorpus,
    pub split_seed: u64,
    pub ratios: SplitRatios,
    pub log: CleaningLog,
}

impl SplitCorpus {
    pub fn partition(&self, p: Partition) -> &AnnotationCorpus {
        match p {
            Partition::Train => &self.train,
            Partition::Validation => &self.validation,
            Partition::Test => &self.test,
        }
    }

    pub fn schema(&self) -> &LabelSchema {
        &self.train.schema
    }

    pub fn sizes(&self) -> PartitionSizes {
        PartitionSizes {
            train: self.train.len(),
            validation: self.validation.len(),
            test: self.test.len(),
        }
    }
}

/// Shuffles the distinct text ids with a seeded ChaCha8 stream and cuts
/// them into partitions by ratio. All records of a text land together.
pub fn split_by_text(
    corpus: &AnnotationCorpus,
    ratios: SplitRatios,
    seed: u64,
) -> Result<SplitCorpus, CorpusError> {
    ratios.validate()?;
    let mut texts: Vec<&str> = corpus.text_ids().into_iter().collect();
    if texts.len() < 3 {
        return Err(CorpusError::Split(format!(
            "need at least 3 distinct texts, found {}",
            texts.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    texts.shuffle(&mut rng);
    let counts = ratios.partition_counts(texts.len());
    let mut assignment: HashMap<&str, Partition> = HashMap::with_capacity(texts.len());
    for (i, t) in texts.iter().enumerate() {
        let p = if i < counts.train {
            Partition::Train
        } else if i < counts.train + counts.validation {
            Partition::Validation
        } else {
            Partition::Test
        };
        assignment.insert(t, p);
    }
    let mut parts: [Vec<AnnotationRecord>; 3] = Default::default();
    for r in &corpus.records {
        let idx = match assignment[r.text_id.as_str()] {
            Partition::Train => 0,
            Partition::Validation => 1,
            Partition::Test => 2,
        };
        parts[idx].push(r.clone());
    }
    let [train, validation, test] = parts;
    let mut log = corpus.provenance.log.clone();
    log.final_sizes = Some(PartitionSizes {
        train: train.len(),
        validation: validation.len(),
        test: test.len(),
    });
    Ok(SplitCorpus {
        train: corpus.with_records(train),
        validation: corpus.with_records(validation),
        test: corpus.with_records(test),
        split_seed: seed,
        ratios,
        log,
    })
}

/// Keeps only annotators present in all three partitions.
pub fn enforce_annotator_coverage(split: &SplitCorpus) -> Result<SplitCorpus, CorpusError> {
    let mut current = split.clone();
    let mut passes = 0;
    loop {
        passes += 1;
        let covered: BTreeSet<String> = {
            let train = current.train.annotators();
            let val = current.validation.annotators();
            let test = current.test.annotators();
            train
                .into_iter()
                .filter(|a| val.contains(a) && test.contains(a))
                .map(String::from)
                .collect()
        };
        let mut removed: BTreeSet<String> = BTreeSet::new();
        let mut removed_records = 0;
        for p in [
            &mut current.train,
            &mut current.validation,
            &mut current.test,
        ] {
            let before = p.records.len();
            p.records.retain(|r| {
                let keep = covered.contains(&r.annotator_id);
                if !keep {
                    removed.insert(r.annotator_id.clone());
                }
                keep
            });
            removed_records += before - p.records.len();
        }
        if removed.is_empty() {
            break;
        }
        current.log.removed_uncovered_annotators.extend(removed);
        current.log.removed_uncovered_records += removed_records;
    }
    // Removing uncovered annotators cannot uncover anyone else, so the
    // second pass must be a no-op.
    debug_assert!(
        passes <= 2,
        "coverage did not reach a fixed point in one pass"
    );
    current.log.coverage_passes = passes;
    for p in Partition::ALL {
        if current.partition(p).is_empty() {
            return Err(CorpusError::Coverage(format!(
                "{} partition is empty after coverage enforcement",
                p.name()
            )));
        }
    }
    current.log.final_sizes = Some(current.sizes());
    Ok(current)
}

/// The full cleaning chain for an ingested corpus.
pub fn clean_and_split(
    corpus: &AnnotationCorpus,
    threshold: f64,
    ratios: SplitRatios,
    seed: u64,
) -> Result<SplitCorpus, CorpusError> {
    let filtered = filter_outlier_annotators(corpus, threshold);
    let split = split_by_text(&filtered, ratios, seed)?;
    enforce_annotator_coverage(&split)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub annotator_count: usize,
    pub record_count: usize,
    pub text_count: usize,
    /// Per-label positive counts in schema order.
    pub label_frequencies: Vec<(String, usize)>,
    pub per_annotator: BTreeMap<String, usize>,
}

pub fn corpus_stats(corpus: &AnnotationCorpus) -> CorpusStats {
    stats_over(&corpus.schema, corpus.records.iter())
}

/// Statistics over the union of all three partitions.
pub fn split_stats(split: &SplitCorpus) -> CorpusStats {
    stats_over(
        split.schema(),
        split
            .train
            .records
            .iter()
            .chain(&split.validation.records)
            .chain(&split.test.records),
    )
}

fn stats_over<'a>(
    schema: &LabelSchema,
    records: impl Iterator<Item = &'a AnnotationRecord>,
) -> CorpusStats {
    let mut freq = vec![0usize; schema.len()];
    let mut per_annotator: BTreeMap<String, usize> = BTreeMap::new();
    let mut texts: HashSet<&str> = HashSet::new();
    let mut record_count = 0;
    for r in records {
        record_count += 1;
        texts.insert(&r.text_id);
        *per_annotator.entry(r.annotator_id.clone()).or_insert(0) += 1;
        for i in r.labels.iter() {
            freq[i] += 1;
        }
    }
    CorpusStats {
        annotator_count: per_annotator.len(),
        record_count,
        text_count: texts.len(),
        label_frequencies: schema.labels().iter().cloned().zip(freq).collect(),
        per_annotator,
    }
}

/// Dense user indices assigned by first appearance in a corpus.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct UserIndex {
    ids: Vec<String>,
    lookup: HashMap<String, usize>,
}

impl From<Vec<String>> for UserIndex {
    fn from(ids: Vec<String>) -> Self {
        Self::from_ids(ids.iter().map(String::as_str))
    }
}

impl From<UserIndex> for Vec<String> {
    fn from(index: UserIndex) -> Self {
        index.ids
    }
}

impl UserIndex {
    pub fn from_corpus(corpus: &AnnotationCorpus) -> Self {
        Self::from_ids(corpus.records.iter().map(|r| r.annotator_id.as_str()))
    }

    pub fn from_ids<'a>(ids: impl IntoIterator<Item = &'a str>) -> Self {
        let mut index = Self::default();
        for id in ids {
            if !index.lookup.contains_key(id) {
                index.lookup.insert(id.to_string(), index.ids.len());
                index.ids.push(id.to_string());
            }
        }
        index
    }

    pub fn get(&self, annotator_id: &str) -> Option<usize> {
        self.lookup.get(annotator_id).copied()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(t: &str, a: &str, labels: &[&str]) -> Result<NormalizedRow, CorpusError> {
        Ok(NormalizedRow {
            text_id: t.into(),
            text: format!("text {t}"),
            annotator_id: a.into(),
            labels: labels.iter().map(|s| s.to_string()).collect(),
        })
    }

    fn corpus_from_counts(counts: &[(&str, usize)]) -> AnnotationCorpus {
        let schema = LabelSchema::goemotions();
        let mut rows = Vec::new();
        for (a, n) in counts {
            for i in 0..*n {
                rows.push(row(&format!("t{i}"), a, &["joy"]));
            }
        }
        ingest(rows, &schema).unwrap()
    }

    #[test]
    fn ingest_single_record() {
        let c = ingest([row("t1", "a1", &["joy"])], &LabelSchema::goemotions()).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.provenance.log.dropped_empty, 0);
    }

    #[test]
    fn ingest_drops_empty_rows() {
        let c = ingest([row("t1", "a1", &[])], &LabelSchema::goemotions()).unwrap();
        assert!(c.is_empty());
        assert_eq!(c.provenance.log.dropped_empty, 1);
    }

    #[test]
    fn ingest_ten_row_fixture() {
        let schema = LabelSchema::goemotions();
        let rows = vec![
            row("t1", "a1", &["joy"]),
            row("t1", "a2", &[]),
            row("t2", "a1", &["anger", "annoyance"]),
            row("t2", "a2", &["neutral"]),
            row("t3", "a1", &["love"]),
            row("t3", "a2", &["love", "joy"]),
            row("t4", "a1", &[]),
            row("t4", "a2", &["fear"]),
            row("t5", "a1", &["grief"]),
            row("t5", "a2", &["Sadness"]),
        ];
        let c = ingest(rows, &schema).unwrap();
        assert_eq!(c.len(), 8);
        assert_eq!(c.provenance.log.dropped_empty, 2);
        assert_eq!(c.provenance.log.rows_read, 10);
    }

    #[test]
    fn neutral_only_is_not_empty() {
        let c = ingest([row("t1", "a1", &["neutral"])], &LabelSchema::goemotions()).unwrap();
        assert_eq!(c.len(), 1);
    }

    #[test]
    fn ingest_rejects_unknown_label_and_duplicates() {
        let schema = LabelSchema::goemotions();
        let err = ingest([row("t1", "a1", &["bliss"])], &schema).unwrap_err();
        assert!(matches!(
            err,
            CorpusError::Schema(SchemaError::UnknownLabel { .. })
        ));
        let err = ingest(
            [row("t1", "a1", &["joy"]), row("t1", "a1", &["anger"])],
            &schema,
        )
        .unwrap_err();
        match err {
            CorpusError::Duplicate {
                text_id,
                annotator_id,
            } => assert_eq!((text_id.as_str(), annotator_id.as_str()), ("t1", "a1")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn outlier_strict_threshold() {
        let c = corpus_from_counts(&[("a1", 100), ("a2", 4)]);
        let f = filter_outlier_annotators(&c, 0.05);
        assert_eq!(f.annotators().into_iter().collect::<Vec<_>>(), vec!["a1"]);
        assert_eq!(f.provenance.log.removed_outlier_annotators, vec!["a2"]);

        let c = corpus_from_counts(&[("a1", 100), ("a2", 5)]);
        let f = filter_outlier_annotators(&c, 0.05);
        assert_eq!(f.annotators().len(), 2);
    }

    #[test]
    fn outlier_filter_on_empty_corpus_is_flagged() {
        let c = AnnotationCorpus::new(LabelSchema::goemotions(), vec![]);
        let f = filter_outlier_annotators(&c, 0.05);
        assert!(f.is_empty());
        assert_eq!(f.provenance.log.warnings.len(), 1);
    }

    fn texts_corpus(n: usize) -> AnnotationCorpus {
        let rows: Vec<_> = (0..n)
            .map(|i| row(&format!("t{i:03}"), "a1", &["joy"]))
            .collect();
        ingest(rows, &LabelSchema::goemotions()).unwrap()
    }

    #[test]
    fn split_ten_texts() {
        let s = split_by_text(&texts_corpus(10), SplitRatios::default(), 7).unwrap();
        assert_eq!(
            s.sizes(),
            PartitionSizes {
                train: 8,
                validation: 1,
                test: 1
            }
        );
    }

    #[test]
    fn split_is_deterministic() {
        let c = texts_corpus(50);
        let a = split_by_text(&c, SplitRatios::default(), 11).unwrap();
        let b = split_by_text(&c, SplitRatios::default(), 11).unwrap();
        assert_eq!(a, b);
        let other = split_by_text(&c, SplitRatios::default(), 12).unwrap();
        assert_ne!(a.test.text_ids(), other.test.text_ids());
    }

    #[test]
    fn split_errors() {
        assert!(matches!(
            split_by_text(&texts_corpus(2), SplitRatios::default(), 0),
            Err(CorpusError::Split(_))
        ));
        assert!(SplitRatios::new(0.8, 0.1, 0.2).is_err());
        assert!(SplitRatios::new(1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn partition_counts_rounding() {
        let r = SplitRatios::new(0.4, 0.3, 0.3).unwrap();
        assert_eq!(
            r.partition_counts(10),
            PartitionSizes {
                train: 4,
                validation: 3,
                test: 3
            }
        );
        let r = SplitRatios::new(0.1, 0.7, 0.2).unwrap();
        assert_eq!(
            r.partition_counts(10),
            PartitionSizes {
                train: 1,
                validation: 7,
                test: 2
            }
        );
    }

    #[test]
    fn coverage_removes_partial_annotators() {
        let schema = LabelSchema::goemotions();
        let mk = |recs: &[(&str, &str)]| {
            AnnotationCorpus::new(
                schema.clone(),
                recs.iter()
                    .map(|(t, a)| AnnotationRecord {
                        text_id: t.to_string(),
                        text: String::new(),
                        annotator_id: a.to_string(),
                        labels: LabelSet::from_indices([0]),
                    })
                    .collect(),
            )
        };
        let split = SplitCorpus {
            train: mk(&[("t1", "a1"), ("t1", "a2")]),
            validation: mk(&[("t2", "a1")]),
            test: mk(&[("t3", "a1"), ("t3", "a2")]),
            split_seed: 0,
            ratios: SplitRatios::default(),
            log: CleaningLog::default(),
        };
        let out = enforce_annotator_coverage(&split).unwrap();
        for p in Partition::ALL {
            assert_eq!(
                out.partition(p)
                    .annotators()
                    .into_iter()
                    .collect::<Vec<_>>(),
                vec!["a1"]
            );
        }
        assert_eq!(out.log.removed_uncovered_annotators, vec!["a2"]);
        assert_eq!(out.log.coverage_passes, 2);

        let again = enforce_annotator_coverage(&out).unwrap();
        assert_eq!(again.train, out.train);
        assert_eq!(again.test, out.test);

        let lonely = SplitCorpus {
            validation: mk(&[("t2", "a3")]),
            ..split
        };
        assert!(matches!(
            enforce_annotator_coverage(&lonely),
            Err(CorpusError::Coverage(_))
        ));
    }

    #[test]
    fn stats_of_empty_corpus() {
        let s = corpus_stats(&AnnotationCorpus::new(LabelSchema::goemotions(), vec![]));
        assert_eq!(s.annotator_count, 0);
        assert_eq!(s.record_count, 0);
        assert!(s.label_frequencies.iter().all(|(_, n)| *n == 0));
    }

    #[test]
    fn user_index_first_appearance() {
        let idx = UserIndex::from_ids(["b", "a", "b", "c"]);
        assert_eq!(idx.get("b"), Some(0));
        assert_eq!(idx.get("a"), Some(1));
        assert_eq!(idx.get("c"), Some(2));
        assert_eq!(idx.get("z"), None);
        let json = serde_json::to_string(&idx).unwrap();
        assert_eq!(json, r#"["b","a","c"]"#);
        let back: UserIndex = serde_json::from_str(&json).unwrap();
        assert_eq!(back, idx);
    }
}
