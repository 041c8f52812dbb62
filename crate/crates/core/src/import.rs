//! Adapters from raw dataset layouts to the normalized row format.
//!
//! Both source datasets ship as CSV with one row per (text, annotator) and
//! one 0/1 column per label. A [`CsvLayout`] names the id, text and
//! annotator columns and maps label columns onto schema labels.

use std::io::Read;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::corpus::{ingest, AnnotationCorpus, CorpusError, NormalizedRow};
use crate::labels::LabelSchema;

#[derive(Debug, Clone)]
pub struct CsvLayout {
    pub text_id: String,
    pub text: String,
    pub annotator: String,
    /// (column name, schema label) pairs.
    pub label_columns: Vec<(String, String)>,
    pub delimiter: u8,
}

impl CsvLayout {
    /// Raw GoEmotions CSV (`goemotions_{1,2,3}.csv`): label columns carry the
    /// label names themselves.
    pub fn goemotions(schema: &LabelSchema) -> Self {
        Self {
            text_id: "id".into(),
            text: "text".into(),
            annotator: "rater_id".into(),
            label_columns: schema
                .labels()
                .iter()
                .map(|l| (l.clone(), l.clone()))
                .collect(),
            delimiter: b',',
        }
    }

    /// Raw Unhealthy Conversations CSV (`unhealthy_full.csv`).
    pub fn unhealthy_conversations() -> Self {
        let cols = [
            ("antagonize", "antagonistic"),
            ("hostile", "hostile"),
            ("dismissive", "dismissive"),
            ("condescending", "condescending"),
            ("sarcastic", "sarcastic"),
            ("generalisation", "generalization"),
            ("generalisation_unfair", "unfair generalization"),
            ("healthy", "healthy"),
        ];
        Self {
            text_id: "_unit_id".into(),
            text: "comment".into(),
            annotator: "_worker_id".into(),
            label_columns: cols
                .iter()
                .map(|(c, l)| (c.to_string(), l.to_string()))
                .collect(),
            delimiter: b',',
        }
    }

    pub fn for_dataset(name: &str, schema: &LabelSchema) -> Option<Self> {
        match name {
            "goemotions" => Some(Self::goemotions(schema)),
            "unhealthy_conversations" | "ucc" => Some(Self::unhealthy_conversations()),
            _ => None,
        }
    }
}

fn truthy(cell: &str) -> Option<bool> {
    match cell.trim().to_ascii_lowercase().as_str() {
        "1" | "1.0" | "true" | "yes" => Some(true),
        "0" | "0.0" | "false" | "no" | "" => Some(false),
        _ => None,
    }
}

/// Reads a raw CSV into normalized rows. Label columns are checked against
/// the schema up front, so an unmapped label fails before any row is read.
pub fn read_csv<R: Read>(
    reader: R,
    layout: &CsvLayout,
    schema: &LabelSchema,
    origin: &str,
) -> Result<Vec<NormalizedRow>, CorpusError> {
    for (_, label) in &layout.label_columns {
        schema.set_from_names([label])?;
    }
    let mut csv = csv::ReaderBuilder::new()
        .delimiter(layout.delimiter)
        .flexible(false)
        .from_reader(reader);
    let format_err = |line: usize, message: String| CorpusError::Format {
        path: origin.to_string(),
        line,
        message,
    };
    let headers = csv
        .headers()
        .map_err(|e| format_err(1, e.to_string()))?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| format_err(1, format!("missing column `{name}`")))
    };
    let id_col = col(&layout.text_id)?;
    let text_col = col(&layout.text)?;
    let annotator_col = col(&layout.annotator)?;
    let label_cols = layout
        .label_columns
        .iter()
        .map(|(c, l)| col(c).map(|i| (i, l.clone())))
        .collect::<Result<Vec<_>, _>>()?;

    let mut rows = Vec::new();
    for (n, record) in csv.records().enumerate() {
        let line = n + 2;
        let record = record.map_err(|e| format_err(line, e.to_string()))?;
        let mut labels = Vec::new();
        for (i, label) in &label_cols {
            let cell = record.get(*i).unwrap_or("");
            match truthy(cell) {
                Some(true) => labels.push(label.clone()),
                Some(false) => {}
                None => {
                    return Err(format_err(
                        line,
                        format!("non-boolean value `{cell}` in label column for `{label}`"),
                    ))
                }
            }
        }
        rows.push(NormalizedRow {
            text_id: record[id_col].to_string(),
            text: record[text_col].to_string(),
            annotator_id: record[annotator_col].to_string(),
            labels,
        });
    }
    Ok(rows)
}

/// Reads and ingests several raw CSV files of one dataset, in order. The
/// recorded digest is the SHA-256 of the files' bytes concatenated.
pub fn ingest_csv_paths<P: AsRef<Path>>(
    paths: &[P],
    layout: &CsvLayout,
    schema: &LabelSchema,
) -> Result<AnnotationCorpus, CorpusError> {
    let mut hasher = Sha256::new();
    let mut rows = Vec::new();
    for path in paths {
        let path = path.as_ref();
        let shown = path.display().to_string();
        let bytes = std::fs::read(path).map_err(|source| CorpusError::Io {
            path: shown.clone(),
            source,
        })?;
        hasher.update(&bytes);
        rows.extend(read_csv(bytes.as_slice(), layout, schema, &shown)?);
    }
    let mut corpus = ingest(rows.into_iter().map(Ok), schema)?;
    corpus.provenance.source_digest = Some(hex::encode(hasher.finalize()));
    Ok(corpus)
}
