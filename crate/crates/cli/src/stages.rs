//! One function per subcommand. Stages talk to each other only through
//! files under the output directory.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use persona_core::baseline::ab_evaluate;
use persona_core::client::{LlmClient, ResponseCache};
use persona_core::corpus::{
    enforce_annotator_coverage, filter_outlier_annotators, ingest, read_rows, split_by_text,
    AnnotationCorpus, CleaningLog, Partition, SplitCorpus,
};
use persona_core::import::{ingest_csv_paths, CsvLayout};
use persona_core::labels::LabelSchema;
use persona_core::metrics::{join_predictions, report, ScenarioScore};
use persona_core::parser::PredictionRecord;
use persona_core::promptgen::{emit_corpus, InferenceLine, Templates};
use persona_core::ScenarioId;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::manifest;

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Internal(format!("cannot create {}: {e}", dir.display())))
}

fn create_file(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Internal(format!("cannot create {}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text)
        .map_err(|e| CliError::Internal(format!("cannot write {}: {e}", path.display())))
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), CliError> {
    let mut out = create_file(path)?;
    for item in items {
        serde_json::to_writer(&mut out, item).map_err(|e| CliError::Internal(e.to_string()))?;
        out.write_all(b"\n")
            .map_err(|e| CliError::Internal(e.to_string()))?;
    }
    out.flush().map_err(|e| CliError::Internal(e.to_string()))
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let file = File::open(path)
        .map_err(|e| CliError::Data(format!("cannot open {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line)
            .map_err(|e| CliError::Data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(item);
    }
    Ok(out)
}

fn write_corpus(path: &Path, corpus: &AnnotationCorpus) -> Result<(), CliError> {
    let mut out = create_file(path)?;
    corpus
        .write_jsonl(&mut out)
        .and_then(|_| out.flush())
        .map_err(|e| CliError::Internal(format!("{}: {e}", path.display())))
}

fn read_corpus(path: &Path, schema: &LabelSchema) -> Result<AnnotationCorpus, CliError> {
    let file = File::open(path)
        .map_err(|e| CliError::Data(format!("cannot open {}: {e}", path.display())))?;
    Ok(ingest(
        read_rows(BufReader::new(file), path.display().to_string()),
        schema,
    )?)
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

fn partition_path(config: &RunConfig, p: Partition) -> PathBuf {
    config.data_dir().join(format!("{}.jsonl", p.name()))
}

pub fn ingest_stage(config: &RunConfig) -> Result<(), CliError> {
    if config.inputs.is_empty() {
        return Err(CliError::Config("no inputs configured".into()));
    }
    let schema = config.schema()?;
    let all_jsonl = config
        .inputs
        .iter()
        .all(|p| p.extension().is_some_and(|e| e == "jsonl"));
    let corpus = if all_jsonl {
        let mut rows = Vec::new();
        for path in &config.inputs {
            let file = File::open(path)
                .map_err(|e| CliError::Data(format!("cannot open {}: {e}", path.display())))?;
            rows.extend(read_rows(BufReader::new(file), path.display().to_string()));
        }
        ingest(rows, &schema)?
    } else {
        let layout = CsvLayout::for_dataset(&config.dataset, &schema).ok_or_else(|| {
            CliError::Config(format!(
                "no CSV layout for dataset `{}`; convert to normalized JSONL",
                config.dataset
            ))
        })?;
        ingest_csv_paths(&config.inputs, &layout, &schema)?
    };
    let dir = config.data_dir();
    create_dir(&dir)?;
    let out = dir.join("corpus.jsonl");
    write_corpus(&out, &corpus)?;
    let log = dir.join("ingest_log.json");
    write_json(&log, &corpus.provenance.log)?;
    println!(
        "ingested {} records ({} rows read, {} empty dropped), {} annotators, {} texts",
        corpus.len(),
        corpus.provenance.log.rows_read,
        corpus.provenance.log.dropped_empty,
        corpus.annotators().len(),
        corpus.text_ids().len()
    );
    manifest::write(&dir, "ingest", None, config, &config.inputs, &[out, log])
}

pub fn clean_stage(config: &RunConfig) -> Result<(), CliError> {
    let schema = config.schema()?;
    let dir = config.data_dir();
    let input = dir.join("corpus.jsonl");
    let corpus = read_corpus(&input, &schema)?;
    let cleaned = filter_outlier_annotators(&corpus, config.outlier_threshold);
    let out = dir.join("clean.jsonl");
    write_corpus(&out, &cleaned)?;
    let log = dir.join("clean_log.json");
    write_json(&log, &cleaned.provenance.log)?;
    println!(
        "outlier filter (threshold {}): removed {} annotators / {} records, {} annotators remain",
        config.outlier_threshold,
        cleaned.provenance.log.removed_outlier_annotators.len(),
        cleaned.provenance.log.removed_outlier_records,
        cleaned.annotators().len()
    );
    manifest::write(&dir, "clean", None, config, &[input], &[out, log])
}

pub fn split_stage(config: &RunConfig) -> Result<(), CliError> {
    let schema = config.schema()?;
    let dir = config.data_dir();
    let input = dir.join("clean.jsonl");
    let corpus = read_corpus(&input, &schema)?;
    let split = split_by_text(&corpus, config.ratios, config.seeds.split)?;
    let split = enforce_annotator_coverage(&split)?;
    let mut outputs = Vec::new();
    for p in Partition::ALL {
        let path = partition_path(config, p);
        write_corpus(&path, split.partition(p))?;
        outputs.push(path);
    }
    let log = dir.join("split_log.json");
    write_json(&log, &split.log)?;
    outputs.push(log);
    let sizes = split.sizes();
    println!(
        "split (seed {}): train {} / validation {} / test {} records, {} annotators kept",
        config.seeds.split,
        sizes.train,
        sizes.validation,
        sizes.test,
        split.train.annotators().len()
    );
    manifest::write(&dir, "split", None, config, &[input], &outputs)
}

fn load_split(
    config: &RunConfig,
    schema: &LabelSchema,
) -> Result<(SplitCorpus, Vec<PathBuf>), CliError> {
    let paths: Vec<PathBuf> = Partition::ALL
        .iter()
        .map(|&p| partition_path(config, p))
        .collect();
    let [train, validation, test] = [0, 1, 2].map(|i| read_corpus(&paths[i], schema));
    let log_path = config.data_dir().join("split_log.json");
    let log: CleaningLog = if log_path.exists() {
        read_json(&log_path)?
    } else {
        CleaningLog::default()
    };
    let split = SplitCorpus {
        train: train?,
        validation: validation?,
        test: test?,
        split_seed: config.seeds.split,
        ratios: config.ratios,
        log,
    };
    Ok((split, paths))
}

fn templates(config: &RunConfig) -> Result<Templates, CliError> {
    match &config.templates_dir {
        Some(dir) => Ok(Templates::from_dir(dir)?),
        None => Ok(Templates::bundled()),
    }
}

pub fn gen_prompts_stage(config: &RunConfig, scenario: ScenarioId) -> Result<(), CliError> {
    let schema = config.schema()?;
    let (split, inputs) = load_split(config, &schema)?;
    let dir = config.scenario_dir(scenario);
    create_dir(&dir)?;
    let path = |p: Partition| dir.join(format!("prompts.{}.jsonl", p.name()));
    let mut sink_error = None;
    let counts = emit_corpus(
        &split,
        scenario,
        &templates(config)?,
        config.seeds.prompt,
        |p| match File::create(path(p)) {
            Ok(f) => Box::new(BufWriter::new(f)) as Box<dyn Write>,
            Err(e) => {
                sink_error = Some(CliError::Internal(format!(
                    "cannot create {}: {e}",
                    path(p).display()
                )));
                Box::new(std::io::sink())
            }
        },
    )?;
    if let Some(e) = sink_error {
        return Err(e);
    }
    println!(
        "{}: {} prompts (train {}, validation {}, test {})",
        scenario.display_name(),
        counts.total(),
        counts.train,
        counts.validation,
        counts.test
    );
    let outputs: Vec<PathBuf> = persona_core::promptgen::emitted_partitions(scenario)
        .iter()
        .map(|&p| path(p))
        .collect();
    manifest::write(
        &dir,
        "gen-prompts",
        Some(scenario.as_str()),
        config,
        &inputs,
        &outputs,
    )
}

pub fn query_stage(config: &RunConfig, scenario: ScenarioId) -> Result<(), CliError> {
    if !scenario.is_query() {
        return Err(CliError::Config(format!(
            "{} is a fine-tuning scenario; its predictions come from a trained model, not the endpoint",
            scenario.display_name()
        )));
    }
    let dir = config.scenario_dir(scenario);
    let input = dir.join("prompts.test.jsonl");
    let lines: Vec<InferenceLine> = read_jsonl(&input)?;
    let cache = ResponseCache::open(config.output_dir.join("cache"))?;
    let client = LlmClient::new(config.endpoint.clone(), Some(cache))?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Internal(e.to_string()))?;
    let records = runtime.block_on(client.run_batch(&lines));
    let out = dir.join("responses.jsonl");
    write_jsonl(&out, &records)?;
    manifest::write(
        &dir,
        "query",
        Some(scenario.as_str()),
        config,
        &[input],
        std::slice::from_ref(&out),
    )?;
    let failed: Vec<&PredictionRecord> = records.iter().filter(|r| r.error.is_some()).collect();
    println!(
        "{}: {} responses, {} failed",
        scenario.display_name(),
        records.len(),
        failed.len()
    );
    match failed.first() {
        Some(first) => Err(CliError::Endpoint(format!(
            "{} of {} queries failed; first: {}",
            failed.len(),
            records.len(),
            first.error.as_deref().unwrap_or_default()
        ))),
        None => Ok(()),
    }
}

pub fn parse_stage(
    config: &RunConfig,
    scenario: ScenarioId,
    input: Option<&Path>,
) -> Result<(), CliError> {
    let schema = config.schema()?;
    let dir = config.scenario_dir(scenario);
    create_dir(&dir)?;
    let input = input
        .map(Path::to_path_buf)
        .unwrap_or_else(|| dir.join("responses.jsonl"));
    let mut records: Vec<PredictionRecord> = read_jsonl(&input)?;
    for r in &mut records {
        r.parse_with(&schema);
    }
    let out = dir.join("predictions.jsonl");
    write_jsonl(&out, &records)?;
    let exact = records.iter().filter(|r| r.exact).count();
    let unmatched = records.iter().filter(|r| !r.unmatched.is_empty()).count();
    println!(
        "{}: parsed {} responses, {} exact, {} with unmatched text",
        scenario.display_name(),
        records.len(),
        exact,
        unmatched
    );
    manifest::write(
        &dir,
        "parse",
        Some(scenario.as_str()),
        config,
        &[input],
        &[out],
    )
}

/// Scores predictions against gold and prints the table.
pub fn eval_files(
    schema: &LabelSchema,
    predictions_path: &Path,
    gold_path: &Path,
    model: &str,
    scenario: ScenarioId,
) -> Result<ScenarioScore, CliError> {
    let gold = read_corpus(gold_path, schema)?;
    let mut predictions: Vec<PredictionRecord> = read_jsonl(predictions_path)?;
    for p in &mut predictions {
        p.parse_with(schema);
    }
    let joined = join_predictions(&gold.records, &predictions, schema)?;
    if joined.missing > 0 {
        tracing::warn!(
            missing = joined.missing,
            "gold records without a prediction are not scored"
        );
    }
    Ok(ScenarioScore::from_joined(
        schema.dataset_name(),
        model,
        scenario,
        &joined,
        schema,
    ))
}

pub fn eval_stage(
    config: &RunConfig,
    scenario: ScenarioId,
    predictions: Option<&Path>,
    gold: Option<&Path>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let schema = config.schema()?;
    let dir = config.scenario_dir(scenario);
    let predictions = predictions
        .map(Path::to_path_buf)
        .unwrap_or_else(|| dir.join("predictions.jsonl"));
    let gold = gold
        .map(Path::to_path_buf)
        .unwrap_or_else(|| partition_path(config, Partition::Test));
    let score = eval_files(
        &schema,
        &predictions,
        &gold,
        &config.model_label(scenario),
        scenario,
    )?;
    print!("{}", report(std::slice::from_ref(&score)).text);
    println!(
        "records {}, F1-macro {:.2} (supported labels only {:.2}), unmatched rate {:.4}",
        score.n_records,
        score.f1_macro * 100.0,
        score.f1_macro_supported * 100.0,
        score.unmatched_rate
    );
    let (out, write_manifest) = match out {
        Some(p) => (p.to_path_buf(), false),
        None => {
            create_dir(&dir)?;
            (dir.join("scores.json"), true)
        }
    };
    write_json(&out, &vec![score])?;
    if write_manifest {
        manifest::write(
            &dir,
            "eval",
            Some(scenario.as_str()),
            config,
            &[predictions, gold],
            &[out],
        )?;
    }
    Ok(())
}

/// Every `scores.json` under `<output_dir>/*/*/`, in path order.
fn discover_scores(root: &Path) -> Vec<PathBuf> {
    let mut found = Vec::new();
    let Ok(datasets) = std::fs::read_dir(root) else {
        return found;
    };
    for d in datasets.flatten().filter(|d| d.path().is_dir()) {
        if let Ok(stages) = std::fs::read_dir(d.path()) {
            for s in stages.flatten() {
                let p = s.path().join("scores.json");
                if p.is_file() {
                    found.push(p);
                }
            }
        }
    }
    found.sort();
    found
}

pub fn report_stage(config: &RunConfig, extra: &[PathBuf]) -> Result<(), CliError> {
    let mut inputs = discover_scores(&config.output_dir);
    inputs.extend(extra.iter().cloned());
    let mut scores: Vec<ScenarioScore> = Vec::new();
    for path in &inputs {
        scores.extend(read_json::<Vec<ScenarioScore>>(path)?);
    }
    let rendered = report(&scores);
    let dir = config.output_dir.join("report");
    create_dir(&dir)?;
    let outputs = [
        (dir.join("report.txt"), &rendered.text),
        (dir.join("scores.csv"), &rendered.scores_csv),
        (dir.join("gains.csv"), &rendered.gains_csv),
        (dir.join("report.json"), &rendered.json),
    ];
    for (path, text) in &outputs {
        write_text(path, text)?;
    }
    print!("{}", rendered.text);
    let outputs: Vec<PathBuf> = outputs.into_iter().map(|(p, _)| p).collect();
    manifest::write(&dir, "report", None, config, &inputs, &outputs)
}

pub fn baseline_stage(config: &RunConfig) -> Result<(), CliError> {
    let schema = config.schema()?;
    let (split, inputs) = load_split(config, &schema)?;
    let hyper = config.baseline.hyper(config.seeds.train);
    let (result, plain, personal) = ab_evaluate(&split, &config.baseline.features(), &hyper)?;
    let dir = config.dataset_dir().join("baseline");
    create_dir(&dir)?;
    let mut outputs = Vec::new();
    for (name, model) in [("cls", &plain), ("clsp", &personal)] {
        let path = dir.join(format!("{name}.model"));
        let mut out = create_file(&path)?;
        model.save(&mut out)?;
        out.flush().map_err(|e| CliError::Internal(e.to_string()))?;
        outputs.push(path);
    }
    let scores = dir.join("scores.json");
    write_json(&scores, &result.scores)?;
    outputs.push(scores);
    println!(
        "linear baseline: CLS {:.2} / CLS-P {:.2} F1-macro, gain {:+.2}% (best epochs {} / {}, {} cold-start test records)",
        result.f1_cls * 100.0,
        result.f1_clsp * 100.0,
        result.gain,
        plain.best_epoch,
        personal.best_epoch,
        result.cold_start
    );
    manifest::write(&dir, "baseline", None, config, &inputs, &outputs)
}

/// ingest → clean → split → prompts for every scenario → query/parse/eval
/// where answers are available → baseline → report.
pub fn run_all(config: &RunConfig) -> Result<(), CliError> {
    ingest_stage(config)?;
    clean_stage(config)?;
    split_stage(config)?;
    let mut endpoint_failure = None;
    for &scenario in &config.scenarios {
        gen_prompts_stage(config, scenario)?;
        if scenario.is_query() && config.run_query {
            if let Err(e) = query_stage(config, scenario) {
                match e {
                    CliError::Endpoint(_) => endpoint_failure = Some(e),
                    other => return Err(other),
                }
            }
        }
        if config
            .scenario_dir(scenario)
            .join("responses.jsonl")
            .exists()
        {
            parse_stage(config, scenario, None)?;
            eval_stage(config, scenario, None, None, None)?;
        }
    }
    if config.baseline.enabled {
        baseline_stage(config)?;
    }
    report_stage(config, &[])?;
    match endpoint_failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}
