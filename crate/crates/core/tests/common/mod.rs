//! Fixtures and brute-force oracles shared by the integration tests.
#![allow(dead_code)]

pub mod mock;

use std::collections::{BTreeMap, BTreeSet};

use persona_core::corpus::{AnnotationCorpus, AnnotationRecord};
use persona_core::labels::{LabelSchema, LabelSet};
use persona_core::promptgen::{FewShotExample, UserContext};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GOLDEN_TEXT: &str = "I can't believe they <finally> fixed the bus schedule!";
pub const GOLDEN_EX_A: &str = "What a lovely surprise, thank you all.";
pub const GOLDEN_EX_B: &str = "Honestly this is the worst update so far.";
pub const GOLDEN_SEED: u64 = 11;
pub const GOLDEN_USER_INDEX: usize = 3;

pub fn schema_for(dataset: &str) -> LabelSchema {
    match dataset {
        "goemotions" => LabelSchema::goemotions(),
        _ => LabelSchema::unhealthy_conversations(),
    }
}

fn golden_annotations(dataset: &str) -> [&'static [&'static str]; 2] {
    match dataset {
        "goemotions" => [&["joy", "gratitude"], &["annoyance", "anger"]],
        _ => [&["healthy"], &["sarcastic", "dismissive"]],
    }
}

pub fn golden_record(schema: &LabelSchema) -> AnnotationRecord {
    AnnotationRecord {
        text_id: "t-target".into(),
        text: GOLDEN_TEXT.into(),
        annotator_id: "rater-c".into(),
        labels: LabelSet::from_indices([schema.len() - 1]),
    }
}

/// The fixture user; the pool holds the target itself plus `n_examples`
/// usable examples.
pub fn golden_user(dataset: &str, n_examples: usize) -> UserContext {
    let schema = schema_for(dataset);
    let [a, b] = golden_annotations(dataset);
    let mut pool = vec![FewShotExample {
        text_id: "t-target".into(),
        text: GOLDEN_TEXT.into(),
        labels: LabelSet::from_indices([0]),
    }];
    for (id, text, labels) in [("t-a", GOLDEN_EX_A, a), ("t-b", GOLDEN_EX_B, b)]
        .into_iter()
        .take(n_examples)
    {
        pool.push(FewShotExample {
            text_id: id.into(),
            text: text.into(),
            labels: schema.set_from_names(labels).unwrap(),
        });
    }
    UserContext {
        user_id: "rater-c".into(),
        user_index: GOLDEN_USER_INDEX,
        few_shot_pool: pool,
    }
}

/// F1-macro by the textbook definition, one label at a time.
pub fn brute_force_f1(pairs: &[(Vec<bool>, Vec<bool>)], n_labels: usize) -> f64 {
    if n_labels == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for l in 0..n_labels {
        let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
        for (gold, pred) in pairs {
            match (gold[l], pred[l]) {
                (true, true) => tp += 1.0,
                (false, true) => fp += 1.0,
                (true, false) => fn_ += 1.0,
                _ => {}
            }
        }
        let precision = if tp + fp == 0.0 { 0.0 } else { tp / (tp + fp) };
        let recall = if tp + fn_ == 0.0 {
            0.0
        } else {
            tp / (tp + fn_)
        };
        total += if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
    }
    total / n_labels as f64
}

pub fn to_bools(set: LabelSet, n: usize) -> Vec<bool> {
    (0..n).map(|i| set.contains(i)).collect()
}

/// Random corpus with skewed annotator activity.
pub fn random_corpus(
    rng: &mut ChaCha8Rng,
    schema: &LabelSchema,
    n_texts: usize,
    n_annotators: usize,
) -> AnnotationCorpus {
    let mut records = Vec::new();
    // Heavy-tailed activity: some annotators are rare enough to be filtered.
    let activity: Vec<f64> = (0..n_annotators)
        .map(|_| {
            let u: f64 = rng.random();
            u.powi(4).max(0.002)
        })
        .collect();
    for t in 0..n_texts {
        for (a, &p) in activity.iter().enumerate() {
            if rng.random_bool(p) {
                let bits = rng.random_range(1..(1u64 << schema.len()));
                records.push(AnnotationRecord {
                    text_id: format!("t{t:04}"),
                    text: format!("text number {t}"),
                    annotator_id: format!("a{a:02}"),
                    labels: LabelSet::from_bits(bits),
                });
            }
        }
    }
    AnnotationCorpus::new(schema.clone(), records)
}

pub fn small_schema(n: usize) -> LabelSchema {
    LabelSchema::new("toy", "label", (0..n).map(|i| format!("l{i}"))).unwrap()
}

/// Annotators kept by the strict 5% rule, computed from plain counts.
pub fn oracle_kept_annotators(corpus: &AnnotationCorpus, threshold: f64) -> BTreeSet<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &corpus.records {
        *counts.entry(&r.annotator_id).or_default() += 1;
    }
    let max = counts.values().copied().max().unwrap_or(0) as f64;
    counts
        .into_iter()
        .filter(|(_, c)| (*c as f64) >= threshold * max)
        .map(|(a, _)| a.to_string())
        .collect()
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn annotator_set(c: &AnnotationCorpus) -> BTreeSet<String> {
    c.records.iter().map(|r| r.annotator_id.clone()).collect()
}

fn text_set(c: &AnnotationCorpus) -> BTreeSet<String> {
    c.records.iter().map(|r| r.text_id.clone()).collect()
}

/// Runs filter, split and coverage on one random corpus and checks each
/// against plain set algebra.
pub fn corpus_oracle_case(seed: u64) -> Result<(), String> {
    use persona_core::corpus::{
        enforce_annotator_coverage, filter_outlier_annotators, split_by_text, SplitRatios,
    };
    let threshold = persona_core::corpus::DEFAULT_OUTLIER_THRESHOLD;
    let schema = small_schema(4);
    let ratios = SplitRatios::default();
    let mut rng = seeded(seed);
    let corpus = random_corpus(&mut rng, &schema, 40 + seed as usize, 12);

    let kept = oracle_kept_annotators(&corpus, threshold);
    let filtered = filter_outlier_annotators(&corpus, threshold);
    if annotator_set(&filtered) != kept {
        return Err(format!("seed {seed}: filter kept the wrong annotators"));
    }
    let expected: Vec<&AnnotationRecord> = corpus
        .records
        .iter()
        .filter(|r| kept.contains(&r.annotator_id))
        .collect();
    if filtered.records.iter().collect::<Vec<_>>() != expected {
        return Err(format!(
            "seed {seed}: filter changed record order or content"
        ));
    }
    if filter_outlier_annotators(&filtered, threshold).records != filtered.records {
        return Err(format!("seed {seed}: filter is not idempotent"));
    }

    let split = split_by_text(&filtered, ratios, seed).map_err(|e| e.to_string())?;
    let (tr, va, te) = (
        text_set(&split.train),
        text_set(&split.validation),
        text_set(&split.test),
    );
    if !(tr.is_disjoint(&va) && tr.is_disjoint(&te) && va.is_disjoint(&te)) {
        return Err(format!("seed {seed}: partitions share a text"));
    }
    let all: BTreeSet<String> = tr.union(&va).chain(&te).cloned().collect();
    if all != text_set(&filtered) {
        return Err(format!("seed {seed}: split lost or invented texts"));
    }
    let counts = ratios.partition_counts(all.len());
    if (tr.len(), va.len(), te.len()) != (counts.train, counts.validation, counts.test) {
        return Err(format!("seed {seed}: partition sizes off"));
    }
    if split.train.len() + split.validation.len() + split.test.len() != filtered.len() {
        return Err(format!("seed {seed}: split lost records"));
    }

    let inter: BTreeSet<String> = annotator_set(&split.train)
        .intersection(&annotator_set(&split.validation))
        .cloned()
        .collect::<BTreeSet<_>>()
        .intersection(&annotator_set(&split.test))
        .cloned()
        .collect();
    match enforce_annotator_coverage(&split) {
        Ok(covered) => {
            for p in [&covered.train, &covered.validation, &covered.test] {
                if annotator_set(p) != inter {
                    return Err(format!(
                        "seed {seed}: coverage differs from the intersection"
                    ));
                }
            }
            let before: Vec<&AnnotationRecord> = split
                .train
                .records
                .iter()
                .filter(|r| inter.contains(&r.annotator_id))
                .collect();
            if covered.train.records.iter().collect::<Vec<_>>() != before {
                return Err(format!("seed {seed}: coverage reordered records"));
            }
        }
        Err(_) if inter.is_empty() => {}
        Err(e) => {
            return Err(format!(
                "seed {seed}: coverage failed despite shared annotators: {e}"
            ))
        }
    }
    Ok(())
}
