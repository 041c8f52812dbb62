mod common;

use std::path::PathBuf;

use common::*;
use persona_core::corpus::{
    AnnotationCorpus, AnnotationRecord, Partition, SplitCorpus, SplitRatios,
};
use persona_core::promptgen::{build_prompt, emit_corpus, Templates};
use persona_core::{LabelSet, ScenarioId};

const DATASETS: [&str; 2] = ["goemotions", "unhealthy_conversations"];
const SCENARIOS: [ScenarioId; 7] = [
    ScenarioId::Q0s,
    ScenarioId::Q1s,
    ScenarioId::Q2s,
    ScenarioId::Lm,
    ScenarioId::Lmp,
    ScenarioId::Cls,
    ScenarioId::Clsp,
];

fn golden(dataset: &str, scenario: ScenarioId) -> String {
    let path: PathBuf = [
        env!("CARGO_MANIFEST_DIR"),
        "tests",
        "golden",
        dataset,
        &format!("{}.txt", scenario.as_str()),
    ]
    .iter()
    .collect();
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn render(dataset: &str, scenario: ScenarioId) -> String {
    let schema = schema_for(dataset);
    let user = golden_user(dataset, scenario.few_shot_count());
    build_prompt(
        scenario,
        &golden_record(&schema),
        &schema,
        &Templates::bundled(),
        Some(&user),
        GOLDEN_SEED,
    )
    .unwrap()
    .prompt_text
}

#[test]
fn every_prompt_matches_its_golden_file() {
    for dataset in DATASETS {
        for scenario in SCENARIOS {
            let got = render(dataset, scenario);
            let want = golden(dataset, scenario);
            assert_eq!(got, want, "{dataset}/{}", scenario.as_str());
        }
    }
}

#[test]
fn response_format_sentence_only_in_generative_prompts() {
    for dataset in DATASETS {
        for scenario in SCENARIOS {
            let has = render(dataset, scenario).contains("Please compose your response");
            assert_eq!(
                has,
                !scenario.is_classification(),
                "{dataset}/{}",
                scenario.as_str()
            );
        }
    }
}

#[test]
fn example_headers() {
    let q1 = render("goemotions", ScenarioId::Q1s);
    assert!(q1.contains("### Example:\n") && q1.contains("### Example Response:\n"));
    let q2 = render("goemotions", ScenarioId::Q2s);
    assert!(q2.contains("### Example 1:\n") && q2.contains("### Example 2:\n"));
    for s in SCENARIOS {
        let p = render("unhealthy_conversations", s);
        assert!(!p.contains("### Example 1:") || s == ScenarioId::Q2s);
    }
}

/// The personalized prompt is the plain one plus the user block, with the
/// instruction wording changed to address a specific user.
#[test]
fn personalization_delta_is_the_user_block() {
    for dataset in DATASETS {
        for (plain, personal) in [
            (ScenarioId::Cls, ScenarioId::Clsp),
            (ScenarioId::Lm, ScenarioId::Lmp),
        ] {
            let a: Vec<String> = render(dataset, plain).lines().map(String::from).collect();
            let b: Vec<String> = render(dataset, personal)
                .lines()
                .map(String::from)
                .collect();
            assert_eq!(b.len(), a.len() + 3);
            assert_eq!(
                a[0].replacen(
                    "the following text by",
                    "the following text for the specified user by",
                    1
                ),
                b[0]
            );
            assert_eq!(
                b[1..5],
                [
                    "".to_string(),
                    "### User ID:".into(),
                    GOLDEN_USER_INDEX.to_string(),
                    "".into()
                ]
            );
            assert_eq!(a[2..], b[5..]);
        }
    }
}

#[test]
fn few_shot_never_embeds_the_target() {
    for dataset in DATASETS {
        for scenario in [ScenarioId::Q1s, ScenarioId::Q2s] {
            let p = render(dataset, scenario);
            // The target text appears exactly once: as the text under test.
            assert_eq!(p.matches(GOLDEN_TEXT).count(), 1);
        }
    }
}

fn toy_split() -> SplitCorpus {
    let schema = schema_for("goemotions");
    let mk = |t: usize, a: &str, bits: u64| AnnotationRecord {
        text_id: format!("t{t}"),
        text: format!("some text {t}"),
        annotator_id: a.into(),
        labels: LabelSet::from_bits(bits),
    };
    let part = |rs: Vec<AnnotationRecord>| AnnotationCorpus::new(schema.clone(), rs);
    SplitCorpus {
        train: part(vec![
            mk(1, "bob", 0b1),
            mk(1, "ann", 0b10),
            mk(2, "ann", 0b100),
            mk(3, "bob", 0b11),
            mk(4, "ann", 0b1000),
            mk(5, "bob", 0b110),
            mk(6, "ann", 0b1),
            mk(6, "bob", 0b1),
        ]),
        validation: part(vec![mk(7, "ann", 0b1), mk(7, "bob", 0b10)]),
        test: part(vec![mk(9, "bob", 0b1), mk(8, "ann", 0b101)]),
        split_seed: 0,
        ratios: SplitRatios::default(),
        log: Default::default(),
    }
}

fn emit(scenario: ScenarioId) -> [Vec<u8>; 3] {
    let dir = tempfile::tempdir().unwrap();
    let path = |p: Partition| dir.path().join(format!("{}.jsonl", p.name()));
    emit_corpus(&toy_split(), scenario, &Templates::bundled(), 5, |p| {
        std::fs::File::create(path(p)).unwrap()
    })
    .unwrap();
    Partition::ALL.map(|p| std::fs::read(path(p)).unwrap_or_default())
}

#[test]
fn emission_is_deterministic_and_counts_records() {
    for scenario in SCENARIOS {
        let a = emit(scenario);
        assert_eq!(a, emit(scenario), "{}", scenario.as_str());
        let lines = |b: &Vec<u8>| b.iter().filter(|&&c| c == b'\n').count();
        if scenario.is_query() {
            assert_eq!((lines(&a[0]), lines(&a[1]), lines(&a[2])), (0, 0, 2));
        } else {
            assert_eq!((lines(&a[0]), lines(&a[1]), lines(&a[2])), (8, 2, 2));
        }
    }
}

#[test]
fn emission_is_sorted_and_targets_are_canonical() {
    let [train, _, test] = emit(ScenarioId::Lmp);
    let rows: Vec<serde_json::Value> = train
        .split(|&c| c == b'\n')
        .filter(|l| !l.is_empty())
        .map(|l| serde_json::from_slice(l).unwrap())
        .collect();
    let keys: Vec<(String, String)> = rows
        .iter()
        .map(|r| {
            (
                r["text_id"].as_str().unwrap().into(),
                r["annotator_id"].as_str().unwrap().into(),
            )
        })
        .collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
    // t1/bob has bits 0b1 -> admiration; t3/bob has 0b11 -> "admiration, amusement".
    let t3 = rows.iter().find(|r| r["text_id"] == "t3").unwrap();
    assert_eq!(t3["target_text"], "admiration, amusement");
    let test_rows: Vec<&[u8]> = test
        .split(|&c| c == b'\n')
        .filter(|l| !l.is_empty())
        .collect();
    assert!(std::str::from_utf8(test_rows[0])
        .unwrap()
        .contains("\"t8\""));

    let [cls_train, ..] = emit(ScenarioId::Cls);
    let first: serde_json::Value =
        serde_json::from_slice(cls_train.split(|&c| c == b'\n').next().unwrap()).unwrap();
    assert_eq!(first["target_vector"].as_array().unwrap().len(), 28);
    assert!(first.get("target_text").is_none());
}
