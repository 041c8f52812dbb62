//! Seeded synthetic annotation corpora with known labeling rules.
//!
//! Every label owns a handful of cue words; a text carries label `l` under
//! the shared rule iff it contains one of `l`'s cues. Each persona inverts
//! the shared rule for its own subset of labels: it tags the label exactly
//! when the cue is absent. With `flip_probability = 0` every annotator
//! follows the shared rule, which makes the corpus a control where user
//! identity carries no information.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotationCorpus, AnnotationRecord, CleaningLog, Provenance};
use crate::labels::{LabelSchema, LabelSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_users: usize,
    pub n_texts: usize,
    pub annotators_per_text: usize,
    /// Probability that a text contains a cue for a given label.
    pub cue_rate: f64,
    /// Probability that a persona inverts a given label.
    pub flip_probability: f64,
    /// Probability of flipping any single (record, label) bit at random.
    pub noise: f64,
    pub filler_words: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_users: 20,
            n_texts: 1500,
            annotators_per_text: 5,
            cue_rate: 0.3,
            flip_probability: 0.3,
            noise: 0.02,
            filler_words: 8,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    /// Same generator with every persona following the shared rule.
    pub fn control(&self) -> Self {
        Self {
            flip_probability: 0.0,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub corpus: AnnotationCorpus,
    /// Labels each user inverts, indexed like `user_ids`.
    pub personas: Vec<LabelSet>,
    pub user_ids: Vec<String>,
    /// Shared-rule labels of each text, keyed by text id.
    pub cue_labels: Vec<(String, LabelSet)>,
}

impl SyntheticCorpus {
    pub fn persona_of(&self, annotator_id: &str) -> Option<LabelSet> {
        self.user_ids
            .iter()
            .position(|u| u == annotator_id)
            .map(|i| self.personas[i])
    }

    pub fn cues_of(&self, text_id: &str) -> Option<LabelSet> {
        self.cue_labels
            .iter()
            .find(|(t, _)| t == text_id)
            .map(|(_, s)| *s)
    }
}

fn word(rng: &mut ChaCha8Rng) -> String {
    const ONSETS: &[&str] = &[
        "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z",
    ];
    const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];
    let syllables = rng.random_range(2..=3);
    (0..syllables)
        .map(|_| {
            format!(
                "{}{}",
                ONSETS.choose(rng).unwrap(),
                VOWELS.choose(rng).unwrap()
            )
        })
        .collect()
}

fn distinct_words(
    rng: &mut ChaCha8Rng,
    n: usize,
    taken: &mut std::collections::HashSet<String>,
) -> Vec<String> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let w = word(rng);
        if taken.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

/// Generates a corpus over `schema`'s labels. Records whose final label set
/// is empty are dropped, as ingestion would.
pub fn generate(schema: &LabelSchema, spec: &SyntheticSpec) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_labels = schema.len();
    let mut taken = std::collections::HashSet::new();
    let cues: Vec<Vec<String>> = (0..n_labels)
        .map(|_| distinct_words(&mut rng, 4, &mut taken))
        .collect();
    let filler = distinct_words(&mut rng, 300, &mut taken);

    let user_ids: Vec<String> = (0..spec.n_users).map(|u| format!("user{u:03}")).collect();
    let personas: Vec<LabelSet> = (0..spec.n_users)
        .map(|_| {
            (0..n_labels)
                .filter(|_| rng.random_bool(spec.flip_probability))
                .collect()
        })
        .collect();

    let mut records = Vec::new();
    let mut cue_labels = Vec::with_capacity(spec.n_texts);
    let mut dropped = 0;
    let mut user_order: Vec<usize> = (0..spec.n_users).collect();
    for t in 0..spec.n_texts {
        let text_id = format!("syn{t:05}");
        let mut words: Vec<String> = (0..spec.filler_words)
            .map(|_| filler.choose(&mut rng).unwrap().clone())
            .collect();
        let mut base = LabelSet::empty();
        for (l, label_cues) in cues.iter().enumerate() {
            if rng.random_bool(spec.cue_rate) {
                base.insert(l);
                words.push(label_cues.choose(&mut rng).unwrap().clone());
            }
        }
        words.shuffle(&mut rng);
        let text = words.join(" ");
        cue_labels.push((text_id.clone(), base));

        user_order.shuffle(&mut rng);
        let mut annotators: Vec<usize> =
            user_order[..spec.annotators_per_text.min(spec.n_users)].to_vec();
        annotators.sort_unstable();
        for u in annotators {
            let flipped = LabelSet::from_bits(base.bits() ^ personas[u].bits());
            let mut labels = flipped;
            for l in 0..n_labels {
                if rng.random_bool(spec.noise) {
                    labels = LabelSet::from_bits(labels.bits() ^ (1 << l));
                }
            }
            if labels.is_empty() {
                dropped += 1;
                continue;
            }
            records.push(AnnotationRecord {
                text_id: text_id.clone(),
                text: text.clone(),
                annotator_id: user_ids[u].clone(),
                labels,
            });
        }
    }
    SyntheticCorpus {
        corpus: AnnotationCorpus {
            schema: schema.clone(),
            records,
            provenance: Provenance {
                source_digest: None,
                log: CleaningLog {
                    dropped_empty: dropped,
                    ..Default::default()
                },
            },
        },
        personas,
        user_ids,
        cue_labels,
    }
}
