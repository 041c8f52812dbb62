//! User-conditioned linear baseline.
//!
//! One-vs-rest logistic regression over signed, hashed bag-of-n-grams.
//! Personalization is a single switch: with `with_user` set, a one-hot user
//! block is appended after the hashed text block, which is the linear
//! analogue of putting the user id into the prompt. Everything else about
//! the twin models is identical.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_segmentation::UnicodeSegmentation;

use crate::corpus::{AnnotationCorpus, SplitCorpus, UserIndex};
use crate::hashing::{stable_hash, FEATURE_HASH_SEED};
use crate::labels::{LabelSchema, LabelSet};
use crate::metrics::{f1_macro, gain, MetricsError, ScenarioScore};
use crate::scenario::ScenarioId;

pub const MODEL_MAGIC: &[u8] = b"PERSONA-LINEAR\n";
pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const BASELINE_MODEL_NAME: &str = "linear-baseline";

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("invalid feature config: {0}")]
    Config(String),
    #[error("training partition is empty")]
    EmptyTraining,
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64 },
    #[error("model/config mismatch: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    /// Width of the hashed text block; a power of two.
    pub hash_dim: usize,
    /// 1 for unigrams, 2 for unigrams plus bigrams.
    pub ngram_max: u8,
    pub with_user: bool,
    /// Width of the user block; set by training from the training split.
    pub user_dim: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            hash_dim: 1 << 18,
            ngram_max: 2,
            with_user: false,
            user_dim: 0,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<(), BaselineError> {
        if !self.hash_dim.is_power_of_two() {
            return Err(BaselineError::Config(format!(
                "hash_dim {} is not a power of two",
                self.hash_dim
            )));
        }
        if !(1..=2).contains(&self.ngram_max) {
            return Err(BaselineError::Config(format!(
                "ngram_max must be 1 or 2, got {}",
                self.ngram_max
            )));
        }
        if !self.with_user && self.user_dim != 0 {
            return Err(BaselineError::Config(
                "user_dim set without with_user".into(),
            ));
        }
        Ok(())
    }

    /// Total feature width.
    pub fn dim(&self) -> usize {
        self.hash_dim + if self.with_user { self.user_dim } else { 0 }
    }
}

/// Sparse vector as (index, value) pairs sorted by index.
pub type SparseVec = Vec<(u32, f64)>;

#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    pub vector: SparseVec,
    /// The annotator was not seen in training; the user block is all zero.
    pub cold_start: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Featurizer {
    pub config: FeatureConfig,
    pub users: UserIndex,
}

impl Featurizer {
    pub fn new(config: FeatureConfig, users: UserIndex) -> Result<Self, BaselineError> {
        config.validate()?;
        if config.with_user && config.user_dim != users.len() {
            return Err(BaselineError::Config(format!(
                "user_dim {} but {} known users",
                config.user_dim,
                users.len()
            )));
        }
        Ok(Self { config, users })
    }

    /// Hashed text block (L2-normalized) followed by the one-hot user block
    /// when `with_user` is set.
    pub fn featurize(&self, text: &str, annotator_id: &str) -> Features {
        let mut vector = hashed_text(text, self.config.hash_dim, self.config.ngram_max);
        let mut cold_start = false;
        if self.config.with_user {
            match self.users.get(annotator_id) {
                Some(u) => vector.push(((self.config.hash_dim + u) as u32, 1.0)),
                None => cold_start = true,
            }
        }
        Features { vector, cold_start }
    }
}

fn hashed_text(text: &str, dim: usize, ngram_max: u8) -> SparseVec {
    let lowered = text.to_lowercase();
    let tokens: Vec<&str> = lowered.unicode_words().collect();
    let mask = (dim - 1) as u64;
    let mut acc: Vec<(u32, f64)> = Vec::with_capacity(tokens.len() * ngram_max as usize);
    let mut push = |gram: &[u8]| {
        let h = stable_hash(gram, FEATURE_HASH_SEED);
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        acc.push(((h & mask) as u32, sign));
    };
    for t in &tokens {
        push(t.as_bytes());
    }
    if ngram_max >= 2 {
        let mut buf = Vec::new();
        for pair in tokens.windows(2) {
            buf.clear();
            buf.extend_from_slice(pair[0].as_bytes());
            buf.push(b' ');
            buf.extend_from_slice(pair[1].as_bytes());
            push(&buf);
        }
    }
    acc.sort_by_key(|(i, _)| *i);
    let mut merged: SparseVec = Vec::with_capacity(acc.len());
    for (i, v) in acc {
        match merged.last_mut() {
            Some((j, w)) if *j == i => *w += v,
            _ => merged.push((i, v)),
        }
    }
    merged.retain(|(_, v)| *v != 0.0);
    let norm = merged.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for (_, v) in &mut merged {
            *v /= norm;
        }
    }
    merged
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper {
    pub epochs: usize,
    /// Initial step size; epoch `e` (1-based) uses `learning_rate / sqrt(e)`.
    pub learning_rate: f64,
    pub l2: f64,
    pub seed: u64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            epochs: 10,
            learning_rate: 0.1,
            l2: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub featurizer: Featurizer,
    pub labels: Vec<String>,
    /// Row-major: label `l` owns `weights[l * dim .. (l + 1) * dim]`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub seed: u64,
    /// Mean per-label log loss after each epoch.
    pub loss_curve: Vec<f64>,
    /// Validation F1-macro after each epoch (empty without validation data).
    pub val_f1_curve: Vec<f64>,
    /// Epoch whose weights were kept (0 = no training).
    pub best_epoch: usize,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn log_loss(z: f64, y: bool) -> f64 {
    // log(1 + e^z) - y z, computed without overflow.
    let softplus = z.max(0.0) + (-z.abs()).exp().ln_1p();
    softplus - if y { z } else { 0.0 }
}

fn dot(weights: &[f64], x: &[(u32, f64)]) -> f64 {
    x.iter().map(|&(i, v)| weights[i as usize] * v).sum()
}

impl LinearModel {
    pub fn dim(&self) -> usize {
        self.featurizer.config.dim()
    }

    pub fn n_labels(&self) -> usize {
        self.labels.len()
    }

    fn label_weights(&self, label: usize) -> &[f64] {
        let d = self.dim();
        &self.weights[label * d..(label + 1) * d]
    }

    /// Checks that `config` describes the feature space this model was trained on.
    pub fn check_config(&self, config: &FeatureConfig) -> Result<(), BaselineError> {
        if *config != self.featurizer.config {
            return Err(BaselineError::Mismatch(format!(
                "model expects {:?}, got {config:?}",
                self.featurizer.config
            )));
        }
        Ok(())
    }

    pub fn scores_for(&self, x: &[(u32, f64)]) -> Result<Vec<f64>, BaselineError> {
        if let Some(&(i, _)) = x.last() {
            if i as usize >= self.dim() {
                return Err(BaselineError::Mismatch(format!(
                    "feature index {i} outside model dimension {}",
                    self.dim()
                )));
            }
        }
        Ok((0..self.n_labels())
            .map(|l| sigmoid(dot(self.label_weights(l), x) + self.bias[l]))
            .collect())
    }

    /// Labels whose sigmoid score is at least `threshold`.
    pub fn predict_features(
        &self,
        x: &[(u32, f64)],
        threshold: f64,
    ) -> Result<LabelSet, BaselineError> {
        Ok(self
            .scores_for(x)?
            .iter()
            .enumerate()
            .filter(|(_, &s)| s >= threshold)
            .map(|(i, _)| i)
            .collect())
    }

    /// Per-label scores for one text as annotated by one user.
    pub fn scores(&self, text: &str, annotator_id: &str) -> Vec<f64> {
        let f = self.featurizer.featurize(text, annotator_id);
        self.scores_for(&f.vector)
            .expect("featurizer matches model")
    }

    /// Predicted label set at the 0.5 threshold.
    pub fn predict(&self, text: &str, annotator_id: &str) -> LabelSet {
        let f = self.featurizer.featurize(text, annotator_id);
        self.predict_features(&f.vector, 0.5)
            .expect("featurizer matches model")
    }

    /// SHA-256 over weights and biases.
    pub fn weight_digest(&self) -> String {
        let mut bytes = Vec::with_capacity((self.weights.len() + self.bias.len()) * 8);
        for w in self.weights.iter().chain(&self.bias) {
            bytes.extend_from_slice(&w.to_le_bytes());
        }
        crate::corpus::sha256_hex(&bytes)
    }

    /// F1-macro of this model on a corpus.
    pub fn evaluate(&self, corpus: &AnnotationCorpus) -> crate::metrics::F1Scores {
        let pairs: Vec<(LabelSet, LabelSet)> = corpus
            .records
            .par_iter()
            .map(|r| (r.labels, self.predict(&r.text, &r.annotator_id)))
            .collect();
        f1_macro(&pairs, self.n_labels())
    }

    pub fn save<W: Write>(&self, mut out: W) -> Result<(), BaselineError> {
        let header = ModelHeader {
            format_version: MODEL_FORMAT_VERSION,
            config: self.featurizer.config.clone(),
            users: self.featurizer.users.clone(),
            labels: self.labels.clone(),
            seed: self.seed,
            loss_curve: self.loss_curve.clone(),
            val_f1_curve: self.val_f1_curve.clone(),
            best_epoch: self.best_epoch,
            weight_count: self.weights.len(),
        };
        out.write_all(MODEL_MAGIC)?;
        serde_json::to_writer(&mut out, &header)
            .map_err(|e| BaselineError::Format(e.to_string()))?;
        out.write_all(b"\n")?;
        let mut buf = Vec::with_capacity((self.weights.len() + self.bias.len()) * 8);
        for w in self.weights.iter().chain(&self.bias) {
            buf.extend_from_slice(&w.to_le_bytes());
        }
        out.write_all(&buf)?;
        out.flush()?;
        Ok(())
    }

    pub fn load<R: BufRead>(mut input: R) -> Result<Self, BaselineError> {
        let mut magic = vec![0u8; MODEL_MAGIC.len()];
        input.read_exact(&mut magic)?;
        if magic != MODEL_MAGIC {
            return Err(BaselineError::Format(
                "not a linear baseline model file".into(),
            ));
        }
        let mut line = String::new();
        input.read_line(&mut line)?;
        let header: ModelHeader =
            serde_json::from_str(&line).map_err(|e| BaselineError::Format(e.to_string()))?;
        if header.format_version != MODEL_FORMAT_VERSION {
            return Err(BaselineError::Format(format!(
                "unsupported format version {}",
                header.format_version
            )));
        }
        let featurizer = Featurizer::new(header.config, header.users)?;
        let n_labels = header.labels.len();
        if header.weight_count != n_labels * featurizer.config.dim() {
            return Err(BaselineError::Format(
                "weight count does not match header".into(),
            ));
        }
        let mut raw = Vec::new();
        input.read_to_end(&mut raw)?;
        if raw.len() != (header.weight_count + n_labels) * 8 {
            return Err(BaselineError::Format(format!(
                "expected {} weight bytes, found {}",
                (header.weight_count + n_labels) * 8,
                raw.len()
            )));
        }
        let mut values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
        let weights: Vec<f64> = values.by_ref().take(header.weight_count).collect();
        let bias: Vec<f64> = values.collect();
        Ok(Self {
            featurizer,
            labels: header.labels,
            weights,
            bias,
            seed: header.seed,
            loss_curve: header.loss_curve,
            val_f1_curve: header.val_f1_curve,
            best_epoch: header.best_epoch,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelHeader {
    format_version: u32,
    config: FeatureConfig,
    users: UserIndex,
    labels: Vec<String>,
    seed: u64,
    loss_curve: Vec<f64>,
    val_f1_curve: Vec<f64>,
    best_epoch: usize,
    weight_count: usize,
}

struct Example {
    x: SparseVec,
    y: LabelSet,
}

fn featurize_corpus(f: &Featurizer, corpus: &AnnotationCorpus) -> Vec<Example> {
    corpus
        .records
        .par_iter()
        .map(|r| Example {
            x: f.featurize(&r.text, &r.annotator_id).vector,
            y: r.labels,
        })
        .collect()
}

/// Trains per-label logistic regressions with seeded SGD.
///
/// Biases start at the log-odds of each label's training frequency, so a
/// zero-epoch model predicts from label priors alone. Each epoch visits the
/// training records in a fresh seeded order; labels are independent and
/// train in parallel without affecting results. The epoch with the best
/// validation F1-macro is kept (the last epoch when there is no
/// validation data).
pub fn train(
    split: &SplitCorpus,
    config: &FeatureConfig,
    hyper: &TrainHyper,
) -> Result<LinearModel, BaselineError> {
    if split.train.is_empty() {
        return Err(BaselineError::EmptyTraining);
    }
    let users = UserIndex::from_corpus(&split.train);
    let config = FeatureConfig {
        user_dim: if config.with_user { users.len() } else { 0 },
        ..config.clone()
    };
    let featurizer = Featurizer::new(config, users)?;
    let schema = split.schema();
    let n_labels = schema.len();
    let dim = featurizer.config.dim();

    let train_set = featurize_corpus(&featurizer, &split.train);
    let val_set = featurize_corpus(&featurizer, &split.validation);

    let n = train_set.len() as f64;
    let bias: Vec<f64> = (0..n_labels)
        .map(|l| {
            let pos = train_set.iter().filter(|e| e.y.contains(l)).count() as f64;
            let p = ((pos + 0.5) / (n + 1.0)).clamp(1e-4, 1.0 - 1e-4);
            (p / (1.0 - p)).ln()
        })
        .collect();

    let mut model = LinearModel {
        featurizer,
        labels: schema.labels().to_vec(),
        weights: vec![0.0; n_labels * dim],
        bias,
        seed: hyper.seed,
        loss_curve: Vec::new(),
        val_f1_curve: Vec::new(),
        best_epoch: 0,
    };
    let mut best: Option<(f64, Vec<f64>, Vec<f64>, usize)> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=hyper.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed.wrapping_add(epoch as u64));
        order.shuffle(&mut rng);
        let lr = hyper.learning_rate / (epoch as f64).sqrt();
        let l2 = hyper.l2;
        let losses: Vec<f64> = model
            .weights
            .par_chunks_mut(dim)
            .zip(model.bias.par_iter_mut())
            .enumerate()
            .map(|(label, (w, b))| {
                let mut loss = 0.0;
                for &i in &order {
                    let ex = &train_set[i];
                    let z = dot(w, &ex.x) + *b;
                    let y = ex.y.contains(label);
                    loss += log_loss(z, y);
                    let g = sigmoid(z) - if y { 1.0 } else { 0.0 };
                    for &(j, v) in &ex.x {
                        let wj = &mut w[j as usize];
                        *wj -= lr * (g * v + l2 * *wj);
                    }
                    *b -= lr * g;
                }
                loss
            })
            .collect();
        let mean_loss = losses.iter().sum::<f64>() / (n * n_labels as f64);
        if !mean_loss.is_finite() || model.weights.iter().any(|w| !w.is_finite()) {
            return Err(BaselineError::Diverged {
                epoch,
                loss: mean_loss,
            });
        }
        model.loss_curve.push(mean_loss);
        tracing::debug!(epoch, mean_loss, "epoch done");

        if !val_set.is_empty() {
            let pairs: Vec<(LabelSet, LabelSet)> = val_set
                .par_iter()
                .map(|e| {
                    (
                        e.y,
                        model.predict_features(&e.x, 0.5).expect("same featurizer"),
                    )
                })
                .collect();
            let f1 = f1_macro(&pairs, n_labels).macro_f1;
            model.val_f1_curve.push(f1);
            tracing::debug!(epoch, val_f1 = f1, "validation");
            if best.as_ref().is_none_or(|(b, ..)| f1 > *b) {
                best = Some((f1, model.weights.clone(), model.bias.clone(), epoch));
            }
        }
    }
    model.best_epoch = hyper.epochs;
    if let Some((_, w, b, epoch)) = best {
        model.weights = w;
        model.bias = b;
        model.best_epoch = epoch;
    }
    Ok(model)
}

/// Result of training the non-personalized and personalized twins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbResult {
    pub f1_cls: f64,
    pub f1_clsp: f64,
    /// Percent gain of the personalized twin over the plain one.
    pub gain: f64,
    pub scores: Vec<ScenarioScore>,
    /// Test records whose annotator was unseen in training.
    pub cold_start: usize,
}

/// Trains twin models that differ only in `with_user` and scores both on
/// the test partition.
pub fn ab_evaluate(
    split: &SplitCorpus,
    base: &FeatureConfig,
    hyper: &TrainHyper,
) -> Result<(AbResult, LinearModel, LinearModel), BaselineError> {
    let schema: &LabelSchema = split.schema();
    let plain_cfg = FeatureConfig {
        with_user: false,
        user_dim: 0,
        ..base.clone()
    };
    let user_cfg = FeatureConfig {
        with_user: true,
        ..plain_cfg.clone()
    };
    let plain = train(split, &plain_cfg, hyper)?;
    let personal = train(split, &user_cfg, hyper)?;

    let mut scores = Vec::new();
    let mut f1 = [0.0; 2];
    for (k, (model, scenario)) in [(&plain, ScenarioId::Cls), (&personal, ScenarioId::Clsp)]
        .into_iter()
        .enumerate()
    {
        let joined = crate::metrics::Joined {
            pairs: split
                .test
                .records
                .par_iter()
                .map(|r| (r.labels, model.predict(&r.text, &r.annotator_id)))
                .collect(),
            ..Default::default()
        };
        let score = ScenarioScore::from_joined(
            schema.dataset_name(),
            BASELINE_MODEL_NAME,
            scenario,
            &joined,
            schema,
        );
        f1[k] = score.f1_macro;
        scores.push(score);
    }
    let cold_start = split
        .test
        .records
        .iter()
        .filter(|r| personal.featurizer.users.get(&r.annotator_id).is_none())
        .count();
    let result = AbResult {
        f1_cls: f1[0],
        f1_clsp: f1[1],
        gain: gain(f1[1], f1[0])?,
        scores,
        cold_start,
    };
    Ok((result, plain, personal))
}
