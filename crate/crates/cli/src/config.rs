//! The TOML run configuration. Every field has a default so a config file
//! only needs what differs; command-line flags override the file.

use std::path::{Path, PathBuf};

use persona_core::baseline::{FeatureConfig, TrainHyper};
use persona_core::client::EndpointConfig;
use persona_core::corpus::{SplitRatios, DEFAULT_OUTLIER_THRESHOLD};
use persona_core::labels::LabelSchema;
use persona_core::ScenarioId;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub split: u64,
    pub prompt: u64,
    pub train: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub enabled: bool,
    pub hash_dim: usize,
    pub ngram_max: u8,
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        let f = FeatureConfig::default();
        let h = TrainHyper::default();
        Self {
            enabled: true,
            hash_dim: f.hash_dim,
            ngram_max: f.ngram_max,
            epochs: h.epochs,
            learning_rate: h.learning_rate,
            l2: h.l2,
        }
    }
}

impl BaselineConfig {
    pub fn features(&self) -> FeatureConfig {
        FeatureConfig {
            hash_dim: self.hash_dim,
            ngram_max: self.ngram_max,
            ..Default::default()
        }
    }

    pub fn hyper(&self, seed: u64) -> TrainHyper {
        TrainHyper {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            l2: self.l2,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// `goemotions`, `unhealthy_conversations`, or any name when `schema`
    /// points at a schema file.
    pub dataset: String,
    pub schema: Option<PathBuf>,
    /// Raw CSV files or normalized JSONL files.
    pub inputs: Vec<PathBuf>,
    pub output_dir: PathBuf,
    pub templates_dir: Option<PathBuf>,
    pub scenarios: Vec<ScenarioId>,
    pub outlier_threshold: f64,
    pub ratios: SplitRatios,
    pub seeds: Seeds,
    /// Send query prompts to the endpoint during `run-all`.
    pub run_query: bool,
    /// Model name recorded for predictions that did not come from the
    /// endpoint (for example a fine-tuned adapter).
    pub model_label: Option<String>,
    pub endpoint: EndpointConfig,
    pub baseline: BaselineConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: "goemotions".into(),
            schema: None,
            inputs: Vec::new(),
            output_dir: PathBuf::from("runs"),
            templates_dir: None,
            scenarios: ScenarioId::ALL.to_vec(),
            outlier_threshold: DEFAULT_OUTLIER_THRESHOLD,
            ratios: SplitRatios::default(),
            seeds: Seeds::default(),
            run_query: false,
            model_label: None,
            endpoint: EndpointConfig::default(),
            baseline: BaselineConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        // Relative paths in the file are relative to the file.
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        config.inputs.iter_mut().for_each(fix);
        fix(&mut config.output_dir);
        if let Some(p) = config.schema.as_mut() {
            fix(p);
        }
        if let Some(p) = config.templates_dir.as_mut() {
            fix(p);
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.ratios
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        if !(0.0..=1.0).contains(&self.outlier_threshold) {
            return Err(CliError::Config(format!(
                "outlier_threshold must be in [0, 1], got {}",
                self.outlier_threshold
            )));
        }
        for p in self
            .inputs
            .iter()
            .chain(&self.schema)
            .chain(&self.templates_dir)
        {
            if !p.exists() {
                return Err(CliError::Config(format!("{} does not exist", p.display())));
            }
        }
        self.endpoint.validate()?;
        self.baseline.features().validate()?;
        Ok(())
    }

    pub fn schema(&self) -> Result<LabelSchema, CliError> {
        match (&self.schema, self.dataset.as_str()) {
            (Some(path), _) => Ok(LabelSchema::from_path(path)?),
            (None, "goemotions") => Ok(LabelSchema::goemotions()),
            (None, "unhealthy_conversations") => Ok(LabelSchema::unhealthy_conversations()),
            (None, other) => Err(CliError::Config(format!(
                "dataset `{other}` has no bundled schema; set `schema`"
            ))),
        }
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.output_dir.join(&self.dataset)
    }

    pub fn data_dir(&self) -> PathBuf {
        self.dataset_dir().join("data")
    }

    pub fn scenario_dir(&self, scenario: ScenarioId) -> PathBuf {
        self.dataset_dir().join(scenario.as_str())
    }

    pub fn model_label(&self, scenario: ScenarioId) -> String {
        match &self.model_label {
            Some(m) => m.clone(),
            None if scenario.is_query() => self.endpoint.model_name.clone(),
            None => "adapter".into(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let c: RunConfig = toml::from_str(
            r#"
            dataset = "unhealthy_conversations"
            scenarios = ["q0s", "clsp"]
            [seeds]
            split = 3
            [endpoint]
            max_parallel = 2
            "#,
        )
        .unwrap();
        assert_eq!(c.scenarios, vec![ScenarioId::Q0s, ScenarioId::Clsp]);
        assert_eq!(c.seeds.split, 3);
        assert_eq!(c.seeds.prompt, 0);
        assert_eq!(c.endpoint.max_parallel, 2);
        assert_eq!(c.baseline.epochs, 10);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("datset = \"x\"").is_err());
    }
}
