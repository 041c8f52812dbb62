use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// The evaluation setups: querying with 0/1/2 shots, generative fine-tuning
/// and classification-head fine-tuning, each of the latter two with and
/// without user conditioning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioId {
    Q0s,
    Q1s,
    Q2s,
    Lm,
    Lmp,
    Cls,
    Clsp,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 7] = [
        ScenarioId::Q0s,
        ScenarioId::Q1s,
        ScenarioId::Q2s,
        ScenarioId::Lm,
        ScenarioId::Lmp,
        ScenarioId::Cls,
        ScenarioId::Clsp,
    ];

    /// Identifier used in file names, JSONL and on the command line.
    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioId::Q0s => "q0s",
            ScenarioId::Q1s => "q1s",
            ScenarioId::Q2s => "q2s",
            ScenarioId::Lm => "lm",
            ScenarioId::Lmp => "lmp",
            ScenarioId::Cls => "cls",
            ScenarioId::Clsp => "clsp",
        }
    }

    /// Column header used in report tables.
    pub fn display_name(self) -> &'static str {
        match self {
            ScenarioId::Q0s => "Q-0S",
            ScenarioId::Q1s => "Q-1S",
            ScenarioId::Q2s => "Q-2S",
            ScenarioId::Lm => "LM",
            ScenarioId::Lmp => "LM-P",
            ScenarioId::Cls => "CLS",
            ScenarioId::Clsp => "CLS-P",
        }
    }

    pub fn is_query(self) -> bool {
        matches!(self, ScenarioId::Q0s | ScenarioId::Q1s | ScenarioId::Q2s)
    }

    pub fn is_personalized(self) -> bool {
        matches!(self, ScenarioId::Lmp | ScenarioId::Clsp)
    }

    /// LM and LM-P train on label strings.
    pub fn is_generative(self) -> bool {
        matches!(self, ScenarioId::Lm | ScenarioId::Lmp)
    }

    /// CLS and CLS-P train on label vectors.
    pub fn is_classification(self) -> bool {
        matches!(self, ScenarioId::Cls | ScenarioId::Clsp)
    }

    pub fn few_shot_count(self) -> usize {
        match self {
            ScenarioId::Q1s => 1,
            ScenarioId::Q2s => 2,
            _ => 0,
        }
    }

    /// Whether the rendered prompt asks for a comma-separated answer.
    pub fn requests_label_list(self) -> bool {
        !self.is_classification()
    }

    /// The non-personalized twin of a personalized scenario.
    pub fn baseline(self) -> Option<ScenarioId> {
        match self {
            ScenarioId::Lmp => Some(ScenarioId::Lm),
            ScenarioId::Clsp => Some(ScenarioId::Cls),
            _ => None,
        }
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown scenario `{0}` (expected one of q0s, q1s, q2s, lm, lmp, cls, clsp)")]
pub struct UnknownScenario(pub String);

impl FromStr for ScenarioId {
    type Err = UnknownScenario;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| !matches!(c, '-' | '_'))
            .collect::<String>()
            .to_ascii_lowercase();
        ScenarioId::ALL
            .into_iter()
            .find(|id| id.as_str() == key)
            .ok_or_else(|| UnknownScenario(s.to_string()))
    }
}
