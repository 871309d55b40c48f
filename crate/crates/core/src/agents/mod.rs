//! Role prompts and parsers for agent output.

mod dedup;
mod ordinal;
mod parse;
mod prompt;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dedup::{jaccard, normalize_statement, prefilter_duplicates, DEFAULT_DUP_THRESHOLD};
pub use ordinal::{ordinal_word, renumber_final, word_index};
pub use parse::{
    check_verbatim, extract_json, hypotheses_to_json, parse_critic, parse_hypotheses, parse_planner_output,
    CriticEntry, CriticReview, PlannerPlan, Verdict,
};
pub use prompt::{json_reminder, render_prompt, Bindings, PromptTemplate, Slot};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("no binding for slot {0}")]
    MissingSlot(String),
    #[error("no balanced JSON value found")]
    NoJson,
    #[error("invalid JSON: {0}")]
    InvalidJson(String),
    #[error("missing key {0}")]
    MissingKey(String),
    #[error("empty instruction for {0}")]
    EmptyInstruction(String),
    #[error("expected an array of hypotheses or an object with key \"hypothesis\"")]
    Shape,
    #[error("element {index} missing {field}")]
    MissingField { index: usize, field: &'static str },
    #[error("element {index} has empty {field}")]
    EmptyField { index: usize, field: &'static str },
    #[error("unrecognized hypothesis id {0:?}")]
    BadId(String),
    #[error("accumulated hypothesis {0} changes a scientist statement")]
    NotVerbatim(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AgentRole {
    DataAnalyst,
    Planner,
    /// 1-based scientist index.
    Scientist(u32),
    Accumulator,
    LiteratureReviewer,
    Critic,
}

impl AgentRole {
    /// Stable key used in ledgers, scripts and file names.
    pub fn key(&self) -> String {
        match self {
            AgentRole::DataAnalyst => "data_analyst".into(),
            AgentRole::Planner => "planner".into(),
            AgentRole::Scientist(k) => format!("scientist_{k}"),
            AgentRole::Accumulator => "accumulator".into(),
            AgentRole::LiteratureReviewer => "literature_reviewer".into(),
            AgentRole::Critic => "critic".into(),
        }
    }

    /// Planner and accumulator run cooler; their output is structural.
    pub fn default_temperature(&self) -> f64 {
        match self {
            AgentRole::Planner | AgentRole::Accumulator => 0.2,
            _ => 0.7,
        }
    }

    pub fn expects_json(&self) -> bool {
        matches!(
            self,
            AgentRole::Planner | AgentRole::Scientist(_) | AgentRole::Accumulator
        )
    }
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key())
    }
}

#[derive(Debug, Error)]
#[error("unknown agent role {0:?}")]
pub struct UnknownRole(String);

impl FromStr for AgentRole {
    type Err = UnknownRole;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "data_analyst" => AgentRole::DataAnalyst,
            "planner" => AgentRole::Planner,
            "accumulator" => AgentRole::Accumulator,
            "literature_reviewer" => AgentRole::LiteratureReviewer,
            "critic" => AgentRole::Critic,
            other => match other.strip_prefix("scientist_").map(str::parse::<u32>) {
                Some(Ok(k)) if k > 0 => AgentRole::Scientist(k),
                _ => return Err(UnknownRole(s.to_string())),
            },
        })
    }
}

impl Serialize for AgentRole {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.key())
    }
}

impl<'de> Deserialize<'de> for AgentRole {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub id: String,
    pub statement: String,
    pub key_datapoints: String,
    pub source: AgentRole,
    pub iteration: u32,
}
