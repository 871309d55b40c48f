use std::collections::BTreeMap;
use std::sync::LazyLock;

use regex::Regex;

use super::{AgentError, AgentRole};

/// Slot name to bound text.
pub type Bindings = BTreeMap<String, String>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Slot {
    SelectedPapers,
    InputData,
    CriticFeedback,
    AgentId,
    AgentInstruction,
    DataAnalysis,
    Hypotheses,
    SearchResults,
    LiteratureReview,
}

impl Slot {
    pub fn name(&self) -> &'static str {
        match self {
            Slot::SelectedPapers => "SELECTED_PAPERS",
            Slot::InputData => "INPUT_DATA",
            Slot::CriticFeedback => "CRITIC_FEEDBACK",
            Slot::AgentId => "AGENT_ID",
            Slot::AgentInstruction => "AGENT_INSTRUCTION",
            Slot::DataAnalysis => "DATA_ANALYSIS",
            Slot::Hypotheses => "HYPOTHESES",
            Slot::SearchResults => "SEARCH_RESULTS",
            Slot::LiteratureReview => "LITERATURE_REVIEW",
        }
    }
}

const DATA_ANALYST: &str = include_str!("../../templates/data_analyst.txt");
const PLANNER: &str = include_str!("../../templates/planner.txt");
const SCIENTIST: &str = include_str!("../../templates/scientist.txt");
const ACCUMULATOR: &str = include_str!("../../templates/accumulator.txt");
const LITERATURE_REVIEWER: &str = include_str!("../../templates/literature_reviewer.txt");
const CRITIC: &str = include_str!("../../templates/critic.txt");

static SLOT_MARKER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\{([A-Z][A-Z_]*)\}").unwrap());

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub role: AgentRole,
    pub body: String,
}

impl PromptTemplate {
    /// The shipped template for `role`. Every scientist shares one template.
    pub fn for_role(role: AgentRole) -> Self {
        let body = match role {
            AgentRole::DataAnalyst => DATA_ANALYST,
            AgentRole::Planner => PLANNER,
            AgentRole::Scientist(_) => SCIENTIST,
            AgentRole::Accumulator => ACCUMULATOR,
            AgentRole::LiteratureReviewer => LITERATURE_REVIEWER,
            AgentRole::Critic => CRITIC,
        };
        PromptTemplate {
            role,
            body: body.to_string(),
        }
    }

    pub fn slots(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for cap in SLOT_MARKER.captures_iter(&self.body) {
            let name = cap[1].to_string();
            if !out.contains(&name) {
                out.push(name);
            }
        }
        out
    }
}

/// Substitutes every `{SLOT}` marker in one pass; bound text is never
/// rescanned, so values containing braces are inserted unchanged.
pub fn render_prompt(template: &PromptTemplate, bindings: &Bindings) -> Result<String, AgentError> {
    let body = &template.body;
    let mut out = String::with_capacity(body.len());
    let mut last = 0;
    for cap in SLOT_MARKER.captures_iter(body) {
        let whole = cap.get(0).unwrap();
        let name = &cap[1];
        let value = bindings
            .get(name)
            .ok_or_else(|| AgentError::MissingSlot(name.to_string()))?;
        out.push_str(&body[last..whole.start()]);
        out.push_str(value);
        last = whole.end();
    }
    out.push_str(&body[last..]);
    Ok(out)
}

/// Appended to a prompt when the previous response failed to parse.
pub fn json_reminder(error: &str) -> String {
    format!(
        "\n\nYour previous response could not be used ({error}). \
         Respond ONLY with valid JSON in the format described above, with no additional text before or after."
    )
}
