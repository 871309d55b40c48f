//! Built-in scripted run (`builtin:demo`) assembled from the bundled
//! iteration tables, so the full loop can run offline.

use serde::Deserialize;
use serde_json::json;

use crate::agents::{hypotheses_to_json, ordinal_word, AgentRole, Hypothesis};
use crate::gateway::Script;
use crate::scholar::PaperSnippet;

pub const DEMO_SCRIPT: &str = "builtin:demo";
pub const DEMO_RATE_IN: f64 = 3e-6;
pub const DEMO_RATE_OUT: f64 = 15e-6;

const TABLES: &str = include_str!("../fixtures/appendix_hypotheses.json");
const ANALYST_1: &str = include_str!("../fixtures/demo/analyst_1.md");
const PLANNER_1: &str = include_str!("../fixtures/demo/planner_1.json");
const CRITIC_1: &str = include_str!("../fixtures/demo/critic_1.md");
const SNIPPETS: &str = include_str!("../fixtures/demo/snippets.json");

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct TableRow {
    pub statement: String,
    pub key_datapoints: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct IterationTable {
    pub iteration: u32,
    pub rows: Vec<TableRow>,
}

/// The ten per-iteration hypothesis tables shipped as fixtures.
pub fn iteration_tables() -> Vec<IterationTable> {
    serde_json::from_str(TABLES).expect("bundled tables parse")
}

/// Offline literature records used when no search cache is available.
pub fn offline_snippets() -> Vec<PaperSnippet> {
    serde_json::from_str(SNIPPETS).expect("bundled snippets parse")
}

fn table_for(tables: &[IterationTable], iteration: u32) -> &IterationTable {
    &tables[(iteration as usize - 1) % tables.len()]
}

fn hyp(id: String, row: &TableRow, source: AgentRole, iteration: u32) -> Hypothesis {
    Hypothesis {
        id,
        statement: row.statement.clone(),
        key_datapoints: row.key_datapoints.clone(),
        source,
        iteration,
    }
}

/// Rows dealt round-robin to the scientists; the last scientist also
/// repeats the first scientist's first hypothesis word for word.
pub fn scientist_outputs(table: &IterationTable, scientists: u32, iteration: u32) -> Vec<Vec<Hypothesis>> {
    let n = scientists.max(1) as usize;
    let mut out: Vec<Vec<Hypothesis>> = vec![Vec::new(); n];
    for (j, row) in table.rows.iter().enumerate() {
        let k = j % n;
        let id = format!("H_{}", ordinal_word(out[k].len() as u32 + 1));
        out[k].push(hyp(id, row, AgentRole::Scientist(k as u32 + 1), iteration));
    }
    if n > 1 {
        if let Some(first) = out[0].first().cloned() {
            let last = &mut out[n - 1];
            let id = format!("H_{}", ordinal_word(last.len() as u32 + 1));
            last.push(Hypothesis {
                id,
                source: AgentRole::Scientist(n as u32),
                ..first
            });
        }
    }
    out
}

fn analyst_text(table: &IterationTable, iteration: u32) -> String {
    if iteration == 1 {
        return ANALYST_1.to_string();
    }
    let mut text = format!(
        "Refined analysis for iteration {iteration}, revisiting the points raised in the critic feedback.\n\nKey Observations and Patterns:\n"
    );
    for (k, row) in table.rows.iter().enumerate() {
        text.push_str(&format!("\n{}. {}\n", k + 1, row.key_datapoints));
    }
    text
}

fn planner_text(table: &IterationTable, iteration: u32, scientists: u32) -> String {
    if iteration == 1 && scientists == 3 {
        return PLANNER_1.to_string();
    }
    let n = scientists.max(1) as usize;
    let mut plan = serde_json::Map::new();
    for k in 0..n {
        let assigned: Vec<&str> = table
            .rows
            .iter()
            .enumerate()
            .filter(|(j, _)| j % n == k)
            .map(|(_, r)| r.key_datapoints.as_str())
            .collect();
        let text = if assigned.is_empty() {
            "Review the compounds not covered by the other scientists.".to_string()
        } else {
            format!("Develop hypotheses from these observations: {}", assigned.join("; "))
        };
        plan.insert(format!("Agent{}_instructions", k + 1), json!(text));
    }
    serde_json::to_string_pretty(&plan).expect("plan serializes")
}

fn accumulated(table: &IterationTable, iteration: u32) -> Vec<Hypothesis> {
    table
        .rows
        .iter()
        .enumerate()
        .map(|(k, row)| {
            hyp(
                format!("H_final_{}", ordinal_word(k as u32 + 1)),
                row,
                AgentRole::Accumulator,
                iteration,
            )
        })
        .collect()
}

fn review_text(h: &Hypothesis) -> String {
    let topic: Vec<&str> = h.statement.split_whitespace().take(10).collect();
    format!(
        "Hypothesis {}:\nHere's my analysis of the search results regarding {}...\n\nKey Findings:\n1. The retrieved records discuss formation settings for the compounds named in the hypothesis.\n2. None of the retrieved records directly contradicts it; none tests it directly either.",
        h.id,
        topic.join(" ")
    )
}

fn critic_text(hyps: &[Hypothesis], iteration: u32) -> String {
    if iteration == 1 {
        return CRITIC_1.to_string();
    }
    let mut text = String::from("Structured critique of each hypothesis:\n");
    for (k, h) in hyps.iter().enumerate() {
        let body = match (k + iteration as usize) % 4 {
            0 => "**Critical Weaknesses:** the proposed mechanism is asserted without isotopic or kinetic evidence.",
            1 => "**Strengths:** specific and tied to named samples. Extend it with a testable prediction.",
            2 => "**Strengths:** consistent with the distribution in the data.",
            _ => "The cited samples do not single out this pattern. This hypothesis should be rejected in its current form.",
        };
        text.push_str(&format!("\n**{}:**\n\n{}\n", h.id, body));
    }
    text
}

/// Script covering every call of an `iterations`-long run.
pub fn demo_script(iterations: u32, scientists: u32) -> Script {
    let tables = iteration_tables();
    let mut script = Script::default();
    for i in 1..=iterations {
        let table = table_for(&tables, i);
        let one = |t: String| vec![t];
        script.push("data_analyst", Some(i), None, one(analyst_text(table, i)));
        script.push("planner", Some(i), None, one(planner_text(table, i, scientists)));
        for (k, hyps) in scientist_outputs(table, scientists, i).iter().enumerate() {
            script.push(
                AgentRole::Scientist(k as u32 + 1).key(),
                Some(i),
                None,
                one(hypotheses_to_json(hyps)),
            );
        }
        let acc = accumulated(table, i);
        script.push("accumulator", Some(i), None, one(hypotheses_to_json(&acc)));
        for (c, h) in acc.iter().enumerate() {
            script.push("literature_reviewer", Some(i), Some(c as u32), one(review_text(h)));
        }
        script.push("critic", Some(i), None, one(critic_text(&acc, i)));
    }
    script
}
