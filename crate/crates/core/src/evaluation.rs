//! Expert scorecards: ingest, novelty/plausibility classification and the
//! mean ± population-std aggregation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{word_index, Hypothesis};
use crate::gateway::summarize;
use crate::orchestrator::{collect_hypotheses, RunRecord};
use crate::specdata::{extract_claim_refs, verify_grounding, PresenceMatrix};

pub const CRITERIA: [&str; 6] = ["novelty", "consistency", "clarity", "empirical", "scope", "predictive"];
pub const MAX_SCORE: u8 = 10;
pub const NOVELTY_THRESHOLD: u8 = 5;
pub const PLAUSIBILITY_THRESHOLD: u8 = 8;

const HEADER: &str = "hypothesis_id,novelty,consistency,clarity,empirical,scope,predictive";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad header {found:?}; expected {HEADER}")]
    BadHeader { found: String },
    #[error("row {row}: {message}")]
    Malformed { row: usize, message: String },
    #[error("row {row}: {column} = {value:?} is not an integer")]
    NotInteger {
        row: usize,
        column: &'static str,
        value: String,
    },
    #[error("row {row}: {column} = {value} is outside 0..={MAX_SCORE}")]
    OutOfRange {
        row: usize,
        column: &'static str,
        value: i64,
    },
    #[error("row {row}: duplicate hypothesis id {id}")]
    Duplicate { row: usize, id: String },
    #[error("score for unknown hypothesis {0}")]
    UnknownHypothesis(String),
    #[error("hypothesis id {id} occurs in iterations {iterations:?}; qualify it as iter<N>.{id}")]
    Ambiguous { id: String, iterations: Vec<u32> },
    #[error("no scorecards to aggregate")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreCard {
    pub hypothesis_id: String,
    pub novelty: u8,
    pub consistency: u8,
    pub clarity: u8,
    pub empirical: u8,
    pub scope: u8,
    pub predictive: u8,
}

impl ScoreCard {
    /// Scores in `CRITERIA` order.
    pub fn new(hypothesis_id: impl Into<String>, scores: [u8; 6]) -> Result<Self, EvalError> {
        for (column, &value) in CRITERIA.iter().zip(&scores) {
            if value > MAX_SCORE {
                return Err(EvalError::OutOfRange {
                    row: 0,
                    column,
                    value: value.into(),
                });
            }
        }
        let [novelty, consistency, clarity, empirical, scope, predictive] = scores;
        Ok(ScoreCard {
            hypothesis_id: hypothesis_id.into(),
            novelty,
            consistency,
            clarity,
            empirical,
            scope,
            predictive,
        })
    }

    pub fn scores(&self) -> [u8; 6] {
        [
            self.novelty,
            self.consistency,
            self.clarity,
            self.empirical,
            self.scope,
            self.predictive,
        ]
    }

    /// Mean of the five criteria other than novelty.
    pub fn other_mean(&self) -> f64 {
        self.other_sum() as f64 / 5.0
    }

    fn other_sum(&self) -> u32 {
        self.scores()[1..].iter().map(|&s| u32::from(s)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Classification {
    pub novel: bool,
    pub plausible: bool,
}

impl Classification {
    pub fn label(&self) -> String {
        format!(
            "{}, {}",
            if self.novel { "novel" } else { "not novel" },
            if self.plausible { "plausible" } else { "not plausible" }
        )
    }
}

/// Plausibility compares the five-score sum with 5 × threshold, so the
/// boundary is exact.
pub fn classify(card: &ScoreCard) -> Classification {
    Classification {
        novel: card.novelty >= NOVELTY_THRESHOLD,
        plausible: card.other_sum() >= 5 * u32::from(PLAUSIBILITY_THRESHOLD),
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation (divides by n), single pass.
pub fn population_std(xs: &[f64]) -> f64 {
    let mut n = 0.0;
    let mut m = 0.0;
    let mut m2 = 0.0;
    for &x in xs {
        n += 1.0;
        let d = x - m;
        m += d / n;
        m2 += d * (x - m);
    }
    if n == 0.0 {
        0.0
    } else {
        (m2 / n).sqrt()
    }
}

/// Overall mean and spread from six criterion means.
pub fn overall_from_means(means: &[f64; 6]) -> (f64, f64) {
    (mean(means), population_std(means))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriterionStats {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub total: usize,
    pub plausible: usize,
    pub novel_and_plausible: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    /// In `CRITERIA` order.
    pub criteria: Vec<CriterionStats>,
    pub overall_mean: f64,
    pub overall_std: f64,
    pub counts: Counts,
}

impl AggregateReport {
    pub fn criterion_means(&self) -> [f64; 6] {
        std::array::from_fn(|i| self.criteria[i].mean)
    }

    /// Plain-text block printed by `eval`.
    pub fn render_text(&self) -> String {
        let mut out = format!("aggregate over {} scorecards\n", self.counts.total);
        let _ = writeln!(out, "{:<12} {:>6} {:>6}", "criterion", "mean", "std");
        for (name, s) in CRITERIA.iter().zip(&self.criteria) {
            let _ = writeln!(out, "{name:<12} {:>6.2} {:>6.2}", s.mean, s.std);
        }
        let _ = writeln!(
            out,
            "{:<12} {:>6.2} {:>6.2}",
            "overall", self.overall_mean, self.overall_std
        );
        let _ = writeln!(
            out,
            "counts: total {}, plausible {}, novel and plausible {}",
            self.counts.total, self.counts.plausible, self.counts.novel_and_plausible
        );
        out
    }
}

pub fn count(cards: &[ScoreCard]) -> Counts {
    let classes: Vec<Classification> = cards.iter().map(classify).collect();
    Counts {
        total: cards.len(),
        plausible: classes.iter().filter(|c| c.plausible).count(),
        novel_and_plausible: classes.iter().filter(|c| c.plausible && c.novel).count(),
    }
}

pub fn aggregate(cards: &[ScoreCard]) -> Result<AggregateReport, EvalError> {
    if cards.is_empty() {
        return Err(EvalError::Empty);
    }
    let criteria: Vec<CriterionStats> = (0..CRITERIA.len())
        .map(|i| {
            let xs: Vec<f64> = cards.iter().map(|c| f64::from(c.scores()[i])).collect();
            CriterionStats {
                mean: mean(&xs),
                std: population_std(&xs),
            }
        })
        .collect();
    let means: [f64; 6] = std::array::from_fn(|i| criteria[i].mean);
    let (overall_mean, overall_std) = overall_from_means(&means);
    Ok(AggregateReport {
        criteria,
        overall_mean,
        overall_std,
        counts: count(cards),
    })
}

fn parse_score(row: usize, column: &'static str, raw: &str) -> Result<u8, EvalError> {
    let value: i64 = raw.trim().parse().map_err(|_| EvalError::NotInteger {
        row,
        column,
        value: raw.to_string(),
    })?;
    if !(0..=i64::from(MAX_SCORE)).contains(&value) {
        return Err(EvalError::OutOfRange { row, column, value });
    }
    Ok(value as u8)
}

/// Parses score CSV text. Rows are numbered from 1 after the header.
pub fn parse_scores(text: &str) -> Result<Vec<ScoreCard>, EvalError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.trim_start_matches('\u{feff}').as_bytes());
    let header = reader
        .headers()
        .map_err(|e| EvalError::BadHeader { found: e.to_string() })?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if header != HEADER {
        return Err(EvalError::BadHeader { found: header });
    }
    let mut cards = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| EvalError::Malformed {
            row,
            message: e.to_string(),
        })?;
        let id = record[0].to_string();
        if id.is_empty() {
            return Err(EvalError::Malformed {
                row,
                message: "empty hypothesis_id".into(),
            });
        }
        let mut scores = [0u8; 6];
        for (k, column) in CRITERIA.iter().enumerate() {
            scores[k] = parse_score(row, column, &record[k + 1])?;
        }
        if !seen.insert(id.clone()) {
            return Err(EvalError::Duplicate { row, id });
        }
        cards.push(ScoreCard::new(id, scores)?);
    }
    Ok(cards)
}

pub fn ingest_scores(path: &Path) -> Result<Vec<ScoreCard>, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_scores(&text)
}

/// `iter<N>.<id>` naming one iteration's hypothesis.
pub fn qualified_id(h: &Hypothesis) -> String {
    format!("iter{}.{}", h.iteration, h.id)
}

/// Finds the hypothesis a score id names: either qualified, or a bare id
/// that occurs in exactly one iteration.
pub fn resolve<'a>(id: &str, hypotheses: &'a [Hypothesis]) -> Result<&'a Hypothesis, EvalError> {
    if let Some(h) = hypotheses.iter().find(|h| qualified_id(h) == id) {
        return Ok(h);
    }
    let matches: Vec<&Hypothesis> = hypotheses.iter().filter(|h| h.id == id).collect();
    match matches.as_slice() {
        [one] => Ok(one),
        [] => Err(EvalError::UnknownHypothesis(id.to_string())),
        many => Err(EvalError::Ambiguous {
            id: id.to_string(),
            iterations: many.iter().map(|h| h.iteration).collect(),
        }),
    }
}

/// Cards keyed by the qualified id of the hypothesis each one scores.
pub fn match_cards<'a>(
    cards: &'a [ScoreCard],
    hypotheses: &[Hypothesis],
) -> Result<BTreeMap<String, &'a ScoreCard>, EvalError> {
    let mut out = BTreeMap::new();
    for card in cards {
        let h = resolve(&card.hypothesis_id, hypotheses)?;
        if out.insert(qualified_id(h), card).is_some() {
            return Err(EvalError::Duplicate {
                row: 0,
                id: qualified_id(h),
            });
        }
    }
    Ok(out)
}

fn sort_key(h: &Hypothesis) -> (u32, u32, String) {
    (h.iteration, word_index(&h.id).unwrap_or(u32::MAX), h.id.clone())
}

/// One line per scored hypothesis in (iteration, position) order, then the
/// aggregate block.
pub fn eval_output(hypotheses: &[Hypothesis], cards: &[ScoreCard]) -> Result<String, EvalError> {
    let matched = match_cards(cards, hypotheses)?;
    let mut scored: Vec<&Hypothesis> = hypotheses
        .iter()
        .filter(|h| matched.contains_key(&qualified_id(h)))
        .collect();
    scored.sort_by_key(|h| sort_key(h));
    let mut out = String::new();
    for h in scored {
        let card = matched[&qualified_id(h)];
        let _ = writeln!(out, "{}: {}", qualified_id(h), classify(card).label());
    }
    if !cards.is_empty() {
        out.push('\n');
        out.push_str(&aggregate(cards)?.render_text());
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportCounts {
    pub total: usize,
    pub scored: usize,
    pub plausible: usize,
    pub novel_and_plausible: usize,
}

pub fn report_counts(run: &RunRecord, cards: &[ScoreCard]) -> ReportCounts {
    let c = count(cards);
    ReportCounts {
        total: collect_hypotheses(run).len(),
        scored: c.total,
        plausible: c.plausible,
        novel_and_plausible: c.novel_and_plausible,
    }
}

fn cell(text: &str) -> String {
    text.replace('|', "\\|").replace('\n', " ")
}

/// Markdown report: per-hypothesis table, aggregate and cost sections.
pub fn render_report(run: &RunRecord, cards: &[ScoreCard], matrix: &PresenceMatrix) -> Result<String, EvalError> {
    let mut hyps = collect_hypotheses(run);
    hyps.sort_by_key(sort_key);
    let matched = match_cards(cards, &hyps)?;
    let counts = report_counts(run, cards);

    let mut out = format!("# Run {}\n\n", run.run_id);
    let _ = writeln!(
        out,
        "Hypotheses: {} total, {} scored, {} plausible, {} novel and plausible.\n",
        counts.total, counts.scored, counts.plausible, counts.novel_and_plausible
    );
    out.push_str("## Hypotheses\n\n");
    out.push_str("| Id | Statement | Nov | Con | Cla | Emp | Sco | Pre | Classification | Grounding |\n");
    out.push_str("|---|---|---|---|---|---|---|---|---|---|\n");
    for h in &hyps {
        let grounding = verify_grounding(matrix, &extract_claim_refs(&h.key_datapoints, matrix)).summary();
        let (scores, label) = match matched.get(&qualified_id(h)) {
            Some(card) => (
                card.scores().iter().map(|s| s.to_string()).collect::<Vec<_>>(),
                classify(card).label(),
            ),
            None => (vec!["-".to_string(); 6], "unscored".to_string()),
        };
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} |",
            qualified_id(h),
            cell(&h.statement),
            scores.join(" | "),
            label,
            grounding
        );
    }

    out.push_str("\n## Aggregate\n\n");
    match aggregate(cards) {
        Ok(agg) => {
            out.push_str("| Criterion | Mean | Std |\n|---|---|---|\n");
            for (name, s) in CRITERIA.iter().zip(&agg.criteria) {
                let _ = writeln!(out, "| {name} | {:.2} | {:.2} |", s.mean, s.std);
            }
            let _ = writeln!(out, "| overall | {:.2} | {:.2} |", agg.overall_mean, agg.overall_std);
        }
        Err(EvalError::Empty) => out.push_str("No scorecards.\n"),
        Err(e) => return Err(e),
    }

    let exchanges: Vec<_> = run.exchanges().cloned().collect();
    let ledger = summarize(&exchanges);
    out.push_str("\n## Cost\n\n");
    let _ = writeln!(
        out,
        "Total {} over {} calls ({} input tokens, {} output tokens).\n",
        ledger.total, ledger.calls, ledger.input_tokens, ledger.output_tokens
    );
    out.push_str("| Role | Cost |\n|---|---|\n");
    for (role, cost) in &ledger.by_role {
        let _ = writeln!(out, "| {role} | {cost} |");
    }
    Ok(out)
}
