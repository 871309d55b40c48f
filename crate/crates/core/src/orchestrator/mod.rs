//! The analyst → planner → scientists → accumulator → literature → critic
//! loop, with every stage persisted before the next one starts.

mod setup;
mod store;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{
    check_verbatim, hypotheses_to_json, parse_critic, parse_hypotheses, parse_planner_output, prefilter_duplicates,
    render_prompt, renumber_final, AgentError, AgentRole, Bindings, CriticReview, Hypothesis, PlannerPlan,
    PromptTemplate, Slot, DEFAULT_DUP_THRESHOLD,
};
use crate::context::{assemble_context, load_documents, ContextError};
use crate::gateway::{
    ledger_total, read_jsonl, write_jsonl, ChatExchange, ChatRequest, Gateway, GatewayError, ProviderProfile, Usd,
};
use crate::scholar::{build_query, LiteratureSource, PaperSnippet, ScholarError, MAX_SNIPPETS};
use crate::specdata::{parse_presence_table, PresenceMatrix};

pub use setup::{build_gateway, build_literature, demo_provider, ScholarMode, ScholarSettings};
pub use store::{
    write_atomic, IterationEntry, LockError, Manifest, RunLayout, RunLock, RunStatus, StageEntry, CONFIG_FILE,
    EXCHANGES_FILE, HYPOTHESES_FILE, MANIFEST_FILE,
};

pub const DEFAULT_ITERATIONS: u32 = 10;
pub const DEFAULT_SCIENTISTS: u32 = 3;
pub const DEFAULT_MAX_REPROMPTS: u32 = 2;

pub const STAGES: [&str; 6] = [
    "analyst",
    "planner",
    "scientists",
    "accumulator",
    "literature",
    "critic",
];

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("data file {path}: {reason}")]
    Data { path: PathBuf, reason: String },
    #[error(transparent)]
    Context(#[from] ContextError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Scholar(#[from] ScholarError),
    #[error(transparent)]
    Lock(#[from] LockError),
    #[error("run directory {0} already exists")]
    RunExists(PathBuf),
    #[error("corrupt manifest {path}: {reason}")]
    CorruptManifest { path: PathBuf, reason: String },
    #[error("iteration {iteration} is marked complete but {path} is missing or unreadable")]
    Integrity { iteration: u32, path: PathBuf },
    #[error("iteration {iteration} failed at stage {stage}: {message}")]
    Stage {
        iteration: u32,
        stage: String,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

type Result<T, E = OrchestratorError> = std::result::Result<T, E>;

fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> OrchestratorError + '_ {
    move |source| OrchestratorError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn default_iterations() -> u32 {
    DEFAULT_ITERATIONS
}

fn default_scientists() -> u32 {
    DEFAULT_SCIENTISTS
}

fn default_snippets() -> usize {
    MAX_SNIPPETS
}

fn default_dup_threshold() -> f64 {
    DEFAULT_DUP_THRESHOLD
}

fn default_reprompts() -> u32 {
    DEFAULT_MAX_REPROMPTS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default = "default_iterations")]
    pub iterations: u32,
    #[serde(default = "default_scientists")]
    pub scientist_count: u32,
    #[serde(default = "default_snippets")]
    pub snippet_limit: usize,
    /// Seeds the scripted backend's simulated latency.
    #[serde(default)]
    pub seed: u64,
    pub provider_id: String,
    pub provider: ProviderProfile,
    pub data_path: PathBuf,
    #[serde(default)]
    pub context_paths: Vec<PathBuf>,
    #[serde(default)]
    pub user_instructions: String,
    /// Parent directory; each run gets `<output_dir>/<run_id>`.
    pub output_dir: PathBuf,
    #[serde(default = "default_dup_threshold")]
    pub dup_threshold: f64,
    #[serde(default = "default_reprompts")]
    pub max_reprompts: u32,
    #[serde(default)]
    pub scholar: ScholarSettings,
}

impl RunConfig {
    /// Defaults everywhere except the three things a run cannot guess.
    pub fn new(
        provider_id: impl Into<String>,
        provider: ProviderProfile,
        data_path: impl Into<PathBuf>,
        output_dir: impl Into<PathBuf>,
    ) -> Self {
        RunConfig {
            iterations: DEFAULT_ITERATIONS,
            scientist_count: DEFAULT_SCIENTISTS,
            snippet_limit: MAX_SNIPPETS,
            seed: 0,
            provider_id: provider_id.into(),
            provider,
            data_path: data_path.into(),
            context_paths: Vec::new(),
            user_instructions: String::new(),
            output_dir: output_dir.into(),
            dup_threshold: DEFAULT_DUP_THRESHOLD,
            max_reprompts: DEFAULT_MAX_REPROMPTS,
            scholar: ScholarSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(OrchestratorError::Config(m));
        if self.iterations == 0 {
            return bad("iterations must be positive".into());
        }
        if self.scientist_count == 0 {
            return bad("scientist_count must be positive".into());
        }
        if self.snippet_limit == 0 || self.snippet_limit > MAX_SNIPPETS {
            return bad(format!("snippet_limit must be between 1 and {MAX_SNIPPETS}"));
        }
        if !(self.dup_threshold > 0.0 && self.dup_threshold <= 1.0) {
            return bad("dup_threshold must be in (0, 1]".into());
        }
        if self.provider_id.trim().is_empty() {
            return bad("provider_id is empty".into());
        }
        if !self.data_path.is_file() {
            return bad(format!("data file {} does not exist", self.data_path.display()));
        }
        for p in &self.context_paths {
            if !p.is_file() {
                return bad(format!("context file {} does not exist", p.display()));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_at(path))?;
        serde_json::from_str(&text).map_err(|e| OrchestratorError::Config(format!("{}: {e}", path.display())))
    }
}

/// Search results and the reviewer's digest for one hypothesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiteratureDigest {
    pub hypothesis_id: String,
    pub query: String,
    pub snippets: Vec<PaperSnippet>,
    pub fetched_at: DateTime<Utc>,
    pub from_cache: bool,
    pub review: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct AccumulatedFile {
    hypothesis: Vec<Hypothesis>,
    prefilter_dropped: Vec<Hypothesis>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub index: u32,
    pub analyst_text: String,
    pub plan: PlannerPlan,
    pub scientist_outputs: Vec<Vec<Hypothesis>>,
    pub prefilter_dropped: Vec<Hypothesis>,
    pub accumulated: Vec<Hypothesis>,
    pub literature: Vec<LiteratureDigest>,
    pub critic: CriticReview,
    pub exchanges: Vec<ChatExchange>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run_id: String,
    pub run_dir: PathBuf,
    pub config: RunConfig,
    pub iterations: Vec<IterationRecord>,
    pub total_cost: Usd,
    pub status: RunStatus,
}

impl RunRecord {
    pub fn exchanges(&self) -> impl Iterator<Item = &ChatExchange> {
        self.iterations.iter().flat_map(|i| i.exchanges.iter())
    }

    fn recompute_cost(&mut self) {
        let all: Vec<ChatExchange> = self.exchanges().cloned().collect();
        self.total_cost = ledger_total(&all);
    }
}

/// Accumulated hypotheses of every iteration, in order, without
/// cross-iteration deduplication.
pub fn collect_hypotheses(run: &RunRecord) -> Vec<Hypothesis> {
    run.iterations
        .iter()
        .flat_map(|i| i.accumulated.iter().cloned())
        .collect()
}

/// UTC timestamp plus a short random suffix.
pub fn new_run_id() -> String {
    let suffix: u32 = rand::thread_rng().gen_range(0..0x100_0000);
    format!("{}-{suffix:06x}", Utc::now().format("%Y%m%dT%H%M%SZ"))
}

#[derive(Debug, Clone)]
struct RequestFactory {
    provider_id: String,
    max_output_tokens: Option<u32>,
}

impl RequestFactory {
    fn make(&self, role: AgentRole, prompt: String, iteration: u32, call: u32) -> Result<ChatRequest, String> {
        let mut req = ChatRequest::new(role, prompt, self.provider_id.clone(), iteration)
            .map_err(|e| e.to_string())?
            .with_call_index(call);
        if let Some(max) = self.max_output_tokens {
            req.max_output_tokens = max;
        }
        Ok(req)
    }
}

/// One call plus up to `reprompts` retries when the reply fails to parse;
/// each retry resends the prompt with a corrective note appended.
async fn ask<T, F>(
    gateway: Arc<Gateway>,
    request: ChatRequest,
    reprompts: u32,
    parse: F,
) -> (Result<T, String>, Vec<ChatExchange>)
where
    F: Fn(&str) -> Result<T, AgentError>,
{
    let base = request.system_prompt.clone();
    let mut req = request;
    let mut exchanges = Vec::new();
    let mut attempt = 0;
    loop {
        let ex = match gateway.complete(req.clone()).await {
            Ok(ex) => ex,
            Err(e) => return (Err(e.to_string()), exchanges),
        };
        let parsed = parse(&ex.response_text);
        exchanges.push(ex);
        match parsed {
            Ok(v) => return (Ok(v), exchanges),
            Err(e) if attempt < reprompts => {
                attempt += 1;
                req.system_prompt = format!("{base}{}", crate::agents::json_reminder(&e.to_string()));
            }
            Err(e) => return (Err(format!("{e} (after {} attempts)", attempt + 1)), exchanges),
        }
    }
}

fn plain_text(text: &str) -> Result<String, AgentError> {
    Ok(text.to_string())
}

fn bind(pairs: &[(Slot, &str)]) -> Bindings {
    pairs
        .iter()
        .map(|(s, v)| (s.name().to_string(), v.to_string()))
        .collect()
}

fn render(role: AgentRole, pairs: &[(Slot, &str)]) -> Result<String, String> {
    render_prompt(&PromptTemplate::for_role(role), &bind(pairs)).map_err(|e| e.to_string())
}

fn literature_markdown(digests: &[LiteratureDigest]) -> String {
    digests
        .iter()
        .map(|d| format!("## {}\n\n{}\n", d.hypothesis_id, d.review.trim_end()))
        .collect::<Vec<_>>()
        .join("\n")
}

fn scientist_file(k: u32) -> String {
    format!("scientist_{k}.json")
}

pub struct Orchestrator {
    config: RunConfig,
    gateway: Arc<Gateway>,
    literature: Arc<dyn LiteratureSource>,
    requests: RequestFactory,
    matrix: PresenceMatrix,
    input_data: String,
    papers: String,
}

struct StageFailure {
    stage: &'static str,
    message: String,
}

impl StageFailure {
    fn new(stage: &'static str, message: impl Into<String>) -> Self {
        StageFailure {
            stage,
            message: message.into(),
        }
    }
}

/// Per-iteration write state: the exchanges so far and the manifest entry.
struct IterationWriter<'a> {
    layout: &'a RunLayout,
    manifest: &'a mut Manifest,
    index: u32,
    exchanges: Vec<ChatExchange>,
}

impl IterationWriter<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.layout.file(self.index, name)
    }

    fn entry(&mut self) -> &mut IterationEntry {
        self.manifest.iterations.last_mut().expect("iteration entry pushed")
    }

    fn write_text(&self, name: &str, text: &str) -> Result<()> {
        let path = self.path(name);
        store::write_text(&path, text).map_err(io_at(&path))
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let path = self.path(name);
        store::write_json(&path, value).map_err(io_at(&path))
    }

    fn flush_exchanges(&mut self) -> Result<()> {
        let path = self.path(EXCHANGES_FILE);
        write_jsonl(&path, &self.exchanges).map_err(io_at(&path))?;
        let cost = ledger_total(&self.exchanges);
        self.entry().cost = cost;
        Ok(())
    }

    fn finish_stage(&mut self, name: &str, files: Vec<String>) -> Result<()> {
        self.flush_exchanges()?;
        let seq = self.manifest.next_seq();
        let iteration = self.entry().index;
        tracing::info!(iteration, stage = name, seq, "stage complete");
        self.entry().stages.push(StageEntry {
            name: name.to_string(),
            seq,
            files,
        });
        let path = self.layout.manifest();
        self.manifest.save(&path).map_err(io_at(&path))
    }

    fn fail(&mut self, failure: StageFailure) -> OrchestratorError {
        if let Err(e) = self.flush_exchanges() {
            return e;
        }
        let entry = self.entry();
        entry.status = RunStatus::Failed;
        entry.failed_stage = Some(failure.stage.to_string());
        entry.error = Some(failure.message.clone());
        OrchestratorError::Stage {
            iteration: self.index,
            stage: failure.stage.to_string(),
            message: failure.message,
        }
    }
}

impl Orchestrator {
    /// Builds the provider and literature source from the configuration.
    pub fn from_config(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let gateway = build_gateway(
            &config.provider_id,
            &config.provider,
            config.seed,
            config.iterations,
            config.scientist_count,
        )?;
        let literature = build_literature(&config.scholar)?;
        Self::with_services(config, gateway, literature)
    }

    pub fn with_services(config: RunConfig, gateway: Gateway, literature: Arc<dyn LiteratureSource>) -> Result<Self> {
        config.validate()?;
        let data_err = |reason: String| OrchestratorError::Data {
            path: config.data_path.clone(),
            reason,
        };
        let raw = fs::read_to_string(&config.data_path).map_err(|e| data_err(e.to_string()))?;
        let matrix = parse_presence_table(&raw).map_err(|e| data_err(e.to_string()))?;
        let mut input_data = raw.trim_end().to_string();
        if !config.user_instructions.trim().is_empty() {
            input_data.push_str("\n\nUser Instructions:\n");
            input_data.push_str(config.user_instructions.trim());
        }
        let bundle = assemble_context(load_documents(&config.context_paths)?, config.provider.context_budget)?;
        if bundle.empty_warning {
            tracing::warn!("no context documents supplied; hypotheses may come out generic");
        }
        Ok(Orchestrator {
            requests: RequestFactory {
                provider_id: config.provider_id.clone(),
                max_output_tokens: config.provider.max_output_tokens,
            },
            gateway: Arc::new(gateway),
            literature,
            matrix,
            input_data,
            papers: bundle.render(),
            config,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn matrix(&self) -> &PresenceMatrix {
        &self.matrix
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub async fn run(&self) -> Result<RunRecord> {
        self.run_with_id(&new_run_id()).await
    }

    pub async fn run_with_id(&self, run_id: &str) -> Result<RunRecord> {
        self.run_until(run_id, self.config.iterations).await
    }

    /// Starts a new run and stops after `stop_after` iterations; the run is
    /// left in progress when that is short of the configured count.
    pub async fn run_until(&self, run_id: &str, stop_after: u32) -> Result<RunRecord> {
        let root = self.config.output_dir.join(run_id);
        if root.exists() {
            return Err(OrchestratorError::RunExists(root));
        }
        fs::create_dir_all(&root).map_err(io_at(&root))?;
        let layout = RunLayout::new(&root);
        let _lock = RunLock::acquire(&root)?;
        let config_path = layout.config();
        store::write_json(&config_path, &self.config).map_err(io_at(&config_path))?;
        let mut manifest = Manifest::new(run_id, self.config.iterations);
        let manifest_path = layout.manifest();
        manifest.save(&manifest_path).map_err(io_at(&manifest_path))?;
        let record = RunRecord {
            run_id: run_id.to_string(),
            run_dir: root.clone(),
            config: self.config.clone(),
            iterations: Vec::new(),
            total_cost: Usd::ZERO,
            status: RunStatus::InProgress,
        };
        self.drive(&layout, &mut manifest, record, stop_after).await
    }

    /// Continues `run_dir` from its first incomplete iteration. A completed
    /// run is loaded and returned unchanged.
    pub async fn resume(&self, run_dir: &Path) -> Result<RunRecord> {
        self.resume_until(run_dir, self.config.iterations).await
    }

    pub async fn resume_until(&self, run_dir: &Path, stop_after: u32) -> Result<RunRecord> {
        let layout = RunLayout::new(run_dir);
        let mut manifest = load_manifest(&layout)?;
        let complete = manifest.status == RunStatus::Completed
            && manifest.completed().count() as u32 >= manifest.iterations_planned;
        if complete {
            return load_run(run_dir);
        }
        let _lock = RunLock::acquire(run_dir)?;
        manifest.iterations.retain(|e| e.status == RunStatus::Completed);
        let record = load_record(&layout, &manifest, self.config.clone())?;
        for stale in record.iterations.len() as u32 + 1..=manifest.iterations_planned {
            let dir = layout.iteration_dir(stale);
            if dir.exists() {
                fs::remove_dir_all(&dir).map_err(io_at(&dir))?;
            }
        }
        manifest.status = RunStatus::InProgress;
        manifest.failure = None;
        self.drive(&layout, &mut manifest, record, stop_after).await
    }

    async fn drive(
        &self,
        layout: &RunLayout,
        manifest: &mut Manifest,
        mut record: RunRecord,
        stop_after: u32,
    ) -> Result<RunRecord> {
        let planned = manifest.iterations_planned;
        let stop_after = stop_after.min(planned);
        let manifest_path = layout.manifest();
        let mut prior = record
            .iterations
            .last()
            .map(|i| i.critic.text.clone())
            .unwrap_or_default();
        let first = record.iterations.len() as u32 + 1;
        for index in first..=stop_after {
            match self.run_iteration(layout, manifest, index, &prior).await {
                Ok(it) => {
                    prior = it.critic.text.clone();
                    record.iterations.push(it);
                    record.recompute_cost();
                    write_hypotheses(layout, &record)?;
                    manifest.total_cost = record.total_cost;
                    manifest.save(&manifest_path).map_err(io_at(&manifest_path))?;
                }
                Err(e) => {
                    manifest.status = RunStatus::Failed;
                    manifest.failure = Some(e.to_string());
                    manifest.save(&manifest_path).map_err(io_at(&manifest_path))?;
                    return Err(e);
                }
            }
        }
        if record.iterations.len() as u32 >= planned {
            manifest.status = RunStatus::Completed;
        }
        manifest.save(&manifest_path).map_err(io_at(&manifest_path))?;
        record.status = manifest.status;
        Ok(record)
    }

    /// Runs one iteration. `prior_critique` is empty for the first.
    async fn run_iteration(
        &self,
        layout: &RunLayout,
        manifest: &mut Manifest,
        index: u32,
        prior_critique: &str,
    ) -> Result<IterationRecord> {
        let dir = layout.iteration_dir(index);
        fs::create_dir_all(&dir).map_err(io_at(&dir))?;
        manifest.iterations.push(IterationEntry::new(index));
        let mut w = IterationWriter {
            layout,
            manifest,
            index,
            exchanges: Vec::new(),
        };
        match self.stages(&mut w, prior_critique).await {
            Ok(Ok(record)) => {
                let count = record.accumulated.len();
                let entry = w.entry();
                entry.status = RunStatus::Completed;
                entry.hypothesis_count = count;
                Ok(record)
            }
            Ok(Err(failure)) => Err(w.fail(failure)),
            Err(e) => Err(e),
        }
    }

    /// Outer error: persistence failed. Inner error: an agent stage failed.
    async fn stages(
        &self,
        w: &mut IterationWriter<'_>,
        prior_critique: &str,
    ) -> Result<Result<IterationRecord, StageFailure>> {
        let index = w.index;
        let n = self.config.scientist_count;
        let reprompts = self.config.max_reprompts;
        let papers = self.papers.as_str();
        let data = self.input_data.as_str();

        macro_rules! stage_try {
            ($stage:expr, $e:expr) => {
                match $e {
                    Ok(v) => v,
                    Err(m) => return Ok(Err(StageFailure::new($stage, m))),
                }
            };
        }

        // analyst
        let prompt = stage_try!(
            "analyst",
            render(
                AgentRole::DataAnalyst,
                &[
                    (Slot::SelectedPapers, papers),
                    (Slot::InputData, data),
                    (Slot::CriticFeedback, prior_critique),
                ],
            )
        );
        let req = stage_try!("analyst", self.requests.make(AgentRole::DataAnalyst, prompt, index, 0));
        let (res, ex) = ask(self.gateway.clone(), req, reprompts, plain_text).await;
        w.exchanges.extend(ex);
        let analyst_text = stage_try!("analyst", res);
        w.write_text("analyst.md", &analyst_text)?;
        w.finish_stage("analyst", vec!["analyst.md".into()])?;

        // planner
        let prompt = stage_try!(
            "planner",
            render(
                AgentRole::Planner,
                &[(Slot::InputData, data), (Slot::DataAnalysis, &analyst_text)]
            )
        );
        let req = stage_try!("planner", self.requests.make(AgentRole::Planner, prompt, index, 0));
        let (res, ex) = ask(self.gateway.clone(), req, reprompts, move |t| {
            parse_planner_output(t, n)
        })
        .await;
        w.exchanges.extend(ex);
        let plan = stage_try!("planner", res);
        w.write_json("planner.json", &plan)?;
        w.finish_stage("planner", vec!["planner.json".into()])?;

        // scientists, joined in agent order
        let mut tasks = Vec::new();
        for k in 1..=n {
            let role = AgentRole::Scientist(k);
            let id = k.to_string();
            let instruction = plan.instruction(k).unwrap_or_default();
            let prompt = stage_try!(
                "scientists",
                render(
                    role,
                    &[
                        (Slot::AgentId, &id),
                        (Slot::AgentInstruction, instruction),
                        (Slot::SelectedPapers, papers),
                        (Slot::InputData, data),
                    ],
                )
            );
            let req = stage_try!("scientists", self.requests.make(role, prompt, index, 0));
            let gateway = self.gateway.clone();
            tasks.push(tokio::spawn(ask(gateway, req, reprompts, move |t| {
                parse_hypotheses(t, role, index)
            })));
        }
        let mut scientist_outputs = Vec::new();
        let mut files = Vec::new();
        let mut failure = None;
        for (k, task) in (1..=n).zip(tasks) {
            let (res, ex) = task
                .await
                .unwrap_or_else(|e| (Err(format!("task aborted: {e}")), Vec::new()));
            w.exchanges.extend(ex);
            match res {
                Ok(hyps) => {
                    w.write_json(&scientist_file(k), &hyps)?;
                    files.push(scientist_file(k));
                    scientist_outputs.push(hyps);
                }
                Err(m) => {
                    failure.get_or_insert(format!("scientist_{k}: {m}"));
                }
            }
        }
        if let Some(m) = failure {
            return Ok(Err(StageFailure::new("scientists", m)));
        }
        w.finish_stage("scientists", files)?;

        // duplicate pre-filter, then accumulator
        let all: Vec<Hypothesis> = scientist_outputs.concat();
        let (kept, dropped) = prefilter_duplicates(&all, self.config.dup_threshold);
        let blocks: Vec<String> = (1..=n)
            .filter_map(|k| {
                let mine: Vec<Hypothesis> = kept
                    .iter()
                    .filter(|h| h.source == AgentRole::Scientist(k))
                    .cloned()
                    .collect();
                (!mine.is_empty()).then(|| format!("Scientist {k}:\n{}", hypotheses_to_json(&mine)))
            })
            .collect();
        let listing = blocks.join("\n\n");
        let prompt = stage_try!(
            "accumulator",
            render(AgentRole::Accumulator, &[(Slot::Hypotheses, &listing)])
        );
        let req = stage_try!(
            "accumulator",
            self.requests.make(AgentRole::Accumulator, prompt, index, 0)
        );
        let union = all.clone();
        let (res, ex) = ask(self.gateway.clone(), req, reprompts, move |t| {
            let parsed = parse_hypotheses(t, AgentRole::Accumulator, index)?;
            check_verbatim(&parsed, &union)?;
            Ok(parsed)
        })
        .await;
        w.exchanges.extend(ex);
        let mut accumulated = renumber_final(&stage_try!("accumulator", res));
        for h in &mut accumulated {
            if let Some(origin) = all.iter().find(|s| s.statement == h.statement) {
                h.source = origin.source;
            }
        }
        w.write_json(
            "accumulated.json",
            &AccumulatedFile {
                hypothesis: accumulated.clone(),
                prefilter_dropped: dropped.clone(),
            },
        )?;
        w.finish_stage("accumulator", vec!["accumulated.json".into()])?;

        // literature search and review per hypothesis
        let mut tasks = Vec::new();
        for (c, h) in accumulated.iter().enumerate() {
            let gateway = self.gateway.clone();
            let source = self.literature.clone();
            let requests = self.requests.clone();
            let limit = self.config.snippet_limit;
            let h = h.clone();
            tasks.push(tokio::spawn(async move {
                let query = build_query(&h);
                let found = match source.search(&query, limit).await {
                    Ok(r) => r,
                    Err(e) => return (Err(format!("search for {}: {e}", h.id)), Vec::new()),
                };
                let topic = format!("{}: {}", h.id, h.statement);
                let results = found.render();
                let prompt = match render(
                    AgentRole::LiteratureReviewer,
                    &[(Slot::Hypotheses, &topic), (Slot::SearchResults, &results)],
                ) {
                    Ok(p) => p,
                    Err(m) => return (Err(m), Vec::new()),
                };
                let req = match requests.make(AgentRole::LiteratureReviewer, prompt, index, c as u32) {
                    Ok(r) => r,
                    Err(m) => return (Err(m), Vec::new()),
                };
                let (res, ex) = ask(gateway, req, reprompts, plain_text).await;
                let digest = res.map(|review| LiteratureDigest {
                    hypothesis_id: h.id.clone(),
                    query,
                    snippets: found.snippets,
                    fetched_at: found.fetched_at,
                    from_cache: found.from_cache,
                    review,
                });
                (digest, ex)
            }));
        }
        let mut literature = Vec::new();
        let mut failure = None;
        for task in tasks {
            let (res, ex) = task
                .await
                .unwrap_or_else(|e| (Err(format!("task aborted: {e}")), Vec::new()));
            w.exchanges.extend(ex);
            match res {
                Ok(d) => literature.push(d),
                Err(m) => {
                    failure.get_or_insert(m);
                }
            }
        }
        if let Some(m) = failure {
            return Ok(Err(StageFailure::new("literature", m)));
        }
        let review_text = literature_markdown(&literature);
        w.write_text("literature.md", &review_text)?;
        w.write_json("literature.json", &literature)?;
        w.finish_stage("literature", vec!["literature.md".into(), "literature.json".into()])?;

        // critic
        let listing = hypotheses_to_json(&accumulated);
        let prompt = stage_try!(
            "critic",
            render(
                AgentRole::Critic,
                &[
                    (Slot::SelectedPapers, papers),
                    (Slot::InputData, data),
                    (Slot::LiteratureReview, &review_text),
                    (Slot::Hypotheses, &listing),
                ],
            )
        );
        let req = stage_try!("critic", self.requests.make(AgentRole::Critic, prompt, index, 0));
        let (res, ex) = ask(self.gateway.clone(), req, reprompts, plain_text).await;
        w.exchanges.extend(ex);
        let critic_text = stage_try!("critic", res);
        w.write_text("critic.md", &critic_text)?;
        w.finish_stage("critic", vec!["critic.md".into()])?;

        let ids: Vec<String> = accumulated.iter().map(|h| h.id.clone()).collect();
        Ok(Ok(IterationRecord {
            index,
            analyst_text,
            plan,
            scientist_outputs,
            prefilter_dropped: dropped,
            accumulated,
            literature,
            critic: parse_critic(&critic_text, &ids),
            exchanges: std::mem::take(&mut w.exchanges),
        }))
    }
}

fn write_hypotheses(layout: &RunLayout, record: &RunRecord) -> Result<()> {
    let mut text = String::new();
    for h in collect_hypotheses(record) {
        text.push_str(&serde_json::to_string(&h).expect("hypothesis serializes"));
        text.push('\n');
    }
    let path = layout.hypotheses();
    write_atomic(&path, text.as_bytes()).map_err(io_at(&path))
}

fn load_manifest(layout: &RunLayout) -> Result<Manifest> {
    let path = layout.manifest();
    Manifest::load(&path).map_err(|e| OrchestratorError::CorruptManifest {
        path: path.clone(),
        reason: e.to_string(),
    })
}

fn read_required(layout: &RunLayout, index: u32, name: &str) -> Result<String> {
    let path = layout.file(index, name);
    fs::read_to_string(&path).map_err(|_| OrchestratorError::Integrity { iteration: index, path })
}

fn parse_required<T: for<'de> Deserialize<'de>>(layout: &RunLayout, index: u32, name: &str) -> Result<T> {
    let text = read_required(layout, index, name)?;
    serde_json::from_str(&text).map_err(|_| OrchestratorError::Integrity {
        iteration: index,
        path: layout.file(index, name),
    })
}

fn trim_newline(mut text: String) -> String {
    if text.ends_with('\n') {
        text.pop();
    }
    text
}

fn load_iteration(layout: &RunLayout, entry: &IterationEntry, scientists: u32) -> Result<IterationRecord> {
    let index = entry.index;
    for name in entry.required_files() {
        let path = layout.file(index, &name);
        if !path.is_file() {
            return Err(OrchestratorError::Integrity { iteration: index, path });
        }
    }
    let scientist_outputs = (1..=scientists)
        .map(|k| parse_required(layout, index, &scientist_file(k)))
        .collect::<Result<Vec<Vec<Hypothesis>>>>()?;
    let acc: AccumulatedFile = parse_required(layout, index, "accumulated.json")?;
    let critic_text = trim_newline(read_required(layout, index, "critic.md")?);
    let ids: Vec<String> = acc.hypothesis.iter().map(|h| h.id.clone()).collect();
    let exchanges_path = layout.file(index, EXCHANGES_FILE);
    let exchanges = read_jsonl(&exchanges_path).map_err(|_| OrchestratorError::Integrity {
        iteration: index,
        path: exchanges_path.clone(),
    })?;
    Ok(IterationRecord {
        index,
        analyst_text: trim_newline(read_required(layout, index, "analyst.md")?),
        plan: parse_required(layout, index, "planner.json")?,
        scientist_outputs,
        prefilter_dropped: acc.prefilter_dropped,
        accumulated: acc.hypothesis,
        literature: parse_required(layout, index, "literature.json")?,
        critic: parse_critic(&critic_text, &ids),
        exchanges,
    })
}

fn load_record(layout: &RunLayout, manifest: &Manifest, config: RunConfig) -> Result<RunRecord> {
    let mut entries: Vec<&IterationEntry> = manifest.completed().collect();
    entries.sort_by_key(|e| e.index);
    for (expected, e) in (1..).zip(&entries) {
        if e.index != expected {
            return Err(OrchestratorError::CorruptManifest {
                path: layout.manifest(),
                reason: format!("completed iterations are not contiguous at {}", e.index),
            });
        }
    }
    let iterations = entries
        .iter()
        .map(|e| load_iteration(layout, e, config.scientist_count))
        .collect::<Result<Vec<_>>>()?;
    let mut record = RunRecord {
        run_id: manifest.run_id.clone(),
        run_dir: layout.root().to_path_buf(),
        config,
        iterations,
        total_cost: Usd::ZERO,
        status: manifest.status,
    };
    record.recompute_cost();
    Ok(record)
}

/// Reads a run directory back into a record without running anything.
pub fn load_run(run_dir: &Path) -> Result<RunRecord> {
    let layout = RunLayout::new(run_dir);
    let manifest = load_manifest(&layout)?;
    let config = RunConfig::load(&layout.config())?;
    load_record(&layout, &manifest, config)
}

/// Continues a run using the providers its stored configuration names.
pub async fn resume(run_dir: &Path) -> Result<RunRecord> {
    let layout = RunLayout::new(run_dir);
    load_manifest(&layout)?;
    let config = RunConfig::load(&layout.config())?;
    Orchestrator::from_config(config)?.resume(run_dir).await
}
