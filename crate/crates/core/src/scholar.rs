//! Literature search: query construction, the paper-search client, an
//! on-disk cache and an offline source for replay and demos.

use std::path::{Path, PathBuf};
use std::sync::{Arc, LazyLock};
use std::time::Duration;

use chrono::{DateTime, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;
use tokio::sync::Mutex;
use tokio::time::Instant;

use crate::agents::Hypothesis;
use crate::gateway::{BackendError, BoxFuture, RetryPolicy};

pub const MAX_SNIPPETS: usize = 5;
pub const ABSTRACT_CHARS: usize = 600;
pub const MAX_QUERY_CHARS: usize = 300;
pub const DEFAULT_BASE_URL: &str = "https://api.semanticscholar.org";
const FIELDS: &str = "title,abstract,year,externalIds";

#[derive(Debug, Error)]
pub enum ScholarError {
    #[error("search failed after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: BackendError },
    #[error("search request rejected: {0}")]
    Rejected(BackendError),
    #[error("malformed search response: {0}")]
    Malformed(String),
    #[error("search cache: {0}")]
    Cache(#[from] std::io::Error),
    #[error("http client: {0}")]
    Client(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaperSnippet {
    pub title: String,
    pub abstract_excerpt: String,
    pub year: Option<i32>,
    pub external_id: String,
}

impl PaperSnippet {
    pub fn render(&self) -> String {
        let year = self.year.map(|y| format!(" ({y})")).unwrap_or_default();
        format!(
            "Title: {}{year}\nID: {}\nAbstract: {}",
            self.title, self.external_id, self.abstract_excerpt
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub query: String,
    pub snippets: Vec<PaperSnippet>,
    pub fetched_at: DateTime<Utc>,
    pub from_cache: bool,
}

impl SearchResult {
    /// Text bound to the reviewer's SEARCH_RESULTS slot.
    pub fn render(&self) -> String {
        if self.snippets.is_empty() {
            return "No results found.".to_string();
        }
        self.snippets
            .iter()
            .enumerate()
            .map(|(k, s)| format!("[{}] {}", k + 1, s.render()))
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

static ID_PARENTHETICAL: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\s*\([^()]*\bIDs?\b[^()]*\)").unwrap());
static ID_TOKENS: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\bIDs?\s*#?\d+(?:\s*(?:,|&|and)\s*\d+)*").unwrap());
static SPACE_BEFORE_PUNCT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\s+([,.;:])").unwrap());

/// Search text for one hypothesis: the statement without compound-id
/// references, at most 300 characters, cut at a word boundary.
pub fn build_query(h: &Hypothesis) -> String {
    query_from_text(&h.statement)
}

pub fn query_from_text(statement: &str) -> String {
    let text = ID_PARENTHETICAL.replace_all(statement, "");
    let text = ID_TOKENS.replace_all(&text, "");
    let text = text.split_whitespace().collect::<Vec<_>>().join(" ");
    let text = SPACE_BEFORE_PUNCT.replace_all(&text, "$1").into_owned();
    truncate_at_word(&text, MAX_QUERY_CHARS)
}

fn truncate_at_word(text: &str, max: usize) -> String {
    if text.chars().count() <= max {
        return text.to_string();
    }
    let cut = text.char_indices().nth(max).map(|(i, _)| i).unwrap_or(text.len());
    let head = &text[..cut];
    let next_is_space = text[cut..].starts_with(char::is_whitespace);
    let head = if next_is_space {
        head
    } else {
        head.rfind(char::is_whitespace).map(|i| &head[..i]).unwrap_or(head)
    };
    head.trim_end().to_string()
}

pub trait LiteratureSource: Send + Sync {
    fn search<'a>(&'a self, query: &'a str, limit: usize) -> BoxFuture<'a, Result<SearchResult, ScholarError>>;
}

/// Content-addressed store at `<root>/<first2>/<sha256>.json`.
#[derive(Debug, Clone)]
pub struct SearchCache {
    root: PathBuf,
}

impl SearchCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        SearchCache { root: root.into() }
    }

    pub fn key(query: &str, limit: usize) -> String {
        let mut h = Sha256::new();
        h.update(query.as_bytes());
        h.update([0u8]);
        h.update((limit as u64).to_le_bytes());
        hex::encode(h.finalize())
    }

    pub fn path_for(&self, query: &str, limit: usize) -> PathBuf {
        let key = Self::key(query, limit);
        self.root.join(&key[..2]).join(format!("{key}.json"))
    }

    pub fn load(&self, query: &str, limit: usize) -> Result<Option<SearchResult>, ScholarError> {
        let path = self.path_for(query, limit);
        match std::fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text)
                .map(Some)
                .map_err(|e| ScholarError::Malformed(format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    /// Written to a temporary file and renamed into place.
    pub fn store(&self, limit: usize, result: &SearchResult) -> Result<(), ScholarError> {
        let path = self.path_for(&result.query, limit);
        let dir = path.parent().expect("cache path has a parent");
        std::fs::create_dir_all(dir)?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        serde_json::to_writer_pretty(&mut tmp, result).map_err(std::io::Error::from)?;
        tmp.persist(&path).map_err(|e| e.error)?;
        Ok(())
    }
}

/// Spaces outbound requests at least `interval` apart.
#[derive(Debug)]
pub struct RateLimiter {
    interval: Duration,
    last: Mutex<Option<Instant>>,
}

impl RateLimiter {
    pub fn new(interval: Duration) -> Self {
        RateLimiter {
            interval,
            last: Mutex::new(None),
        }
    }

    pub async fn acquire(&self) {
        let mut last = self.last.lock().await;
        if let Some(prev) = *last {
            tokio::time::sleep_until(prev + self.interval).await;
        }
        *last = Some(Instant::now());
    }
}

fn snippet_from(item: &Value) -> Option<PaperSnippet> {
    let title = item.get("title")?.as_str()?.trim().to_string();
    if title.is_empty() {
        return None;
    }
    let abstract_excerpt = item
        .get("abstract")
        .and_then(Value::as_str)
        .unwrap_or("")
        .chars()
        .take(ABSTRACT_CHARS)
        .collect();
    let year = item.get("year").and_then(Value::as_i64).map(|y| y as i32);
    let ids = item.get("externalIds");
    let external = ["DOI", "ArXiv", "CorpusId"].iter().find_map(|k| {
        ids.and_then(|ids| ids.get(*k)).and_then(|v| match v {
            Value::String(s) if !s.is_empty() => Some(format!("{k}:{s}")),
            Value::Number(n) => Some(format!("{k}:{n}")),
            _ => None,
        })
    });
    let external_id = external
        .or_else(|| item.get("paperId").and_then(Value::as_str).map(str::to_string))
        .unwrap_or_default();
    Some(PaperSnippet {
        title,
        abstract_excerpt,
        year,
        external_id,
    })
}

/// Parses a paper-search response body, keeping at most `limit` snippets.
pub fn parse_search_response(body: &str, limit: usize) -> Result<Vec<PaperSnippet>, ScholarError> {
    let v: Value = serde_json::from_str(body).map_err(|e| ScholarError::Malformed(e.to_string()))?;
    let data = match v.get("data") {
        None | Some(Value::Null) => return Ok(Vec::new()),
        Some(Value::Array(items)) => items,
        Some(_) => return Err(ScholarError::Malformed("\"data\" is not an array".into())),
    };
    Ok(data.iter().filter_map(snippet_from).take(limit).collect())
}

#[derive(Debug, Clone)]
pub struct ScholarConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    pub cache_dir: Option<PathBuf>,
    pub min_interval: Duration,
    pub retry: RetryPolicy,
}

impl Default for ScholarConfig {
    fn default() -> Self {
        ScholarConfig {
            base_url: DEFAULT_BASE_URL.into(),
            api_key: None,
            cache_dir: None,
            min_interval: Duration::from_secs(1),
            retry: RetryPolicy::default(),
        }
    }
}

pub struct ScholarClient {
    config: ScholarConfig,
    cache: Option<SearchCache>,
    limiter: RateLimiter,
    http: reqwest::Client,
}

impl ScholarClient {
    pub fn new(config: ScholarConfig) -> Result<Self, ScholarError> {
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| ScholarError::Client(e.to_string()))?;
        Ok(ScholarClient {
            cache: config.cache_dir.clone().map(SearchCache::new),
            limiter: RateLimiter::new(config.min_interval),
            config,
            http,
        })
    }

    async fn fetch_once(&self, query: &str, limit: usize) -> Result<String, BackendError> {
        self.limiter.acquire().await;
        let url = format!("{}/graph/v1/paper/search", self.config.base_url.trim_end_matches('/'));
        let mut req = self
            .http
            .get(url)
            .query(&[("query", query), ("limit", &limit.to_string()), ("fields", FIELDS)]);
        if let Some(key) = &self.config.api_key {
            req = req.header("x-api-key", key);
        }
        let resp = req.send().await.map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp.text().await.map_err(|e| BackendError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(crate::gateway::classify_status(status, &body));
        }
        Ok(body)
    }

    async fn search_inner(&self, query: &str, limit: usize) -> Result<SearchResult, ScholarError> {
        let limit = limit.clamp(1, MAX_SNIPPETS);
        if let Some(cache) = &self.cache {
            if let Some(mut hit) = cache.load(query, limit)? {
                hit.snippets.truncate(limit);
                hit.from_cache = true;
                return Ok(hit);
            }
        }
        let body = match self.config.retry.run(|| self.fetch_once(query, limit)).await {
            Ok((body, _)) => body,
            Err((last, attempts)) if last.is_retryable() => return Err(ScholarError::Exhausted { attempts, last }),
            Err((last, _)) => return Err(ScholarError::Rejected(last)),
        };
        let result = SearchResult {
            query: query.to_string(),
            snippets: parse_search_response(&body, limit)?,
            fetched_at: Utc::now(),
            from_cache: false,
        };
        if let Some(cache) = &self.cache {
            cache.store(limit, &result)?;
        }
        Ok(result)
    }
}

impl LiteratureSource for ScholarClient {
    fn search<'a>(&'a self, query: &'a str, limit: usize) -> BoxFuture<'a, Result<SearchResult, ScholarError>> {
        Box::pin(self.search_inner(query, limit))
    }
}

/// No network: answers from a cache directory when it has the query,
/// otherwise with a fixed snippet list.
pub struct OfflineSource {
    cache: Option<SearchCache>,
    fallback: Vec<PaperSnippet>,
}

impl OfflineSource {
    pub fn new(fallback: Vec<PaperSnippet>) -> Self {
        OfflineSource { cache: None, fallback }
    }

    pub fn with_cache(mut self, dir: impl AsRef<Path>) -> Self {
        self.cache = Some(SearchCache::new(dir.as_ref()));
        self
    }

    pub fn from_snippet_file(path: &Path) -> Result<Self, ScholarError> {
        let text = std::fs::read_to_string(path)?;
        let fallback =
            serde_json::from_str(&text).map_err(|e| ScholarError::Malformed(format!("{}: {e}", path.display())))?;
        Ok(OfflineSource::new(fallback))
    }
}

impl LiteratureSource for OfflineSource {
    fn search<'a>(&'a self, query: &'a str, limit: usize) -> BoxFuture<'a, Result<SearchResult, ScholarError>> {
        Box::pin(async move {
            let limit = limit.clamp(1, MAX_SNIPPETS);
            if let Some(cache) = &self.cache {
                if let Some(mut hit) = cache.load(query, limit)? {
                    hit.snippets.truncate(limit);
                    hit.from_cache = true;
                    return Ok(hit);
                }
            }
            Ok(SearchResult {
                query: query.to_string(),
                snippets: self.fallback.iter().take(limit).cloned().collect(),
                fetched_at: Utc::now(),
                from_cache: false,
            })
        })
    }
}

impl<T: LiteratureSource + ?Sized> LiteratureSource for Arc<T> {
    fn search<'a>(&'a self, query: &'a str, limit: usize) -> BoxFuture<'a, Result<SearchResult, ScholarError>> {
        (**self).search(query, limit)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::AgentRole;

    fn hyp(statement: &str) -> Hypothesis {
        Hypothesis {
            id: "H_final_one".into(),
            statement: statement.into(),
            key_datapoints: "k".into(),
            source: AgentRole::Accumulator,
            iteration: 1,
        }
    }

    #[test]
    fn query_without_ids_is_unchanged() {
        let s = "Sulfur heterocycles in aqueously altered chondrites record low temperature parent body chemistry that favours ring closure.";
        assert!(s.len() >= 100 && s.len() <= 130);
        assert_eq!(build_query(&hyp(s)), s);
    }

    #[test]
    fn id_references_are_removed() {
        let q = build_query(&hyp(
            "The co-occurrence of fluoranthene and pyrene (IDs 12,13) specifically in Antarctic meteorites suggests these...",
        ));
        assert_eq!(
            q,
            "The co-occurrence of fluoranthene and pyrene specifically in Antarctic meteorites suggests these..."
        );
        assert_eq!(
            query_from_text("Naphthalene (ID 1, MW 128) and ID 12, fluoranthene, persist."),
            "Naphthalene and, fluoranthene, persist."
        );
    }

    #[test]
    fn long_statements_cut_at_word_boundary() {
        let words: Vec<String> = (0..80).map(|k| format!("word{k}")).collect();
        let s = words.join(" ");
        assert!(s.len() > 400);
        let q = query_from_text(&s);
        assert!(q.chars().count() <= MAX_QUERY_CHARS);
        assert!(s.starts_with(&q));
        assert!(s[q.len()..].starts_with(' '));
    }

    #[test]
    fn response_parsing() {
        let body = r#"{"total": 3, "data": [
            {"paperId": "p1", "title": "A", "abstract": null, "year": 2020, "externalIds": {"DOI": "10.1/x", "CorpusId": 5}},
            {"paperId": "p2", "title": "", "abstract": "skip me"},
            {"paperId": "p3", "title": "B", "abstract": "text", "externalIds": {"CorpusId": 9}},
            {"paperId": "p4", "title": "C"}
        ]}"#;
        let snippets = parse_search_response(body, 5).unwrap();
        let ids: Vec<&str> = snippets.iter().map(|s| s.external_id.as_str()).collect();
        assert_eq!(ids, ["DOI:10.1/x", "CorpusId:9", "p4"]);
        assert_eq!(snippets[0].year, Some(2020));
        assert_eq!(parse_search_response(body, 2).unwrap().len(), 2);
        assert!(parse_search_response(r#"{"total": 0}"#, 5).unwrap().is_empty());
        assert!(parse_search_response("oops", 5).is_err());
        let long = format!(r#"{{"data": [{{"title": "T", "abstract": "{}"}}]}}"#, "a".repeat(900));
        assert_eq!(
            parse_search_response(&long, 5).unwrap()[0].abstract_excerpt.len(),
            ABSTRACT_CHARS
        );
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cache = SearchCache::new(dir.path());
        let result = SearchResult {
            query: "pah formation".into(),
            snippets: vec![PaperSnippet {
                title: "T".into(),
                abstract_excerpt: "a".into(),
                year: None,
                external_id: "x".into(),
            }],
            fetched_at: Utc::now(),
            from_cache: false,
        };
        cache.store(5, &result).unwrap();
        let key = SearchCache::key("pah formation", 5);
        assert!(dir.path().join(&key[..2]).join(format!("{key}.json")).exists());
        assert_eq!(cache.load("pah formation", 5).unwrap().unwrap(), result);
        assert!(cache.load("pah formation", 4).unwrap().is_none());
    }

    #[tokio::test(start_paused = true)]
    async fn limiter_spaces_requests() {
        let limiter = RateLimiter::new(Duration::from_secs(1));
        let start = Instant::now();
        for _ in 0..4 {
            limiter.acquire().await;
        }
        assert_eq!(start.elapsed(), Duration::from_secs(3));
    }

    #[tokio::test]
    async fn offline_source_clamps() {
        let snippet = PaperSnippet {
            title: "T".into(),
            abstract_excerpt: String::new(),
            year: None,
            external_id: "x".into(),
        };
        let src = OfflineSource::new(vec![snippet; 9]);
        let r = src.search("q", 10).await.unwrap();
        assert_eq!(r.snippets.len(), MAX_SNIPPETS);
        assert!(!r.from_cache);
    }
}
