use std::collections::HashMap;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BackendError, BackendReply, BoxFuture, ChatBackend, ChatRequest};

/// Canned responses keyed by role, optionally narrowed to an iteration and
/// a call index. Repeated requests for the same key walk through `texts`;
/// the last text repeats once they run out.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Script {
    pub entries: Vec<ScriptEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub role: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iteration: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub call: Option<u32>,
    pub texts: Vec<String>,
}

impl Script {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn push(&mut self, role: impl Into<String>, iteration: Option<u32>, call: Option<u32>, texts: Vec<String>) {
        self.entries.push(ScriptEntry {
            role: role.into(),
            iteration,
            call,
            texts,
        });
    }

    /// Most specific matching entry; earlier entries win ties.
    pub fn lookup(&self, role: &str, iteration: u32, call: u32) -> Option<&ScriptEntry> {
        let mut best: Option<(u8, &ScriptEntry)> = None;
        for e in &self.entries {
            if e.role != role || e.iteration.is_some_and(|i| i != iteration) || e.call.is_some_and(|c| c != call) {
                continue;
            }
            let score = 2 * e.iteration.is_some() as u8 + e.call.is_some() as u8;
            if best.is_none_or(|(s, _)| score > s) {
                best = Some((score, e));
            }
        }
        best.map(|(_, e)| e)
    }
}

/// Deterministic test double: the response is a pure function of
/// (role, iteration, call index, occurrence). Latency is simulated with a
/// seeded jitter so concurrent callers really interleave.
pub struct ScriptedBackend {
    script: Script,
    seed: u64,
    latency: Duration,
    occurrences: Mutex<HashMap<(String, u32, u32), usize>>,
}

impl ScriptedBackend {
    pub fn new(script: Script, seed: u64, latency: Duration) -> Self {
        ScriptedBackend {
            script,
            seed,
            latency,
            occurrences: Mutex::new(HashMap::new()),
        }
    }

    fn jitter(&self, key: &(String, u32, u32), occurrence: usize) -> Duration {
        let max = self.latency.as_micros() as u64;
        if max == 0 {
            return Duration::ZERO;
        }
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(key.0.as_bytes());
        h.update(key.1.to_le_bytes());
        h.update(key.2.to_le_bytes());
        h.update((occurrence as u64).to_le_bytes());
        let digest = h.finalize();
        let n = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
        Duration::from_micros(n % (max + 1))
    }

    fn next_text(&self, request: &ChatRequest) -> Result<(String, Duration), BackendError> {
        let key = (request.role.key(), request.iteration, request.call_index);
        let occurrence = {
            let mut occ = self.occurrences.lock().expect("occurrence lock");
            let n = occ.entry(key.clone()).or_insert(0);
            *n += 1;
            *n - 1
        };
        let entry = self.script.lookup(&key.0, key.1, key.2).ok_or_else(|| {
            BackendError::Content(format!(
                "no scripted response for {} iteration {} call {}",
                key.0, key.1, key.2
            ))
        })?;
        let text = entry
            .texts
            .get(occurrence)
            .or_else(|| entry.texts.last())
            .ok_or_else(|| BackendError::Content(format!("empty script entry for {}", key.0)))?;
        Ok((text.clone(), self.latency + self.jitter(&key, occurrence)))
    }
}

impl ChatBackend for ScriptedBackend {
    fn send<'a>(&'a self, request: &'a ChatRequest) -> BoxFuture<'a, Result<BackendReply, BackendError>> {
        Box::pin(async move {
            let (text, delay) = self.next_text(request)?;
            tokio::time::sleep(delay).await;
            Ok(BackendReply {
                text,
                input_tokens: None,
                output_tokens: None,
            })
        })
    }
}
