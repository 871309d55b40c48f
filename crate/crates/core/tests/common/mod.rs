#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use hypogen::orchestrator::{demo_provider, RunConfig};
use serde_json::Value;

/// Keys whose values legitimately differ between two otherwise identical runs.
pub const VOLATILE_KEYS: [&str; 7] = [
    "run_id",
    "created_at",
    "updated_at",
    "started_at",
    "finished_at",
    "fetched_at",
    "latency_s",
];

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn demo_config(out: &Path, iterations: u32) -> RunConfig {
    let mut c = RunConfig::new("scripted", demo_provider(), fixture("presence.tex"), out);
    c.iterations = iterations;
    c
}

fn scrub(v: &mut Value) {
    match v {
        Value::Object(map) => {
            for key in VOLATILE_KEYS {
                if map.contains_key(key) {
                    map.insert(key.to_string(), Value::Null);
                }
            }
            map.values_mut().for_each(scrub);
        }
        Value::Array(items) => items.iter_mut().for_each(scrub),
        _ => {}
    }
}

fn normalize(name: &str, bytes: Vec<u8>) -> Vec<u8> {
    let text = String::from_utf8_lossy(&bytes);
    if name.ends_with(".jsonl") {
        let mut out = String::new();
        for line in text.lines() {
            let mut v: Value = serde_json::from_str(line).unwrap_or(Value::String(line.into()));
            scrub(&mut v);
            out.push_str(&v.to_string());
            out.push('\n');
        }
        out.into_bytes()
    } else if name.ends_with(".json") {
        match serde_json::from_str::<Value>(&text) {
            Ok(mut v) => {
                scrub(&mut v);
                v.to_string().into_bytes()
            }
            Err(_) => bytes,
        }
    } else {
        bytes
    }
}

fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
    let mut entries: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    entries.sort();
    for path in entries {
        if path.is_dir() {
            walk(root, &path, out);
        } else {
            let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
            let bytes = fs::read(&path).unwrap();
            out.insert(rel.clone(), normalize(&rel, bytes));
        }
    }
}

/// Every file under `root` keyed by relative path, with volatile JSON
/// values blanked. Markdown and other text are kept byte for byte.
pub fn artifacts(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

/// First difference between two artifact trees, if any.
pub fn first_difference(a: &BTreeMap<String, Vec<u8>>, b: &BTreeMap<String, Vec<u8>>) -> Option<String> {
    let names_a: Vec<_> = a.keys().collect();
    let names_b: Vec<_> = b.keys().collect();
    if names_a != names_b {
        return Some(format!("file sets differ: {names_a:?} vs {names_b:?}"));
    }
    a.iter()
        .find(|(k, v)| b[*k] != **v)
        .map(|(k, _)| format!("{k} differs"))
}
