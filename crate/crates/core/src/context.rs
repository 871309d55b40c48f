//! Background-context documents and the token-budgeted bundle.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ContextError {
    #[error("cannot read context document {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("context document {0} is empty")]
    Empty(PathBuf),
    #[error("token budget must be positive")]
    ZeroBudget,
    #[error("context exceeds budget by {overage} tokens; remove {}", .offending.join(", "))]
    OverBudget {
        /// Titles of the trailing documents whose removal would fit.
        offending: Vec<String>,
        overage: u64,
        total: u64,
        budget: u64,
    },
}

/// chars / 4, rounded up.
pub fn approx_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextDocument {
    pub path: String,
    pub title: String,
    pub body: String,
    pub approx_tokens: u64,
}

impl ContextDocument {
    pub fn new(path: impl Into<String>, body: impl Into<String>) -> Result<Self, ContextError> {
        let path = path.into();
        let body = body.into();
        if body.trim().is_empty() {
            return Err(ContextError::Empty(PathBuf::from(path)));
        }
        let title = first_heading(&body).unwrap_or_else(|| {
            Path::new(&path)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.clone())
        });
        Ok(ContextDocument {
            approx_tokens: approx_tokens(&body),
            path,
            title,
            body,
        })
    }
}

fn first_heading(body: &str) -> Option<String> {
    body.lines().find_map(|line| {
        let line = line.trim_start();
        let rest = line.trim_start_matches('#');
        let level = line.len() - rest.len();
        if (1..=6).contains(&level) && (rest.is_empty() || rest.starts_with(' ')) {
            let title = rest.trim().trim_end_matches('#').trim();
            (!title.is_empty()).then(|| title.to_string())
        } else {
            None
        }
    })
}

pub fn load_documents<P: AsRef<Path>>(paths: &[P]) -> Result<Vec<ContextDocument>, ContextError> {
    paths
        .iter()
        .map(|p| {
            let path = p.as_ref();
            let body = std::fs::read_to_string(path).map_err(|source| ContextError::Read {
                path: path.to_path_buf(),
                source,
            })?;
            ContextDocument::new(path.display().to_string(), body)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextBundle {
    pub documents: Vec<ContextDocument>,
    pub total_tokens: u64,
    pub budget: u64,
    /// Set when no documents were supplied; generation without background
    /// context tends toward generic hypotheses.
    pub empty_warning: bool,
}

impl ContextBundle {
    /// Text bound to the SELECTED_PAPERS slot.
    pub fn render(&self) -> String {
        self.documents
            .iter()
            .map(|d| d.body.as_str())
            .collect::<Vec<_>>()
            .join("\n\n")
    }

    pub fn titles(&self) -> Vec<&str> {
        self.documents.iter().map(|d| d.title.as_str()).collect()
    }
}

pub fn assemble_context(docs: Vec<ContextDocument>, budget: u64) -> Result<ContextBundle, ContextError> {
    if budget == 0 {
        return Err(ContextError::ZeroBudget);
    }
    let total: u64 = docs.iter().map(|d| d.approx_tokens).sum();
    if total > budget {
        let overage = total - budget;
        let mut removed = 0u64;
        let mut cut = docs.len();
        while removed < overage {
            cut -= 1;
            removed += docs[cut].approx_tokens;
        }
        return Err(ContextError::OverBudget {
            offending: docs[cut..].iter().map(|d| d.title.clone()).collect(),
            overage,
            total,
            budget,
        });
    }
    Ok(ContextBundle {
        empty_warning: docs.is_empty(),
        documents: docs,
        total_tokens: total,
        budget,
    })
}
