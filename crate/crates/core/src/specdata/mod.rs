//! Compound × sample presence data.
//!
//! A [`PresenceMatrix`] records which identified compounds were detected in
//! which samples. It is the ground truth the grounding checker compares
//! hypothesis claims against. Presence is Boolean; peak intensities are not
//! modelled.

mod claims;
mod table;

pub use claims::{extract_claim_refs, verify_grounding, Assertion, ClaimRefs, CompoundRef, GroundingReport, Polarity};
pub use table::{parse_csv_table, parse_latex_table, parse_presence_table, TableError};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatrixError {
    #[error("duplicate compound id {0}")]
    DuplicateCompound(u32),
    #[error("duplicate sample name {0:?}")]
    DuplicateSample(String),
    #[error("unknown compound id {0}")]
    UnknownCompound(u32),
    #[error("unknown sample {0:?}")]
    UnknownSample(String),
    #[error("compound {id}: {reason}")]
    InvalidCompound { id: u32, reason: String },
    #[error("invalid sample: {0}")]
    InvalidSample(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleClass {
    Meteorite,
    Soil,
}

impl SampleClass {
    pub fn as_str(self) -> &'static str {
        match self {
            SampleClass::Meteorite => "meteorite",
            SampleClass::Soil => "soil",
        }
    }

    pub fn other(self) -> SampleClass {
        match self {
            SampleClass::Meteorite => SampleClass::Soil,
            SampleClass::Soil => SampleClass::Meteorite,
        }
    }
}

impl fmt::Display for SampleClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SampleClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "meteorite" | "meteorites" => Ok(SampleClass::Meteorite),
            "soil" | "soils" => Ok(SampleClass::Soil),
            other => Err(format!("unknown sample class {other:?}")),
        }
    }
}

/// One identified compound (a row of the input table).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Compound {
    pub id: u32,
    pub name: String,
    /// Individual names of slash-joined entries such as "phenanthrene/anthracene".
    #[serde(default)]
    pub alt_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub molecular_weight: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rt1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rt2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mz: Option<f64>,
}

impl Compound {
    /// Builds a compound with `alt_names` derived from the name.
    pub fn new(id: u32, name: impl Into<String>) -> Self {
        let name = name.into().trim().to_string();
        let alt_names = derive_alt_names(&name);
        Compound {
            id,
            name,
            alt_names,
            molecular_weight: None,
            rt1: None,
            rt2: None,
            mz: None,
        }
    }

    pub fn with_molecular_weight(mut self, mw: f64) -> Self {
        self.molecular_weight = Some(mw);
        self
    }

    pub fn with_mz(mut self, mz: f64) -> Self {
        self.mz = Some(mz);
        self
    }

    pub fn with_retention(mut self, rt1: Option<f64>, rt2: Option<f64>) -> Self {
        self.rt1 = rt1;
        self.rt2 = rt2;
        self
    }

    /// The primary name followed by every alternative name.
    pub fn all_names(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.name.as_str()).chain(self.alt_names.iter().map(String::as_str))
    }

    fn validate(&self) -> Result<(), MatrixError> {
        let invalid = |reason: &str| MatrixError::InvalidCompound {
            id: self.id,
            reason: reason.to_string(),
        };
        if self.id == 0 {
            return Err(invalid("id must be positive"));
        }
        if self.name.trim().is_empty() {
            return Err(invalid("name is empty"));
        }
        for (label, value) in [
            ("molecular weight", self.molecular_weight),
            ("rt1", self.rt1),
            ("rt2", self.rt2),
            ("m/z", self.mz),
        ] {
            if let Some(v) = value {
                if !(v.is_finite() && v > 0.0) {
                    return Err(invalid(&format!("{label} must be strictly positive, got {v}")));
                }
            }
        }
        Ok(())
    }
}

fn derive_alt_names(name: &str) -> Vec<String> {
    if !name.contains('/') {
        return Vec::new();
    }
    let parts: Vec<String> = name
        .split('/')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(str::to_string)
        .collect();
    if parts.len() > 1 {
        parts
    } else {
        Vec::new()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub name: String,
    pub class: SampleClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subtype: Option<String>,
}

impl Sample {
    pub fn new(name: impl Into<String>, class: SampleClass) -> Self {
        Sample {
            name: name.into().trim().to_string(),
            class,
            subtype: None,
        }
    }

    pub fn with_subtype(mut self, subtype: impl Into<String>) -> Self {
        self.subtype = Some(subtype.into());
        self
    }
}

/// Immutable compound × sample presence table.
///
/// Compounds and samples keep their input order; presence pairs are kept
/// sorted so the serialized form is canonical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix", into = "RawMatrix")]
pub struct PresenceMatrix {
    compounds: Vec<Compound>,
    samples: Vec<Sample>,
    presence: BTreeSet<(u32, String)>,
    index: BTreeMap<u32, usize>,
}

#[derive(Serialize, Deserialize)]
struct RawMatrix {
    compounds: Vec<Compound>,
    samples: Vec<Sample>,
    presence: Vec<(u32, String)>,
}

impl TryFrom<RawMatrix> for PresenceMatrix {
    type Error = MatrixError;

    fn try_from(raw: RawMatrix) -> Result<Self, Self::Error> {
        PresenceMatrix::new(raw.compounds, raw.samples, raw.presence)
    }
}

impl From<PresenceMatrix> for RawMatrix {
    fn from(m: PresenceMatrix) -> Self {
        RawMatrix {
            compounds: m.compounds,
            samples: m.samples,
            presence: m.presence.into_iter().collect(),
        }
    }
}

impl PresenceMatrix {
    pub fn new(
        compounds: Vec<Compound>,
        samples: Vec<Sample>,
        presence: impl IntoIterator<Item = (u32, String)>,
    ) -> Result<Self, MatrixError> {
        let mut index = BTreeMap::new();
        for (pos, c) in compounds.iter().enumerate() {
            c.validate()?;
            if index.insert(c.id, pos).is_some() {
                return Err(MatrixError::DuplicateCompound(c.id));
            }
        }
        let mut names = BTreeSet::new();
        for s in &samples {
            if s.name.is_empty() {
                return Err(MatrixError::InvalidSample("empty sample name".into()));
            }
            if !names.insert(s.name.as_str()) {
                return Err(MatrixError::DuplicateSample(s.name.clone()));
            }
        }
        let mut pairs = BTreeSet::new();
        for (id, sample) in presence {
            if !index.contains_key(&id) {
                return Err(MatrixError::UnknownCompound(id));
            }
            if !names.contains(sample.as_str()) {
                return Err(MatrixError::UnknownSample(sample));
            }
            pairs.insert((id, sample));
        }
        Ok(PresenceMatrix {
            compounds,
            samples,
            presence: pairs,
            index,
        })
    }

    pub fn compounds(&self) -> &[Compound] {
        &self.compounds
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn presence_pairs(&self) -> impl Iterator<Item = (u32, &str)> {
        self.presence.iter().map(|(id, s)| (*id, s.as_str()))
    }

    pub fn is_empty(&self) -> bool {
        self.compounds.is_empty()
    }

    pub fn compound(&self, id: u32) -> Option<&Compound> {
        self.index.get(&id).map(|&pos| &self.compounds[pos])
    }

    pub fn sample(&self, name: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.name == name)
    }

    /// Case-insensitive sample lookup.
    pub fn find_sample(&self, name: &str) -> Option<&Sample> {
        let needle = name.trim();
        self.samples.iter().find(|s| s.name.eq_ignore_ascii_case(needle))
    }

    /// Case-insensitive lookup over compound names and alt names.
    pub fn find_compound_by_name(&self, name: &str) -> Option<&Compound> {
        let needle = name.trim();
        let mut hits = self
            .compounds
            .iter()
            .filter(|c| c.all_names().any(|n| n.eq_ignore_ascii_case(needle)));
        let first = hits.next()?;
        // ambiguous names resolve to nothing
        match hits.next() {
            Some(_) => None,
            None => Some(first),
        }
    }

    pub fn is_present(&self, id: u32, sample: &str) -> bool {
        self.presence.contains(&(id, sample.to_string()))
    }

    pub fn samples_of_class(&self, class: SampleClass) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(move |s| s.class == class)
    }

    /// Sample names in which `compound_id` was detected.
    pub fn samples_of(&self, compound_id: u32) -> Result<BTreeSet<String>, MatrixError> {
        if !self.index.contains_key(&compound_id) {
            return Err(MatrixError::UnknownCompound(compound_id));
        }
        Ok(self
            .presence
            .range((compound_id, String::new())..)
            .take_while(|(id, _)| *id == compound_id)
            .map(|(_, s)| s.clone())
            .collect())
    }

    /// Compounds detected in at least one sample, and only in samples of `class`.
    pub fn exclusive_compounds(&self, class: SampleClass) -> BTreeSet<u32> {
        let class_of: BTreeMap<&str, SampleClass> = self.samples.iter().map(|s| (s.name.as_str(), s.class)).collect();
        let mut seen: BTreeMap<u32, bool> = BTreeMap::new();
        for (id, sample) in &self.presence {
            let inside = class_of[sample.as_str()] == class;
            let entry = seen.entry(*id).or_insert(true);
            *entry &= inside;
        }
        seen.into_iter().filter_map(|(id, only)| only.then_some(id)).collect()
    }

    /// Samples containing every compound in `ids`. An empty id set yields
    /// every sample.
    pub fn co_occurring(&self, ids: &BTreeSet<u32>) -> Result<BTreeSet<String>, MatrixError> {
        let mut result: BTreeSet<String> = self.samples.iter().map(|s| s.name.clone()).collect();
        for &id in ids {
            let with = self.samples_of(id)?;
            result = result.intersection(&with).cloned().collect();
        }
        Ok(result)
    }

    /// Canonical JSON form.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("matrix serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// CSV form accepted by [`parse_csv_table`].
    pub fn to_csv(&self) -> String {
        let mut writer = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        writer.write_record(self.header_cells()).expect("in-memory csv write");
        for c in &self.compounds {
            writer.write_record(self.row_cells(c)).expect("in-memory csv write");
        }
        String::from_utf8(writer.into_inner().expect("flush")).expect("utf-8")
    }

    /// LaTeX `tabular` form accepted by [`parse_latex_table`].
    pub fn to_latex(&self) -> String {
        let cols = 6 + self.samples.len();
        let mut out = format!("\\begin{{tabular}}{{{}}}\n\\toprule\n", "l".repeat(cols));
        let esc = |cells: Vec<String>| {
            cells
                .iter()
                .map(|c| table::latex_escape(c))
                .collect::<Vec<_>>()
                .join(" & ")
        };
        out.push_str(&esc(self.header_cells()));
        out.push_str(" \\\\\n\\midrule\n");
        for c in &self.compounds {
            out.push_str(&esc(self.row_cells(c)));
            out.push_str(" \\\\\n");
        }
        out.push_str("\\bottomrule\n\\end{tabular}\n");
        out
    }

    fn header_cells(&self) -> Vec<String> {
        let mut cells: Vec<String> = ["ID", "Name", "MW", "RT1", "RT2", "MZ"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for s in &self.samples {
            cells.push(match &s.subtype {
                Some(sub) => format!("{} ({}, {})", s.name, s.class, sub),
                None => format!("{} ({})", s.name, s.class),
            });
        }
        cells
    }

    fn row_cells(&self, c: &Compound) -> Vec<String> {
        let num = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut cells = vec![
            c.id.to_string(),
            c.name.clone(),
            num(c.molecular_weight),
            num(c.rt1),
            num(c.rt2),
            num(c.mz),
        ];
        for s in &self.samples {
            cells.push(if self.is_present(c.id, &s.name) { "x" } else { "" }.to_string());
        }
        cells
    }
}
