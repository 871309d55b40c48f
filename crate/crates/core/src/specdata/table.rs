//! Presence table readers (LaTeX `tabular` and CSV) sharing one row model.

use std::collections::BTreeSet;
use std::sync::LazyLock;

use regex::Regex;
use thiserror::Error;

use super::{Compound, MatrixError, PresenceMatrix, Sample, SampleClass};

/// Rows are numbered from 1 with the header as row 1.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum TableError {
    #[error("table has no header row")]
    Empty,
    #[error("header is missing the required {0} column")]
    MissingColumn(&'static str),
    #[error("column {index} ({header:?}): unknown column; sample columns are written as \"Name (meteorite|soil[, subtype])\"")]
    UnknownColumn { index: usize, header: String },
    #[error("row {row}: expected {expected} cells, found {found}")]
    Arity { row: usize, expected: usize, found: usize },
    #[error("row {row}: duplicate compound id {id}")]
    DuplicateId { row: usize, id: u32 },
    #[error("row {row}, column {column:?}: invalid value {value:?}: {reason}")]
    BadValue {
        row: usize,
        column: String,
        value: String,
        reason: String,
    },
    #[error("row {row}, column {column:?}: cell {cell:?} is not a presence marker (x, X, 1, ✓ or empty, -, 0)")]
    BadMarker { row: usize, column: String, cell: String },
    #[error("csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Column {
    Id,
    Name,
    MolecularWeight,
    Rt1,
    Rt2,
    Mz,
    Sample(usize),
}

static SAMPLE_HEADER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^(.+?)\s*\(\s*(meteorite|soil)s?\s*(?:,\s*([^()]+?)\s*)?\)$").unwrap());

static CELL_ANNOTATION: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^(\S+)\s*\((.*)\)$").unwrap());

/// Parses either table format: LaTeX when the text contains a `tabular`
/// environment or its first line uses `&` separators, CSV otherwise.
pub fn parse_presence_table(text: &str) -> Result<PresenceMatrix, TableError> {
    let first_line = text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('%'))
        .unwrap_or("");
    if text.contains("\\begin{tabular}") || first_line.contains('&') {
        parse_latex_table(text)
    } else {
        parse_csv_table(text)
    }
}

pub fn parse_csv_table(text: &str) -> Result<PresenceMatrix, TableError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| TableError::Csv(e.to_string()))?;
        let cells: Vec<String> = record.iter().map(str::to_string).collect();
        if cells.iter().all(String::is_empty) {
            continue;
        }
        rows.push(cells);
    }
    build_matrix(rows)
}

pub fn parse_latex_table(text: &str) -> Result<PresenceMatrix, TableError> {
    let body = tabular_body(&strip_comments(text));
    let mut rows = Vec::new();
    for raw_row in split_unescaped(&body, "\\\\") {
        let row = strip_rules(&raw_row);
        let row = row.trim();
        // `\\[1ex]` spacing argument
        let row = strip_leading_bracket(row).trim();
        if row.is_empty() {
            continue;
        }
        let cells: Vec<String> = split_unescaped(row, "&").iter().map(|c| clean_latex_cell(c)).collect();
        rows.push(cells);
    }
    build_matrix(rows)
}

fn build_matrix(rows: Vec<Vec<String>>) -> Result<PresenceMatrix, TableError> {
    let mut rows = rows.into_iter();
    let header = rows.next().ok_or(TableError::Empty)?;
    let mut columns = Vec::with_capacity(header.len());
    let mut samples: Vec<Sample> = Vec::new();
    for (index, cell) in header.iter().enumerate() {
        let column = match meta_column(cell) {
            Some(c) => c,
            None => {
                let caps = SAMPLE_HEADER
                    .captures(cell.trim())
                    .ok_or_else(|| TableError::UnknownColumn {
                        index: index + 1,
                        header: cell.clone(),
                    })?;
                let class: SampleClass = caps[2].parse().expect("regex restricts class");
                let mut sample = Sample::new(caps[1].trim(), class);
                if let Some(sub) = caps.get(3) {
                    sample = sample.with_subtype(sub.as_str().trim());
                }
                samples.push(sample);
                Column::Sample(samples.len() - 1)
            }
        };
        columns.push(column);
    }
    if !columns.contains(&Column::Id) {
        return Err(TableError::MissingColumn("ID"));
    }
    if !columns.contains(&Column::Name) {
        return Err(TableError::MissingColumn("Name"));
    }

    let mut compounds = Vec::new();
    let mut seen = BTreeSet::new();
    let mut presence = Vec::new();
    for (offset, cells) in rows.enumerate() {
        let row = offset + 2;
        if cells.len() != columns.len() {
            return Err(TableError::Arity {
                row,
                expected: columns.len(),
                found: cells.len(),
            });
        }
        let mut id = None;
        let mut name = String::new();
        let mut mw = None;
        let mut rt1 = None;
        let mut rt2 = None;
        let mut mz = None;
        let mut present_in = Vec::new();
        for ((cell, column), head) in cells.iter().zip(&columns).zip(&header) {
            let bad = |reason: &str| TableError::BadValue {
                row,
                column: head.clone(),
                value: cell.clone(),
                reason: reason.to_string(),
            };
            match *column {
                Column::Id => {
                    let v: u32 = cell.parse().map_err(|_| bad("expected a positive integer"))?;
                    if v == 0 {
                        return Err(bad("expected a positive integer"));
                    }
                    id = Some(v);
                }
                Column::Name => {
                    if cell.is_empty() {
                        return Err(bad("compound name is empty"));
                    }
                    name = cell.clone();
                }
                Column::MolecularWeight => mw = parse_positive(cell).map_err(|r| bad(&r))?,
                Column::Rt1 => rt1 = parse_positive(cell).map_err(|r| bad(&r))?,
                Column::Rt2 => rt2 = parse_positive(cell).map_err(|r| bad(&r))?,
                Column::Mz => mz = parse_positive(cell).map_err(|r| bad(&r))?,
                Column::Sample(i) => {
                    let sample = &samples[i].name;
                    let marked = parse_marker(cell, sample).ok_or_else(|| TableError::BadMarker {
                        row,
                        column: sample.clone(),
                        cell: cell.clone(),
                    })?;
                    if marked {
                        present_in.push(sample.clone());
                    }
                }
            }
        }
        let id = id.expect("id column checked above");
        if !seen.insert(id) {
            return Err(TableError::DuplicateId { row, id });
        }
        let mut compound = Compound::new(id, name).with_retention(rt1, rt2);
        compound.molecular_weight = mw;
        compound.mz = mz;
        compounds.push(compound);
        presence.extend(present_in.into_iter().map(|s| (id, s)));
    }
    Ok(PresenceMatrix::new(compounds, samples, presence)?)
}

fn meta_column(header: &str) -> Option<Column> {
    let key: String = header
        .chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect();
    Some(match key.as_str() {
        "id" | "no" => Column::Id,
        "name" | "compound" | "compoundname" => Column::Name,
        "mw" | "molecularweight" => Column::MolecularWeight,
        "rt1" | "1strt" | "rt1s" => Column::Rt1,
        "rt2" | "2ndrt" | "rt2s" => Column::Rt2,
        "mz" => Column::Mz,
        _ => return None,
    })
}

fn parse_positive(cell: &str) -> Result<Option<f64>, String> {
    if cell.is_empty() || cell == "-" {
        return Ok(None);
    }
    let v: f64 = cell.parse().map_err(|_| "expected a number".to_string())?;
    if v.is_finite() && v > 0.0 {
        Ok(Some(v))
    } else {
        Err("value must be strictly positive".to_string())
    }
}

/// `Some(true)` for a truthy marker, `Some(false)` for an absent marker,
/// `None` for anything else. A trailing "(Sample)" annotation must name the
/// cell's own column.
fn parse_marker(cell: &str, sample: &str) -> Option<bool> {
    let cell = cell.trim();
    let marker = match CELL_ANNOTATION.captures(cell) {
        Some(caps) => {
            if !caps[2].trim().eq_ignore_ascii_case(sample) {
                return None;
            }
            caps.get(1).unwrap().as_str()
        }
        None => cell,
    };
    match marker {
        "x" | "X" | "1" | "✓" => Some(true),
        "" | "-" | "0" => Some(false),
        _ => None,
    }
}

fn strip_comments(text: &str) -> String {
    text.lines()
        .map(|line| {
            let bytes = line.as_bytes();
            let cut = (0..bytes.len())
                .find(|&i| bytes[i] == b'%' && (i == 0 || bytes[i - 1] != b'\\'))
                .unwrap_or(bytes.len());
            &line[..cut]
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Content between `\begin{tabular}{spec}` and `\end{tabular}`, or the whole
/// text when there is no environment.
fn tabular_body(text: &str) -> String {
    const BEGIN: &str = "\\begin{tabular}";
    let Some(start) = text.find(BEGIN) else {
        return text.to_string();
    };
    let mut rest = &text[start + BEGIN.len()..];
    // skip the (possibly nested) column spec argument
    let trimmed = rest.trim_start();
    if trimmed.starts_with('{') {
        let mut depth = 0usize;
        let mut end = 0;
        for (i, ch) in trimmed.char_indices() {
            match ch {
                '{' => depth += 1,
                '}' => {
                    depth -= 1;
                    if depth == 0 {
                        end = i + 1;
                        break;
                    }
                }
                _ => {}
            }
        }
        rest = &trimmed[end..];
    }
    match rest.find("\\end{tabular}") {
        Some(end) => rest[..end].to_string(),
        None => rest.to_string(),
    }
}

static RULES: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\\(?:toprule|midrule|bottomrule|hline)(?:\[[^\]]*\])?|\\(?:cline|cmidrule)(?:\([^)]*\))?\{[^}]*\}")
        .unwrap()
});

fn strip_rules(row: &str) -> String {
    RULES.replace_all(row, "").into_owned()
}

fn strip_leading_bracket(row: &str) -> &str {
    let t = row.trim_start();
    if t.starts_with('[') {
        if let Some(end) = t.find(']') {
            return &t[end + 1..];
        }
    }
    row
}

/// Splits on `sep` occurrences not preceded by a backslash (so `\&` survives).
fn split_unescaped(text: &str, sep: &str) -> Vec<String> {
    let mut parts = Vec::new();
    let mut current = String::new();
    let mut i = 0;
    let bytes = text.as_bytes();
    while i < text.len() {
        if text[i..].starts_with(sep) {
            let escaped = sep == "&" && i > 0 && bytes[i - 1] == b'\\';
            if !escaped {
                parts.push(std::mem::take(&mut current));
                i += sep.len();
                continue;
            }
        }
        let ch = text[i..].chars().next().unwrap();
        current.push(ch);
        i += ch.len_utf8();
    }
    parts.push(current);
    parts
}

static WRAPPERS: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\\(?:textbf|textit|emph|textrm|mathrm|text)\{([^{}]*)\}").unwrap());

fn clean_latex_cell(cell: &str) -> String {
    let mut s = cell.trim().to_string();
    while WRAPPERS.is_match(&s) {
        s = WRAPPERS.replace_all(&s, "$1").into_owned();
    }
    s = s
        .replace("$\\checkmark$", "✓")
        .replace("\\checkmark", "✓")
        .replace("\\&", "&")
        .replace("\\%", "%")
        .replace("\\_", "_")
        .replace("\\#", "#")
        .replace("\\$", "$");
    s.trim().to_string()
}

pub(crate) fn latex_escape(cell: &str) -> String {
    let mut out = String::with_capacity(cell.len());
    for ch in cell.chars() {
        match ch {
            '&' | '%' | '_' | '#' | '$' => {
                out.push('\\');
                out.push(ch);
            }
            _ => out.push(ch),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn minimal_table() {
        let m = parse_latex_table("ID & Name & A (soil) \\\\\n1 & Foo & x \\\\").unwrap();
        assert_eq!(m.compounds().len(), 1);
        assert_eq!(m.samples().len(), 1);
        assert_eq!(m.presence_pairs().count(), 1);
    }

    #[test]
    fn annotated_cells_from_the_dibenzothiophene_row() {
        let text = "\\begin{tabular}{llcccc}\n\
            ID & Name & MW & Orgueil (meteorite, CI1) & ALH 83100 (meteorite, CM2) & LEW 85311 (meteorite) \\\\\n\\midrule\n\
            14 & Dibenzothiophene & 184 & x (Orgueil) & x (ALH 83100) & x (LEW 85311) \\\\\n\
            \\end{tabular}";
        let m = parse_presence_table(text).unwrap();
        let pairs: Vec<_> = m.presence_pairs().collect();
        assert_eq!(pairs, vec![(14, "ALH 83100"), (14, "LEW 85311"), (14, "Orgueil")]);
        assert_eq!(m.samples()[0].subtype.as_deref(), Some("CI1"));
    }

    #[test]
    fn annotation_must_match_column() {
        let err = parse_latex_table("ID & Name & A (soil) \\\\ 1 & Foo & x (B) \\\\").unwrap_err();
        assert!(matches!(err, TableError::BadMarker { .. }));
    }

    #[test]
    fn unknown_marker_names_the_cell() {
        let err = parse_latex_table("ID & Name & A (soil) & B (soil) \\\\ 1 & Foo & x & maybe \\\\").unwrap_err();
        assert_eq!(
            err,
            TableError::BadMarker {
                row: 2,
                column: "B".into(),
                cell: "maybe".into()
            }
        );
        assert!(err.to_string().contains("\"maybe\""));
    }

    #[test]
    fn structural_errors() {
        assert!(matches!(
            parse_latex_table("ID & Name & Colour \\\\ 1 & Foo & red \\\\"),
            Err(TableError::UnknownColumn { index: 3, .. })
        ));
        assert!(matches!(
            parse_latex_table("ID & Name & A (soil) \\\\ 1 & Foo \\\\"),
            Err(TableError::Arity {
                row: 2,
                expected: 3,
                found: 2
            })
        ));
        assert!(matches!(
            parse_latex_table("ID & Name & A (soil) \\\\ 1 & Foo & x \\\\ 1 & Bar & \\\\"),
            Err(TableError::DuplicateId { row: 3, id: 1 })
        ));
        assert!(matches!(
            parse_csv_table("Name,A (soil)\nFoo,x\n"),
            Err(TableError::MissingColumn("ID"))
        ));
        assert!(matches!(
            parse_csv_table("ID,Name,MW,A (soil)\n1,Foo,-2,x\n"),
            Err(TableError::BadValue { row: 2, .. })
        ));
    }

    #[test]
    fn latex_cleanup() {
        let text = "% comment & noise\n\\begin{tabular}{@{}p{1cm}l{c}@{}}\n\\toprule\n\\textbf{ID} & \\textbf{Name} & A\\_1 (soil) \\\\\n\\midrule\n7 & R\\&D compound & $\\checkmark$ \\\\[1ex]\n\\bottomrule\n\\end{tabular}";
        let m = parse_latex_table(text).unwrap();
        assert_eq!(m.compounds()[0].name, "R&D compound");
        assert!(m.is_present(7, "A_1"));
    }

    #[test]
    fn fixture_formats_agree() {
        let tex = parse_presence_table(include_str!("../../fixtures/presence.tex")).unwrap();
        let csv = parse_presence_table(include_str!("../../fixtures/presence.csv")).unwrap();
        assert_eq!(tex, csv);
        assert_eq!(tex.samples().len(), 15);
        assert_eq!(tex.compounds().len(), 25);
    }

    fn arb_matrix() -> impl Strategy<Value = PresenceMatrix> {
        let name = "[A-Za-z][A-Za-z0-9 ,/&%_-]{0,12}[A-Za-z0-9]";
        let sample_name = "[A-Z][a-z]{1,6}( [0-9]{1,5})?";
        (
            prop::collection::btree_map(
                1u32..200,
                (
                    name,
                    prop::option::of(1.0f64..500.0),
                    prop::option::of(0.1f64..5000.0),
                    prop::option::of(0.1f64..10.0),
                    prop::option::of(1.0f64..600.0),
                ),
                1..8,
            ),
            prop::collection::btree_map(sample_name, (any::<bool>(), prop::option::of("[A-Z]{2}[0-9]")), 1..6),
            prop::collection::vec(any::<bool>(), 48),
        )
            .prop_map(|(compounds, samples, bits)| {
                let compounds: Vec<Compound> = compounds
                    .into_iter()
                    .map(|(id, (n, mw, rt1, rt2, mz))| {
                        let mut c = Compound::new(id, n.trim()).with_retention(rt1, rt2);
                        c.molecular_weight = mw;
                        c.mz = mz;
                        c
                    })
                    .collect();
                let samples: Vec<Sample> = samples
                    .into_iter()
                    .map(|(n, (met, sub))| {
                        let class = if met { SampleClass::Meteorite } else { SampleClass::Soil };
                        let s = Sample::new(n, class);
                        match sub {
                            Some(sub) => s.with_subtype(sub),
                            None => s,
                        }
                    })
                    .collect();
                let mut presence = Vec::new();
                let mut k = 0;
                for c in &compounds {
                    for s in &samples {
                        if bits[k % bits.len()] {
                            presence.push((c.id, s.name.clone()));
                        }
                        k += 1;
                    }
                }
                PresenceMatrix::new(compounds, samples, presence).unwrap()
            })
    }

    proptest! {
        #[test]
        fn serialized_forms_reparse_identically(m in arb_matrix()) {
            prop_assert_eq!(&parse_latex_table(&m.to_latex()).unwrap(), &m);
            prop_assert_eq!(&parse_csv_table(&m.to_csv()).unwrap(), &m);
            prop_assert_eq!(&PresenceMatrix::from_json(&m.to_json()).unwrap(), &m);
        }
    }
}
