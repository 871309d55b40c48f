//! Claim extraction from `key_datapoints` text and deterministic grounding.
//!
//! The grammar is deliberately conservative. It recognises compound ids
//! (`ID 14`, `IDs 2, 8, and 15`), compound and sample names from the matrix
//! vocabulary, class words (meteorites, soil samples), exclusivity words
//! (only, exclusively) and absence phrases (absent in, not in). Anything it
//! cannot attach to a compound is left out; it never guesses an assertion.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{PresenceMatrix, SampleClass};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompoundRef {
    Id(u32),
    Name(String),
}

impl fmt::Display for CompoundRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CompoundRef::Id(id) => write!(f, "ID {id}"),
            CompoundRef::Name(name) => f.write_str(name),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Present,
    Absent,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Assertion {
    pub compound: CompoundRef,
    pub sample: String,
    pub polarity: Polarity,
}

impl Assertion {
    pub fn present(compound: CompoundRef, sample: impl Into<String>) -> Self {
        Assertion {
            compound,
            sample: sample.into(),
            polarity: Polarity::Present,
        }
    }

    pub fn absent(compound: CompoundRef, sample: impl Into<String>) -> Self {
        Assertion {
            compound,
            sample: sample.into(),
            polarity: Polarity::Absent,
        }
    }
}

impl fmt::Display for Assertion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = match self.polarity {
            Polarity::Present => "Present",
            Polarity::Absent => "Absent",
        };
        write!(f, "{p}({}, {})", self.compound, self.sample)
    }
}

/// Structured form of a hypothesis's `key_datapoints` text.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClaimRefs {
    pub compound_ids: BTreeSet<u32>,
    pub compound_names: BTreeSet<String>,
    pub sample_names: BTreeSet<String>,
    pub assertions: Vec<Assertion>,
}

impl ClaimRefs {
    pub fn is_empty(&self) -> bool {
        self.compound_ids.is_empty()
            && self.compound_names.is_empty()
            && self.sample_names.is_empty()
            && self.assertions.is_empty()
    }

    /// Adds an assertion (once) and registers its references.
    pub fn push(&mut self, assertion: Assertion) {
        self.note_compound(&assertion.compound);
        self.sample_names.insert(assertion.sample.clone());
        if !self.assertions.contains(&assertion) {
            self.assertions.push(assertion);
        }
    }

    fn note_compound(&mut self, compound: &CompoundRef) {
        match compound {
            CompoundRef::Id(id) => {
                self.compound_ids.insert(*id);
            }
            CompoundRef::Name(name) => {
                self.compound_names.insert(name.clone());
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundingReport {
    pub supported: Vec<Assertion>,
    pub violated: Vec<Assertion>,
    /// Ids and names that do not exist in the matrix.
    pub unresolved: Vec<String>,
}

impl GroundingReport {
    pub fn is_clean(&self) -> bool {
        self.violated.is_empty()
    }

    pub fn summary(&self) -> String {
        format!(
            "{} supported, {} violated, {} unresolved",
            self.supported.len(),
            self.violated.len(),
            self.unresolved.len()
        )
    }
}

/// Checks every assertion against the matrix. Assertions whose compound or
/// sample does not resolve are reported only through `unresolved`.
pub fn verify_grounding(matrix: &PresenceMatrix, refs: &ClaimRefs) -> GroundingReport {
    let mut report = GroundingReport::default();
    let mut unresolved = Vec::new();
    let mut note = |token: String| {
        if !unresolved.contains(&token) {
            unresolved.push(token);
        }
    };

    let resolve_compound = |c: &CompoundRef| match c {
        CompoundRef::Id(id) => matrix.compound(*id).map(|c| c.id),
        CompoundRef::Name(name) => matrix.find_compound_by_name(name).map(|c| c.id),
    };

    for assertion in &refs.assertions {
        let compound = resolve_compound(&assertion.compound);
        let sample = matrix.find_sample(&assertion.sample);
        if compound.is_none() {
            note(assertion.compound.to_string());
        }
        if sample.is_none() {
            note(assertion.sample.clone());
        }
        let (Some(id), Some(sample)) = (compound, sample) else {
            continue;
        };
        let present = matrix.is_present(id, &sample.name);
        let holds = match assertion.polarity {
            Polarity::Present => present,
            Polarity::Absent => !present,
        };
        if holds {
            report.supported.push(assertion.clone());
        } else {
            report.violated.push(assertion.clone());
        }
    }
    for id in &refs.compound_ids {
        if matrix.compound(*id).is_none() {
            note(CompoundRef::Id(*id).to_string());
        }
    }
    for name in &refs.compound_names {
        if matrix.find_compound_by_name(name).is_none() {
            note(name.clone());
        }
    }
    for name in &refs.sample_names {
        if matrix.find_sample(name).is_none() {
            note(name.clone());
        }
    }
    report.unresolved = unresolved;
    report
}

/// Extracts compound/sample references and presence assertions from a
/// `key_datapoints` string, using `matrix` as the name vocabulary.
pub fn extract_claim_refs(key_datapoints: &str, matrix: &PresenceMatrix) -> ClaimRefs {
    let vocab = Vocabulary::new(matrix);
    let mut refs = ClaimRefs::default();
    let mut seen_compounds: Vec<CompoundRef> = Vec::new();

    for clause in split_clauses(key_datapoints) {
        let mentions = vocab.scan(clause);
        let groups = id_groups(clause);
        for unit in split_units(clause, &groups, &mentions) {
            let mut compounds: Vec<CompoundRef> = groups
                .iter()
                .filter(|g| g.start >= unit.start && g.start < unit.end)
                .flat_map(|g| g.ids.iter().map(|&id| CompoundRef::Id(id)))
                .collect();
            let outside_ids = |m: &&Mention| {
                m.start >= unit.start && m.end <= unit.end && !groups.iter().any(|g| m.start < g.end && g.start < m.end)
            };
            let unit_mentions: Vec<&Mention> = mentions.iter().filter(outside_ids).collect();
            if compounds.is_empty() {
                for m in &unit_mentions {
                    if let Target::Compound(id) = m.target {
                        let name = matrix.compound(id).expect("vocabulary id").name.clone();
                        compounds.push(CompoundRef::Name(name));
                    }
                }
            }
            for c in &compounds {
                refs.note_compound(c);
                if !seen_compounds.contains(c) {
                    seen_compounds.push(c.clone());
                }
            }
            if compounds.is_empty() {
                compounds = seen_compounds.clone();
            }
            apply_unit(clause, &unit, &unit_mentions, &groups, &compounds, matrix, &mut refs);
        }
    }
    refs
}

#[derive(Debug, Clone)]
struct Span {
    start: usize,
    end: usize,
}

fn apply_unit(
    clause: &str,
    unit: &Span,
    mentions: &[&Mention],
    groups: &[IdGroup],
    compounds: &[CompoundRef],
    matrix: &PresenceMatrix,
    refs: &mut ClaimRefs,
) {
    let text = &clause[unit.start..unit.end];
    let negation_at = NEGATION.find(text).map(|m| unit.start + m.start()).unwrap_or(unit.end);
    let parts = [
        (unit.start, negation_at, Polarity::Present),
        (negation_at, unit.end, Polarity::Absent),
    ];
    for (start, end, polarity) in parts {
        if start >= end {
            continue;
        }
        let part_mentions: Vec<&Mention> = mentions
            .iter()
            .copied()
            .filter(|m| m.start >= start && m.end <= end)
            .collect();

        let mut explicit: Vec<String> = Vec::new();
        let mut classes: BTreeSet<SampleClass> = BTreeSet::new();
        for m in &part_mentions {
            match &m.target {
                Target::Sample(name) => {
                    if !explicit.contains(name) {
                        explicit.push(name.clone());
                    }
                }
                Target::Class(class) if !hedged(clause, m.start) => {
                    classes.insert(*class);
                }
                _ => {}
            }
        }
        let unresolved = unresolved_list_items(clause, start, end, &part_mentions, groups);
        let any_unresolved = !unresolved.is_empty();
        for item in unresolved {
            refs.sample_names.insert(item.clone());
            if !explicit.contains(&item) {
                explicit.push(item);
            }
        }
        for name in &explicit {
            refs.sample_names.insert(name.clone());
        }
        if compounds.is_empty() {
            continue;
        }

        match polarity {
            Polarity::Present => {
                for c in compounds {
                    for s in &explicit {
                        refs.push(Assertion::present(c.clone(), s.clone()));
                    }
                }
                if !ONLY.is_match(&clause[start..end]) {
                    continue;
                }
                let excluded: Vec<&str> = if !classes.is_empty() {
                    matrix
                        .samples()
                        .iter()
                        .filter(|s| !classes.contains(&s.class))
                        .map(|s| s.name.as_str())
                        .collect()
                } else if !explicit.is_empty() && !any_unresolved {
                    matrix
                        .samples()
                        .iter()
                        .map(|s| s.name.as_str())
                        .filter(|n| !explicit.iter().any(|e| e == n))
                        .collect()
                } else {
                    Vec::new()
                };
                for c in compounds {
                    for s in &excluded {
                        if !explicit.iter().any(|e| e == s) {
                            refs.push(Assertion::absent(c.clone(), *s));
                        }
                    }
                }
            }
            Polarity::Absent => {
                let mut targets: Vec<String> = explicit.clone();
                for class in &classes {
                    for s in matrix.samples_of_class(*class) {
                        if !targets.contains(&s.name) {
                            targets.push(s.name.clone());
                        }
                    }
                }
                for c in compounds {
                    for s in &targets {
                        refs.push(Assertion::absent(c.clone(), s.clone()));
                    }
                }
            }
        }
    }
}

static NEGATION: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\b(?:absent|missing|lacking|not(?:\s+(?:found|detected|present|observed))?)\s+(?:in|from)\b")
        .unwrap()
});

static ONLY: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\b(?:only|exclusively|solely|uniquely)\b").unwrap());

static HEDGE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(?:most|some|many|several|certain|other|few|various)\s+(?:\w+\s+)?$").unwrap());

static ID_WORD: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b(?:IDs?|Ids?)\b").unwrap());

static PRESENCE_WORD: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(?:in|found|detected|present|observed|including)\s*:?\s*$").unwrap());

/// A class word preceded by a quantifier such as "most" or "other".
fn hedged(clause: &str, start: usize) -> bool {
    let mut from = start.saturating_sub(32);
    while !clause.is_char_boundary(from) {
        from -= 1;
    }
    HEDGE.is_match(&clause[from..start])
}

fn split_clauses(text: &str) -> Vec<&str> {
    let mut clauses = Vec::new();
    let mut begin = 0;
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    for (k, &(i, ch)) in chars.iter().enumerate() {
        let boundary = match ch {
            ';' | '\n' => true,
            '.' => {
                let mut j = k + 1;
                let mut saw_space = false;
                while j < chars.len() && chars[j].1.is_whitespace() {
                    saw_space = true;
                    j += 1;
                }
                saw_space && j < chars.len() && chars[j].1.is_uppercase()
            }
            _ => false,
        };
        if boundary {
            clauses.push(&text[begin..i]);
            begin = i + ch.len_utf8();
        }
    }
    clauses.push(&text[begin..]);
    clauses.into_iter().filter(|c| !c.trim().is_empty()).collect()
}

#[derive(Debug, Clone)]
struct IdGroup {
    start: usize,
    end: usize,
    ids: Vec<u32>,
}

/// Finds `ID n` / `IDs n, m, and k` groups, including the parenthesized
/// annotations that follow individual numbers.
fn id_groups(text: &str) -> Vec<IdGroup> {
    let bytes = text.as_bytes();
    let skip_ws = |mut i: usize| {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        i
    };
    let mut groups = Vec::new();
    let mut search_from = 0;
    while let Some(m) = ID_WORD.find_at(text, search_from) {
        search_from = m.end();
        let mut i = skip_ws(m.end());
        if i < bytes.len() && (bytes[i] == b':' || bytes[i] == b'#') {
            i = skip_ws(i + 1);
        }
        let mut ids = Vec::new();
        let mut end = m.end();
        loop {
            let digits_start = i;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            if i == digits_start {
                break;
            }
            match text[digits_start..i].parse::<u32>() {
                Ok(n) => ids.push(n),
                Err(_) => break,
            }
            end = i;
            let j = skip_ws(i);
            if j < bytes.len() && bytes[j] == b'(' {
                if let Some(close) = matching_paren(text, j) {
                    end = close + 1;
                    i = close + 1;
                }
            }
            // separator: ",", "&", "and", ", and"
            let mut k = skip_ws(i);
            let mut separated = false;
            if k < bytes.len() && (bytes[k] == b',' || bytes[k] == b'&') {
                k = skip_ws(k + 1);
                separated = true;
            }
            if text[k..].starts_with("and ") {
                k = skip_ws(k + 3);
                separated = true;
            }
            if separated && k < bytes.len() && bytes[k].is_ascii_digit() {
                i = k;
            } else {
                break;
            }
        }
        if !ids.is_empty() {
            search_from = end;
            groups.push(IdGroup {
                start: m.start(),
                end,
                ids,
            });
        }
    }
    groups
}

fn matching_paren(text: &str, open: usize) -> Option<usize> {
    let mut depth = 0usize;
    for (i, ch) in text[open..].char_indices() {
        match ch {
            '(' => depth += 1,
            ')' => {
                depth -= 1;
                if depth == 0 {
                    return Some(open + i);
                }
            }
            _ => {}
        }
    }
    None
}

/// Splits a clause wherever a new id group follows sample mentions, so
/// "ID 14 in A/B, ID 27 in C" yields two units.
fn split_units(clause: &str, groups: &[IdGroup], mentions: &[Mention]) -> Vec<Span> {
    let mut starts = vec![0];
    for pair in groups.windows(2) {
        let (prev, next) = (&pair[0], &pair[1]);
        let has_samples = mentions.iter().any(|m| {
            m.start >= prev.end && m.end <= next.start && matches!(m.target, Target::Sample(_) | Target::Class(_))
        });
        if has_samples {
            starts.push(next.start);
        }
    }
    let mut spans = Vec::new();
    for (k, &start) in starts.iter().enumerate() {
        let end = starts.get(k + 1).copied().unwrap_or(clause.len());
        spans.push(Span { start, end });
    }
    spans
}

/// Items of a parenthesized sample list (after a class word or presence
/// verb) that match nothing in the vocabulary.
fn unresolved_list_items(
    clause: &str,
    start: usize,
    end: usize,
    mentions: &[&Mention],
    groups: &[IdGroup],
) -> Vec<String> {
    let mut out = Vec::new();
    let mut i = start;
    while let Some(rel) = clause[i..end].find('(') {
        let open = i + rel;
        let Some(close) = matching_paren(clause, open) else {
            break;
        };
        i = close + 1;
        if close >= end || groups.iter().any(|g| open >= g.start && open < g.end) {
            if i >= end {
                break;
            }
            continue;
        }
        let before = &clause[start..open];
        let after_class = mentions.iter().any(|m| {
            matches!(m.target, Target::Class(_)) && m.end <= open && before[m.end - start..].trim().is_empty()
        });
        if !(after_class || PRESENCE_WORD.is_match(before)) {
            continue;
        }
        let inner_start = open + 1;
        let inner = &clause[inner_start..close];
        let mut pieces = Vec::new();
        let mut last = 0;
        for sep in LIST_SEPARATOR.find_iter(inner) {
            pieces.push((last, sep.start()));
            last = sep.end();
        }
        pieces.push((last, inner.len()));
        for (a, b) in pieces {
            let piece = &inner[a..b];
            let trimmed = piece.trim();
            if trimmed.is_empty() {
                continue;
            }
            let lead = piece.len() - piece.trim_start().len();
            let piece_start = inner_start + a + lead;
            let piece_end = piece_start + trimmed.len();
            let covered = mentions.iter().any(|m| match m.target {
                Target::Sample(_) | Target::Compound(_) => m.start < piece_end && piece_start < m.end,
                Target::Class(_) => m.start <= piece_start && m.end >= piece_end,
            });
            let looks_like_name = trimmed
                .chars()
                .next()
                .map(|c| c.is_uppercase() || c.is_ascii_digit())
                .unwrap_or(false);
            if !covered && looks_like_name {
                out.push(trimmed.to_string());
            }
        }
        if i >= end {
            break;
        }
    }
    out
}

static LIST_SEPARATOR: LazyLock<Regex> = LazyLock::new(|| Regex::new(r",\s*(?:and\s+)?|/|\s+and\s+|;").unwrap());

#[derive(Debug, Clone, PartialEq)]
enum Target {
    Compound(u32),
    Sample(String),
    Class(SampleClass),
}

impl Target {
    fn priority(&self) -> u8 {
        match self {
            Target::Compound(_) | Target::Sample(_) => 0,
            Target::Class(_) => 1,
        }
    }
}

#[derive(Debug, Clone)]
struct Mention {
    start: usize,
    end: usize,
    target: Target,
}

#[derive(Debug, Clone, PartialEq)]
enum Gap {
    None,
    Soft,
    Hard(String),
}

/// Lowercased alphanumeric characters with the separators that stood
/// between them. "Dibenzo thiophene" and "dibenzothiophene" squash to the same
/// characters; "1,2,4-trithiolane" keeps its commas as hard gaps.
#[derive(Debug, Clone)]
struct Squashed {
    chars: Vec<char>,
    gaps: Vec<Gap>,
    starts: Vec<usize>,
    ends: Vec<usize>,
}

impl Squashed {
    fn new(text: &str) -> Self {
        let mut s = Squashed {
            chars: Vec::new(),
            gaps: Vec::new(),
            starts: Vec::new(),
            ends: Vec::new(),
        };
        let mut pending = String::new();
        for (i, ch) in text.char_indices() {
            if ch.is_alphanumeric() {
                let gap = if s.chars.is_empty() || pending.is_empty() {
                    if s.chars.is_empty() && !pending.is_empty() {
                        Gap::Soft
                    } else {
                        Gap::None
                    }
                } else {
                    let hard: String = pending.chars().filter(|c| !c.is_whitespace() && *c != '-').collect();
                    if hard.is_empty() {
                        Gap::Soft
                    } else {
                        Gap::Hard(hard)
                    }
                };
                pending.clear();
                for lower in ch.to_lowercase() {
                    s.chars.push(lower);
                    s.gaps.push(gap.clone());
                    s.starts.push(i);
                    s.ends.push(i + ch.len_utf8());
                }
            } else {
                pending.push(ch);
            }
        }
        s
    }

    fn word_start(&self, i: usize) -> bool {
        i == 0 || self.gaps[i] != Gap::None
    }

    fn word_end(&self, i: usize) -> bool {
        i == self.chars.len() || self.gaps[i] != Gap::None
    }

    fn matches_at(&self, i: usize, key: &Squashed) -> bool {
        let n = key.chars.len();
        if n == 0 || i + n > self.chars.len() {
            return false;
        }
        if !self.word_start(i) || !self.word_end(i + n) {
            return false;
        }
        (0..n).all(|k| {
            self.chars[i + k] == key.chars[k]
                && (k == 0
                    || match (&self.gaps[i + k], &key.gaps[k]) {
                        (Gap::Hard(a), Gap::Hard(b)) => a == b,
                        (Gap::Hard(_), _) | (_, Gap::Hard(_)) => false,
                        _ => true,
                    })
        })
    }
}

struct Vocabulary {
    entries: Vec<(Squashed, Target)>,
}

const CLASS_PHRASES: &[(&str, SampleClass)] = &[
    ("meteorite", SampleClass::Meteorite),
    ("meteorites", SampleClass::Meteorite),
    ("meteorite samples", SampleClass::Meteorite),
    ("meteoritic samples", SampleClass::Meteorite),
    ("meteorite sample", SampleClass::Meteorite),
    ("soil", SampleClass::Soil),
    ("soils", SampleClass::Soil),
    ("soil samples", SampleClass::Soil),
    ("soil sample", SampleClass::Soil),
    ("terrestrial samples", SampleClass::Soil),
    ("terrestrial soils", SampleClass::Soil),
];

impl Vocabulary {
    fn new(matrix: &PresenceMatrix) -> Self {
        let mut keyed: Vec<(String, Target)> = Vec::new();
        for c in matrix.compounds() {
            for name in c.all_names() {
                keyed.push((name.to_string(), Target::Compound(c.id)));
            }
        }
        let full_names: BTreeSet<String> = matrix.samples().iter().map(|s| s.name.to_lowercase()).collect();
        for s in matrix.samples() {
            keyed.push((s.name.clone(), Target::Sample(s.name.clone())));
            // "Iceland Soil" is also written "Iceland"
            let lower = s.name.to_lowercase();
            for suffix in [" soil", " soils"] {
                if let Some(stem) = lower.strip_suffix(suffix) {
                    let stem = stem.trim();
                    if !stem.is_empty() && !full_names.contains(stem) {
                        keyed.push((s.name[..stem.len()].to_string(), Target::Sample(s.name.clone())));
                    }
                }
            }
        }
        for (phrase, class) in CLASS_PHRASES {
            keyed.push((phrase.to_string(), Target::Class(*class)));
        }

        // keys mapping to different targets are ambiguous and dropped
        let mut entries: Vec<(Squashed, Target)> = Vec::new();
        let mut squashed_keys: Vec<Vec<char>> = Vec::new();
        let mut ambiguous: BTreeSet<Vec<char>> = BTreeSet::new();
        for (text, target) in keyed {
            let sq = Squashed::new(&text);
            if sq.chars.is_empty() {
                continue;
            }
            if let Some(pos) = squashed_keys.iter().position(|k| *k == sq.chars) {
                if entries[pos].1 != target {
                    ambiguous.insert(sq.chars.clone());
                }
                continue;
            }
            squashed_keys.push(sq.chars.clone());
            entries.push((sq, target));
        }
        entries.retain(|(sq, _)| !ambiguous.contains(&sq.chars));
        Vocabulary { entries }
    }

    /// Longest non-overlapping vocabulary mentions, ordered by position.
    fn scan(&self, text: &str) -> Vec<Mention> {
        let hay = Squashed::new(text);
        let mut candidates: Vec<(usize, usize, &Target)> = Vec::new();
        for (key, target) in &self.entries {
            let n = key.chars.len();
            for i in 0..hay.chars.len() {
                if hay.matches_at(i, key) {
                    candidates.push((i, n, target));
                }
            }
        }
        candidates.sort_by(|a, b| {
            b.1.cmp(&a.1)
                .then(a.2.priority().cmp(&b.2.priority()))
                .then(a.0.cmp(&b.0))
        });
        let mut taken = vec![false; hay.chars.len()];
        let mut mentions = Vec::new();
        for (i, n, target) in candidates {
            if taken[i..i + n].iter().any(|t| *t) {
                continue;
            }
            taken[i..i + n].iter_mut().for_each(|t| *t = true);
            mentions.push(Mention {
                start: hay.starts[i],
                end: hay.ends[i + n - 1],
                target: target.clone(),
            });
        }
        mentions.sort_by_key(|m| m.start);
        mentions
    }
}
