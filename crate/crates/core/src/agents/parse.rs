use std::collections::BTreeMap;

use serde::ser::SerializeMap;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{word_index, AgentError, AgentRole, Hypothesis};

/// Scans for a balanced `{..}` or `[..]` starting at `start`, respecting
/// JSON strings. Returns the end offset (exclusive).
fn balanced_end(text: &str, start: usize) -> Option<usize> {
    let mut stack: Vec<u8> = Vec::new();
    let mut in_string = false;
    let mut escaped = false;
    for (i, b) in text.bytes().enumerate().skip(start) {
        if in_string {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => stack.push(b'}'),
            b'[' => stack.push(b']'),
            b'}' | b']' => {
                if stack.pop() != Some(b) {
                    return None;
                }
                if stack.is_empty() {
                    return Some(i + 1);
                }
            }
            _ => {}
        }
    }
    None
}

/// Removes trailing commas and escapes raw control characters inside strings.
fn repair(json: &str) -> String {
    let chars: Vec<char> = json.chars().collect();
    let mut out = String::with_capacity(json.len());
    let mut in_string = false;
    let mut escaped = false;
    for (i, &c) in chars.iter().enumerate() {
        if in_string {
            if escaped {
                escaped = false;
                out.push(c);
                continue;
            }
            match c {
                '\\' => {
                    escaped = true;
                    out.push(c);
                }
                '"' => {
                    in_string = false;
                    out.push(c);
                }
                '\n' => out.push_str("\\n"),
                '\r' => out.push_str("\\r"),
                '\t' => out.push_str("\\t"),
                c if (c as u32) < 0x20 => out.push_str(&format!("\\u{:04x}", c as u32)),
                c => out.push(c),
            }
            continue;
        }
        match c {
            '"' => {
                in_string = true;
                out.push(c);
            }
            ',' => {
                let next = chars[i + 1..].iter().find(|c| !c.is_whitespace());
                if !matches!(next, Some('}') | Some(']')) {
                    out.push(c);
                }
            }
            c => out.push(c),
        }
    }
    out
}

fn parse_value(text: &str) -> Result<Value, AgentError> {
    let json = extract_json(text)?;
    serde_json::from_str(&json).map_err(|e| AgentError::InvalidJson(e.to_string()))
}

/// First balanced JSON value in `text`, ignoring code fences and prose.
/// Common drift (trailing commas, raw newlines in strings) is repaired.
pub fn extract_json(text: &str) -> Result<String, AgentError> {
    let mut first_error = None;
    for (start, b) in text.bytes().enumerate() {
        if b != b'{' && b != b'[' {
            continue;
        }
        let Some(end) = balanced_end(text, start) else {
            continue;
        };
        let candidate = &text[start..end];
        if serde_json::from_str::<Value>(candidate).is_ok() {
            return Ok(candidate.to_string());
        }
        let repaired = repair(candidate);
        match serde_json::from_str::<Value>(&repaired) {
            Ok(_) => return Ok(repaired),
            Err(e) => {
                first_error.get_or_insert(e.to_string());
            }
        }
    }
    Err(match first_error {
        Some(e) => AgentError::InvalidJson(e),
        None => AgentError::NoJson,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlannerPlan {
    pub instructions: Vec<String>,
}

impl PlannerPlan {
    /// Instruction for scientist `k` (1-based).
    pub fn instruction(&self, k: u32) -> Option<&str> {
        self.instructions.get(k as usize - 1).map(String::as_str)
    }
}

impl Serialize for PlannerPlan {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.instructions.len()))?;
        for (k, text) in self.instructions.iter().enumerate() {
            map.serialize_entry(&format!("Agent{}_instructions", k + 1), text)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for PlannerPlan {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let map = BTreeMap::<String, String>::deserialize(d)?;
        let mut instructions = Vec::new();
        while let Some(text) = map.get(&format!("Agent{}_instructions", instructions.len() + 1)) {
            instructions.push(text.clone());
        }
        Ok(PlannerPlan { instructions })
    }
}

pub fn parse_planner_output(text: &str, scientists: u32) -> Result<PlannerPlan, AgentError> {
    let value = parse_value(text)?;
    let obj = value
        .as_object()
        .ok_or_else(|| AgentError::InvalidJson("planner output is not an object".into()))?;
    let mut instructions = Vec::new();
    for k in 1..=scientists {
        let key = format!("Agent{k}_instructions");
        let text = match obj.get(&key) {
            None => return Err(AgentError::MissingKey(key)),
            Some(Value::String(s)) => s.clone(),
            Some(other) => other.to_string(),
        };
        if text.trim().is_empty() {
            return Err(AgentError::EmptyInstruction(key));
        }
        instructions.push(text);
    }
    Ok(PlannerPlan { instructions })
}

fn text_field(elem: &serde_json::Map<String, Value>, index: usize, field: &'static str) -> Result<String, AgentError> {
    let text = match elem.get(field) {
        None | Some(Value::Null) => return Err(AgentError::MissingField { index, field }),
        Some(Value::String(s)) => s.clone(),
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| match v {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            })
            .collect::<Vec<_>>()
            .join("; "),
        Some(other) => other.to_string(),
    };
    if text.trim().is_empty() {
        return Err(AgentError::EmptyField { index, field });
    }
    Ok(text)
}

/// Accepts a bare array of hypothesis objects or `{"hypothesis": [...]}`.
pub fn parse_hypotheses(text: &str, source: AgentRole, iteration: u32) -> Result<Vec<Hypothesis>, AgentError> {
    let value = parse_value(text)?;
    let items = match &value {
        Value::Array(items) => items,
        Value::Object(obj) => match obj.get("hypothesis") {
            Some(Value::Array(items)) => items,
            _ => return Err(AgentError::Shape),
        },
        _ => return Err(AgentError::Shape),
    };
    let mut out = Vec::with_capacity(items.len());
    for (index, item) in items.iter().enumerate() {
        let elem = item.as_object().ok_or(AgentError::Shape)?;
        let id = text_field(elem, index, "id")?.trim().to_string();
        word_index(&id)?;
        out.push(Hypothesis {
            id,
            statement: text_field(elem, index, "statement")?,
            key_datapoints: text_field(elem, index, "key_datapoints")?,
            source,
            iteration,
        });
    }
    Ok(out)
}

#[derive(Serialize)]
struct WireHypothesis<'a> {
    id: &'a str,
    statement: &'a str,
    key_datapoints: &'a str,
}

/// Wrapped wire form, `{"hypothesis": [...]}`, pretty-printed.
pub fn hypotheses_to_json(hyps: &[Hypothesis]) -> String {
    let wire: Vec<WireHypothesis> = hyps
        .iter()
        .map(|h| WireHypothesis {
            id: &h.id,
            statement: &h.statement,
            key_datapoints: &h.key_datapoints,
        })
        .collect();
    let doc = serde_json::json!({ "hypothesis": wire });
    serde_json::to_string_pretty(&doc).expect("plain strings serialize")
}

/// Every accumulated statement must be copied byte-for-byte from a scientist.
pub fn check_verbatim(accumulated: &[Hypothesis], scientists: &[Hypothesis]) -> Result<(), AgentError> {
    for h in accumulated {
        if !scientists.iter().any(|s| s.statement == h.statement) {
            return Err(AgentError::NotVerbatim(h.id.clone()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Keep,
    Revise,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriticEntry {
    pub verdict: Verdict,
    pub excerpt: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriticReview {
    pub text: String,
    pub per_hypothesis: BTreeMap<String, CriticEntry>,
}

const EXCERPT_CHARS: usize = 240;

fn find_id(text: &str, id: &str) -> Option<usize> {
    let mut from = 0;
    while let Some(rel) = text[from..].find(id) {
        let at = from + rel;
        let end = at + id.len();
        let before_ok = text[..at]
            .chars()
            .next_back()
            .is_none_or(|c| !(c.is_alphanumeric() || c == '_'));
        let after_ok = text[end..]
            .chars()
            .next()
            .is_none_or(|c| !(c.is_alphanumeric() || c == '_'));
        if before_ok && after_ok {
            return Some(at);
        }
        from = end;
    }
    None
}

/// Splits the critique into per-hypothesis sections at each id's first
/// mention and assigns a keyword verdict to each.
pub fn parse_critic(text: &str, hypothesis_ids: &[String]) -> CriticReview {
    // critiques sometimes echo LaTeX-escaped ids
    let plain = text.replace("\\_", "_");
    let mut starts: Vec<(usize, &String)> = hypothesis_ids
        .iter()
        .filter_map(|id| find_id(&plain, id).map(|at| (at, id)))
        .collect();
    starts.sort();

    let mut per_hypothesis = BTreeMap::new();
    for id in hypothesis_ids {
        per_hypothesis.insert(
            id.clone(),
            CriticEntry {
                verdict: Verdict::Keep,
                excerpt: String::new(),
            },
        );
    }
    for (k, (at, id)) in starts.iter().enumerate() {
        let end = starts.get(k + 1).map(|(s, _)| *s).unwrap_or(plain.len());
        let section = &plain[*at..end];
        let lower = section.to_lowercase();
        let verdict = if lower.contains("reject") {
            Verdict::Reject
        } else if lower.contains("weakness") || lower.contains("flaw") {
            Verdict::Revise
        } else {
            Verdict::Keep
        };
        let excerpt: String = section.trim().chars().take(EXCERPT_CHARS).collect();
        per_hypothesis.insert((*id).clone(), CriticEntry { verdict, excerpt });
    }
    CriticReview {
        text: text.to_string(),
        per_hypothesis,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const PLANNER_OUTPUT: &str = r#"{
    "Agent1_instructions": "Focus on analyzing PAH distribution patterns in meteorite samples, specifically examining: 1) Basic PAHs like naphthalene (ID 1), fluoranthene (ID 12), and pyrene (ID 13), 2) Methylated PAHs including 2-methyl naphthalene (ID 2), 1-methyl naphthalene (ID 8), and trimethyl naphthalene (ID 15), 3) The relationship between these compounds specifically in CM2 chondrites (Murchison, ALH 83100, LON 94101)...",
    "Agent2_instructions": "Examine sulfur-bearing compounds (IDs 14, 27).",
    "Agent3_instructions": "Examine terpene-like compounds (IDs 4, 17, 18).",
}"#;

    const SCIENTIST_OUTPUT: &str = r#"[{
"id": "H_one",
"statement": "The presence of methylated naphthalenes (2-methyl naphthalene, 1-methyl naphthalene, trimethyl naphthalene) exclusively in meteorite samples but not in soil samples suggests that alkylation of PAHs occurs through abiotic processes in space rather than through biological activity.",
"key_datapoints": "IDs 2, 8, 15 found in meteorites (Orgueil, ALH 83100, LON 94101, Murchison, Jbilet Winselwan, LEW 85311) but absent in all soil samples"
},
{
"id": "H_two",
"statement": "The co-occurrence of fluoranthene and pyrene (IDs 12,13) specifically in Antarctic meteorites suggests these...",
"key_datapoints": "IDs 12,13 in LON 94101 and LEW 85311"
}]"#;

    const CRITIC_OUTPUT: &str = r"Thank you for providing the detailed hypotheses and data. I'll provide a structured critique of each hypothesis:

**H_final_one - Methylated Naphthalenes:**

**Strengths:**

- Clear correlation between methylated naphthalenes and meteoritic samples...

**Critical Weaknesses:**
1. Oversimplified causation - The exclusive presence in meteorites doesn't necessarily prove abiotic formation
2. Ignores potential preservation bias - Methylated naphthalenes may form biologically but preserve better in meteoritic matrices ...

**H_final_two - Fluoranthene/Pyrene:**

**Critical Flaws:**

1. Correlation != Causation - Co-occurrence doesn't prove similar formation mechanisms

2. Sample bias - Only examines Antarctic meteorites

**This hypothesis should be rejected due to insufficient evidence.**
";

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn extract_from_fences_and_prose() {
        assert_eq!(extract_json("```json\n{\"a\":1}\n```").unwrap(), "{\"a\":1}");
        assert_eq!(
            extract_json("Here is my plan: {\"Agent1_instructions\": \"...\"} Hope this helps").unwrap(),
            "{\"Agent1_instructions\": \"...\"}"
        );
        assert_eq!(extract_json("no json here"), Err(AgentError::NoJson));
        // bracketed prose that is not JSON is skipped
        assert_eq!(
            extract_json("see [note] then {\"b\": \"}\"}").unwrap(),
            "{\"b\": \"}\"}"
        );
        assert!(matches!(extract_json("{ broken: 1 }"), Err(AgentError::InvalidJson(_))));
    }

    #[test]
    fn repair_handles_template_drift() {
        let drifted =
            "{\n  \"Agent1_instructions\": \"Detailed instructions for\n    what Scientist 1 should focus on.\",\n}";
        let json = extract_json(drifted).unwrap();
        let v: Value = serde_json::from_str(&json).unwrap();
        assert_eq!(
            v["Agent1_instructions"],
            "Detailed instructions for\n    what Scientist 1 should focus on."
        );
    }

    #[test]
    fn planner_plan() {
        let plan = parse_planner_output(PLANNER_OUTPUT, 3).unwrap();
        assert_eq!(plan.instructions.len(), 3);
        assert!(plan.instruction(1).unwrap().contains("naphthalene (ID 1)"));
        assert_eq!(
            parse_planner_output(PLANNER_OUTPUT, 4),
            Err(AgentError::MissingKey("Agent4_instructions".into()))
        );
        let missing = r#"{"Agent1_instructions": "a", "Agent2_instructions": "b"}"#;
        assert_eq!(
            parse_planner_output(missing, 3).unwrap_err().to_string(),
            "missing key Agent3_instructions"
        );
        let empty = r#"{"Agent1_instructions": "  "}"#;
        assert!(matches!(
            parse_planner_output(empty, 1),
            Err(AgentError::EmptyInstruction(_))
        ));

        let json = serde_json::to_string(&plan).unwrap();
        assert!(json.starts_with("{\"Agent1_instructions\""));
        assert_eq!(serde_json::from_str::<PlannerPlan>(&json).unwrap(), plan);
    }

    #[test]
    fn scientist_output_both_shapes() {
        let bare = parse_hypotheses(SCIENTIST_OUTPUT, AgentRole::Scientist(1), 1).unwrap();
        assert_eq!(bare.len(), 2);
        assert!(bare[0].statement.starts_with("The presence of methylated naphthalenes"));
        assert_eq!(bare[1].id, "H_two");
        let wrapped = format!("{{\"hypothesis\": {SCIENTIST_OUTPUT}}}");
        assert_eq!(parse_hypotheses(&wrapped, AgentRole::Scientist(1), 1).unwrap(), bare);
    }

    #[test]
    fn scientist_output_errors() {
        let missing = r#"[{"id": "H_one", "statement": "s"}]"#;
        assert_eq!(
            parse_hypotheses(missing, AgentRole::Scientist(1), 1)
                .unwrap_err()
                .to_string(),
            "element 0 missing key_datapoints"
        );
        assert_eq!(
            parse_hypotheses(r#"{"hypotheses": []}"#, AgentRole::Scientist(1), 1),
            Err(AgentError::Shape)
        );
        let bad_id = r#"[{"id": "first", "statement": "s", "key_datapoints": "k"}]"#;
        assert!(matches!(
            parse_hypotheses(bad_id, AgentRole::Scientist(1), 1),
            Err(AgentError::BadId(_))
        ));
        let list_kd = r#"[{"id": "H_one", "statement": "s", "key_datapoints": ["ID 1", "ID 2"]}]"#;
        assert_eq!(
            parse_hypotheses(list_kd, AgentRole::Scientist(1), 1).unwrap()[0].key_datapoints,
            "ID 1; ID 2"
        );
    }

    #[test]
    fn critic_verdicts() {
        let review = parse_critic(CRITIC_OUTPUT, &ids(&["H_final_one", "H_final_two", "H_final_three"]));
        let v = |id: &str| review.per_hypothesis[id].verdict;
        assert_eq!(v("H_final_one"), Verdict::Revise);
        assert_eq!(v("H_final_two"), Verdict::Reject);
        assert_eq!(v("H_final_three"), Verdict::Keep);
        assert_eq!(review.text, CRITIC_OUTPUT);
        assert!(review.per_hypothesis["H_final_two"]
            .excerpt
            .starts_with("H_final_two - Fluoranthene"));

        let calm = parse_critic("All hypotheses are well supported.", &ids(&["H_final_one"]));
        assert_eq!(calm.per_hypothesis["H_final_one"].verdict, Verdict::Keep);
    }

    #[test]
    fn critic_ids_respect_word_boundaries() {
        let text = "H_final_twenty_one: reject.\nH_final_two: fine.";
        let review = parse_critic(text, &ids(&["H_final_two", "H_final_twenty_one"]));
        assert_eq!(review.per_hypothesis["H_final_two"].verdict, Verdict::Keep);
        assert_eq!(review.per_hypothesis["H_final_twenty_one"].verdict, Verdict::Reject);
        let escaped = parse_critic("H\\_final\\_one should be rejected", &ids(&["H_final_one"]));
        assert_eq!(escaped.per_hypothesis["H_final_one"].verdict, Verdict::Reject);
    }

    #[test]
    fn verbatim_contract() {
        let sci = parse_hypotheses(SCIENTIST_OUTPUT, AgentRole::Scientist(1), 1).unwrap();
        let mut acc = super::super::renumber_final(&sci);
        assert!(check_verbatim(&acc, &sci).is_ok());
        acc[1].statement.push('!');
        assert_eq!(
            check_verbatim(&acc, &sci),
            Err(AgentError::NotVerbatim("H_final_two".into()))
        );
    }

    fn arb_hyps() -> impl Strategy<Value = Vec<Hypothesis>> {
        prop::collection::vec(("\\PC{1,40}", "\\PC{1,40}"), 0..6).prop_map(|rows| {
            rows.into_iter()
                .enumerate()
                .filter(|(_, (s, k))| !s.trim().is_empty() && !k.trim().is_empty())
                .map(|(i, (s, k))| Hypothesis {
                    id: format!("H_{}", super::super::ordinal_word(i as u32 + 1)),
                    statement: s,
                    key_datapoints: k,
                    source: AgentRole::Scientist(2),
                    iteration: 4,
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn wire_round_trip(hyps in arb_hyps()) {
            let wrapped = hypotheses_to_json(&hyps);
            prop_assert_eq!(&parse_hypotheses(&wrapped, AgentRole::Scientist(2), 4).unwrap(), &hyps);
            let v: Value = serde_json::from_str(&wrapped).unwrap();
            let bare = serde_json::to_string(&v["hypothesis"]).unwrap();
            prop_assert_eq!(&parse_hypotheses(&bare, AgentRole::Scientist(2), 4).unwrap(), &hyps);
        }
    }
}
