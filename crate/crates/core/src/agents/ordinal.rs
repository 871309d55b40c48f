use super::{AgentError, Hypothesis};

const ONES: [&str; 19] = [
    "one",
    "two",
    "three",
    "four",
    "five",
    "six",
    "seven",
    "eight",
    "nine",
    "ten",
    "eleven",
    "twelve",
    "thirteen",
    "fourteen",
    "fifteen",
    "sixteen",
    "seventeen",
    "eighteen",
    "nineteen",
];

const TENS: [&str; 8] = [
    "twenty", "thirty", "forty", "fifty", "sixty", "seventy", "eighty", "ninety",
];

/// Lowercase underscore-joined English word for 1..=99; numerals beyond.
pub fn ordinal_word(n: u32) -> String {
    match n {
        0 => "0".into(),
        1..=19 => ONES[n as usize - 1].into(),
        20..=99 => {
            let tens = TENS[n as usize / 10 - 2];
            match n % 10 {
                0 => tens.into(),
                r => format!("{tens}_{}", ONES[r as usize - 1]),
            }
        }
        _ => n.to_string(),
    }
}

fn parse_words(words: &str) -> Option<u32> {
    let lower = words.to_ascii_lowercase();
    let parts: Vec<&str> = lower.split(['_', '-']).collect();
    let ones = |w: &str| ONES.iter().position(|o| *o == w).map(|p| p as u32 + 1);
    let tens = |w: &str| TENS.iter().position(|t| *t == w).map(|p| p as u32 * 10 + 20);
    match parts.as_slice() {
        [w] => ones(w).or_else(|| tens(w)),
        [t, o] => {
            let o = ones(o).filter(|v| *v < 10)?;
            Some(tens(t)? + o)
        }
        _ => None,
    }
}

/// Position encoded in `H_one`, `H_final_twelve` or the drifted `H_3`.
pub fn word_index(id: &str) -> Result<u32, AgentError> {
    let bad = || AgentError::BadId(id.to_string());
    let rest = id.trim().strip_prefix("H_").ok_or_else(bad)?;
    let rest = rest.strip_prefix("final_").unwrap_or(rest);
    if !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()) {
        return rest.parse::<u32>().ok().filter(|n| *n > 0).ok_or_else(bad);
    }
    parse_words(rest).ok_or_else(bad)
}

/// Rewrites ids to `H_final_<word>` in list order; text fields are untouched.
pub fn renumber_final(hyps: &[Hypothesis]) -> Vec<Hypothesis> {
    hyps.iter()
        .enumerate()
        .map(|(k, h)| Hypothesis {
            id: format!("H_final_{}", ordinal_word(k as u32 + 1)),
            ..h.clone()
        })
        .collect()
}
