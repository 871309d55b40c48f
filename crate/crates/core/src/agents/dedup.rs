use std::collections::BTreeSet;

use super::Hypothesis;

pub const DEFAULT_DUP_THRESHOLD: f64 = 0.9;

/// Lowercase, punctuation removed, whitespace collapsed.
pub fn normalize_statement(s: &str) -> String {
    let kept: String = s
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect();
    kept.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn token_set(s: &str) -> BTreeSet<String> {
    normalize_statement(s)
        .split(' ')
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Token-set Jaccard similarity of two statements. Two empty sets are identical.
pub fn jaccard(a: &str, b: &str) -> f64 {
    let (a, b) = (token_set(a), token_set(b));
    let union = a.union(&b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

/// Drops each hypothesis whose statement is at least `threshold` similar to
/// an earlier kept one. Returns (kept, dropped), both in input order.
pub fn prefilter_duplicates(hyps: &[Hypothesis], threshold: f64) -> (Vec<Hypothesis>, Vec<Hypothesis>) {
    let mut kept: Vec<Hypothesis> = Vec::new();
    let mut dropped = Vec::new();
    for h in hyps {
        if kept.iter().any(|k| jaccard(&k.statement, &h.statement) >= threshold) {
            dropped.push(h.clone());
        } else {
            kept.push(h.clone());
        }
    }
    (kept, dropped)
}

#[cfg(test)]
mod tests {
    use super::super::AgentRole;
    use super::*;
    use proptest::prelude::*;

    fn hyp(statement: &str) -> Hypothesis {
        Hypothesis {
            id: "H_one".into(),
            statement: statement.into(),
            key_datapoints: "kd".into(),
            source: AgentRole::Scientist(1),
            iteration: 1,
        }
    }

    #[test]
    fn normalization() {
        assert_eq!(
            normalize_statement("  The PAHs,\n (IDs 12, 13)!  "),
            "the pahs ids 12 13"
        );
    }

    #[test]
    fn identical_and_disjoint() {
        let (kept, dropped) = prefilter_duplicates(&[hyp("same text"), hyp("same text")], 0.9);
        assert_eq!((kept.len(), dropped.len()), (1, 1));
        let (kept, dropped) = prefilter_duplicates(&[hyp("alpha beta"), hyp("gamma delta")], 0.9);
        assert_eq!((kept.len(), dropped.len()), (2, 0));
    }

    #[test]
    fn nine_of_eleven_shared() {
        let a = "t1 t2 t3 t4 t5 t6 t7 t8 t9 a10";
        let b = "t1 t2 t3 t4 t5 t6 t7 t8 t9 b10";
        // |A ∩ B| = 9, |A ∪ B| = 11
        let expected = 9.0 / 11.0;
        assert!((jaccard(a, b) - expected).abs() < 1e-12);
        let (kept, dropped) = prefilter_duplicates(&[hyp(a), hyp(b)], 0.8);
        assert_eq!(kept[0].statement, a);
        assert_eq!(dropped[0].statement, b);
        let (_, dropped) = prefilter_duplicates(&[hyp(a), hyp(b)], 0.9);
        assert!(dropped.is_empty());
    }

    proptest! {
        #[test]
        fn partition_of_input(words in prop::collection::vec(prop::collection::vec("[a-d]{1,2}", 0..6), 0..8), t in 0.0f64..=1.0) {
            let hyps: Vec<_> = words.iter().map(|w| hyp(&w.join(" "))).collect();
            let (kept, dropped) = prefilter_duplicates(&hyps, t);
            prop_assert_eq!(kept.len() + dropped.len(), hyps.len());
            // kept preserves input order
            let mut it = hyps.iter();
            for k in &kept {
                prop_assert!(it.any(|h| h == k));
            }
            for d in &dropped {
                prop_assert!(hyps.contains(d));
            }
        }
    }
}
