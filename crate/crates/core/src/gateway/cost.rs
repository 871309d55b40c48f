use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::iter::Sum;
use std::ops::Add;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::ChatExchange;

const PICO: f64 = 1e12;

/// US dollars held as integer picodollars, so sums are exact and
/// independent of order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Usd(u64);

impl Usd {
    pub const ZERO: Usd = Usd(0);

    pub fn from_pico(pico: u64) -> Self {
        Usd(pico)
    }

    /// Nearest picodollar; negative and non-finite inputs clamp to zero.
    pub fn from_f64(dollars: f64) -> Self {
        if dollars.is_finite() && dollars > 0.0 {
            Usd((dollars * PICO).round() as u64)
        } else {
            Usd(0)
        }
    }

    pub fn pico(self) -> u64 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / PICO
    }
}

impl Add for Usd {
    type Output = Usd;

    fn add(self, rhs: Usd) -> Usd {
        Usd(self.0 + rhs.0)
    }
}

impl Sum for Usd {
    fn sum<I: Iterator<Item = Usd>>(iter: I) -> Usd {
        iter.fold(Usd::ZERO, Add::add)
    }
}

impl fmt::Display for Usd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "${:.6}", self.as_f64())
    }
}

impl Serialize for Usd {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.as_f64())
    }
}

impl<'de> Deserialize<'de> for Usd {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        if v < 0.0 || !v.is_finite() {
            return Err(serde::de::Error::custom("cost must be a non-negative number"));
        }
        Ok(Usd::from_f64(v))
    }
}

/// Per-token prices in USD.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rates {
    #[serde(rename = "rate_in")]
    pub input: Usd,
    #[serde(rename = "rate_out")]
    pub output: Usd,
}

impl Rates {
    pub fn per_token(rate_in: f64, rate_out: f64) -> Self {
        Rates {
            input: Usd::from_f64(rate_in),
            output: Usd::from_f64(rate_out),
        }
    }

    pub fn cost(&self, input_tokens: u64, output_tokens: u64) -> Usd {
        Usd(input_tokens * self.input.pico() + output_tokens * self.output.pico())
    }
}

pub fn ledger_total(exchanges: &[ChatExchange]) -> Usd {
    exchanges.iter().map(|e| e.cost).sum()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LedgerSummary {
    pub total: Usd,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub calls: usize,
    pub by_role: BTreeMap<String, Usd>,
    pub by_iteration: BTreeMap<u32, Usd>,
}

pub fn summarize(exchanges: &[ChatExchange]) -> LedgerSummary {
    let mut s = LedgerSummary::default();
    for e in exchanges {
        s.total = s.total + e.cost;
        s.input_tokens += e.input_tokens;
        s.output_tokens += e.output_tokens;
        s.calls += 1;
        let role = s.by_role.entry(e.request.role.key()).or_default();
        *role = *role + e.cost;
        let iter = s.by_iteration.entry(e.request.iteration).or_default();
        *iter = *iter + e.cost;
    }
    s
}

/// One exchange per line.
pub fn write_jsonl(path: &Path, exchanges: &[ChatExchange]) -> std::io::Result<()> {
    let mut out = Vec::new();
    for e in exchanges {
        serde_json::to_writer(&mut out, e)?;
        out.push(b'\n');
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&out)?;
    file.sync_all()
}

pub fn read_jsonl(path: &Path) -> std::io::Result<Vec<ChatExchange>> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in file.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::{ChatExchange, ChatRequest};
    use super::*;
    use crate::agents::AgentRole;
    use proptest::prelude::*;

    fn exchange(role: AgentRole, iteration: u32, cost: Usd) -> ChatExchange {
        ChatExchange {
            request: ChatRequest::new(role, "p", "demo", iteration).unwrap(),
            response_text: String::new(),
            input_tokens: 0,
            output_tokens: 0,
            cost,
            latency_s: 0.0,
            attempts: 1,
        }
    }

    #[test]
    fn cost_arithmetic() {
        let rates = Rates::per_token(3e-6, 15e-6);
        let cost = rates.cost(1000, 500);
        // 1000 * 3e-6 + 500 * 15e-6
        assert_eq!(cost.pico(), 3_000_000_000 + 7_500_000_000);
        assert!((cost.as_f64() - 0.0105).abs() < 1e-15);
        assert_eq!(cost.to_string(), "$0.010500");
    }

    #[test]
    fn totals() {
        assert_eq!(ledger_total(&[]), Usd::ZERO);
        let xs = [
            exchange(AgentRole::Planner, 1, Usd::from_f64(0.01)),
            exchange(AgentRole::Critic, 2, Usd::from_f64(0.02)),
        ];
        assert_eq!(ledger_total(&xs), Usd::from_f64(0.03));
        let s = summarize(&xs);
        assert_eq!(s.by_role["critic"], Usd::from_f64(0.02));
        assert_eq!(s.by_iteration[&1], Usd::from_f64(0.01));
        assert_eq!(s.calls, 2);
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        let xs = vec![
            exchange(AgentRole::Scientist(2), 3, Usd::from_pico(10_500_000_000)),
            exchange(AgentRole::Accumulator, 3, Usd::from_pico(7)),
        ];
        write_jsonl(&path, &xs).unwrap();
        assert_eq!(read_jsonl(&path).unwrap(), xs);
    }

    proptest! {
        #[test]
        fn total_is_permutation_invariant(picos in prop::collection::vec(0u64..1_000_000_000_000, 0..20), seed in any::<u64>()) {
            let xs: Vec<_> = picos.iter().map(|p| exchange(AgentRole::Critic, 1, Usd::from_pico(*p))).collect();
            let mut shuffled = xs.clone();
            let n = shuffled.len();
            if n > 1 {
                let mut s = seed;
                for i in (1..n).rev() {
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    shuffled.swap(i, (s >> 33) as usize % (i + 1));
                }
            }
            prop_assert_eq!(ledger_total(&xs), ledger_total(&shuffled));
            prop_assert_eq!(ledger_total(&xs).pico(), picos.iter().sum::<u64>());
        }

        #[test]
        fn usd_serde_round_trip(pico in 0u64..100_000_000_000_000) {
            let u = Usd::from_pico(pico);
            let back: Usd = serde_json::from_str(&serde_json::to_string(&u).unwrap()).unwrap();
            prop_assert_eq!(back, u);
        }
    }
}
