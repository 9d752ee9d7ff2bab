use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{BackendKind, LlmError, Role, Tier, Usage};

/// Identity of a backend for accounting.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BackendKey {
    pub kind: BackendKind,
    pub model: String,
}

impl fmt::Display for BackendKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            BackendKind::Remote => "remote",
            BackendKind::Scripted => "scripted",
        };
        write!(f, "{kind}:{}", self.model)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub requests: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl Tally {
    fn add(&mut self, usage: Usage) {
        self.requests += 1;
        self.prompt_tokens += usage.prompt_tokens;
        self.completion_tokens += usage.completion_tokens;
    }

    fn merge(&mut self, other: &Tally) {
        self.requests += other.requests;
        self.prompt_tokens += other.prompt_tokens;
        self.completion_tokens += other.completion_tokens;
    }
}

/// Running totals per backend and per (backend, tier). Counters only grow.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct UsageLedger {
    by_backend_tier: BTreeMap<(BackendKey, Tier), Tally>,
}

impl UsageLedger {
    pub fn record(&mut self, backend: BackendKey, role: Role, usage: Usage) {
        self.by_backend_tier
            .entry((backend, role.tier()))
            .or_default()
            .add(usage);
    }

    /// Adds every tally of `other` into this ledger.
    pub fn merge(&mut self, other: &UsageLedger) {
        for (k, t) in &other.by_backend_tier {
            self.by_backend_tier.entry(k.clone()).or_default().merge(t);
        }
    }

    pub fn per_backend(&self) -> BTreeMap<BackendKey, Tally> {
        let mut out = BTreeMap::<BackendKey, Tally>::new();
        for ((b, _), t) in &self.by_backend_tier {
            out.entry(b.clone()).or_default().merge(t);
        }
        out
    }

    pub fn per_tier(&self) -> BTreeMap<Tier, Tally> {
        let mut out = BTreeMap::<Tier, Tally>::new();
        for ((_, tier), t) in &self.by_backend_tier {
            out.entry(*tier).or_default().merge(t);
        }
        out
    }

    pub fn tier(&self, tier: Tier) -> Tally {
        self.per_tier().get(&tier).copied().unwrap_or_default()
    }

    pub fn total(&self) -> Tally {
        let mut t = Tally::default();
        for v in self.by_backend_tier.values() {
            t.merge(v);
        }
        t
    }

    /// Prices every backend; scripted backends cost nothing.
    pub fn report(&self, prices: &PriceTable) -> Result<CostSummary, LlmError> {
        let mut tiers = BTreeMap::new();
        let mut cost = 0.0;
        for ((backend, tier), tally) in &self.by_backend_tier {
            let price = match backend.kind {
                BackendKind::Scripted => Price::FREE,
                BackendKind::Remote => prices.get(&backend.model).ok_or_else(|| {
                    LlmError::Config(format!("no price entry for model `{}`", backend.model))
                })?,
            };
            let c = price.cost(tally);
            cost += c;
            let entry: &mut TierCost = tiers.entry(*tier).or_default();
            entry.tally.merge(tally);
            entry.cost += c;
        }
        Ok(CostSummary {
            per_tier: tiers,
            per_backend: self
                .per_backend()
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
            total: self.total(),
            cost,
        })
    }
}

/// Currency units per 1000 tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Price {
    pub prompt_per_1k: f64,
    pub completion_per_1k: f64,
}

impl Price {
    pub const FREE: Price = Price { prompt_per_1k: 0.0, completion_per_1k: 0.0 };

    pub fn cost(&self, tally: &Tally) -> f64 {
        tally.prompt_tokens as f64 / 1000.0 * self.prompt_per_1k
            + tally.completion_tokens as f64 / 1000.0 * self.completion_per_1k
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PriceTable(pub BTreeMap<String, Price>);

impl PriceTable {
    pub fn insert(&mut self, model: impl Into<String>, price: Price) {
        self.0.insert(model.into(), price);
    }

    pub fn get(&self, model: &str) -> Option<Price> {
        self.0.get(model).copied()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TierCost {
    pub tally: Tally,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSummary {
    pub per_tier: BTreeMap<Tier, TierCost>,
    pub per_backend: BTreeMap<String, Tally>,
    pub total: Tally,
    pub cost: f64,
}

impl CostSummary {
    pub fn render(&self) -> String {
        let mut s = String::new();
        for (tier, tc) in &self.per_tier {
            s.push_str(&format!(
                "{tier:<15} requests={:<5} prompt={:<8} completion={:<8} cost={:.4}\n",
                tc.tally.requests, tc.tally.prompt_tokens, tc.tally.completion_tokens, tc.cost
            ));
        }
        s.push_str(&format!(
            "{:<15} requests={:<5} prompt={:<8} completion={:<8} cost={:.4}\n",
            "total", self.total.requests, self.total.prompt_tokens, self.total.completion_tokens, self.cost
        ));
        s
    }
}
