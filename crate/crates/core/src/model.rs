//! Problem instances: pools, request types and the patterns that serve them.
//!
//! Indices are zero-based in memory. Scenario files use one-based pool and
//! request-type indices.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("scenario schema: {0}")]
    Schema(String),
    #[error("invariant `{name}` violated: {detail}")]
    Invariant { name: &'static str, detail: String },
}

fn invariant(name: &'static str, detail: impl Into<String>) -> ModelError {
    ModelError::Invariant { name, detail: detail.into() }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pool {
    pub capacity: u32,
    pub cost_rate: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RequestType {
    pub arrival_rate: f64,
    pub reward: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pattern {
    pub request_type: usize,
    /// RUs per pool, length J.
    pub weights: Vec<u32>,
    /// Departure rate per instantiation. Unused for dummies.
    pub service_rate: f64,
    pub dummy: bool,
}

impl Pattern {
    pub fn pools(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.weights.iter().enumerate().filter(|(_, &w)| w > 0).map(|(j, &w)| (j, w))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowType {
    /// Pool used by at most one pattern.
    Unshared,
    /// Pool used by two or more patterns.
    Shared,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CouplingReport {
    pub weakly_coupled: bool,
    pub offending: Vec<usize>,
}

/// A validated instance. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemModel {
    pools: Vec<Pool>,
    request_types: Vec<RequestType>,
    patterns: Vec<Pattern>,
    dummy_of: Vec<usize>,
    sizes: Vec<usize>,
}

impl SystemModel {
    /// Builds a model from declared (non-dummy) patterns. One dummy per request
    /// type is appended after them, in request-type order.
    pub fn new(
        pools: Vec<Pool>,
        request_types: Vec<RequestType>,
        declared: Vec<Pattern>,
    ) -> Result<Self, ModelError> {
        let l_count = request_types.len();
        let j_count = pools.len();
        if l_count == 0 {
            return Err(invariant("nonempty", "no request types"));
        }
        if j_count == 0 {
            return Err(invariant("nonempty", "no pools"));
        }
        for (j, p) in pools.iter().enumerate() {
            if p.capacity < 1 {
                return Err(invariant("positive_capacity", format!("pool {} has capacity 0", j + 1)));
            }
            if !(p.cost_rate >= 0.0 && p.cost_rate.is_finite()) {
                return Err(invariant("nonnegative_cost", format!("pool {} cost {}", j + 1, p.cost_rate)));
            }
        }
        for (l, rt) in request_types.iter().enumerate() {
            if !(rt.arrival_rate > 0.0 && rt.arrival_rate.is_finite()) {
                return Err(invariant("positive_rates", format!("request type {} arrival rate", l + 1)));
            }
            if !(rt.reward > 0.0 && rt.reward.is_finite()) {
                return Err(invariant("positive_rates", format!("request type {} reward", l + 1)));
            }
        }

        let mut patterns = Vec::with_capacity(declared.len() + l_count);
        let mut explicit_dummy = vec![false; l_count];
        for (k, p) in declared.into_iter().enumerate() {
            if p.request_type >= l_count {
                return Err(invariant("pattern_owner", format!("pattern {} names request type {}", k + 1, p.request_type + 1)));
            }
            if p.weights.len() != j_count {
                return Err(ModelError::Schema(format!("pattern {} has {} weights, expected {}", k + 1, p.weights.len(), j_count)));
            }
            let zero = p.weights.iter().all(|&w| w == 0);
            if p.dummy {
                if !zero {
                    return Err(invariant("dummy_zero_weights", format!("dummy pattern {} has positive weights", k + 1)));
                }
                if explicit_dummy[p.request_type] {
                    return Err(invariant("one_dummy_per_type", format!("request type {} has two dummies", p.request_type + 1)));
                }
                explicit_dummy[p.request_type] = true;
                continue;
            }
            if zero {
                return Err(invariant("nondummy_positive_weight", format!("pattern {} has all-zero weights but is not a dummy", k + 1)));
            }
            if !(p.service_rate > 0.0 && p.service_rate.is_finite()) {
                return Err(invariant("positive_rates", format!("pattern {} service rate", k + 1)));
            }
            patterns.push(p);
        }
        let mut dummy_of = Vec::with_capacity(l_count);
        for l in 0..l_count {
            dummy_of.push(patterns.len());
            patterns.push(Pattern { request_type: l, weights: vec![0; j_count], service_rate: 1.0, dummy: true });
        }
        for j in 0..j_count {
            if !patterns.iter().any(|p| p.weights[j] > 0) {
                return Err(invariant("no_zero_row", format!("pool {} is used by no pattern", j + 1)));
            }
        }
        let sizes = patterns
            .iter()
            .map(|p| {
                if p.dummy {
                    1
                } else {
                    p.pools().map(|(j, w)| pools[j].capacity.div_ceil(w) as usize).min().unwrap() + 1
                }
            })
            .collect();
        Ok(SystemModel { pools, request_types, patterns, dummy_of, sizes })
    }

    pub fn num_pools(&self) -> usize {
        self.pools.len()
    }

    pub fn num_request_types(&self) -> usize {
        self.request_types.len()
    }

    pub fn num_patterns(&self) -> usize {
        self.patterns.len()
    }

    pub fn pools(&self) -> &[Pool] {
        &self.pools
    }

    pub fn request_types(&self) -> &[RequestType] {
        &self.request_types
    }

    pub fn patterns(&self) -> &[Pattern] {
        &self.patterns
    }

    pub fn pattern(&self, i: usize) -> &Pattern {
        &self.patterns[i]
    }

    pub fn dummy(&self, l: usize) -> usize {
        self.dummy_of[l]
    }

    pub fn patterns_of(&self, l: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.patterns.len()).filter(move |&i| self.patterns[i].request_type == l)
    }

    pub fn capacities(&self) -> Vec<f64> {
        self.pools.iter().map(|p| p.capacity as f64).collect()
    }

    /// |𝒩⁰_i|: number of states of one sub-process of pattern i.
    pub fn state_space_size(&self, i: usize) -> usize {
        self.sizes[i]
    }

    /// Total number of pattern-state pairs.
    pub fn num_pairs(&self) -> usize {
        self.sizes.iter().sum()
    }

    /// Σ_j ε_j w_{j,i}.
    pub fn cost_rate(&self, i: usize) -> f64 {
        self.patterns[i].pools().map(|(j, w)| self.pools[j].cost_rate * w as f64).sum()
    }

    /// Net revenue rate of one instantiation, r μ − Σ ε w. Zero for dummies.
    pub fn net_rate(&self, i: usize) -> f64 {
        let p = &self.patterns[i];
        if p.dummy {
            return 0.0;
        }
        self.request_types[p.request_type].reward * p.service_rate - self.cost_rate(i)
    }

    pub fn classify_rows(&self) -> Vec<RowType> {
        (0..self.pools.len())
            .map(|j| {
                let users = self.patterns.iter().filter(|p| p.weights[j] > 0).count();
                if users > 1 {
                    RowType::Shared
                } else {
                    RowType::Unshared
                }
            })
            .collect()
    }

    pub fn weak_coupling_check(&self) -> CouplingReport {
        let rows = self.classify_rows();
        let offending: Vec<usize> = (0..self.patterns.len())
            .filter(|&i| {
                !self.patterns[i].dummy
                    && self.patterns[i].pools().filter(|&(j, _)| rows[j] == RowType::Shared).count() > 1
            })
            .collect();
        CouplingReport { weakly_coupled: offending.is_empty(), offending }
    }

    /// Same model with every pattern's weights multiplied by `k`.
    pub fn with_scaled_weights(&self, k: u32) -> Result<Self, ModelError> {
        let declared = self
            .patterns
            .iter()
            .filter(|p| !p.dummy)
            .map(|p| Pattern { weights: p.weights.iter().map(|w| w * k).collect(), ..p.clone() })
            .collect();
        SystemModel::new(self.pools.clone(), self.request_types.clone(), declared)
    }

    /// Same model with rewards and cost rates multiplied by `k`.
    pub fn with_scaled_economics(&self, k: f64) -> Result<Self, ModelError> {
        let pools = self.pools.iter().map(|p| Pool { cost_rate: p.cost_rate * k, ..p.clone() }).collect();
        let rts = self.request_types.iter().map(|r| RequestType { reward: r.reward * k, ..r.clone() }).collect();
        let declared = self.patterns.iter().filter(|p| !p.dummy).cloned().collect();
        SystemModel::new(pools, rts, declared)
    }

    pub fn from_toml(doc: &str) -> Result<Self, ModelError> {
        let file: ScenarioFile = toml::from_str(doc).map_err(|e| ModelError::Schema(e.to_string()))?;
        file.into_model()
    }

    pub fn to_toml(&self) -> String {
        let file = ScenarioFile::from_model(self);
        toml::to_string(&file).expect("scenario serializes")
    }
}

impl fmt::Display for SystemModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "L={} J={} I={} ({} dummies)",
            self.num_request_types(),
            self.num_pools(),
            self.num_patterns(),
            self.num_request_types()
        )
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    pools: Vec<PoolEntry>,
    request_types: Vec<RequestTypeEntry>,
    patterns: Vec<PatternEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoolEntry {
    capacity: u32,
    cost_rate: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RequestTypeEntry {
    arrival_rate: f64,
    reward: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PatternEntry {
    request_type: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    service_rate: Option<f64>,
    /// One-based pool index to RU count.
    #[serde(default)]
    weights: BTreeMap<String, u32>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    dummy: bool,
}

impl ScenarioFile {
    fn into_model(self) -> Result<SystemModel, ModelError> {
        let j_count = self.pools.len();
        let pools = self.pools.into_iter().map(|p| Pool { capacity: p.capacity, cost_rate: p.cost_rate }).collect();
        let rts = self
            .request_types
            .into_iter()
            .map(|r| RequestType { arrival_rate: r.arrival_rate, reward: r.reward })
            .collect();
        let mut declared = Vec::new();
        for (k, p) in self.patterns.into_iter().enumerate() {
            if p.request_type == 0 {
                return Err(ModelError::Schema(format!("pattern {}: request_type is one-based", k + 1)));
            }
            let mut weights = vec![0u32; j_count];
            for (key, count) in p.weights {
                let j: usize = key
                    .trim()
                    .parse()
                    .map_err(|_| ModelError::Schema(format!("pattern {}: bad pool index `{key}`", k + 1)))?;
                if j == 0 || j > j_count {
                    return Err(ModelError::Schema(format!("pattern {}: pool index {j} out of range", k + 1)));
                }
                weights[j - 1] = count;
            }
            let service_rate = match (p.service_rate, p.dummy) {
                (Some(mu), _) => mu,
                (None, true) => 1.0,
                (None, false) => return Err(ModelError::Schema(format!("pattern {}: missing service_rate", k + 1))),
            };
            declared.push(Pattern { request_type: p.request_type - 1, weights, service_rate, dummy: p.dummy });
        }
        SystemModel::new(pools, rts, declared)
    }

    fn from_model(m: &SystemModel) -> Self {
        ScenarioFile {
            pools: m.pools.iter().map(|p| PoolEntry { capacity: p.capacity, cost_rate: p.cost_rate }).collect(),
            request_types: m
                .request_types
                .iter()
                .map(|r| RequestTypeEntry { arrival_rate: r.arrival_rate, reward: r.reward })
                .collect(),
            patterns: m
                .patterns
                .iter()
                .filter(|p| !p.dummy)
                .map(|p| PatternEntry {
                    request_type: p.request_type + 1,
                    service_rate: Some(p.service_rate),
                    weights: p.pools().map(|(j, w)| ((j + 1).to_string(), w)).collect(),
                    dummy: false,
                })
                .collect(),
        }
    }
}
