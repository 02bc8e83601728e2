//! The relaxed priority policy in fluid coordinates.
//!
//! Pairs are visited in ranking order and activated until the owning request
//! type's arrival budget or some pool's capacity is used up. The result is the
//! limiting occupation of every pattern-state pair together with the
//! multipliers and critical pools that the visit produces.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

use crate::model::{RowType, SystemModel};
use crate::subproblem::{index_value, tie_tolerance};

/// Residual budgets and capacities at or below this are exhausted.
pub const EXHAUSTION_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pair {
    pub pattern: usize,
    pub state: usize,
}

impl fmt::Display for Pair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.pattern + 1, self.state)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum RelaxedError {
    #[error("invalid ranking: {0}")]
    Ranking(String),
    #[error("multiplier for pool {pool} is negative ({value})")]
    NegativeGamma { pool: usize, value: f64 },
}

/// An ordering of all pattern-state pairs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ranking {
    pairs: Vec<Pair>,
}

pub enum TieBreak<'a> {
    Canonical,
    Previous(&'a Ranking),
}

impl Ranking {
    /// Validates coverage, within-pattern state order and boundary placement.
    pub fn new(model: &SystemModel, pairs: Vec<Pair>) -> Result<Self, RelaxedError> {
        if pairs.len() != model.num_pairs() {
            return Err(RelaxedError::Ranking(format!("{} pairs, expected {}", pairs.len(), model.num_pairs())));
        }
        let mut seen = vec![Vec::new(); model.num_patterns()];
        let mut in_tail = false;
        for p in &pairs {
            if p.pattern >= model.num_patterns() || p.state >= model.state_space_size(p.pattern) {
                return Err(RelaxedError::Ranking(format!("pair {p} out of range")));
            }
            let boundary = is_boundary(model, *p);
            if in_tail && !boundary {
                return Err(RelaxedError::Ranking(format!("pair {p} ranked after a boundary pair")));
            }
            in_tail |= boundary;
            if !boundary {
                if seen[p.pattern].len() != p.state {
                    return Err(RelaxedError::Ranking(format!("pair {p} out of state order")));
                }
                seen[p.pattern].push(p.state);
            }
        }
        let expected: usize = (0..model.num_patterns()).map(|i| non_boundary_count(model, i)).sum();
        let got: usize = seen.iter().map(Vec::len).sum();
        if got != expected {
            return Err(RelaxedError::Ranking("pairs missing".into()));
        }
        Ok(Ranking { pairs })
    }

    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn positions(&self) -> HashMap<Pair, usize> {
        self.pairs.iter().enumerate().map(|(k, p)| (*p, k)).collect()
    }

    /// Patterns ordered by the position of their first ranked pair.
    pub fn pattern_order(&self, model: &SystemModel) -> Vec<usize> {
        let mut seen = vec![false; model.num_patterns()];
        let mut order = Vec::with_capacity(model.num_patterns());
        for p in &self.pairs {
            if !seen[p.pattern] {
                seen[p.pattern] = true;
                order.push(p.pattern);
            }
        }
        order
    }
}

pub fn is_boundary(model: &SystemModel, p: Pair) -> bool {
    !model.pattern(p.pattern).dummy && p.state + 1 == model.state_space_size(p.pattern)
}

fn non_boundary_count(model: &SystemModel, i: usize) -> usize {
    if model.pattern(i).dummy {
        1
    } else {
        model.state_space_size(i) - 1
    }
}

fn all_pairs(model: &SystemModel) -> Vec<Pair> {
    (0..model.num_patterns())
        .flat_map(|i| (0..model.state_space_size(i)).map(move |n| Pair { pattern: i, state: n }))
        .collect()
}

/// Sorts pairs by descending Ξ of their pattern. Pairs whose values agree
/// within the tie tolerance keep the relative order of `tie_break`.
/// Boundary pairs go last.
pub fn rank_pairs(model: &SystemModel, gamma: &[f64], nu: &[f64], tie_break: TieBreak) -> Ranking {
    rank_by(model, |i| index_value(model, i, gamma, nu), tie_break)
}

pub(crate) fn rank_by(model: &SystemModel, key: impl Fn(usize) -> f64, tie_break: TieBreak) -> Ranking {
    let xi: Vec<f64> = (0..model.num_patterns()).map(key).collect();
    let prev_pos = match tie_break {
        TieBreak::Canonical => None,
        TieBreak::Previous(r) => Some(r.positions()),
    };
    let pos = |p: &Pair| -> (usize, usize, usize) {
        match &prev_pos {
            Some(m) => (m[p], 0, 0),
            None => (0, p.pattern, p.state),
        }
    };
    let (mut body, mut tail): (Vec<Pair>, Vec<Pair>) = all_pairs(model).into_iter().partition(|p| !is_boundary(model, *p));
    body.sort_by(|a, b| xi[b.pattern].total_cmp(&xi[a.pattern]).then_with(|| pos(a).cmp(&pos(b))));
    // Runs of near-equal values fall back to the tie-break order.
    let mut start = 0;
    while start < body.len() {
        let head = body[start].pattern;
        let mut end = start + 1;
        while end < body.len() {
            let q = body[end].pattern;
            let tol = tie_tolerance(model, head).max(tie_tolerance(model, q));
            if xi[head] - xi[q] > tol {
                break;
            }
            end += 1;
        }
        body[start..end].sort_by_key(|p| pos(p));
        start = end;
    }
    tail.sort_by_key(|p| pos(p));
    body.extend(tail);
    Ranking { pairs: body }
}

/// True if `o` lists non-boundary pairs in non-increasing Ξ(γ, 0) order up to
/// the tie tolerance.
pub fn is_consistent(model: &SystemModel, o: &Ranking, gamma: &[f64]) -> bool {
    let nu = vec![0.0; model.num_request_types()];
    let xi: Vec<f64> = (0..model.num_patterns()).map(|i| index_value(model, i, gamma, &nu)).collect();
    let body: Vec<&Pair> = o.pairs.iter().filter(|p| !is_boundary(model, **p)).collect();
    // Against the running minimum so that a long chain of small slips is caught.
    let mut lowest: Option<usize> = None;
    for p in body {
        if let Some(m) = lowest {
            let tol = tie_tolerance(model, m).max(tie_tolerance(model, p.pattern));
            if xi[p.pattern] > xi[m] + tol {
                return false;
            }
            if xi[p.pattern].total_cmp(&xi[m]) == Ordering::Less {
                lowest = Some(p.pattern);
            }
        } else {
            lowest = Some(p.pattern);
        }
    }
    true
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CriticalPair {
    pub position: usize,
    pub pair: Pair,
    pub pool: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelaxedSolution {
    /// ρ per ranking position.
    pub activation: Vec<f64>,
    /// ν(o, γ) per request type.
    pub nu: Vec<f64>,
    /// Ranking position at which each request type's budget ran out.
    pub exhausted_at: Vec<Option<usize>>,
    pub critical: Vec<CriticalPair>,
    /// Limiting proportion of sub-processes per ranking position; sums to 1.
    pub z: Vec<f64>,
    /// Instantiations per unit of scale, per pattern.
    pub occupancy: Vec<f64>,
    /// Served throughput per unit of scale, per request type.
    pub throughput: Vec<f64>,
    /// RUs in use per unit of scale, per pool.
    pub usage: Vec<f64>,
    pub revenue: f64,
}

impl RelaxedSolution {
    pub fn critical_pools(&self) -> Vec<usize> {
        self.critical.iter().map(|c| c.pool).collect()
    }
}

/// Reservation fractions ε̄ indexed by pool then ranking position.
pub type Reservation = Vec<Vec<f64>>;

/// Runs the relaxed priority policy for ranking `o` under multipliers γ.
pub fn priority_policy(
    model: &SystemModel,
    o: &Ranking,
    gamma: &[f64],
    reserve: Option<&Reservation>,
) -> Result<RelaxedSolution, RelaxedError> {
    if o.len() != model.num_pairs() {
        return Err(RelaxedError::Ranking(format!("{} pairs, expected {}", o.len(), model.num_pairs())));
    }
    if let Some((j, &g)) = gamma.iter().enumerate().find(|(_, g)| **g < 0.0) {
        return Err(RelaxedError::NegativeGamma { pool: j, value: g });
    }
    let n_l = model.num_request_types();
    let n_j = model.num_pools();
    let n_i = model.num_patterns();
    let rows = model.classify_rows();
    let zero_nu = vec![0.0; n_l];

    let mut budget: Vec<f64> = model.request_types().iter().map(|r| r.arrival_rate).collect();
    let mut used = vec![0.0; n_j];
    let mut rt_done = vec![false; n_l];
    let mut pool_done = vec![false; n_j];
    let mut nu = vec![0.0; n_l];
    let mut exhausted_at = vec![None; n_l];
    let mut full_steps = vec![0usize; n_i];
    let mut partial = vec![0.0; n_i];
    let mut activation = vec![0.0; o.len()];
    let mut critical = Vec::new();

    for (pos, &pair) in o.pairs.iter().enumerate() {
        let i = pair.pattern;
        let p = model.pattern(i);
        let l = p.request_type;
        if rt_done[l] {
            continue;
        }
        if p.dummy {
            rt_done[l] = true;
            continue;
        }
        if is_boundary(model, pair) || p.pools().any(|(j, _)| pool_done[j]) {
            continue;
        }
        let cap = |j: usize| {
            let eps = reserve.map_or(0.0, |r| r[j][pos]);
            model.pools()[j].capacity as f64 * (1.0 - eps)
        };
        let mut rho = (budget[l] / p.service_rate).min(1.0);
        for (j, w) in p.pools() {
            rho = rho.min((cap(j) - used[j]) / w as f64);
        }
        let rho = rho.max(0.0);
        activation[pos] = rho;
        if rho >= 1.0 {
            full_steps[i] += 1;
        } else {
            partial[i] = rho;
        }
        budget[l] -= rho * p.service_rate;
        for (j, w) in p.pools() {
            used[j] += rho * w as f64;
        }
        if budget[l] <= EXHAUSTION_TOL {
            nu[l] = index_value(model, i, gamma, &zero_nu);
            rt_done[l] = true;
            exhausted_at[l] = Some(pos);
            continue;
        }
        let saturated: Vec<usize> = p.pools().map(|(j, _)| j).filter(|&j| cap(j) - used[j] <= EXHAUSTION_TOL).collect();
        if let Some(&j) = saturated.iter().find(|&&j| rows[j] == RowType::Shared).or(saturated.first()) {
            pool_done[j] = true;
            critical.push(CriticalPair { position: pos, pair, pool: j });
        }
    }

    let positions = o.positions();
    let mass = 1.0 / n_i as f64;
    let mut z = vec![0.0; o.len()];
    let mut occupancy = vec![0.0; n_i];
    for i in 0..n_i {
        let s = full_steps[i];
        let f = partial[i];
        occupancy[i] = s as f64 + f;
        z[positions[&Pair { pattern: i, state: s }]] += mass * (1.0 - f);
        if f > 0.0 {
            z[positions[&Pair { pattern: i, state: s + 1 }]] += mass * f;
        }
    }
    let mut throughput = vec![0.0; n_l];
    let mut usage = vec![0.0; n_j];
    for i in 0..n_i {
        let p = model.pattern(i);
        if p.dummy {
            continue;
        }
        throughput[p.request_type] += occupancy[i] * p.service_rate;
        for (j, w) in p.pools() {
            usage[j] += occupancy[i] * w as f64;
        }
    }
    let revenue = asymptotic_revenue(model, o, &z);
    Ok(RelaxedSolution { activation, nu, exhausted_at, critical, z, occupancy, throughput, usage, revenue })
}

/// R = I·Σ_ι (r μ − Σ w ε)·n_ι·z_ι.
pub fn asymptotic_revenue(model: &SystemModel, o: &Ranking, z: &[f64]) -> f64 {
    let scale = model.num_patterns() as f64;
    o.pairs
        .iter()
        .zip(z)
        .map(|(p, &zi)| model.net_rate(p.pattern) * p.state as f64 * zi)
        .sum::<f64>()
        * scale
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::model::{Pattern, Pool, RequestType};
    use approx::assert_relative_eq;

    fn single(capacity: u32, weight: u32, arrival: f64) -> SystemModel {
        SystemModel::new(
            vec![Pool { capacity, cost_rate: 1.0 }],
            vec![RequestType { arrival_rate: arrival, reward: 10.0 }],
            vec![Pattern { request_type: 0, weights: vec![weight], service_rate: 1.0, dummy: false }],
        )
        .unwrap()
    }

    #[test]
    fn ranking_orders_by_index() {
        // Ξ = 8 for the first pattern and 6 for the second.
        let m = SystemModel::new(
            vec![Pool { capacity: 2, cost_rate: 2.0 }],
            vec![RequestType { arrival_rate: 1.0, reward: 10.0 }],
            vec![
                Pattern { request_type: 0, weights: vec![2], service_rate: 2.0, dummy: false },
                Pattern { request_type: 0, weights: vec![1], service_rate: 1.0, dummy: false },
            ],
        )
        .unwrap();
        let o = rank_pairs(&m, &[0.0], &[0.0], TieBreak::Canonical);
        let first: Vec<usize> = o.pairs().iter().map(|p| p.pattern).collect();
        // Both patterns have Ξ = 8 at γ = 0; the canonical order decides.
        assert_eq!(first[0], 0);
        let o = rank_pairs(&m, &[1.0], &[0.0], TieBreak::Canonical);
        // Ξ_0 = 8 − 1.5·2 = 5, Ξ_1 = 8 − 2 = 6.
        assert_eq!(o.pairs()[0].pattern, 1);
        assert!(Ranking::new(&m, o.pairs().to_vec()).is_ok());
    }

    #[test]
    fn ties_inherit_previous_order() {
        let m = SystemModel::new(
            vec![Pool { capacity: 1, cost_rate: 0.0 }],
            vec![RequestType { arrival_rate: 1.0, reward: 1.0 }],
            vec![
                Pattern { request_type: 0, weights: vec![1], service_rate: 1.0, dummy: false },
                Pattern { request_type: 0, weights: vec![1], service_rate: 1.0, dummy: false },
            ],
        )
        .unwrap();
        let prev = Ranking::new(
            &m,
            vec![
                Pair { pattern: 1, state: 0 },
                Pair { pattern: 0, state: 0 },
                Pair { pattern: 2, state: 0 },
                Pair { pattern: 0, state: 1 },
                Pair { pattern: 1, state: 1 },
            ],
        )
        .unwrap();
        let o = rank_pairs(&m, &[0.0], &[0.0], TieBreak::Previous(&prev));
        assert_eq!(o, prev);
    }

    #[test]
    fn dummy_moves_up_when_index_negative() {
        let m = single(3, 1, 1.0);
        let o = rank_pairs(&m, &[100.0], &[0.0], TieBreak::Canonical);
        assert!(m.pattern(o.pairs()[0].pattern).dummy);
    }

    #[test]
    fn light_load_exhausts_budget() {
        // λ = 1.5, μ = 1: balance at occupancy 1.5, below capacity 3.
        let m = single(3, 1, 1.5);
        let o = rank_pairs(&m, &[0.0], &[0.0], TieBreak::Canonical);
        let s = priority_policy(&m, &o, &[0.0], None).unwrap();
        assert!(s.critical.is_empty());
        assert_relative_eq!(s.nu[0], index_value(&m, 0, &[0.0], &[0.0]));
        assert_relative_eq!(s.occupancy[0], 1.5, epsilon = 1e-12);
        let pos = o.positions();
        let z1 = s.z[pos[&Pair { pattern: 0, state: 1 }]];
        let z2 = s.z[pos[&Pair { pattern: 0, state: 2 }]];
        assert_relative_eq!(z1, 0.25, epsilon = 1e-12);
        assert_relative_eq!(z2, 0.25, epsilon = 1e-12);
        assert_relative_eq!(s.z.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn heavy_load_binds_capacity() {
        let m = single(4, 2, 50.0);
        let o = rank_pairs(&m, &[0.0], &[0.0], TieBreak::Canonical);
        let s = priority_policy(&m, &o, &[0.0], None).unwrap();
        assert_eq!(s.critical.len(), 1);
        assert_eq!(s.critical[0].pool, 0);
        assert_eq!(s.critical[0].pair, Pair { pattern: 0, state: 1 });
        assert_eq!(s.nu[0], 0.0);
        assert_relative_eq!(s.usage[0], 4.0, epsilon = 1e-12);
        // C/w·(rμ − Σwε) = 2·(10 − 2).
        assert_relative_eq!(s.revenue, 16.0, epsilon = 1e-10);
    }

    #[test]
    fn everything_negative_earns_nothing() {
        let m = single(3, 1, 1.0);
        let o = rank_pairs(&m, &[100.0], &[0.0], TieBreak::Canonical);
        let s = priority_policy(&m, &o, &[100.0], None).unwrap();
        assert_eq!(s.revenue, 0.0);
        assert!(s.activation.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn revenue_of_point_mass() {
        let m = single(3, 1, 1.0);
        let o = rank_pairs(&m, &[0.0], &[0.0], TieBreak::Canonical);
        let pos = o.positions();
        let mut z = vec![0.0; o.len()];
        z[pos[&Pair { pattern: 0, state: 2 }]] = 0.5;
        z[pos[&Pair { pattern: 1, state: 0 }]] = 0.5;
        // I·m·n·(rμ − Σwε) = 2·0.5·2·9.
        assert_relative_eq!(asymptotic_revenue(&m, &o, &z), 18.0);
    }

    #[test]
    fn negative_gamma_rejected() {
        let m = single(3, 1, 1.0);
        let o = rank_pairs(&m, &[0.0], &[0.0], TieBreak::Canonical);
        assert!(matches!(priority_policy(&m, &o, &[-1.0], None), Err(RelaxedError::NegativeGamma { .. })));
    }

    #[test]
    fn ranking_validation() {
        let m = single(2, 1, 1.0);
        let bad = vec![Pair { pattern: 0, state: 1 }, Pair { pattern: 0, state: 0 }, Pair { pattern: 1, state: 0 }];
        assert!(Ranking::new(&m, bad).is_err());
        let short = vec![Pair { pattern: 0, state: 0 }];
        assert!(Ranking::new(&m, short).is_err());
    }

    #[test]
    fn fig1b_at_zero_has_two_critical_pools() {
        let m = fixtures::fig1b();
        let o = rank_pairs(&m, &[0.0; 6], &[0.0; 2], TieBreak::Canonical);
        let s = priority_policy(&m, &o, &[0.0; 6], None).unwrap();
        // Type 1 fits entirely; type 2 needs ten RUs of pool 6 and is cut off.
        assert!(s.nu[0] > 0.0);
        assert_eq!(s.nu[1], 0.0);
        assert!(!s.critical.is_empty());
    }
}
