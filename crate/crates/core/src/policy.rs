//! Admission policies for the original (unrelaxed) system.
//!
//! The index policy walks patterns in priority order and gives each request
//! type the first pattern whose reservation-tightened capacity check passes,
//! counting RUs already promised to higher-priority request types. Max-Reward
//! and Min-Cost are the same greedy rule under a different order. Random picks
//! uniformly among patterns that fit at the arrival epoch.

use rand::Rng;

use crate::model::SystemModel;
use crate::relaxed::Ranking;

/// Reservation fractions ε̄ per pool and pattern.
#[derive(Clone, Debug, PartialEq)]
pub struct EpsilonSchedule {
    /// eps[j][i]; zero where pattern i does not use pool j.
    pub eps: Vec<Vec<f64>>,
    pub eps_m: f64,
    /// ε_M was positive but below some pattern's base value.
    pub clamped: bool,
}

impl EpsilonSchedule {
    pub fn max_entry(&self) -> f64 {
        self.eps.iter().flatten().fold(0.0, |m: f64, &e| m.max(e))
    }
}

/// Base value (w−1)/C for every user of every pool; then, for ε_M > 0, a
/// linear ramp ε_M·(k+1)/m over the pool's m users in priority order, never
/// below the base value.
pub fn epsilon_schedule(model: &SystemModel, order: &[usize], eps_m: f64, caps: &[f64]) -> EpsilonSchedule {
    assert!((0.0..=1.0).contains(&eps_m), "ε_M must lie in [0,1]");
    let j_count = model.num_pools();
    let mut eps = vec![vec![0.0; model.num_patterns()]; j_count];
    let mut clamped = false;
    for j in 0..j_count {
        let users: Vec<usize> = order
            .iter()
            .copied()
            .filter(|&i| !model.pattern(i).dummy && model.pattern(i).weights[j] > 0)
            .collect();
        let m = users.len();
        for (k, &i) in users.iter().enumerate() {
            let base = (model.pattern(i).weights[j] as f64 - 1.0) / caps[j];
            let ramp = eps_m * (k + 1) as f64 / m as f64;
            if eps_m > 0.0 && base > eps_m {
                clamped = true;
            }
            eps[j][i] = base.max(ramp);
        }
    }
    EpsilonSchedule { eps, eps_m, clamped }
}

/// Greedy admission rule shared by the index policy and the two ordered
/// baselines.
#[derive(Clone, Debug)]
pub struct GreedyRule {
    /// All patterns, highest priority first. Dummies included.
    pub order: Vec<usize>,
    /// limit[i][j] = ⌈C_j(1 − ε̄_{j,i})⌉ for pools used by i.
    limit: Vec<Vec<(usize, u64, u64)>>,
    /// Aggregate ceiling h·(|𝒩⁰_i| − 1); u64::MAX for dummies.
    ceiling: Vec<u64>,
    rt_of: Vec<usize>,
    dummy: Vec<bool>,
    num_rt: usize,
}

impl GreedyRule {
    pub fn new(model: &SystemModel, order: Vec<usize>, schedule: &EpsilonSchedule, h: u32) -> Self {
        assert_eq!(order.len(), model.num_patterns(), "order must list every pattern");
        let caps: Vec<u64> = model.pools().iter().map(|p| p.capacity as u64 * h as u64).collect();
        let limit = (0..model.num_patterns())
            .map(|i| {
                model
                    .pattern(i)
                    .pools()
                    .map(|(j, w)| {
                        // ⌈C(1−ε̄)⌉ = C − ⌊Cε̄⌋, guarded against round-off.
                        let cut = (caps[j] as f64 * schedule.eps[j][i] + 1e-9).floor() as u64;
                        (j, w as u64, caps[j].saturating_sub(cut))
                    })
                    .collect()
            })
            .collect();
        let ceiling = (0..model.num_patterns())
            .map(|i| {
                if model.pattern(i).dummy {
                    u64::MAX
                } else {
                    h as u64 * (model.state_space_size(i) as u64 - 1)
                }
            })
            .collect();
        GreedyRule {
            order,
            limit,
            ceiling,
            rt_of: model.patterns().iter().map(|p| p.request_type).collect(),
            dummy: model.patterns().iter().map(|p| p.dummy).collect(),
            num_rt: model.num_request_types(),
        }
    }

    /// Whether pattern i may be selected given current usage and RUs already
    /// reserved for other request types in this pass.
    pub fn admissible(&self, i: usize, n: &[u64], usage: &[u64], reserved: &[u64]) -> bool {
        if self.dummy[i] {
            return true;
        }
        if n[i] >= self.ceiling[i] {
            return false;
        }
        self.limit[i].iter().all(|&(j, _, lim)| usage[j] + reserved[j] < lim)
    }

    /// One pattern per request type, written into `actions`. `reserved` is
    /// scratch space of length J.
    pub fn decide(&self, n: &[u64], usage: &[u64], reserved: &mut [u64], actions: &mut [usize]) {
        reserved.iter_mut().for_each(|r| *r = 0);
        let mut done = vec![false; self.num_rt];
        let mut left = self.num_rt;
        for &i in &self.order {
            let l = self.rt_of[i];
            if done[l] || !self.admissible(i, n, usage, reserved) {
                continue;
            }
            for &(j, w, _) in &self.limit[i] {
                reserved[j] += w;
            }
            actions[l] = i;
            done[l] = true;
            left -= 1;
            if left == 0 {
                break;
            }
        }
        assert_eq!(left, 0, "every request type must receive exactly one pattern");
    }
}

/// Index policy for ranking `o`: patterns in order of first appearance.
pub fn index_rule(model: &SystemModel, o: &Ranking, eps_m: f64, h: u32) -> (GreedyRule, EpsilonSchedule) {
    let order = o.pattern_order(model);
    let caps: Vec<f64> = model.pools().iter().map(|p| p.capacity as f64 * h as f64).collect();
    let schedule = epsilon_schedule(model, &order, eps_m, &caps);
    (GreedyRule::new(model, order, &schedule, h), schedule)
}

/// Non-dummy patterns sorted by `key` ascending (stable), dummies last.
fn order_by(model: &SystemModel, key: impl Fn(usize) -> f64) -> Vec<usize> {
    let mut real: Vec<usize> = (0..model.num_patterns()).filter(|&i| !model.pattern(i).dummy).collect();
    real.sort_by(|&a, &b| key(a).total_cmp(&key(b)));
    real.extend((0..model.num_request_types()).map(|l| model.dummy(l)));
    real
}

pub fn max_reward_order(model: &SystemModel) -> Vec<usize> {
    order_by(model, |i| {
        let p = model.pattern(i);
        -model.request_types()[p.request_type].reward * p.service_rate
    })
}

pub fn min_cost_order(model: &SystemModel) -> Vec<usize> {
    order_by(model, |i| model.cost_rate(i))
}

fn base_rule(model: &SystemModel, order: Vec<usize>, h: u32) -> GreedyRule {
    let caps: Vec<f64> = model.pools().iter().map(|p| p.capacity as f64 * h as f64).collect();
    let schedule = epsilon_schedule(model, &order, 0.0, &caps);
    GreedyRule::new(model, order, &schedule, h)
}

pub fn max_reward_rule(model: &SystemModel, h: u32) -> GreedyRule {
    base_rule(model, max_reward_order(model), h)
}

pub fn min_cost_rule(model: &SystemModel, h: u32) -> GreedyRule {
    base_rule(model, min_cost_order(model), h)
}

/// Uniform choice among non-dummy patterns of type `l` that fit; the dummy if
/// none does.
pub fn random_admit<R: Rng + ?Sized>(model: &SystemModel, l: usize, usage: &[u64], caps: &[u64], rng: &mut R) -> usize {
    let fits = |i: usize| model.pattern(i).pools().all(|(j, w)| usage[j] + w as u64 <= caps[j]);
    let options: Vec<usize> = model.patterns_of(l).filter(|&i| !model.pattern(i).dummy && fits(i)).collect();
    if options.is_empty() {
        model.dummy(l)
    } else {
        options[rng.random_range(0..options.len())]
    }
}

/// What a simulation runs.
#[derive(Clone, Debug)]
pub enum PolicySpec {
    Index { ranking: Ranking, eps_m: f64 },
    MaxReward,
    MinCost,
    Random,
}

impl PolicySpec {
    pub fn label(&self) -> String {
        match self {
            PolicySpec::Index { eps_m, .. } => format!("INDEX({eps_m})"),
            PolicySpec::MaxReward => "Max-Reward".into(),
            PolicySpec::MinCost => "Min-Cost".into(),
            PolicySpec::Random => "Random".into(),
        }
    }

    pub fn eps_m(&self) -> f64 {
        match self {
            PolicySpec::Index { eps_m, .. } => *eps_m,
            _ => 0.0,
        }
    }
}

/// A policy specialised to one scale h.
#[derive(Clone, Debug)]
pub enum Prepared {
    Greedy(GreedyRule),
    Random,
}

pub fn prepare(model: &SystemModel, spec: &PolicySpec, h: u32) -> Prepared {
    match spec {
        PolicySpec::Index { ranking, eps_m } => Prepared::Greedy(index_rule(model, ranking, *eps_m, h).0),
        PolicySpec::MaxReward => Prepared::Greedy(max_reward_rule(model, h)),
        PolicySpec::MinCost => Prepared::Greedy(min_cost_rule(model, h)),
        PolicySpec::Random => Prepared::Random,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::model::{Pattern, Pool, RequestType};
    use crate::relaxed::{rank_pairs, TieBreak};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_types_one_pool(capacity: u32) -> SystemModel {
        SystemModel::new(
            vec![Pool { capacity, cost_rate: 1.0 }],
            vec![RequestType { arrival_rate: 1.0, reward: 10.0 }, RequestType { arrival_rate: 1.0, reward: 5.0 }],
            vec![
                Pattern { request_type: 0, weights: vec![2], service_rate: 1.0, dummy: false },
                Pattern { request_type: 1, weights: vec![2], service_rate: 1.0, dummy: false },
            ],
        )
        .unwrap()
    }

    #[test]
    fn zero_eps_unit_weights_is_plain_capacity() {
        let m = fixtures::loss_network_example();
        let order: Vec<usize> = (0..m.num_patterns()).collect();
        let s = epsilon_schedule(&m, &order, 0.0, &[1.0, 3.0, 3.0]);
        assert_eq!(s.eps[0][0], 0.0);
        assert_eq!(s.eps[1][1], 0.0);
        // Two RUs per link for type II: base 1/3.
        assert!((s.eps[1][2] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn ramp_is_strictly_increasing() {
        let m = SystemModel::new(
            vec![Pool { capacity: 400, cost_rate: 0.0 }],
            vec![RequestType { arrival_rate: 1.0, reward: 1.0 }],
            (0..3).map(|_| Pattern { request_type: 0, weights: vec![1], service_rate: 1.0, dummy: false }).collect(),
        )
        .unwrap();
        let order: Vec<usize> = (0..m.num_patterns()).collect();
        let s = epsilon_schedule(&m, &order, 0.01, &[400.0]);
        let v: Vec<f64> = (0..3).map(|i| s.eps[0][i]).collect();
        assert!(v[0] < v[1] && v[1] < v[2] && v[2] <= 0.01);
    }

    #[test]
    fn base_respected() {
        let m = SystemModel::new(
            vec![Pool { capacity: 400, cost_rate: 0.0 }],
            vec![RequestType { arrival_rate: 1.0, reward: 1.0 }],
            vec![Pattern { request_type: 0, weights: vec![4], service_rate: 1.0, dummy: false }],
        )
        .unwrap();
        let s = epsilon_schedule(&m, &[0, 1], 0.01, &[400.0]);
        assert!(s.eps[0][0] >= 3.0 / 400.0);
    }

    #[test]
    fn empty_system_gets_top_patterns() {
        let m = fixtures::fig1b();
        let o = rank_pairs(&m, &[0.0; 6], &[0.0; 2], TieBreak::Canonical);
        let (rule, _) = index_rule(&m, &o, 0.01, 10);
        let mut actions = vec![0; 2];
        let mut scratch = vec![0; 6];
        rule.decide(&[0; 8], &[0; 6], &mut scratch, &mut actions);
        assert_eq!(actions, vec![0, 2]);
    }

    #[test]
    fn reservation_blocks_lower_priority_type() {
        // Four RUs: either type fits alone, not both.
        let m = two_types_one_pool(4);
        let o = rank_pairs(&m, &[0.0], &[0.0, 0.0], TieBreak::Canonical);
        let (rule, _) = index_rule(&m, &o, 0.0, 1);
        let mut actions = vec![0; 2];
        let mut scratch = vec![0; 1];
        rule.decide(&[0, 1, 0, 0], &[2], &mut scratch, &mut actions);
        assert_eq!(actions, vec![0, m.dummy(1)]);
    }

    #[test]
    fn full_pools_give_dummies() {
        let m = two_types_one_pool(4);
        let rule = max_reward_rule(&m, 1);
        let mut actions = vec![0; 2];
        rule.decide(&[2, 0, 0, 0], &[4], &mut [0], &mut actions);
        assert_eq!(actions, vec![m.dummy(0), m.dummy(1)]);
    }

    #[test]
    fn baselines_orders() {
        let m = SystemModel::new(
            vec![Pool { capacity: 4, cost_rate: 3.0 }, Pool { capacity: 4, cost_rate: 1.0 }],
            vec![RequestType { arrival_rate: 1.0, reward: 10.0 }],
            vec![
                Pattern { request_type: 0, weights: vec![1, 0], service_rate: 1.0, dummy: false },
                Pattern { request_type: 0, weights: vec![0, 1], service_rate: 0.5, dummy: false },
            ],
        )
        .unwrap();
        assert_eq!(max_reward_order(&m), vec![0, 1, 2]);
        assert_eq!(min_cost_order(&m), vec![1, 0, 2]);
    }

    #[test]
    fn random_admit_cases() {
        let m = SystemModel::new(
            vec![Pool { capacity: 2, cost_rate: 0.0 }, Pool { capacity: 2, cost_rate: 0.0 }],
            vec![RequestType { arrival_rate: 1.0, reward: 1.0 }],
            vec![
                Pattern { request_type: 0, weights: vec![1, 0], service_rate: 1.0, dummy: false },
                Pattern { request_type: 0, weights: vec![0, 1], service_rate: 1.0, dummy: false },
            ],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        assert_eq!(random_admit(&m, 0, &[2, 1], &[2, 2], &mut rng), 1);
        assert_eq!(random_admit(&m, 0, &[2, 2], &[2, 2], &mut rng), 2);
        let draws = 10_000;
        let firsts = (0..draws).filter(|_| random_admit(&m, 0, &[0, 0], &[2, 2], &mut rng) == 0).count();
        // Chi-square with one degree of freedom, 99.9% critical value 10.83.
        let e = draws as f64 / 2.0;
        let chi = ((firsts as f64 - e).powi(2) + ((draws - firsts) as f64 - e).powi(2)) / e;
        assert!(chi < 10.83, "chi-square {chi}");
    }
}
