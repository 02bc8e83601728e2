//! Built-in scenarios.
//!
//! `fig1a`, `fig1b` and `fig2` are the three benchmark instances.
//! Weight vectors are written as sums of scaled unit vectors, e.g.
//! `2e12+3e6+4e13` puts 2 RUs on pool 12, 3 on pool 6 and 4 on pool 13.

use rand::Rng;

use crate::model::{Pattern, Pool, RequestType, SystemModel};

pub const NAMES: [&str; 3] = ["fig1a", "fig1b", "fig2"];

pub fn by_name(name: &str) -> Option<SystemModel> {
    match name {
        "fig1a" => Some(fig1a()),
        "fig1b" => Some(fig1b()),
        "fig2" => Some(fig2()),
        _ => None,
    }
}

fn weights(j_count: usize, expr: &str) -> Vec<u32> {
    let mut w = vec![0; j_count];
    for term in expr.split('+') {
        let (coef, pool) = term.trim().split_once('e').expect("term of the form <k>e<pool>");
        let k: u32 = if coef.is_empty() { 1 } else { coef.parse().unwrap() };
        let j: usize = pool.parse().unwrap();
        w[j - 1] += k;
    }
    w
}

struct TypeSpec<'a> {
    arrival: f64,
    service: f64,
    reward: f64,
    patterns: &'a [&'a str],
}

fn build(capacity: &[u32], cost: &[f64], types: &[TypeSpec]) -> SystemModel {
    let pools = capacity.iter().zip(cost).map(|(&c, &e)| Pool { capacity: c, cost_rate: e }).collect();
    let rts = types.iter().map(|t| RequestType { arrival_rate: t.arrival, reward: t.reward }).collect();
    let mut declared = Vec::new();
    for (l, t) in types.iter().enumerate() {
        for expr in t.patterns {
            declared.push(Pattern {
                request_type: l,
                weights: weights(capacity.len(), expr),
                service_rate: t.service,
                dummy: false,
            });
        }
    }
    SystemModel::new(pools, rts, declared).expect("fixture is valid")
}

/// Four request types, fourteen pools, 37 patterns plus 4 dummies.
pub fn fig1a() -> SystemModel {
    let capacity = [5, 7, 6, 8, 6, 7, 6, 6, 9, 8, 8, 5, 8, 5];
    let cost = [
        9.046, 4.995, 0.679, 2.761, 9.010, 4.775, 3.033, 5.033, 3.318, 4.686, 3.302, 0.938, 6.770, 7.775,
    ];
    let p1 = [
        "2e12+3e6+4e13", "2e12+3e1+4e13", "2e7+3e6+4e13", "2e7+3e1+4e13",
        "2e11+3e6+4e13", "2e11+3e1+4e13", "2e2+3e6+4e13", "2e2+3e1+4e13",
        "2e14+3e6+4e13", "2e14+3e1+4e13", "2e5+3e6+4e13", "2e5+3e1+4e13",
    ];
    let p2 = [
        "e4+3e8+e12", "e4+3e8+e7", "e4+3e8+e11", "e4+3e8+e9",
        "e4+3e8+e10", "e4+3e8+e2", "e4+3e8+e14", "e4+3e8+e5",
    ];
    let p3 = [
        "e11+e13+2e6", "e11+e13+2e1", "e9+e13+2e6", "e11+e13+2e1", "e10+e13+2e6",
        "e10+e13+2e1", "e2+e13+2e6", "e2+e13+2e1", "e5+e13+2e6", "e5+e13+2e1",
    ];
    let p4 = [
        "2e8+2e4+2e3", "2e8+2e4+2e12", "2e8+2e4+2e7", "2e8+2e4+2e11",
        "2e8+2e4+2e2", "2e8+2e4+2e14", "2e8+2e4+2e5",
    ];
    build(
        &capacity,
        &cost,
        &[
            TypeSpec { arrival: 1.275, service: 0.255, reward: 4026.22, patterns: &p1 },
            TypeSpec { arrival: 1.203, service: 0.241, reward: 3871.33, patterns: &p2 },
            TypeSpec { arrival: 1.134, service: 0.227, reward: 3731.69, patterns: &p3 },
            TypeSpec { arrival: 1.314, service: 0.263, reward: 3242.58, patterns: &p4 },
        ],
    )
}

/// Two request types, six pools, 6 patterns plus 2 dummies.
pub fn fig1b() -> SystemModel {
    let capacity = [8, 8, 9, 9, 9, 6];
    let cost = [5.684, 7.249, 0.224, 4.969, 6.874, 8.539];
    let p1 = ["e1+e4+e3", "e1+e5+e3"];
    let p2 = ["2e4+2e6+4e1", "2e5+2e6+4e1", "2e4+2e6+4e2", "2e5+2e6+4e2"];
    build(
        &capacity,
        &cost,
        &[
            TypeSpec { arrival: 1.385, service: 0.277, reward: 3635.69, patterns: &p1 },
            TypeSpec { arrival: 1.317, service: 0.263, reward: 3758.85, patterns: &p2 },
        ],
    )
}

/// Three request types, fifteen pools, 39 patterns plus 3 dummies.
pub fn fig2() -> SystemModel {
    let capacity = [9, 7, 6, 7, 8, 7, 7, 6, 9, 7, 5, 6, 6, 5, 6];
    let cost = [
        9.995, 2.707, 2.237, 4.656, 0.624, 5.705, 0.385, 6.065, 7.492, 6.584, 1.085, 7.332, 5.862, 1.938, 8.411,
    ];
    let p1 = [
        "4e3+3e7+e14", "4e6+3e7+e14", "4e6+3e1+e14", "4e6+3e1+e2", "4e12+3e1+e14",
        "4e12+3e1+e2", "4e3+3e7+e2", "4e6+3e7+e2", "4e12+3e7+e14", "4e12+3e7+e2",
        "4e3+3e1+e14", "4e3+3e1+e2", "4e12+3e7+e8", "4e3+3e7+e8", "4e3+3e1+e8",
        "4e6+3e1+e8", "4e12+3e1+e8", "4e6+3e7+e8", "4e12+3e7+e9", "4e12+3e1+e9",
        "4e2+3e7+e9", "4e6+3e7+e9", "4e3+3e1+e9", "4e6+3e1+e9", "4e3+3e7+e5",
        "4e6+3e7+e5", "4e12+3e7+e5", "4e3+3e1+e5", "4e6+3e1+e5", "4e12+3e1+e5",
    ];
    let p2 = ["e10+3e5+2e14", "e10+3e5+2e2", "e10+3e5+2e8"];
    let p3 = [
        "2e15+e11+3e3", "2e15+e11+3e12", "2e15+e4+3e3",
        "2e15+e4+3e12", "2e15+e13+3e3", "2e15+e13+3e12",
    ];
    build(
        &capacity,
        &cost,
        &[
            TypeSpec { arrival: 1.177, service: 0.235, reward: 3710.05, patterns: &p1 },
            TypeSpec { arrival: 1.108, service: 0.222, reward: 3712.66, patterns: &p2 },
            TypeSpec { arrival: 1.286, service: 0.257, reward: 3821.33, patterns: &p3 },
        ],
    )
}

/// Two pools of capacity 3; type 1 uses one RU of each, type 2 uses two RUs
/// of either pool.
pub fn queueing_example() -> SystemModel {
    build(
        &[3, 3],
        &[1.0, 1.0],
        &[
            TypeSpec { arrival: 1.0, service: 1.0, reward: 10.0, patterns: &["e1+e2"] },
            TypeSpec { arrival: 1.0, service: 1.0, reward: 10.0, patterns: &["2e1", "2e2"] },
        ],
    )
}

/// Links a, b, c with 1, 3, 3 channels. Type I uses path {a} or {b,c} with one
/// channel per link; type II uses {b,c} with two channels per link.
pub fn loss_network_example() -> SystemModel {
    build(
        &[1, 3, 3],
        &[1.0, 1.0, 1.0],
        &[
            TypeSpec { arrival: 1.0, service: 1.0, reward: 10.0, patterns: &["e1", "e2+e3"] },
            TypeSpec { arrival: 1.0, service: 1.0, reward: 20.0, patterns: &["2e2+2e3"] },
        ],
    )
}

/// Small random instance: up to `max_types` request types, `max_pools` pools
/// and `max_patterns` patterns per type, each pattern on one to three pools
/// with weights up to 3. Pools nobody uses are given to a random pattern.
pub fn random_model<R: Rng + ?Sized>(rng: &mut R, max_types: usize, max_pools: usize, max_patterns: usize) -> SystemModel {
    let l_count = rng.random_range(1..=max_types);
    let j_count = rng.random_range(1..=max_pools);
    let pools: Vec<Pool> = (0..j_count)
        .map(|_| Pool { capacity: rng.random_range(1..=10), cost_rate: rng.random_range(0.0..5.0) })
        .collect();
    let rts: Vec<RequestType> = (0..l_count)
        .map(|_| RequestType { arrival_rate: rng.random_range(0.2..3.0), reward: rng.random_range(5.0..50.0) })
        .collect();
    let mut declared = Vec::new();
    for l in 0..l_count {
        for _ in 0..rng.random_range(1..=max_patterns) {
            let mut weights = vec![0; j_count];
            for _ in 0..rng.random_range(1..=3.min(j_count)) {
                weights[rng.random_range(0..j_count)] = rng.random_range(1..=3);
            }
            declared.push(Pattern { request_type: l, weights, service_rate: rng.random_range(0.2..2.0), dummy: false });
        }
    }
    for j in 0..j_count {
        if declared.iter().all(|p| p.weights[j] == 0) {
            let k = rng.random_range(0..declared.len());
            declared[k].weights[j] = rng.random_range(1..=3);
        }
    }
    SystemModel::new(pools, rts, declared).expect("generated model is valid")
}

/// Random instance in which every pattern uses exactly one pool, hence
/// weakly coupled. Arrival rates are multiplied by `load`.
pub fn random_single_pool_model<R: Rng + ?Sized>(rng: &mut R, max_types: usize, max_pools: usize, load: f64) -> SystemModel {
    let l_count = rng.random_range(1..=max_types);
    let j_count = rng.random_range(1..=max_pools);
    let pools: Vec<Pool> = (0..j_count)
        .map(|_| Pool { capacity: rng.random_range(1..=10), cost_rate: rng.random_range(0.0..2.0) })
        .collect();
    let rts: Vec<RequestType> = (0..l_count)
        .map(|_| RequestType { arrival_rate: load * rng.random_range(0.2..3.0), reward: rng.random_range(10.0..50.0) })
        .collect();
    let mut declared = Vec::new();
    for j in 0..j_count {
        let mut weights = vec![0; j_count];
        weights[j] = rng.random_range(1..=3);
        declared.push(Pattern {
            request_type: rng.random_range(0..l_count),
            weights,
            service_rate: rng.random_range(0.2..2.0),
            dummy: false,
        });
    }
    // Extra patterns make some pools shared.
    for _ in 0..rng.random_range(0..=j_count) {
        let mut weights = vec![0; j_count];
        weights[rng.random_range(0..j_count)] = rng.random_range(1..=3);
        declared.push(Pattern {
            request_type: rng.random_range(0..l_count),
            weights,
            service_rate: rng.random_range(0.2..2.0),
            dummy: false,
        });
    }
    for l in 0..l_count {
        if !declared.iter().any(|p| p.request_type == l) {
            let mut weights = vec![0; j_count];
            weights[rng.random_range(0..j_count)] = rng.random_range(1..=3);
            declared.push(Pattern { request_type: l, weights, service_rate: rng.random_range(0.2..2.0), dummy: false });
        }
    }
    SystemModel::new(pools, rts, declared).expect("generated model is valid")
}
