//! Event-driven simulation of the scaled system.
//!
//! The state is the aggregate count N_i per pattern. Arrivals of type ℓ occur
//! at rate hλ⁰_ℓ and are routed by the policy; departures from pattern i occur
//! at rate N_iμ_i. Revenue accrues continuously at Σ_i (rμ − Σwε)_i N_i.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::model::SystemModel;
use crate::policy::{prepare, random_admit, PolicySpec, Prepared};

/// Environment variable capping the number of replication threads.
pub const THREADS_ENV: &str = "RA_THREADS";

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub h: u32,
    pub horizon: f64,
    /// Fraction of the horizon discarded before accrual starts.
    pub warmup: f64,
    pub initial_replications: usize,
    pub max_replications: usize,
    pub confidence: f64,
    /// Target CI half-width relative to the mean.
    pub target_rel_half_width: f64,
    pub seed: u64,
    /// Overrides `RA_THREADS` when set.
    pub threads: Option<usize>,
}

impl SimConfig {
    pub fn new(model: &SystemModel, h: u32) -> Self {
        SimConfig {
            h,
            horizon: default_horizon(model),
            warmup: 0.2,
            initial_replications: 4,
            max_replications: 64,
            confidence: 0.95,
            target_rel_half_width: 0.03,
            seed: 1,
            threads: None,
        }
    }

    fn validate(&self) {
        assert!(self.h >= 1, "h must be at least 1");
        assert!(self.horizon > 0.0, "horizon must be positive");
        assert!((0.0..1.0).contains(&self.warmup), "warmup must lie in [0,1)");
        assert!(self.initial_replications >= 1 && self.max_replications >= self.initial_replications);
        assert!(self.confidence > 0.0 && self.confidence < 1.0);
    }
}

/// 2000 / min(λ⁰ ∪ μ) time units.
pub fn default_horizon(model: &SystemModel) -> f64 {
    let slowest = model
        .request_types()
        .iter()
        .map(|r| r.arrival_rate)
        .chain(model.patterns().iter().filter(|p| !p.dummy).map(|p| p.service_rate))
        .fold(f64::INFINITY, f64::min);
    2000.0 / slowest
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(
        "capacity violated on pool {pool}: {usage} > {capacity} after admitting pattern {pattern} \
         (replication {replication}, event {event}, t = {time})"
    )]
    CapacityViolation { pool: usize, usage: u64, capacity: u64, pattern: usize, replication: usize, event: u64, time: f64 },
    #[error("request type {request_type} was routed to pattern {pattern} of another type (replication {replication}, event {event})")]
    ActionViolation { request_type: usize, pattern: usize, replication: usize, event: u64 },
}

/// One replication's statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct Replication {
    pub revenue: f64,
    /// Time-average N_i / h.
    pub occupancy: Vec<f64>,
    pub arrivals: Vec<u64>,
    pub blocked: Vec<u64>,
    pub events: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimResult {
    pub mean: f64,
    pub half_width: f64,
    pub replications: usize,
    /// The half-width target was met.
    pub converged: bool,
    pub occupancy: Vec<f64>,
    /// Fraction of arrivals of each type routed to its dummy.
    pub blocking: Vec<f64>,
    pub events: u64,
    pub per_replication: Vec<f64>,
}

/// Runs one replication; `index` selects the rng stream.
pub fn run_replication(model: &SystemModel, policy: &Prepared, cfg: &SimConfig, index: usize) -> Result<Replication, SimError> {
    let h = cfg.h as u64;
    let n_i = model.num_patterns();
    let n_j = model.num_pools();
    let n_l = model.num_request_types();
    let caps: Vec<u64> = model.pools().iter().map(|p| p.capacity as u64 * h).collect();
    let arrival: Vec<f64> = model.request_types().iter().map(|r| r.arrival_rate * h as f64).collect();
    let total_arrival: f64 = arrival.iter().sum();
    let mu: Vec<f64> = model.patterns().iter().map(|p| if p.dummy { 0.0 } else { p.service_rate }).collect();
    let rt_of: Vec<usize> = model.patterns().iter().map(|p| p.request_type).collect();
    let uses: Vec<Vec<(usize, u64)>> =
        model.patterns().iter().map(|p| p.pools().map(|(j, w)| (j, w as u64)).collect()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ index as u64);
    let mut n = vec![0u64; n_i];
    let mut usage = vec![0u64; n_j];
    let mut actions: Vec<usize> = (0..n_l).map(|l| model.dummy(l)).collect();
    let mut scratch = vec![0u64; n_j];
    let mut integral = vec![0.0; n_i];
    let mut last_change = vec![0.0; n_i];
    let mut arrivals = vec![0u64; n_l];
    let mut blocked = vec![0u64; n_l];

    let start = cfg.warmup * cfg.horizon;
    let end = cfg.horizon;
    // Adds n_i over [max(from, start), to] to the occupancy integral.
    let accrue = |integral: &mut [f64], last: &mut [f64], n: &[u64], i: usize, to: f64| {
        let from = last[i].max(start);
        if to > from {
            integral[i] += n[i] as f64 * (to - from);
        }
        last[i] = to;
    };

    let mut t = 0.0;
    let mut events = 0u64;
    loop {
        if let Prepared::Greedy(rule) = policy {
            rule.decide(&n, &usage, &mut scratch, &mut actions);
        }
        let departure: f64 = n.iter().zip(&mu).map(|(&k, &m)| k as f64 * m).sum();
        let total = total_arrival + departure;
        t += Exp::new(total).expect("positive total rate").sample(&mut rng);
        if t >= end {
            break;
        }
        events += 1;
        let mut u = rng.random::<f64>() * total;
        if u < total_arrival {
            let mut l = 0;
            while l + 1 < n_l && u >= arrival[l] {
                u -= arrival[l];
                l += 1;
            }
            let counted = t >= start;
            if counted {
                arrivals[l] += 1;
            }
            let i = match policy {
                Prepared::Greedy(_) => actions[l],
                Prepared::Random => random_admit(model, l, &usage, &caps, &mut rng),
            };
            if rt_of[i] != l {
                return Err(SimError::ActionViolation { request_type: l, pattern: i, replication: index, event: events });
            }
            if model.pattern(i).dummy {
                if counted {
                    blocked[l] += 1;
                }
                continue;
            }
            accrue(&mut integral, &mut last_change, &n, i, t);
            n[i] += 1;
            for &(j, w) in &uses[i] {
                usage[j] += w;
                if usage[j] > caps[j] {
                    return Err(SimError::CapacityViolation {
                        pool: j,
                        usage: usage[j],
                        capacity: caps[j],
                        pattern: i,
                        replication: index,
                        event: events,
                        time: t,
                    });
                }
            }
        } else {
            u -= total_arrival;
            let mut i = 0;
            loop {
                let rate = n[i] as f64 * mu[i];
                if u < rate || i + 1 == n_i {
                    break;
                }
                u -= rate;
                i += 1;
            }
            // Guard against round-off landing on an empty pattern.
            while n[i] == 0 {
                i -= 1;
            }
            accrue(&mut integral, &mut last_change, &n, i, t);
            n[i] -= 1;
            for &(j, w) in &uses[i] {
                usage[j] -= w;
            }
        }
    }
    for i in 0..n_i {
        accrue(&mut integral, &mut last_change, &n, i, end);
    }
    let window = (end - start) * h as f64;
    let revenue = (0..n_i).map(|i| model.net_rate(i) * integral[i]).sum::<f64>() / window;
    let occupancy = integral.iter().map(|x| x / window).collect();
    Ok(Replication { revenue, occupancy, arrivals, blocked, events })
}

fn thread_count(cfg: &SimConfig) -> usize {
    cfg.threads
        .or_else(|| std::env::var(THREADS_ENV).ok().and_then(|v| v.parse().ok()))
        .unwrap_or(0)
}

/// Mean and Student-t half-width; infinite half-width for one sample.
pub fn student_t_interval(samples: &[f64], confidence: f64) -> (f64, f64) {
    let k = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / k;
    if samples.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0);
    let t = StudentsT::new(0.0, 1.0, k - 1.0).unwrap().inverse_cdf(0.5 + confidence / 2.0);
    (mean, t * (var / k).sqrt())
}

/// Replications double until the half-width target or the cap is reached.
pub fn simulate_prepared(model: &SystemModel, policy: &Prepared, cfg: &SimConfig) -> Result<SimResult, SimError> {
    cfg.validate();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(thread_count(cfg)).build().expect("thread pool");
    let mut reps: Vec<Replication> = Vec::new();
    let mut target = cfg.initial_replications;
    loop {
        let batch: Result<Vec<_>, _> =
            pool.install(|| (reps.len()..target).into_par_iter().map(|r| run_replication(model, policy, cfg, r)).collect());
        reps.extend(batch?);
        let revenues: Vec<f64> = reps.iter().map(|r| r.revenue).collect();
        let (mean, half) = student_t_interval(&revenues, cfg.confidence);
        let converged = half <= cfg.target_rel_half_width * mean.abs();
        if converged || reps.len() >= cfg.max_replications {
            let k = reps.len() as f64;
            let occupancy = (0..model.num_patterns()).map(|i| reps.iter().map(|r| r.occupancy[i]).sum::<f64>() / k).collect();
            let blocking = (0..model.num_request_types())
                .map(|l| {
                    let a: u64 = reps.iter().map(|r| r.arrivals[l]).sum();
                    let b: u64 = reps.iter().map(|r| r.blocked[l]).sum();
                    if a == 0 { 0.0 } else { b as f64 / a as f64 }
                })
                .collect();
            return Ok(SimResult {
                mean,
                half_width: half,
                replications: reps.len(),
                converged,
                occupancy,
                blocking,
                events: reps.iter().map(|r| r.events).sum(),
                per_replication: revenues,
            });
        }
        target = (2 * target).min(cfg.max_replications);
    }
}

pub fn simulate(model: &SystemModel, policy: &PolicySpec, cfg: &SimConfig) -> Result<SimResult, SimError> {
    simulate_prepared(model, &prepare(model, policy, cfg.h), cfg)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub policy: String,
    pub eps_m: f64,
    pub h: u32,
    pub result: SimResult,
    pub reference: f64,
    /// (R_ref − R̂) / R_ref.
    pub rel_gap: f64,
}

/// Every (policy, h) cell, in policy-major order.
pub fn sweep_h(
    model: &SystemModel,
    policies: &[PolicySpec],
    hs: &[u32],
    base: &SimConfig,
    reference: f64,
) -> Result<Vec<SweepRow>, SimError> {
    let mut rows = Vec::new();
    for spec in policies {
        for &h in hs {
            let cfg = SimConfig { h, ..base.clone() };
            let result = simulate(model, spec, &cfg)?;
            rows.push(SweepRow {
                policy: spec.label(),
                eps_m: spec.eps_m(),
                h,
                rel_gap: (reference - result.mean) / reference,
                reference,
                result,
            });
        }
    }
    Ok(rows)
}

/// Largest relative deviation between simulated N̄_i/h and the attractor's
/// per-pattern occupancy, over patterns holding at least 1% of the largest
/// predicted occupancy. Zero if no pattern qualifies.
pub fn occupancy_vs_attractor(simulated: &[f64], attractor: &[f64]) -> f64 {
    let top = attractor.iter().cloned().fold(0.0, f64::max);
    if top <= 0.0 {
        return 0.0;
    }
    simulated
        .iter()
        .zip(attractor)
        .filter(|(_, &a)| a >= 0.01 * top)
        .map(|(&s, &a)| (s - a).abs() / a)
        .fold(0.0, f64::max)
}

/// Erlang-B blocking probability for `servers` servers and offered load `a`.
pub fn erlang_b(servers: u32, a: f64) -> f64 {
    (1..=servers).fold(1.0, |b, k| a * b / (k as f64 + a * b))
}
