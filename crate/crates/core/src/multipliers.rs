//! Multiplier search: the map T^o, damped fixed-point iteration,
//! decomposability checks and closed forms for weakly coupled systems.

use thiserror::Error;

use crate::model::{RowType, SystemModel};
use crate::relaxed::{is_consistent, priority_policy, rank_by, rank_pairs, Ranking, RelaxedError, RelaxedSolution, TieBreak};
use crate::subproblem::index_value;

#[derive(Debug, Error, PartialEq)]
pub enum MultiplierError {
    #[error(transparent)]
    Relaxed(#[from] RelaxedError),
    #[error("model is not weakly coupled (patterns {0:?} touch several shared pools)")]
    NotWeaklyCoupled(Vec<usize>),
    #[error("heavy traffic fails: ν(o,0) = {0:?}")]
    NotHeavyTraffic(Vec<f64>),
}

/// Relative tolerance for T^o(γ) = γ.
pub fn fixed_point_tolerance(gamma: &[f64]) -> f64 {
    1e-6 * (1.0 + gamma.iter().fold(0.0f64, |m, g| m.max(g.abs())))
}

#[derive(Clone, Debug)]
pub struct TOutput {
    pub gamma: Vec<f64>,
    pub solution: RelaxedSolution,
}

/// T^o(γ₀): γ solving Ξ_i(γ, 0) = ν_ℓ(o, γ₀) on every critical pair, zero on
/// the other pools. May be negative.
pub fn solve_t(model: &SystemModel, o: &Ranking, gamma0: &[f64]) -> Result<TOutput, MultiplierError> {
    let solution = priority_policy(model, o, gamma0, None)?;
    let zero_g = vec![0.0; model.num_pools()];
    let zero_nu = vec![0.0; model.num_request_types()];
    let mut gamma = vec![0.0; model.num_pools()];
    // A critical pattern never uses a pool that went critical before it, so
    // working backwards every other term is already known.
    for c in solution.critical.iter().rev() {
        let i = c.pair.pattern;
        let p = model.pattern(i);
        let l = p.request_type;
        let k = 1.0 + model.request_types()[l].arrival_rate / p.service_rate;
        let rest: f64 = p.pools().filter(|&(j, _)| j != c.pool).map(|(j, w)| w as f64 * gamma[j]).sum();
        let w = p.weights[c.pool] as f64;
        assert!(w > 0.0, "critical pattern has no weight on its critical pool");
        gamma[c.pool] = (index_value(model, i, &zero_g, &zero_nu) - solution.nu[l] - k * rest) / (k * w);
    }
    Ok(TOutput { gamma, solution })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecompositionCheck {
    /// o ∈ 𝒪(γ, 0).
    pub consistent: bool,
    /// ‖T^o(γ) − γ‖∞.
    pub residual: f64,
    pub tolerance: f64,
    /// T^o(γ) when it is nonnegative and o is consistent with it.
    pub candidate: Option<Vec<f64>>,
}

impl DecompositionCheck {
    pub fn decomposable(&self) -> bool {
        self.consistent && self.residual <= self.tolerance
    }
}

pub fn check_decomposable(model: &SystemModel, gamma: &[f64], o: &Ranking) -> Result<DecompositionCheck, MultiplierError> {
    let consistent = is_consistent(model, o, gamma);
    let t = solve_t(model, o, gamma)?;
    let residual = t.gamma.iter().zip(gamma).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let tolerance = fixed_point_tolerance(gamma);
    let candidate = if t.gamma.iter().all(|&g| g >= 0.0) && is_consistent(model, o, &t.gamma) {
        Some(t.gamma)
    } else {
        None
    };
    Ok(DecompositionCheck { consistent, residual, tolerance, candidate })
}

#[derive(Clone, Debug)]
pub struct FixedPointTrace {
    /// γ_0 … γ_U.
    pub gammas: Vec<Vec<f64>>,
    /// o_0 … o_U.
    pub rankings: Vec<Ranking>,
    /// residuals[k−1] = ‖γ_{k−1} − γ_k‖₂ for k = 1 … U.
    pub residuals: Vec<f64>,
    /// Steps k at which clipping to γ ≥ 0 changed the induced order.
    pub clipped_reorder: Vec<usize>,
    pub k_star: usize,
    pub check: DecompositionCheck,
}

impl FixedPointTrace {
    pub fn gamma_star(&self) -> &[f64] {
        &self.gammas[self.k_star]
    }

    pub fn ranking_star(&self) -> &Ranking {
        &self.rankings[self.k_star]
    }

    pub fn decomposable(&self) -> bool {
        self.check.decomposable()
    }
}

/// γ_{k+1} = (c·T^{o_k}(γ_k) + (1−c)·γ_k)⁺ with o_{k+1} ranked at γ_{k+1},
/// ties inherited from o_k.
pub fn fixed_point_iteration(model: &SystemModel, gamma0: &[f64], c: f64, max_iter: usize) -> Result<FixedPointTrace, MultiplierError> {
    assert!((0.0..=1.0).contains(&c), "damping must lie in [0,1]");
    assert!(max_iter >= 1, "at least one iteration");
    let zero_nu = vec![0.0; model.num_request_types()];
    let mut gamma = gamma0.to_vec();
    let mut o = rank_pairs(model, &gamma, &zero_nu, TieBreak::Canonical);
    let mut gammas = vec![gamma.clone()];
    let mut rankings = vec![o.clone()];
    let mut residuals = Vec::with_capacity(max_iter);
    let mut clipped_reorder = Vec::new();
    for k in 1..=max_iter {
        let t = solve_t(model, &o, &gamma)?;
        let raw: Vec<f64> = t.gamma.iter().zip(&gamma).map(|(a, b)| c * a + (1.0 - c) * b).collect();
        let next: Vec<f64> = raw.iter().map(|g| g.max(0.0)).collect();
        let res = gamma.iter().zip(&next).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let o_next = rank_pairs(model, &next, &zero_nu, TieBreak::Previous(&o));
        if raw.iter().any(|&g| g < 0.0) {
            let unclipped = rank_by(model, |i| index_value(model, i, &raw, &zero_nu), TieBreak::Previous(&o));
            if unclipped != o_next {
                clipped_reorder.push(k);
            }
        }
        residuals.push(res);
        gamma = next;
        o = o_next;
        gammas.push(gamma.clone());
        rankings.push(o.clone());
    }
    let k_star = (1..=max_iter).min_by(|&a, &b| residuals[a - 1].total_cmp(&residuals[b - 1]).then(a.cmp(&b))).unwrap();
    let check = check_decomposable(model, &gammas[k_star], &rankings[k_star])?;
    Ok(FixedPointTrace { gammas, rankings, residuals, clipped_reorder, k_star, check })
}

fn require_weak_coupling(model: &SystemModel) -> Result<(), MultiplierError> {
    let rep = model.weak_coupling_check();
    if rep.weakly_coupled {
        Ok(())
    } else {
        Err(MultiplierError::NotWeaklyCoupled(rep.offending))
    }
}

/// w*_i: weight on the pattern's shared pool if it has one, otherwise on the
/// pool with the smallest C/w (lowest index on ties).
pub fn w_star(model: &SystemModel, i: usize) -> Result<u32, MultiplierError> {
    require_weak_coupling(model)?;
    Ok(w_star_unchecked(model, i, &model.classify_rows()))
}

fn w_star_unchecked(model: &SystemModel, i: usize, rows: &[RowType]) -> u32 {
    let p = model.pattern(i);
    assert!(!p.dummy, "w* is undefined for dummy patterns");
    if let Some((_, w)) = p.pools().find(|&(j, _)| rows[j] == RowType::Shared) {
        return w;
    }
    let mut best: Option<(f64, u32)> = None;
    for (j, w) in p.pools() {
        let ratio = model.pools()[j].capacity as f64 / w as f64;
        if best.is_none_or(|(r, _)| ratio < r) {
            best = Some((ratio, w));
        }
    }
    best.unwrap().1
}

/// Ξ*_i for a non-dummy pattern, 0 for a dummy.
pub fn xi_star(model: &SystemModel, i: usize, nu: &[f64]) -> Result<f64, MultiplierError> {
    require_weak_coupling(model)?;
    Ok(xi_star_unchecked(model, i, nu, &model.classify_rows()))
}

fn xi_star_unchecked(model: &SystemModel, i: usize, nu: &[f64], rows: &[RowType]) -> f64 {
    let p = model.pattern(i);
    if p.dummy {
        return 0.0;
    }
    let l = p.request_type;
    let zero_g = vec![0.0; model.num_pools()];
    let zero_nu = vec![0.0; model.num_request_types()];
    let k = 1.0 + model.request_types()[l].arrival_rate / p.service_rate;
    (index_value(model, i, &zero_g, &zero_nu) - nu[l]) / (w_star_unchecked(model, i, rows) as f64 * k)
}

/// A ranking in 𝒪*(ν): descending Ξ*, canonical ties, boundary pairs last.
pub fn xi_star_ranking(model: &SystemModel, nu: &[f64]) -> Result<Ranking, MultiplierError> {
    require_weak_coupling(model)?;
    let rows = model.classify_rows();
    Ok(rank_by(model, |i| xi_star_unchecked(model, i, nu, &rows), TieBreak::Canonical))
}

/// Closed-form decomposable multipliers for a weakly coupled system in heavy
/// traffic under ranking `o`.
pub fn closed_form_gamma(model: &SystemModel, o: &Ranking) -> Result<Vec<f64>, MultiplierError> {
    require_weak_coupling(model)?;
    let j_count = model.num_pools();
    let zero_g = vec![0.0; j_count];
    let s = priority_policy(model, o, &zero_g, None)?;
    if s.nu.iter().any(|&v| v != 0.0) {
        return Err(MultiplierError::NotHeavyTraffic(s.nu));
    }
    let zero_nu = vec![0.0; model.num_request_types()];
    // (Ξ_i(0,0) − ν_ℓ)/(1 + λ/μ) for a critical pattern.
    let reduced = |i: usize| {
        let p = model.pattern(i);
        let l = p.request_type;
        let k = 1.0 + model.request_types()[l].arrival_rate / p.service_rate;
        (index_value(model, i, &zero_g, &zero_nu) - s.nu[l]) / k
    };
    let mut gamma = vec![0.0; j_count];
    for c in &s.critical {
        let i = c.pair.pattern;
        let j = c.pool;
        let w_j = model.pattern(i).weights[j] as f64;
        let other = s
            .critical
            .iter()
            .find(|d| d.pool != j && model.pattern(i).weights[d.pool] > 0);
        gamma[j] = match other {
            None => reduced(i) / w_j,
            Some(d) => {
                let jp = d.pool;
                let ip = d.pair.pattern;
                let w_jp_i = model.pattern(i).weights[jp] as f64;
                let w_jp_ip = model.pattern(ip).weights[jp] as f64;
                w_jp_i / w_j * (reduced(i) / w_jp_i - reduced(ip) / w_jp_ip)
            }
        };
    }
    Ok(gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::model::{Pattern, Pool, RequestType};
    use approx::assert_relative_eq;

    fn single_pool_heavy() -> SystemModel {
        SystemModel::new(
            vec![Pool { capacity: 4, cost_rate: 1.0 }, Pool { capacity: 3, cost_rate: 2.0 }],
            vec![RequestType { arrival_rate: 40.0, reward: 10.0 }, RequestType { arrival_rate: 30.0, reward: 8.0 }],
            vec![
                Pattern { request_type: 0, weights: vec![1, 0], service_rate: 1.0, dummy: false },
                Pattern { request_type: 1, weights: vec![0, 1], service_rate: 2.0, dummy: false },
            ],
        )
        .unwrap()
    }

    #[test]
    fn no_critical_pairs_gives_zero() {
        let m = SystemModel::new(
            vec![Pool { capacity: 10, cost_rate: 1.0 }],
            vec![RequestType { arrival_rate: 1.0, reward: 5.0 }],
            vec![Pattern { request_type: 0, weights: vec![1], service_rate: 1.0, dummy: false }],
        )
        .unwrap();
        let o = rank_pairs(&m, &[0.0], &[0.0], TieBreak::Canonical);
        let t = solve_t(&m, &o, &[0.0]).unwrap();
        assert_eq!(t.gamma, vec![0.0]);
        let trace = fixed_point_iteration(&m, &[0.0], 0.5, 5).unwrap();
        assert_eq!(trace.k_star, 1);
        assert_eq!(trace.residuals[0], 0.0);
        assert!(trace.decomposable());
    }

    #[test]
    fn one_by_one_system() {
        let m = single_pool_heavy();
        let o = rank_pairs(&m, &[0.0, 0.0], &[0.0, 0.0], TieBreak::Canonical);
        let t = solve_t(&m, &o, &[0.0, 0.0]).unwrap();
        let xi0 = index_value(&m, 0, &[0.0, 0.0], &[0.0, 0.0]);
        assert_relative_eq!(t.gamma[0], xi0 / (1.0 * (1.0 + 40.0)), max_relative = 1e-12);
        let xi1 = index_value(&m, 1, &[0.0, 0.0], &[0.0, 0.0]);
        assert_relative_eq!(t.gamma[1], xi1 / (1.0 + 15.0), max_relative = 1e-12);
    }

    #[test]
    fn perturbed_fixed_point_is_rejected() {
        let m = single_pool_heavy();
        let trace = fixed_point_iteration(&m, &[0.0, 0.0], 0.5, 60).unwrap();
        assert!(trace.decomposable());
        let mut g = trace.gamma_star().to_vec();
        g[0] += 1.0;
        assert!(!check_decomposable(&m, &g, trace.ranking_star()).unwrap().decomposable());
    }

    #[test]
    fn closed_form_single_pool() {
        let m = single_pool_heavy();
        let o = xi_star_ranking(&m, &[0.0, 0.0]).unwrap();
        let g = closed_form_gamma(&m, &o).unwrap();
        let t = solve_t(&m, &o, &g).unwrap();
        for (a, b) in g.iter().zip(&t.gamma) {
            assert_relative_eq!(*a, *b, max_relative = 1e-12);
        }
        assert!(g.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn closed_form_light_traffic_fails() {
        let m = SystemModel::new(
            vec![Pool { capacity: 10, cost_rate: 1.0 }],
            vec![RequestType { arrival_rate: 1.0, reward: 5.0 }],
            vec![Pattern { request_type: 0, weights: vec![1], service_rate: 1.0, dummy: false }],
        )
        .unwrap();
        let o = xi_star_ranking(&m, &[0.0]).unwrap();
        assert!(matches!(closed_form_gamma(&m, &o), Err(MultiplierError::NotHeavyTraffic(_))));
    }

    #[test]
    fn closed_form_chain_case() {
        // Pattern A uses pools 1 (unshared) and 2 (shared with B). A ranks
        // first and saturates pool 1; B then saturates pool 2.
        let m = SystemModel::new(
            vec![Pool { capacity: 2, cost_rate: 0.5 }, Pool { capacity: 6, cost_rate: 0.5 }],
            vec![RequestType { arrival_rate: 50.0, reward: 14.0 }, RequestType { arrival_rate: 50.0, reward: 10.0 }],
            vec![
                Pattern { request_type: 0, weights: vec![1, 1], service_rate: 1.0, dummy: false },
                Pattern { request_type: 1, weights: vec![0, 1], service_rate: 1.0, dummy: false },
            ],
        )
        .unwrap();
        assert!(m.weak_coupling_check().weakly_coupled);
        let o = xi_star_ranking(&m, &[0.0, 0.0]).unwrap();
        let s = priority_policy(&m, &o, &[0.0, 0.0], None).unwrap();
        assert_eq!(s.critical.len(), 2);
        assert_eq!(s.critical_pools(), vec![0, 1]);
        let g = closed_form_gamma(&m, &o).unwrap();
        assert!(g.iter().all(|&x| x > 0.0));
        let t = solve_t(&m, &o, &g).unwrap();
        for (a, b) in g.iter().zip(&t.gamma) {
            assert_relative_eq!(*a, *b, max_relative = 1e-10);
        }
    }

    #[test]
    fn w_star_cases() {
        let m = SystemModel::new(
            vec![Pool { capacity: 3, cost_rate: 0.0 }, Pool { capacity: 5, cost_rate: 0.0 }, Pool { capacity: 8, cost_rate: 0.0 }],
            vec![RequestType { arrival_rate: 1.0, reward: 1.0 }],
            vec![
                Pattern { request_type: 0, weights: vec![1, 2, 0], service_rate: 1.0, dummy: false },
                Pattern { request_type: 0, weights: vec![0, 0, 4], service_rate: 1.0, dummy: false },
            ],
        )
        .unwrap();
        assert_eq!(w_star(&m, 0).unwrap(), 2);
        assert_eq!(w_star(&m, 1).unwrap(), 4);
        assert!(matches!(w_star(&fixtures::queueing_example(), 0), Err(MultiplierError::NotWeaklyCoupled(_))));
    }

    #[test]
    fn xi_star_ordering() {
        // Ξ(0,0) = (8, 8), w* = (1, 2), λ/μ = 1 → Ξ* = (4, 2).
        let m = SystemModel::new(
            vec![Pool { capacity: 4, cost_rate: 2.0 }, Pool { capacity: 4, cost_rate: 1.0 }],
            vec![RequestType { arrival_rate: 1.0, reward: 10.0 }],
            vec![
                Pattern { request_type: 0, weights: vec![1, 0], service_rate: 1.0, dummy: false },
                Pattern { request_type: 0, weights: vec![0, 2], service_rate: 1.0, dummy: false },
            ],
        )
        .unwrap();
        assert_relative_eq!(xi_star(&m, 0, &[0.0]).unwrap(), 4.0);
        assert_relative_eq!(xi_star(&m, 1, &[0.0]).unwrap(), 2.0);
        let o = xi_star_ranking(&m, &[0.0]).unwrap();
        assert_eq!(o.pairs()[0].pattern, 0);
        assert_eq!(xi_star(&m, 0, &[8.0]).unwrap(), 0.0);
        // Negative Ξ* sits below the dummy.
        let o = xi_star_ranking(&m, &[9.0]).unwrap();
        assert!(m.pattern(o.pairs()[0].pattern).dummy);
    }

    #[test]
    fn economics_scale_gamma() {
        let m = fixtures::fig1b();
        let o = rank_pairs(&m, &[0.0; 6], &[0.0; 2], TieBreak::Canonical);
        let a = solve_t(&m, &o, &[0.0; 6]).unwrap().gamma;
        let m3 = m.with_scaled_economics(3.0).unwrap();
        let b = solve_t(&m3, &o, &[0.0; 6]).unwrap().gamma;
        for (x, y) in a.iter().zip(&b) {
            assert_relative_eq!(3.0 * x, *y, max_relative = 1e-10, epsilon = 1e-9);
        }
    }
}
