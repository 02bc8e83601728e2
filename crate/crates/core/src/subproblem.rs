//! Per-pattern quantities: index values, birth–death stationary laws and
//! the threshold policy that solves each relaxed sub-problem.

use crate::model::SystemModel;

/// Above this many states the product form is evaluated in log space.
const LOG_SPACE_STATES: usize = 30;

/// Ξ_i(γ, ν). For a dummy pattern this is −ν_ℓ.
pub fn index_value(model: &SystemModel, i: usize, gamma: &[f64], nu: &[f64]) -> f64 {
    let p = model.pattern(i);
    let l = p.request_type;
    if p.dummy {
        return -nu[l];
    }
    let rt = &model.request_types()[l];
    let lam = rt.arrival_rate;
    let mu = p.service_rate;
    let wg: f64 = p.pools().map(|(j, w)| w as f64 * gamma[j]).sum();
    lam * (rt.reward - model.cost_rate(i) / mu) - (1.0 + lam / mu) * wg - nu[l]
}

/// Band inside which an index value counts as zero (or two values as tied).
pub fn tie_tolerance(model: &SystemModel, i: usize) -> f64 {
    let rt = &model.request_types()[model.pattern(i).request_type];
    1e-9 * (1.0 + (rt.arrival_rate * rt.reward).abs())
}

/// Stationary law of a birth–death chain on {0, …, α.len()−1} with birth rate
/// `arrival·α(n)` and death rate `n·μ`.
pub fn birth_death_stationary(arrival: f64, mu: f64, alpha: &[f64]) -> Vec<f64> {
    let n_states = alpha.len();
    let mut pi = vec![0.0; n_states];
    if n_states == 0 {
        return pi;
    }
    if n_states > LOG_SPACE_STATES {
        let mut logw = vec![f64::NEG_INFINITY; n_states];
        logw[0] = 0.0;
        for n in 1..n_states {
            if alpha[n - 1] <= 0.0 || logw[n - 1] == f64::NEG_INFINITY {
                break;
            }
            logw[n] = logw[n - 1] + alpha[n - 1].ln() + arrival.ln() - (n as f64).ln() - mu.ln();
        }
        let top = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for n in 0..n_states {
            pi[n] = (logw[n] - top).exp();
            total += pi[n];
        }
        pi.iter_mut().for_each(|p| *p /= total);
        return pi;
    }
    pi[0] = 1.0;
    let mut total = 1.0;
    for n in 1..n_states {
        pi[n] = pi[n - 1] * alpha[n - 1] * arrival / (n as f64 * mu);
        if pi[n] == 0.0 {
            break;
        }
        total += pi[n];
    }
    pi.iter_mut().for_each(|p| *p /= total);
    pi
}

#[derive(Clone, Debug, PartialEq)]
pub struct Threshold {
    pub alpha: Vec<f64>,
    /// Ξ was zero within tolerance: any activation level is optimal.
    pub tie: bool,
}

/// Optimal activation vector for the sub-problem of non-dummy pattern i.
pub fn threshold_policy(model: &SystemModel, i: usize, gamma: &[f64], nu: &[f64]) -> Threshold {
    let size = model.state_space_size(i);
    let xi = index_value(model, i, gamma, nu);
    let tie = xi.abs() <= tie_tolerance(model, i);
    let mut alpha = vec![0.0; size];
    if xi > 0.0 || tie {
        alpha[..size - 1].iter_mut().for_each(|a| *a = 1.0);
    }
    Threshold { alpha, tie }
}

/// Λ_i: long-run sub-problem objective of pattern i under activation α.
pub fn subproblem_value(model: &SystemModel, i: usize, alpha: &[f64], gamma: &[f64], nu: &[f64]) -> f64 {
    let p = model.pattern(i);
    let l = p.request_type;
    if p.dummy {
        return -nu[l] * alpha[0];
    }
    let rt = &model.request_types()[l];
    let pi = birth_death_stationary(rt.arrival_rate, p.service_rate, alpha);
    let occ: f64 = pi.iter().enumerate().map(|(n, q)| n as f64 * q).sum();
    let act: f64 = pi.iter().zip(alpha).map(|(q, a)| q * a).sum();
    let wg: f64 = p.pools().map(|(j, w)| w as f64 * gamma[j]).sum();
    model.net_rate(i) * occ - nu[l] * act - wg * (occ + act)
}
