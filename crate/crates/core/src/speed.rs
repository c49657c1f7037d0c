//! Occupation of the origin S and the asymptotic speed v = 1/E[S].

use rayon::prelude::*;
use serde::Serialize;

use crate::eigen::{alpha_at, alpha_range, beta_at, beta_range, Bracket};
use crate::env::{LoopEnvironment, NuSpec};
use crate::error::{MerwError, Result};
use crate::sim::env_seed;
use crate::stats;

/// S = λ / (λ − w_0 − β_{−1} − α_1).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SClosed {
    /// +∞ when `infinite`.
    pub value: f64,
    pub denominator: f64,
    /// Bound on |S − value| from the bracket half-widths.
    pub error_bound: f64,
    pub infinite: bool,
    pub beta_minus_1: Bracket,
    pub alpha_1: Bracket,
}

fn converged(b: Bracket, site: i64, tol: f64) -> Result<Bracket> {
    if b.converged {
        Ok(b)
    } else {
        Err(MerwError::NonConverged {
            site,
            width: b.width(),
            tol,
            depth: b.depth,
        })
    }
}

pub fn s_closed_form(env: &LoopEnvironment, tol: f64) -> Result<SClosed> {
    let lambda = env.lambda();
    let beta = converged(beta_at(env, -1, tol)?, -1, tol)?;
    let alpha = converged(alpha_at(env, 1, tol)?, 1, tol)?;
    let denominator = lambda - env.weight_at(0) - beta.mid() - alpha.mid();
    let e = beta.half_width() + alpha.half_width();
    let threshold = (10.0 * (beta.width() + alpha.width())).max(1e-12);
    if denominator < threshold {
        return Ok(SClosed {
            value: f64::INFINITY,
            denominator,
            error_bound: f64::INFINITY,
            infinite: true,
            beta_minus_1: beta,
            alpha_1: alpha,
        });
    }
    let value = lambda / denominator;
    Ok(SClosed {
        value,
        denominator,
        error_bound: value * e / (denominator - e),
        infinite: false,
        beta_minus_1: beta,
        alpha_1: alpha,
    })
}

/// Σ_n a^(n)_{k,i} / λ^n for i ≥ k, by the last-passage decomposition at k:
/// λ α_{k+1}⋯α_i / (λ − w_k − β_{k−1} − α_{k+1}).
pub fn green_closed_form(env: &LoopEnvironment, k: i64, i: i64, tol: f64) -> Result<f64> {
    if i < k {
        return Err(MerwError::InvalidArgument(format!("need i ≥ k, got i = {i}, k = {k}")));
    }
    let lambda = env.lambda();
    let beta = converged(beta_at(env, k - 1, tol)?, k - 1, tol)?;
    let alphas = alpha_range(env, k + 1, i.max(k + 1), tol)?;
    let a1 = converged(alphas[0], k + 1, tol)?;
    let den = lambda - env.weight_at(k) - beta.mid() - a1.mid();
    if den <= 0.0 {
        return Ok(f64::INFINITY);
    }
    let prod: f64 = alphas[..(i - k) as usize].iter().map(Bracket::mid).product();
    Ok(lambda * prod / den)
}

#[derive(Debug, Clone, Serialize)]
pub struct SeriesSums {
    /// partial_sums[i] = λβ_0 (1 + Σ_{j=1}^{i} β_{−1}²⋯β_{−j}²).
    pub partial_sums: Vec<f64>,
    /// Geometric extrapolation of the remainder when the last terms decay
    /// geometrically; None otherwise.
    pub tail_estimate: Option<f64>,
}

/// S = λβ_0 + λ Σ_{i≥1} β_0 β_{−1}² ⋯ β_{−i}², truncated after `n_terms` terms.
pub fn s_series(env: &LoopEnvironment, n_terms: usize, tol: f64) -> Result<SeriesSums> {
    let lambda = env.lambda();
    let n = n_terms as i64;
    let betas = beta_range(env, -n, 0, tol)?;
    for (k, b) in betas.iter().enumerate() {
        converged(*b, k as i64 - n, tol)?;
    }
    let beta = |i: i64| betas[(i + n) as usize].mid();
    let mut term = lambda * beta(0);
    let mut terms = vec![term];
    for i in 1..=n {
        term *= beta(-i) * beta(-i);
        terms.push(term);
    }
    let partial_sums = terms
        .iter()
        .scan(0.0, |acc, t| {
            *acc += t;
            Some(*acc)
        })
        .collect();
    let tail_estimate = if terms[n_terms] == 0.0 {
        Some(0.0)
    } else if n_terms >= 2 {
        let k = n_terms.min(20);
        let r = (terms[n_terms] / terms[n_terms - k]).powf(1.0 / k as f64);
        (r < 1.0).then(|| terms[n_terms] * r / (1.0 - r))
    } else {
        None
    };
    Ok(SeriesSums {
        partial_sums,
        tail_estimate,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct AnnealedSpeed {
    pub v: f64,
    /// Delta-method 95% half-width for v.
    pub ci_half_width: f64,
    pub mean_s: f64,
    pub s_ci_half_width: f64,
    pub reps: usize,
    /// Environments whose brackets missed the tolerance (excluded from the mean).
    pub non_converged: usize,
    /// Sample mean of log ρ_0 = log β_0 + log β_{−1}.
    pub mean_log_rho: f64,
}

/// v = 1/E[S] with E over environments drawn from ν.
pub fn annealed_speed(nu: &NuSpec, reps: usize, seed: u64, tol: f64) -> Result<AnnealedSpeed> {
    if reps < crate::sim::MIN_CI_REPLICAS {
        return Err(MerwError::InvalidArgument(format!("{reps} environment replicas; at least 30 needed")));
    }
    let samples: Vec<Option<(f64, f64)>> = (0..reps as u64)
        .into_par_iter()
        .map(|j| -> Result<Option<(f64, f64)>> {
            let env = LoopEnvironment::iid(nu.clone(), env_seed(seed, j))?;
            match s_closed_form(&env, tol) {
                Ok(s) if s.infinite => Err(MerwError::NumericallyInfinite(format!(
                    "environment replica {j} (seed {}) has denominator {:e}",
                    env_seed(seed, j),
                    s.denominator
                ))),
                Ok(s) => {
                    let b_m1 = s.beta_minus_1.mid();
                    let b_0 = 1.0 / (env.lambda() - env.weight_at(0) - b_m1);
                    Ok(Some((s.value, b_0.ln() + b_m1.ln())))
                }
                Err(MerwError::NonConverged { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    let non_converged = samples.iter().filter(|s| s.is_none()).count();
    if non_converged * 1000 > reps {
        return Err(MerwError::TooManyFailures {
            failed: non_converged,
            total: reps,
        });
    }
    let s: Vec<f64> = samples.iter().flatten().map(|x| x.0).collect();
    let log_rho: Vec<f64> = samples.iter().flatten().map(|x| x.1).collect();
    let (mean_s, s_ci) = stats::mean_ci95(&s);
    Ok(AnnealedSpeed {
        v: 1.0 / mean_s,
        ci_half_width: s_ci / (mean_s * mean_s),
        mean_s,
        s_ci_half_width: s_ci,
        reps,
        non_converged,
        mean_log_rho: log_rho.iter().sum::<f64>() / log_rho.len() as f64,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CurvePoint {
    pub p: f64,
    #[serde(rename = "M")]
    pub m: f64,
    pub v: f64,
    pub ci: f64,
    pub reps: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpeedCurve {
    pub points: Vec<CurvePoint>,
    /// Each v exceeds the next by more than the sum of their half-widths.
    pub strictly_decreasing: bool,
}

/// v_{p,M} over a grid of p. Every grid point uses the same seed, so the
/// environments are coupled monotonically in p.
pub fn speed_curve(m: f64, grid: &[f64], reps: usize, seed: u64, tol: f64) -> Result<SpeedCurve> {
    let mut points = Vec::with_capacity(grid.len());
    for &p in grid {
        if !(p > 0.0 && p < 1.0) {
            return Err(MerwError::InvalidArgument(format!("grid value p = {p} outside (0, 1)")));
        }
        let a = annealed_speed(&NuSpec::bernoulli(p, m)?, reps, seed, tol)?;
        points.push(CurvePoint {
            p,
            m,
            v: a.v,
            ci: a.ci_half_width,
            reps,
        });
    }
    let strictly_decreasing = points
        .windows(2)
        .all(|w| w[0].p < w[1].p && w[0].v - w[1].v > w[0].ci + w[1].ci);
    Ok(SpeedCurve {
        points,
        strictly_decreasing,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct BernoulliLimits {
    /// lim_{p→0} v = √(1 − 4/(2+M)²).
    pub p0_limit: f64,
    /// v ∼ c (1 − p) as p → 1 with c = 3/(2+M).
    pub p1_coefficient: f64,
}

pub fn bernoulli_limits(m: f64) -> BernoulliLimits {
    let l = 2.0 + m;
    BernoulliLimits {
        p0_limit: (1.0 - 4.0 / (l * l)).sqrt(),
        p1_coefficient: 3.0 / l,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_environments_are_infinite() {
        for env in [LoopEnvironment::constant(2.0).unwrap(), LoopEnvironment::constant(0.0).unwrap()] {
            assert!(s_closed_form(&env, 1e-12).unwrap().infinite);
        }
    }

    #[test]
    fn step_environment_value() {
        let env = LoopEnvironment::step(2.0).unwrap();
        let s = s_closed_form(&env, 1e-12).unwrap();
        assert!((s.value - 4.0 / (3f64.sqrt() - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn series_is_monotone_with_a_first_term_floor() {
        let env = LoopEnvironment::iid(NuSpec::bernoulli(0.5, 2.0).unwrap(), 3).unwrap();
        let s = s_series(&env, 200, 1e-12).unwrap();
        assert!(s.partial_sums.windows(2).all(|w| w[1] >= w[0]));
        let b0 = beta_at(&env, 0, 1e-12).unwrap().mid();
        let b1 = beta_at(&env, -1, 1e-12).unwrap().mid();
        assert!((s.partial_sums[1] - 4.0 * b0 * (1.0 + b1 * b1)).abs() < 1e-10);
        assert!(s.tail_estimate.is_some());
    }

    #[test]
    fn limits() {
        let l = bernoulli_limits(2.0);
        assert!((l.p0_limit - 3f64.sqrt() / 2.0).abs() < 1e-15);
        assert_eq!(l.p1_coefficient, 0.75);
        assert!((bernoulli_limits(20.0).p0_limit - 0.995859).abs() < 1e-6);
    }
}
