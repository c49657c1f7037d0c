//! The ℓ-periodic environment seen through its reduced graph: the cycle ℤ/ℓℤ
//! with a single loop of weight M at vertex 0.

use serde::Serialize;

use crate::env::LoopEnvironment;
use crate::error::{MerwError, Result};
use crate::sim::{self, SpeedEstimate, WalkConfig};

fn check(ell: u32, m: f64) -> Result<()> {
    if ell < 2 {
        return Err(MerwError::InvalidArgument(format!("period {ell} must be at least 2")));
    }
    if !(m > 0.0 && m.is_finite()) {
        return Err(MerwError::InvalidArgument(format!("M = {m} must be positive")));
    }
    Ok(())
}

/// 2 tanh(ℓθ/2) sinh θ − M.
pub fn theta_residual(ell: u32, m: f64, theta: f64) -> f64 {
    2.0 * (ell as f64 * theta / 2.0).tanh() * theta.sinh() - m
}

/// Positive root of 2 tanh(ℓθ/2) sinh θ = M by bisection.
pub fn solve_theta(ell: u32, m: f64, tol: f64) -> Result<f64> {
    check(ell, m)?;
    let f = |t: f64| theta_residual(ell, m, t);
    let mut lo = 1e-12;
    // tanh < 1 puts the root above asinh(M/2).
    let mut hi = (m / 2.0).asinh() + 1.0;
    if !(f(lo) < 0.0 && f(hi) > 0.0) {
        return Err(MerwError::InvalidArgument(format!(
            "no sign change for theta on [{lo}, {hi}] (ell = {ell}, M = {m})"
        )));
    }
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let theta = if f(lo).abs() < f(hi).abs() { lo } else { hi };
    let r = f(theta).abs();
    if r > tol.max(4.0 * f64::EPSILON * m.max(1.0)) {
        return Err(MerwError::NonConverged {
            site: 0,
            width: r,
            tol,
            depth: 0,
        });
    }
    Ok(theta)
}

#[derive(Debug, Clone, Serialize)]
pub struct PeriodicSolution {
    pub ell: u32,
    #[serde(rename = "M")]
    pub m: f64,
    pub theta: f64,
    pub lambda: f64,
    /// ψ(n) = cosh((n − ℓ/2)θ) for n = 0, …, ℓ−1.
    pub psi: Vec<f64>,
    pub pi: Vec<f64>,
    #[serde(rename = "Z")]
    pub z: f64,
    pub z_direct: f64,
}

/// Σ_{n<ℓ} cosh²((n − ℓ/2)θ) in closed form.
pub fn normalizer(ell: u32, theta: f64) -> f64 {
    let l = ell as f64;
    l / 2.0 + (l * theta).sinh() * theta.cosh() / (2.0 * theta.sinh())
}

pub fn periodic_measure(ell: u32, m: f64) -> Result<PeriodicSolution> {
    let theta = solve_theta(ell, m, 1e-12)?;
    let half = ell as f64 / 2.0;
    let psi: Vec<f64> = (0..ell).map(|n| ((n as f64 - half) * theta).cosh()).collect();
    let z_direct: f64 = psi.iter().map(|p| p * p).sum();
    let pi = psi.iter().map(|p| p * p / z_direct).collect();
    Ok(PeriodicSolution {
        ell,
        m,
        theta,
        lambda: 2.0 * theta.cosh(),
        psi,
        pi,
        z: normalizer(ell, theta),
        z_direct,
    })
}

/// Weighted adjacency of the reduced graph. For ℓ = 2 both neighbours of a
/// vertex coincide, giving an edge of weight 2.
pub fn reduced_adjacency(ell: u32, m: f64) -> Vec<Vec<f64>> {
    let l = ell as usize;
    let mut a = vec![vec![0.0; l]; l];
    for (i, row) in a.iter_mut().enumerate() {
        row[(i + 1) % l] += 1.0;
        row[(i + l - 1) % l] += 1.0;
    }
    a[0][0] += m;
    a
}

/// q_ij = a_ij ψ_j / (λ ψ_i) on the reduced graph.
pub fn reduced_kernel(sol: &PeriodicSolution) -> Vec<Vec<f64>> {
    let a = reduced_adjacency(sol.ell, sol.m);
    a.iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .enumerate()
                .map(|(j, &aij)| aij * sol.psi[j] / (sol.lambda * sol.psi[i]))
                .collect()
        })
        .collect()
}

/// −Σ π_i q_ij log(q_ij / a_ij).
pub fn kernel_entropy(pi: &[f64], q: &[Vec<f64>], a: &[Vec<f64>]) -> f64 {
    let mut e = 0.0;
    for i in 0..pi.len() {
        for j in 0..pi.len() {
            if q[i][j] > 0.0 {
                e -= pi[i] * q[i][j] * (q[i][j] / a[i][j]).ln();
            }
        }
    }
    e
}

/// Entropy rate of the maximal entropy walk on the reduced graph.
pub fn entropy_rate(ell: u32, m: f64) -> Result<f64> {
    let sol = periodic_measure(ell, m)?;
    let q = reduced_kernel(&sol);
    Ok(kernel_entropy(&sol.pi, &q, &reduced_adjacency(ell, m)))
}

/// Entropy rate of the walk choosing each unit of edge weight uniformly
/// (q_ij = a_ij / d_i, stationary law ∝ d_i).
pub fn srw_entropy_rate(ell: u32, m: f64) -> Result<f64> {
    check(ell, m)?;
    let a = reduced_adjacency(ell, m);
    let d: Vec<f64> = a.iter().map(|r| r.iter().sum()).collect();
    let total: f64 = d.iter().sum();
    let pi: Vec<f64> = d.iter().map(|x| x / total).collect();
    let q: Vec<Vec<f64>> = a
        .iter()
        .zip(&d)
        .map(|(r, di)| r.iter().map(|x| x / di).collect())
        .collect();
    Ok(kernel_entropy(&pi, &q, &a))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct PeriodicLimits {
    pub theta_star: f64,
    pub lambda_star: f64,
}

/// θ and λ as the period grows with M fixed.
pub fn periodic_limits(m: f64) -> PeriodicLimits {
    let s = (m * m + 4.0).sqrt();
    PeriodicLimits {
        theta_star: ((m + s) / 2.0).ln(),
        lambda_star: s,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Concentration {
    pub eps: f64,
    pub radius: usize,
    pub mass: f64,
    /// The ball of radius d covers the whole cycle.
    pub degenerate: bool,
}

/// Stationary mass within distance d of the loop, d = ⌈ln(1/(λ*ε)) / (2θ*)⌉.
pub fn concentration_mass(ell: u32, m: f64, eps: f64) -> Result<Concentration> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(MerwError::InvalidArgument(format!("eps = {eps} outside (0, 1)")));
    }
    let sol = periodic_measure(ell, m)?;
    let lim = periodic_limits(m);
    let r = ((1.0 / (lim.lambda_star * eps)).ln() / (2.0 * lim.theta_star)).ceil();
    let radius = r.max(0.0) as usize;
    Ok(mass_within(&sol, eps, radius))
}

pub fn mass_within(sol: &PeriodicSolution, eps: f64, radius: usize) -> Concentration {
    let l = sol.ell as usize;
    if 2 * radius + 1 >= l {
        return Concentration {
            eps,
            radius,
            mass: 1.0,
            degenerate: true,
        };
    }
    let mut mass = sol.pi[0];
    for n in 1..=radius {
        mass += sol.pi[n] + sol.pi[l - n];
    }
    Concentration {
        eps,
        radius,
        mass,
        degenerate: false,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RecurrenceReport {
    pub speed: SpeedEstimate,
    /// |mean| below three CI half-widths.
    pub zero_speed_consistent: bool,
}

/// Speed of the walk on the periodic line; it is recurrent, so the speed
/// should be indistinguishable from zero.
pub fn periodic_recurrence_check(
    ell: u32,
    m: f64,
    steps: usize,
    replicas: usize,
    seed: u64,
) -> Result<RecurrenceReport> {
    let env = LoopEnvironment::periodic(ell, m)?;
    let cfg = WalkConfig::new(1.0, 0, steps);
    let speed = sim::estimate_speed(&env, &cfg, replicas, seed)?.overall;
    let zero_speed_consistent = speed.mean.abs() < 3.0 * speed.ci_half_width;
    Ok(RecurrenceReport {
        speed,
        zero_speed_consistent,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Occupation {
    pub empirical: Vec<f64>,
    pub pi: Vec<f64>,
    pub total_variation: f64,
}

/// Fraction of time a single trajectory spends at each residue mod ℓ.
pub fn periodic_occupation(ell: u32, m: f64, steps: usize, seed: u64) -> Result<Occupation> {
    let env = LoopEnvironment::periodic(ell, m)?;
    let sol = periodic_measure(ell, m)?;
    let traj = sim::simulate(&env, &WalkConfig::new(1.0, 0, steps), seed)?;
    let l = ell as i64;
    let mut counts = vec![0u64; ell as usize];
    for &x in &traj.positions[1..] {
        counts[x.rem_euclid(l) as usize] += 1;
    }
    let n = steps.max(1) as f64;
    let empirical: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
    let total_variation = 0.5
        * empirical
            .iter()
            .zip(&sol.pi)
            .map(|(e, p)| (e - p).abs())
            .sum::<f64>();
    Ok(Occupation {
        empirical,
        pi: sol.pi,
        total_variation,
    })
}
