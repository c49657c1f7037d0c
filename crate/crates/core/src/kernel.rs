//! Transition kernels of the maximal entropy walk built from eigen data.

use serde::Serialize;

use crate::eigen::EigenVector;
use crate::env::LoopEnvironment;
use crate::error::{MerwError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Transition {
    pub left: f64,
    pub stay: f64,
    pub right: f64,
}

/// Per-site (left, stay, right) probabilities on a window.
#[derive(Debug, Clone)]
pub struct MerwKernel {
    pub window: (i64, i64),
    pub kappa: f64,
    pub lambda: f64,
    rows: Vec<Transition>,
    /// Row sums before the move probabilities were rescaled.
    row_sum_pre: Vec<f64>,
}

fn check_kappa(kappa: f64) -> Result<()> {
    if (0.0..=1.0).contains(&kappa) {
        Ok(())
    } else {
        Err(MerwError::InvalidArgument(format!("kappa = {kappa} outside [0, 1]")))
    }
}

/// p_right(i) = ψ_{i+1}/(λψ_i), p_left(i) = ψ_{i−1}/(λψ_i), p_stay(i) = w_i/λ
/// with ψ = κψ⁺ + (1−κ)ψ⁻.
pub fn merw_kernel(
    env: &LoopEnvironment,
    ev: &EigenVector,
    kappa: f64,
    window: (i64, i64),
) -> Result<MerwKernel> {
    check_kappa(kappa)?;
    let (a, b) = window;
    let (ea, eb) = ev.window;
    if !(ea < a && a <= b && b < eb) {
        return Err(MerwError::WindowOutside {
            lo: a,
            hi: b,
            ev_lo: ea,
            ev_hi: eb,
        });
    }
    let lambda = env.lambda();
    let weights = env.weights(a, b);
    let n = weights.len();
    let mut rows = Vec::with_capacity(n);
    let mut row_sum_pre = Vec::with_capacity(n);
    for (k, &w) in weights.iter().enumerate() {
        let i = a + k as i64;
        let (right, left) = if kappa == 1.0 {
            (1.0 / (lambda * ev.beta(i).mid()), ev.beta(i - 1).mid() / lambda)
        } else if kappa == 0.0 {
            (ev.alpha(i + 1).mid() / lambda, 1.0 / (lambda * ev.alpha(i).mid()))
        } else {
            (
                ev.psi_mixture_ratio(kappa, i, i + 1) / lambda,
                ev.psi_mixture_ratio(kappa, i, i - 1) / lambda,
            )
        };
        let stay = w / lambda;
        row_sum_pre.push(left + stay + right);
        // Rescale only the moves so that p_stay stays exactly w_i/λ.
        let s = (1.0 - stay) / (left + right);
        rows.push(Transition {
            left: left * s,
            stay,
            right: right * s,
        });
    }
    Ok(MerwKernel {
        window,
        kappa,
        lambda,
        rows,
        row_sum_pre,
    })
}

impl MerwKernel {
    pub fn contains(&self, i: i64) -> bool {
        self.window.0 <= i && i <= self.window.1
    }

    pub fn at(&self, i: i64) -> Transition {
        assert!(self.contains(i), "site {i} outside kernel window {:?}", self.window);
        self.rows[(i - self.window.0) as usize]
    }

    pub fn row_sum_pre(&self, i: i64) -> f64 {
        self.row_sum_pre[(i - self.window.0) as usize]
    }

    pub fn sites(&self) -> impl Iterator<Item = i64> {
        self.window.0..=self.window.1
    }

    /// Move for uniform u: right on [0, p_right), stay on the next p_stay, else left.
    #[inline]
    pub fn step(&self, i: i64, u: f64) -> i64 {
        let t = &self.rows[(i - self.window.0) as usize];
        if u < t.right {
            i + 1
        } else if u < t.right + t.stay {
            i
        } else {
            i - 1
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct KernelReport {
    /// max |p_left + p_stay + p_right − 1| before rescaling.
    pub max_row_sum_deviation_pre: f64,
    /// Same after rescaling.
    pub max_row_sum_deviation: f64,
    pub min_entry: f64,
    /// max |Σ_j p_ij h(j) − h(i)| for h = ψ⁺/ψ^(κ).
    pub max_harmonic_residual: f64,
    /// max h, which must not exceed 1/κ.
    pub max_h: f64,
    pub h_bounded: bool,
    /// max (Σ_j p⁺_ij h̃(j) − h̃(i)) / h̃(i) for h̃ = ψ⁻/ψ⁺ (only when κ = 1).
    pub max_superharmonic_excess: Option<f64>,
}

pub fn validate_kernel(k: &MerwKernel, ev: &EigenVector) -> KernelReport {
    let kappa = k.kappa;
    let log_h = |i: i64| {
        if kappa == 1.0 {
            0.0
        } else {
            ev.log_psi_plus_at(i) - ev.log_psi_mixture(kappa, i)
        }
    };
    let mut dev_pre = 0.0f64;
    let mut dev = 0.0f64;
    let mut min_entry = f64::INFINITY;
    let mut harm = 0.0f64;
    let mut max_h = 0.0f64;
    let mut superh: Option<f64> = (kappa == 1.0).then_some(f64::NEG_INFINITY);
    for i in k.sites() {
        let t = k.at(i);
        dev_pre = dev_pre.max((k.row_sum_pre(i) - 1.0).abs());
        dev = dev.max((t.left + t.stay + t.right - 1.0).abs());
        min_entry = min_entry.min(t.left.min(t.stay).min(t.right));
        let h = [log_h(i - 1).exp(), log_h(i).exp(), log_h(i + 1).exp()];
        max_h = max_h.max(h[1]);
        let ph = t.left * h[0] + t.stay * h[1] + t.right * h[2];
        harm = harm.max((ph - h[1]).abs());
        if let Some(s) = superh.as_mut() {
            // Ratios h̃(i±1)/h̃(i) directly in log scale.
            let lt = |j: i64| ev.log_psi_minus_at(j) - ev.log_psi_plus_at(j);
            let c = lt(i);
            let rel = t.left * (lt(i - 1) - c).exp() + t.stay + t.right * (lt(i + 1) - c).exp();
            *s = s.max(rel - 1.0);
        }
    }
    KernelReport {
        max_row_sum_deviation_pre: dev_pre,
        max_row_sum_deviation: dev,
        min_entry,
        max_harmonic_residual: harm,
        max_h,
        h_bounded: kappa == 0.0 || max_h <= 1.0 / kappa * (1.0 + 1e-12),
        max_superharmonic_excess: superh,
    }
}

/// Probability that the κ-walk started at k escapes to +∞:
/// κψ⁺_k / (κψ⁺_k + (1−κ)ψ⁻_k).
pub fn hitting_probability(ev: &EigenVector, kappa: f64, k: i64) -> Result<f64> {
    check_kappa(kappa)?;
    if kappa == 0.0 {
        return Ok(0.0);
    }
    if kappa == 1.0 {
        return Ok(1.0);
    }
    let x = (1.0 - kappa).ln() + ev.log_psi_minus_at(k) - kappa.ln() - ev.log_psi_plus_at(k);
    Ok(1.0 / (1.0 + x.exp()))
}
