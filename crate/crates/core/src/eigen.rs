//! Excursion values α_i, β_i by certified continued-fraction brackets, and
//! the extremal eigenvectors ψ⁺, ψ⁻ assembled from them in log scale.

use serde::Serialize;

use crate::env::{gamma, tail_fixed_point, EigenSupport, LoopEnvironment};
use crate::error::{MerwError, Result};

pub const DEFAULT_TOL: f64 = 1e-12;
pub const DEFAULT_MAX_DEPTH: usize = 100_000;

/// g_s(x) = 1/(λ − s − x).
pub fn g_map(s: f64, x: f64, lambda: f64) -> Result<f64> {
    let d = lambda - s - x;
    if d > 0.0 {
        Ok(1.0 / d)
    } else {
        Err(MerwError::Pole(d))
    }
}

/// n-fold iterate of g_M (with λ = M + 2) started at u0 < 1.
pub fn g_m_iterate_closed(u0: f64, n: u64) -> f64 {
    if n == 0 {
        return u0;
    }
    1.0 - 1.0 / (1.0 / (1.0 - u0) + n as f64)
}

/// Enclosure [lo, hi] of an α or β value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Bracket {
    pub lo: f64,
    pub hi: f64,
    /// Number of g-maps composed (or propagated through) to get here.
    pub depth: usize,
    pub converged: bool,
}

impl Bracket {
    fn exact(x: f64, depth: usize) -> Self {
        Bracket {
            lo: x,
            hi: x,
            depth,
            converged: true,
        }
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn half_width(&self) -> f64 {
        0.5 * self.width()
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Toward {
    /// β: compose over sites i, i−1, i−2, …
    Left,
    /// α: compose over sites i, i+1, i+2, …
    Right,
}

/// Composition g_{w(i)} ∘ g_{w(i∓1)} ∘ … as a 2×2 Möbius matrix, deepened
/// until its images of γ and 1 are within `tol`, or until a constant tail is
/// reached where the excursion value is known exactly.
fn compose_bracket(
    env: &LoopEnvironment,
    i: i64,
    toward: Toward,
    tol: f64,
    max_depth: usize,
) -> Bracket {
    const CHUNK: i64 = 64;
    let lambda = env.lambda();
    let g0 = gamma(lambda);
    // [[a, b], [c, d]] acting as x ↦ (a x + b)/(c x + d).
    let (mut a, mut b, mut c, mut d) = (1.0f64, 0.0f64, 0.0f64, 1.0f64);
    let mut det = 1.0f64;
    let apply = |a: f64, b: f64, c: f64, d: f64, x: f64| (a * x + b) / (c * x + d);
    let mut chunk: Vec<f64> = Vec::new();
    let mut pos = 0usize;
    let mut last = Bracket {
        lo: g0,
        hi: 1.0,
        depth: 0,
        converged: false,
    };
    for depth in 0..=max_depth {
        let k = match toward {
            Toward::Left => i - depth as i64,
            Toward::Right => i + depth as i64,
        };
        let tail = match toward {
            Toward::Left => env.left_tail(k),
            Toward::Right => env.right_tail(k),
        };
        if let Some(cst) = tail {
            let x = apply(a, b, c, d, tail_fixed_point(lambda, cst));
            return Bracket::exact(x, depth);
        }
        if depth == max_depth {
            break;
        }
        if pos == chunk.len() {
            chunk = match toward {
                Toward::Left => {
                    let mut w = env.weights(k - CHUNK + 1, k);
                    w.reverse();
                    w
                }
                Toward::Right => env.weights(k, k + CHUNK - 1),
            };
            pos = 0;
        }
        let t = lambda - chunk[pos];
        pos += 1;
        // Right-multiply by [[0, 1], [-1, t]] (determinant 1).
        let (na, nb, nc, nd) = (-b, a + b * t, -d, c + d * t);
        let scale = nc.abs().max(nd.abs());
        a = na / scale;
        b = nb / scale;
        c = nc / scale;
        d = nd / scale;
        det /= scale * scale;
        let lo = apply(a, b, c, d, g0);
        let hi = apply(a, b, c, d, 1.0).max(lo);
        let width = det * (1.0 - g0) / ((c + d) * (c * g0 + d));
        last = Bracket {
            lo,
            hi,
            depth: depth + 1,
            // The rounded endpoints can sit a few ulps further apart than the
            // exact width, so both have to be under tol.
            converged: width <= tol && hi - lo <= tol,
        };
        if last.converged {
            return last;
        }
    }
    last
}

fn support_check(env: &LoopEnvironment) -> Result<EigenSupport> {
    match env.eigen_support() {
        EigenSupport::None => Err(MerwError::UnsupportedEnvironment(env.kind_name())),
        s => Ok(s),
    }
}

/// log ψ_i for the periodized eigenvector, normalized so that log ψ_0 = 0.
fn periodic_log_psi(ell: i64, theta: f64, i: i64) -> f64 {
    let half = ell as f64 / 2.0;
    let r = i.rem_euclid(ell) as f64;
    ln_cosh((r - half) * theta) - ln_cosh(half * theta)
}

pub(crate) fn ln_cosh(x: f64) -> f64 {
    let y = x.abs();
    y + (-2.0 * y).exp().ln_1p() - std::f64::consts::LN_2
}

/// β_i with the default depth cap. Non-convergence is reported through the
/// bracket's `converged` flag rather than as an error.
pub fn beta_at(env: &LoopEnvironment, i: i64, tol: f64) -> Result<Bracket> {
    beta_at_depth(env, i, tol, DEFAULT_MAX_DEPTH)
}

pub fn beta_at_depth(env: &LoopEnvironment, i: i64, tol: f64, max_depth: usize) -> Result<Bracket> {
    if support_check(env)? == EigenSupport::Periodized {
        let (ell, _, theta) = env.periodic_params().expect("periodic");
        let x = (periodic_log_psi(ell, theta, i) - periodic_log_psi(ell, theta, i + 1)).exp();
        return Ok(Bracket::exact(x, 0));
    }
    Ok(compose_bracket(env, i, Toward::Left, tol, max_depth))
}

pub fn alpha_at(env: &LoopEnvironment, i: i64, tol: f64) -> Result<Bracket> {
    alpha_at_depth(env, i, tol, DEFAULT_MAX_DEPTH)
}

pub fn alpha_at_depth(env: &LoopEnvironment, i: i64, tol: f64, max_depth: usize) -> Result<Bracket> {
    if support_check(env)? == EigenSupport::Periodized {
        let (ell, _, theta) = env.periodic_params().expect("periodic");
        let x = (periodic_log_psi(ell, theta, i) - periodic_log_psi(ell, theta, i - 1)).exp();
        return Ok(Bracket::exact(x, 0));
    }
    Ok(compose_bracket(env, i, Toward::Right, tol, max_depth))
}

/// β brackets on [a, b]: one deep bracket at a, then pushed rightward through
/// β_i = g_{w_i}(β_{i−1}). Monotonicity keeps the enclosure and never widens it.
pub fn beta_range(env: &LoopEnvironment, a: i64, b: i64, tol: f64) -> Result<Vec<Bracket>> {
    if b < a {
        return Ok(Vec::new());
    }
    if support_check(env)? == EigenSupport::Periodized {
        return (a..=b).map(|i| beta_at(env, i, tol)).collect();
    }
    let lambda = env.lambda();
    let w = env.weights(a, b);
    let mut out = Vec::with_capacity(w.len());
    out.push(beta_at(env, a, tol)?);
    for (k, &wi) in w.iter().enumerate().skip(1) {
        let i = a + k as i64;
        let next = match env.left_tail(i) {
            Some(c) => Bracket::exact(tail_fixed_point(lambda, c), 0),
            None => {
                let prev = out[k - 1];
                let lo = 1.0 / (lambda - wi - prev.lo);
                let hi = (1.0 / (lambda - wi - prev.hi)).max(lo);
                Bracket {
                    lo,
                    hi,
                    depth: prev.depth + 1,
                    converged: hi - lo <= tol,
                }
            }
        };
        out.push(next);
    }
    Ok(out)
}

/// α brackets on [a, b], pushed leftward from a deep bracket at b.
pub fn alpha_range(env: &LoopEnvironment, a: i64, b: i64, tol: f64) -> Result<Vec<Bracket>> {
    if b < a {
        return Ok(Vec::new());
    }
    if support_check(env)? == EigenSupport::Periodized {
        return (a..=b).map(|i| alpha_at(env, i, tol)).collect();
    }
    let lambda = env.lambda();
    let w = env.weights(a, b);
    let n = w.len();
    let mut out = vec![Bracket::exact(0.0, 0); n];
    out[n - 1] = alpha_at(env, b, tol)?;
    for k in (0..n - 1).rev() {
        let i = a + k as i64;
        out[k] = match env.right_tail(i) {
            Some(c) => Bracket::exact(tail_fixed_point(lambda, c), 0),
            None => {
                let prev = out[k + 1];
                let lo = 1.0 / (lambda - w[k] - prev.lo);
                let hi = (1.0 / (lambda - w[k] - prev.hi)).max(lo);
                Bracket {
                    lo,
                    hi,
                    depth: prev.depth + 1,
                    converged: hi - lo <= tol,
                }
            }
        };
    }
    Ok(out)
}

fn require_converged(brackets: &[Bracket], first_site: i64, tol: f64) -> Result<()> {
    match brackets.iter().position(|b| !b.converged) {
        None => Ok(()),
        Some(k) => Err(MerwError::NonConverged {
            site: first_site + k as i64,
            width: brackets[k].width(),
            tol,
            depth: brackets[k].depth,
        }),
    }
}

/// ψ⁺ and ψ⁻ on a window, in log scale, normalized at the origin.
#[derive(Debug, Clone)]
pub struct EigenVector {
    pub window: (i64, i64),
    pub lambda: f64,
    pub weights: Vec<f64>,
    pub log_psi_plus: Vec<f64>,
    pub log_psi_minus: Vec<f64>,
    pub beta: Vec<Bracket>,
    pub alpha: Vec<Bracket>,
    /// Default mixture weight for the convenience accessors.
    pub kappa: f64,
}

pub fn psi_extremal(env: &LoopEnvironment, window: (i64, i64), tol: f64) -> Result<EigenVector> {
    let (a, b) = window;
    if b < a {
        return Err(MerwError::InvalidArgument(format!("empty window [{a}, {b}]")));
    }
    let support = support_check(env)?;
    let weights = env.weights(a, b);
    if support == EigenSupport::Periodized {
        let (ell, _, theta) = env.periodic_params().expect("periodic");
        let log_psi: Vec<f64> = (a..=b).map(|i| periodic_log_psi(ell, theta, i)).collect();
        return Ok(EigenVector {
            window,
            lambda: env.lambda(),
            weights,
            log_psi_plus: log_psi.clone(),
            log_psi_minus: log_psi,
            beta: beta_range(env, a, b, tol)?,
            alpha: alpha_range(env, a, b, tol)?,
            kappa: 1.0,
        });
    }
    // Both products run from the origin, so the window is widened to contain it.
    let lo = a.min(0);
    let hi = b.max(0);
    let beta = beta_range(env, lo, hi, tol)?;
    let alpha = alpha_range(env, lo, hi, tol)?;
    require_converged(&beta, lo, tol)?;
    require_converged(&alpha, lo, tol)?;
    let n = (hi - lo + 1) as usize;
    let z = (-lo) as usize;
    let mut lp = vec![0.0; n];
    let mut lm = vec![0.0; n];
    for k in z + 1..n {
        lp[k] = lp[k - 1] - beta[k - 1].mid().ln();
        lm[k] = lm[k - 1] + alpha[k].mid().ln();
    }
    for k in (0..z).rev() {
        lp[k] = lp[k + 1] + beta[k].mid().ln();
        lm[k] = lm[k + 1] - alpha[k + 1].mid().ln();
    }
    let s = (a - lo) as usize;
    let e = (b - lo) as usize + 1;
    Ok(EigenVector {
        window,
        lambda: env.lambda(),
        weights,
        log_psi_plus: lp[s..e].to_vec(),
        log_psi_minus: lm[s..e].to_vec(),
        beta: beta[s..e].to_vec(),
        alpha: alpha[s..e].to_vec(),
        kappa: 1.0,
    })
}

pub(crate) fn log_add_exp(x: f64, y: f64) -> f64 {
    if x == f64::NEG_INFINITY {
        return y;
    }
    if y == f64::NEG_INFINITY {
        return x;
    }
    let m = x.max(y);
    m + ((x - m).exp() + (y - m).exp()).ln()
}

impl EigenVector {
    pub fn with_kappa(mut self, kappa: f64) -> Self {
        self.kappa = kappa;
        self
    }

    pub fn contains(&self, i: i64) -> bool {
        self.window.0 <= i && i <= self.window.1
    }

    fn idx(&self, i: i64) -> usize {
        assert!(
            self.contains(i),
            "site {i} outside eigenvector window {:?}",
            self.window
        );
        (i - self.window.0) as usize
    }

    pub fn len(&self) -> usize {
        self.log_psi_plus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_psi_plus.is_empty()
    }

    pub fn weight(&self, i: i64) -> f64 {
        self.weights[self.idx(i)]
    }

    pub fn log_psi_plus_at(&self, i: i64) -> f64 {
        self.log_psi_plus[self.idx(i)]
    }

    pub fn log_psi_minus_at(&self, i: i64) -> f64 {
        self.log_psi_minus[self.idx(i)]
    }

    pub fn beta(&self, i: i64) -> Bracket {
        self.beta[self.idx(i)]
    }

    pub fn alpha(&self, i: i64) -> Bracket {
        self.alpha[self.idx(i)]
    }

    /// log ψ^(κ)_i = log(κψ⁺_i + (1−κ)ψ⁻_i).
    pub fn log_psi_mixture(&self, kappa: f64, i: i64) -> f64 {
        let k = self.idx(i);
        log_add_exp(
            kappa.ln() + self.log_psi_plus[k],
            (1.0 - kappa).ln() + self.log_psi_minus[k],
        )
    }

    /// ψ^(κ)_j / ψ^(κ)_i.
    pub fn psi_mixture_ratio(&self, kappa: f64, i: i64, j: i64) -> f64 {
        (self.log_psi_mixture(kappa, j) - self.log_psi_mixture(kappa, i)).exp()
    }

    /// Largest |ψ_{i+1} + w_i ψ_i + ψ_{i−1} − λψ_i| / (λψ_i) over interior sites.
    pub fn residual(&self, kappa: f64) -> f64 {
        let (a, b) = self.window;
        let mut worst = 0.0f64;
        let mut prev = self.log_psi_mixture(kappa, a);
        let mut cur = if b > a { self.log_psi_mixture(kappa, a + 1) } else { prev };
        for i in a + 1..b {
            let next = self.log_psi_mixture(kappa, i + 1);
            let r = (next - cur).exp() + self.weight(i) + (prev - cur).exp() - self.lambda;
            worst = worst.max(r.abs() / self.lambda);
            prev = cur;
            cur = next;
        }
        worst
    }

    /// Scale β_i by `factor`, propagating the change through ψ⁺ as a genuine
    /// error in β_i would. Used to check that residual checks catch corruption.
    pub fn perturb_beta(&mut self, i: i64, factor: f64) {
        let k = self.idx(i);
        let b = &mut self.beta[k];
        b.lo *= factor;
        b.hi *= factor;
        let d = factor.ln();
        if i >= 0 {
            for lp in &mut self.log_psi_plus[k + 1..] {
                *lp -= d;
            }
        } else {
            for lp in &mut self.log_psi_plus[..=k] {
                *lp += d;
            }
        }
    }

    /// Largest bracket width used by this eigenvector.
    pub fn max_bracket_width(&self) -> f64 {
        self.beta
            .iter()
            .chain(&self.alpha)
            .map(Bracket::width)
            .fold(0.0, f64::max)
    }
}

/// Closed forms for the step environment (weight M on sites ≤ 0, none above).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct StepClosedForms {
    pub m: f64,
    pub lambda: f64,
    pub gamma: f64,
    /// Speed of the extremal walk: (1/λ)(1/γ − γ).
    pub v: f64,
}

pub fn step_closed_forms(m: f64) -> Result<StepClosedForms> {
    if !(m > 0.0 && m.is_finite()) {
        return Err(MerwError::InvalidArgument(format!("M = {m} must be positive")));
    }
    let lambda = m + 2.0;
    let g = gamma(lambda);
    // 1/γ − γ = √(λ² − 4) = √(M(M + 4)), written to avoid cancellation at small M.
    let v = (m * (m + 4.0)).sqrt() / lambda;
    Ok(StepClosedForms {
        m,
        lambda,
        gamma: g,
        v,
    })
}

impl StepClosedForms {
    pub fn psi_plus(&self, k: i64) -> f64 {
        if k <= 0 {
            1.0
        } else {
            let g = self.gamma;
            g / (1.0 + g) * g.powi(-(k as i32)) + g.powi(k as i32) / (1.0 + g)
        }
    }

    pub fn psi_minus(&self, k: i64) -> f64 {
        if k <= 0 {
            1.0 - (1.0 - self.gamma) * k as f64
        } else {
            self.gamma.powi(k as i32)
        }
    }
}
