//! Fast consistency checks bundled into the `selfcheck` command.

use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::One;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::eigen::{alpha_at, beta_at, psi_extremal, step_closed_forms};
use crate::env::{LoopEnvironment, NuSpec};
use crate::error::Result;
use crate::kernel::hitting_probability;
use crate::oracle;
use crate::periodic;
use crate::sim::{self, WalkConfig};
use crate::speed;

#[derive(Debug, Clone, Default)]
pub struct SelfcheckOptions {
    /// Corrupt one β value before the residual check (negative control).
    pub corrupt_beta: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

type Check = fn(&SelfcheckOptions) -> Result<(bool, String)>;

pub fn selfcheck(opts: &SelfcheckOptions) -> Vec<CheckOutcome> {
    let checks: [(&'static str, Check); 11] = [
        ("eigen-residuals", eigen_residuals),
        ("bracket-bounds", bracket_bounds),
        ("step-closed-forms", step_forms),
        ("green-identity", green_identity),
        ("exact-counts", exact_counts),
        ("speed-routes", speed_routes),
        ("bernoulli-limits", bernoulli_limits),
        ("hitting-probability", hitting),
        ("coupling", coupling),
        ("periodic", periodic_checks),
        ("lambda-estimation", lambda_estimation),
    ];
    checks
        .iter()
        .map(|(name, f)| match f(opts) {
            Ok((passed, detail)) => CheckOutcome { name, passed, detail },
            Err(e) => CheckOutcome {
                name,
                passed: false,
                detail: format!("error: {e}"),
            },
        })
        .collect()
}

fn bernoulli_env(p: f64, m: f64, seed: u64) -> Result<LoopEnvironment> {
    LoopEnvironment::iid(NuSpec::bernoulli(p, m)?, seed)
}

fn eigen_residuals(opts: &SelfcheckOptions) -> Result<(bool, String)> {
    let envs = [
        LoopEnvironment::constant(2.0)?,
        LoopEnvironment::step(2.0)?,
        LoopEnvironment::periodic(5, 2.0)?,
        bernoulli_env(0.3, 2.0, 1)?,
        bernoulli_env(0.3, 2.0, 2)?,
        bernoulli_env(0.3, 2.0, 3)?,
    ];
    let mut worst = 0.0f64;
    for env in &envs {
        let mut ev = psi_extremal(env, (-200, 200), 1e-12)?;
        if opts.corrupt_beta {
            ev.perturb_beta(7, 1.0 + 1e-6);
        }
        for kappa in [0.0, 0.5, 1.0] {
            worst = worst.max(ev.residual(kappa));
        }
    }
    Ok((worst <= 1e-10, format!("max relative residual {worst:.3e}")))
}

fn bracket_bounds(_: &SelfcheckOptions) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut ok = true;
    for _ in 0..1000 {
        let env = bernoulli_env(rng.random_range(0.05..0.95), 2.0, rng.random())?;
        let g = env.gamma();
        let i = rng.random_range(-1000..1000);
        for b in [beta_at(&env, i, 1e-12)?, alpha_at(&env, i, 1e-12)?] {
            ok &= b.converged && b.width() <= 1e-12 && b.lo >= g - 1e-14 && b.hi <= 1.0 + 1e-14;
        }
    }
    let step = LoopEnvironment::step(2.0)?;
    let ends = (beta_at(&step, -5, 1e-12)?.mid() - 1.0).abs() <= 1e-12
        && (alpha_at(&step, 5, 1e-12)?.mid() - step.gamma()).abs() <= 1e-12;
    Ok((ok && ends, format!("1000 random sites inside [gamma, 1]: {ok}; tail endpoints: {ends}")))
}

fn step_forms(_: &SelfcheckOptions) -> Result<(bool, String)> {
    let env = LoopEnvironment::step(2.0)?;
    let ev = psi_extremal(&env, (-10, 10), 1e-13)?;
    let cf = step_closed_forms(2.0)?;
    let mut gap = 0.0f64;
    for i in -10..=10 {
        gap = gap.max((ev.log_psi_plus_at(i).exp() - cf.psi_plus(i)).abs() / cf.psi_plus(i));
        gap = gap.max((ev.log_psi_minus_at(i).exp() - cf.psi_minus(i)).abs() / cf.psi_minus(i));
    }
    let v = (cf.v - 3f64.sqrt() / 2.0).abs();
    let small = step_closed_forms(1e-4)?.v / 1e-2;
    // v_M → 1 as M → ∞, with 1 − v_M ∼ 2/M².
    let large = (1.0 - step_closed_forms(1e4)?.v) * 1e8 / 2.0;
    let ok = gap <= 1e-10 && v <= 1e-12 && (0.9..=1.1).contains(&small) && (0.9..=1.1).contains(&large);
    Ok((ok, format!("psi gap {gap:.2e}, v_2 error {v:.2e}, v/sqrt(M) {small:.4}, (1-v)M^2/2 {large:.4}")))
}

fn green_identity(_: &SelfcheckOptions) -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    let mut ok = true;
    for seed in [11, 12] {
        let env = bernoulli_env(0.5, 2.0, seed)?;
        let s = speed::s_closed_form(&env, 1e-12)?;
        let g = oracle::green_auto(&env, 0, 0, 1e-7, 1 << 13);
        let sums = &g.partial_sums;
        ok &= sums.windows(2).all(|w| w[1] >= w[0]);
        ok &= *sums.last().unwrap() <= s.value + s.error_bound + 1e-9;
        worst = worst.max(s.value - sums.last().unwrap());
    }
    ok &= worst < 1e-4;
    Ok((ok, format!("largest gap to closed form {worst:.2e}")))
}

fn exact_counts(_: &SelfcheckOptions) -> Result<(bool, String)> {
    let t = oracle::count_excursions(8)?;
    let mut ok = true;
    for n in 0..=4usize {
        ok &= t.get(2 * n, 0, 0) == binomial(2 * n, n);
    }
    ok &= t.get(1, 1, 1) == BigUint::one() && t.get(3, 1, 1) == BigUint::from(6u32);
    let p = BigRational::new(1.into(), 3.into());
    let m = BigRational::from_integer(2.into());
    for n in 0..=6 {
        ok &= t.polynomial(n, &p, &m) == oracle::annealed_return_weight(n, &p, &m);
    }
    Ok((ok, "central binomials, small entries, annealed identity n <= 6".into()))
}

pub fn binomial(n: usize, k: usize) -> BigUint {
    (0..k).fold(BigUint::one(), |acc, i| acc * BigUint::from(n - i) / BigUint::from(i + 1))
}

fn speed_routes(_: &SelfcheckOptions) -> Result<(bool, String)> {
    let nu = NuSpec::bernoulli(0.5, 2.0)?;
    let a = speed::annealed_speed(&nu, 20_000, 5, 1e-12)?;
    let band = oracle::speed_series_bernoulli(0.5, 2.0, 12)?;
    let (lo, hi) = band.v_interval();
    let ok = a.v + a.ci_half_width >= lo && a.v - a.ci_half_width <= hi;
    Ok((ok, format!("annealed v {:.4} ± {:.4}, series band [{lo:.4}, {hi:.4}]", a.v, a.ci_half_width)))
}

fn bernoulli_limits(_: &SelfcheckOptions) -> Result<(bool, String)> {
    let lim = speed::bernoulli_limits(2.0);
    let lo = speed::annealed_speed(&NuSpec::bernoulli(1e-3, 2.0)?, 5_000, 3, 1e-12)?;
    let ok = lo.v > 0.8 * lim.p0_limit && lo.v <= lim.p0_limit;
    Ok((ok, format!("v(1e-3) = {:.5}, limit {:.5}", lo.v, lim.p0_limit)))
}

fn hitting(_: &SelfcheckOptions) -> Result<(bool, String)> {
    let env = bernoulli_env(0.3, 2.0, 21)?;
    let ev = psi_extremal(&env, (-10, 10), 1e-12)?;
    let h = hitting_probability(&ev, 0.5, 3)?;
    let d = sim::estimate_direction(&env, &WalkConfig::new(0.5, 3, 2000), 2000, 8)?;
    let z = (d.fraction_right - h).abs() / d.std_err.max(1e-12);
    Ok((z <= 3.0, format!("formula {h:.4}, simulated {:.4} ({z:.2} sigma)", d.fraction_right)))
}

fn coupling(_: &SelfcheckOptions) -> Result<(bool, String)> {
    let env = bernoulli_env(0.3, 2.0, 31)?;
    let run = sim::simulate_coupled(&env, &WalkConfig::new(0.5, 200, 5000), 4)?;
    let m = run.coupling_step();
    let same = run.kappa.positions[m..] == run.plus.positions[m..];
    Ok((same, format!("{} bad times, coupled from step {m}", run.bad_times.len())))
}

fn periodic_checks(_: &SelfcheckOptions) -> Result<(bool, String)> {
    let sol = periodic::periodic_measure(10, 2.0)?;
    let mut ok = periodic::theta_residual(10, 2.0, sol.theta).abs() <= 1e-12;
    ok &= (sol.z - sol.z_direct).abs() / sol.z_direct <= 1e-10;
    ok &= (periodic::solve_theta(200, 2.0, 1e-12)? - (1.0 + 2f64.sqrt()).ln()).abs() < 1e-3;
    for (l, m) in [(5, 1.0), (8, 2.0), (12, 3.0)] {
        let s = periodic::periodic_measure(l, m)?;
        ok &= (periodic::entropy_rate(l, m)? - s.lambda.ln()).abs() <= 1e-10;
    }
    ok &= periodic::concentration_mass(200, 2.0, 0.1)?.mass >= 0.9;
    let occ = periodic::periodic_occupation(5, 2.0, 200_000, 1)?;
    ok &= occ.total_variation <= 0.05;
    Ok((ok, format!("occupation TV distance {:.4}", occ.total_variation)))
}

fn lambda_estimation(_: &SelfcheckOptions) -> Result<(bool, String)> {
    let mut ok = true;
    let mut detail = Vec::new();
    for env in [
        LoopEnvironment::constant(0.0)?,
        LoopEnvironment::constant(2.0)?,
        LoopEnvironment::single_loop(2.0)?,
    ] {
        let t = oracle::estimate_lambda(&env, 0, 60);
        ok &= t.relative_gap <= 0.05 && t.monotone_tail;
        detail.push(format!("{}: {:.4}/{:.4}", env.kind_name(), t.last, t.lambda));
    }
    Ok((ok, detail.join(", ")))
}
