//! End-to-end acceptance suite. Every test prints one PASS/FAIL line on
//! stderr (bypassing the test harness capture) before asserting.

use std::io::Write;
use std::process::Command;
use std::time::{Duration, Instant};

use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::One;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use merw_core::eigen::{alpha_at, beta_at, psi_extremal, step_closed_forms};
use merw_core::kernel::hitting_probability;
use merw_core::oracle;
use merw_core::periodic;
use merw_core::sim::{self, WalkConfig};
use merw_core::speed;
use merw_core::stats::intervals_overlap;
use merw_core::{LoopEnvironment, NuSpec};

fn report(name: &str, passed: bool, detail: &str) {
    let line = format!("[{}] {name}: {detail}\n", if passed { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn verdict(name: &str, checks: &[(bool, String)]) {
    let passed = checks.iter().all(|c| c.0);
    let detail: Vec<String> = checks
        .iter()
        .map(|(ok, d)| if *ok { d.clone() } else { format!("{d} <-- failed") })
        .collect();
    report(name, passed, &detail.join("; "));
    assert!(passed, "{name}: {}", detail.join("; "));
}

fn bernoulli(p: f64, m: f64, seed: u64) -> LoopEnvironment {
    LoopEnvironment::iid(NuSpec::bernoulli(p, m).unwrap(), seed).unwrap()
}

fn within(t: Instant, limit: Duration) -> (bool, String) {
    let e = t.elapsed();
    (e < limit, format!("runtime {:.2}s (limit {}s)", e.as_secs_f64(), limit.as_secs()))
}

#[test]
fn eigen_recurrence_residuals() {
    let t = Instant::now();
    let envs = vec![
        ("constant(2)", LoopEnvironment::constant(2.0).unwrap()),
        ("step(2)", LoopEnvironment::step(2.0).unwrap()),
        ("periodic(5,2)", LoopEnvironment::periodic(5, 2.0).unwrap()),
        ("iid(0.3,2)#1", bernoulli(0.3, 2.0, 1)),
        ("iid(0.3,2)#2", bernoulli(0.3, 2.0, 2)),
        ("iid(0.3,2)#3", bernoulli(0.3, 2.0, 3)),
    ];
    let mut checks = Vec::new();
    for (name, env) in &envs {
        let ev = psi_extremal(env, (-200, 200), 1e-12).unwrap();
        let worst = [1.0, 0.0, 0.5].iter().map(|&k| ev.residual(k)).fold(0.0, f64::max);
        checks.push((worst <= 1e-10, format!("{name} {worst:.1e}")));
    }
    checks.push(within(t, Duration::from_secs(5)));
    verdict("eigen recurrence residuals on [-200, 200]", &checks);
}

#[test]
fn bracket_bounds_and_tail_endpoints() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(10_000);
    let mut bad = 0;
    let mut first_bad = String::new();
    let mut widest = 0.0f64;
    for _ in 0..10_000 {
        let p = rng.random_range(0.05..0.95);
        let m = [0.5, 1.0, 2.0, 5.0][rng.random_range(0..4)];
        let env = bernoulli(p, m, rng.random());
        let i = rng.random_range(-10_000..=10_000);
        let g = env.gamma();
        for b in [beta_at(&env, i, 1e-12).unwrap(), alpha_at(&env, i, 1e-12).unwrap()] {
            widest = widest.max(b.width());
            if !(b.converged && b.width() <= 1e-12 && b.lo >= g - 1e-14 && b.hi <= 1.0 + 1e-14) {
                if bad == 0 {
                    first_bad = format!(" (first: p {p:.3} M {m} site {i} [{:e}, {:e}] gamma {g:e})", b.lo, b.hi);
                }
                bad += 1;
            }
        }
    }
    let zero_left = LoopEnvironment::explicit(0, vec![1.0, 2.0], 0.0, 2.0).unwrap();
    let m_right = LoopEnvironment::explicit(0, vec![1.0], 0.0, 2.0).unwrap();
    let m_left = LoopEnvironment::explicit(0, vec![0.5, 0.0], 2.0, 0.0).unwrap();
    let g = zero_left.gamma();
    let ends = [
        (beta_at(&zero_left, -1, 1e-12).unwrap().mid() - g).abs(),
        (alpha_at(&m_right, 1, 1e-12).unwrap().mid() - 1.0).abs(),
        (beta_at(&m_left, -1, 1e-12).unwrap().mid() - 1.0).abs(),
        (alpha_at(&m_left, 2, 1e-12).unwrap().mid() - g).abs(),
    ];
    let end_gap = ends.iter().copied().fold(0.0, f64::max);
    verdict(
        "alpha/beta brackets inside [gamma, 1]",
        &[
            (bad == 0, format!("20000 brackets, {bad} violations{first_bad}, widest {widest:.1e}")),
            (end_gap <= 1e-12, format!("all-0 / all-M tails off by {end_gap:.1e}")),
            within(t, Duration::from_secs(10)),
        ],
    );
}

#[test]
fn step_environment_closed_forms() {
    let env = LoopEnvironment::step(2.0).unwrap();
    let ev = psi_extremal(&env, (-10, 10), 1e-13).unwrap();
    let cf = step_closed_forms(2.0).unwrap();
    let mut gap = 0.0f64;
    for i in -10..=10 {
        gap = gap.max((ev.log_psi_plus_at(i).exp() / cf.psi_plus(i) - 1.0).abs());
        gap = gap.max((ev.log_psi_minus_at(i).exp() / cf.psi_minus(i) - 1.0).abs());
    }
    let v_err = (cf.v - 3f64.sqrt() / 2.0).abs();
    let small = step_closed_forms(1e-4).unwrap().v / 1e-4f64.sqrt();
    let large = step_closed_forms(1e4).unwrap().v * 1e4;
    verdict(
        "step environment closed forms",
        &[
            (gap <= 1e-10, format!("relative psi gap on [-10, 10] {gap:.1e}")),
            (v_err <= 1e-12, format!("|v_2 - sqrt(3)/2| = {v_err:.1e}")),
            ((0.9..=1.1).contains(&small), format!("v/sqrt(M) at 1e-4 = {small:.5}")),
            ((0.9..=1.1).contains(&large), format!("v*M at 1e4 = {large:.5}")),
        ],
    );
}

#[test]
fn green_sums_approach_closed_form() {
    let t = Instant::now();
    let mut checks = Vec::new();
    for seed in 1..=5 {
        let env = bernoulli(0.5, 2.0, seed);
        let s = speed::s_closed_form(&env, 1e-12).unwrap();
        let g = oracle::green_auto(&env, 0, 0, 1e-7, 1 << 14);
        let sums = &g.partial_sums;
        let monotone = sums.windows(2).all(|w| w[1] >= w[0]);
        let last = *sums.last().unwrap();
        let bounded = sums.iter().all(|&x| x <= s.value + s.error_bound + 1e-12);
        let gap = s.value - last;
        checks.push((
            monotone && bounded && gap.abs() < 1e-4,
            format!("seed {seed}: S {:.6}, N {} sum {last:.6}", s.value, g.n),
        ));
    }
    checks.push(within(t, Duration::from_secs(30)));
    verdict("Green partial sums vs closed-form S", &checks);
}

fn binomial(n: usize, k: usize) -> BigUint {
    (0..k).fold(BigUint::one(), |acc, i| acc * BigUint::from(n - i) / BigUint::from(i + 1))
}

#[test]
fn exact_excursion_counts() {
    let table = oracle::count_excursions(16).unwrap();
    let central = (0..=8).all(|n| table.get(2 * n, 0, 0) == binomial(2 * n, n));
    let odd = (0..8).all(|n| table.get(2 * n + 1, 0, 0) == BigUint::ZERO);
    let small = table.get(1, 1, 1) == BigUint::one()
        && table.get(3, 1, 1) == BigUint::from(6u32)
        && table.get(3, 1, 3) == BigUint::one();
    let p = BigRational::new(1.into(), 3.into());
    let m = BigRational::from_integer(2.into());
    let annealed = (0..=8).all(|n| table.polynomial(n, &p, &m) == oracle::annealed_return_weight(n, &p, &m));
    verdict(
        "exact excursion counts",
        &[
            (central && odd, "c_2n(0,0) = C(2n,n), c_2n+1(0,0) = 0 for n <= 8".into()),
            (small, "c_1(1,1) = 1, c_3(1,1) = 6, c_3(1,3) = 1".into()),
            (annealed, "sum c_n(k,l) p^k M^l = E[a^(n)_00] exactly, n <= 8, p = 1/3, M = 2".into()),
        ],
    );
}

#[test]
fn speed_three_routes_agree() {
    let t = Instant::now();
    let nu = NuSpec::bernoulli(0.5, 2.0).unwrap();
    let annealed = speed::annealed_speed(&nu, 100_000, 6, 1e-12).unwrap();
    let traj = sim::estimate_speed_annealed(&nu, &WalkConfig::new(1.0, 0, 100_000), 200, 6).unwrap();
    let band = oracle::speed_series_bernoulli(0.5, 2.0, 14).unwrap();
    let (lo, hi) = band.v_interval();
    let (a, ha) = (annealed.v, annealed.ci_half_width);
    let (b, hb) = (traj.overall.mean, traj.overall.ci_half_width);
    let mid = 0.5 * (lo + hi);
    let hs = 0.5 * (hi - lo);
    verdict(
        "speed triangulation at p = 0.5, M = 2",
        &[
            (intervals_overlap(a, ha, b, hb), format!("closed-form MC {a:.5} ± {ha:.5} vs trajectories {b:.5} ± {hb:.5}")),
            (intervals_overlap(a, ha, mid, hs), format!("series band [{lo:.4}, {hi:.4}] (trends hold: {})", band.trends_hold)),
            (intervals_overlap(b, hb, mid, hs), "trajectories vs series band".into()),
            within(t, Duration::from_secs(300)),
        ],
    );
}

#[test]
fn bernoulli_speed_limits_and_monotonicity() {
    let lim = speed::bernoulli_limits(2.0);
    let small = speed::annealed_speed(&NuSpec::bernoulli(1e-3, 2.0).unwrap(), 100_000, 7, 1e-12).unwrap();
    let large = speed::annealed_speed(&NuSpec::bernoulli(0.99, 2.0).unwrap(), 100_000, 7, 1e-12).unwrap();
    let target = lim.p1_coefficient * 0.01;
    let grid: Vec<f64> = (1..=9).map(|k| k as f64 / 10.0).collect();
    let curve = speed::speed_curve(2.0, &grid, 20_000, 7, 1e-12).unwrap();
    let values: Vec<String> = curve.points.iter().map(|p| format!("{:.4}", p.v)).collect();
    verdict(
        "Bernoulli speed limits",
        &[
            (
                small.v > 0.8 * lim.p0_limit && small.v <= lim.p0_limit,
                format!("v(0.001) = {:.5} in (0.8, 1] x {:.5}", small.v, lim.p0_limit),
            ),
            (
                (large.v - target).abs() <= 0.25 * target,
                format!("v(0.99) = {:.5} vs 3(1-p)/(2+M) = {target:.5}", large.v),
            ),
            (curve.strictly_decreasing, format!("grid 0.1..0.9: {}", values.join(" "))),
        ],
    );
}

#[test]
fn escape_direction_matches_hitting_probability() {
    let env = bernoulli(0.3, 2.0, 8);
    let ev = psi_extremal(&env, (-10, 10), 1e-12).unwrap();
    let mut checks = Vec::new();
    for start in [-3i64, 0, 5] {
        let h = hitting_probability(&ev, 0.5, start).unwrap();
        let d = sim::estimate_direction(&env, &WalkConfig::new(0.5, start, 10_000), 10_000, 80 + (start + 3) as u64).unwrap();
        let n = (d.right + d.left) as f64;
        let sigma = (h * (1.0 - h) / n).sqrt();
        let z = (d.fraction_right - h).abs() / sigma;
        checks.push((
            z <= 3.0 && d.horizon_sufficient,
            format!("start {start}: formula {h:.4}, simulated {:.4} ({z:.2} sigma, {} undecided)", d.fraction_right, d.indeterminate),
        ));
    }
    verdict("escape direction vs hitting probability", &checks);
}

#[test]
fn coupling_with_extremal_walk() {
    let env = bernoulli(0.3, 2.0, 9);
    let steps = 20_000;
    let margin = 4.0 * (steps as f64).sqrt();
    let mut rightward = 0;
    let mut with_bad = 0;
    let mut exact = true;
    let mut latest = 0usize;
    for seed in 0..100 {
        let run = sim::simulate_coupled(&env, &WalkConfig::new(0.5, 0, steps), seed).unwrap();
        if (run.kappa.last() as f64) <= margin {
            continue;
        }
        rightward += 1;
        if !run.bad_times.is_empty() {
            with_bad += 1;
        }
        latest = latest.max(run.coupling_step());
        exact &= run.plus.positions == run.kappa.positions;
    }
    let cfg = WalkConfig::new(0.5, 0, 100_000);
    let mixed = sim::estimate_speed(&env, &cfg, 200, 90).unwrap();
    let plus = sim::estimate_speed(&env, &WalkConfig { kappa: 1.0, ..cfg }, 200, 91).unwrap();
    let right = mixed.right.expect("some replicas escape right");
    verdict(
        "coupling of the mixture walk with the extremal walk",
        &[
            (
                with_bad > 0 && latest < steps / 2,
                format!("{rightward} rightward runs, {with_bad} with bad times, latest coupling step {latest}"),
            ),
            (exact, "steps after the last bad time follow the extremal rule exactly".into()),
            (
                intervals_overlap(right.mean, right.ci_half_width, plus.overall.mean, plus.overall.ci_half_width),
                format!(
                    "rightward speed {:.4} ± {:.4} vs extremal {:.4} ± {:.4}",
                    right.mean, right.ci_half_width, plus.overall.mean, plus.overall.ci_half_width
                ),
            ),
        ],
    );
}

#[test]
fn periodic_reduced_graph() {
    let sol = periodic::periodic_measure(10, 2.0).unwrap();
    let res = periodic::theta_residual(10, 2.0, sol.theta).abs();
    let z_gap = (sol.z - sol.z_direct).abs() / sol.z_direct;
    let t200 = periodic::solve_theta(200, 2.0, 1e-12).unwrap();
    let mut entropy_gap = 0.0f64;
    for (l, m) in [(5, 1.0), (8, 2.0), (12, 3.0)] {
        let s = periodic::periodic_measure(l, m).unwrap();
        entropy_gap = entropy_gap.max((periodic::entropy_rate(l, m).unwrap() - s.lambda.ln()).abs());
    }
    let conc = periodic::concentration_mass(200, 2.0, 0.1).unwrap();
    let rec = periodic::periodic_recurrence_check(5, 2.0, 100_000, 100, 11).unwrap();
    let occ = periodic::periodic_occupation(5, 2.0, 1_000_000, 12).unwrap();
    verdict(
        "periodic environment",
        &[
            (res <= 1e-12, format!("theta residual {res:.1e}")),
            (z_gap <= 1e-10, format!("Z closed form vs direct sum {z_gap:.1e}")),
            ((t200 - (1.0 + 2f64.sqrt()).ln()).abs() < 1e-3, format!("theta(200, 2) = {t200:.6}")),
            (entropy_gap <= 1e-10, format!("entropy rate vs log lambda {entropy_gap:.1e}")),
            (conc.mass >= 0.9 && !conc.degenerate, format!("mass within {} sites {:.4}", conc.radius, conc.mass)),
            (
                rec.speed.mean.abs() < rec.speed.ci_half_width,
                format!("speed {:.5} ± {:.5}", rec.speed.mean, rec.speed.ci_half_width),
            ),
            (occ.total_variation <= 0.05, format!("occupation TV distance {:.4}", occ.total_variation)),
        ],
    );
}

#[test]
fn lambda_from_path_counts() {
    let mut checks = Vec::new();
    for (name, env) in [
        ("constant(0)", LoopEnvironment::constant(0.0).unwrap()),
        ("constant(2)", LoopEnvironment::constant(2.0).unwrap()),
        ("single_loop(2)", LoopEnvironment::single_loop(2.0).unwrap()),
    ] {
        let t = oracle::estimate_lambda(&env, 0, 60);
        checks.push((
            t.relative_gap <= 0.05 && t.monotone_tail,
            format!("{name}: {:.4} vs {:.4}", t.last, t.lambda),
        ));
    }
    verdict("lambda from n-th roots of return counts", &checks);
}

fn merw(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_merw"))
        .args(args)
        .env_remove("MERW_SEED")
        .output()
        .expect("run merw")
}

#[test]
fn cli_runs_are_reproducible_and_selfcheck_is_fast() {
    let env = r#"{"kind":"iid","nu":{"bernoulli":{"p":0.3,"M":2}},"seed":5}"#;
    let runs: Vec<Vec<&str>> = vec![
        vec!["eigen", "--env", env, "--window=-20:20"],
        vec!["kernel", "--env", env, "--kappa", "0.5", "--window=-20:20"],
        vec!["simulate", "--env", env, "--kappa", "0.5", "--steps", "500", "--replicas", "4", "--seed", "3"],
        vec!["speed", "--nu", "bernoulli:0.5,2", "--reps", "1000", "--seed", "7"],
        vec!["speed", "--env", env],
        vec!["oracle", "count-excursions", "--n", "8"],
        vec!["oracle", "green", "--env", env, "--N", "50"],
        vec!["oracle", "lambda", "--env", env, "--n-max", "20"],
        vec!["periodic", "--ell", "6", "--M", "2"],
        vec!["figure1", "--replicas", "20", "--steps", "100", "--seed", "42"],
    ];
    let mut identical = 0;
    for args in &runs {
        let a = merw(args);
        let b = merw(args);
        if a.status.success() && a.stdout == b.stdout && !a.stdout.is_empty() {
            identical += 1;
        }
    }
    let t = Instant::now();
    let check = merw(&["selfcheck"]);
    let elapsed = t.elapsed();
    verdict(
        "reproducible CLI output and selfcheck",
        &[
            (identical == runs.len(), format!("{identical}/{} commands byte-identical on rerun", runs.len())),
            (check.status.success(), "selfcheck exit status 0".into()),
            (elapsed < Duration::from_secs(60), format!("selfcheck took {:.1}s", elapsed.as_secs_f64())),
        ],
    );
}
