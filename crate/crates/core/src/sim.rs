//! Monte Carlo simulation of the walk with the shared-uniform construction.

use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::eigen::{psi_extremal, EigenVector, DEFAULT_TOL};
use crate::env::{LoopEnvironment, NuSpec};
use crate::error::{MerwError, Result};
use crate::kernel::{merw_kernel, MerwKernel, Transition};
use crate::stats;

/// Parameters shared by every simulation entry point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WalkConfig {
    pub kappa: f64,
    pub start: i64,
    pub steps: usize,
    /// Bracket tolerance for the eigen data behind the kernel.
    pub tol: f64,
}

impl WalkConfig {
    pub fn new(kappa: f64, start: i64, steps: usize) -> Self {
        WalkConfig {
            kappa,
            start,
            steps,
            tol: DEFAULT_TOL,
        }
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub start: i64,
    pub positions: Vec<i64>,
    pub seed: u64,
    pub replica: u64,
}

impl Trajectory {
    pub fn last(&self) -> i64 {
        *self.positions.last().expect("non-empty trajectory")
    }
}

/// Uniform stream of replica `j`: a pure function of (seed, j).
pub fn replica_rng(seed: u64, j: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(j);
    rng
}

/// Environment seed for replica `j` in runs that resample the environment.
pub fn env_seed(seed: u64, j: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    rng.set_stream(j);
    rng.next_u64()
}

#[inline]
fn decide(t: &Transition, i: i64, u: f64) -> i64 {
    if u < t.right {
        i + 1
    } else if u < t.right + t.stay {
        i
    } else {
        i - 1
    }
}

/// Eigen data and kernel over a common window.
#[derive(Debug)]
pub struct KernelBlock {
    pub ev: EigenVector,
    pub kernel: MerwKernel,
}

impl KernelBlock {
    pub fn build(env: &LoopEnvironment, kappa: f64, tol: f64, window: (i64, i64)) -> Result<Self> {
        let ev = psi_extremal(env, (window.0 - 1, window.1 + 1), tol)?;
        let kernel = merw_kernel(env, &ev, kappa, window)?;
        Ok(KernelBlock { ev, kernel })
    }
}

/// A kernel whose window doubles whenever the walk gets within two sites of an edge.
pub struct GrowingKernel<'a> {
    env: &'a LoopEnvironment,
    kappa: f64,
    tol: f64,
    block: Arc<KernelBlock>,
    lo: i64,
    hi: i64,
}

impl<'a> GrowingKernel<'a> {
    pub fn new(env: &'a LoopEnvironment, kappa: f64, tol: f64, window: (i64, i64)) -> Result<Self> {
        let block = Arc::new(KernelBlock::build(env, kappa, tol, window)?);
        Ok(Self::from_block(env, kappa, tol, block))
    }

    pub fn from_block(env: &'a LoopEnvironment, kappa: f64, tol: f64, block: Arc<KernelBlock>) -> Self {
        let (lo, hi) = block.kernel.window;
        GrowingKernel {
            env,
            kappa,
            tol,
            block,
            lo,
            hi,
        }
    }

    pub fn block(&self) -> &KernelBlock {
        &self.block
    }

    fn ensure(&mut self, x: i64) -> Result<()> {
        if x - self.lo >= 2 && self.hi - x >= 2 {
            return Ok(());
        }
        let width = self.hi - self.lo + 1;
        let mut lo = self.lo;
        let mut hi = self.hi;
        while x - lo < 2 {
            lo -= width;
        }
        while hi - x < 2 {
            hi += width;
        }
        self.block = Arc::new(KernelBlock::build(self.env, self.kappa, self.tol, (lo, hi))?);
        self.lo = lo;
        self.hi = hi;
        Ok(())
    }

    pub fn transition(&mut self, x: i64) -> Result<Transition> {
        self.ensure(x)?;
        Ok(self.block.kernel.at(x))
    }

    #[inline]
    pub fn step(&mut self, x: i64, u: f64) -> Result<i64> {
        self.ensure(x)?;
        Ok(self.block.kernel.step(x, u))
    }
}

const INITIAL_HALF_WIDTH: i64 = 64;

fn initial_window(start: i64) -> (i64, i64) {
    (start - INITIAL_HALF_WIDTH, start + INITIAL_HALF_WIDTH)
}

/// Window that a walk of `steps` steps from `start` can never leave.
fn reach_window(start: i64, steps: usize) -> (i64, i64) {
    let r = steps as i64 + 2;
    (start - r, start + r)
}

fn run_walk(k: &mut GrowingKernel<'_>, start: i64, steps: usize, rng: &mut ChaCha8Rng) -> Result<Vec<i64>> {
    let mut out = Vec::with_capacity(steps + 1);
    let mut x = start;
    out.push(x);
    for _ in 0..steps {
        x = k.step(x, rng.random::<f64>())?;
        out.push(x);
    }
    Ok(out)
}

/// One trajectory (replica 0 of `seed`).
pub fn simulate(env: &LoopEnvironment, cfg: &WalkConfig, seed: u64) -> Result<Trajectory> {
    simulate_replica(env, cfg, seed, 0)
}

pub fn simulate_replica(env: &LoopEnvironment, cfg: &WalkConfig, seed: u64, j: u64) -> Result<Trajectory> {
    let mut k = GrowingKernel::new(env, cfg.kappa, cfg.tol, initial_window(cfg.start))?;
    let mut rng = replica_rng(seed, j);
    Ok(Trajectory {
        start: cfg.start,
        positions: run_walk(&mut k, cfg.start, cfg.steps, &mut rng)?,
        seed,
        replica: j,
    })
}

/// Several replicas of the same environment sharing one precomputed kernel.
pub fn simulate_many(
    env: &LoopEnvironment,
    cfg: &WalkConfig,
    replicas: usize,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    let block = Arc::new(KernelBlock::build(env, cfg.kappa, cfg.tol, reach_window(cfg.start, cfg.steps))?);
    (0..replicas as u64)
        .into_par_iter()
        .map(|j| {
            let mut k = GrowingKernel::from_block(env, cfg.kappa, cfg.tol, block.clone());
            let mut rng = replica_rng(seed, j);
            Ok(Trajectory {
                start: cfg.start,
                positions: run_walk(&mut k, cfg.start, cfg.steps, &mut rng)?,
                seed,
                replica: j,
            })
        })
        .collect()
}

/// The κ-walk together with the extremal (κ = 1) walk driven by the same uniforms.
#[derive(Debug, Clone, Serialize)]
pub struct CoupledRun {
    pub kappa: Trajectory,
    /// κ-path up to one step past the last bad time, then the κ = 1 rule
    /// applied to the remaining uniforms.
    pub plus: Trajectory,
    /// κ = 1 rule applied to every uniform from the start.
    pub plus_free: Trajectory,
    /// Steps n at which the two rules, evaluated at the κ-walk's position,
    /// would move differently.
    pub bad_times: Vec<usize>,
    /// Σ_n P(bad at step n | position): the expected number of bad times along the path.
    pub expected_bad: f64,
    /// Σ_n 2(1−κ)/κ · ψ⁻_{X_n−1}/ψ⁺_{X_n}.
    pub bad_bound: f64,
}

impl CoupledRun {
    /// First step index after which the κ-walk follows the κ = 1 rule.
    pub fn coupling_step(&self) -> usize {
        self.bad_times.last().map_or(0, |&t| t + 1)
    }
}

pub fn simulate_coupled(env: &LoopEnvironment, cfg: &WalkConfig, seed: u64) -> Result<CoupledRun> {
    let kappa = cfg.kappa;
    if !(kappa > 0.0 && kappa <= 1.0) {
        return Err(MerwError::InvalidArgument(format!("coupling needs kappa in (0, 1], got {kappa}")));
    }
    let win = initial_window(cfg.start);
    let mut kk = GrowingKernel::new(env, kappa, cfg.tol, win)?;
    let mut kp = GrowingKernel::new(env, 1.0, cfg.tol, win)?;
    let mut rng = replica_rng(seed, 0);
    let uniforms: Vec<f64> = (0..cfg.steps).map(|_| rng.random::<f64>()).collect();

    let mut path = Vec::with_capacity(cfg.steps + 1);
    let mut free = Vec::with_capacity(cfg.steps + 1);
    let mut bad_times = Vec::new();
    let mut expected_bad = 0.0;
    let mut bad_bound = 0.0;
    let (mut x, mut y) = (cfg.start, cfg.start);
    path.push(x);
    free.push(y);
    for (n, &u) in uniforms.iter().enumerate() {
        let tk = kk.transition(x)?;
        let tp = kp.transition(x)?;
        let dr = (tk.right - tp.right).abs();
        expected_bad += dr + dr.min(tk.stay);
        if kappa < 1.0 {
            let ev = &kk.block().ev;
            bad_bound += 2.0 * (1.0 - kappa) / kappa
                * (ev.log_psi_minus_at(x - 1) - ev.log_psi_plus_at(x)).exp();
        }
        let next = decide(&tk, x, u);
        if next != decide(&tp, x, u) {
            bad_times.push(n);
        }
        x = next;
        path.push(x);
        y = kp.step(y, u)?;
        free.push(y);
    }

    let m = bad_times.last().map_or(0, |&t| t + 1);
    // Restart the κ = 1 rule from the κ-walk's position at step m with a kernel
    // of its own, so the comparison does not reuse anything from the loop above.
    let mut restart = GrowingKernel::new(env, 1.0, cfg.tol, initial_window(path[m]))?;
    let mut plus = path[..=m].to_vec();
    let mut z = path[m];
    for &u in &uniforms[m..] {
        z = restart.step(z, u)?;
        plus.push(z);
    }
    let traj = |positions| Trajectory {
        start: cfg.start,
        positions,
        seed,
        replica: 0,
    };
    Ok(CoupledRun {
        kappa: traj(path),
        plus: traj(plus),
        plus_free: traj(free),
        bad_times,
        expected_bad,
        bad_bound,
    })
}

/// Mean displacement per step across replicas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpeedEstimate {
    pub mean: f64,
    /// 95% normal-approximation half-width.
    pub ci_half_width: f64,
    pub n_replicas: usize,
    pub horizon: usize,
}

impl SpeedEstimate {
    pub fn from_samples(samples: &[f64], horizon: usize) -> Self {
        let (mean, ci_half_width) = stats::mean_ci95(samples);
        SpeedEstimate {
            mean,
            ci_half_width,
            n_replicas: samples.len(),
            horizon,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SpeedReport {
    pub overall: SpeedEstimate,
    /// Replicas ending to the right of the start.
    pub right: Option<SpeedEstimate>,
    /// Replicas ending to the left of the start.
    pub left: Option<SpeedEstimate>,
    /// Mean number of visits to the start (time 0 included) with its 95% half-width.
    pub returns_mean: f64,
    pub returns_ci_half_width: f64,
}

pub const MIN_CI_REPLICAS: usize = 30;

fn summarize(ends: &[(i64, usize)], horizon: usize) -> SpeedReport {
    let h = horizon.max(1) as f64;
    let all: Vec<f64> = ends.iter().map(|&(d, _)| d as f64 / h).collect();
    let right: Vec<f64> = all.iter().copied().filter(|&v| v > 0.0).collect();
    let left: Vec<f64> = all.iter().copied().filter(|&v| v < 0.0).collect();
    let returns: Vec<f64> = ends.iter().map(|&(_, r)| r as f64).collect();
    let (returns_mean, returns_ci_half_width) = stats::mean_ci95(&returns);
    let cond = |s: &Vec<f64>| (s.len() >= 2).then(|| SpeedEstimate::from_samples(s, horizon));
    SpeedReport {
        overall: SpeedEstimate::from_samples(&all, horizon),
        right: cond(&right),
        left: cond(&left),
        returns_mean,
        returns_ci_half_width,
    }
}

fn walk_summary(k: &mut GrowingKernel<'_>, cfg: &WalkConfig, rng: &mut ChaCha8Rng) -> Result<(i64, usize)> {
    let mut x = cfg.start;
    let mut returns = 1;
    for _ in 0..cfg.steps {
        x = k.step(x, rng.random::<f64>())?;
        returns += usize::from(x == cfg.start);
    }
    Ok((x - cfg.start, returns))
}

fn check_replicas(replicas: usize) -> Result<()> {
    if replicas < MIN_CI_REPLICAS {
        return Err(MerwError::InvalidArgument(format!(
            "{replicas} replicas; at least {MIN_CI_REPLICAS} are needed for a confidence interval"
        )));
    }
    Ok(())
}

/// Speed of the walk in one fixed environment.
pub fn estimate_speed(env: &LoopEnvironment, cfg: &WalkConfig, replicas: usize, seed: u64) -> Result<SpeedReport> {
    check_replicas(replicas)?;
    let block = Arc::new(KernelBlock::build(env, cfg.kappa, cfg.tol, reach_window(cfg.start, cfg.steps))?);
    let ends = (0..replicas as u64)
        .into_par_iter()
        .map(|j| {
            let mut k = GrowingKernel::from_block(env, cfg.kappa, cfg.tol, block.clone());
            walk_summary(&mut k, cfg, &mut replica_rng(seed, j))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(&ends, cfg.steps))
}

/// Speed with a fresh environment drawn from ν for every replica.
pub fn estimate_speed_annealed(nu: &NuSpec, cfg: &WalkConfig, replicas: usize, seed: u64) -> Result<SpeedReport> {
    check_replicas(replicas)?;
    let ends = (0..replicas as u64)
        .into_par_iter()
        .map(|j| {
            let env = LoopEnvironment::iid(nu.clone(), env_seed(seed, j))?;
            let mut k = GrowingKernel::new(&env, cfg.kappa, cfg.tol, initial_window(cfg.start))?;
            walk_summary(&mut k, cfg, &mut replica_rng(seed, j))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(&ends, cfg.steps))
}

#[derive(Debug, Clone, Serialize)]
pub struct DirectionEstimate {
    pub right: usize,
    pub left: usize,
    /// Replicas that ended within the escape margin of the start.
    pub indeterminate: usize,
    pub margin: f64,
    /// right / (right + left).
    pub fraction_right: f64,
    /// Binomial standard error of `fraction_right`.
    pub std_err: f64,
    /// Fewer than 1% of replicas were indeterminate.
    pub horizon_sufficient: bool,
}

/// Fraction of replicas with X_horizon − start beyond +4√horizon (versus below −4√horizon).
pub fn estimate_direction(
    env: &LoopEnvironment,
    cfg: &WalkConfig,
    replicas: usize,
    seed: u64,
) -> Result<DirectionEstimate> {
    if replicas == 0 {
        return Err(MerwError::InvalidArgument("no replicas".into()));
    }
    let margin = 4.0 * (cfg.steps as f64).sqrt();
    let block = Arc::new(KernelBlock::build(env, cfg.kappa, cfg.tol, reach_window(cfg.start, cfg.steps))?);
    let ends = (0..replicas as u64)
        .into_par_iter()
        .map(|j| {
            let mut k = GrowingKernel::from_block(env, cfg.kappa, cfg.tol, block.clone());
            walk_summary(&mut k, cfg, &mut replica_rng(seed, j)).map(|r| r.0)
        })
        .collect::<Result<Vec<_>>>()?;
    let right = ends.iter().filter(|&&d| d as f64 > margin).count();
    let left = ends.iter().filter(|&&d| (d as f64) < -margin).count();
    let indeterminate = replicas - right - left;
    let n = (right + left).max(1) as f64;
    let f = right as f64 / n;
    Ok(DirectionEstimate {
        right,
        left,
        indeterminate,
        margin,
        fraction_right: f,
        std_err: (f * (1.0 - f) / n).sqrt(),
        horizon_sufficient: indeterminate * 100 < replicas,
    })
}

pub fn count_returns(t: &Trajectory, site: i64) -> usize {
    t.positions.iter().filter(|&&x| x == site).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trajectory_shape_and_reproducibility() {
        let env = LoopEnvironment::iid(NuSpec::bernoulli(0.3, 2.0).unwrap(), 4).unwrap();
        let cfg = WalkConfig::new(0.5, 3, 2000);
        let a = simulate(&env, &cfg, 9).unwrap();
        let b = simulate(&env, &cfg, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.positions[0], 3);
        assert_eq!(a.positions.len(), 2001);
        assert!(a.positions.windows(2).all(|w| (w[1] - w[0]).abs() <= 1));
        assert_ne!(a, simulate(&env, &cfg, 10).unwrap());
    }

    #[test]
    fn growing_and_shared_kernels_agree() {
        let env = LoopEnvironment::iid(NuSpec::bernoulli(0.5, 2.0).unwrap(), 2).unwrap();
        let cfg = WalkConfig::new(1.0, 0, 3000);
        let many = simulate_many(&env, &cfg, 4, 77).unwrap();
        for (j, t) in many.iter().enumerate() {
            assert_eq!(t, &simulate_replica(&env, &cfg, 77, j as u64).unwrap());
        }
    }

    #[test]
    fn kappa_one_coupling_is_trivial() {
        let env = LoopEnvironment::iid(NuSpec::bernoulli(0.3, 2.0).unwrap(), 5).unwrap();
        let run = simulate_coupled(&env, &WalkConfig::new(1.0, 0, 1000), 3).unwrap();
        assert!(run.bad_times.is_empty());
        assert_eq!(run.kappa, run.plus);
        assert_eq!(run.kappa, run.plus_free);
    }

    #[test]
    fn count_returns_basics() {
        let t = Trajectory {
            start: 0,
            positions: vec![0, 1, 0, -1, 0],
            seed: 0,
            replica: 0,
        };
        assert_eq!(count_returns(&t, 0), 3);
        assert_eq!(count_returns(&t, 5), 0);
    }

    #[test]
    fn too_few_replicas_for_a_ci() {
        let env = LoopEnvironment::constant(0.0).unwrap();
        assert!(estimate_speed(&env, &WalkConfig::new(1.0, 0, 10), 5, 1).is_err());
    }
}
