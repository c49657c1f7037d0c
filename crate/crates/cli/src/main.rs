use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use merw_core::checks::{self, SelfcheckOptions};
use merw_core::eigen::{psi_extremal, DEFAULT_TOL};
use merw_core::kernel::merw_kernel;
use merw_core::sim::{self, WalkConfig};
use merw_core::{oracle, periodic, speed, EnvSpec, LoopEnvironment, MerwError, NuSpec};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(name = "merw", version, about = "Maximal entropy random walks on Z with loop environments")]
struct Cli {
    /// Master seed for every random draw (falls back to MERW_SEED, then 0).
    #[arg(long, global = true, env = "MERW_SEED")]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Serialize)]
#[serde(tag = "subcommand", rename_all = "kebab-case")]
enum Command {
    /// Extremal eigenvectors and their alpha/beta brackets on a window.
    Eigen(EigenArgs),
    /// Transition probabilities on a window.
    Kernel(KernelArgs),
    /// Simulate trajectories in one environment.
    Simulate(SimulateArgs),
    /// Annealed speed over a Bernoulli grid, or quenched S for one environment.
    Speed(SpeedArgs),
    /// Exact enumeration and brute-force path sums.
    #[command(subcommand)]
    Oracle(OracleCommand),
    /// Reduced-graph quantities for the periodic environment.
    Periodic(PeriodicArgs),
    /// Many extremal-walk trajectories in one sampled Bernoulli environment.
    Figure1(Figure1Args),
    /// Fast internal consistency checks.
    Selfcheck(SelfcheckArgs),
}

#[derive(Args, Serialize)]
struct EnvArg {
    /// Environment as a JSON file path or inline JSON object.
    #[arg(long = "env", value_name = "FILE|JSON")]
    #[serde(skip)]
    env: String,
}

#[derive(Args, Serialize)]
struct EigenArgs {
    #[command(flatten)]
    env: EnvArg,
    /// Inclusive site window a:b.
    #[arg(long, allow_hyphen_values = true, default_value = "-10:10")]
    window: String,
    /// Mixture weight used for the reported residual.
    #[arg(long, default_value_t = 1.0)]
    kappa: f64,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
    /// Also write a histogram of beta midpoints over the window.
    #[arg(long)]
    #[serde(skip)]
    beta_hist: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    bins: usize,
}

#[derive(Args, Serialize)]
struct KernelArgs {
    #[command(flatten)]
    env: EnvArg,
    #[arg(long, default_value_t = 1.0)]
    kappa: f64,
    #[arg(long, allow_hyphen_values = true, default_value = "-10:10")]
    window: String,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct SimulateArgs {
    #[command(flatten)]
    env: EnvArg,
    #[arg(long, default_value_t = 1.0)]
    kappa: f64,
    #[arg(long, allow_hyphen_values = true, default_value_t = 0)]
    start: i64,
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    #[arg(long, default_value_t = 1)]
    replicas: usize,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
    /// JSON summary: speed estimate, direction counts, returns to the start.
    #[arg(long)]
    #[serde(skip)]
    summary: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct SpeedArgs {
    /// Loop distribution, e.g. bernoulli:0.5,2 or atoms:0@0.5,2@0.5.
    #[arg(long, conflicts_with = "env")]
    nu: Option<String>,
    /// Comma-separated values of p for a Bernoulli speed curve.
    #[arg(long, requires = "nu")]
    grid: Option<String>,
    /// Environment for the quenched occupation S.
    #[arg(long, value_name = "FILE|JSON")]
    #[serde(skip)]
    env: Option<String>,
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    /// Number of series terms for the quenched report.
    #[arg(long, default_value_t = 200)]
    terms: usize,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Serialize)]
#[serde(tag = "oracle", rename_all = "kebab-case")]
enum OracleCommand {
    /// Table of c_n(k, l) for n up to --n.
    CountExcursions {
        #[arg(long, default_value_t = 14)]
        n: usize,
        #[arg(long)]
        #[serde(skip)]
        out: Option<PathBuf>,
    },
    /// Partial sums of a^(n)_{i,j} / lambda^n.
    Green {
        #[command(flatten)]
        env: EnvArg,
        #[arg(long, allow_hyphen_values = true, default_value_t = 0)]
        i: i64,
        #[arg(long, allow_hyphen_values = true, default_value_t = 0)]
        j: i64,
        #[arg(long = "N", default_value_t = 200)]
        n: usize,
        #[arg(long)]
        #[serde(skip)]
        out: Option<PathBuf>,
    },
    /// n-th roots of a^(n)_{i,i}.
    Lambda {
        #[command(flatten)]
        env: EnvArg,
        #[arg(long, allow_hyphen_values = true, default_value_t = 0)]
        i: i64,
        #[arg(long, default_value_t = 60)]
        n_max: usize,
        #[arg(long)]
        #[serde(skip)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Serialize)]
struct PeriodicArgs {
    #[arg(long)]
    ell: u32,
    #[arg(long = "M")]
    m: f64,
    /// Comma-separated eps values for the concentration table.
    #[arg(long, default_value = "0.5,0.2,0.1,0.05,0.01")]
    eps: String,
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct Figure1Args {
    #[arg(long, default_value_t = 0.02)]
    p: f64,
    #[arg(long = "M", default_value_t = 20.0)]
    m: f64,
    #[arg(long, default_value_t = 200)]
    replicas: usize,
    #[arg(long, default_value_t = 600)]
    steps: usize,
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
    /// Also write the sampled weights over the visited range.
    #[arg(long)]
    #[serde(skip)]
    weights: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct SelfcheckArgs {
    /// Deliberately corrupt internal data to confirm a check fails.
    #[arg(long, hide = true, value_parser = ["corrupt-beta"])]
    inject_fault: Option<String>,
    /// Write the report as JSON.
    #[arg(long)]
    #[serde(skip)]
    json: Option<PathBuf>,
}

/// Recorded at the top of every output.
struct Meta {
    config_hash: String,
    seed: u64,
}

impl Meta {
    fn new(cmd: &Command, env_spec: Option<&EnvSpec>, seed: u64) -> Result<Meta> {
        let config = json!({ "command": cmd, "env": env_spec, "seed": seed });
        let digest = Sha256::digest(serde_json::to_vec(&config)?);
        Ok(Meta {
            config_hash: hex::encode(digest),
            seed,
        })
    }

    fn csv_header(&self) -> String {
        format!("# merw {VERSION} config_hash={} seed={}\n", self.config_hash, self.seed)
    }

    fn json(&self, body: Value) -> Value {
        let mut out = serde_json::Map::new();
        out.insert(
            "meta".into(),
            json!({ "version": VERSION, "config_hash": self.config_hash, "seed": self.seed }),
        );
        if let Value::Object(map) = body {
            out.extend(map);
        }
        Value::Object(out)
    }
}

fn load_env(arg: &str) -> Result<(EnvSpec, LoopEnvironment)> {
    let text = if arg.trim_start().starts_with('{') {
        arg.to_string()
    } else {
        fs::read_to_string(arg).with_context(|| format!("cannot read environment file `{arg}`"))?
    };
    let spec: EnvSpec = serde_json::from_str(&text).map_err(|e| MerwError::InvalidEnvironment(e.to_string()))?;
    let env = LoopEnvironment::new(spec.clone())?;
    Ok((spec, env))
}

fn parse_window(s: &str) -> Result<(i64, i64)> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| MerwError::InvalidArgument(format!("window `{s}` is not of the form a:b")))?;
    let parse = |x: &str| {
        x.trim()
            .parse::<i64>()
            .map_err(|_| MerwError::InvalidArgument(format!("bad window bound `{x}`")))
    };
    let (a, b) = (parse(a)?, parse(b)?);
    if b < a {
        return Err(MerwError::InvalidArgument(format!("empty window {a}:{b}")).into());
    }
    Ok((a, b))
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|x| {
            x.trim()
                .parse::<f64>()
                .map_err(|_| MerwError::InvalidArgument(format!("not a number: `{x}`")).into())
        })
        .collect()
}

fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("cannot write `{}`", p.display())),
        None => {
            io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn emit_json(path: Option<&Path>, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    emit(path, &text)
}

fn run_eigen(a: &EigenArgs, meta: &Meta, env: &LoopEnvironment) -> Result<()> {
    let window = parse_window(&a.window)?;
    let ev = psi_extremal(env, window, a.tol)?;
    let mut out = meta.csv_header();
    out.push_str("i,w_i,log_psi_plus,log_psi_minus,beta_bracket_lo,beta_bracket_hi,alpha_bracket_lo,alpha_bracket_hi\n");
    for i in window.0..=window.1 {
        let (b, al) = (ev.beta(i), ev.alpha(i));
        writeln!(
            out,
            "{i},{},{},{},{},{},{},{}",
            ev.weight(i),
            ev.log_psi_plus_at(i),
            ev.log_psi_minus_at(i),
            b.lo,
            b.hi,
            al.lo,
            al.hi
        )?;
    }
    emit(a.out.as_deref(), &out)?;
    eprintln!(
        "residual at kappa={}: {:.3e}; widest bracket {:.3e}",
        a.kappa,
        ev.residual(a.kappa),
        ev.max_bracket_width()
    );
    if let Some(path) = &a.beta_hist {
        let mids: Vec<f64> = ev.beta.iter().map(|b| b.mid()).collect();
        let (g, bins) = (env.gamma(), a.bins.max(1));
        let mut counts = vec![0usize; bins];
        for m in &mids {
            let k = (((m - g) / (1.0 - g)) * bins as f64).floor();
            counts[(k.max(0.0) as usize).min(bins - 1)] += 1;
        }
        let mut h = meta.csv_header();
        h.push_str("bin_lo,bin_hi,count\n");
        for (k, c) in counts.iter().enumerate() {
            let lo = g + (1.0 - g) * k as f64 / bins as f64;
            let hi = g + (1.0 - g) * (k + 1) as f64 / bins as f64;
            writeln!(h, "{lo},{hi},{c}")?;
        }
        emit(Some(path), &h)?;
    }
    Ok(())
}

fn run_kernel(a: &KernelArgs, meta: &Meta, env: &LoopEnvironment) -> Result<()> {
    let (lo, hi) = parse_window(&a.window)?;
    let ev = psi_extremal(env, (lo - 1, hi + 1), a.tol)?;
    let k = merw_kernel(env, &ev, a.kappa, (lo, hi))?;
    let mut out = meta.csv_header();
    out.push_str("i,p_left,p_stay,p_right,row_sum_pre_normalization\n");
    for i in k.sites() {
        let t = k.at(i);
        writeln!(out, "{i},{},{},{},{}", t.left, t.stay, t.right, k.row_sum_pre(i))?;
    }
    emit(a.out.as_deref(), &out)
}

fn run_simulate(a: &SimulateArgs, meta: &Meta, env: &LoopEnvironment) -> Result<()> {
    if a.replicas == 0 {
        bail!(MerwError::InvalidArgument("at least one replica is needed".into()));
    }
    let cfg = WalkConfig::new(a.kappa, a.start, a.steps).with_tol(a.tol);
    let trajs = if a.replicas == 1 {
        vec![sim::simulate(env, &cfg, meta.seed)?]
    } else {
        sim::simulate_many(env, &cfg, a.replicas, meta.seed)?
    };
    let mut out = meta.csv_header();
    out.push_str("replica,step,position\n");
    for t in &trajs {
        for (n, x) in t.positions.iter().enumerate() {
            writeln!(out, "{},{n},{x}", t.replica)?;
        }
    }
    emit(a.out.as_deref(), &out)?;
    if let Some(path) = &a.summary {
        let h = a.steps.max(1) as f64;
        let speeds: Vec<f64> = trajs.iter().map(|t| (t.last() - a.start) as f64 / h).collect();
        let est = sim::SpeedEstimate::from_samples(&speeds, a.steps);
        let margin = 4.0 * h.sqrt();
        let right = trajs.iter().filter(|t| (t.last() - a.start) as f64 > margin).count();
        let left = trajs.iter().filter(|t| ((t.last() - a.start) as f64) < -margin).count();
        let returns: Vec<usize> = trajs.iter().map(|t| sim::count_returns(t, a.start)).collect();
        let body = json!({
            "speed": {
                "mean": finite(est.mean),
                "ci_half_width": finite(est.ci_half_width),
                "n_replicas": est.n_replicas,
                "horizon": est.horizon,
                "ci_valid": a.replicas >= sim::MIN_CI_REPLICAS,
            },
            "direction": {
                "margin": margin,
                "right": right,
                "left": left,
                "indeterminate": a.replicas - right - left,
                "fraction_right": if right + left > 0 { Some(right as f64 / (right + left) as f64) } else { None },
            },
            "returns_to_start": returns,
        });
        emit_json(Some(path), &meta.json(body))?;
    }
    Ok(())
}

/// JSON has no infinities; they are written as null.
fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

fn run_speed(a: &SpeedArgs, meta: &Meta, env: Option<&LoopEnvironment>) -> Result<()> {
    if let Some(env) = env {
        let s = speed::s_closed_form(env, a.tol)?;
        let series = speed::s_series(env, a.terms, a.tol)?;
        let body = json!({
            "s_closed": finite(s.value),
            "s_closed_infinite": s.infinite,
            "denominator": s.denominator,
            "error_bound": finite(s.error_bound),
            "s_series_partial": series.partial_sums,
            "s_series_tail_estimate": series.tail_estimate,
            "v": if s.infinite { Some(0.0) } else { finite(1.0 / s.value) },
        });
        return emit_json(a.out.as_deref(), &meta.json(body));
    }
    let Some(nu_text) = &a.nu else {
        bail!(MerwError::InvalidArgument("give either --nu or --env".into()));
    };
    let nu: NuSpec = nu_text.parse()?;
    let mut out = meta.csv_header();
    out.push_str("p,M,v,ci,reps\n");
    match &a.grid {
        Some(grid) => {
            let m = nu
                .as_bernoulli()
                .ok_or_else(|| MerwError::InvalidArgument("--grid needs a bernoulli distribution".into()))?
                .1;
            let curve = speed::speed_curve(m, &parse_list(grid)?, a.reps, meta.seed, a.tol)?;
            for pt in &curve.points {
                writeln!(out, "{},{},{},{},{}", pt.p, pt.m, pt.v, pt.ci, pt.reps)?;
            }
            if !curve.strictly_decreasing {
                eprintln!("warning: speed is not strictly decreasing beyond the confidence intervals");
            }
        }
        None => {
            let r = speed::annealed_speed(&nu, a.reps, meta.seed, a.tol)?;
            let p = nu.as_bernoulli().map_or("NA".to_string(), |b| b.0.to_string());
            writeln!(out, "{p},{},{},{},{}", nu.ceiling(), r.v, r.ci_half_width, r.reps)?;
        }
    }
    emit(a.out.as_deref(), &out)
}

fn run_oracle(cmd: &OracleCommand, meta: &Meta, env: Option<&LoopEnvironment>) -> Result<()> {
    let mut out = meta.csv_header();
    match cmd {
        OracleCommand::CountExcursions { n, out: path } => {
            let table = oracle::count_excursions(*n)?;
            out.push_str("n,k,l,count\n");
            for (n, k, l, c) in table.rows() {
                writeln!(out, "{n},{k},{l},{c}")?;
            }
            emit(path.as_deref(), &out)
        }
        OracleCommand::Green { i, j, n, out: path, .. } => {
            let sums = oracle::green_at_radius(env.expect("environment"), *i, *j, *n);
            out.push_str("N,partial_sum\n");
            for (k, s) in sums.iter().enumerate() {
                writeln!(out, "{k},{s}")?;
            }
            emit(path.as_deref(), &out)
        }
        OracleCommand::Lambda { i, n_max, out: path, .. } => {
            let env = env.expect("environment");
            let t = oracle::estimate_lambda(env, *i, *n_max);
            out.push_str("n,root\n");
            for (n, r) in &t.roots {
                writeln!(out, "{n},{r}")?;
            }
            emit(path.as_deref(), &out)?;
            eprintln!(
                "last root {:.6} vs lambda {:.6} (relative gap {:.3}); non-decreasing over the last 20 lengths: {}",
                t.last, t.lambda, t.relative_gap, t.monotone_tail
            );
            Ok(())
        }
    }
}

fn run_periodic(a: &PeriodicArgs, meta: &Meta) -> Result<()> {
    let sol = periodic::periodic_measure(a.ell, a.m)?;
    let mut table = Vec::new();
    for eps in parse_list(&a.eps)? {
        let c = periodic::concentration_mass(a.ell, a.m, eps)?;
        table.push(json!({ "eps": eps, "radius": c.radius, "mass": c.mass, "degenerate": c.degenerate }));
    }
    let lim = periodic::periodic_limits(a.m);
    let body = json!({
        "ell": a.ell,
        "M": a.m,
        "theta": sol.theta,
        "theta_residual": periodic::theta_residual(a.ell, a.m, sol.theta),
        "lambda": sol.lambda,
        "Z": sol.z,
        "Z_direct": sol.z_direct,
        "psi": sol.psi,
        "pi": sol.pi,
        "entropy_rate": periodic::entropy_rate(a.ell, a.m)?,
        "log_lambda": sol.lambda.ln(),
        "srw_entropy_rate": periodic::srw_entropy_rate(a.ell, a.m)?,
        "theta_star": lim.theta_star,
        "lambda_star": lim.lambda_star,
        "concentration": table,
    });
    emit_json(a.out.as_deref(), &meta.json(body))
}

fn run_figure1(a: &Figure1Args, meta: &Meta) -> Result<()> {
    let env = LoopEnvironment::iid(NuSpec::bernoulli(a.p, a.m)?, meta.seed)?;
    let cfg = WalkConfig::new(1.0, 0, a.steps);
    let trajs = sim::simulate_many(&env, &cfg, a.replicas, meta.seed)?;
    let mut out = meta.csv_header();
    out.push_str("replica,step,position\n");
    for t in &trajs {
        for (n, x) in t.positions.iter().enumerate() {
            writeln!(out, "{},{n},{x}", t.replica)?;
        }
    }
    emit(a.out.as_deref(), &out)?;
    if let Some(path) = &a.weights {
        let lo = trajs.iter().flat_map(|t| t.positions.iter()).min().copied().unwrap_or(0);
        let hi = trajs.iter().flat_map(|t| t.positions.iter()).max().copied().unwrap_or(0);
        let mut w = meta.csv_header();
        w.push_str("i,w_i\n");
        for (k, x) in env.weights(lo, hi).iter().enumerate() {
            writeln!(w, "{},{x}", lo + k as i64)?;
        }
        emit(Some(path), &w)?;
    }
    let right = trajs.iter().filter(|t| t.last() > 0).count();
    eprintln!("{right} of {} trajectories end to the right of the origin", trajs.len());
    Ok(())
}

fn run_selfcheck(a: &SelfcheckArgs, meta: &Meta) -> Result<bool> {
    let opts = SelfcheckOptions {
        corrupt_beta: a.inject_fault.as_deref() == Some("corrupt-beta"),
    };
    let report = checks::selfcheck(&opts);
    let mut all = true;
    for c in &report {
        println!("{} {:<20} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        all &= c.passed;
    }
    if let Some(path) = &a.json {
        emit_json(Some(path), &meta.json(json!({ "passed": all, "checks": report })))?;
    }
    Ok(all)
}

fn env_arg(cmd: &Command) -> Option<&str> {
    match cmd {
        Command::Eigen(a) => Some(&a.env.env),
        Command::Kernel(a) => Some(&a.env.env),
        Command::Simulate(a) => Some(&a.env.env),
        Command::Speed(a) => a.env.as_deref(),
        Command::Oracle(OracleCommand::Green { env, .. } | OracleCommand::Lambda { env, .. }) => Some(&env.env),
        _ => None,
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let seed = cli.seed.unwrap_or(0);
    let loaded = env_arg(&cli.command).map(load_env).transpose()?;
    let (spec, env) = match &loaded {
        Some((s, e)) => (Some(s), Some(e)),
        None => (None, None),
    };
    let meta = Meta::new(&cli.command, spec, seed)?;
    match &cli.command {
        Command::Eigen(a) => run_eigen(a, &meta, env.expect("environment"))?,
        Command::Kernel(a) => run_kernel(a, &meta, env.expect("environment"))?,
        Command::Simulate(a) => run_simulate(a, &meta, env.expect("environment"))?,
        Command::Speed(a) => run_speed(a, &meta, env)?,
        Command::Oracle(o) => run_oracle(o, &meta, env)?,
        Command::Periodic(a) => run_periodic(a, &meta)?,
        Command::Figure1(a) => run_figure1(a, &meta)?,
        Command::Selfcheck(a) => {
            if !run_selfcheck(a, &meta)? {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            match err.downcast_ref::<MerwError>() {
                Some(e) if e.is_numerical() => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}
