//! Brute-force combinatorics used as ground truth: exact weighted path counts,
//! excursion enumeration, and Green-function partial sums.

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rayon::prelude::*;
use serde::Serialize;

use crate::env::LoopEnvironment;
use crate::error::{MerwError, Result};

fn exact(w: f64) -> BigRational {
    BigRational::from_float(w).expect("weights are finite")
}

/// One application of the weighted adjacency matrix on a window; sites
/// outside the window are treated as absent.
fn apply_adjacency(v: &[BigRational], w: &[BigRational]) -> Vec<BigRational> {
    let n = v.len();
    (0..n)
        .map(|k| {
            let mut x = &w[k] * &v[k];
            if k > 0 {
                x += &v[k - 1];
            }
            if k + 1 < n {
                x += &v[k + 1];
            }
            x
        })
        .collect()
}

/// a^(n)_{i,j} computed inside an explicit window containing i and j.
pub fn matrix_power_counts_in(
    env: &LoopEnvironment,
    n: usize,
    i: i64,
    j: i64,
    window: (i64, i64),
) -> Result<BigRational> {
    let (lo, hi) = window;
    if !(lo <= i.min(j) && i.max(j) <= hi) {
        return Err(MerwError::InvalidArgument(format!(
            "sites {i}, {j} outside window [{lo}, {hi}]"
        )));
    }
    let w: Vec<BigRational> = env.weights(lo, hi).into_iter().map(exact).collect();
    let mut v = vec![BigRational::zero(); w.len()];
    v[(i - lo) as usize] = BigRational::one();
    for _ in 0..n {
        v = apply_adjacency(&v, &w);
    }
    Ok(v[(j - lo) as usize].clone())
}

/// Exact a^(n)_{i,j}. A path of n unit steps from i never leaves
/// [min(i,j) − n, max(i,j) + n], so truncating the matrix there loses nothing.
pub fn matrix_power_counts(env: &LoopEnvironment, n: usize, i: i64, j: i64) -> BigRational {
    let r = n as i64;
    matrix_power_counts_in(env, n, i, j, (i.min(j) - r, i.max(j) + r)).expect("window contains both sites")
}

/// a^(n)_{i,i} for n = 0, …, n_max from a single pass.
pub fn return_counts(env: &LoopEnvironment, i: i64, n_max: usize) -> Vec<BigRational> {
    let r = n_max as i64;
    let lo = i - r;
    let w: Vec<BigRational> = env.weights(lo, i + r).into_iter().map(exact).collect();
    let mut v = vec![BigRational::zero(); w.len()];
    v[r as usize] = BigRational::one();
    let mut out = vec![BigRational::one()];
    for _ in 0..n_max {
        v = apply_adjacency(&v, &w);
        out.push(v[r as usize].clone());
    }
    out
}

/// Partial sums Σ_{n≤N} a^(n)_{i,j} / λ^n for N = 0, …, n_max (floating point).
pub fn green_at_radius(env: &LoopEnvironment, i: i64, j: i64, n_max: usize) -> Vec<f64> {
    let r = n_max as i64;
    let lo = i.min(j) - r;
    let hi = i.max(j) + r;
    let lambda = env.lambda();
    let w: Vec<f64> = env.weights(lo, hi).iter().map(|x| x / lambda).collect();
    let inv = 1.0 / lambda;
    let len = w.len();
    let mut v = vec![0.0; len];
    let mut next = vec![0.0; len];
    v[(i - lo) as usize] = 1.0;
    let jj = (j - lo) as usize;
    let mut acc = v[jj];
    let mut out = Vec::with_capacity(n_max + 1);
    out.push(acc);
    for _ in 0..n_max {
        for k in 0..len {
            let mut x = w[k] * v[k];
            if k > 0 {
                x += inv * v[k - 1];
            }
            if k + 1 < len {
                x += inv * v[k + 1];
            }
            next[k] = x;
        }
        std::mem::swap(&mut v, &mut next);
        acc += v[jj];
        out.push(acc);
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct GreenAuto {
    pub partial_sums: Vec<f64>,
    pub n: usize,
    /// Geometric extrapolation of the remainder beyond n.
    pub tail_estimate: f64,
}

/// Green partial sums with the radius doubled until the extrapolated tail
/// falls below `tail_tol` (or `n_cap` is reached).
pub fn green_auto(env: &LoopEnvironment, i: i64, j: i64, tail_tol: f64, n_cap: usize) -> GreenAuto {
    let mut n = 64usize.min(n_cap);
    loop {
        let sums = green_at_radius(env, i, j, n);
        let tail = geometric_tail(&sums);
        if tail <= tail_tol || n >= n_cap {
            return GreenAuto {
                partial_sums: sums,
                n,
                tail_estimate: tail,
            };
        }
        n = (2 * n).min(n_cap);
    }
}

/// Remainder estimate t_N r/(1−r) with r the average ratio over the last quarter.
fn geometric_tail(sums: &[f64]) -> f64 {
    let n = sums.len() - 1;
    let k = (n / 4).max(2);
    if n < k + 1 {
        return f64::INFINITY;
    }
    let t_n = sums[n] - sums[n - 1];
    let t_nk = sums[n - k] - sums[n - k - 1];
    if t_n <= 0.0 || t_nk <= 0.0 {
        return if t_n == 0.0 { 0.0 } else { f64::INFINITY };
    }
    let r = (t_n / t_nk).powf(1.0 / k as f64);
    if r >= 1.0 {
        f64::INFINITY
    } else {
        t_n * r / (1.0 - r)
    }
}

/// c_n(k, ℓ): closed paths 0 → 0 of length n with ℓ loop steps spread over k
/// distinct loop sites.
#[derive(Debug, Clone)]
pub struct ExcursionTable {
    pub n_max: usize,
    counts: Vec<BigUint>,
}

pub const MAX_EXCURSION_LENGTH: usize = 24;

impl ExcursionTable {
    fn index(&self, n: usize, k: usize, l: usize) -> usize {
        let d = self.n_max + 1;
        (n * d + k) * d + l
    }

    pub fn get(&self, n: usize, k: usize, l: usize) -> BigUint {
        if n > self.n_max || k > self.n_max || l > self.n_max {
            return BigUint::zero();
        }
        self.counts[self.index(n, k, l)].clone()
    }

    /// Non-zero entries as (n, k, ℓ, count), ordered by n, then k, then ℓ.
    pub fn rows(&self) -> Vec<(usize, usize, usize, BigUint)> {
        let d = self.n_max + 1;
        let mut out = Vec::new();
        for n in 0..d {
            for k in 0..d {
                for l in 0..d {
                    let c = &self.counts[self.index(n, k, l)];
                    if !c.is_zero() {
                        out.push((n, k, l, c.clone()));
                    }
                }
            }
        }
        out
    }

    /// Σ_{k,ℓ} c_n(k,ℓ) p^k M^ℓ as an exact rational.
    pub fn polynomial(&self, n: usize, p: &BigRational, m: &BigRational) -> BigRational {
        let mut acc = BigRational::zero();
        for k in 0..=n {
            for l in 0..=n {
                let c = self.get(n, k, l);
                if !c.is_zero() {
                    let c = BigRational::from_integer(BigInt::from(c));
                    acc += c * pow(p, k) * pow(m, l);
                }
            }
        }
        acc
    }

    /// Σ_{k,ℓ} c_n(k,ℓ) p^k M^ℓ / λ^n in floating point.
    pub fn series_term(&self, n: usize, p: f64, m: f64) -> f64 {
        let lambda = 2.0 + m;
        let mut acc = 0.0;
        for k in 0..=n {
            for l in 0..=n {
                let c = self.get(n, k, l);
                if !c.is_zero() {
                    acc += c.to_f64().unwrap_or(f64::INFINITY) * p.powi(k as i32) * m.powi(l as i32);
                }
            }
        }
        acc / lambda.powi(n as i32)
    }
}

fn pow(x: &BigRational, e: usize) -> BigRational {
    num_traits::pow(x.clone(), e)
}

struct Dfs {
    n_max: usize,
    counts: Vec<u64>,
}

impl Dfs {
    fn record(&mut self, n: usize, k: usize, l: usize) {
        let d = self.n_max + 1;
        self.counts[(n * d + k) * d + l] += 1;
    }

    /// `mask` has bit pos + 32 set for every site that already carries a loop step.
    fn walk(&mut self, pos: i64, depth: usize, loops: usize, distinct: usize, mask: u64) {
        if pos == 0 {
            self.record(depth, distinct, loops);
        }
        if depth == self.n_max {
            return;
        }
        let left = (self.n_max - depth - 1) as i64;
        for step in [-1i64, 0, 1] {
            let next = pos + step;
            if next.abs() > left {
                continue;
            }
            if step == 0 {
                let bit = 1u64 << (pos + 32);
                if mask & bit == 0 {
                    self.walk(pos, depth + 1, loops + 1, distinct + 1, mask | bit);
                } else {
                    self.walk(pos, depth + 1, loops + 1, distinct, mask);
                }
            } else {
                self.walk(next, depth + 1, loops, distinct, mask);
            }
        }
    }
}

/// Exhaustive depth-first enumeration, split over the first step.
pub fn count_excursions(n_max: usize) -> Result<ExcursionTable> {
    if n_max > MAX_EXCURSION_LENGTH {
        return Err(MerwError::InvalidArgument(format!(
            "excursion length {n_max} exceeds the enumeration budget {MAX_EXCURSION_LENGTH}"
        )));
    }
    let d = n_max + 1;
    let size = d * d * d;
    let partial: Vec<Vec<u64>> = [-1i64, 0, 1]
        .into_par_iter()
        .map(|first| {
            let mut dfs = Dfs {
                n_max,
                counts: vec![0; size],
            };
            if n_max > 0 && first.abs() <= n_max as i64 - 1 {
                if first == 0 {
                    dfs.walk(0, 1, 1, 1, 1u64 << 32);
                } else {
                    dfs.walk(first, 1, 0, 0, 0);
                }
            }
            dfs.counts
        })
        .collect();
    let mut counts = vec![BigUint::zero(); size];
    counts[0] = BigUint::one();
    for part in &partial {
        for (c, &x) in counts.iter_mut().zip(part) {
            *c += x;
        }
    }
    Ok(ExcursionTable { n_max, counts })
}

/// E_μ[a^(n)_{0,0}] for μ = (p δ_M + (1−p) δ_0)^⊗ℤ, by summing over every
/// loop assignment of the sites a closed path of length n can reach.
pub fn annealed_return_weight(n: usize, p: &BigRational, m: &BigRational) -> BigRational {
    let h = n / 2;
    let sites = 2 * h + 1;
    let q = BigRational::one() - p;
    let mut total = BigRational::zero();
    for mask in 0u64..(1u64 << sites) {
        let set = mask.count_ones() as usize;
        let prob = pow(p, set) * pow(&q, sites - set);
        let w: Vec<BigRational> = (0..sites)
            .map(|s| if mask >> s & 1 == 1 { m.clone() } else { BigRational::zero() })
            .collect();
        let mut v = vec![BigRational::zero(); sites];
        v[h] = BigRational::one();
        for _ in 0..n {
            v = apply_adjacency(&v, &w);
        }
        total += prob * &v[h];
    }
    total
}

#[derive(Debug, Clone, Serialize)]
pub struct SeriesBand {
    pub p: f64,
    #[serde(rename = "M")]
    pub m: f64,
    pub n_max: usize,
    pub terms: Vec<f64>,
    pub partial_sums: Vec<f64>,
    /// Remainder lower bound assuming ratios t_{n+1}/t_n keep increasing.
    pub tail_lo: f64,
    /// Remainder upper bound assuming the local power-law exponent keeps increasing.
    pub tail_hi: f64,
    /// Whether the last terms actually show both monotone trends.
    pub trends_hold: bool,
    pub inv_v_lo: f64,
    pub inv_v_hi: f64,
}

impl SeriesBand {
    pub fn v_interval(&self) -> (f64, f64) {
        (1.0 / self.inv_v_hi, 1.0 / self.inv_v_lo)
    }
}

/// Partial sums of 1/v = Σ_n Σ_{k,ℓ} c_n(k,ℓ) p^k M^ℓ / (2+M)^n with a band
/// for the remainder.
pub fn speed_series_bernoulli(p: f64, m: f64, n_max: usize) -> Result<SeriesBand> {
    speed_series_from_table(&count_excursions(n_max)?, p, m)
}

pub fn speed_series_from_table(table: &ExcursionTable, p: f64, m: f64) -> Result<SeriesBand> {
    let n_max = table.n_max;
    if n_max < 4 {
        return Err(MerwError::InvalidArgument("need at least 4 terms for a tail band".into()));
    }
    let terms: Vec<f64> = (0..=n_max).map(|n| table.series_term(n, p, m)).collect();
    let partial_sums: Vec<f64> = terms
        .iter()
        .scan(0.0, |acc, t| {
            *acc += t;
            Some(*acc)
        })
        .collect();
    let ratio = |n: usize| terms[n] / terms[n - 1];
    let exponent = |n: usize| -(ratio(n)).ln() / (n as f64 / (n as f64 - 1.0)).ln();
    let last = n_max;
    let trends_hold = (last - 2..=last).all(|n| ratio(n) >= ratio(n - 1) && exponent(n) >= exponent(n - 1));
    let r = ratio(last);
    let a = exponent(last);
    let (tail_lo, tail_hi) = if trends_hold && r < 1.0 {
        let lo = terms[last] * r / (1.0 - r);
        let hi = if a > 1.0 {
            terms[last] * last as f64 / (a - 1.0)
        } else {
            f64::INFINITY
        };
        (lo, hi)
    } else {
        (0.0, f64::INFINITY)
    };
    let s = partial_sums[last];
    Ok(SeriesBand {
        p,
        m,
        n_max,
        terms,
        partial_sums,
        tail_lo,
        tail_hi,
        trends_hold,
        inv_v_lo: s + tail_lo,
        inv_v_hi: s + tail_hi,
    })
}

/// (1/λ) H(1/λ) with H(z) = (1 − zc − √((cz−1)² − 4z²)) / (2z²), the
/// excursion generating function of the constant environment c.
pub fn constant_env_excursion_gf(c: f64, lambda: f64) -> Result<f64> {
    let z = 1.0 / lambda;
    let mut disc = (c * z - 1.0).powi(2) - 4.0 * z * z;
    if disc < 0.0 {
        if disc > -1e-14 {
            disc = 0.0;
        } else {
            return Err(MerwError::InvalidArgument(format!(
                "lambda = {lambda} is below c + 2 = {}",
                c + 2.0
            )));
        }
    }
    let h = (1.0 - z * c - disc.sqrt()) / (2.0 * z * z);
    Ok(h / lambda)
}

/// Natural log of a positive exact rational, valid far beyond f64 range.
pub fn ln_rational(x: &BigRational) -> f64 {
    ln_bigint(x.numer()) - ln_bigint(x.denom())
}

fn ln_bigint(x: &BigInt) -> f64 {
    let bits = x.bits();
    if bits <= 1000 {
        return x.to_f64().expect("fits").ln();
    }
    let shift = bits - 64;
    (x >> shift).to_f64().expect("fits").ln() + shift as f64 * std::f64::consts::LN_2
}

#[derive(Debug, Clone, Serialize)]
pub struct LambdaTrend {
    /// (n, (a^(n)_{i,i})^{1/n}) for every n ≤ n_max with a non-zero count.
    pub roots: Vec<(usize, f64)>,
    pub lambda: f64,
    pub last: f64,
    /// |last − λ| / λ.
    pub relative_gap: f64,
    /// Roots over the last 20 lengths are non-decreasing.
    pub monotone_tail: bool,
}

pub fn estimate_lambda(env: &LoopEnvironment, i: i64, n_max: usize) -> LambdaTrend {
    let counts = return_counts(env, i, n_max);
    let roots: Vec<(usize, f64)> = counts
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, c)| !c.is_zero())
        .map(|(n, c)| (n, (ln_rational(c) / n as f64).exp()))
        .collect();
    let last = roots.last().map_or(0.0, |r| r.1);
    let cut = n_max.saturating_sub(19);
    let tail: Vec<f64> = roots.iter().filter(|r| r.0 >= cut).map(|r| r.1).collect();
    let lambda = env.lambda();
    LambdaTrend {
        monotone_tail: tail.len() >= 2 && tail.windows(2).all(|w| w[1] >= w[0]),
        roots,
        lambda,
        last,
        relative_gap: (last - lambda).abs() / lambda,
    }
}
