//! Loop environments on the integer line.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MerwError, Result};
use crate::periodic;

/// Distribution of a single loop weight: finitely many atoms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NuRepr", into = "NuRepr")]
pub struct NuSpec {
    repr: NuRepr,
    atoms: Vec<(f64, f64)>,
    cumulative: Vec<f64>,
    ceiling: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum NuRepr {
    Bernoulli {
        p: f64,
        #[serde(rename = "M")]
        m: f64,
    },
    Atoms(Vec<(f64, f64)>),
}

impl TryFrom<NuRepr> for NuSpec {
    type Error = MerwError;

    fn try_from(repr: NuRepr) -> Result<Self> {
        let atoms = match &repr {
            NuRepr::Bernoulli { p, m } => {
                if !(0.0..=1.0).contains(p) {
                    return Err(MerwError::IllPosedDistribution(format!(
                        "bernoulli p = {p} outside [0, 1]"
                    )));
                }
                vec![(*m, *p), (0.0, 1.0 - p)]
            }
            NuRepr::Atoms(a) => a.clone(),
        };
        build_nu(repr, atoms)
    }
}

impl From<NuSpec> for NuRepr {
    fn from(nu: NuSpec) -> NuRepr {
        nu.repr
    }
}

fn build_nu(repr: NuRepr, raw: Vec<(f64, f64)>) -> Result<NuSpec> {
    let bad = |msg: String| Err(MerwError::IllPosedDistribution(msg));
    let mut atoms = Vec::with_capacity(raw.len());
    let mut total = 0.0;
    for &(v, q) in &raw {
        if !v.is_finite() || v < 0.0 {
            return bad(format!("atom value {v} is not a finite non-negative weight"));
        }
        if !q.is_finite() || q < 0.0 {
            return bad(format!("atom probability {q} is negative"));
        }
        total += q;
        if q > 0.0 {
            atoms.push((v, q));
        }
    }
    if (total - 1.0).abs() > 1e-12 {
        return bad(format!("probabilities sum to {total}, not 1"));
    }
    // The ceiling is the top of the support, so M always lies in supp(nu).
    let ceiling = atoms.iter().map(|a| a.0).fold(0.0, f64::max);
    if ceiling <= 0.0 {
        return bad("all mass sits at weight 0; the ceiling M must be positive".into());
    }
    if atoms.iter().all(|a| a.0 == ceiling) {
        return bad(format!("point mass at the ceiling M = {ceiling}"));
    }
    if let NuRepr::Bernoulli { m, p } = &repr {
        if *p <= 0.0 {
            return bad(format!("M = {m} has probability 0"));
        }
    }
    let mut acc = 0.0;
    let cumulative = atoms
        .iter()
        .map(|a| {
            acc += a.1;
            acc
        })
        .collect();
    Ok(NuSpec {
        repr,
        atoms,
        cumulative,
        ceiling,
    })
}

impl NuSpec {
    /// p·δ_M + (1−p)·δ_0.
    pub fn bernoulli(p: f64, m: f64) -> Result<Self> {
        NuRepr::Bernoulli { p, m }.try_into()
    }

    /// Arbitrary finite distribution given as (value, probability) pairs.
    pub fn atoms(atoms: Vec<(f64, f64)>) -> Result<Self> {
        NuRepr::Atoms(atoms).try_into()
    }

    pub fn ceiling(&self) -> f64 {
        self.ceiling
    }

    /// Atoms with positive probability.
    pub fn support(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    /// Inverse-CDF lookup for a uniform in [0, 1).
    pub fn quantile(&self, u: f64) -> f64 {
        let k = self.cumulative.partition_point(|&c| c <= u);
        self.atoms[k.min(self.atoms.len() - 1)].0
    }

    /// `(p, M)` when built by [`NuSpec::bernoulli`].
    pub fn as_bernoulli(&self) -> Option<(f64, f64)> {
        match self.repr {
            NuRepr::Bernoulli { p, m } => Some((p, m)),
            NuRepr::Atoms(_) => None,
        }
    }
}

impl fmt::Display for NuSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.repr {
            NuRepr::Bernoulli { p, m } => write!(f, "bernoulli:{p},{m}"),
            NuRepr::Atoms(a) => {
                let parts: Vec<String> = a.iter().map(|(v, q)| format!("{v}@{q}")).collect();
                write!(f, "atoms:{}", parts.join(","))
            }
        }
    }
}

/// Accepts `bernoulli:p,M` and `atoms:v@q,v@q,...`.
impl FromStr for NuSpec {
    type Err = MerwError;

    fn from_str(s: &str) -> Result<Self> {
        let parse = |x: &str| {
            x.trim()
                .parse::<f64>()
                .map_err(|_| MerwError::InvalidArgument(format!("not a number: `{x}`")))
        };
        if let Some(rest) = s.strip_prefix("bernoulli:") {
            let (p, m) = rest.split_once(',').ok_or_else(|| {
                MerwError::InvalidArgument(format!("expected bernoulli:p,M, got `{s}`"))
            })?;
            return NuSpec::bernoulli(parse(p)?, parse(m)?);
        }
        if let Some(rest) = s.strip_prefix("atoms:") {
            let mut atoms = Vec::new();
            for part in rest.split(',') {
                let (v, q) = part.split_once('@').ok_or_else(|| {
                    MerwError::InvalidArgument(format!("expected value@prob, got `{part}`"))
                })?;
                atoms.push((parse(v)?, parse(q)?));
            }
            return NuSpec::atoms(atoms);
        }
        Err(MerwError::InvalidArgument(format!(
            "unknown distribution `{s}` (use bernoulli:p,M or atoms:v@q,...)"
        )))
    }
}

/// Serializable description of an environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvSpec {
    Constant {
        c: f64,
    },
    /// Weight M on sites ≤ 0, weight 0 on sites ≥ 1.
    Step {
        #[serde(rename = "M")]
        m: f64,
    },
    /// Weight M on multiples of `ell`, 0 elsewhere.
    Periodic {
        ell: u32,
        #[serde(rename = "M")]
        m: f64,
    },
    /// Weight M at the origin only.
    SingleLoop {
        #[serde(rename = "M")]
        m: f64,
    },
    /// `values[k]` sits at site `start + k`; constant tails `left` and `right` outside.
    Explicit {
        start: i64,
        values: Vec<f64>,
        left: f64,
        right: f64,
    },
    Iid {
        nu: NuSpec,
        seed: u64,
    },
}

#[derive(Debug, Clone)]
enum Kind {
    Constant(f64),
    Step(f64),
    Periodic { ell: i64, m: f64, theta: f64 },
    SingleLoop(f64),
    Explicit { start: i64, values: Vec<f64>, left: f64, right: f64 },
    Iid { nu: NuSpec, base: ChaCha8Rng },
}

/// Immutable loop environment. Cheap to clone and safe to share across threads.
#[derive(Debug, Clone)]
pub struct LoopEnvironment {
    spec: EnvSpec,
    kind: Kind,
    ceiling: f64,
    lambda: f64,
    /// Site i of this environment is site i + offset of the underlying one.
    offset: i64,
}

/// Which of the analytic machinery an environment supports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EigenSupport {
    /// Two extremal eigenvectors from continued fractions.
    Extremal,
    /// A single periodic eigenvector (ψ⁺ = ψ⁻).
    Periodized,
    None,
}

fn check_weight(w: f64, what: &str) -> Result<f64> {
    if w.is_finite() && w >= 0.0 {
        Ok(w)
    } else {
        Err(MerwError::InvalidEnvironment(format!(
            "{what} = {w} is not a finite non-negative weight"
        )))
    }
}

/// Smaller root of X² − λX + 1, computed without cancellation.
pub fn gamma(lambda: f64) -> f64 {
    tail_fixed_point(lambda, 0.0)
}

/// Fixed point in (0, 1] of x ↦ 1/(λ − c − x), i.e. the excursion value in
/// an environment that is constant equal to c. Requires λ − c ≥ 2.
pub fn tail_fixed_point(lambda: f64, c: f64) -> f64 {
    let a = lambda - c;
    let disc = (a * a - 4.0).max(0.0);
    2.0 / (a + disc.sqrt())
}

impl LoopEnvironment {
    pub fn new(spec: EnvSpec) -> Result<Self> {
        let (kind, ceiling, lambda) = match &spec {
            EnvSpec::Constant { c } => {
                let c = check_weight(*c, "constant weight")?;
                (Kind::Constant(c), c, 2.0 + c)
            }
            EnvSpec::Step { m } => {
                let m = check_weight(*m, "M")?;
                (Kind::Step(m), m, 2.0 + m)
            }
            EnvSpec::Periodic { ell, m } => {
                let m = check_weight(*m, "M")?;
                if *ell < 2 || m <= 0.0 {
                    return Err(MerwError::InvalidEnvironment(
                        "periodic environment needs ell ≥ 2 and M > 0".into(),
                    ));
                }
                let theta = periodic::solve_theta(*ell, m, 1e-12)?;
                let kind = Kind::Periodic {
                    ell: *ell as i64,
                    m,
                    theta,
                };
                (kind, m, 2.0 * theta.cosh())
            }
            EnvSpec::SingleLoop { m } => {
                let m = check_weight(*m, "M")?;
                (Kind::SingleLoop(m), m, (m * m + 4.0).sqrt())
            }
            EnvSpec::Explicit {
                start,
                values,
                left,
                right,
            } => {
                let left = check_weight(*left, "left tail")?;
                let right = check_weight(*right, "right tail")?;
                for &v in values {
                    check_weight(v, "explicit weight")?;
                }
                let ceiling = values.iter().copied().fold(left.max(right), f64::max);
                // λ = 2 + M needs arbitrarily long runs at the ceiling; with a
                // finite window that can only come from a tail.
                if left != ceiling && right != ceiling {
                    return Err(MerwError::InvalidEnvironment(format!(
                        "explicit environment is not nice: neither tail ({left}, {right}) reaches the ceiling {ceiling}"
                    )));
                }
                let kind = Kind::Explicit {
                    start: *start,
                    values: values.clone(),
                    left,
                    right,
                };
                (kind, ceiling, 2.0 + ceiling)
            }
            EnvSpec::Iid { nu, seed } => {
                let kind = Kind::Iid {
                    nu: nu.clone(),
                    base: ChaCha8Rng::seed_from_u64(*seed),
                };
                (kind, nu.ceiling(), 2.0 + nu.ceiling())
            }
        };
        Ok(LoopEnvironment {
            spec,
            kind,
            ceiling,
            lambda,
            offset: 0,
        })
    }

    pub fn constant(c: f64) -> Result<Self> {
        Self::new(EnvSpec::Constant { c })
    }

    pub fn step(m: f64) -> Result<Self> {
        Self::new(EnvSpec::Step { m })
    }

    pub fn periodic(ell: u32, m: f64) -> Result<Self> {
        Self::new(EnvSpec::Periodic { ell, m })
    }

    pub fn single_loop(m: f64) -> Result<Self> {
        Self::new(EnvSpec::SingleLoop { m })
    }

    pub fn explicit(start: i64, values: Vec<f64>, left: f64, right: f64) -> Result<Self> {
        Self::new(EnvSpec::Explicit {
            start,
            values,
            left,
            right,
        })
    }

    pub fn iid(nu: NuSpec, seed: u64) -> Result<Self> {
        Self::new(EnvSpec::Iid { nu, seed })
    }

    /// The environment seen from site `shift`: weight at i is the old weight at i + shift.
    pub fn shifted(&self, shift: i64) -> Self {
        let mut out = self.clone();
        out.offset += shift;
        out
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn offset(&self) -> i64 {
        self.offset
    }

    pub fn ceiling(&self) -> f64 {
        self.ceiling
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn gamma(&self) -> f64 {
        gamma(self.lambda)
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            Kind::Constant(_) => "constant",
            Kind::Step(_) => "step",
            Kind::Periodic { .. } => "periodic",
            Kind::SingleLoop(_) => "single_loop",
            Kind::Explicit { .. } => "explicit",
            Kind::Iid { .. } => "iid",
        }
    }

    pub fn eigen_support(&self) -> EigenSupport {
        match self.kind {
            Kind::Periodic { .. } => EigenSupport::Periodized,
            Kind::SingleLoop(_) => EigenSupport::None,
            _ => EigenSupport::Extremal,
        }
    }

    /// (ell, M, θ) for periodic environments.
    pub fn periodic_params(&self) -> Option<(i64, f64, f64)> {
        match self.kind {
            Kind::Periodic { ell, m, theta } => Some((ell, m, theta)),
            _ => None,
        }
    }

    pub fn weight_at(&self, i: i64) -> f64 {
        let i = i + self.offset;
        match &self.kind {
            Kind::Constant(c) => *c,
            Kind::Step(m) => {
                if i <= 0 {
                    *m
                } else {
                    0.0
                }
            }
            Kind::Periodic { ell, m, .. } => {
                if i.rem_euclid(*ell) == 0 {
                    *m
                } else {
                    0.0
                }
            }
            Kind::SingleLoop(m) => {
                if i == 0 {
                    *m
                } else {
                    0.0
                }
            }
            Kind::Explicit {
                start,
                values,
                left,
                right,
            } => {
                if i < *start {
                    *left
                } else {
                    let k = (i - start) as u64;
                    if k < values.len() as u64 {
                        values[k as usize]
                    } else {
                        *right
                    }
                }
            }
            Kind::Iid { nu, base } => {
                let mut rng = base.clone();
                rng.set_word_pos(word_pos(i));
                nu.quantile(rng.random::<f64>())
            }
        }
    }

    /// Weights on the inclusive range [a, b] (empty when b < a).
    pub fn weights(&self, a: i64, b: i64) -> Vec<f64> {
        if b < a {
            return Vec::new();
        }
        match &self.kind {
            Kind::Iid { nu, base } => {
                // Sites are laid out consecutively in the key stream, so a
                // range is a single seek followed by sequential reads.
                let mut rng = base.clone();
                rng.set_word_pos(word_pos(a + self.offset));
                (a..=b).map(|_| nu.quantile(rng.random::<f64>())).collect()
            }
            _ => (a..=b).map(|i| self.weight_at(i)).collect(),
        }
    }

    /// Some(c) when w_k = c for every k ≤ i.
    pub fn left_tail(&self, i: i64) -> Option<f64> {
        let i = i + self.offset;
        match &self.kind {
            Kind::Constant(c) => Some(*c),
            Kind::Step(m) => (i <= 0).then_some(*m),
            Kind::SingleLoop(_) => (i < 0).then_some(0.0),
            Kind::Explicit { start, left, .. } => (i < *start).then_some(*left),
            Kind::Periodic { .. } | Kind::Iid { .. } => None,
        }
    }

    /// Some(c) when w_k = c for every k ≥ i.
    pub fn right_tail(&self, i: i64) -> Option<f64> {
        let i = i + self.offset;
        match &self.kind {
            Kind::Constant(c) => Some(*c),
            Kind::Step(_) => (i >= 1).then_some(0.0),
            Kind::SingleLoop(_) => (i > 0).then_some(0.0),
            Kind::Explicit {
                start,
                values,
                right,
                ..
            } => (i >= start + values.len() as i64).then_some(*right),
            Kind::Periodic { .. } | Kind::Iid { .. } => None,
        }
    }

    /// First site i in [a, b] with w_i, …, w_{i+r} all ≥ M − eps.
    pub fn check_nice_window(&self, a: i64, b: i64, eps: f64, r: usize) -> Option<i64> {
        if b < a {
            return None;
        }
        let threshold = self.ceiling - eps;
        let w = self.weights(a, b + r as i64);
        let mut run = 0usize;
        for (k, &x) in w.iter().enumerate() {
            if x >= threshold {
                run += 1;
                if run > r {
                    let site = a + k as i64 - r as i64;
                    return (site <= b).then_some(site);
                }
            } else {
                run = 0;
            }
        }
        None
    }
}

/// Two 32-bit words per site (one `u64` draw), sites ordered along ℤ.
fn word_pos(i: i64) -> u128 {
    ((i as i128 - i64::MIN as i128) as u128) * 2
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_per_kind() {
        assert_eq!(LoopEnvironment::constant(0.0).unwrap().lambda(), 2.0);
        let nu = NuSpec::bernoulli(0.5, 2.0).unwrap();
        assert_eq!(LoopEnvironment::iid(nu, 1).unwrap().lambda(), 4.0);
        let s = LoopEnvironment::single_loop(2.0).unwrap().lambda();
        assert!((s - 8f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn deterministic_weights() {
        let e = LoopEnvironment::step(2.0).unwrap();
        assert_eq!(e.weight_at(-3), 2.0);
        assert_eq!(e.weight_at(1), 0.0);
        let p = LoopEnvironment::periodic(5, 3.0).unwrap();
        assert_eq!(p.weight_at(10), 3.0);
        assert_eq!(p.weight_at(11), 0.0);
        assert_eq!(p.weight_at(-5), 3.0);
    }

    #[test]
    fn explicit_needs_a_tail_at_the_ceiling() {
        assert!(LoopEnvironment::explicit(0, vec![3.0], 0.0, 1.0).is_err());
        let e = LoopEnvironment::explicit(-2, vec![1.0, 0.5, 2.0], 0.0, 2.0).unwrap();
        assert_eq!(e.ceiling(), 2.0);
        assert_eq!(e.weights(-4, 2), vec![0.0, 0.0, 1.0, 0.5, 2.0, 2.0, 2.0]);
        assert_eq!(e.left_tail(-3), Some(0.0));
        assert_eq!(e.left_tail(-2), None);
        assert_eq!(e.right_tail(1), Some(2.0));
        assert_eq!(e.right_tail(0), None);
    }

    #[test]
    fn rejects_negative_and_ill_posed() {
        assert!(LoopEnvironment::constant(-1.0).is_err());
        assert!(NuSpec::bernoulli(1.0, 2.0).is_err());
        assert!(NuSpec::bernoulli(0.0, 2.0).is_err());
        assert!(NuSpec::atoms(vec![(1.0, 0.5), (2.0, 0.4)]).is_err());
        assert!(NuSpec::atoms(vec![(-1.0, 0.5), (2.0, 0.5)]).is_err());
        assert!(NuSpec::atoms(vec![(0.0, 0.5), (2.0, 0.5)]).is_ok());
    }

    #[test]
    fn range_reads_match_point_reads() {
        let nu = NuSpec::atoms(vec![(0.0, 0.3), (1.0, 0.3), (2.5, 0.4)]).unwrap();
        let e = LoopEnvironment::iid(nu, 99).unwrap();
        let w = e.weights(-40, 40);
        for (k, i) in (-40..=40).enumerate() {
            assert_eq!(w[k], e.weight_at(i));
        }
        let s = e.shifted(7);
        assert_eq!(s.weight_at(-3), e.weight_at(4));
        assert_eq!(s.weights(-3, 3), e.weights(4, 10));
    }

    #[test]
    fn nice_window_search() {
        let c = LoopEnvironment::constant(2.0).unwrap();
        assert_eq!(c.check_nice_window(-5, 5, 0.1, 5), Some(-5));
        let s = LoopEnvironment::step(2.0).unwrap();
        assert_eq!(s.check_nice_window(1, 100, 0.1, 0), None);
        assert_eq!(s.check_nice_window(-3, 100, 0.1, 3), Some(-3));
        assert_eq!(s.check_nice_window(-2, 100, 0.1, 3), None);
    }

    #[test]
    fn nu_round_trips_through_json_and_text() {
        let spec: EnvSpec = serde_json::from_str(
            r#"{"kind": "iid", "nu": {"bernoulli": {"p": 0.02, "M": 20}}, "seed": 12345}"#,
        )
        .unwrap();
        let env = LoopEnvironment::new(spec.clone()).unwrap();
        assert_eq!(env.lambda(), 22.0);
        let back: EnvSpec = serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(back, spec);
        let nu: NuSpec = "bernoulli:0.5,2".parse().unwrap();
        assert_eq!(nu.as_bernoulli(), Some((0.5, 2.0)));
        let nu: NuSpec = "atoms:0@0.25,1@0.75".parse().unwrap();
        assert_eq!(nu.ceiling(), 1.0);
        let bad: std::result::Result<EnvSpec, _> = serde_json::from_str(
            r#"{"kind": "iid", "nu": {"bernoulli": {"p": 1.0, "M": 2}}, "seed": 1}"#,
        );
        assert!(bad.is_err());
    }
}
