//! Fixtures shared by the criterion benches in `benches/`.

use merw_core::{LoopEnvironment, NuSpec};

pub fn bernoulli_env(p: f64, m: f64, seed: u64) -> LoopEnvironment {
    LoopEnvironment::iid(NuSpec::bernoulli(p, m).expect("valid law"), seed).expect("valid environment")
}

/// Sparse, balanced and dense loop environments at M = 2.
pub fn standard_envs() -> Vec<(&'static str, LoopEnvironment)> {
    vec![
        ("sparse", bernoulli_env(0.1, 2.0, 1)),
        ("balanced", bernoulli_env(0.5, 2.0, 1)),
        ("dense", bernoulli_env(0.9, 2.0, 1)),
    ]
}
