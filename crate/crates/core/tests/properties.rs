use num_rational::BigRational;
use proptest::prelude::*;

use merw_core::eigen::{alpha_at_depth, beta_at, beta_at_depth, g_m_iterate_closed, g_map, psi_extremal};
use merw_core::env::{gamma, tail_fixed_point};
use merw_core::kernel::merw_kernel;
use merw_core::oracle::{self, matrix_power_counts, matrix_power_counts_in};
use merw_core::periodic;
use merw_core::{LoopEnvironment, NuSpec};

fn iid(p: f64, m: f64, seed: u64) -> LoopEnvironment {
    LoopEnvironment::iid(NuSpec::bernoulli(p, m).unwrap(), seed).unwrap()
}

fn rational(x: u32) -> BigRational {
    BigRational::from_integer(x.into())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn deeper_brackets_nest(p in 0.05f64..0.95, m in 0.2f64..6.0, seed: u64, i in -500i64..500, d in 1usize..40) {
        let env = iid(p, m, seed);
        let shallow = beta_at_depth(&env, i, 0.0, d).unwrap();
        let deep = beta_at_depth(&env, i, 0.0, d + 7).unwrap();
        prop_assert!(deep.lo >= shallow.lo - 1e-14 && deep.hi <= shallow.hi + 1e-14);
        let shallow = alpha_at_depth(&env, i, 0.0, d).unwrap();
        let deep = alpha_at_depth(&env, i, 0.0, d + 7).unwrap();
        prop_assert!(deep.lo >= shallow.lo - 1e-14 && deep.hi <= shallow.hi + 1e-14);
        prop_assert!(deep.lo >= env.gamma() - 1e-15 && deep.hi <= 1.0 + 1e-15);
    }

    #[test]
    fn tail_value_is_a_fixed_point(m in 0.01f64..50.0, frac in 0.0f64..=1.0) {
        let lambda = 2.0 + m;
        let c = frac * m;
        let x = tail_fixed_point(lambda, c);
        prop_assert!((g_map(c, x, lambda).unwrap() - x).abs() <= 1e-13);
        prop_assert!((tail_fixed_point(lambda, 0.0) - gamma(lambda)).abs() <= 1e-15);
        prop_assert!((tail_fixed_point(lambda, m) - 1.0).abs() <= 1e-7);
    }

    #[test]
    fn closed_iterate_matches_repeated_map(u0 in 0.0f64..1.0, n in 0u64..60) {
        let mut x = u0;
        for _ in 0..n {
            x = g_map(2.0, x, 4.0).unwrap();
        }
        prop_assert!((g_m_iterate_closed(u0, n) - x).abs() <= 1e-12);
    }

    #[test]
    fn extremal_kernel_commutes_with_shifts(p in 0.1f64..0.9, seed: u64, shift in -50i64..50) {
        let env = iid(p, 2.0, seed);
        let moved = env.shifted(shift);
        let ev = psi_extremal(&env, (shift - 12, shift + 12), 1e-12).unwrap();
        let ev_moved = psi_extremal(&moved, (-12, 12), 1e-12).unwrap();
        let k = merw_kernel(&env, &ev, 1.0, (shift - 10, shift + 10)).unwrap();
        let k_moved = merw_kernel(&moved, &ev_moved, 1.0, (-10, 10)).unwrap();
        for i in -10..=10 {
            let (a, b) = (k_moved.at(i), k.at(i + shift));
            prop_assert!((a.left - b.left).abs() < 1e-11);
            prop_assert!((a.right - b.right).abs() < 1e-11);
            prop_assert_eq!(a.stay, b.stay);
        }
    }

    #[test]
    fn step_ratio_is_a_product_of_betas(p in 0.1f64..0.9, seed: u64, i in -100i64..100) {
        let env = iid(p, 2.0, seed);
        let ev = psi_extremal(&env, (i - 3, i + 3), 1e-13).unwrap();
        let t = merw_kernel(&env, &ev, 1.0, (i - 1, i + 1)).unwrap().at(i);
        let want = ev.beta(i - 1).mid() * ev.beta(i).mid();
        prop_assert!((t.left / t.right / want - 1.0).abs() < 1e-10);
    }

    #[test]
    fn kernel_rows_are_stochastic(p in 0.1f64..0.9, seed: u64, kappa in 0.0f64..=1.0) {
        let env = iid(p, 2.0, seed);
        let ev = psi_extremal(&env, (-30, 30), 1e-12).unwrap();
        let k = merw_kernel(&env, &ev, kappa, (-29, 29)).unwrap();
        for i in k.sites() {
            let t = k.at(i);
            prop_assert!(t.left >= 0.0 && t.stay >= 0.0 && t.right >= 0.0);
            prop_assert!((t.left + t.stay + t.right - 1.0).abs() < 1e-14);
            prop_assert_eq!(t.stay, env.weight_at(i) / env.lambda());
        }
    }

    #[test]
    fn iid_draws_are_reproducible(p in 0.05f64..0.95, seed: u64, a in -1000i64..1000) {
        let x = iid(p, 2.0, seed);
        let y = iid(p, 2.0, seed);
        prop_assert_eq!(x.weights(a, a + 50), y.weights(a, a + 50));
        let pointwise: Vec<f64> = (a..=a + 50).map(|i| x.weight_at(i)).collect();
        prop_assert_eq!(x.weights(a, a + 50), pointwise);
    }

    #[test]
    fn theta_decreases_with_period_and_grows_with_loop_weight(ell in 2u32..60, m in 0.1f64..8.0) {
        let t = periodic::solve_theta(ell, m, 1e-13).unwrap();
        // θ approaches its ℓ → ∞ limit exponentially fast, so long periods only tie.
        prop_assert!(periodic::solve_theta(ell + 1, m, 1e-13).unwrap() <= t + 1e-15);
        if ell < 8 {
            prop_assert!(periodic::solve_theta(ell + 1, m, 1e-13).unwrap() < t);
        }
        prop_assert!(periodic::solve_theta(ell, m * 1.1, 1e-13).unwrap() > t);
    }

    #[test]
    fn periodic_walk_is_reversible(ell in 2u32..30, m in 0.1f64..8.0) {
        let sol = periodic::periodic_measure(ell, m).unwrap();
        let q = periodic::reduced_kernel(&sol);
        let n = q.len();
        for i in 0..n {
            prop_assert!((q[i].iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for j in 0..n {
                prop_assert!((sol.pi[i] * q[i][j] - sol.pi[j] * q[j][i]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn periodic_eigenvector_solves_the_recurrence(ell in 2u32..40, m in 0.1f64..8.0) {
        let env = LoopEnvironment::periodic(ell, m).unwrap();
        let reach = 3 * ell as i64 + 2;
        let ev = psi_extremal(&env, (-reach, reach), 1e-12).unwrap();
        prop_assert!(ev.residual(1.0) < 1e-10);
        prop_assert!(ev.residual(0.5) < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn path_counts_are_symmetric(p in 0.1f64..0.9, seed: u64, n in 0usize..12, i in -4i64..4, j in -4i64..4) {
        let env = iid(p, 2.0, seed);
        prop_assert_eq!(matrix_power_counts(&env, n, i, j), matrix_power_counts(&env, n, j, i));
    }

    #[test]
    fn wider_windows_do_not_change_counts(seed: u64, n in 0usize..10, extra in 1i64..20) {
        let env = iid(0.4, 3.0, seed);
        let r = n as i64;
        let tight = matrix_power_counts_in(&env, n, 0, 1, (-r, r + 1)).unwrap();
        let wide = matrix_power_counts_in(&env, n, 0, 1, (-r - extra, r + 1 + extra)).unwrap();
        prop_assert_eq!(tight, wide);
    }
}

#[test]
fn excursion_table_at_full_density_counts_constant_paths() {
    let table = oracle::count_excursions(12).unwrap();
    for m in [1u32, 2, 5] {
        let env = LoopEnvironment::constant(m as f64).unwrap();
        for n in 0..=12 {
            assert_eq!(
                table.polynomial(n, &rational(1), &rational(m)),
                matrix_power_counts(&env, n, 0, 0),
                "n = {n}, M = {m}"
            );
        }
    }
}

#[test]
fn mixture_kernel_is_not_shift_covariant() {
    let env = LoopEnvironment::step(2.0).unwrap();
    let moved = env.shifted(3);
    let ev = psi_extremal(&env, (-5, 8), 1e-12).unwrap();
    let ev_moved = psi_extremal(&moved, (-8, 5), 1e-12).unwrap();
    let a = merw_kernel(&env, &ev, 0.5, (3, 3)).unwrap().at(3);
    let b = merw_kernel(&moved, &ev_moved, 0.5, (0, 0)).unwrap().at(0);
    assert!((a.right - b.right).abs() > 1e-3, "{} vs {}", a.right, b.right);
}

#[test]
fn atom_frequencies_pass_chi_square() {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    let atoms = vec![(0.0, 0.2), (1.0, 0.5), (2.5, 0.3)];
    let env = LoopEnvironment::iid(NuSpec::atoms(atoms.clone()).unwrap(), 17).unwrap();
    let n = 20_000;
    let draws = env.weights(-n / 2, n / 2 - 1);
    let stat: f64 = atoms
        .iter()
        .map(|&(v, q)| {
            let observed = draws.iter().filter(|&&w| w == v).count() as f64;
            let expected = q * n as f64;
            (observed - expected).powi(2) / expected
        })
        .sum();
    let critical = ChiSquared::new(2.0).unwrap().inverse_cdf(0.999);
    assert!(stat < critical, "chi-square {stat} vs {critical}");
}

#[test]
fn beta_at_depth_zero_is_the_trivial_bracket() {
    let env = iid(0.5, 2.0, 1);
    let b = beta_at_depth(&env, 0, 1e-12, 0).unwrap();
    assert_eq!((b.lo, b.hi, b.converged), (env.gamma(), 1.0, false));
    assert!(beta_at(&env, 0, 1e-12).unwrap().converged);
}
