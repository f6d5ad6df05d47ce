use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tpc::control::{control_relaxed, make_gain_from, reference_preview, GainMode, QuadraticCost};
use tpc::decomp::{blt_project, is_blt, ls_fit, solve_unit_blt};
use tpc::hankel::{min_examples, param_count};
use tpc::predictors::predict;
use tpc::simbench::montecarlo::derive_seed;
use tpc::statespace::{fit_statespace, verify_consistency};
use tpc::verify::random_data;
use tpc::{build_hankel, fit_predictor, Dims, PredictorKind};

fn kind() -> impl Strategy<Value = PredictorKind> {
    prop::sample::select(PredictorKind::ALL.to_vec())
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-3.0..3.0f64, rows * cols)
        .prop_map(move |v| DMatrix::from_row_slice(rows, cols, &v))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hankel_columns_are_anchored_windows(
        seed in any::<u64>(), m in 1usize..4, h in 1usize..5,
        n_u in 1usize..3, n_y in 1usize..3, extra in 0usize..10,
    ) {
        let d = m + h + extra;
        let data = random_data(&mut ChaCha8Rng::seed_from_u64(seed), n_u, n_y, d);
        let hs = build_hankel(&data, m, h).unwrap();
        prop_assert_eq!(hs.n, d - m - h + 1);
        prop_assert_eq!(hs.n1, d - m);
        for j in 0..hs.n1 {
            prop_assert_eq!(hs.z1.column(j).into_owned(), data.past_window(m + j, m));
            prop_assert_eq!(hs.y1.column(j), data.outputs().column(m + j));
        }
        for j in 0..hs.n {
            for i in 0..h {
                prop_assert_eq!(hs.u_block(i).column(j).into_owned(), data.inputs().column(m + j + i).into_owned());
                prop_assert_eq!(hs.y_block(i).column(j).into_owned(), data.outputs().column(m + j + i).into_owned());
            }
        }
    }

    #[test]
    fn min_examples_savings_match_the_table(
        m in 1usize..30, h in 1usize..30, n_u in 1usize..6, n_y in 1usize..6,
    ) {
        let n_z = n_u + n_y;
        let t = min_examples(PredictorKind::Transient, m, h, n_u, n_y);
        for (k, less) in [
            (PredictorKind::Subspace, (h - 1) * n_y),
            (PredictorKind::Multistep, (h - 1) * n_y),
            (PredictorKind::FixedLength, (h - 1) * n_z),
            (PredictorKind::StateSpace, (h - 1) * (n_z + 1)),
        ] {
            prop_assert_eq!(t - min_examples(k, m, h, n_u, n_y), less);
        }
    }

    #[test]
    fn param_counts_are_ordered(
        m in 1usize..30, h in 2usize..30, n_u in 1usize..6, n_y in 1usize..6,
    ) {
        let c = |k| param_count(k, m, h, n_u, n_y);
        prop_assert!(c(PredictorKind::StateSpace) < c(PredictorKind::FixedLength));
        prop_assert!(c(PredictorKind::FixedLength) <= c(PredictorKind::Multistep));
        prop_assert!(c(PredictorKind::Multistep) <= c(PredictorKind::Transient));
    }

    #[test]
    fn fitted_predictors_are_linear_and_causal(
        seed in any::<u64>(), k in kind(), m in 1usize..3, h in 1usize..4, cut in 0usize..4,
    ) {
        let (n_u, n_y) = (1, 2);
        let d = min_examples(k, m, h, n_u, n_y) + 20;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = random_data(&mut rng, n_u, n_y, d);
        let pred = fit_predictor(k, &build_hankel(&data, m, h).unwrap()).unwrap();
        let z = DVector::from_fn(m * (n_u + n_y), |i, _| (i as f64).sin());
        let u = DVector::from_fn(h * n_u, |i, _| (i as f64 + 0.5).cos());
        let u2 = DVector::from_fn(h * n_u, |i, _| 1.0 - i as f64 * 0.3);
        let (a, b) = (1.7, -0.4);
        let lhs = predict(&pred, &(&z * a), &(&u * a + &u2 * b)).unwrap();
        let rhs = predict(&pred, &(&z * a), &(&u * a)).unwrap() + predict(&pred, &(&z * 0.0), &(&u2 * b)).unwrap();
        prop_assert!((lhs - rhs).amax() <= 1e-9 * (1.0 + pred.f.amax() + pred.p.amax()));

        if k.is_causal() {
            // inputs from step `cut` on cannot move earlier predictions
            let cut = cut.min(h);
            let mut late = u.clone();
            for i in cut * n_u..h * n_u {
                late[i] += 10.0;
            }
            let y0 = predict(&pred, &z, &u).unwrap();
            let y1 = predict(&pred, &z, &late).unwrap();
            for i in 0..cut * n_y {
                prop_assert_eq!(y0[i], y1[i]);
            }
        }
    }

    #[test]
    fn least_squares_residual_is_orthogonal(
        x in matrix(3, 12), t in matrix(2, 12),
    ) {
        prop_assume!(tpc::hankel::has_full_row_rank(&x, 1e-6));
        let theta = ls_fit(&t, &x).unwrap();
        let resid = &t - &theta * &x;
        let scale = 1.0 + t.amax() * x.amax();
        prop_assert!((resid * x.transpose()).amax() <= 1e-9 * scale * 12.0);
    }

    #[test]
    fn blt_projection_and_unit_solve(
        phi in matrix(6, 6), rhs in matrix(6, 2), block in prop::sample::select(vec![1usize, 2, 3]),
    ) {
        let strict = blt_project(&phi, block, block, true).unwrap();
        prop_assert!(is_blt(&strict, block, block, true, 0.0).unwrap());
        prop_assert_eq!(&blt_project(&strict, block, block, true).unwrap(), &strict);
        let x = solve_unit_blt(&strict, block, &rhs).unwrap();
        let back = (DMatrix::identity(6, 6) - &strict) * &x;
        prop_assert!((back - &rhs).amax() <= 1e-9 * (1.0 + x.amax() * strict.amax()));
    }

    #[test]
    fn preview_repeats_the_last_reference(v in prop::collection::vec(-5.0..5.0f64, 1..4), h in 1usize..12) {
        let r = DVector::from_vec(v.clone());
        let p = reference_preview(&r, h);
        prop_assert_eq!(p.len(), h * v.len());
        for i in 0..p.len() {
            prop_assert_eq!(p[i], v[i % v.len()]);
        }
    }

    #[test]
    fn seeds_are_stable_and_stream_specific(master in any::<u64>(), run in 0u64..10_000) {
        let s: Vec<u64> = (1..=5).map(|k| derive_seed(master, run, k)).collect();
        prop_assert_eq!(&s, &(1..=5).map(|k| derive_seed(master, run, k)).collect::<Vec<_>>());
        for i in 0..s.len() {
            for j in (i + 1)..s.len() {
                prop_assert_ne!(s[i], s[j]);
            }
        }
        prop_assert_ne!(derive_seed(master, run, 1), derive_seed(master, run + 1, 1));
    }

    #[test]
    fn innovations_simulation_matches_state_space_predictor(
        seed in any::<u64>(), m in 1usize..4, h in 1usize..7, n_u in 1usize..3, n_y in 1usize..3,
    ) {
        let d = min_examples(PredictorKind::StateSpace, m, h, n_u, n_y) + 40;
        let data = random_data(&mut ChaCha8Rng::seed_from_u64(seed), n_u, n_y, d);
        let (_, model) = fit_statespace(&build_hankel(&data, m, h).unwrap()).unwrap();
        let rep = verify_consistency(&model, h, 20, seed).unwrap();
        prop_assert!(rep.max_abs_error <= 1e-9, "max error {}", rep.max_abs_error);
    }

    #[test]
    fn relaxed_slack_shrinks_as_lambda_grows(
        seed in any::<u64>(), p in matrix(6, 4), f_raw in matrix(6, 3),
        z in prop::collection::vec(-2.0..2.0f64, 4), input_penalty in any::<bool>(),
    ) {
        let (h, n_u, n_y) = (3, 1, 2);
        let f = blt_project(&f_raw, n_y, n_u, false).unwrap();
        let cost = QuadraticCost::diagonal(&[5.0, 1.0], &[0.5], h).unwrap();
        let z = DVector::from_vec(z);
        let yr = DVector::from_fn(h * n_y, |i, _| ((seed as usize + i) % 7) as f64 - 3.0);
        let mut last = f64::INFINITY;
        for lambda in [0.01, 0.1, 1.0, 10.0, 100.0] {
            let mode = GainMode::Relaxed { lambda, input_penalty };
            let Ok(gain) = make_gain_from(&p, &f, Dims::new(2, h, n_u, n_y), &cost, mode) else {
                return Ok(());
            };
            let (_, e) = control_relaxed(&gain, &z, &yr).unwrap();
            prop_assert!(e.norm() <= last * (1.0 + 1e-9) + 1e-12);
            last = e.norm();
        }
    }
}
