//! Library results checked against independently coded reference solutions.

use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use tpc::control::{control_delta0, control_relaxed, make_gain_from, GainMode, QuadraticCost};
use tpc::decomp::lq_decompose;
use tpc::hankel::param_count;
use tpc::predictors::{
    fit_fixed_length_phi, fit_multistep, fit_subspace, fit_subspace_lq, fit_transient, predict,
};
use tpc::simbench::{design_lqg, PlantModel};
use tpc::statespace::{build_phi, fit_statespace};
use tpc::{build_hankel, fit_predictor, DataLabel, Dims, PredictorKind, TrajectoryData};

fn gaussian(rng: &mut impl Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

fn random_data(seed: u64, n_u: usize, n_y: usize, d: usize) -> TrajectoryData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    TrajectoryData::new(
        gaussian(&mut rng, n_u, d),
        gaussian(&mut rng, n_y, d),
        DataLabel::OpenLoop,
    )
    .unwrap()
}

fn stack(parts: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let cols = parts[0].ncols();
    let rows: usize = parts.iter().map(|p| p.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r = 0;
    for p in parts {
        out.rows_mut(r, p.nrows()).copy_from(p);
        r += p.nrows();
    }
    out
}

/// `Y X' (X X')^{-1}` by explicit inversion.
fn normal_equations(y: &DMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    let gram = x * x.transpose();
    y * x.transpose() * gram.try_inverse().expect("invertible Gram matrix")
}

#[test]
fn subspace_matches_normal_equations() {
    for (seed, (m, h, n_u, n_y)) in [(1, 2, 3, 1, 1), (2, 1, 4, 2, 1), (3, 3, 2, 1, 2)]
        .into_iter()
        .map(|(s, m, h, u, y)| (s, (m, h, u, y)))
    {
        let hs = build_hankel(&random_data(seed, n_u, n_y, 120), m, h).unwrap();
        let theta = normal_equations(&hs.y, &stack(&[&hs.z, &hs.u]));
        let r = hs.dims.past_len();
        for pred in [fit_subspace(&hs).unwrap(), fit_subspace_lq(&hs).unwrap()] {
            assert_relative_eq!(pred.p, theta.columns(0, r).into_owned(), epsilon = 1e-8);
            assert_relative_eq!(
                pred.f,
                theta.columns(r, h * n_u).into_owned(),
                epsilon = 1e-8
            );
        }
    }
}

#[test]
fn multistep_matches_rowwise_regressions() {
    let (m, h, n_u, n_y) = (2, 4, 2, 2);
    let hs = build_hankel(&random_data(7, n_u, n_y, 150), m, h).unwrap();
    let pred = fit_multistep(&hs).unwrap();
    let r = hs.dims.past_len();
    for i in 0..h {
        let x = stack(&[&hs.z, &hs.u.rows(0, (i + 1) * n_u).into_owned()]);
        let theta = normal_equations(&hs.y.rows(i * n_y, n_y).into_owned(), &x);
        let rows = pred.p.rows(i * n_y, n_y);
        assert_relative_eq!(
            rows.into_owned(),
            theta.columns(0, r).into_owned(),
            epsilon = 1e-8
        );
        let f_row = pred.f.rows(i * n_y, n_y);
        assert_relative_eq!(
            f_row.columns(0, (i + 1) * n_u).into_owned(),
            theta.columns(r, (i + 1) * n_u).into_owned(),
            epsilon = 1e-8
        );
        assert!(f_row
            .columns((i + 1) * n_u, (h - i - 1) * n_u)
            .iter()
            .all(|&v| v == 0.0));
    }
}

#[test]
fn transient_matches_explicit_inverse() {
    let (m, h, n_u, n_y) = (1, 3, 1, 2);
    let hs = build_hankel(&random_data(11, n_u, n_y, 200), m, h).unwrap();
    let r = hs.dims.past_len();
    let mut phi_p = DMatrix::zeros(h * n_y, r);
    let mut phi_u = DMatrix::zeros(h * n_y, h * n_u);
    let mut phi_y = DMatrix::zeros(h * n_y, h * n_y);
    for i in 0..h {
        let x = stack(&[
            &hs.z,
            &hs.u.rows(0, (i + 1) * n_u).into_owned(),
            &hs.y.rows(0, i * n_y).into_owned(),
        ]);
        let theta = normal_equations(&hs.y.rows(i * n_y, n_y).into_owned(), &x);
        phi_p.rows_mut(i * n_y, n_y).copy_from(&theta.columns(0, r));
        phi_u
            .view_mut((i * n_y, 0), (n_y, (i + 1) * n_u))
            .copy_from(&theta.columns(r, (i + 1) * n_u));
        phi_y
            .view_mut((i * n_y, 0), (n_y, i * n_y))
            .copy_from(&theta.columns(r + (i + 1) * n_u, i * n_y));
    }
    let inv = (DMatrix::identity(h * n_y, h * n_y) - phi_y)
        .try_inverse()
        .unwrap();
    let pred = fit_transient(&hs).unwrap();
    assert_relative_eq!(pred.p, &inv * phi_p, epsilon = 1e-8);
    assert_relative_eq!(pred.f, &inv * phi_u, epsilon = 1e-8);
}

/// `y(t) = a1 y(t-1) + a2 y(t-2) + b0 u(t) + b1 u(t-1) + b2 u(t-2) + e(t)`.
struct Arx2 {
    a: [f64; 2],
    b: [f64; 3],
}

impl Arx2 {
    fn next(&self, y1: f64, y2: f64, u0: f64, u1: f64, u2: f64) -> f64 {
        self.a[0] * y1 + self.a[1] * y2 + self.b[0] * u0 + self.b[1] * u1 + self.b[2] * u2
    }

    fn simulate(&self, d: usize, noise: f64, seed: u64) -> TrajectoryData {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut y = vec![0.0; d];
        for t in 0..d {
            let at = |v: &[f64], k: usize| if t >= k { v[t - k] } else { 0.0 };
            let e: f64 = StandardNormal.sample(&mut rng);
            y[t] = self.next(at(&y, 1), at(&y, 2), u[t], at(&u, 1), at(&u, 2)) + noise * e;
        }
        TrajectoryData::new(
            DMatrix::from_row_slice(1, d, &u),
            DMatrix::from_row_slice(1, d, &y),
            DataLabel::OpenLoop,
        )
        .unwrap()
    }

    /// Noise-free continuation from `z_p = (u(-2), y(-2), u(-1), y(-1))`.
    fn continue_from(&self, z_p: &DVector<f64>, u_f: &DVector<f64>) -> DVector<f64> {
        let mut u = vec![z_p[0], z_p[2]];
        let mut y = vec![z_p[1], z_p[3]];
        for &uf in u_f.iter() {
            let t = u.len();
            u.push(uf);
            y.push(self.next(y[t - 1], y[t - 2], u[t], u[t - 1], u[t - 2]));
        }
        DVector::from_column_slice(&y[2..])
    }
}

#[test]
fn every_predictor_recovers_a_known_arx_system() {
    // A tiny equation error keeps the transient regressors full rank; exact
    // data make the past outputs collinear with the other regressors.
    let sys = Arx2 {
        a: [1.2, -0.5],
        b: [0.3, 0.7, -0.2],
    };
    let (m, h) = (2, 5);
    let hs = build_hankel(&sys.simulate(300, 1e-9, 21), m, h).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for kind in PredictorKind::ALL {
        let pred = fit_predictor(kind, &hs).unwrap();
        for _ in 0..5 {
            let z = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
            let u = DVector::from_fn(h, |_, _| rng.random_range(-1.0..1.0));
            let got = predict(&pred, &z, &u).unwrap();
            assert_relative_eq!(got, sys.continue_from(&z, &u), epsilon = 1e-6);
        }
    }
}

#[test]
fn fixed_length_structure_is_shift_invariant() {
    let (m, h, n_u, n_y) = (2, 4, 1, 2);
    let hs = build_hankel(&random_data(5, n_u, n_y, 200), m, h).unwrap();
    let phi = fit_fixed_length_phi(&hs).unwrap();
    let n_z = n_u + n_y;
    let blk = |mat: &DMatrix<f64>, i: usize, j: usize, w: usize| {
        mat.view((i * n_y, j * w), (n_y, w)).into_owned()
    };
    for i in 1..h {
        for j in 0..h {
            if j <= i {
                assert_eq!(blk(&phi.phi_u, i, j, n_u), blk(&phi.phi_u, i - j, 0, n_u));
            } else {
                assert!(blk(&phi.phi_u, i, j, n_u).iter().all(|&v| v == 0.0));
            }
            if j < i {
                assert_eq!(blk(&phi.phi_y, i, j, n_y), blk(&phi.phi_y, i - j, 0, n_y));
            } else {
                assert!(blk(&phi.phi_y, i, j, n_y).iter().all(|&v| v == 0.0));
            }
        }
        for k in 0..m {
            if k >= i {
                assert_eq!(blk(&phi.phi_p, i, k, n_z), blk(&phi.phi_p, 0, k - i, n_z));
            } else {
                assert!(blk(&phi.phi_p, i, k, n_z).iter().all(|&v| v == 0.0));
            }
        }
    }
}

fn random_problem(
    seed: u64,
    h: usize,
    n_u: usize,
    n_y: usize,
    r: usize,
) -> (
    DMatrix<f64>,
    DMatrix<f64>,
    QuadraticCost,
    DVector<f64>,
    DVector<f64>,
) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = gaussian(&mut rng, h * n_y, r);
    let mut f = gaussian(&mut rng, h * n_y, h * n_u);
    for i in 0..h {
        for j in (i + 1)..h {
            f.view_mut((i * n_y, j * n_u), (n_y, n_u)).fill(0.0);
        }
    }
    let a = gaussian(&mut rng, n_y, n_y);
    let qy = &a * a.transpose() + DMatrix::identity(n_y, n_y) * 0.1;
    let b = gaussian(&mut rng, n_u, n_u);
    let ru = &b * b.transpose() + DMatrix::identity(n_u, n_u) * 0.5;
    let cost = QuadraticCost::new(qy, ru, h).unwrap();
    let z = DVector::from_fn(r, |_, _| StandardNormal.sample(&mut rng));
    let yr = DVector::from_fn(h * n_y, |_, _| StandardNormal.sample(&mut rng));
    (p, f, cost, z, yr)
}

/// Minimizes `||A x - b||` through an SVD pseudo-inverse.
fn svd_lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    a.clone().svd(true, true).solve(b, 1e-14).unwrap()
}

fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    // upper factor U with U'U = m
    m.clone().cholesky().unwrap().l().transpose()
}

#[test]
fn delta0_solves_the_stacked_least_squares_problem() {
    for seed in 0..10 {
        let (h, n_u, n_y, r) = (4, 2, 2, 6);
        let (p, f, cost, z, yr) = random_problem(seed, h, n_u, n_y, r);
        let dims = Dims::new(2, h, n_u, n_y);
        let gain = make_gain_from(&p, &f, dims, &cost, GainMode::Delta0).unwrap();
        let u = control_delta0(&gain, &z, &yr).unwrap();

        // min ||Qh (P z + F u - yr)||^2 + ||Rh u||^2
        let (qh, rh) = (sqrt_psd(&cost.q()), sqrt_psd(&cost.r_bar()));
        let a = stack(&[&(&qh * &f), &rh]);
        let mut b = DVector::zeros(a.nrows());
        b.rows_mut(0, h * n_y)
            .copy_from(&(-(&qh * (&p * &z - &yr))));
        assert_relative_eq!(u, svd_lstsq(&a, &b), epsilon = 1e-8, max_relative = 1e-8);

        let j = |u: &DVector<f64>| {
            let e = &p * &z + &f * u - &yr;
            (e.transpose() * cost.q() * &e)[(0, 0)] + (u.transpose() * cost.r_bar() * u)[(0, 0)]
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        for _ in 0..20 {
            let du = DVector::from_fn(u.len(), |_, _| rng.random_range(-1e-3..1e-3));
            assert!(j(&(&u + du)) >= j(&u));
        }
    }
}

#[test]
fn relaxed_solves_its_joint_problem() {
    for input_penalty in [false, true] {
        for (seed, lambda) in [(1, 0.1), (2, 1.0), (3, 50.0)] {
            let (h, n_u, n_y, r) = (3, 1, 2, 4);
            let (p, f, cost, z, yr) = random_problem(seed, h, n_u, n_y, r);
            let dims = Dims::new(2, h, n_u, n_y);
            let mode = GainMode::Relaxed {
                lambda,
                input_penalty,
            };
            let gain = make_gain_from(&p, &f, dims, &cost, mode).unwrap();
            let (u, e) = control_relaxed(&gain, &z, &yr).unwrap();

            // min ||Qh (P z + F u + e - yr)||^2 + lambda ||e||^2 [+ ||Rh u||^2]
            let (nu, ny) = (h * n_u, h * n_y);
            let qh = sqrt_psd(&cost.q());
            let rh = if input_penalty {
                sqrt_psd(&cost.r_bar())
            } else {
                DMatrix::zeros(nu, nu)
            };
            let mut a = DMatrix::zeros(ny + nu + ny, nu + ny);
            a.view_mut((0, 0), (ny, nu)).copy_from(&(&qh * &f));
            a.view_mut((0, nu), (ny, ny)).copy_from(&qh);
            a.view_mut((ny, 0), (nu, nu)).copy_from(&rh);
            a.view_mut((ny + nu, nu), (ny, ny))
                .copy_from(&(DMatrix::identity(ny, ny) * lambda.sqrt()));
            let mut b = DVector::zeros(a.nrows());
            b.rows_mut(0, ny).copy_from(&(-(&qh * (&p * &z - &yr))));
            let sol = svd_lstsq(&a, &b);
            assert_relative_eq!(
                u,
                sol.rows(0, nu).into_owned(),
                epsilon = 1e-7,
                max_relative = 1e-7
            );
            assert_relative_eq!(
                e,
                sol.rows(nu, ny).into_owned(),
                epsilon = 1e-7,
                max_relative = 1e-7
            );
        }
    }
}

#[test]
fn relaxed_with_input_penalty_tends_to_delta0() {
    let (h, n_u, n_y, r) = (5, 1, 2, 6);
    let (p, f, cost, z, yr) = random_problem(9, h, n_u, n_y, r);
    let dims = Dims::new(2, h, n_u, n_y);
    let d0 = make_gain_from(&p, &f, dims, &cost, GainMode::Delta0).unwrap();
    let mode = GainMode::Relaxed {
        lambda: 1e9,
        input_penalty: true,
    };
    let rel = make_gain_from(&p, &f, dims, &cost, mode).unwrap();
    let u0 = control_delta0(&d0, &z, &yr).unwrap();
    let (u, e) = control_relaxed(&rel, &z, &yr).unwrap();
    assert!((u - u0).amax() < 1e-5);
    assert!(e.amax() < 1e-5);
}

#[test]
fn lq_factor_matches_cholesky_of_the_gram_matrix() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (z, u, y) = (
        gaussian(&mut rng, 3, 40),
        gaussian(&mut rng, 2, 40),
        gaussian(&mut rng, 2, 40),
    );
    let lq = lq_decompose(&z, &u, &y).unwrap();
    let x = stack(&[&z, &u, &y]);
    let chol = (&x * x.transpose()).cholesky().unwrap().l();
    let l = lq.l();
    // the decomposition fixes the sign of each column of L
    for j in 0..l.ncols() {
        let s = if l[(j, j)] * chol[(j, j)] < 0.0 {
            -1.0
        } else {
            1.0
        };
        for i in 0..l.nrows() {
            assert_relative_eq!(
                l[(i, j)],
                s * chol[(i, j)],
                epsilon = 1e-9,
                max_relative = 1e-9
            );
        }
    }
    let q = lq.q();
    assert_relative_eq!(
        &q * q.transpose(),
        DMatrix::identity(q.nrows(), q.nrows()),
        epsilon = 1e-12
    );
    assert_relative_eq!(lq.recompose(), x, epsilon = 1e-12);
}

#[test]
fn lqg_gains_satisfy_their_riccati_equations() {
    let plant = PlantModel::double_integrator();
    let qy = DMatrix::from_diagonal(&DVector::from_vec(vec![1000.0, 10.0]));
    let ru = DMatrix::identity(1, 1);
    let o = design_lqg(&plant, &qy, &ru).unwrap();
    let (a, b, c) = (&plant.a, &plant.b, &plant.c);

    let qx = c.transpose() * &qy * c;
    let s = &o.s;
    let k = (&ru + b.transpose() * s * b).try_inverse().unwrap() * b.transpose() * s * a;
    let dare = a.transpose() * s * a - s + &qx - a.transpose() * s * b * &k;
    assert!(dare.amax() <= 1e-10 * s.amax());
    assert_relative_eq!(o.k_lqr, k, epsilon = 1e-9, max_relative = 1e-9);

    let p = &o.p;
    let innov = (c * p * c.transpose() + &plant.v).try_inverse().unwrap();
    let filt = a * (p - p * c.transpose() * &innov * c * p) * a.transpose() + &plant.w - p;
    assert!(filt.amax() <= 1e-10 * p.amax());
    assert_relative_eq!(
        o.l_kf,
        p * c.transpose() * innov,
        epsilon = 1e-9,
        max_relative = 1e-9
    );

    let radius = (a - b * &o.k_lqr)
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    assert!(radius < 1.0);
}

/// Free entries of each structure, counted by enumerating a mask of
/// parameter labels and collecting the distinct ones.
fn count_free_entries(kind: PredictorKind, m: usize, h: usize, n_u: usize, n_y: usize) -> usize {
    use std::collections::HashSet;
    let n_z = n_u + n_y;
    let mut labels: HashSet<(u8, usize, usize, usize)> = HashSet::new();
    for i in 0..h {
        for row in 0..n_y {
            for col in 0..m * n_z {
                match kind {
                    PredictorKind::FixedLength => {
                        // block k of row i copies block k - i of the first row
                        let k = col / n_z;
                        if k >= i {
                            labels.insert((0, 0, row, col - i * n_z));
                        }
                    }
                    PredictorKind::StateSpace => {
                        labels.insert((0, 0, row, col));
                    }
                    _ => {
                        labels.insert((0, i, row, col));
                    }
                }
            }
            for j in 0..h {
                for c in 0..n_u {
                    match kind {
                        PredictorKind::Subspace => {
                            labels.insert((1, i * h + j, row, c));
                        }
                        PredictorKind::Multistep | PredictorKind::Transient if j <= i => {
                            labels.insert((1, i * h + j, row, c));
                        }
                        PredictorKind::FixedLength if j <= i => {
                            labels.insert((1, i - j, row, c));
                        }
                        PredictorKind::StateSpace if i == 0 && j == 0 => {
                            labels.insert((1, 0, row, c));
                        }
                        _ => {}
                    }
                }
                for c in 0..n_y {
                    match kind {
                        PredictorKind::Transient if j < i => {
                            labels.insert((2, i * h + j, row, c));
                        }
                        PredictorKind::FixedLength if j < i => {
                            labels.insert((2, i - j, row, c));
                        }
                        _ => {}
                    }
                }
            }
        }
    }
    labels.len()
}

#[test]
fn param_count_matches_enumerated_structure() {
    for kind in PredictorKind::ALL {
        for m in 1..=4 {
            for h in 1..=6 {
                for n_u in 1..=2 {
                    for n_y in 1..=3 {
                        assert_eq!(
                            param_count(kind, m, h, n_u, n_y),
                            count_free_entries(kind, m, h, n_u, n_y),
                            "{kind} m={m} h={h} n_u={n_u} n_y={n_y}"
                        );
                    }
                }
            }
        }
    }
}

#[test]
fn state_space_phi_blocks_are_markov_parameters() {
    let (h, n_u, n_y) = (4, 1, 2);
    let hs = build_hankel(&random_data(3, n_u, n_y, 80), 2, h).unwrap();
    let (_, model) = fit_statespace(&hs).unwrap();
    let phi = build_phi(&model, h);
    let pow = |k: usize| {
        (0..k).fold(
            DMatrix::identity(model.state_dim(), model.state_dim()),
            |acc, _| acc * &model.cal_a,
        )
    };
    let view = |mat: &DMatrix<f64>, i: usize, j: usize, w: usize| {
        mat.view((i * n_y, j * w), (n_y, w)).into_owned()
    };
    for i in 0..h {
        let r = model.state_dim();
        assert_relative_eq!(
            view(&phi.phi_p, i, 0, r),
            &model.c * pow(i),
            epsilon = 1e-10
        );
        assert_relative_eq!(
            view(&phi.phi_u, i, i, n_u),
            model.d.clone(),
            epsilon = 1e-12
        );
        for j in 0..i {
            let lag = pow(i - j - 1);
            assert_relative_eq!(
                view(&phi.phi_u, i, j, n_u),
                &model.c * &lag * &model.cal_b,
                epsilon = 1e-10
            );
            assert_relative_eq!(
                view(&phi.phi_y, i, j, n_y),
                &model.c * &lag * &model.k,
                epsilon = 1e-10
            );
        }
    }
}
