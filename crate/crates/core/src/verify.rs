//! Numerical self-checks comparing fast routes against independent oracles.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::control::{control_delta0, make_gain_from, GainMode, QuadraticCost};
use crate::error::{Result, TpcError};
use crate::hankel::{
    build_hankel, min_examples, DataLabel, Dims, HankelSet, PredictorKind, TrajectoryData,
};
use crate::predictors::{
    fit_multistep, fit_predictor, fit_subspace, fit_subspace_lq, stacked_gain,
};
use crate::simbench::{collect_training_data, generate_reference, PlantModel};
use crate::statespace::{
    assemble_system, build_phi, fit_statespace, verify_consistency, InnovationsModel,
};

/// Outcome of one check.
#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Worst observed deviation.
    pub metric: f64,
    pub tolerance: f64,
    pub instances: usize,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    /// Overrides every check's tolerance.
    pub tol: Option<f64>,
    /// Overrides every check's instance count.
    pub trials: Option<usize>,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            tol: None,
            trials: None,
            seed: 2024,
        }
    }
}

impl VerifyOptions {
    fn tol(&self, default: f64) -> f64 {
        self.tol.unwrap_or(default)
    }

    fn trials(&self, default: usize) -> usize {
        self.trials.unwrap_or(default)
    }
}

fn gaussian(rng: &mut impl Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

/// Independent Gaussian inputs and outputs: persistently exciting with probability one.
pub fn random_data(rng: &mut impl Rng, n_u: usize, n_y: usize, d: usize) -> TrajectoryData {
    TrajectoryData::new(
        gaussian(rng, n_u, d),
        gaussian(rng, n_y, d),
        DataLabel::OpenLoop,
    )
    .expect("positive sizes")
}

fn check(name: &str, metric: f64, tolerance: f64, instances: usize, detail: String) -> CheckResult {
    CheckResult {
        name: name.to_string(),
        passed: metric <= tolerance,
        metric,
        tolerance,
        instances,
        detail,
    }
}

/// Closed-loop double-integrator data and its state-space fit.
pub fn double_integrator_model(
    seed: u64,
    d: usize,
    m: usize,
    h: usize,
) -> Result<InnovationsModel> {
    let plant = PlantModel::double_integrator();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = generate_reference(&mut rng, d, plant.n_y());
    let data = collect_training_data(&plant, DataLabel::ClosedLoop, d, &mut rng, &r, 0.01)?;
    let hs = build_hankel(&data, m, h)?;
    Ok(fit_statespace(&hs)?.1)
}

/// Simulating the fitted innovations model over the horizon reproduces
/// `P z_p + F u_f + (I - Phi_y)^{-1} eps_f`.
pub fn check_innovations_consistency(opts: &VerifyOptions) -> Result<CheckResult> {
    let trials = opts.trials(1000);
    let (m, h) = (2, 10);
    let model = double_integrator_model(opts.seed, 200, m, h)?;
    let rep = verify_consistency(&model, h, trials, opts.seed ^ 0x5eed)?;
    Ok(check(
        "innovations_simulation_matches_predictor",
        rep.max_abs_error,
        opts.tol(1e-9),
        trials,
        format!("double integrator, m = {m}, h = {h}, max abs deviation"),
    ))
}

/// Pseudoinverse and LQ routes give the same subspace predictor.
pub fn check_subspace_routes(opts: &VerifyOptions) -> Result<CheckResult> {
    let trials = opts.trials(100);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(1));
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let n_u = rng.random_range(1..=2);
        let n_y = rng.random_range(1..=2);
        let m = rng.random_range(1..=4);
        let h = rng.random_range(1..=6);
        let d = min_examples(PredictorKind::Subspace, m, h, n_u, n_y) + rng.random_range(2..=30);
        let hs = build_hankel(&random_data(&mut rng, n_u, n_y, d), m, h)?;
        let a = stacked_gain(&fit_subspace(&hs)?);
        let b = stacked_gain(&fit_subspace_lq(&hs)?);
        worst = worst.max((&a - &b).norm() / a.norm().max(f64::MIN_POSITIVE));
    }
    Ok(check(
        "subspace_pinv_equals_lq",
        worst,
        opts.tol(1e-8),
        trials,
        "relative Frobenius difference of [P F]".into(),
    ))
}

/// Least squares over `[P F]` with the strictly block upper part of `F`
/// fixed at zero, solved by brute-force normal equations on the free entries.
pub fn masked_least_squares(hs: &HankelSet) -> Result<DMatrix<f64>> {
    let Dims { h, n_u, n_y, .. } = hs.dims;
    let r = hs.dims.past_len();
    let x = crate::decomp::vstack(&[&hs.z, &hs.u]);
    let (rows, cols) = (h * n_y, x.nrows());
    // free[(i, j)]: whether Theta(i, j) is estimated
    let free = |i: usize, j: usize| j < r || (j - r) / n_u <= i / n_y;
    let index: Vec<(usize, usize)> = (0..cols)
        .flat_map(|j| (0..rows).map(move |i| (i, j)))
        .filter(|&(i, j)| free(i, j))
        .collect();
    let xxt = &x * x.transpose();
    let yxt = &hs.y * x.transpose();
    let k = index.len();
    // d/dTheta(i, j) of ||Y - Theta X||^2: sum_l Theta(i, l) XX'(l, j) = YX'(i, j)
    let mut normal = DMatrix::zeros(k, k);
    let mut rhs = DVector::zeros(k);
    for (a, &(i, j)) in index.iter().enumerate() {
        rhs[a] = yxt[(i, j)];
        for (b, &(i2, l)) in index.iter().enumerate() {
            if i2 == i {
                normal[(a, b)] = xxt[(l, j)];
            }
        }
    }
    let sol = normal
        .lu()
        .solve(&rhs)
        .ok_or_else(|| TpcError::Singular("masked normal equations".into()))?;
    let mut theta = DMatrix::zeros(rows, cols);
    for (a, &(i, j)) in index.iter().enumerate() {
        theta[(i, j)] = sol[a];
    }
    Ok(theta)
}

/// The multistep predictor solves the causally constrained least squares problem.
pub fn check_multistep_optimality(opts: &VerifyOptions) -> Result<CheckResult> {
    let trials = opts.trials(50);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(2));
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let n_u = rng.random_range(1..=2);
        let n_y = rng.random_range(1..=2);
        let m = rng.random_range(1..=3);
        let h = rng.random_range(1..=5);
        let d = min_examples(PredictorKind::Multistep, m, h, n_u, n_y) + rng.random_range(5..=40);
        let hs = build_hankel(&random_data(&mut rng, n_u, n_y, d), m, h)?;
        let fast = stacked_gain(&fit_multistep(&hs)?);
        let oracle = masked_least_squares(&hs)?;
        worst = worst.max((&fast - &oracle).amax());
    }
    Ok(check(
        "multistep_equals_masked_least_squares",
        worst,
        opts.tol(1e-7),
        trials,
        "max abs difference of [P F]".into(),
    ))
}

/// Solves the model-based MPC problem with explicit state, input and output
/// variables through its KKT system. Returns the optimal inputs.
pub fn mpc_inputs(
    model: &InnovationsModel,
    cost: &QuadraticCost,
    z_p: &DVector<f64>,
    y_ref: &DVector<f64>,
) -> Result<DVector<f64>> {
    let Dims { h, n_u, n_y, .. } = model.dims;
    let nx = model.state_dim();
    // variables: x_1..x_{h+1}, u_1..u_h, y_1..y_h
    let (ox, ou, oy) = (0, (h + 1) * nx, (h + 1) * nx + h * n_u);
    let nv = oy + h * n_y;
    let nc = nx + h * nx + h * n_y;
    let mut hess = DMatrix::zeros(nv, nv);
    let mut grad = DVector::zeros(nv);
    for i in 0..h {
        hess.view_mut((ou + i * n_u, ou + i * n_u), (n_u, n_u))
            .copy_from(&(&cost.ru * 2.0));
        hess.view_mut((oy + i * n_y, oy + i * n_y), (n_y, n_y))
            .copy_from(&(&cost.qy * 2.0));
        let yr = y_ref.rows(i * n_y, n_y);
        grad.rows_mut(oy + i * n_y, n_y)
            .copy_from(&(&cost.qy * yr * -2.0));
    }
    let mut eq = DMatrix::zeros(nc, nv);
    let mut b = DVector::zeros(nc);
    eq.view_mut((0, ox), (nx, nx)).fill_with_identity();
    b.rows_mut(0, nx).copy_from(z_p);
    for i in 0..h {
        let row = nx + i * nx;
        eq.view_mut((row, ox + (i + 1) * nx), (nx, nx))
            .fill_with_identity();
        eq.view_mut((row, ox + i * nx), (nx, nx))
            .copy_from(&(-&model.a));
        eq.view_mut((row, ou + i * n_u), (nx, n_u))
            .copy_from(&(-&model.b));
        let row = nx + h * nx + i * n_y;
        eq.view_mut((row, oy + i * n_y), (n_y, n_y))
            .fill_with_identity();
        eq.view_mut((row, ox + i * nx), (n_y, nx))
            .copy_from(&(-&model.c));
        eq.view_mut((row, ou + i * n_u), (n_y, n_u))
            .copy_from(&(-&model.d));
    }
    let mut kkt = DMatrix::zeros(nv + nc, nv + nc);
    kkt.view_mut((0, 0), (nv, nv)).copy_from(&hess);
    kkt.view_mut((0, nv), (nv, nc)).copy_from(&eq.transpose());
    kkt.view_mut((nv, 0), (nc, nv)).copy_from(&eq);
    let mut rhs = DVector::zeros(nv + nc);
    rhs.rows_mut(0, nv).copy_from(&(-grad));
    rhs.rows_mut(nv, nc).copy_from(&b);
    let sol = kkt
        .lu()
        .solve(&rhs)
        .ok_or_else(|| TpcError::Singular("MPC KKT system".into()))?;
    Ok(sol.rows(ou, h * n_u).into_owned())
}

/// The closed-form TPC input with the state-space predictor equals the
/// MPC solution on the underlying model.
pub fn check_mpc_equivalence(opts: &VerifyOptions) -> Result<CheckResult> {
    let trials = opts.trials(50);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(3));
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let n_u = rng.random_range(1..=2);
        let n_y = rng.random_range(1..=2);
        let m = rng.random_range(1..=3);
        let h = rng.random_range(1..=8);
        let dims = Dims::new(m, h, n_u, n_y);
        // scaled so the model is not wildly unstable over the horizon
        let c = gaussian(&mut rng, n_y, dims.past_len()) * (0.5 / (dims.past_len() as f64).sqrt());
        let d = gaussian(&mut rng, n_y, n_u);
        let model = assemble_system(&c, &d, dims)?;
        let qy: Vec<f64> = (0..n_y).map(|_| rng.random_range(0.5..10.0)).collect();
        let ru: Vec<f64> = (0..n_u).map(|_| rng.random_range(0.1..2.0)).collect();
        let cost = QuadraticCost::diagonal(&qy, &ru, h)?;
        let (p, f) = build_phi(&model, h).to_trajectory(n_y)?;
        let gain = make_gain_from(&p, &f, dims, &cost, GainMode::Delta0)?;
        let z = DVector::from_column_slice(gaussian(&mut rng, dims.past_len(), 1).as_slice());
        let yr = DVector::from_column_slice(gaussian(&mut rng, h * n_y, 1).as_slice());
        let tpc = control_delta0(&gain, &z, &yr)?;
        let mpc = mpc_inputs(&model, &cost, &z, &yr)?;
        worst = worst.max((tpc - mpc).amax());
    }
    Ok(check(
        "tpc_state_space_equals_mpc",
        worst,
        opts.tol(1e-8),
        trials,
        "max abs difference of planned inputs".into(),
    ))
}

/// Identification succeeds at the minimum data length and fails one sample short.
pub fn check_data_requirements(opts: &VerifyOptions) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(4));
    let mut failures = Vec::new();
    let mut count = 0;
    for (m, h, n_u, n_y) in [(2, 3, 1, 1), (1, 4, 1, 2)] {
        for kind in PredictorKind::ALL {
            count += 1;
            let d = min_examples(kind, m, h, n_u, n_y);
            let data = random_data(&mut rng, n_u, n_y, d);
            let at_min = build_hankel(&data, m, h).and_then(|hs| fit_predictor(kind, &hs));
            let short = data
                .prefix(d - 1)
                .and_then(|s| build_hankel(&s, m, h))
                .and_then(|hs| fit_predictor(kind, &hs));
            if let Err(e) = at_min {
                failures.push(format!(
                    "{kind} (m={m}, h={h}, n_u={n_u}, n_y={n_y}) failed at d={d}: {e}"
                ));
            }
            if short.is_ok() {
                failures.push(format!(
                    "{kind} (m={m}, h={h}, n_u={n_u}, n_y={n_y}) succeeded at d={}",
                    d - 1
                ));
            }
        }
    }
    let detail = if failures.is_empty() {
        "all kinds identify at the minimum and fail one sample short".to_string()
    } else {
        failures.join("; ")
    };
    Ok(check(
        "minimum_data_boundary",
        failures.len() as f64,
        0.0,
        count,
        detail,
    ))
}

/// Runs every check.
pub fn run_all(opts: &VerifyOptions) -> Result<VerifyReport> {
    if opts.trials == Some(0) {
        return Err(TpcError::Config("trials must be positive".into()));
    }
    if let Some(t) = opts.tol {
        if t.is_nan() || t < 0.0 {
            return Err(TpcError::Config("tolerance must be nonnegative".into()));
        }
    }
    let checks = vec![
        check_innovations_consistency(opts)?,
        check_subspace_routes(opts)?,
        check_multistep_optimality(opts)?,
        check_mpc_equivalence(opts)?,
        check_data_requirements(opts)?,
    ];
    Ok(VerifyReport { checks })
}
