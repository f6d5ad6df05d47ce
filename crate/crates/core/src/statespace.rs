//! State-space predictor built from a one-step ARX fit whose state is the
//! past window `z_p`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::decomp::{ls_fit_named, vstack};
use crate::error::{dim_err, Result, TpcError};
use crate::hankel::{min_examples, Dims, HankelSet, PredictorKind};
use crate::predictors::{PhiTriple, Predictor};

/// Innovations model `x+ = A x + B u + K e`, `y = C x + D u + e`.
#[derive(Debug, Clone, PartialEq)]
pub struct InnovationsModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub k: DMatrix<f64>,
    /// `A - K C`
    pub cal_a: DMatrix<f64>,
    /// `B - K D`
    pub cal_b: DMatrix<f64>,
    pub dims: Dims,
}

impl InnovationsModel {
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    /// One step of the innovations model; returns `(y, x+)`.
    pub fn step(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        e: &DVector<f64>,
    ) -> (DVector<f64>, DVector<f64>) {
        let y = &self.c * x + &self.d * u + e;
        let next = &self.a * x + &self.b * u + &self.k * e;
        (y, next)
    }
}

/// One-step fit `[C D] = Y1 [Z1; U1]^+`.
pub fn fit_onestep(hs: &HankelSet) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let Dims { m, h, n_u, n_y } = hs.dims;
    let x = vstack(&[&hs.z1, &hs.u1]);
    if x.ncols() < x.nrows() {
        return Err(TpcError::InsufficientData {
            context: format!("state_space predictor with m = {m}, h = {h}"),
            needed: min_examples(PredictorKind::StateSpace, m, h, n_u, n_y),
            got: hs.n1 + m,
        });
    }
    let theta = ls_fit_named(&hs.y1, &x, "[Z1; U1]")?;
    let r = hs.dims.past_len();
    Ok((
        theta.columns(0, r).into_owned(),
        theta.columns(r, n_u).into_owned(),
    ))
}

/// Assembles the innovations model whose state is `z_p`.
pub fn assemble_system(c: &DMatrix<f64>, d: &DMatrix<f64>, dims: Dims) -> Result<InnovationsModel> {
    let Dims { m, n_u, n_y, .. } = dims;
    let n_z = dims.n_z();
    let nx = dims.past_len();
    if c.shape() != (n_y, nx) || d.shape() != (n_y, n_u) {
        return Err(dim_err(format!(
            "expected C {n_y}x{nx} and D {n_y}x{n_u}, got {:?} and {:?}",
            c.shape(),
            d.shape()
        )));
    }
    let mut a = DMatrix::zeros(nx, nx);
    for i in 0..m - 1 {
        a.view_mut((i * n_z, (i + 1) * n_z), (n_z, n_z))
            .fill_with_identity();
    }
    let last = (m - 1) * n_z;
    a.view_mut((last + n_u, 0), (n_y, nx)).copy_from(c);

    let mut b = DMatrix::zeros(nx, n_u);
    b.view_mut((last, 0), (n_u, n_u)).fill_with_identity();
    b.view_mut((last + n_u, 0), (n_y, n_u)).copy_from(d);

    let mut k = DMatrix::zeros(nx, n_y);
    k.view_mut((last + n_u, 0), (n_y, n_y)).fill_with_identity();

    let cal_a = &a - &k * c;
    let cal_b = &b - &k * d;
    Ok(InnovationsModel {
        a,
        b,
        c: c.clone(),
        d: d.clone(),
        k,
        cal_a,
        cal_b,
        dims,
    })
}

/// Transient-form matrices of the innovations model over horizon `h`.
pub fn build_phi(model: &InnovationsModel, h: usize) -> PhiTriple {
    let Dims { n_u, n_y, .. } = model.dims;
    let nx = model.state_dim();
    // markov[i] = C cal_A^i
    let mut markov = Vec::with_capacity(h);
    let mut cur = model.c.clone();
    for _ in 0..h {
        let next = &cur * &model.cal_a;
        markov.push(cur);
        cur = next;
    }
    let mut phi_p = DMatrix::zeros(h * n_y, nx);
    let mut phi_u = DMatrix::zeros(h * n_y, h * n_u);
    let mut phi_y = DMatrix::zeros(h * n_y, h * n_y);
    let gu: Vec<DMatrix<f64>> = markov.iter().map(|mk| mk * &model.cal_b).collect();
    let gy: Vec<DMatrix<f64>> = markov.iter().map(|mk| mk * &model.k).collect();
    for i in 0..h {
        phi_p.rows_mut(i * n_y, n_y).copy_from(&markov[i]);
        phi_u
            .view_mut((i * n_y, i * n_u), (n_y, n_u))
            .copy_from(&model.d);
        for j in 0..i {
            phi_u
                .view_mut((i * n_y, j * n_u), (n_y, n_u))
                .copy_from(&gu[i - j - 1]);
            phi_y
                .view_mut((i * n_y, j * n_y), (n_y, n_y))
                .copy_from(&gy[i - j - 1]);
        }
    }
    PhiTriple {
        phi_p,
        phi_u,
        phi_y,
    }
}

/// Fits the state-space predictor and returns it with its innovations model.
pub fn fit_statespace(hs: &HankelSet) -> Result<(Predictor, InnovationsModel)> {
    let (c, d) = fit_onestep(hs)?;
    let model = assemble_system(&c, &d, hs.dims)?;
    let phi = build_phi(&model, hs.dims.h);
    let (p, f) = phi.to_trajectory(hs.dims.n_y)?;
    let pred = Predictor::from_parts(p, f, PredictorKind::StateSpace, hs)?;
    Ok((pred, model))
}

/// Simulates the innovations model from `x0`; `u` is `n_u x T`, `e` is
/// `n_y x T`. Returns the `n_y x T` outputs.
pub fn simulate_innovations(
    model: &InnovationsModel,
    x0: &DVector<f64>,
    u: &DMatrix<f64>,
    e: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let Dims { n_u, n_y, .. } = model.dims;
    if x0.len() != model.state_dim()
        || u.nrows() != n_u
        || e.nrows() != n_y
        || u.ncols() != e.ncols()
    {
        return Err(dim_err("simulate_innovations: inconsistent x0, u or e"));
    }
    let mut x = x0.clone();
    let mut y = DMatrix::zeros(n_y, u.ncols());
    for t in 0..u.ncols() {
        let (yt, next) = model.step(&x, &u.column(t).into_owned(), &e.column(t).into_owned());
        y.set_column(t, &yt);
        x = next;
    }
    Ok(y)
}

/// Outcome of the simulation-versus-predictor consistency check.
#[derive(Debug, Clone)]
pub struct ConsistencyReport {
    pub trials: usize,
    /// Largest absolute deviation over all trials and entries.
    pub max_abs_error: f64,
}

/// Checks that simulating the innovations model for `h` steps equals
/// `P x0 + F u_f + (I - Phi_y)^{-1} e_f` on random draws.
pub fn verify_consistency(
    model: &InnovationsModel,
    h: usize,
    trials: usize,
    seed: u64,
) -> Result<ConsistencyReport> {
    let Dims { n_u, n_y, .. } = model.dims;
    let phi = build_phi(model, h);
    let (p, f) = phi.to_trajectory(n_y)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw =
        |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(&mut rng));
    let mut max_abs_error: f64 = 0.0;
    for _ in 0..trials {
        let x0 = DVector::from_column_slice(draw(model.state_dim(), 1).as_slice());
        let u = draw(n_u, h);
        let e = draw(n_y, h);
        let sim = simulate_innovations(model, &x0, &u, &e)?;
        let u_f = DVector::from_column_slice(u.as_slice());
        let e_f = DVector::from_column_slice(e.as_slice());
        let pred = &p * &x0 + &f * &u_f + phi.error_map(n_y, &e_f)?;
        let sim_f = DVector::from_column_slice(sim.as_slice());
        max_abs_error = max_abs_error.max((sim_f - pred).amax());
    }
    Ok(ConsistencyReport {
        trials,
        max_abs_error,
    })
}
