//! Model-based LQG benchmark: steady-state LQR plus steady-state Kalman filter
//! with a static target calculation.

use nalgebra::{DMatrix, DVector};

use super::plant::PlantModel;
use super::runner::{History, Policy};
use crate::error::{dim_err, Result, TpcError};

pub const RICCATI_TOL: f64 = 1e-12;
pub const RICCATI_MAX_ITER: usize = 10_000;

#[derive(Debug, Clone)]
pub struct LqgOracle {
    /// `u = u_ss - K (x_hat - x_ss)`
    pub k_lqr: DMatrix<f64>,
    /// Measurement update gain: `x_post = x_prior + L (y - C x_prior)`.
    pub l_kf: DMatrix<f64>,
    /// Control Riccati solution.
    pub s: DMatrix<f64>,
    /// Prior error covariance of the filter.
    pub p: DMatrix<f64>,
    /// Maps a reference to the stacked steady state `[x_ss; u_ss]`.
    pub target_map: DMatrix<f64>,
    pub plant: PlantModel,
}

fn inverse_or_pinv(m: DMatrix<f64>) -> DMatrix<f64> {
    m.clone()
        .try_inverse()
        .filter(|inv| inv.iter().all(|v| v.is_finite()))
        .unwrap_or_else(|| {
            m.pseudo_inverse(1e-14)
                .unwrap_or_else(|_| DMatrix::zeros(0, 0))
        })
}

fn relative_change(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1.0)
}

/// Control map `S -> Qx + A'SA - A'SB (R + B'SB)^{-1} B'SA`.
pub fn control_riccati_map(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    qx: &DMatrix<f64>,
    r: &DMatrix<f64>,
    s: &DMatrix<f64>,
) -> DMatrix<f64> {
    let bts = b.transpose() * s;
    let gain = inverse_or_pinv(r + &bts * b) * (&bts * a);
    let next = qx + a.transpose() * s * a - a.transpose() * s * b * gain;
    (&next + next.transpose()) * 0.5
}

/// Filter map `P -> A (P - P C' (C P C' + V)^{-1} C P) A' + W`.
pub fn filter_riccati_map(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    w: &DMatrix<f64>,
    v: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> DMatrix<f64> {
    let innov = c * p * c.transpose() + v;
    let l = p * c.transpose() * inverse_or_pinv(innov);
    let post = p - &l * c * p;
    let next = a * post * a.transpose() + w;
    (&next + next.transpose()) * 0.5
}

fn fixed_point(
    what: &str,
    init: DMatrix<f64>,
    map: impl Fn(&DMatrix<f64>) -> DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let mut x = init;
    let mut residual = f64::INFINITY;
    for _ in 0..RICCATI_MAX_ITER {
        let next = map(&x);
        if next.iter().any(|v| !v.is_finite()) {
            break;
        }
        residual = relative_change(&next, &x);
        x = next;
        if residual <= RICCATI_TOL {
            return Ok(x);
        }
    }
    Err(TpcError::NonConvergence {
        what: what.to_string(),
        iterations: RICCATI_MAX_ITER,
        residual,
    })
}

/// Designs the LQR with state weight `C' Qy C` and the steady-state filter.
pub fn design_lqg(plant: &PlantModel, qy: &DMatrix<f64>, ru: &DMatrix<f64>) -> Result<LqgOracle> {
    plant.validate()?;
    if qy.shape() != (plant.n_y(), plant.n_y()) || ru.shape() != (plant.n_u(), plant.n_u()) {
        return Err(dim_err("LQG weights do not match the plant"));
    }
    let (a, b, c) = (&plant.a, &plant.b, &plant.c);
    let qx = c.transpose() * qy * c;
    let s = fixed_point("control Riccati iteration", qx.clone(), |s| {
        control_riccati_map(a, b, &qx, ru, s)
    })?;
    let k_lqr = inverse_or_pinv(ru + b.transpose() * &s * b) * b.transpose() * &s * a;

    let init = plant.w.clone() + DMatrix::identity(plant.n_x(), plant.n_x());
    let p = fixed_point("filter Riccati iteration", init, |p| {
        filter_riccati_map(a, c, &plant.w, &plant.v, p)
    })?;
    let l_kf = &p * c.transpose() * inverse_or_pinv(c * &p * c.transpose() + &plant.v);

    // [A - I, B; C, 0] [x; u] = [0; r]
    let (nx, nu, ny) = (plant.n_x(), plant.n_u(), plant.n_y());
    let mut sys = DMatrix::zeros(nx + ny, nx + nu);
    sys.view_mut((0, 0), (nx, nx))
        .copy_from(&(a - DMatrix::identity(nx, nx)));
    sys.view_mut((0, nx), (nx, nu)).copy_from(b);
    sys.view_mut((nx, 0), (ny, nx)).copy_from(c);
    let pinv = sys
        .pseudo_inverse(1e-12)
        .map_err(|e| TpcError::Singular(format!("target calculation: {e}")))?;
    let target_map = pinv.columns(nx, ny).into_owned();

    Ok(LqgOracle {
        k_lqr,
        l_kf,
        s,
        p,
        target_map,
        plant: plant.clone(),
    })
}

impl LqgOracle {
    /// `(x_ss, u_ss)` for reference `y_r`.
    pub fn target(&self, y_r: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let st = &self.target_map * y_r;
        let nx = self.plant.n_x();
        (
            st.rows(0, nx).into_owned(),
            st.rows(nx, st.len() - nx).into_owned(),
        )
    }

    /// Spectral radius of `A - B K`.
    pub fn closed_loop_radius(&self) -> f64 {
        let acl = &self.plant.a - &self.plant.b * &self.k_lqr;
        acl.complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }
}

/// The LQG benchmark as a closed-loop policy.
#[derive(Debug, Clone)]
pub struct LqgController {
    oracle: LqgOracle,
    prior: DVector<f64>,
}

impl LqgController {
    pub fn new(oracle: LqgOracle) -> Self {
        let n = oracle.plant.n_x();
        LqgController {
            oracle,
            prior: DVector::zeros(n),
        }
    }

    pub fn estimate(&self) -> &DVector<f64> {
        &self.prior
    }

    fn posterior(&self, y: Option<&DVector<f64>>) -> DVector<f64> {
        match y {
            Some(y) => &self.prior + &self.oracle.l_kf * (y - &self.oracle.plant.c * &self.prior),
            None => self.prior.clone(),
        }
    }

    fn input(&self, post: &DVector<f64>, y_r: &DVector<f64>) -> DVector<f64> {
        let (x_ss, u_ss) = self.oracle.target(y_r);
        u_ss - &self.oracle.k_lqr * (post - x_ss)
    }

    /// Measurement update with `y`, control for reference `y_r`, time update.
    pub fn act(&mut self, y: &DVector<f64>, y_r: &DVector<f64>) -> DVector<f64> {
        let post = self.posterior(Some(y));
        let u = self.input(&post, y_r);
        self.prior = &self.oracle.plant.a * &post + &self.oracle.plant.b * &u;
        u
    }
}

impl Policy for LqgController {
    fn decide(&mut self, h: &History) -> Result<DVector<f64>> {
        let post = self.posterior(h.latest_output());
        let y_r = h
            .latest_reference()
            .ok_or_else(|| dim_err("no reference available"))?;
        Ok(self.input(&post, y_r))
    }

    fn record(&mut self, h: &History, u: &DVector<f64>) {
        let post = self.posterior(h.latest_output());
        self.prior = &self.oracle.plant.a * &post + &self.oracle.plant.b * u;
    }

    fn name(&self) -> &str {
        "lqg"
    }
}
