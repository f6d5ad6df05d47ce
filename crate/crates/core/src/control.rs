//! Unconstrained TPC control laws.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Result, TpcError};
use crate::hankel::Dims;
use crate::predictors::Predictor;

/// Per-step quadratic cost `(y - y_r)' Qy (y - y_r) + u' Ru u` over horizon `h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticCost {
    #[serde(with = "crate::io::serde_rows")]
    pub qy: DMatrix<f64>,
    #[serde(with = "crate::io::serde_rows")]
    pub ru: DMatrix<f64>,
    pub h: usize,
}

impl QuadraticCost {
    pub fn new(qy: DMatrix<f64>, ru: DMatrix<f64>, h: usize) -> Result<Self> {
        if !qy.is_square() || !ru.is_square() {
            return Err(dim_err("cost weights must be square"));
        }
        let sym = |m: &DMatrix<f64>| (m - m.transpose()).amax() <= 1e-12 * (1.0 + m.amax());
        if !sym(&qy) || !sym(&ru) {
            return Err(TpcError::Config("cost weights must be symmetric".into()));
        }
        if qy.symmetric_eigenvalues().min() < -1e-12 {
            return Err(TpcError::NotPositiveDefinite(
                "Qy is not positive semidefinite".into(),
            ));
        }
        if ru.clone().cholesky().is_none() {
            return Err(TpcError::NotPositiveDefinite("Ru".into()));
        }
        Ok(Self { qy, ru, h })
    }

    /// `Qy = diag(qy)`, `Ru = diag(ru)`.
    pub fn diagonal(qy: &[f64], ru: &[f64], h: usize) -> Result<Self> {
        Self::new(
            DMatrix::from_diagonal(&DVector::from_column_slice(qy)),
            DMatrix::from_diagonal(&DVector::from_column_slice(ru)),
            h,
        )
    }

    pub fn n_y(&self) -> usize {
        self.qy.nrows()
    }

    pub fn n_u(&self) -> usize {
        self.ru.nrows()
    }

    /// `I_h (x) Qy`
    pub fn q(&self) -> DMatrix<f64> {
        block_diag(&self.qy, self.h)
    }

    /// `I_h (x) Ru`
    pub fn r_bar(&self) -> DMatrix<f64> {
        block_diag(&self.ru, self.h)
    }

    /// Realized cost of one step.
    pub fn stage(&self, y: &DVector<f64>, y_r: &DVector<f64>, u: &DVector<f64>) -> f64 {
        let e = y - y_r;
        (e.transpose() * &self.qy * &e)[(0, 0)] + (u.transpose() * &self.ru * u)[(0, 0)]
    }
}

fn block_diag(b: &DMatrix<f64>, h: usize) -> DMatrix<f64> {
    let (r, c) = b.shape();
    let mut out = DMatrix::zeros(h * r, h * c);
    for i in 0..h {
        out.view_mut((i * r, i * c), (r, c)).copy_from(b);
    }
    out
}

/// Regularizer on the prediction slack `e_f`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum GainMode {
    /// `e_f = 0`: the planned trajectory is the central prediction.
    Delta0,
    /// `lambda ||e_f||^2`. With `input_penalty = false` the input weight is
    /// left out of the block system, as in the published law; with `true`
    /// the full cost is kept and `lambda -> inf` recovers `Delta0`.
    Relaxed { lambda: f64, input_penalty: bool },
}

impl GainMode {
    pub fn relaxed(lambda: f64) -> Self {
        GainMode::Relaxed {
            lambda,
            input_penalty: false,
        }
    }
}

/// Precomputed linear feedback for one predictor and cost.
#[derive(Debug, Clone)]
pub struct TpcGain {
    pub p: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub mode: GainMode,
    pub dims: Dims,
    /// `(F'QF + Rbar)^{-1} F'Q`
    pub g: DMatrix<f64>,
    /// Relaxed mode: `[u_f; e_f] = -relaxed_gain (P z_p - yrf_hat)`.
    relaxed_gain: Option<DMatrix<f64>>,
    q: DMatrix<f64>,
    r_bar: DMatrix<f64>,
}

pub fn make_gain(pred: &Predictor, cost: &QuadraticCost, mode: GainMode) -> Result<TpcGain> {
    make_gain_from(&pred.p, &pred.f, pred.dims, cost, mode)
}

/// [`make_gain`] from raw `P` and `F`.
pub fn make_gain_from(
    p: &DMatrix<f64>,
    f: &DMatrix<f64>,
    dims: Dims,
    cost: &QuadraticCost,
    mode: GainMode,
) -> Result<TpcGain> {
    let Dims { h, n_u, n_y, .. } = dims;
    if cost.h != h || cost.n_u() != n_u || cost.n_y() != n_y {
        return Err(dim_err(format!(
            "cost (h = {}, n_u = {}, n_y = {}) does not match predictor (h = {h}, n_u = {n_u}, n_y = {n_y})",
            cost.h,
            cost.n_u(),
            cost.n_y()
        )));
    }
    if f.shape() != (h * n_y, h * n_u) || p.nrows() != h * n_y {
        return Err(dim_err("P and F do not match the predictor dimensions"));
    }
    let q = cost.q();
    let r_bar = cost.r_bar();
    let ftq = f.transpose() * &q;
    let hess = &ftq * f + &r_bar;
    let chol = hess
        .cholesky()
        .ok_or_else(|| TpcError::NotPositiveDefinite("F'QF + Rbar".into()))?;
    let g = chol.solve(&ftq);

    let relaxed_gain = match mode {
        GainMode::Delta0 => None,
        GainMode::Relaxed {
            lambda,
            input_penalty,
        } => {
            if !(lambda > 0.0 && lambda.is_finite()) {
                return Err(TpcError::Config(format!(
                    "lambda must be positive, got {lambda}"
                )));
            }
            let (nu, ny) = (h * n_u, h * n_y);
            let mut m = DMatrix::zeros(nu + ny, nu + ny);
            let mut top_left = &ftq * f;
            if input_penalty {
                top_left += &r_bar;
            }
            m.view_mut((0, 0), (nu, nu)).copy_from(&top_left);
            m.view_mut((0, nu), (nu, ny)).copy_from(&ftq);
            m.view_mut((nu, 0), (ny, nu)).copy_from(&ftq.transpose());
            let mut br = q.clone();
            for i in 0..ny {
                br[(i, i)] += lambda;
            }
            m.view_mut((nu, nu), (ny, ny)).copy_from(&br);
            let mut rhs = DMatrix::zeros(nu + ny, ny);
            rhs.view_mut((0, 0), (nu, ny)).copy_from(&ftq);
            rhs.view_mut((nu, 0), (ny, ny)).copy_from(&q);
            let chol = m.cholesky().ok_or_else(|| {
                TpcError::Singular("relaxed block system; F may lack full column rank".into())
            })?;
            Some(chol.solve(&rhs))
        }
    };
    Ok(TpcGain {
        p: p.clone(),
        f: f.clone(),
        mode,
        dims,
        g,
        relaxed_gain,
        q,
        r_bar,
    })
}

impl TpcGain {
    fn tracking_error(&self, z_p: &DVector<f64>, yrf_hat: &DVector<f64>) -> Result<DVector<f64>> {
        if z_p.len() != self.p.ncols() || yrf_hat.len() != self.p.nrows() {
            return Err(dim_err(format!(
                "expected z_p of length {} and reference of length {}, got {} and {}",
                self.p.ncols(),
                self.p.nrows(),
                z_p.len(),
                yrf_hat.len()
            )));
        }
        Ok(&self.p * z_p - yrf_hat)
    }

    /// Planned inputs under the gain's mode.
    pub fn control(&self, z_p: &DVector<f64>, yrf_hat: &DVector<f64>) -> Result<DVector<f64>> {
        match self.mode {
            GainMode::Delta0 => control_delta0(self, z_p, yrf_hat),
            GainMode::Relaxed { .. } => control_relaxed(self, z_p, yrf_hat).map(|(u, _)| u),
        }
    }

    /// `Q = I_h (x) Qy`
    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    /// `Rbar = I_h (x) Ru`
    pub fn r_bar(&self) -> &DMatrix<f64> {
        &self.r_bar
    }
}

/// `u_f = -G (P z_p - yrf_hat)`.
pub fn control_delta0(
    g: &TpcGain,
    z_p: &DVector<f64>,
    yrf_hat: &DVector<f64>,
) -> Result<DVector<f64>> {
    let r = g.tracking_error(z_p, yrf_hat)?;
    Ok(-(&g.g * r))
}

/// Solves the relaxed block system; returns `(u_f, e_f)`.
pub fn control_relaxed(
    g: &TpcGain,
    z_p: &DVector<f64>,
    yrf_hat: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let gain = g
        .relaxed_gain
        .as_ref()
        .ok_or_else(|| TpcError::Config("gain was not built in relaxed mode".into()))?;
    let r = g.tracking_error(z_p, yrf_hat)?;
    let sol = -(gain * r);
    let nu = g.dims.h * g.dims.n_u;
    Ok((
        sol.rows(0, nu).into_owned(),
        sol.rows(nu, sol.len() - nu).into_owned(),
    ))
}

/// Persistence preview: `h` stacked copies of the last reference.
pub fn reference_preview(y_r_prev: &DVector<f64>, h: usize) -> DVector<f64> {
    let n = y_r_prev.len();
    DVector::from_fn(h * n, |i, _| y_r_prev[i % n])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar_gain(f: f64, mode: GainMode) -> TpcGain {
        let cost = QuadraticCost::diagonal(&[1.0], &[1.0], 1).unwrap();
        let p = DMatrix::from_element(1, 2, 1.0);
        let fm = DMatrix::from_element(1, 1, f);
        make_gain_from(&p, &fm, Dims::new(1, 1, 1, 1), &cost, mode).unwrap()
    }

    #[test]
    fn scalar_gain_is_half() {
        let g = scalar_gain(1.0, GainMode::Delta0);
        assert_relative_eq!(g.g[(0, 0)], 0.5, epsilon = 1e-15);
        let z = DVector::from_vec(vec![2.0, 1.0]);
        let u = control_delta0(&g, &z, &DVector::from_element(1, 1.0)).unwrap();
        assert_relative_eq!(u[0], -1.0, epsilon = 1e-15);
    }

    #[test]
    fn zero_f_gives_zero_gain() {
        let g = scalar_gain(0.0, GainMode::Delta0);
        assert_eq!(g.g[(0, 0)], 0.0);
    }

    #[test]
    fn zero_tracking_error_gives_zero_input() {
        let g = scalar_gain(0.7, GainMode::relaxed(0.1));
        let z = DVector::from_vec(vec![0.3, 0.4]);
        let y = DVector::from_element(1, 0.7);
        assert_eq!(control_delta0(&g, &z, &y).unwrap()[0], 0.0);
        let (u, e) = control_relaxed(&g, &z, &y).unwrap();
        assert_eq!((u[0], e[0]), (0.0, 0.0));
    }

    #[test]
    fn relaxed_needs_full_rank_f() {
        let cost = QuadraticCost::diagonal(&[1.0], &[1.0], 1).unwrap();
        let p = DMatrix::from_element(1, 2, 1.0);
        let f = DMatrix::zeros(1, 1);
        let err = make_gain_from(&p, &f, Dims::new(1, 1, 1, 1), &cost, GainMode::relaxed(1.0));
        assert!(matches!(err, Err(TpcError::Singular(_))));
    }

    #[test]
    fn preview_examples() {
        let p = reference_preview(&DVector::from_vec(vec![3.0, 0.0]), 2);
        assert_eq!(p.as_slice(), &[3.0, 0.0, 3.0, 0.0]);
        let one = reference_preview(&DVector::from_vec(vec![1.5, -2.0]), 1);
        assert_eq!(one.as_slice(), &[1.5, -2.0]);
        assert_eq!(reference_preview(&DVector::zeros(2), 4).amax(), 0.0);
    }

    #[test]
    fn cost_validation() {
        assert!(QuadraticCost::diagonal(&[1.0, -1.0], &[1.0], 2).is_err());
        assert!(QuadraticCost::diagonal(&[1.0, 0.0], &[0.0], 2).is_err());
        let c = QuadraticCost::diagonal(&[1000.0, 10.0], &[1.0], 3).unwrap();
        assert_eq!(c.q().nrows(), 6);
        let s = c.stage(
            &DVector::from_vec(vec![1.0, 1.0]),
            &DVector::from_vec(vec![0.0, 0.0]),
            &DVector::from_element(1, 2.0),
        );
        assert_relative_eq!(s, 1014.0);
    }
}
