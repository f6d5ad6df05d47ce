//! Identification of trajectory predictors `y_f = P z_p + F u_f + e_f`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::decomp::{self, blt_project, hstack, is_blt, ls_fit_named, right_div_lower, vstack};
use crate::error::{dim_err, Result, TpcError};
use crate::hankel::{
    build_hankel, has_full_row_rank, min_examples, numerical_rank, param_count, Dims, HankelSet,
    PredictorKind, TrajectoryData, DEFAULT_RANK_TOL,
};
use crate::statespace;

/// Tolerance used when checking the block-lower-triangular structure of `F`.
pub const CAUSALITY_TOL: f64 = 1e-12;

/// A fitted trajectory predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    /// `h n_y x m n_z`
    pub p: DMatrix<f64>,
    /// `h n_y x h n_u`
    pub f: DMatrix<f64>,
    pub kind: PredictorKind,
    pub dims: Dims,
    /// `n_y x n_y` one-step-ahead error covariance estimate.
    pub onestep_error_cov: DMatrix<f64>,
    /// `h n_y x h n_y` trajectory error covariance estimate.
    pub traj_error_cov: DMatrix<f64>,
}

/// Raw transient-form matrices: `y_f = Phi_p z_p + Phi_u u_f + Phi_y y_f + eps_f`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiTriple {
    pub phi_p: DMatrix<f64>,
    /// Block lower triangular.
    pub phi_u: DMatrix<f64>,
    /// Strictly block lower triangular.
    pub phi_y: DMatrix<f64>,
}

impl PhiTriple {
    /// Converts to `(P, F) = (I - Phi_y)^{-1} (Phi_p, Phi_u)`.
    pub fn to_trajectory(&self, n_y: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let p = decomp::solve_unit_blt(&self.phi_y, n_y, &self.phi_p)?;
        let f = decomp::solve_unit_blt(&self.phi_y, n_y, &self.phi_u)?;
        Ok((p, f))
    }

    /// `(I - Phi_y)^{-1} eps_f`: maps one-step innovations to trajectory errors.
    pub fn error_map(&self, n_y: usize, eps: &DVector<f64>) -> Result<DVector<f64>> {
        let rhs = DMatrix::from_column_slice(eps.len(), 1, eps.as_slice());
        let x = decomp::solve_unit_blt(&self.phi_y, n_y, &rhs)?;
        Ok(DVector::from_column_slice(x.as_slice()))
    }
}

/// Denominator used in error covariance estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CovDenominator {
    /// Number of examples.
    #[default]
    Examples,
    /// Number of examples minus the number of estimated parameters.
    ExamplesMinusParams,
}

/// One-step model `y(t) = sum_k A_k y(t-k) + sum_k B_k u(t-k) + e(t)` read off
/// the first block row of a causal predictor.
#[derive(Debug, Clone)]
pub struct ArxModel {
    /// `output_lags[k]` multiplies `y(t - k - 1)`, `k = 0..m`.
    pub output_lags: Vec<DMatrix<f64>>,
    /// `input_lags[k]` multiplies `u(t - k)`, `k = 0..=m`.
    pub input_lags: Vec<DMatrix<f64>>,
}

impl ArxModel {
    /// One-step prediction of `y(t)` from `u(t-m..=t)` and `y(t-m..t)`,
    /// both ordered oldest first.
    pub fn predict(&self, inputs: &[DVector<f64>], outputs: &[DVector<f64>]) -> DVector<f64> {
        let m = self.output_lags.len();
        let n_y = self.output_lags[0].nrows();
        let mut y = DVector::zeros(n_y);
        for k in 0..m {
            y += &self.output_lags[k] * &outputs[m - 1 - k];
        }
        for k in 0..=m {
            y += &self.input_lags[k] * &inputs[m - k];
        }
        y
    }
}

impl Predictor {
    pub(crate) fn from_parts(
        p: DMatrix<f64>,
        f: DMatrix<f64>,
        kind: PredictorKind,
        hs: &HankelSet,
    ) -> Result<Self> {
        let dims = hs.dims;
        let mut pred = Predictor {
            p,
            f,
            kind,
            dims,
            onestep_error_cov: DMatrix::zeros(dims.n_y, dims.n_y),
            traj_error_cov: DMatrix::zeros(dims.h * dims.n_y, dims.h * dims.n_y),
        };
        let (one, traj) = error_covariance(&pred, hs, CovDenominator::Examples)?;
        pred.onestep_error_cov = one;
        pred.traj_error_cov = traj;
        Ok(pred)
    }

    /// Whether `F` is block lower triangular.
    pub fn is_causal(&self) -> bool {
        is_blt(&self.f, self.dims.n_y, self.dims.n_u, false, CAUSALITY_TOL).unwrap_or(false)
    }

    pub fn param_count(&self) -> usize {
        param_count(
            self.kind,
            self.dims.m,
            self.dims.h,
            self.dims.n_u,
            self.dims.n_y,
        )
    }

    /// First block row of `P`.
    pub fn p1(&self) -> DMatrix<f64> {
        self.p.rows(0, self.dims.n_y).into_owned()
    }

    /// Top-left block of `F`.
    pub fn f11(&self) -> DMatrix<f64> {
        self.f
            .view((0, 0), (self.dims.n_y, self.dims.n_u))
            .into_owned()
    }

    /// Decomposes the one-step predictor into ARX coefficients. Fails for a
    /// predictor whose first block row of `F` has nonzero off-diagonal blocks.
    pub fn onestep_arx(&self) -> Result<ArxModel> {
        let Dims { m, h, n_u, n_y } = self.dims;
        let n_z = n_u + n_y;
        let tail = self.f.view((0, n_u), (n_y, (h - 1) * n_u));
        if h > 1 && tail.amax() > CAUSALITY_TOL {
            return Err(TpcError::Dimension(
                "first block row of F has future-input coefficients; predictor is not causal"
                    .into(),
            ));
        }
        let p1 = self.p1();
        let mut output_lags = Vec::with_capacity(m);
        let mut input_lags = Vec::with_capacity(m + 1);
        input_lags.push(self.f11());
        // block j of z_p is z(t - m + j); lag = m - j
        for lag in 1..=m {
            let j = m - lag;
            input_lags.push(p1.view((0, j * n_z), (n_y, n_u)).into_owned());
            output_lags.push(p1.view((0, j * n_z + n_u), (n_y, n_y)).into_owned());
        }
        Ok(ArxModel {
            output_lags,
            input_lags,
        })
    }
}

/// `P z_p + F u_f`.
pub fn predict(pred: &Predictor, z_p: &DVector<f64>, u_f: &DVector<f64>) -> Result<DVector<f64>> {
    if z_p.len() != pred.p.ncols() || u_f.len() != pred.f.ncols() {
        return Err(dim_err(format!(
            "predict expects z_p of length {} and u_f of length {}, got {} and {}",
            pred.p.ncols(),
            pred.f.ncols(),
            z_p.len(),
            u_f.len()
        )));
    }
    Ok(&pred.p * z_p + &pred.f * u_f)
}

fn check_dims(pred: &Predictor, hs: &HankelSet) -> Result<()> {
    if pred.dims != hs.dims {
        return Err(dim_err(format!(
            "predictor dims {:?} do not match data dims {:?}",
            pred.dims, hs.dims
        )));
    }
    Ok(())
}

/// Error covariance estimates on the data in `hs`.
///
/// The state-space predictor is scored on its own one-step set (`d - m`
/// examples); the others on the first block row of the trajectory set.
pub fn error_covariance(
    pred: &Predictor,
    hs: &HankelSet,
    denominator: CovDenominator,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_dims(pred, hs)?;
    let k = pred.param_count();
    let denom = |n: usize| -> Result<f64> {
        match denominator {
            CovDenominator::Examples => Ok(n as f64),
            CovDenominator::ExamplesMinusParams if n > k => Ok((n - k) as f64),
            CovDenominator::ExamplesMinusParams => Err(TpcError::Config(format!(
                "covariance denominator n - k = {n} - {k} is not positive"
            ))),
        }
    };
    let (p1, f11) = (pred.p1(), pred.f11());
    let onestep_resid = if pred.kind == PredictorKind::StateSpace {
        &hs.y1 - &p1 * &hs.z1 - &f11 * &hs.u1
    } else {
        hs.y_block(0) - &p1 * &hs.z - &f11 * hs.u_block(0)
    };
    let n_one = onestep_resid.ncols();
    let onestep = &onestep_resid * onestep_resid.transpose() / denom(n_one)?;

    let traj_resid = trajectory_residual(pred, hs);
    let traj = &traj_resid * traj_resid.transpose() / denom(hs.n)?;
    Ok((onestep, traj))
}

/// `Y - P Z - F U`.
pub fn trajectory_residual(pred: &Predictor, hs: &HankelSet) -> DMatrix<f64> {
    &hs.y - &pred.p * &hs.z - &pred.f * &hs.u
}

/// Per-step RMSE on held-out data.
#[derive(Debug, Clone)]
pub struct RmseReport {
    /// `h x n_y`: entry `(i, k)` is the RMSE of output `k`, `i + 1` steps ahead.
    pub per_step: DMatrix<f64>,
    /// Flat average over all `h n_y` scalar predictors.
    pub mean: f64,
}

pub fn test_rmse(pred: &Predictor, test: &HankelSet) -> Result<RmseReport> {
    check_dims(pred, test)?;
    let resid = trajectory_residual(pred, test);
    let Dims { h, n_y, .. } = pred.dims;
    let n = resid.ncols() as f64;
    let per_step = DMatrix::from_fn(h, n_y, |i, k| {
        (resid.row(i * n_y + k).norm_squared() / n).sqrt()
    });
    let mean = per_step.mean();
    Ok(RmseReport { per_step, mean })
}

fn ensure_columns(kind: PredictorKind, hs: &HankelSet, rows: usize, columns: usize) -> Result<()> {
    if columns < rows {
        let Dims { m, h, n_u, n_y } = hs.dims;
        return Err(TpcError::InsufficientData {
            context: format!("{kind} predictor with m = {m}, h = {h}"),
            needed: min_examples(kind, m, h, n_u, n_y),
            got: hs.n + m + h - 1,
        });
    }
    Ok(())
}

fn split_pf(theta: &DMatrix<f64>, dims: &Dims) -> (DMatrix<f64>, DMatrix<f64>) {
    let r = dims.past_len();
    (
        theta.columns(0, r).into_owned(),
        theta.columns(r, theta.ncols() - r).into_owned(),
    )
}

/// Subspace predictor `[P F] = Y [Z; U]^+`.
pub fn fit_subspace(hs: &HankelSet) -> Result<Predictor> {
    let x = vstack(&[&hs.z, &hs.u]);
    ensure_columns(PredictorKind::Subspace, hs, x.nrows(), x.ncols())?;
    let theta = ls_fit_named(&hs.y, &x, "[Z; U]")?;
    let (p, f) = split_pf(&theta, &hs.dims);
    Predictor::from_parts(p, f, PredictorKind::Subspace, hs)
}

fn lq_checked(kind: PredictorKind, hs: &HankelSet) -> Result<decomp::LqFactors> {
    let x = vstack(&[&hs.z, &hs.u]);
    ensure_columns(kind, hs, x.nrows(), x.ncols())?;
    if !has_full_row_rank(&x, DEFAULT_RANK_TOL) {
        return Err(TpcError::RankDeficient {
            matrix: "[Z; U]".into(),
            rank: numerical_rank(&x, DEFAULT_RANK_TOL),
            rows: x.nrows(),
        });
    }
    decomp::lq_factors(&hs.z, &hs.u, &hs.y)
}

fn p_from_lq(lq: &decomp::LqFactors, f: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    right_div_lower(&(&lq.l31 - f * &lq.l21), &lq.l11, "L11")
}

/// Subspace predictor computed from the LQ factors: `F = L32 L22^{-1}`.
pub fn fit_subspace_lq(hs: &HankelSet) -> Result<Predictor> {
    let lq = lq_checked(PredictorKind::Subspace, hs)?;
    let f = right_div_lower(&lq.l32, &lq.l22, "L22")?;
    let p = p_from_lq(&lq, &f)?;
    Predictor::from_parts(p, f, PredictorKind::Subspace, hs)
}

/// Multistep predictor: `F = BLT(L32) L22^{-1}`.
pub fn fit_multistep(hs: &HankelSet) -> Result<Predictor> {
    let Dims { n_u, n_y, .. } = hs.dims;
    let lq = lq_checked(PredictorKind::Multistep, hs)?;
    let causal = blt_project(&lq.l32, n_y, n_u, false)?;
    // the product is BLT in exact arithmetic; projecting again clears roundoff
    let f = blt_project(&right_div_lower(&causal, &lq.l22, "L22")?, n_y, n_u, false)?;
    let p = p_from_lq(&lq, &f)?;
    Predictor::from_parts(p, f, PredictorKind::Multistep, hs)
}

/// Transient predictor, fitted one step-ahead row at a time.
pub fn fit_transient(hs: &HankelSet) -> Result<Predictor> {
    let phi = fit_transient_phi(hs)?;
    let (p, f) = phi.to_trajectory(hs.dims.n_y)?;
    Predictor::from_parts(p, f, PredictorKind::Transient, hs)
}

/// Per-step regressions `Y_i ~ [Z; U_{1:i}; Y_{1:i-1}]`.
pub fn fit_transient_phi(hs: &HankelSet) -> Result<PhiTriple> {
    let Dims { h, n_u, n_y, .. } = hs.dims;
    let r = hs.dims.past_len();
    let worst = r + h * n_u + (h - 1) * n_y;
    ensure_columns(PredictorKind::Transient, hs, worst, hs.n)?;

    let mut phi_p = DMatrix::zeros(h * n_y, r);
    let mut phi_u = DMatrix::zeros(h * n_y, h * n_u);
    let mut phi_y = DMatrix::zeros(h * n_y, h * n_y);
    for i in 0..h {
        let u_part = hs.u.rows(0, (i + 1) * n_u).into_owned();
        let y_part = hs.y.rows(0, i * n_y).into_owned();
        let x = vstack(&[&hs.z, &u_part, &y_part]);
        let target = hs.y_block(i);
        let theta = ls_fit_named(&target, &x, &format!("transient step {} regressor", i + 1))?;
        phi_p.rows_mut(i * n_y, n_y).copy_from(&theta.columns(0, r));
        phi_u
            .view_mut((i * n_y, 0), (n_y, (i + 1) * n_u))
            .copy_from(&theta.columns(r, (i + 1) * n_u));
        if i > 0 {
            phi_y
                .view_mut((i * n_y, 0), (n_y, i * n_y))
                .copy_from(&theta.columns(r + (i + 1) * n_u, i * n_y));
        }
    }
    Ok(PhiTriple {
        phi_p,
        phi_u,
        phi_y,
    })
}

/// Fixed-length predictor with Toeplitz structure, fitted by sequential
/// residual regressions.
pub fn fit_fixed_length(hs: &HankelSet) -> Result<Predictor> {
    let phi = fit_fixed_length_phi(hs)?;
    let (p, f) = phi.to_trajectory(hs.dims.n_y)?;
    Predictor::from_parts(p, f, PredictorKind::FixedLength, hs)
}

pub fn fit_fixed_length_phi(hs: &HankelSet) -> Result<PhiTriple> {
    let Dims { m, h, n_u, n_y } = hs.dims;
    let n_z = n_u + n_y;
    let r = hs.dims.past_len();
    ensure_columns(PredictorKind::FixedLength, hs, r + n_u, hs.n)?;

    // Stage 1: y(t) ~ [phi_p_1 .. phi_p_m] z_p(t) + phi_u_1 u(t)
    let u0 = hs.u_block(0);
    let y0 = hs.y_block(0);
    let stage1 = ls_fit_named(
        &y0,
        &vstack(&[&hs.z, &u0]),
        "fixed-length stage 1 regressor",
    )?;
    let p_row = stage1.columns(0, r).into_owned();
    let mut phi_u_blocks = vec![stage1.columns(r, n_u).into_owned()];
    let mut phi_y_blocks: Vec<DMatrix<f64>> = Vec::new();

    // Block row i (zero-based) of Phi_p is the first row shifted right by i
    // blocks; entries shifted past the end drop out.
    let shifted_p = |i: usize| -> DMatrix<f64> {
        let mut row = DMatrix::zeros(n_y, r);
        if i < m {
            let keep = (m - i) * n_z;
            row.columns_mut(i * n_z, keep)
                .copy_from(&p_row.columns(0, keep));
        }
        row
    };

    let stage_x = vstack(&[&u0, &y0]);
    for i in 1..h {
        let mut resid = hs.y_block(i) - shifted_p(i) * &hs.z;
        // u(t + j) for j >= 1 uses phi_u_{i - j + 1}, already estimated
        for j in 1..=i {
            resid -= &phi_u_blocks[i - j] * hs.u_block(j);
        }
        // y(t + j) for j >= 1 uses phi_y_{i - j}, already estimated
        for j in 1..i {
            resid -= &phi_y_blocks[i - j - 1] * hs.y_block(j);
        }
        let theta = ls_fit_named(
            &resid,
            &stage_x,
            &format!("fixed-length stage {} regressor", i + 1),
        )?;
        phi_u_blocks.push(theta.columns(0, n_u).into_owned());
        phi_y_blocks.push(theta.columns(n_u, n_y).into_owned());
    }

    let mut phi_p = DMatrix::zeros(h * n_y, r);
    let mut phi_u = DMatrix::zeros(h * n_y, h * n_u);
    let mut phi_y = DMatrix::zeros(h * n_y, h * n_y);
    for i in 0..h {
        phi_p.rows_mut(i * n_y, n_y).copy_from(&shifted_p(i));
        for j in 0..=i {
            phi_u
                .view_mut((i * n_y, j * n_u), (n_y, n_u))
                .copy_from(&phi_u_blocks[i - j]);
        }
        for j in 0..i {
            phi_y
                .view_mut((i * n_y, j * n_y), (n_y, n_y))
                .copy_from(&phi_y_blocks[i - j - 1]);
        }
    }
    Ok(PhiTriple {
        phi_p,
        phi_u,
        phi_y,
    })
}

/// Fits any of the five predictor kinds.
pub fn fit_predictor(kind: PredictorKind, hs: &HankelSet) -> Result<Predictor> {
    match kind {
        PredictorKind::Subspace => fit_subspace(hs),
        PredictorKind::Multistep => fit_multistep(hs),
        PredictorKind::Transient => fit_transient(hs),
        PredictorKind::FixedLength => fit_fixed_length(hs),
        PredictorKind::StateSpace => statespace::fit_statespace(hs).map(|(p, _)| p),
    }
}

/// Parameters that scalar output row `i` (zero-based step ahead) depends on.
/// Used as the AIC complexity term. Fixed-length rows count all of `phi_p`
/// because later rows see it through the `phi_y` recursion.
pub fn aic_row_params(kind: PredictorKind, dims: &Dims, i: usize) -> usize {
    let r = dims.past_len();
    match kind {
        PredictorKind::Subspace => r + dims.h * dims.n_u,
        PredictorKind::Multistep => r + (i + 1) * dims.n_u,
        PredictorKind::Transient | PredictorKind::FixedLength => {
            r + (i + 1) * dims.n_u + i * dims.n_y
        }
        PredictorKind::StateSpace => r + dims.n_u,
    }
}

/// AIC record for one candidate memory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AicEntry {
    pub m: usize,
    /// Row-averaged AIC; `None` when the candidate could not be fitted.
    pub aic: Option<f64>,
    /// Examples per row used in the comparison.
    pub examples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Result of memory selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemorySelection {
    pub m: usize,
    pub table: Vec<AicEntry>,
}

/// Row-averaged AIC `n ln(RSS/n) + 2 k_row` of a fitted predictor on `hs`.
pub fn average_aic(pred: &Predictor, hs: &HankelSet) -> f64 {
    let resid = trajectory_residual(pred, hs);
    let n = resid.ncols() as f64;
    let Dims { h, n_y, .. } = pred.dims;
    let mut total = 0.0;
    for i in 0..h {
        let k = aic_row_params(pred.kind, &pred.dims, i) as f64;
        for o in 0..n_y {
            let rss = resid.row(i * n_y + o).norm_squared();
            total += n * (rss / n).max(f64::MIN_POSITIVE).ln() + 2.0 * k;
        }
    }
    total / (h * n_y) as f64
}

/// Chooses the memory minimizing the row-averaged AIC.
///
/// All feasible candidates are scored on the same examples: the data are
/// trimmed at the front so every candidate sees `d - m_max - h + 1` columns.
/// Ties go to the smaller memory.
pub fn select_memory(
    data: &TrajectoryData,
    kind: PredictorKind,
    h: usize,
    candidates: &[usize],
) -> Result<MemorySelection> {
    let mut cands: Vec<usize> = candidates.iter().copied().filter(|&m| m > 0).collect();
    cands.sort_unstable();
    cands.dedup();
    if cands.is_empty() {
        return Err(TpcError::Config("no positive memory candidates".into()));
    }
    let d = data.len();
    let (n_u, n_y) = (data.n_u(), data.n_y());
    let feasible: Vec<usize> = cands
        .iter()
        .copied()
        .filter(|&m| d >= min_examples(kind, m, h, n_u, n_y))
        .collect();
    let Some(&m_ref) = feasible.last() else {
        let m = cands[0];
        return Err(TpcError::InsufficientData {
            context: format!("{kind} predictor with m = {m}, h = {h}"),
            needed: min_examples(kind, m, h, n_u, n_y),
            got: d,
        });
    };

    let mut table = Vec::with_capacity(cands.len());
    let mut best: Option<(usize, f64)> = None;
    for &m in &cands {
        if !feasible.contains(&m) {
            table.push(AicEntry {
                m,
                aic: None,
                examples: 0,
                note: Some(format!(
                    "needs d >= {}, have {d}",
                    min_examples(kind, m, h, n_u, n_y)
                )),
            });
            continue;
        }
        let scored = data
            .skip(m_ref - m)
            .and_then(|trimmed| build_hankel(&trimmed, m, h))
            .and_then(|hs| fit_predictor(kind, &hs).map(|p| (average_aic(&p, &hs), hs.n)));
        match scored {
            Ok((aic, n)) => {
                if best.is_none_or(|(_, b)| aic < b) {
                    best = Some((m, aic));
                }
                table.push(AicEntry {
                    m,
                    aic: Some(aic),
                    examples: n,
                    note: None,
                });
            }
            Err(e) => {
                log::warn!("memory candidate m = {m} skipped: {e}");
                table.push(AicEntry {
                    m,
                    aic: None,
                    examples: 0,
                    note: Some(e.to_string()),
                });
            }
        }
    }
    match best {
        Some((m, _)) => Ok(MemorySelection { m, table }),
        None => Err(TpcError::RankDeficient {
            matrix: format!("{kind} regressors for every memory candidate"),
            rank: 0,
            rows: 0,
        }),
    }
}

/// Selects the memory by AIC, then fits on the full data.
pub fn identify(
    data: &TrajectoryData,
    kind: PredictorKind,
    h: usize,
    candidates: &[usize],
) -> Result<(Predictor, MemorySelection)> {
    let sel = select_memory(data, kind, h, candidates)?;
    let hs = build_hankel(data, sel.m, h)?;
    let pred = fit_predictor(kind, &hs)?;
    Ok((pred, sel))
}

/// Builds `[P F]` for tests and diagnostics.
pub fn stacked_gain(pred: &Predictor) -> DMatrix<f64> {
    hstack(&[&pred.p, &pred.f])
}
