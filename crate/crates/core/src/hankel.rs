//! Trajectory data, Hankel data matrices and predictor sizing.
//!
//! Time is indexed from zero internally. A Hankel column `j` is anchored at
//! sample `a = m + j`: its past window holds samples `a - m .. a` and its
//! future window holds samples `a .. a + h`. In the one-based notation used in
//! the literature column 1 corresponds to `t = m + 1`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Result, TpcError};

/// Relative singular value threshold used by rank checks.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// How a training trajectory was gathered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataLabel {
    OpenLoop,
    ClosedLoop,
}

impl DataLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            DataLabel::OpenLoop => "open",
            DataLabel::ClosedLoop => "closed",
        }
    }
}

impl fmt::Display for DataLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DataLabel {
    type Err = TpcError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "open" | "open_loop" | "open-loop" => Ok(DataLabel::OpenLoop),
            "closed" | "closed_loop" | "closed-loop" => Ok(DataLabel::ClosedLoop),
            other => Err(TpcError::Config(format!(
                "unknown training mode `{other}` (expected open or closed)"
            ))),
        }
    }
}

/// A single recorded input/output run, one column per time step.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryData {
    inputs: DMatrix<f64>,
    outputs: DMatrix<f64>,
    label: DataLabel,
}

impl TrajectoryData {
    /// `inputs` is `n_u x d`, `outputs` is `n_y x d`.
    pub fn new(inputs: DMatrix<f64>, outputs: DMatrix<f64>, label: DataLabel) -> Result<Self> {
        if inputs.ncols() != outputs.ncols() {
            return Err(dim_err(format!(
                "inputs have {} samples but outputs have {}",
                inputs.ncols(),
                outputs.ncols()
            )));
        }
        if inputs.ncols() == 0 {
            return Err(dim_err("trajectory must contain at least one sample"));
        }
        if inputs.nrows() == 0 || outputs.nrows() == 0 {
            return Err(dim_err("input and output dimensions must be positive"));
        }
        Ok(Self {
            inputs,
            outputs,
            label,
        })
    }

    /// Builds a trajectory from per-step vectors.
    pub fn from_samples(
        inputs: &[DVector<f64>],
        outputs: &[DVector<f64>],
        label: DataLabel,
    ) -> Result<Self> {
        if inputs.is_empty() || inputs.len() != outputs.len() {
            return Err(dim_err(format!(
                "need equal, nonzero sample counts (got {} inputs, {} outputs)",
                inputs.len(),
                outputs.len()
            )));
        }
        let n_u = inputs[0].len();
        let n_y = outputs[0].len();
        if inputs.iter().any(|u| u.len() != n_u) || outputs.iter().any(|y| y.len() != n_y) {
            return Err(dim_err("all samples of a field must share one dimension"));
        }
        let u = DMatrix::from_fn(n_u, inputs.len(), |r, c| inputs[c][r]);
        let y = DMatrix::from_fn(n_y, outputs.len(), |r, c| outputs[c][r]);
        Self::new(u, y, label)
    }

    pub fn len(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_u(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn n_y(&self) -> usize {
        self.outputs.nrows()
    }

    pub fn label(&self) -> DataLabel {
        self.label
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn outputs(&self) -> &DMatrix<f64> {
        &self.outputs
    }

    /// The first `d` samples.
    pub fn prefix(&self, d: usize) -> Result<Self> {
        if d == 0 || d > self.len() {
            return Err(dim_err(format!(
                "prefix length {d} outside 1..={}",
                self.len()
            )));
        }
        Self::new(
            self.inputs.columns(0, d).into_owned(),
            self.outputs.columns(0, d).into_owned(),
            self.label,
        )
    }

    /// Drops the first `k` samples.
    pub fn skip(&self, k: usize) -> Result<Self> {
        if k >= self.len() {
            return Err(dim_err(format!(
                "cannot skip {k} of {} samples",
                self.len()
            )));
        }
        let d = self.len() - k;
        Self::new(
            self.inputs.columns(k, d).into_owned(),
            self.outputs.columns(k, d).into_owned(),
            self.label,
        )
    }

    /// Stacked past window `(u(a-m), y(a-m), ..., u(a-1), y(a-1))` ending
    /// just before sample `a`.
    pub fn past_window(&self, a: usize, m: usize) -> DVector<f64> {
        let n_z = self.n_u() + self.n_y();
        let mut z = DVector::zeros(m * n_z);
        for k in 0..m {
            let s = a - m + k;
            let off = k * n_z;
            z.rows_mut(off, self.n_u())
                .copy_from(&self.inputs.column(s));
            z.rows_mut(off + self.n_u(), self.n_y())
                .copy_from(&self.outputs.column(s));
        }
        z
    }
}

/// Sizes shared by Hankel sets and predictors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub m: usize,
    pub h: usize,
    pub n_u: usize,
    pub n_y: usize,
}

impl Dims {
    pub fn new(m: usize, h: usize, n_u: usize, n_y: usize) -> Self {
        Self { m, h, n_u, n_y }
    }

    pub fn n_z(&self) -> usize {
        self.n_u + self.n_y
    }

    /// Length of the stacked past window `z_p`.
    pub fn past_len(&self) -> usize {
        self.m * self.n_z()
    }
}

/// Hankel data matrices for memory `m` and horizon `h`.
#[derive(Debug, Clone)]
pub struct HankelSet {
    /// `m n_z x n` past windows.
    pub z: DMatrix<f64>,
    /// `h n_u x n` future inputs.
    pub u: DMatrix<f64>,
    /// `h n_y x n` future outputs.
    pub y: DMatrix<f64>,
    /// `m n_z x n1` past windows for the one-step set.
    pub z1: DMatrix<f64>,
    /// `n_u x n1`
    pub u1: DMatrix<f64>,
    /// `n_y x n1`
    pub y1: DMatrix<f64>,
    pub dims: Dims,
    /// Number of trajectory examples, `d - m - h + 1`.
    pub n: usize,
    /// Number of one-step examples, `d - m`.
    pub n1: usize,
}

impl HankelSet {
    /// Block row `i` (zero-based) of the future inputs.
    pub fn u_block(&self, i: usize) -> DMatrix<f64> {
        self.u.rows(i * self.dims.n_u, self.dims.n_u).into_owned()
    }

    /// Block row `i` (zero-based) of the future outputs.
    pub fn y_block(&self, i: usize) -> DMatrix<f64> {
        self.y.rows(i * self.dims.n_y, self.dims.n_y).into_owned()
    }
}

/// Builds the Hankel data matrices. Requires `d >= m + h`.
pub fn build_hankel(data: &TrajectoryData, m: usize, h: usize) -> Result<HankelSet> {
    if m == 0 || h == 0 {
        return Err(TpcError::Config(format!(
            "memory and horizon must be positive (m = {m}, h = {h})"
        )));
    }
    let d = data.len();
    if d < m + h {
        return Err(TpcError::InsufficientData {
            context: format!("Hankel matrices with m = {m}, h = {h}"),
            needed: m + h,
            got: d,
        });
    }
    let dims = Dims::new(m, h, data.n_u(), data.n_y());
    let (n_u, n_y) = (dims.n_u, dims.n_y);
    let n = d - m - h + 1;
    let n1 = d - m;

    let mut z1 = DMatrix::zeros(dims.past_len(), n1);
    for j in 0..n1 {
        z1.set_column(j, &data.past_window(m + j, m));
    }
    let z = z1.columns(0, n).into_owned();
    let u1 = data.inputs.columns(m, n1).into_owned();
    let y1 = data.outputs.columns(m, n1).into_owned();

    let mut u = DMatrix::zeros(h * n_u, n);
    let mut y = DMatrix::zeros(h * n_y, n);
    for j in 0..n {
        for i in 0..h {
            let s = m + j + i;
            u.view_mut((i * n_u, j), (n_u, 1))
                .copy_from(&data.inputs.column(s));
            y.view_mut((i * n_y, j), (n_y, 1))
                .copy_from(&data.outputs.column(s));
        }
    }

    Ok(HankelSet {
        z,
        u,
        y,
        z1,
        u1,
        y1,
        dims,
        n,
        n1,
    })
}

/// The five trajectory predictor families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    Subspace,
    Multistep,
    Transient,
    FixedLength,
    StateSpace,
}

impl PredictorKind {
    pub const ALL: [PredictorKind; 5] = [
        PredictorKind::Subspace,
        PredictorKind::Multistep,
        PredictorKind::Transient,
        PredictorKind::FixedLength,
        PredictorKind::StateSpace,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PredictorKind::Subspace => "subspace",
            PredictorKind::Multistep => "multistep",
            PredictorKind::Transient => "transient",
            PredictorKind::FixedLength => "fixed_length",
            PredictorKind::StateSpace => "state_space",
        }
    }

    /// Whether the fitted `F` is block lower triangular by construction.
    pub fn is_causal(&self) -> bool {
        !matches!(self, PredictorKind::Subspace)
    }
}

impl fmt::Display for PredictorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PredictorKind {
    type Err = TpcError;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace(['-', ' '], "_");
        match norm.as_str() {
            "subspace" | "sbs" => Ok(PredictorKind::Subspace),
            "multistep" | "mlt" => Ok(PredictorKind::Multistep),
            "transient" | "trn" => Ok(PredictorKind::Transient),
            "fixed_length" | "fixedlength" | "fxl" => Ok(PredictorKind::FixedLength),
            "state_space" | "statespace" | "sts" => Ok(PredictorKind::StateSpace),
            _ => Err(TpcError::Config(format!(
                "unknown predictor kind `{s}` (expected one of subspace, multistep, transient, fixed_length, state_space)"
            ))),
        }
    }
}

/// Minimum number of raw samples `d` for which the predictor's regressor
/// matrices can have full row rank.
pub fn min_examples(kind: PredictorKind, m: usize, h: usize, n_u: usize, n_y: usize) -> usize {
    let n_z = n_u + n_y;
    match kind {
        PredictorKind::Transient => (n_z + 1) * (m + h) - n_y - 1,
        PredictorKind::Subspace | PredictorKind::Multistep => (n_z + 1) * m + (n_u + 1) * h - 1,
        PredictorKind::FixedLength => (n_z + 1) * m + h + n_u - 1,
        PredictorKind::StateSpace => (n_z + 1) * m + n_u,
    }
}

/// Number of scalar parameters estimated from data.
pub fn param_count(kind: PredictorKind, m: usize, h: usize, n_u: usize, n_y: usize) -> usize {
    let n_z = n_u + n_y;
    let tri = h * (h + 1) / 2;
    let strict_tri = h * (h - 1) / 2;
    match kind {
        PredictorKind::Subspace => h * n_y * (m * n_z + h * n_u),
        PredictorKind::Multistep => h * n_y * m * n_z + n_y * n_u * tri,
        PredictorKind::Transient => h * n_y * m * n_z + n_y * n_u * tri + n_y * n_y * strict_tri,
        PredictorKind::FixedLength => n_y * n_z * m + n_y * n_u * h + n_y * n_y * (h - 1),
        PredictorKind::StateSpace => n_y * (m * n_z + n_u),
    }
}

/// Number of singular values above `tol` times the largest one.
pub fn numerical_rank(mat: &DMatrix<f64>, tol: f64) -> usize {
    if mat.nrows() == 0 || mat.ncols() == 0 {
        return 0;
    }
    let sv = mat.clone().singular_values();
    let max = sv.max();
    if max <= 0.0 || !max.is_finite() {
        return 0;
    }
    sv.iter().filter(|&&s| s > tol * max).count()
}

/// True iff the smallest singular value exceeds `tol` times the largest and
/// the matrix has at least as many columns as rows.
pub fn has_full_row_rank(mat: &DMatrix<f64>, tol: f64) -> bool {
    if mat.nrows() > mat.ncols() {
        return false;
    }
    numerical_rank(mat, tol) == mat.nrows()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(u: &[f64], y: &[f64]) -> TrajectoryData {
        TrajectoryData::new(
            DMatrix::from_row_slice(1, u.len(), u),
            DMatrix::from_row_slice(1, y.len(), y),
            DataLabel::OpenLoop,
        )
        .unwrap()
    }

    #[test]
    fn hankel_scalar_m1_h1() {
        let data = scalar(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]);
        let hs = build_hankel(&data, 1, 1).unwrap();
        assert_eq!(hs.n, 2);
        assert_eq!(hs.z, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 10.0, 20.0]));
        assert_eq!(hs.u, DMatrix::from_row_slice(1, 2, &[2.0, 3.0]));
        assert_eq!(hs.y, DMatrix::from_row_slice(1, 2, &[20.0, 30.0]));
    }

    #[test]
    fn hankel_single_column() {
        let data = scalar(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]);
        let hs = build_hankel(&data, 2, 1).unwrap();
        assert_eq!(hs.n, 1);
        assert_eq!(hs.z.column(0).as_slice(), &[1.0, 10.0, 2.0, 20.0]);
        assert_eq!(hs.u[(0, 0)], 3.0);
        assert_eq!(hs.y[(0, 0)], 30.0);
        assert_eq!(hs.n1, 1);
    }

    #[test]
    fn hankel_insufficient_data() {
        let data = scalar(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.0, 4.0]);
        match build_hankel(&data, 2, 3) {
            Err(TpcError::InsufficientData { needed, got, .. }) => {
                assert_eq!(needed, 5);
                assert_eq!(got, 4);
            }
            other => panic!("expected insufficient data, got {other:?}"),
        }
    }

    #[test]
    fn one_step_set_extends_to_end() {
        let u: Vec<f64> = (0..8).map(|k| k as f64).collect();
        let y: Vec<f64> = (0..8).map(|k| 10.0 * k as f64).collect();
        let hs = build_hankel(&scalar(&u, &y), 2, 3).unwrap();
        assert_eq!(hs.n, 4);
        assert_eq!(hs.n1, 6);
        assert_eq!(hs.n1, hs.n + hs.dims.h - 1);
        assert_eq!(hs.z1.columns(0, hs.n), hs.z);
        assert_eq!(hs.z1.column(5).as_slice(), &[5.0, 50.0, 6.0, 60.0]);
        assert_eq!(hs.y1[(0, 5)], 70.0);
    }

    #[test]
    fn min_examples_table_rows() {
        assert_eq!(min_examples(PredictorKind::Transient, 2, 3, 1, 1), 13);
        assert_eq!(min_examples(PredictorKind::StateSpace, 2, 3, 1, 1), 7);
        // h = 15, n_z = 10 (n_u = 4, n_y = 6)
        let t = min_examples(PredictorKind::Transient, 3, 15, 4, 6);
        let s = min_examples(PredictorKind::StateSpace, 3, 15, 4, 6);
        assert_eq!(t - s, 154);
    }

    #[test]
    fn param_count_examples() {
        assert_eq!(param_count(PredictorKind::StateSpace, 2, 3, 1, 1), 5);
        assert_eq!(param_count(PredictorKind::Subspace, 2, 3, 1, 1), 21);
        assert_eq!(param_count(PredictorKind::Multistep, 1, 1, 1, 1), 3);
        assert_eq!(
            param_count(PredictorKind::Multistep, 1, 1, 1, 1),
            param_count(PredictorKind::Subspace, 1, 1, 1, 1)
        );
    }

    #[test]
    fn rank_checks() {
        assert!(has_full_row_rank(
            &DMatrix::identity(2, 2),
            DEFAULT_RANK_TOL
        ));
        let r1 = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(!has_full_row_rank(&r1, DEFAULT_RANK_TOL));
        assert_eq!(numerical_rank(&r1, DEFAULT_RANK_TOL), 1);
        assert!(!has_full_row_rank(&DMatrix::zeros(3, 2), DEFAULT_RANK_TOL));
    }

    #[test]
    fn kind_parsing() {
        for k in PredictorKind::ALL {
            assert_eq!(k.as_str().parse::<PredictorKind>().unwrap(), k);
        }
        assert!("bogus".parse::<PredictorKind>().is_err());
        assert_eq!(
            "fixed-length".parse::<PredictorKind>().unwrap(),
            PredictorKind::FixedLength
        );
    }
}
