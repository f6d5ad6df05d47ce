//! Least squares, the block LQ decomposition and block-triangular projections.

use nalgebra::DMatrix;

use crate::error::{dim_err, Result, TpcError};
use crate::hankel::{numerical_rank, DEFAULT_RANK_TOL};

/// `[Z; U; Y] = L Q` partitioned at the Z/U/Y row boundaries.
#[derive(Debug, Clone)]
pub struct LqDecomposition {
    pub l11: DMatrix<f64>,
    pub l21: DMatrix<f64>,
    pub l22: DMatrix<f64>,
    pub l31: DMatrix<f64>,
    pub l32: DMatrix<f64>,
    pub l33: DMatrix<f64>,
    pub q1: DMatrix<f64>,
    pub q2: DMatrix<f64>,
    pub q3: DMatrix<f64>,
}

impl LqDecomposition {
    /// Full lower-triangular factor.
    pub fn l(&self) -> DMatrix<f64> {
        let (r1, r2, r3) = (self.l11.nrows(), self.l22.nrows(), self.l33.nrows());
        let mut l = DMatrix::zeros(r1 + r2 + r3, r1 + r2 + r3);
        l.view_mut((0, 0), (r1, r1)).copy_from(&self.l11);
        l.view_mut((r1, 0), (r2, r1)).copy_from(&self.l21);
        l.view_mut((r1, r1), (r2, r2)).copy_from(&self.l22);
        l.view_mut((r1 + r2, 0), (r3, r1)).copy_from(&self.l31);
        l.view_mut((r1 + r2, r1), (r3, r2)).copy_from(&self.l32);
        l.view_mut((r1 + r2, r1 + r2), (r3, r3))
            .copy_from(&self.l33);
        l
    }

    /// Orthonormal-row factor.
    pub fn q(&self) -> DMatrix<f64> {
        vstack(&[&self.q1, &self.q2, &self.q3])
    }

    /// `L Q`, which reproduces the stacked input.
    pub fn recompose(&self) -> DMatrix<f64> {
        self.l() * self.q()
    }
}

/// The blocks of the LQ decomposition that the predictor formulas use.
///
/// Only `[Z; U]` is factored, so this exists whenever `[Z; U]` is wide;
/// `[L31 L32]` is the projection `Y [Q1; Q2]^T`.
#[derive(Debug, Clone)]
pub struct LqFactors {
    pub l11: DMatrix<f64>,
    pub l21: DMatrix<f64>,
    pub l22: DMatrix<f64>,
    pub l31: DMatrix<f64>,
    pub l32: DMatrix<f64>,
}

pub(crate) fn vstack(parts: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let cols = parts.first().map_or(0, |p| p.ncols());
    let rows: usize = parts.iter().map(|p| p.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut off = 0;
    for p in parts {
        out.view_mut((off, 0), (p.nrows(), cols)).copy_from(*p);
        off += p.nrows();
    }
    out
}

pub(crate) fn hstack(parts: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows = parts.first().map_or(0, |p| p.nrows());
    let cols: usize = parts.iter().map(|p| p.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut off = 0;
    for p in parts {
        out.view_mut((0, off), (rows, p.ncols())).copy_from(*p);
        off += p.ncols();
    }
    out
}

/// Thin LQ factorization of a wide matrix via QR of its transpose, with the
/// diagonal of `L` made nonnegative. Returns `(L, Q)` with `L` square.
fn thin_lq(m: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let qr = m.transpose().qr();
    let mut r = qr.r();
    let mut q = qr.q();
    for i in 0..r.nrows() {
        if r[(i, i)] < 0.0 {
            r.row_mut(i).neg_mut();
            q.column_mut(i).neg_mut();
        }
    }
    (r.transpose(), q.transpose())
}

/// Block LQ decomposition of `[Z; U; Y]`.
pub fn lq_decompose(
    z: &DMatrix<f64>,
    u: &DMatrix<f64>,
    y: &DMatrix<f64>,
) -> Result<LqDecomposition> {
    let n = z.ncols();
    if u.ncols() != n || y.ncols() != n {
        return Err(dim_err(format!(
            "Z, U, Y column counts differ ({}, {}, {})",
            n,
            u.ncols(),
            y.ncols()
        )));
    }
    let (r1, r2, r3) = (z.nrows(), u.nrows(), y.nrows());
    if r1 + r2 + r3 > n {
        return Err(dim_err(format!(
            "stacked matrix has {} rows but only {n} columns",
            r1 + r2 + r3
        )));
    }
    let (l, q) = thin_lq(&vstack(&[z, u, y]));
    Ok(LqDecomposition {
        l11: l.view((0, 0), (r1, r1)).into_owned(),
        l21: l.view((r1, 0), (r2, r1)).into_owned(),
        l22: l.view((r1, r1), (r2, r2)).into_owned(),
        l31: l.view((r1 + r2, 0), (r3, r1)).into_owned(),
        l32: l.view((r1 + r2, r1), (r3, r2)).into_owned(),
        l33: l.view((r1 + r2, r1 + r2), (r3, r3)).into_owned(),
        q1: q.rows(0, r1).into_owned(),
        q2: q.rows(r1, r2).into_owned(),
        q3: q.rows(r1 + r2, r3).into_owned(),
    })
}

/// LQ blocks of `[Z; U]` plus the projections of `Y` onto `Q1`, `Q2`.
pub fn lq_factors(z: &DMatrix<f64>, u: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<LqFactors> {
    let n = z.ncols();
    if u.ncols() != n || y.ncols() != n {
        return Err(dim_err("Z, U, Y column counts differ"));
    }
    let (r1, r2) = (z.nrows(), u.nrows());
    if r1 + r2 > n {
        return Err(dim_err(format!(
            "[Z; U] has {} rows but only {n} columns",
            r1 + r2
        )));
    }
    let (l, q) = thin_lq(&vstack(&[z, u]));
    let proj = y * q.transpose();
    Ok(LqFactors {
        l11: l.view((0, 0), (r1, r1)).into_owned(),
        l21: l.view((r1, 0), (r2, r1)).into_owned(),
        l22: l.view((r1, r1), (r2, r2)).into_owned(),
        l31: proj.columns(0, r1).into_owned(),
        l32: proj.columns(r1, r2).into_owned(),
    })
}

/// `B L^{-1}` for lower-triangular `L`.
pub fn right_div_lower(b: &DMatrix<f64>, l: &DMatrix<f64>, name: &str) -> Result<DMatrix<f64>> {
    let diag_max = l.diagonal().amax();
    if l.diagonal()
        .iter()
        .any(|d| d.abs() <= DEFAULT_RANK_TOL * diag_max)
        || diag_max == 0.0
    {
        return Err(TpcError::Singular(format!("{name} has a zero pivot")));
    }
    l.transpose()
        .solve_upper_triangular(&b.transpose())
        .map(|x| x.transpose())
        .ok_or_else(|| TpcError::Singular(format!("{name} is singular")))
}

/// Least-squares `Theta = target X^+` for a full-row-rank regressor `X`.
pub fn ls_fit(target: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    ls_fit_named(target, x, "regressor matrix")
}

/// [`ls_fit`] with a label used in rank-deficiency errors.
pub fn ls_fit_named(target: &DMatrix<f64>, x: &DMatrix<f64>, name: &str) -> Result<DMatrix<f64>> {
    if target.ncols() != x.ncols() {
        return Err(dim_err(format!(
            "target has {} columns, regressors have {}",
            target.ncols(),
            x.ncols()
        )));
    }
    let rows = x.nrows();
    let rank = numerical_rank(x, DEFAULT_RANK_TOL);
    if rows > x.ncols() || rank < rows {
        return Err(TpcError::RankDeficient {
            matrix: name.to_string(),
            rank,
            rows,
        });
    }
    let qr = x.transpose().qr();
    let rhs = qr.q().transpose() * target.transpose();
    let theta_t = qr
        .r()
        .solve_upper_triangular(&rhs)
        .ok_or_else(|| TpcError::Singular(format!("{name} triangular factor")))?;
    Ok(theta_t.transpose())
}

fn check_blocks(m: &DMatrix<f64>, row_block: usize, col_block: usize) -> Result<(usize, usize)> {
    if row_block == 0 || col_block == 0 {
        return Err(dim_err("block sizes must be positive"));
    }
    if !m.nrows().is_multiple_of(row_block) || !m.ncols().is_multiple_of(col_block) {
        return Err(dim_err(format!(
            "{}x{} matrix is not divisible into {row_block}x{col_block} blocks",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok((m.nrows() / row_block, m.ncols() / col_block))
}

fn is_upper_block(i: usize, j: usize, strict: bool) -> bool {
    if strict {
        j >= i
    } else {
        j > i
    }
}

/// Zeros the (strictly) block upper triangular part.
///
/// With `strict = false` blocks `(i, j)` with `j > i` are zeroed; with
/// `strict = true` the block diagonal is zeroed as well.
pub fn blt_project(
    m: &DMatrix<f64>,
    row_block: usize,
    col_block: usize,
    strict: bool,
) -> Result<DMatrix<f64>> {
    let (br, bc) = check_blocks(m, row_block, col_block)?;
    let mut out = m.clone();
    for i in 0..br {
        for j in 0..bc {
            if is_upper_block(i, j, strict) {
                out.view_mut((i * row_block, j * col_block), (row_block, col_block))
                    .fill(0.0);
            }
        }
    }
    Ok(out)
}

/// True iff every (strictly) upper block has max-abs entry at most `tol`.
pub fn is_blt(
    m: &DMatrix<f64>,
    row_block: usize,
    col_block: usize,
    strict: bool,
    tol: f64,
) -> Result<bool> {
    let (br, bc) = check_blocks(m, row_block, col_block)?;
    for i in 0..br {
        for j in 0..bc {
            if is_upper_block(i, j, strict) {
                let blk = m.view((i * row_block, j * col_block), (row_block, col_block));
                if blk.amax() > tol {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}

/// Solves `(I - Phi_y) X = rhs` for strictly block lower triangular `Phi_y`
/// with square `block x block` blocks, by block forward substitution.
pub fn solve_unit_blt(
    phi_y: &DMatrix<f64>,
    block: usize,
    rhs: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let (br, bc) = check_blocks(phi_y, block, block)?;
    if br != bc || rhs.nrows() != phi_y.nrows() {
        return Err(dim_err(
            "Phi_y must be square and conform with the right-hand side",
        ));
    }
    let mut x = rhs.clone();
    for i in 1..br {
        let mut acc = x.rows(i * block, block).into_owned();
        for j in 0..i {
            let blk = phi_y.view((i * block, j * block), (block, block));
            acc += blk * x.rows(j * block, block);
        }
        x.rows_mut(i * block, block).copy_from(&acc);
    }
    Ok(x)
}
