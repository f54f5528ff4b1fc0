//! Rank-revealing Householder QR with column-norm pivoting.
//!
//! All regression and linear-system solves in the crate go through
//! [`PivotedQr`]; no matrix is ever explicitly inverted except the small
//! sensitivity matrix of the sandwich estimator, which is solved column by
//! column through the same factorization.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative tolerance on `|R_kk| / |R_00|` below which a column counts as
/// linearly dependent on its predecessors.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct PivotedQr {
    /// Householder vectors below the diagonal, `R` on and above it.
    qr: DMatrix<f64>,
    betas: Vec<f64>,
    /// `perm[k]` is the original index of the column in pivot position `k`.
    perm: Vec<usize>,
    rank: usize,
}

impl PivotedQr {
    pub fn new(a: DMatrix<f64>) -> Self {
        Self::with_tolerance(a, RANK_TOL)
    }

    pub fn with_tolerance(mut a: DMatrix<f64>, rel_tol: f64) -> Self {
        let (m, n) = a.shape();
        let steps = m.min(n);
        let mut perm: Vec<usize> = (0..n).collect();
        let mut betas = Vec::with_capacity(steps);
        let mut r00 = 0.0_f64;
        let mut rank = steps;

        for k in 0..steps {
            // pivot on the largest remaining column norm
            let (mut best, mut best_norm) = (k, -1.0);
            {
                let data = a.as_slice();
                for j in k..n {
                    let norm: f64 = data[j * m + k..(j + 1) * m].iter().map(|v| v * v).sum();
                    if norm > best_norm {
                        best = j;
                        best_norm = norm;
                    }
                }
            }
            if best != k {
                a.swap_columns(k, best);
                perm.swap(k, best);
            }

            let norm = best_norm.max(0.0).sqrt();
            if k == 0 {
                r00 = norm;
            }
            if norm == 0.0 || norm <= rel_tol * r00 {
                rank = k;
                break;
            }

            let data = a.as_mut_slice();
            let (head, rest) = data.split_at_mut((k + 1) * m);
            let col_k = &mut head[k * m..];
            let x0 = col_k[k];
            let alpha = if x0 >= 0.0 { -norm } else { norm };
            let v0 = x0 - alpha;
            // v = (1, x[1..]/v0), beta = 2 / v'v
            let inv = 1.0 / v0;
            col_k[k + 1..].iter_mut().for_each(|v| *v *= inv);
            let tail: f64 = col_k[k + 1..].iter().map(|v| v * v).sum();
            let beta = 2.0 / (1.0 + tail);
            col_k[k] = alpha;
            betas.push(beta);

            let v = &col_k[k + 1..];
            for col in rest.chunks_exact_mut(m) {
                let dot = col[k] + v.iter().zip(&col[k + 1..]).map(|(a, b)| a * b).sum::<f64>();
                let s = beta * dot;
                col[k] -= s;
                col[k + 1..].iter_mut().zip(v).for_each(|(c, vi)| *c -= s * vi);
            }
        }

        Self {
            qr: a,
            betas,
            perm,
            rank,
        }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn ncols(&self) -> usize {
        self.qr.ncols()
    }

    pub fn is_full_rank(&self) -> bool {
        self.rank == self.qr.ncols()
    }

    /// Original indices of the columns that were found to be dependent.
    pub fn dependent_columns(&self) -> Vec<usize> {
        let mut cols = self.perm[self.rank..].to_vec();
        cols.sort_unstable();
        cols
    }

    /// Diagonal of `R` in pivot order.
    pub fn r_diagonal(&self) -> Vec<f64> {
        (0..self.rank).map(|k| self.qr[(k, k)]).collect()
    }

    fn apply_qt(&self, b: &mut [f64]) {
        let m = self.qr.nrows();
        let data = self.qr.as_slice();
        for (k, &beta) in self.betas.iter().enumerate() {
            let v = &data[k * m + k + 1..(k + 1) * m];
            let (bh, bt) = b.split_at_mut(k + 1);
            let dot = bh[k] + v.iter().zip(bt.iter()).map(|(a, c)| a * c).sum::<f64>();
            let s = beta * dot;
            bh[k] -= s;
            bt.iter_mut().zip(v).for_each(|(c, vi)| *c -= s * vi);
        }
    }

    /// Least-squares solution of `A x = b`; requires full column rank.
    pub fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.qr.ncols();
        if !self.is_full_rank() {
            return Err(Error::Singular(format!(
                "rank {} < {} columns",
                self.rank, n
            )));
        }
        assert_eq!(b.len(), self.qr.nrows(), "right-hand side length mismatch");
        let mut qtb = b.as_slice().to_vec();
        self.apply_qt(&mut qtb);
        let mut z = vec![0.0; n];
        for k in (0..n).rev() {
            let mut s = qtb[k];
            for j in k + 1..n {
                s -= self.qr[(k, j)] * z[j];
            }
            z[k] = s / self.qr[(k, k)];
        }
        let mut x = DVector::zeros(n);
        for (k, &col) in self.perm.iter().enumerate() {
            x[col] = z[k];
        }
        Ok(x)
    }

    /// Solves `A X = B` column by column for square full-rank `A`.
    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(self.qr.ncols(), b.ncols());
        for j in 0..b.ncols() {
            let col = self.solve(&b.column(j).into_owned())?;
            out.set_column(j, &col);
        }
        Ok(out)
    }
}

/// Fails with the names of the dependent columns if `m` is rank deficient.
/// Rows per block when compressing a tall matrix.
const TSQR_BLOCK: usize = 256;

/// Reduces a tall `m x p` matrix (rows optionally scaled by `row_scale`) to
/// a `p x p` upper-triangular `R` with `R' R = X' X`, carrying `Q' rhs` along.
///
/// Rows are folded in one block at a time with Householder reflections, so
/// the working set stays in cache. Column norms are preserved, so a pivoted
/// QR of `R` reveals the same rank as one of `X`, and least squares on
/// `(R, Q' rhs)` has the same solution as on `(X, rhs)`. Short matrices are
/// returned unchanged.
pub fn compress_rows(
    x: &DMatrix<f64>,
    row_scale: Option<&[f64]>,
    rhs: Option<&[f64]>,
) -> (DMatrix<f64>, Option<DVector<f64>>) {
    let (m, p) = x.shape();
    let scale = |i: usize| row_scale.map_or(1.0, |s| s[i]);
    if m <= 2 * p.max(1) {
        let mut a = x.clone();
        if row_scale.is_some() {
            for j in 0..p {
                for (i, v) in a.column_mut(j).iter_mut().enumerate() {
                    *v *= scale(i);
                }
            }
        }
        return (a, rhs.map(DVector::from_column_slice));
    }
    let block = TSQR_BLOCK.max(p);
    let cols = p + usize::from(rhs.is_some());
    let ld = p + block;
    let mut w = vec![0.0; ld * cols];
    let xs = x.as_slice();
    let mut top = 0;
    let mut start = 0;
    while start < m {
        let end = (start + block).min(m);
        let b = end - start;
        for j in 0..p {
            let src = &xs[j * m + start..j * m + end];
            let dst = &mut w[j * ld + top..j * ld + top + b];
            match row_scale {
                Some(s) => dst.iter_mut().zip(src).zip(&s[start..end]).for_each(|((d, v), si)| *d = v * si),
                None => dst.copy_from_slice(src),
            }
        }
        if let Some(r) = rhs {
            w[p * ld + top..p * ld + top + b].copy_from_slice(&r[start..end]);
        }
        let nr = top + b;
        for k in 0..p.min(nr) {
            // rows k+1..top of column k are zero in the triangular part
            let lo = (k + 1).max(top);
            let (head, rest) = w.split_at_mut((k + 1) * ld);
            let col = &mut head[k * ld..];
            let tail_sq: f64 = col[lo..nr].iter().map(|v| v * v).sum();
            if tail_sq == 0.0 {
                continue;
            }
            let x0 = col[k];
            let norm = (x0 * x0 + tail_sq).sqrt();
            let alpha = if x0 >= 0.0 { -norm } else { norm };
            let v0 = x0 - alpha;
            let inv = 1.0 / v0;
            col[lo..nr].iter_mut().for_each(|v| *v *= inv);
            let beta = 2.0 / (1.0 + tail_sq * inv * inv);
            col[k] = alpha;
            let v = &col[lo..nr];
            for c in rest.chunks_exact_mut(ld) {
                let dot = c[k] + v.iter().zip(&c[lo..nr]).map(|(a, b)| a * b).sum::<f64>();
                let s = beta * dot;
                c[k] -= s;
                c[lo..nr].iter_mut().zip(v).for_each(|(ci, vi)| *ci -= s * vi);
            }
        }
        if top == 0 {
            for k in 0..p {
                for i in k + 1..p.min(nr).max(k + 1) {
                    w[k * ld + i] = 0.0;
                }
            }
        }
        top = p.min(nr);
        start = end;
    }
    let r = DMatrix::from_fn(p, p, |i, j| if i <= j { w[j * ld + i] } else { 0.0 });
    let c = rhs.map(|_| DVector::from_fn(p, |i, _| w[p * ld + i]));
    (r, c)
}

pub fn check_full_rank(m: &DMatrix<f64>, names: &[String], label: &str) -> Result<()> {
    let qr = PivotedQr::new(compress_rows(m, None, None).0);
    if qr.is_full_rank() {
        return Ok(());
    }
    let columns = qr
        .dependent_columns()
        .into_iter()
        .map(|j| names.get(j).cloned().unwrap_or_else(|| format!("#{j}")))
        .collect();
    Err(Error::RankDeficient {
        design: label.to_string(),
        columns,
    })
}

/// Row-major copy of a column-major matrix, for per-observation loops.
pub(crate) fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let (r, c) = m.shape();
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        for j in 0..c {
            out.push(m[(i, j)]);
        }
    }
    out
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn expit(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}
