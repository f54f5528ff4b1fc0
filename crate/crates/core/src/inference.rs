//! M-estimation sandwich covariance for stacked estimating equations, and
//! Monte Carlo summaries of standard-error accuracy.
//!
//! For estimating functions `s_i(theta)` with `sum_i s_i(theta_hat) = 0`,
//!
//! ```text
//! A = -(1/n) sum_i d s_i / d theta      (central finite differences)
//! B =  (1/n) sum_i s_i s_i'
//! cov(theta_hat) = A^-1 B A^-T / n
//! ```
//!
//! Sums over observations are taken in fixed-size chunks and reduced in
//! chunk order, so results do not depend on the rayon pool size.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::PivotedQr;

/// 95% normal quantile used for every interval in the crate.
pub const Z95: f64 = 1.96;

const CHUNK: usize = 2048;

/// Per-observation estimating functions of a stacked parameter vector.
pub trait EstimatingEquations: Sync {
    fn dim(&self) -> usize;
    fn n_obs(&self) -> usize;
    /// Label of each parameter, e.g. `alpha[C]`.
    fn labels(&self) -> Vec<String>;
    /// Writes `s_i(theta)` into `out` (length `dim`).
    fn score(&self, theta: &[f64], i: usize, out: &mut [f64]);
}

fn chunks(n: usize) -> Vec<(usize, usize)> {
    (0..n.div_ceil(CHUNK)).map(|c| (c * CHUNK, ((c + 1) * CHUNK).min(n))).collect()
}

/// `sum_i s_i(theta)`.
pub fn score_sum<E: EstimatingEquations + ?Sized>(eq: &E, theta: &[f64]) -> Vec<f64> {
    let p = eq.dim();
    let partials: Vec<Vec<f64>> = chunks(eq.n_obs())
        .into_par_iter()
        .map(|(lo, hi)| {
            let mut acc = vec![0.0; p];
            let mut s = vec![0.0; p];
            for i in lo..hi {
                eq.score(theta, i, &mut s);
                acc.iter_mut().zip(&s).for_each(|(a, v)| *a += v);
            }
            acc
        })
        .collect();
    let mut total = vec![0.0; p];
    for part in partials {
        total.iter_mut().zip(&part).for_each(|(a, v)| *a += v);
    }
    total
}

/// `sum_i s_i(theta) s_i(theta)'`.
pub fn score_outer_sum<E: EstimatingEquations + ?Sized>(eq: &E, theta: &[f64]) -> DMatrix<f64> {
    let p = eq.dim();
    let partials: Vec<Vec<f64>> = chunks(eq.n_obs())
        .into_par_iter()
        .map(|(lo, hi)| {
            let mut acc = vec![0.0; p * p];
            let mut s = vec![0.0; p];
            for i in lo..hi {
                eq.score(theta, i, &mut s);
                for a in 0..p {
                    let sa = s[a];
                    if sa == 0.0 {
                        continue;
                    }
                    let row = &mut acc[a * p..a * p + p];
                    for b in a..p {
                        row[b] += sa * s[b];
                    }
                }
            }
            acc
        })
        .collect();
    let mut m = DMatrix::zeros(p, p);
    for part in partials {
        for a in 0..p {
            for b in a..p {
                m[(a, b)] += part[a * p + b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            m[(a, b)] = m[(b, a)];
        }
    }
    m
}

/// Finite-difference step for coordinate `theta_j`.
pub fn fd_step(theta_j: f64) -> f64 {
    1e-6 * theta_j.abs().max(1.0)
}

/// `A = -(1/n) sum_i d s_i / d theta` by central differences.
pub fn sensitivity<E: EstimatingEquations + ?Sized>(eq: &E, theta: &[f64]) -> DMatrix<f64> {
    let p = eq.dim();
    let n = eq.n_obs() as f64;
    let mut a = DMatrix::zeros(p, p);
    let mut tp = theta.to_vec();
    for j in 0..p {
        let h = fd_step(theta[j]);
        tp[j] = theta[j] + h;
        let up = score_sum(eq, &tp);
        tp[j] = theta[j] - h;
        let down = score_sum(eq, &tp);
        tp[j] = theta[j];
        for r in 0..p {
            a[(r, j)] = -(up[r] - down[r]) / (2.0 * h) / n;
        }
    }
    a
}

#[derive(Debug, Clone)]
pub struct SandwichCov {
    pub labels: Vec<String>,
    pub cov: DMatrix<f64>,
    pub sensitivity: DMatrix<f64>,
    pub variability: DMatrix<f64>,
}

impl SandwichCov {
    pub fn se(&self, j: usize) -> f64 {
        self.cov[(j, j)].max(0.0).sqrt()
    }
}

/// Sandwich covariance `A^-1 B A^-T / n` of `theta_hat`.
pub fn sandwich_cov<E: EstimatingEquations + ?Sized>(eq: &E, theta_hat: &[f64]) -> Result<SandwichCov> {
    let n = eq.n_obs() as f64;
    let a = sensitivity(eq, theta_hat);
    let b = score_outer_sum(eq, theta_hat) / n;
    let qr = PivotedQr::new(a.clone());
    if !qr.is_full_rank() {
        return Err(Error::NonInvertibleSensitivity);
    }
    // X = A^-1 B, then A^-1 X' = A^-1 B A^-T since B is symmetric
    let x = qr.solve_matrix(&b).map_err(|_| Error::NonInvertibleSensitivity)?;
    let y = qr
        .solve_matrix(&x.transpose())
        .map_err(|_| Error::NonInvertibleSensitivity)?;
    let mut cov = (&y + y.transpose()) * (0.5 / n);
    let trace = cov.trace();
    let eig = SymmetricEigen::new(cov.clone());
    let min_eig = eig.eigenvalues.min();
    if min_eig < -1e-10 * trace.abs() {
        return Err(Error::NotPositiveSemidefinite(min_eig));
    }
    if !cov.iter().all(|v| v.is_finite()) {
        return Err(Error::NonInvertibleSensitivity);
    }
    cov.fill_lower_triangle_with_upper_triangle();
    Ok(SandwichCov {
        labels: eq.labels(),
        cov,
        sensitivity: a,
        variability: b,
    })
}

/// Interval `estimate +/- 1.96 se`.
pub fn ci95(estimate: f64, se: f64) -> (f64, f64) {
    (estimate - Z95 * se, estimate + Z95 * se)
}

/// Accuracy of analytical standard errors over Monte Carlo replicates.
#[derive(Debug, Clone, PartialEq)]
pub struct AseEseReport {
    pub replicates: usize,
    pub mean: f64,
    pub bias: f64,
    /// Mean of the per-replicate standard errors.
    pub ase: f64,
    /// Standard deviation of the estimates (divisor M); `None` below two
    /// replicates.
    pub ese: Option<f64>,
    /// `ASE / ESE`; `None` when ESE is undefined or zero.
    pub ratio: Option<f64>,
    /// Fraction of 95% intervals containing the truth.
    pub coverage: f64,
    /// `bias^2 + ESE^2`, i.e. the mean squared error with divisor M.
    pub mse: f64,
}

pub fn ase_ese_report(estimates: &[f64], ses: &[f64], truth: f64) -> AseEseReport {
    assert_eq!(estimates.len(), ses.len(), "estimates and SEs differ in length");
    let m = estimates.len();
    let mf = m as f64;
    let mean = estimates.iter().sum::<f64>() / mf;
    let ase = ses.iter().sum::<f64>() / mf;
    let var = estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / mf;
    let ese = (m >= 2).then(|| var.sqrt());
    let ratio = ese.filter(|&e| e > 0.0).map(|e| ase / e);
    let covered = estimates
        .iter()
        .zip(ses)
        .filter(|(&e, &s)| (e - truth).abs() <= Z95 * s)
        .count();
    let bias = mean - truth;
    AseEseReport {
        replicates: m,
        mean,
        bias,
        ase,
        ese,
        ratio,
        coverage: covered as f64 / mf,
        mse: bias * bias + var,
    }
}

/// Estimating functions `y_i - mu` of a mean; used to pin the sandwich
/// against closed forms.
#[derive(Debug, Clone)]
pub struct MeanEquations<'a> {
    pub y: &'a [f64],
}

impl EstimatingEquations for MeanEquations<'_> {
    fn dim(&self) -> usize {
        1
    }

    fn n_obs(&self) -> usize {
        self.y.len()
    }

    fn labels(&self) -> Vec<String> {
        vec!["mu".into()]
    }

    fn score(&self, theta: &[f64], i: usize, out: &mut [f64]) {
        out[0] = self.y[i] - theta[0];
    }
}

/// Least-squares estimating functions `x_i (y_i - x_i' b)`.
#[derive(Debug, Clone)]
pub struct OlsEquations<'a> {
    pub x: &'a DMatrix<f64>,
    pub y: &'a [f64],
}

impl EstimatingEquations for OlsEquations<'_> {
    fn dim(&self) -> usize {
        self.x.ncols()
    }

    fn n_obs(&self) -> usize {
        self.y.len()
    }

    fn labels(&self) -> Vec<String> {
        (0..self.dim()).map(|j| format!("b{j}")).collect()
    }

    fn score(&self, theta: &[f64], i: usize, out: &mut [f64]) {
        let row = self.x.row(i);
        let fit: f64 = row.iter().zip(theta).map(|(a, b)| a * b).sum();
        let r = self.y[i] - fit;
        for (o, &v) in out.iter_mut().zip(row.iter()) {
            *o = v * r;
        }
    }
}

/// HC0 covariance `(X'X)^-1 X' diag(r^2) X (X'X)^-1` evaluated directly.
pub fn hc0_covariance(x: &DMatrix<f64>, residuals: &DVector<f64>) -> Option<DMatrix<f64>> {
    let xtx_inv = (x.transpose() * x).try_inverse()?;
    let mut meat = DMatrix::zeros(x.ncols(), x.ncols());
    for i in 0..x.nrows() {
        let row = x.row(i).transpose();
        meat += &row * row.transpose() * residuals[i].powi(2);
    }
    Some(&xtx_inv * meat * &xtx_inv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_variance_is_second_central_moment_over_n() {
        let y = [1.0, 4.0, 2.5, -0.5, 3.0, 7.0];
        let n = y.len() as f64;
        let mu = y.iter().sum::<f64>() / n;
        let m2 = y.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
        let s = sandwich_cov(&MeanEquations { y: &y }, &[mu]).unwrap();
        assert!((s.cov[(0, 0)] - m2 / n).abs() < 1e-9);
    }

    #[test]
    fn linear_scores_reproduce_hc0() {
        let x = DMatrix::from_fn(12, 2, |i, j| if j == 0 { 1.0 } else { (i as f64).sin() * 3.0 });
        let y: Vec<f64> = (0..12).map(|i| 1.0 + 0.5 * x[(i, 1)] + ((i * 7 % 5) as f64 - 2.0) * 0.3).collect();
        let yv = DVector::from_vec(y.clone());
        let b = (x.transpose() * &x).try_inverse().unwrap() * x.transpose() * &yv;
        let r = &yv - &x * &b;
        let hc0 = hc0_covariance(&x, &r).unwrap();
        let s = sandwich_cov(&OlsEquations { x: &x, y: &y }, b.as_slice()).unwrap();
        assert!((s.cov - hc0).amax() < 1e-8);
    }

    #[test]
    fn duplicated_data_halves_covariance() {
        let y = [1.0, 4.0, 2.5, -0.5, 3.0];
        let yy: Vec<f64> = y.iter().chain(y.iter()).copied().collect();
        let mu = y.iter().sum::<f64>() / 5.0;
        let a = sandwich_cov(&MeanEquations { y: &y }, &[mu]).unwrap();
        let b = sandwich_cov(&MeanEquations { y: &yy }, &[mu]).unwrap();
        assert!((a.cov[(0, 0)] / b.cov[(0, 0)] - 2.0).abs() < 1e-9);
    }

    struct Flat;
    impl EstimatingEquations for Flat {
        fn dim(&self) -> usize {
            2
        }
        fn n_obs(&self) -> usize {
            3
        }
        fn labels(&self) -> Vec<String> {
            vec!["a".into(), "b".into()]
        }
        fn score(&self, theta: &[f64], _i: usize, out: &mut [f64]) {
            out[0] = theta[0];
            out[1] = theta[0];
        }
    }

    #[test]
    fn singular_sensitivity_is_an_error() {
        assert!(matches!(sandwich_cov(&Flat, &[0.0, 0.0]), Err(Error::NonInvertibleSensitivity)));
    }

    #[test]
    fn identical_replicates_have_no_ratio() {
        let r = ase_ese_report(&[1.0, 1.0, 1.0], &[0.1, 0.1, 0.1], 1.0);
        assert_eq!(r.ese, Some(0.0));
        assert_eq!(r.ratio, None);
        let r = ase_ese_report(&[1.0], &[0.1], 1.5);
        assert_eq!(r.ese, None);
        assert!((r.bias + 0.5).abs() < 1e-15);
    }

    #[test]
    fn report_arithmetic() {
        let est = [1.0, 2.0, 3.0, 6.0];
        let se = [1.0, 1.0, 1.0, 1.0];
        let r = ase_ese_report(&est, &se, 2.0);
        assert_eq!(r.mean, 3.0);
        assert_eq!(r.bias, 1.0);
        assert_eq!(r.ase, 1.0);
        assert!((r.ese.unwrap() - 3.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(r.coverage, 0.75);
        assert!((r.mse - (1.0 + 3.5)).abs() < 1e-12);
    }
}
