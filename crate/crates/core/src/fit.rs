//! Fitting kernels: logistic regression by iteratively reweighted least
//! squares for the propensity model, and weighted least squares for the
//! outcome regression.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{compress_rows, expit, PivotedQr};

pub const IRLS_MAX_ITER: usize = 100;
pub const IRLS_REL_TOL: f64 = 1e-8;
pub const IRLS_STEP_TOL: f64 = 1e-9;
pub const IRLS_MAX_HALVINGS: usize = 10;
/// Coefficients larger than this in magnitude are taken as a sign of
/// (quasi-)separation.
pub const MAX_ABS_COEF: f64 = 15.0;

#[derive(Debug, Clone)]
pub struct LogisticFit {
    pub alpha: DVector<f64>,
    /// Unclipped fitted probabilities `expit(H alpha)`.
    pub fitted: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub deviance: f64,
    /// Deviance after each accepted iteration, starting from `alpha = 0`.
    pub deviance_path: Vec<f64>,
    /// `H' (z - p)` at the estimate.
    pub score: DVector<f64>,
    /// `H' diag(p (1 - p)) H` at the estimate.
    pub information: DMatrix<f64>,
}

fn linear_predictor(x: &DMatrix<f64>, beta: &DVector<f64>) -> DVector<f64> {
    x * beta
}

fn deviance(z: &[f64], eta: &DVector<f64>) -> f64 {
    // -2 loglik, computed from eta for numerical stability
    let mut ll = 0.0;
    for (&zi, &e) in z.iter().zip(eta.iter()) {
        // log(1 + exp(e)) without overflow
        let softplus = if e > 0.0 { e + (-e).exp().ln_1p() } else { e.exp().ln_1p() };
        ll += zi * e - softplus;
    }
    -2.0 * ll
}

/// Bernoulli log-likelihood of `alpha`.
pub fn logistic_loglik(x: &DMatrix<f64>, z: &[f64], alpha: &DVector<f64>) -> f64 {
    -0.5 * deviance(z, &linear_predictor(x, alpha))
}

/// Gradient of [`logistic_loglik`].
pub fn logistic_score(x: &DMatrix<f64>, z: &[f64], alpha: &DVector<f64>) -> DVector<f64> {
    let eta = linear_predictor(x, alpha);
    let resid = DVector::from_iterator(z.len(), z.iter().zip(eta.iter()).map(|(&zi, &e)| zi - expit(e)));
    x.tr_mul(&resid)
}

/// Maximum-likelihood logistic regression of binary `z` on `h_alpha`.
pub fn fit_logistic(h_alpha: &DMatrix<f64>, z: &[f64]) -> Result<LogisticFit> {
    assert_eq!(h_alpha.nrows(), z.len(), "design and response lengths differ");
    let n_treated = z.iter().filter(|&&v| v == 1.0).count();
    if n_treated == 0 {
        return Err(Error::DegenerateTreatment(0));
    }
    if n_treated == z.len() {
        return Err(Error::DegenerateTreatment(1));
    }

    let p = h_alpha.ncols();
    let mut alpha = DVector::zeros(p);
    let mut eta = linear_predictor(h_alpha, &alpha);
    let mut dev = deviance(z, &eta);
    let mut path = vec![dev];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < IRLS_MAX_ITER {
        iterations += 1;
        let probs: Vec<f64> = eta.iter().map(|&e| expit(e)).collect();
        let w: Vec<f64> = probs.iter().map(|&q| (q * (1.0 - q)).max(1e-12)).collect();
        let sw: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
        // Newton step as a least-squares problem: sqrt(W) H d = (z - p) / sqrt(W)
        let rhs: Vec<f64> = z.iter().zip(&probs).zip(&sw).map(|((&zi, &q), &s)| (zi - q) / s).collect();
        let (r, c) = compress_rows(h_alpha, Some(&sw), Some(&rhs));
        let step = PivotedQr::new(r)
            .solve(&c.expect("rhs was supplied"))
            .map_err(|_| Error::SeparationSuspected("singular information matrix".into()))?;

        let mut candidate = &alpha + &step;
        let mut cand_eta = linear_predictor(h_alpha, &candidate);
        let mut cand_dev = deviance(z, &cand_eta);
        let mut halvings = 0;
        while !(cand_dev <= dev) && halvings < IRLS_MAX_HALVINGS {
            halvings += 1;
            candidate = (&alpha + &candidate) * 0.5;
            cand_eta = linear_predictor(h_alpha, &candidate);
            cand_dev = deviance(z, &cand_eta);
        }
        if !(cand_dev <= dev) {
            // no improving step found: the previous iterate is the optimum to
            // working precision
            converged = true;
            break;
        }
        let change = (dev - cand_dev).abs();
        let moved = (&candidate - &alpha).amax();
        alpha = candidate;
        eta = cand_eta;
        dev = cand_dev;
        path.push(dev);
        // The deviance settles well before the score does; keep stepping
        // until Newton has also stopped moving the coefficients.
        if change < IRLS_REL_TOL * (dev.abs() + 1.0) && moved < IRLS_STEP_TOL * (alpha.amax() + 1.0) {
            converged = true;
            break;
        }
    }

    if !converged {
        return Err(Error::SeparationSuspected(format!(
            "IRLS did not converge in {IRLS_MAX_ITER} iterations"
        )));
    }
    if let Some(j) = alpha.iter().position(|a| a.abs() > MAX_ABS_COEF) {
        return Err(Error::SeparationSuspected(format!(
            "coefficient {j} = {:.3} exceeds {MAX_ABS_COEF} in magnitude",
            alpha[j]
        )));
    }

    let fitted: Vec<f64> = eta.iter().map(|&e| expit(e)).collect();
    let resid = DVector::from_iterator(z.len(), z.iter().zip(&fitted).map(|(&zi, &q)| zi - q));
    let score = h_alpha.tr_mul(&resid);
    let sw: Vec<f64> = fitted.iter().map(|&q| (q * (1.0 - q)).sqrt()).collect();
    let r = compress_rows(h_alpha, Some(&sw), None).0;
    let information = r.tr_mul(&r);

    Ok(LogisticFit {
        alpha,
        fitted,
        converged,
        iterations,
        deviance: dev,
        deviance_path: path,
        score,
        information,
    })
}

#[derive(Debug, Clone)]
pub struct WlsFit {
    pub coef: DVector<f64>,
    pub fitted: Vec<f64>,
    pub residuals: Vec<f64>,
    pub weights: Vec<f64>,
    /// `X' W X`.
    pub bread: DMatrix<f64>,
    /// `sum_i w_i^2 r_i^2 x_i x_i'`.
    pub meat: DMatrix<f64>,
}

impl WlsFit {
    /// Weighted normal-equation residual `X' W (y - X b)`.
    pub fn weighted_score(&self, design: &DMatrix<f64>) -> DVector<f64> {
        let wr = DVector::from_iterator(
            self.residuals.len(),
            self.residuals.iter().zip(&self.weights).map(|(r, w)| r * w),
        );
        design.tr_mul(&wr)
    }
}

/// Weighted least squares of `y` on `design` with nonnegative weights `w`.
pub fn fit_wls(design: &DMatrix<f64>, y: &[f64], w: &[f64]) -> Result<WlsFit> {
    assert_eq!(design.nrows(), y.len(), "design and response lengths differ");
    assert_eq!(w.len(), y.len(), "weights and response lengths differ");
    if let Some(i) = w.iter().position(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidData(format!("weight {} at row {i} is not a finite nonnegative number", w[i])));
    }
    if w.iter().all(|&v| v == 0.0) {
        return Err(Error::ZeroWeights);
    }
    let sw: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
    let ys: Vec<f64> = y.iter().zip(&sw).map(|(a, b)| a * b).collect();
    let (r, c) = compress_rows(design, Some(&sw), Some(&ys));
    let qr = PivotedQr::new(r.clone());
    if !qr.is_full_rank() {
        return Err(Error::RankDeficient {
            design: "weighted regression".into(),
            columns: qr.dependent_columns().iter().map(|j| format!("#{j}")).collect(),
        });
    }
    let coef = qr.solve(&c.expect("rhs was supplied"))?;
    let fitted_v = design * &coef;
    let fitted: Vec<f64> = fitted_v.iter().copied().collect();
    let residuals: Vec<f64> = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
    let bread = r.tr_mul(&r);
    let s: Vec<f64> = residuals.iter().zip(w).map(|(r, wi)| (r * wi).abs()).collect();
    let rm = compress_rows(design, Some(&s), None).0;
    let meat = rm.tr_mul(&rm);
    Ok(WlsFit {
        coef,
        fitted,
        residuals,
        weights: w.to_vec(),
        bread,
        meat,
    })
}
