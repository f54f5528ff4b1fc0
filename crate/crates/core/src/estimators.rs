//! Treatment-effect estimators on a missing-indicator design: weighted
//! regression (MI-WOLS) under each weighting scheme, AIPW, and
//! G-estimation.
//!
//! The propensity model is fitted once per dataset (see [`Analysis`]) and
//! shared by every estimator that needs it. Standard errors of the
//! regression-type estimators come from the stacked sandwich over
//! `(alpha, [p_bar], beta, psi)`, so estimation of the weights is accounted
//! for.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{AugmentedDesign, Dataset};
use crate::error::{Error, Result};
use crate::fit::{fit_logistic, fit_wls, LogisticFit, WlsFit};
use crate::inference::{ci95, sandwich_cov, EstimatingEquations};
use crate::linalg::{dot, expit, row_major, PivotedQr};
use crate::weights::{clip_propensity, weight_value, WeightKind, WeightScheme};

/// An estimator together with its weighting scheme where applicable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Miwols(WeightKind),
    Aipw,
    GEst,
}

impl Method {
    /// The six methods compared throughout: four weighting schemes, AIPW and
    /// G-estimation.
    pub const ALL: [Method; 6] = [
        Method::Miwols(WeightKind::Abs),
        Method::Miwols(WeightKind::Ipw),
        Method::Miwols(WeightKind::Sipw),
        Method::Miwols(WeightKind::Unw),
        Method::Aipw,
        Method::GEst,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Method::Miwols(k) => k.label(),
            Method::Aipw => "AIPW",
            Method::GEst => "GEST",
        }
    }

    pub fn estimator_name(self) -> &'static str {
        match self {
            Method::Miwols(_) => "MI-WOLS",
            Method::Aipw => "AIPW",
            Method::GEst => "G-estimation",
        }
    }

    pub fn scheme(self) -> Option<WeightKind> {
        match self {
            Method::Miwols(k) => Some(k),
            _ => None,
        }
    }

    pub fn uses_propensity(self) -> bool {
        !matches!(self, Method::Miwols(WeightKind::Unw))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "AIPW" => Ok(Method::Aipw),
            "GEST" | "G-EST" | "G-ESTIMATION" => Ok(Method::GEst),
            other => other.parse::<WeightKind>().map(Method::Miwols).map_err(|_| {
                Error::Config(format!("unknown estimator `{s}`"))
            }),
        }
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Methods in display order from estimator names and weighting schemes.
/// `MI-WOLS` expands to one entry per scheme. With neither list given every
/// method is selected; with only schemes, only MI-WOLS is.
pub fn select_methods(estimators: Option<&[String]>, schemes: Option<&[WeightKind]>) -> Result<Vec<Method>> {
    let mut out = Vec::new();
    match (estimators, schemes) {
        (None, None) => out.extend(Method::ALL),
        (None, Some(k)) => out.extend(k.iter().map(|&k| Method::Miwols(k))),
        (Some(names), k) => {
            for e in names {
                match e.trim().to_ascii_uppercase().as_str() {
                    "MI-WOLS" | "MIWOLS" | "WOLS" => {
                        out.extend(k.unwrap_or(&WeightKind::ALL).iter().map(|&k| Method::Miwols(k)))
                    }
                    _ => out.push(e.parse()?),
                }
            }
        }
    }
    let mut seen = Vec::new();
    out.retain(|m| {
        let new = !seen.contains(m);
        seen.push(*m);
        new
    });
    if out.is_empty() {
        return Err(Error::Config("no estimators selected".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Covariance {
    pub labels: Vec<String>,
    pub matrix: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub method: Method,
    /// `psi0, psi1, ...`; AIPW reports a single `ATE`.
    pub psi_names: Vec<String>,
    /// Blip term behind each entry of `psi_hat`.
    pub psi_terms: Vec<String>,
    pub psi_hat: Vec<f64>,
    pub beta_hat: Vec<f64>,
    pub alpha_hat: Option<Vec<f64>>,
    /// Stacked covariance over all estimated parameters.
    pub cov: Option<Covariance>,
    /// Standard errors of `psi_hat`; NaN when variance was not requested.
    pub se: Vec<f64>,
    pub ci95: Vec<(f64, f64)>,
}

impl FitResult {
    pub fn estimate(&self) -> f64 {
        self.psi_hat[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EstimateOptions {
    /// Compute sandwich / influence-function standard errors.
    pub variance: bool,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self { variance: true }
    }
}

#[derive(Debug, Clone)]
pub struct Propensity {
    pub fit: LogisticFit,
    /// Fitted scores clipped into `[1e-6, 1 - 1e-6]`.
    pub clipped: Vec<f64>,
}

pub fn fit_propensity(design: &AugmentedDesign, data: &Dataset) -> Result<Propensity> {
    let fit = fit_logistic(&design.h_alpha.matrix, &data.z)?;
    let clipped = fit.fitted.iter().map(|&p| clip_propensity(p)).collect();
    Ok(Propensity { fit, clipped })
}

/// Regressors `(H^beta, Z H^psi)` of the outcome model.
pub fn stacked_regressors(h_beta: &DMatrix<f64>, h_psi: &DMatrix<f64>, z: &[f64]) -> DMatrix<f64> {
    let n = h_beta.nrows();
    let (pb, pp) = (h_beta.ncols(), h_psi.ncols());
    let mut x = DMatrix::zeros(n, pb + pp);
    x.columns_mut(0, pb).copy_from(h_beta);
    for j in 0..pp {
        for i in 0..n {
            x[(i, pb + j)] = z[i] * h_psi[(i, j)];
        }
    }
    x
}

/// Solves the weighted estimating equations for `(beta, psi)` given weights.
pub fn wols_kernel(h_beta: &DMatrix<f64>, h_psi: &DMatrix<f64>, y: &[f64], z: &[f64], w: &[f64]) -> Result<WlsFit> {
    fit_wls(&stacked_regressors(h_beta, h_psi, z), y, w)
}

/// Solves `sum_i (h_beta_i, (z_i - pi_i) h_psi_i)' (y_i - h_beta_i beta - z_i h_psi_i psi) = 0`
/// for `(beta, psi)` with the propensities `pi` held fixed.
pub fn g_estimation_kernel(
    h_beta: &DMatrix<f64>,
    h_psi: &DMatrix<f64>,
    y: &[f64],
    z: &[f64],
    pi: &[f64],
) -> Result<DVector<f64>> {
    let x = stacked_regressors(h_beta, h_psi, z);
    let mut u = x.clone();
    let pb = h_beta.ncols();
    for j in 0..h_psi.ncols() {
        for i in 0..z.len() {
            u[(i, pb + j)] = (z[i] - pi[i]) * h_psi[(i, j)];
        }
    }
    let lhs = u.tr_mul(&x);
    let rhs = u.tr_mul(&DVector::from_column_slice(y));
    PivotedQr::new(lhs)
        .solve(&rhs)
        .map_err(|_| Error::Singular("G-estimation system".into()))
}

#[derive(Debug, Clone)]
pub struct AipwParts {
    pub estimate: f64,
    /// Per-unit contributions `phi_i`; the estimate is their mean.
    pub contributions: Vec<f64>,
}

/// Difference of the two augmented inverse-probability-weighted means:
///
/// ```text
/// mu1 = mean[ Z Y / pi - (Z - pi) / pi * m1 ]
/// mu0 = mean[ (1 - Z) Y / (1 - pi) + (Z - pi) / (1 - pi) * m0 ]
/// ```
pub fn aipw_kernel(y: &[f64], z: &[f64], pi: &[f64], m1: &[f64], m0: &[f64]) -> AipwParts {
    let contributions: Vec<f64> = (0..y.len())
        .map(|i| {
            let (zi, p) = (z[i], pi[i]);
            let treated = zi * y[i] / p - (zi - p) / p * m1[i];
            let control = (1.0 - zi) * y[i] / (1.0 - p) + (zi - p) / (1.0 - p) * m0[i];
            treated - control
        })
        .collect();
    let estimate = contributions.iter().sum::<f64>() / y.len() as f64;
    AipwParts { estimate, contributions }
}

fn term_labels(prefix: &str, names: &[String]) -> Vec<String> {
    names.iter().map(|n| format!("{prefix}[{n}]")).collect()
}

fn psi_names(p: usize) -> Vec<String> {
    (0..p).map(|j| format!("psi{j}")).collect()
}

/// Stacked estimating functions of MI-WOLS: the propensity score equations
/// (when the weights depend on them), the treated-fraction equation for
/// SIPW, and the weighted outcome-regression equations.
pub struct WolsEquations {
    n: usize,
    kind: WeightKind,
    p_alpha: usize,
    p_reg: usize,
    h_alpha: Vec<f64>,
    x_reg: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    labels: Vec<String>,
}

impl WolsEquations {
    /// `with_alpha` forces the propensity block in even for UNW, whose
    /// regression rows then do not depend on it.
    pub fn new(design: &AugmentedDesign, data: &Dataset, kind: WeightKind, with_alpha: bool) -> Self {
        let include_alpha = with_alpha || kind.uses_propensity();
        let x = stacked_regressors(&design.h_beta.matrix, &design.h_psi.matrix, &data.z);
        let mut labels = Vec::new();
        if include_alpha {
            labels.extend(term_labels("alpha", &design.h_alpha.names));
        }
        if kind == WeightKind::Sipw {
            labels.push("p_bar".into());
        }
        labels.extend(term_labels("beta", &design.h_beta.names));
        labels.extend(term_labels("psi", &design.h_psi.names));
        Self {
            n: data.n(),
            kind,
            p_alpha: if include_alpha { design.h_alpha.ncols() } else { 0 },
            p_reg: x.ncols(),
            h_alpha: if include_alpha { row_major(&design.h_alpha.matrix) } else { Vec::new() },
            x_reg: row_major(&x),
            y: data.y.clone(),
            z: data.z.clone(),
            labels,
        }
    }

    fn reg_offset(&self) -> usize {
        self.p_alpha + usize::from(self.kind == WeightKind::Sipw)
    }
}

impl EstimatingEquations for WolsEquations {
    fn dim(&self) -> usize {
        self.reg_offset() + self.p_reg
    }

    fn n_obs(&self) -> usize {
        self.n
    }

    fn labels(&self) -> Vec<String> {
        self.labels.clone()
    }

    fn score(&self, theta: &[f64], i: usize, out: &mut [f64]) {
        let z = self.z[i];
        let mut pi = 0.5;
        if self.p_alpha > 0 {
            let h = &self.h_alpha[i * self.p_alpha..(i + 1) * self.p_alpha];
            pi = expit(dot(h, &theta[..self.p_alpha]));
            let r = z - pi;
            for (o, &v) in out[..self.p_alpha].iter_mut().zip(h) {
                *o = v * r;
            }
        }
        let mut p_bar = 0.5;
        if self.kind == WeightKind::Sipw {
            p_bar = theta[self.p_alpha];
            out[self.p_alpha] = z - p_bar;
        }
        let off = self.reg_offset();
        let w = weight_value(self.kind, p_bar, z, clip_propensity(pi));
        let x = &self.x_reg[i * self.p_reg..(i + 1) * self.p_reg];
        let wr = w * (self.y[i] - dot(x, &theta[off..]));
        for (o, &v) in out[off..].iter_mut().zip(x) {
            *o = v * wr;
        }
    }
}

/// Stacked estimating functions of G-estimation over `(alpha, beta, psi)`.
pub struct GEstEquations {
    n: usize,
    p_alpha: usize,
    p_beta: usize,
    p_psi: usize,
    h_alpha: Vec<f64>,
    h_beta: Vec<f64>,
    h_psi: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    labels: Vec<String>,
}

impl GEstEquations {
    pub fn new(design: &AugmentedDesign, data: &Dataset) -> Self {
        let mut labels = term_labels("alpha", &design.h_alpha.names);
        labels.extend(term_labels("beta", &design.h_beta.names));
        labels.extend(term_labels("psi", &design.h_psi.names));
        Self {
            n: data.n(),
            p_alpha: design.h_alpha.ncols(),
            p_beta: design.h_beta.ncols(),
            p_psi: design.h_psi.ncols(),
            h_alpha: row_major(&design.h_alpha.matrix),
            h_beta: row_major(&design.h_beta.matrix),
            h_psi: row_major(&design.h_psi.matrix),
            y: data.y.clone(),
            z: data.z.clone(),
            labels,
        }
    }
}

impl EstimatingEquations for GEstEquations {
    fn dim(&self) -> usize {
        self.p_alpha + self.p_beta + self.p_psi
    }

    fn n_obs(&self) -> usize {
        self.n
    }

    fn labels(&self) -> Vec<String> {
        self.labels.clone()
    }

    fn score(&self, theta: &[f64], i: usize, out: &mut [f64]) {
        let (pa, pb, pp) = (self.p_alpha, self.p_beta, self.p_psi);
        let z = self.z[i];
        let ha = &self.h_alpha[i * pa..(i + 1) * pa];
        let pi = expit(dot(ha, &theta[..pa]));
        for (o, &v) in out[..pa].iter_mut().zip(ha) {
            *o = v * (z - pi);
        }
        let hb = &self.h_beta[i * pb..(i + 1) * pb];
        let hp = &self.h_psi[i * pp..(i + 1) * pp];
        let r = self.y[i] - dot(hb, &theta[pa..pa + pb]) - z * dot(hp, &theta[pa + pb..]);
        for (o, &v) in out[pa..pa + pb].iter_mut().zip(hb) {
            *o = v * r;
        }
        for (o, &v) in out[pa + pb..].iter_mut().zip(hp) {
            *o = v * (z - pi) * r;
        }
    }
}

/// One dataset and its design, with the propensity model fitted on first
/// use and shared by all estimators.
pub struct Analysis<'a> {
    design: &'a AugmentedDesign,
    data: &'a Dataset,
    options: EstimateOptions,
    propensity: OnceLock<Result<Propensity>>,
}

impl<'a> Analysis<'a> {
    pub fn new(design: &'a AugmentedDesign, data: &'a Dataset) -> Self {
        Self::with_options(design, data, EstimateOptions::default())
    }

    pub fn with_options(design: &'a AugmentedDesign, data: &'a Dataset, options: EstimateOptions) -> Self {
        assert_eq!(design.n(), data.n(), "design and dataset row counts differ");
        Self {
            design,
            data,
            options,
            propensity: OnceLock::new(),
        }
    }

    pub fn propensity(&self) -> Result<&Propensity> {
        self.propensity
            .get_or_init(|| fit_propensity(self.design, self.data))
            .as_ref()
            .map_err(Clone::clone)
    }

    /// Supplies an already fitted propensity model for this design's
    /// treatment covariates. Ignored if one has been fitted already.
    pub fn set_propensity(&self, p: Propensity) {
        let _ = self.propensity.set(Ok(p));
    }

    pub fn run(&self, method: Method) -> Result<FitResult> {
        match method {
            Method::Miwols(kind) => self.miwols(kind),
            Method::Aipw => self.aipw(),
            Method::GEst => self.g_estimation(),
        }
    }

    fn finish(
        &self,
        method: Method,
        alpha_hat: Option<Vec<f64>>,
        beta_hat: Vec<f64>,
        psi_hat: Vec<f64>,
        cov: Option<Covariance>,
    ) -> FitResult {
        let p = psi_hat.len();
        let se: Vec<f64> = match &cov {
            Some(c) => {
                let off = c.labels.len() - p;
                (0..p).map(|j| c.matrix[(off + j, off + j)].max(0.0).sqrt()).collect()
            }
            None => vec![f64::NAN; p],
        };
        let ci = psi_hat.iter().zip(&se).map(|(&e, &s)| ci95(e, s)).collect();
        FitResult {
            method,
            psi_names: psi_names(p),
            psi_terms: self.design.h_psi.names.clone(),
            psi_hat,
            beta_hat,
            alpha_hat,
            cov,
            se,
            ci95: ci,
        }
    }

    pub fn miwols(&self, kind: WeightKind) -> Result<FitResult> {
        let d = self.design;
        let z = &self.data.z;
        let (weights, alpha_hat, p_bar) = if kind.uses_propensity() {
            let prop = self.propensity()?;
            let scheme = WeightScheme::for_data(kind, z)?;
            if kind == WeightKind::Abs {
                let close = z.iter().zip(&prop.fit.fitted).filter(|(&zi, &p)| (zi - p).abs() < 1e-8).count();
                if close > 0 {
                    log::warn!("{close} units with |z - pi| < 1e-8; ABS weight is non-smooth there");
                }
            }
            let w = crate::weights::compute_weights(&scheme, z, &prop.clipped)?;
            (w, Some(prop.fit.alpha.as_slice().to_vec()), scheme.marginal_p())
        } else {
            (vec![1.0; z.len()], None, None)
        };
        let wls = wols_kernel(&d.h_beta.matrix, &d.h_psi.matrix, &self.data.y, z, &weights)
            .map_err(|e| rename_rank_error(e, d))?;
        let pb = d.h_beta.ncols();
        let coef = wls.coef.as_slice();
        let cov = if self.options.variance {
            let eq = WolsEquations::new(d, self.data, kind, false);
            let mut theta = alpha_hat.clone().unwrap_or_default();
            theta.extend(p_bar);
            theta.extend_from_slice(coef);
            let s = sandwich_cov(&eq, &theta)?;
            Some(Covariance { labels: s.labels, matrix: s.cov })
        } else {
            None
        };
        Ok(self.finish(Method::Miwols(kind), alpha_hat, coef[..pb].to_vec(), coef[pb..].to_vec(), cov))
    }

    pub fn g_estimation(&self) -> Result<FitResult> {
        let d = self.design;
        let prop = self.propensity()?;
        let theta_reg = g_estimation_kernel(&d.h_beta.matrix, &d.h_psi.matrix, &self.data.y, &self.data.z, &prop.fit.fitted)?;
        let alpha = prop.fit.alpha.as_slice().to_vec();
        let pb = d.h_beta.ncols();
        let cov = if self.options.variance {
            let eq = GEstEquations::new(d, self.data);
            let mut theta = alpha.clone();
            theta.extend_from_slice(theta_reg.as_slice());
            let s = sandwich_cov(&eq, &theta)?;
            Some(Covariance { labels: s.labels, matrix: s.cov })
        } else {
            None
        };
        let reg = theta_reg.as_slice();
        Ok(self.finish(Method::GEst, Some(alpha), reg[..pb].to_vec(), reg[pb..].to_vec(), cov))
    }

    /// Outcome predictions at `Z = 1` and `Z = 0` from the unweighted joint
    /// outcome model.
    pub fn outcome_predictions(&self) -> Result<(WlsFit, Vec<f64>, Vec<f64>)> {
        let d = self.design;
        let n = self.data.n();
        let ols = wols_kernel(&d.h_beta.matrix, &d.h_psi.matrix, &self.data.y, &self.data.z, &vec![1.0; n])
            .map_err(|e| rename_rank_error(e, d))?;
        let pb = d.h_beta.ncols();
        let beta = ols.coef.rows(0, pb).into_owned();
        let psi = ols.coef.rows(pb, d.h_psi.ncols()).into_owned();
        let m0v = &d.h_beta.matrix * &beta;
        let m1v = &m0v + &d.h_psi.matrix * &psi;
        Ok((ols, m1v.as_slice().to_vec(), m0v.as_slice().to_vec()))
    }

    pub fn aipw(&self) -> Result<FitResult> {
        let prop = self.propensity()?;
        let (ols, m1, m0) = self.outcome_predictions()?;
        let parts = aipw_kernel(&self.data.y, &self.data.z, &prop.clipped, &m1, &m0);
        let n = self.data.n() as f64;
        let cov = self.options.variance.then(|| {
            let var = parts
                .contributions
                .iter()
                .map(|c| (c - parts.estimate).powi(2))
                .sum::<f64>()
                / n;
            Covariance {
                labels: vec!["ATE".into()],
                matrix: DMatrix::from_element(1, 1, var / n),
            }
        });
        let pb = self.design.h_beta.ncols();
        let mut r = self.finish(
            Method::Aipw,
            Some(prop.fit.alpha.as_slice().to_vec()),
            ols.coef.as_slice()[..pb].to_vec(),
            vec![parts.estimate],
            cov,
        );
        r.psi_names = vec!["ATE".into()];
        r.psi_terms = vec!["ATE".into()];
        Ok(r)
    }
}

fn rename_rank_error(e: Error, d: &AugmentedDesign) -> Error {
    match e {
        Error::RankDeficient { columns, .. } => {
            let names: Vec<String> = d
                .h_beta
                .names
                .iter()
                .cloned()
                .chain(d.h_psi.names.iter().map(|n| format!("Z*{n}")))
                .collect();
            Error::RankDeficient {
                design: "weighted outcome regression".into(),
                columns: columns
                    .iter()
                    .map(|c| {
                        c.trim_start_matches('#')
                            .parse::<usize>()
                            .ok()
                            .and_then(|j| names.get(j).cloned())
                            .unwrap_or_else(|| c.clone())
                    })
                    .collect(),
            }
        }
        other => other,
    }
}

/// MI-WOLS with the given weighting scheme.
pub fn miwols(design: &AugmentedDesign, data: &Dataset, scheme: WeightKind) -> Result<FitResult> {
    Analysis::new(design, data).miwols(scheme)
}

/// AIPW estimate of the average treatment effect.
pub fn aipw_ate(design: &AugmentedDesign, data: &Dataset) -> Result<FitResult> {
    Analysis::new(design, data).aipw()
}

pub fn g_estimation(design: &AugmentedDesign, data: &Dataset) -> Result<FitResult> {
    Analysis::new(design, data).g_estimation()
}
