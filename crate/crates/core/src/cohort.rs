//! Synthetic antihypertensive-prescription cohort: baseline covariates with
//! published marginal frequencies, two partially observed categorical
//! confounders (ethnicity, baseline eGFR category), a confounded binary
//! treatment and a continuous eGFR outcome with a known effect.
//!
//! Joint structure is ours: covariates are independent except that the
//! baseline eGFR category depends on age (<45 vs older) with the marginal
//! preserved. Missingness is MAR given fully observed covariates. Both the
//! treatment and outcome mechanisms are functions of the missing-indicator
//! encoding plus one `hypertension x eGFR-missing` interaction; dropping
//! that interaction from a working model is what makes it misspecified.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{level_name, AugmentedDesign, Covariate, Dataset, ModelSpec, PartialCovariate, Term, MISSING_LEVEL};
use crate::error::{Error, Result};
use crate::estimators::{Analysis, EstimateOptions, Method};
use crate::linalg::expit;
use crate::rng::{bernoulli, hash_words, stream_rng};
use crate::weights::WeightKind;

pub const FULL_N: usize = 570_586;
pub const TRUE_EFFECT: f64 = -0.6831;

pub const BINARY: [&str; 6] = ["diabetes", "hypertension", "cardiac_failure", "arrhythmia", "heart_disease", "female"];
pub const AGE: &str = "age";
pub const CALENDAR: &str = "calendar";
pub const ETHNICITY: &str = "ethnicity";
pub const EGFR_BASELINE: &str = "egfr_baseline";
pub const OUTCOME: &str = "egfr";
pub const TREATMENT: &str = "acei_arb";

pub const AGE_LEVELS: [&str; 8] = ["<45", "45-54", "55-59", "60-64", "65-69", "70-74", "75-84", ">=85"];
pub const CALENDAR_LEVELS: [&str; 5] = ["<=2000", "2001-2004", "2005-2008", "2009-2011", "2012-2014"];
pub const ETHNICITY_LEVELS: [&str; 5] = ["White", "South Asian", "Black", "Other", "Mixed"];
pub const EGFR_LEVELS: [&str; 4] = ["<30", "30-44", "45-59", ">=60"];

fn normalize(counts: &[f64]) -> Vec<f64> {
    let t: f64 = counts.iter().sum();
    counts.iter().map(|c| c / t).collect()
}

/// Frequencies of the baseline characteristics. Categorical partially
/// observed variables are given as distributions among the observed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Marginals {
    pub binary: BTreeMap<String, f64>,
    pub age: Vec<f64>,
    pub calendar: Vec<f64>,
    pub ethnicity: Vec<f64>,
    pub egfr: Vec<f64>,
    /// Added to the eGFR category distribution of patients aged 45 or more;
    /// the <45 distribution is shifted the other way so the marginal is kept.
    pub egfr_older_shift: Vec<f64>,
}

impl Default for Marginals {
    fn default() -> Self {
        let binary = BINARY
            .iter()
            .zip([83496.0, 364614.0, 31853.0, 56200.0, 118486.0, 298839.0])
            .map(|(k, c)| (k.to_string(), c / FULL_N as f64))
            .collect();
        Self {
            binary,
            age: normalize(&[342080.0, 116258.0, 47433.0, 34242.0, 19906.0, 7908.0, 2221.0, 538.0]),
            calendar: normalize(&[32890.0, 85662.0, 141807.0, 149111.0, 161116.0]),
            ethnicity: normalize(&[217496.0, 7999.0, 5128.0, 2335.0, 1131.0]),
            egfr: normalize(&[235571.0, 26343.0, 5625.0, 1101.0]),
            egfr_older_shift: vec![0.04, -0.03, -0.008, -0.002],
        }
    }
}

/// Missingness probabilities: `expit(a + slope * calendar_index + ...)` with
/// `a` solved so the expected rate hits `rate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MissingnessModel {
    pub rate: f64,
    pub calendar_slope: f64,
    /// Binary covariate effects on the log-odds of being missing.
    pub effects: BTreeMap<String, f64>,
}

/// Log-odds or mean contributions of each covariate. Categorical vectors
/// start with the reference level, whose entry is ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Coefficients {
    pub binary: BTreeMap<String, f64>,
    pub age: Vec<f64>,
    pub calendar: Vec<f64>,
    pub ethnicity: Vec<f64>,
    pub ethnicity_missing: f64,
    pub egfr: Vec<f64>,
    pub egfr_missing: f64,
    /// Coefficient of `(hypertension - p_h)(eGFR missing - p_m)`.
    pub interaction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CohortConfig {
    pub n: usize,
    pub seed: u64,
    pub true_effect: f64,
    pub treated_fraction: f64,
    pub outcome_mean: f64,
    pub outcome_sd: f64,
    pub marginals: Marginals,
    pub ethnicity_missingness: MissingnessModel,
    pub egfr_missingness: MissingnessModel,
    pub treatment: Coefficients,
    pub outcome: Coefficients,
}

fn bmap(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            n: FULL_N,
            seed: 2024,
            true_effect: TRUE_EFFECT,
            treated_fraction: 155982.0 / FULL_N as f64,
            outcome_mean: 82.15,
            outcome_sd: 17.82,
            marginals: Marginals::default(),
            ethnicity_missingness: MissingnessModel {
                rate: 336497.0 / FULL_N as f64,
                calendar_slope: -0.25,
                effects: bmap(&[("female", 0.1)]),
            },
            egfr_missingness: MissingnessModel {
                rate: 301946.0 / FULL_N as f64,
                calendar_slope: -0.15,
                effects: bmap(&[("diabetes", -0.4)]),
            },
            treatment: Coefficients {
                binary: bmap(&[
                    ("diabetes", 0.17),
                    ("hypertension", 0.10),
                    ("cardiac_failure", 0.19),
                    ("arrhythmia", 0.02),
                    ("heart_disease", 0.04),
                    ("female", -0.08),
                ]),
                age: vec![0.0, 0.06, -0.02, -0.04, -0.04, -0.09, -0.01, -0.2],
                calendar: vec![0.0; 5],
                ethnicity: vec![0.0; 5],
                ethnicity_missing: 0.0,
                egfr: vec![0.0, 0.02, 0.04, 0.1],
                egfr_missing: -0.12,
                interaction: -0.082,
            },
            outcome: Coefficients {
                binary: bmap(&[
                    ("diabetes", -3.0),
                    ("hypertension", -2.0),
                    ("cardiac_failure", -4.0),
                    ("arrhythmia", -2.0),
                    ("heart_disease", -2.0),
                    ("female", 1.5),
                ]),
                age: vec![0.0, -4.0, -8.0, -11.0, -14.0, -17.0, -21.0, -25.0],
                calendar: vec![0.0, 0.5, 1.0, 1.5, 2.0],
                ethnicity: vec![0.0, 2.0, 4.0, 1.0, 1.0],
                ethnicity_missing: 0.5,
                egfr: vec![0.0, 5.0, 10.0, 15.0],
                egfr_missing: 3.0,
                interaction: 36.0,
            },
        }
    }
}

fn check_dist(name: &str, p: &[f64], len: usize) -> Result<()> {
    if p.len() != len {
        return Err(Error::Config(format!("{name}: expected {len} probabilities, got {}", p.len())));
    }
    if p.iter().any(|&v| !(0.0..=1.0).contains(&v)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("{name}: probabilities must lie in [0, 1] and sum to 1")));
    }
    Ok(())
}

fn check_len(name: &str, v: &[f64], len: usize) -> Result<()> {
    if v.len() != len {
        return Err(Error::Config(format!("{name}: expected {len} coefficients, got {}", v.len())));
    }
    Ok(())
}

fn check_rate(name: &str, r: f64) -> Result<()> {
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::Config(format!("{name} must lie in (0, 1), got {r}")));
    }
    Ok(())
}

impl CohortConfig {
    pub fn validate(&self) -> Result<()> {
        let m = &self.marginals;
        check_dist("age", &m.age, AGE_LEVELS.len())?;
        check_dist("calendar", &m.calendar, CALENDAR_LEVELS.len())?;
        check_dist("ethnicity", &m.ethnicity, ETHNICITY_LEVELS.len())?;
        check_dist("egfr", &m.egfr, EGFR_LEVELS.len())?;
        check_len("egfr_older_shift", &m.egfr_older_shift, EGFR_LEVELS.len())?;
        if m.egfr_older_shift.iter().sum::<f64>().abs() > 1e-9 {
            return Err(Error::Config("egfr_older_shift must sum to 0".into()));
        }
        for b in BINARY {
            check_rate(b, *m.binary.get(b).ok_or_else(|| Error::Config(format!("missing marginal for `{b}`")))?)?;
        }
        for c in [&self.treatment, &self.outcome] {
            check_len("age coefficients", &c.age, AGE_LEVELS.len())?;
            check_len("calendar coefficients", &c.calendar, CALENDAR_LEVELS.len())?;
            check_len("ethnicity coefficients", &c.ethnicity, ETHNICITY_LEVELS.len())?;
            check_len("egfr coefficients", &c.egfr, EGFR_LEVELS.len())?;
            for k in c.binary.keys() {
                if !BINARY.contains(&k.as_str()) {
                    return Err(Error::Config(format!("unknown covariate `{k}`")));
                }
            }
        }
        for mm in [&self.ethnicity_missingness, &self.egfr_missingness] {
            check_rate("missingness rate", mm.rate)?;
            for k in mm.effects.keys() {
                if !BINARY.contains(&k.as_str()) {
                    return Err(Error::Config(format!("unknown covariate `{k}`")));
                }
            }
        }
        check_rate("treated_fraction", self.treated_fraction)?;
        if self.n < 1000 {
            return Err(Error::Config(format!("cohort size {} is too small", self.n)));
        }
        if !(self.outcome_sd > 0.0) {
            return Err(Error::Config("outcome_sd must be positive".into()));
        }
        Ok(())
    }

    pub fn egfr_distribution(&self, older: bool) -> Vec<f64> {
        let m = &self.marginals;
        let p_old = 1.0 - m.age[0];
        m.egfr
            .iter()
            .zip(&m.egfr_older_shift)
            .map(|(&q, &d)| if older { q + d } else { q - d * p_old / m.age[0] })
            .collect()
    }
}

fn draw_category<R: Rng>(rng: &mut R, p: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, &pk) in p.iter().enumerate() {
        acc += pk;
        if u < acc {
            return k;
        }
    }
    p.len() - 1
}

/// Intercept `a` with `mean(expit(a + lin)) = target`, by safeguarded
/// Newton iteration on a monotone function.
pub fn solve_intercept(lin: &[f64], target: f64) -> f64 {
    let n = lin.len() as f64;
    let eval = |a: f64| {
        lin.iter().fold((0.0, 0.0), |(f, d), &l| {
            let p = expit(a + l);
            (f + p, d + p * (1.0 - p))
        })
    };
    let (mut lo, mut hi) = (-40.0, 40.0);
    let mut a = (target / (1.0 - target)).ln();
    for _ in 0..200 {
        let (f, d) = eval(a);
        let g = f / n - target;
        if g.abs() < 1e-14 {
            break;
        }
        if g < 0.0 {
            lo = a;
        } else {
            hi = a;
        }
        let next = a - g * n / d;
        a = if d > 0.0 && next > lo && next < hi { next } else { 0.5 * (lo + hi) };
        if hi - lo < 1e-15 {
            break;
        }
    }
    a
}

/// Latent covariates of one cohort before masking.
struct Covariates {
    binary: Vec<Vec<f64>>,
    age: Vec<usize>,
    calendar: Vec<usize>,
    ethnicity: Vec<usize>,
    egfr: Vec<usize>,
    eth_obs: Vec<bool>,
    egfr_obs: Vec<bool>,
}

impl Covariates {
    fn linear(&self, c: &Coefficients, i: usize, p_h: f64, p_m: f64) -> f64 {
        let mut s = 0.0;
        for (b, name) in BINARY.iter().enumerate() {
            s += c.binary.get(*name).copied().unwrap_or(0.0) * self.binary[b][i];
        }
        s += c.age[self.age[i]] - c.age[0];
        s += c.calendar[self.calendar[i]] - c.calendar[0];
        s += if self.eth_obs[i] { c.ethnicity[self.ethnicity[i]] - c.ethnicity[0] } else { c.ethnicity_missing };
        s += if self.egfr_obs[i] { c.egfr[self.egfr[i]] - c.egfr[0] } else { c.egfr_missing };
        let h = self.binary[1][i];
        let m = if self.egfr_obs[i] { 0.0 } else { 1.0 };
        s + c.interaction * (h - p_h) * (m - p_m)
    }
}

fn missingness<R: Rng>(rng: &mut R, model: &MissingnessModel, cov: &Covariates) -> Vec<bool> {
    let n = cov.age.len();
    let lin: Vec<f64> = (0..n)
        .map(|i| {
            let mut s = model.calendar_slope * cov.calendar[i] as f64;
            for (b, name) in BINARY.iter().enumerate() {
                s += model.effects.get(*name).copied().unwrap_or(0.0) * cov.binary[b][i];
            }
            s
        })
        .collect();
    let a = solve_intercept(&lin, model.rate);
    lin.iter().map(|&l| bernoulli(rng, expit(a + l)) == 0.0).collect()
}

/// Generated cohort with the latent pieces kept for checks.
#[derive(Debug, Clone)]
pub struct Cohort {
    pub data: Dataset,
    pub propensity: Vec<f64>,
    /// Outcome mean without the treatment term.
    pub mu0: Vec<f64>,
    pub noise_sd: f64,
}

pub fn generate_cohort(cfg: &CohortConfig) -> Result<Dataset> {
    Ok(generate_cohort_latent(cfg)?.data)
}

pub fn generate_cohort_latent(cfg: &CohortConfig) -> Result<Cohort> {
    cfg.validate()?;
    let n = cfg.n;
    let m = &cfg.marginals;
    let mut rng = stream_rng(cfg.seed, hash_words("cohort", &[n as u64]), 0);
    let young = cfg.egfr_distribution(false);
    let older = cfg.egfr_distribution(true);
    let mut cov = Covariates {
        binary: vec![Vec::with_capacity(n); BINARY.len()],
        age: Vec::with_capacity(n),
        calendar: Vec::with_capacity(n),
        ethnicity: Vec::with_capacity(n),
        egfr: Vec::with_capacity(n),
        eth_obs: Vec::new(),
        egfr_obs: Vec::new(),
    };
    for _ in 0..n {
        for (b, name) in BINARY.iter().enumerate() {
            let v = bernoulli(&mut rng, m.binary[*name]);
            cov.binary[b].push(v);
        }
        let age = draw_category(&mut rng, &m.age);
        cov.age.push(age);
        cov.calendar.push(draw_category(&mut rng, &m.calendar));
        cov.ethnicity.push(draw_category(&mut rng, &m.ethnicity));
        cov.egfr.push(draw_category(&mut rng, if age == 0 { &young } else { &older }));
    }
    cov.eth_obs = missingness(&mut rng, &cfg.ethnicity_missingness, &cov);
    cov.egfr_obs = missingness(&mut rng, &cfg.egfr_missingness, &cov);

    let p_h = m.binary["hypertension"];
    let p_m = cfg.egfr_missingness.rate;
    let t_lin: Vec<f64> = (0..n).map(|i| cov.linear(&cfg.treatment, i, p_h, p_m)).collect();
    let a0 = solve_intercept(&t_lin, cfg.treated_fraction);
    let propensity: Vec<f64> = t_lin.iter().map(|&l| expit(a0 + l)).collect();
    let z: Vec<f64> = propensity.iter().map(|&p| bernoulli(&mut rng, p)).collect();

    let mut mu: Vec<f64> = (0..n).map(|i| cov.linear(&cfg.outcome, i, p_h, p_m)).collect();
    let mean_with_effect = |mu: &[f64]| {
        let v: Vec<f64> = mu.iter().zip(&z).map(|(m, zi)| m + cfg.true_effect * zi).collect();
        let mean = v.iter().sum::<f64>() / n as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        (mean, var)
    };
    let (mean, var) = mean_with_effect(&mu);
    let noise_var = cfg.outcome_sd.powi(2) - var;
    if noise_var <= 0.0 {
        return Err(Error::Config(format!(
            "outcome coefficients explain variance {var:.2}, more than outcome_sd^2"
        )));
    }
    let shift = cfg.outcome_mean - mean;
    mu.iter_mut().for_each(|v| *v += shift);
    let noise_sd = noise_var.sqrt();
    let y: Vec<f64> = (0..n)
        .map(|i| mu[i] + cfg.true_effect * z[i] + noise_sd * rng.sample::<f64, _>(StandardNormal))
        .collect();

    let strings = |l: &[&str]| l.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let codes = |v: &[usize]| v.iter().map(|&c| c as f64).collect::<Vec<_>>();
    let masked = |v: &[usize], obs: &[bool]| {
        v.iter().zip(obs).map(|(&c, &o)| if o { c as f64 } else { f64::NAN }).collect::<Vec<_>>()
    };
    let mut observed: Vec<Covariate> = BINARY
        .iter()
        .zip(&cov.binary)
        .map(|(name, v)| Covariate::numeric(*name, v.clone()))
        .collect();
    observed.push(Covariate::categorical(AGE, strings(&AGE_LEVELS), codes(&cov.age)));
    observed.push(Covariate::categorical(CALENDAR, strings(&CALENDAR_LEVELS), codes(&cov.calendar)));
    let partial = vec![
        PartialCovariate::new(
            Covariate::categorical(ETHNICITY, strings(&ETHNICITY_LEVELS), masked(&cov.ethnicity, &cov.eth_obs)),
            cov.eth_obs.clone(),
        ),
        PartialCovariate::new(
            Covariate::categorical(EGFR_BASELINE, strings(&EGFR_LEVELS), masked(&cov.egfr, &cov.egfr_obs)),
            cov.egfr_obs.clone(),
        ),
    ];
    let data = Dataset::new(y, z, observed, partial)?.with_names(OUTCOME, TREATMENT);
    Ok(Cohort { data, propensity, mu0: mu, noise_sd })
}

/// Encoded main-effect columns of the cohort.
pub fn main_terms() -> Vec<Term> {
    let mut t: Vec<Term> = BINARY.iter().map(|b| Term::column(*b)).collect();
    let levels = |name: &str, l: &[&str], t: &mut Vec<Term>| {
        t.extend(l.iter().skip(1).map(|lv| Term::column(level_name(name, lv))));
    };
    levels(AGE, &AGE_LEVELS, &mut t);
    levels(CALENDAR, &CALENDAR_LEVELS, &mut t);
    levels(ETHNICITY, &ETHNICITY_LEVELS, &mut t);
    t.push(Term::column(level_name(ETHNICITY, MISSING_LEVEL)));
    levels(EGFR_BASELINE, &EGFR_LEVELS, &mut t);
    t.push(Term::column(level_name(EGFR_BASELINE, MISSING_LEVEL)));
    t
}

pub fn interaction_term() -> Term {
    Term::interaction("hypertension", level_name(EGFR_BASELINE, MISSING_LEVEL))
}

/// Working models; a correct model adds the interaction to the main effects.
pub fn cohort_models(treatment_correct: bool, outcome_correct: bool) -> ModelSpec {
    let with = |ok: bool| {
        let mut t = main_terms();
        if ok {
            t.push(interaction_term());
        }
        t
    };
    ModelSpec::new(with(treatment_correct), with(outcome_correct), vec![])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IllustrationRow {
    pub method: String,
    /// `None` for methods that do not use a treatment model.
    pub pi_model_correct: Option<bool>,
    pub y_model_correct: bool,
    pub estimate: f64,
    pub bias: f64,
    pub se: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
}

impl IllustrationRow {
    pub fn covers(&self, truth: f64) -> bool {
        self.ci_lower <= truth && truth <= self.ci_upper
    }
}

pub const ILLUSTRATION_METHODS: [Method; 6] = [
    Method::Miwols(WeightKind::Unw),
    Method::Miwols(WeightKind::Abs),
    Method::Miwols(WeightKind::Ipw),
    Method::Miwols(WeightKind::Sipw),
    Method::Aipw,
    Method::GEst,
];

/// The four (treatment, outcome) model combinations, each paired with the
/// methods evaluated under it; UNW only varies with the outcome model.
pub fn illustration_grid(methods: &[Method]) -> Vec<(Method, Option<bool>, bool)> {
    let mut out = Vec::new();
    for &m in methods {
        if m.uses_propensity() {
            for (pi, y) in [(true, true), (true, false), (false, true), (false, false)] {
                out.push((m, Some(pi), y));
            }
        } else {
            out.push((m, None, true));
            out.push((m, None, false));
        }
    }
    out
}

/// Fits every method under every model combination.
pub fn run_illustration(data: &Dataset, truth: f64, methods: &[Method], options: EstimateOptions) -> Result<Vec<IllustrationRow>> {
    let mut designs = BTreeMap::new();
    for (pi, y) in [(true, true), (true, false), (false, true), (false, false)] {
        designs.insert((pi, y), AugmentedDesign::from_dataset(data, &cohort_models(pi, y))?);
    }
    let grid = illustration_grid(methods);
    let analyses: BTreeMap<(bool, bool), Analysis> =
        designs.iter().map(|(k, d)| (*k, Analysis::with_options(d, data, options))).collect();
    // The treatment design does not depend on the outcome model, so fit
    // each propensity model once and share it.
    for pi in [true, false] {
        if let Ok(p) = analyses[&(pi, true)].propensity() {
            analyses[&(pi, false)].set_propensity(p.clone());
        }
    }
    grid.par_iter()
        .map(|&(m, pi, y)| {
            let a = &analyses[&(pi.unwrap_or(true), y)];
            let r = a.run(m)?;
            let (est, se) = (r.psi_hat[0], r.se[0]);
            Ok(IllustrationRow {
                method: m.label().into(),
                pi_model_correct: pi,
                y_model_correct: y,
                estimate: est,
                bias: est - truth,
                se,
                ci_lower: r.ci95[0].0,
                ci_upper: r.ci95[0].1,
            })
        })
        .collect()
}

pub fn illustration_markdown(rows: &[IllustrationRow]) -> String {
    let mark = |b: bool| if b { "yes" } else { "no" };
    let mut s = String::from(
        "| method | pi-model correct | y-model correct | estimate | bias | SE | 95% CI |\n|---|---|---|---:|---:|---:|---|\n",
    );
    for r in rows {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {:.3} | {:.3} | {:.3} | [{:.3}, {:.3}] |",
            r.method,
            r.pi_model_correct.map(mark).unwrap_or("-"),
            mark(r.y_model_correct),
            r.estimate,
            r.bias,
            r.se,
            r.ci_lower,
            r.ci_upper
        );
    }
    s
}

/// Percentage of the cohort in each reported category; partially observed
/// variables include their `missing` share.
pub fn marginal_summary(data: &Dataset) -> BTreeMap<String, f64> {
    let n = data.n() as f64;
    let mut out = BTreeMap::new();
    for c in &data.observed {
        match &c.kind {
            crate::data::ColumnKind::Numeric => {
                out.insert(c.name.clone(), 100.0 * c.values.iter().sum::<f64>() / n);
            }
            crate::data::ColumnKind::Categorical { levels } => {
                for (l, lv) in levels.iter().enumerate() {
                    let k = c.values.iter().filter(|&&v| v as usize == l).count();
                    out.insert(level_name(&c.name, lv), 100.0 * k as f64 / n);
                }
            }
        }
    }
    for p in &data.partial {
        if let crate::data::ColumnKind::Categorical { levels } = &p.covariate.kind {
            for (l, lv) in levels.iter().enumerate() {
                let k = p
                    .covariate
                    .values
                    .iter()
                    .zip(&p.observed)
                    .filter(|(&v, &o)| o && v as usize == l)
                    .count();
                out.insert(level_name(p.name(), lv), 100.0 * k as f64 / n);
            }
        }
        out.insert(level_name(p.name(), MISSING_LEVEL), 100.0 * p.missing_fraction());
    }
    out.insert(TREATMENT.into(), 100.0 * data.treated_fraction());
    out
}

/// Published percentages keyed like [`marginal_summary`].
pub fn reference_marginals() -> BTreeMap<String, f64> {
    let n = FULL_N as f64;
    let mut out = BTreeMap::new();
    for (b, c) in BINARY.iter().zip([83496.0, 364614.0, 31853.0, 56200.0, 118486.0, 298839.0]) {
        out.insert(b.to_string(), 100.0 * c / n);
    }
    let mut cat = |name: &str, levels: &[&str], counts: &[f64]| {
        for (lv, c) in levels.iter().zip(counts) {
            out.insert(level_name(name, lv), 100.0 * c / n);
        }
    };
    cat(AGE, &AGE_LEVELS, &[342080.0, 116258.0, 47433.0, 34242.0, 19906.0, 7908.0, 2221.0, 538.0]);
    cat(CALENDAR, &CALENDAR_LEVELS, &[32890.0, 85662.0, 141807.0, 149111.0, 161116.0]);
    let mut eth = ETHNICITY_LEVELS.to_vec();
    eth.push(MISSING_LEVEL);
    cat(ETHNICITY, &eth, &[217496.0, 7999.0, 5128.0, 2335.0, 1131.0, 336497.0]);
    let mut eg = EGFR_LEVELS.to_vec();
    eg.push(MISSING_LEVEL);
    cat(EGFR_BASELINE, &eg, &[235571.0, 26343.0, 5625.0, 1101.0, 301946.0]);
    out.insert(TREATMENT.into(), 100.0 * 155982.0 / n);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_distributions_sum_to_one() {
        let c = CohortConfig::default();
        c.validate().unwrap();
        for older in [false, true] {
            let d = c.egfr_distribution(older);
            assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(d.iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn older_shift_preserves_marginal() {
        let c = CohortConfig::default();
        let p_young = c.marginals.age[0];
        let (y, o) = (c.egfr_distribution(false), c.egfr_distribution(true));
        for k in 0..4 {
            let mix = p_young * y[k] + (1.0 - p_young) * o[k];
            assert!((mix - c.marginals.egfr[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn bad_distribution_is_a_config_error() {
        let mut c = CohortConfig::default();
        c.marginals.age[0] += 0.01;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = CohortConfig::default();
        c.outcome.age.pop();
        assert!(c.validate().is_err());
    }

    #[test]
    fn intercept_solver_hits_target() {
        let lin = [-1.0, 0.0, 0.5, 2.0];
        let a = solve_intercept(&lin, 0.3);
        let m = lin.iter().map(|&l| expit(a + l)).sum::<f64>() / 4.0;
        assert!((m - 0.3).abs() < 1e-12);
    }

    #[test]
    fn small_cohort_is_reproducible_and_calibrated() {
        let cfg = CohortConfig { n: 20_000, ..Default::default() };
        let a = generate_cohort(&cfg).unwrap();
        let b = generate_cohort(&cfg).unwrap();
        assert_eq!(a.y, b.y);
        let mean = a.y.iter().sum::<f64>() / a.n() as f64;
        assert!((mean - 82.15).abs() < 0.5);
        assert!((a.partial[0].missing_fraction() - 0.590).abs() < 0.02);
        assert!((a.treated_fraction() - 0.2734).abs() < 0.02);
    }

    #[test]
    fn grid_has_twenty_two_cells() {
        assert_eq!(illustration_grid(&ILLUSTRATION_METHODS).len(), 22);
    }
}
