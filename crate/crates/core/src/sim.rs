//! Monte Carlo simulation study: the data-generating mechanism with a
//! partially observed binary confounder, the scenario grid, the replicate
//! runner and the aggregated metrics.

use std::fmt::Write as _;
use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{AugmentedDesign, Covariate, Dataset, ModelSpec, PartialCovariate, Term};
use crate::error::{Error, Result};
use crate::estimators::{select_methods, Analysis, EstimateOptions, Method};
use crate::inference::{ase_ese_report, Z95};
use crate::linalg::expit;
use crate::rng::{bernoulli, hash_words, stream_rng};
use crate::weights::WeightKind;

pub const P_X: f64 = 0.67;
pub const P_C: f64 = 0.58;
pub const OUTCOME_SD: f64 = 3.0;
pub const PSI0: f64 = -2.35;
/// Scenario rows with more failed replicates than this are flagged invalid.
pub const MAX_FAILURE_RATE: f64 = 0.05;

pub const TAU_VIOLATED: f64 = 1.25;
pub const LAMBDA_VIOLATED: f64 = 1.38;
pub const GAMMA_VIOLATED: f64 = -1.55;
pub const DELTA_MISSPECIFIED: f64 = -4.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub tau: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub delta_z: f64,
    pub delta_y: f64,
    pub psi0: f64,
    pub psi1: f64,
    pub n: usize,
    pub reps: usize,
    pub base_seed: u64,
}

/// Which identifying assumptions hold and which working models are correct.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ScenarioFlags {
    pub msita: bool,
    pub cit: bool,
    pub cio: bool,
    pub treatment_correct: bool,
    pub outcome_correct: bool,
}

impl ScenarioFlags {
    /// `CC`, `CI`, `IC` or `II`: treatment model then outcome model.
    pub fn spec_code(&self) -> &'static str {
        match (self.treatment_correct, self.outcome_correct) {
            (true, true) => "CC",
            (true, false) => "CI",
            (false, true) => "IC",
            (false, false) => "II",
        }
    }

    /// e.g. `+mSITA +CIT -CIO`
    pub fn assumptions(&self) -> String {
        let s = |b: bool| if b { '+' } else { '-' };
        format!("{}mSITA {}CIT {}CIO", s(self.msita), s(self.cit), s(self.cio))
    }
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            tau: 0.0,
            lambda: 0.0,
            gamma: 0.0,
            delta_z: 0.0,
            delta_y: 0.0,
            psi0: PSI0,
            psi1: 0.0,
            n: 500,
            reps: 1000,
            base_seed: 20240917,
        }
    }
}

impl ScenarioConfig {
    pub fn flags(&self) -> ScenarioFlags {
        ScenarioFlags {
            msita: self.tau == 0.0,
            cit: self.lambda == 0.0,
            cio: self.gamma == 0.0,
            treatment_correct: self.delta_z == 0.0,
            outcome_correct: self.delta_y == 0.0,
        }
    }

    pub fn heterogeneous(&self) -> bool {
        self.psi1 != 0.0
    }

    /// Human-readable key, e.g. `+mSITA +CIT +CIO CC`.
    pub fn label(&self) -> String {
        let f = self.flags();
        let mut s = format!("{} {}", f.assumptions(), f.spec_code());
        if self.heterogeneous() {
            s.push_str(" het");
        }
        s
    }

    /// Identifier of the mechanism and sample size, used to key the random
    /// streams. Replicate count and seed are deliberately excluded so that
    /// replicate `r` is the same dataset whatever `reps` is.
    pub fn scenario_id(&self) -> u64 {
        let w = [
            self.tau.to_bits(),
            self.lambda.to_bits(),
            self.gamma.to_bits(),
            self.delta_z.to_bits(),
            self.delta_y.to_bits(),
            self.psi0.to_bits(),
            self.psi1.to_bits(),
            self.n as u64,
        ];
        hash_words("scenario", &w)
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [self.tau, self.lambda, self.gamma, self.delta_z, self.delta_y, self.psi0, self.psi1];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("scenario parameters must be finite".into()));
        }
        if self.n < 20 {
            return Err(Error::Config(format!("sample size {} is too small", self.n)));
        }
        if self.reps == 0 {
            return Err(Error::Config("reps must be at least 1".into()));
        }
        Ok(())
    }

    /// Truth for a reported parameter name.
    pub fn truth(&self, parameter: &str) -> Option<f64> {
        match parameter {
            "psi0" => Some(self.psi0),
            "psi1" => Some(self.psi1),
            "ATE" => Some(self.psi0 + P_C * self.psi1),
            _ => None,
        }
    }
}

/// One simulated dataset together with the latent quantities the analyst
/// never sees.
#[derive(Debug, Clone)]
pub struct LatentDraw {
    pub data: Dataset,
    pub u_z: Vec<f64>,
    pub u_y: Vec<f64>,
    pub x: Vec<f64>,
    pub r: Vec<f64>,
    pub propensity: Vec<f64>,
    /// Outcome means at `Z = 1` and `Z = 0`; the realized outcome adds the
    /// same noise draw to whichever applies.
    pub mu1: Vec<f64>,
    pub mu0: Vec<f64>,
}

pub fn generate_latent(cfg: &ScenarioConfig, rep: u64) -> LatentDraw {
    let n = cfg.n;
    let mut rng = stream_rng(cfg.base_seed, cfg.scenario_id(), rep);
    let mut d = LatentDraw {
        data: Dataset {
            outcome_name: "Y".into(),
            treatment_name: "Z".into(),
            y: Vec::with_capacity(n),
            z: Vec::with_capacity(n),
            observed: Vec::new(),
            partial: Vec::new(),
        },
        u_z: Vec::with_capacity(n),
        u_y: Vec::with_capacity(n),
        x: Vec::with_capacity(n),
        r: Vec::with_capacity(n),
        propensity: Vec::with_capacity(n),
        mu1: Vec::with_capacity(n),
        mu0: Vec::with_capacity(n),
    };
    let mut c_col = Vec::with_capacity(n);
    for _ in 0..n {
        let u_z: f64 = rng.sample(StandardNormal);
        let u_y: f64 = rng.sample(StandardNormal);
        let x = bernoulli(&mut rng, P_X);
        let c = bernoulli(&mut rng, P_C);
        let r = bernoulli(&mut rng, 1.0 - expit(-0.5 + 1.48 * u_z + 1.36 * u_y));
        let pi = expit(
            -1.2 + cfg.tau * u_z + 1.38 * x * r + cfg.lambda * x * (1.0 - r) + 2.0 * r + 1.69 * c + cfg.delta_z * c * r,
        );
        let z = bernoulli(&mut rng, pi);
        let eps: f64 = rng.sample::<f64, _>(StandardNormal) * OUTCOME_SD;
        let base = 1.0 - 2.2 * cfg.tau * u_y - 1.55 * x * r + cfg.gamma * x * (1.0 - r) + 1.8 * r - 1.7 * c
            + cfg.delta_y * c * r;
        let mu1 = base + cfg.psi0 + cfg.psi1 * c;
        let y = if z == 1.0 { mu1 } else { base } + eps;
        d.u_z.push(u_z);
        d.u_y.push(u_y);
        d.x.push(x);
        d.r.push(r);
        d.propensity.push(pi);
        d.mu1.push(mu1);
        d.mu0.push(base);
        d.data.y.push(y);
        d.data.z.push(z);
        c_col.push(c);
    }
    let masked: Vec<f64> = d.x.iter().zip(&d.r).map(|(&x, &r)| if r == 1.0 { x } else { f64::NAN }).collect();
    let observed: Vec<bool> = d.r.iter().map(|&r| r == 1.0).collect();
    d.data.observed = vec![Covariate::numeric("C", c_col)];
    d.data.partial = vec![PartialCovariate::new(Covariate::numeric("X", masked), observed)];
    d
}

/// Replicate `rep` of the scenario as the analyst sees it.
pub fn generate_scenario(cfg: &ScenarioConfig, rep: u64) -> Dataset {
    generate_latent(cfg, rep).data
}

/// Working models: treatment and treatment-free parts use
/// `{1, X*R_X, R_X, C}`, the blip `{1}` or `{1, C}` when effects vary with C.
pub fn working_models(cfg: &ScenarioConfig) -> ModelSpec {
    let main = vec![Term::interaction("X", "R_X"), Term::column("R_X"), Term::column("C")];
    let blip = if cfg.heterogeneous() { vec![Term::column("C")] } else { vec![] };
    ModelSpec::new(main.clone(), main, blip)
}

/// Estimates of one method on one replicate, or the reason it failed.
#[derive(Debug, Clone, PartialEq)]
pub enum ReplicateResult {
    Ok { estimates: Vec<f64>, ses: Vec<f64> },
    Failed(String),
}

#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub config: ScenarioConfig,
    pub methods: Vec<Method>,
    /// Parameter names reported by each method, aligned with `methods`.
    pub parameters: Vec<Vec<String>>,
    /// `results[rep][method]`
    pub results: Vec<Vec<ReplicateResult>>,
}

fn parameter_names(cfg: &ScenarioConfig, m: Method) -> Vec<String> {
    match (m, cfg.heterogeneous()) {
        (Method::Aipw, false) => vec!["psi0".into()],
        (Method::Aipw, true) => vec!["ATE".into()],
        (_, false) => vec!["psi0".into()],
        (_, true) => vec!["psi0".into(), "psi1".into()],
    }
}

/// Runs every method on one replicate.
pub fn run_replicate(cfg: &ScenarioConfig, methods: &[Method], rep: u64, options: EstimateOptions) -> Vec<ReplicateResult> {
    let data = generate_scenario(cfg, rep);
    let design = match AugmentedDesign::from_dataset(&data, &working_models(cfg)) {
        Ok(d) => d,
        Err(e) => return vec![ReplicateResult::Failed(e.to_string()); methods.len()],
    };
    let analysis = Analysis::with_options(&design, &data, options);
    methods
        .iter()
        .map(|&m| match analysis.run(m) {
            Ok(r) => ReplicateResult::Ok { estimates: r.psi_hat, ses: r.se },
            Err(e) => ReplicateResult::Failed(e.to_string()),
        })
        .collect()
}

/// Worker pool with the given thread count; `None` uses all cores.
pub fn worker_pool(workers: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        if w == 0 {
            return Err(Error::Config("worker count must be positive".into()));
        }
        b = b.num_threads(w);
    }
    b.build().map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

/// Runs all replicates of one scenario. Results are collected in replicate
/// order, so the output does not depend on the pool size.
pub fn run_scenario(cfg: &ScenarioConfig, methods: &[Method], options: EstimateOptions) -> Result<ScenarioRun> {
    cfg.validate()?;
    let results = (0..cfg.reps as u64)
        .into_par_iter()
        .map(|rep| run_replicate(cfg, methods, rep, options))
        .collect();
    Ok(ScenarioRun {
        config: *cfg,
        methods: methods.to_vec(),
        parameters: methods.iter().map(|&m| parameter_names(cfg, m)).collect(),
        results,
    })
}

/// Runs each scenario and aggregates the results.
pub fn run_monte_carlo(
    configs: &[ScenarioConfig],
    methods: &[Method],
    workers: Option<usize>,
    options: EstimateOptions,
) -> Result<(Vec<ScenarioRun>, MetricsTable)> {
    let pool = worker_pool(workers)?;
    let runs = pool.install(|| configs.iter().map(|c| run_scenario(c, methods, options)).collect::<Result<Vec<_>>>())?;
    let table = MetricsTable::from_runs(&runs);
    Ok((runs, table))
}

impl ScenarioRun {
    /// Estimates and SEs of parameter `j` of method index `k` over the
    /// replicates that succeeded, with their replicate indices.
    pub fn series(&self, k: usize, j: usize) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
        let mut reps = Vec::new();
        let mut est = Vec::new();
        let mut se = Vec::new();
        for (r, row) in self.results.iter().enumerate() {
            if let ReplicateResult::Ok { estimates, ses } = &row[k] {
                reps.push(r);
                est.push(estimates[j]);
                se.push(ses[j]);
            }
        }
        (reps, est, se)
    }

    pub fn failures(&self, k: usize) -> usize {
        self.results.iter().filter(|row| matches!(row[k], ReplicateResult::Failed(_))).count()
    }

    pub fn method_index(&self, m: Method) -> Option<usize> {
        self.methods.iter().position(|&x| x == m)
    }

    /// Long-format rows `(scenario, flags, scheme, parameter, replicate, estimate)`
    /// for redrawing bias boxplots.
    pub fn write_long_csv<W: Write>(&self, w: &mut csv::Writer<W>) -> Result<()> {
        let flags = self.config.flags();
        for (k, m) in self.methods.iter().enumerate() {
            for (j, p) in self.parameters[k].iter().enumerate() {
                let (reps, est, _) = self.series(k, j);
                for (r, e) in reps.iter().zip(est) {
                    w.write_record([
                        flags.spec_code().to_string(),
                        flags.assumptions(),
                        m.label().to_string(),
                        p.clone(),
                        r.to_string(),
                        fmt_f(e),
                    ])?;
                }
            }
        }
        Ok(())
    }
}

pub const LONG_CSV_HEADER: [&str; 6] = ["scenario", "flags", "scheme", "parameter", "replicate", "estimate"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub scenario: String,
    pub flags: String,
    pub spec: String,
    pub tau: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub delta_z: f64,
    pub delta_y: f64,
    pub psi1: f64,
    pub n: usize,
    pub method: String,
    pub parameter: String,
    pub truth: f64,
    pub replicates: usize,
    pub failures: usize,
    pub valid: bool,
    pub mean: f64,
    pub bias: f64,
    pub ese: Option<f64>,
    pub ase: f64,
    pub ase_ese_ratio: Option<f64>,
    pub pct_bias_over_ase: f64,
    pub coverage: f64,
    pub mse: f64,
    pub mse_relative_to_gest: Option<f64>,
    pub mc_se_bias: Option<f64>,
    pub mc_se_pct_bias_over_ase: Option<f64>,
    pub mc_se_coverage: f64,
    pub mc_se_mse_relative: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Ratio of mean squared errors over the replicates where both methods
/// succeeded, with a delta-method Monte Carlo SE from the paired errors.
fn paired_mse_ratio(a: &[(usize, f64)], b: &[(usize, f64)], truth: f64) -> Option<(f64, Option<f64>)> {
    let mut sa = Vec::new();
    let mut sb = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                sa.push((a[i].1 - truth).powi(2));
                sb.push((b[j].1 - truth).powi(2));
                i += 1;
                j += 1;
            }
        }
    }
    if sa.is_empty() {
        return None;
    }
    let (ma, mb) = (mean(&sa), mean(&sb));
    if mb <= 0.0 {
        return None;
    }
    let ratio = ma / mb;
    let m = sa.len() as f64;
    let se = (sa.len() >= 2).then(|| {
        let d: Vec<f64> = sa.iter().zip(&sb).map(|(x, y)| x - ratio * y).collect();
        let md = mean(&d);
        let v = d.iter().map(|x| (x - md).powi(2)).sum::<f64>() / (m - 1.0);
        (v / m).sqrt() / mb
    });
    Some((ratio, se))
}

impl MetricsTable {
    pub fn from_runs(runs: &[ScenarioRun]) -> Self {
        let mut rows = Vec::new();
        for run in runs {
            let cfg = &run.config;
            let flags = cfg.flags();
            let gest = run.method_index(Method::GEst);
            for (k, &m) in run.methods.iter().enumerate() {
                for (j, p) in run.parameters[k].iter().enumerate() {
                    let truth = cfg.truth(p).expect("parameter has a truth");
                    let (reps, est, se) = run.series(k, j);
                    let failures = run.failures(k);
                    let valid = failures as f64 <= MAX_FAILURE_RATE * cfg.reps as f64;
                    let rep = if est.is_empty() {
                        None
                    } else {
                        Some(ase_ese_report(&est, &se, truth))
                    };
                    let gest_pair = gest
                        .and_then(|g| run.parameters[g].iter().position(|q| q == p).map(|jj| (g, jj)))
                        .and_then(|(g, jj)| {
                            let (gr, ge, _) = run.series(g, jj);
                            let a: Vec<(usize, f64)> = reps.iter().copied().zip(est.iter().copied()).collect();
                            let b: Vec<(usize, f64)> = gr.into_iter().zip(ge).collect();
                            paired_mse_ratio(&a, &b, truth)
                        });
                    let mf = est.len() as f64;
                    let row = match rep {
                        Some(r) => MetricsRow {
                            scenario: cfg.label(),
                            flags: flags.assumptions(),
                            spec: flags.spec_code().into(),
                            tau: cfg.tau,
                            lambda: cfg.lambda,
                            gamma: cfg.gamma,
                            delta_z: cfg.delta_z,
                            delta_y: cfg.delta_y,
                            psi1: cfg.psi1,
                            n: cfg.n,
                            method: m.label().into(),
                            parameter: p.clone(),
                            truth,
                            replicates: r.replicates,
                            failures,
                            valid,
                            mean: r.mean,
                            bias: r.bias,
                            ese: r.ese,
                            ase: r.ase,
                            ase_ese_ratio: r.ratio,
                            pct_bias_over_ase: 100.0 * r.bias / r.ase,
                            coverage: r.coverage,
                            mse: r.mse,
                            mse_relative_to_gest: gest_pair.map(|g| g.0),
                            mc_se_bias: r.ese.map(|e| e / mf.sqrt()),
                            mc_se_pct_bias_over_ase: r.ese.map(|e| 100.0 * e / mf.sqrt() / r.ase),
                            mc_se_coverage: (r.coverage * (1.0 - r.coverage) / mf).sqrt(),
                            mc_se_mse_relative: gest_pair.and_then(|g| g.1),
                        },
                        None => MetricsRow {
                            scenario: cfg.label(),
                            flags: flags.assumptions(),
                            spec: flags.spec_code().into(),
                            tau: cfg.tau,
                            lambda: cfg.lambda,
                            gamma: cfg.gamma,
                            delta_z: cfg.delta_z,
                            delta_y: cfg.delta_y,
                            psi1: cfg.psi1,
                            n: cfg.n,
                            method: m.label().into(),
                            parameter: p.clone(),
                            truth,
                            replicates: 0,
                            failures,
                            valid: false,
                            mean: f64::NAN,
                            bias: f64::NAN,
                            ese: None,
                            ase: f64::NAN,
                            ase_ese_ratio: None,
                            pct_bias_over_ase: f64::NAN,
                            coverage: f64::NAN,
                            mse: f64::NAN,
                            mse_relative_to_gest: None,
                            mc_se_bias: None,
                            mc_se_pct_bias_over_ase: None,
                            mc_se_coverage: f64::NAN,
                            mc_se_mse_relative: None,
                        },
                    };
                    rows.push(row);
                }
            }
        }
        Self { rows }
    }

    pub fn find(&self, scenario: &str, method: Method, parameter: &str) -> Option<&MetricsRow> {
        self.rows
            .iter()
            .find(|r| r.scenario == scenario && r.method == method.label() && r.parameter == parameter)
    }

    pub fn write_csv<W: Write>(&self, w: &mut csv::Writer<W>) -> Result<()> {
        w.write_record(METRICS_HEADER)?;
        for r in &self.rows {
            let opt = |v: Option<f64>| v.map(fmt_f).unwrap_or_default();
            w.write_record([
                r.scenario.clone(),
                r.flags.clone(),
                r.spec.clone(),
                fmt_f(r.tau),
                fmt_f(r.lambda),
                fmt_f(r.gamma),
                fmt_f(r.delta_z),
                fmt_f(r.delta_y),
                fmt_f(r.psi1),
                r.n.to_string(),
                r.method.clone(),
                r.parameter.clone(),
                fmt_f(r.truth),
                r.replicates.to_string(),
                r.failures.to_string(),
                r.valid.to_string(),
                fmt_f(r.mean),
                fmt_f(r.bias),
                opt(r.ese),
                fmt_f(r.ase),
                opt(r.ase_ese_ratio),
                fmt_f(r.pct_bias_over_ase),
                fmt_f(r.coverage),
                fmt_f(r.mse),
                opt(r.mse_relative_to_gest),
                opt(r.mc_se_bias),
                opt(r.mc_se_pct_bias_over_ase),
                fmt_f(r.mc_se_coverage),
                opt(r.mc_se_mse_relative),
            ])?;
        }
        Ok(())
    }

    /// One markdown row per metrics row.
    pub fn to_markdown(&self) -> String {
        let mut s = String::from(
            "| scenario | method | parameter | bias | ESE | ASE | ASE/ESE | %Bias/ASE | coverage | rel. MSE | failures |\n\
             |---|---|---|---:|---:|---:|---:|---:|---:|---:|---:|\n",
        );
        let o = |v: Option<f64>, d: usize| v.map(|x| format!("{x:.d$}")).unwrap_or_else(|| "-".into());
        for r in &self.rows {
            let _ = writeln!(
                s,
                "| {} | {} | {} | {:.4} | {} | {:.4} | {} | {:.2} | {:.3} | {} | {}{} |",
                r.scenario,
                r.method,
                r.parameter,
                r.bias,
                o(r.ese, 4),
                r.ase,
                o(r.ase_ese_ratio, 3),
                r.pct_bias_over_ase,
                r.coverage,
                o(r.mse_relative_to_gest, 2),
                r.failures,
                if r.valid { "" } else { " (invalid)" },
            );
        }
        s
    }

    /// Wide layout: one line per scenario with %Bias/ASE for each method,
    /// then relative MSE for each non-reference method, with Monte Carlo
    /// SEs in parentheses.
    pub fn to_wide_markdown(&self, methods: &[Method], parameter: &str) -> String {
        let mut scen: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !scen.contains(&r.scenario.as_str()) {
                scen.push(&r.scenario);
            }
        }
        let rel: Vec<Method> = methods.iter().copied().filter(|&m| m != Method::GEst).collect();
        let mut s = String::from("| scenario |");
        for m in methods {
            let _ = write!(s, " {m} %Bias/ASE |");
        }
        for m in &rel {
            let _ = write!(s, " {m} rel. MSE |");
        }
        s.push('\n');
        s.push_str(&"|---".repeat(1 + methods.len() + rel.len()));
        s.push_str("|\n");
        for sc in scen {
            let _ = write!(s, "| {sc} |");
            for &m in methods {
                match self.find(sc, m, parameter) {
                    Some(r) => {
                        let mc = r.mc_se_pct_bias_over_ase.map(|v| format!(" ({v:.2})")).unwrap_or_default();
                        let _ = write!(s, " {:.2}{mc} |", r.pct_bias_over_ase);
                    }
                    None => s.push_str(" - |"),
                }
            }
            for &m in &rel {
                match self.find(sc, m, parameter).and_then(|r| r.mse_relative_to_gest.map(|v| (v, r.mc_se_mse_relative))) {
                    Some((v, mc)) => {
                        let mc = mc.map(|e| format!(" ({e:.2})")).unwrap_or_default();
                        let _ = write!(s, " {v:.2}{mc} |");
                    }
                    None => s.push_str(" - |"),
                }
            }
            s.push('\n');
        }
        s
    }
}

pub const METRICS_HEADER: [&str; 29] = [
    "scenario",
    "flags",
    "spec",
    "tau",
    "lambda",
    "gamma",
    "delta_z",
    "delta_y",
    "psi1",
    "n",
    "method",
    "parameter",
    "truth",
    "replicates",
    "failures",
    "valid",
    "mean",
    "bias",
    "ese",
    "ase",
    "ase_ese_ratio",
    "pct_bias_over_ase",
    "coverage",
    "mse",
    "mse_relative_to_gest",
    "mc_se_bias",
    "mc_se_pct_bias_over_ase",
    "mc_se_coverage",
    "mc_se_mse_relative",
];

/// Shortest representation that round-trips.
pub fn fmt_f(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else {
        format!("{x:?}")
    }
}

/// The sixteen scenarios of the main comparison table: mSITA holds, each
/// combination of CIT and CIO, and each pair of correct/incorrect working
/// models.
pub fn table1_grid(n: usize, reps: usize, base_seed: u64) -> Vec<ScenarioConfig> {
    let mut out = Vec::new();
    for (lambda, gamma) in [(0.0, 0.0), (LAMBDA_VIOLATED, 0.0), (0.0, GAMMA_VIOLATED), (LAMBDA_VIOLATED, GAMMA_VIOLATED)] {
        for (delta_z, delta_y) in [
            (0.0, 0.0),
            (0.0, DELTA_MISSPECIFIED),
            (DELTA_MISSPECIFIED, 0.0),
            (DELTA_MISSPECIFIED, DELTA_MISSPECIFIED),
        ] {
            out.push(ScenarioConfig {
                tau: 0.0,
                lambda,
                gamma,
                delta_z,
                delta_y,
                psi0: PSI0,
                psi1: 0.0,
                n,
                reps,
                base_seed,
            });
        }
    }
    out
}

/// The full grid over all five binary parameters.
pub fn full_grid(n: usize, reps: usize, base_seed: u64, psi1: f64) -> Vec<ScenarioConfig> {
    let mut out = Vec::new();
    for tau in [0.0, TAU_VIOLATED] {
        for mut c in table1_grid(n, reps, base_seed) {
            c.tau = tau;
            c.psi1 = psi1;
            out.push(c);
        }
    }
    out
}

/// Either one value or a list of values in a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn values(&self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

fn one<T>(v: T) -> OneOrMany<T> {
    OneOrMany::One(v)
}

/// Scenario grid as declared in a config file; every parameter accepts a
/// scalar or a list and the grid is their Cartesian product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "zero")]
    pub tau: OneOrMany<f64>,
    #[serde(default = "zero")]
    pub lambda: OneOrMany<f64>,
    #[serde(default = "zero")]
    pub gamma: OneOrMany<f64>,
    #[serde(default = "zero")]
    pub delta_z: OneOrMany<f64>,
    #[serde(default = "zero")]
    pub delta_y: OneOrMany<f64>,
    #[serde(default = "default_psi0")]
    pub psi0: OneOrMany<f64>,
    #[serde(default = "zero")]
    pub psi1: OneOrMany<f64>,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default)]
    pub base_seed: u64,
    /// Estimator names; `MI-WOLS` expands to one entry per scheme.
    #[serde(default)]
    pub estimators: Option<Vec<String>>,
    #[serde(default)]
    pub schemes: Option<Vec<WeightKind>>,
}

fn zero() -> OneOrMany<f64> {
    one(0.0)
}
fn default_psi0() -> OneOrMany<f64> {
    one(PSI0)
}
fn default_n() -> usize {
    500
}
fn default_reps() -> usize {
    1000
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            tau: zero(),
            lambda: zero(),
            gamma: zero(),
            delta_z: zero(),
            delta_y: zero(),
            psi0: default_psi0(),
            psi1: zero(),
            n: default_n(),
            reps: default_reps(),
            base_seed: 0,
            estimators: None,
            schemes: None,
        }
    }
}

impl GridConfig {
    pub fn scenarios(&self) -> Vec<ScenarioConfig> {
        let mut out = Vec::new();
        for &tau in &self.tau.values() {
            for &lambda in &self.lambda.values() {
                for &gamma in &self.gamma.values() {
                    for &psi1 in &self.psi1.values() {
                        for &psi0 in &self.psi0.values() {
                            for &delta_z in &self.delta_z.values() {
                                for &delta_y in &self.delta_y.values() {
                                    out.push(ScenarioConfig {
                                        tau,
                                        lambda,
                                        gamma,
                                        delta_z,
                                        delta_y,
                                        psi0,
                                        psi1,
                                        n: self.n,
                                        reps: self.reps,
                                        base_seed: self.base_seed,
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn methods(&self) -> Result<Vec<Method>> {
        select_methods(self.estimators.as_deref(), self.schemes.as_deref())
    }
}

/// Coverage check helper used by reports: whether `truth` lies in the
/// 95% interval around `estimate`.
pub fn covers(estimate: f64, se: f64, truth: f64) -> bool {
    (estimate - truth).abs() <= Z95 * se
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_replicate_is_bitwise_identical() {
        let cfg = ScenarioConfig { n: 200, ..Default::default() };
        let a = generate_scenario(&cfg, 7);
        let b = generate_scenario(&cfg, 7);
        assert_eq!(a.y, b.y);
        assert_eq!(a.z, b.z);
        let bits = |d: &Dataset| d.partial[0].covariate.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        let c = generate_scenario(&cfg, 8);
        assert_ne!(a.y, c.y);
    }

    #[test]
    fn replicate_does_not_depend_on_rep_count_or_seed_is_used() {
        let a = ScenarioConfig { n: 100, reps: 5, ..Default::default() };
        let b = ScenarioConfig { reps: 500, ..a };
        assert_eq!(generate_scenario(&a, 3).y, generate_scenario(&b, 3).y);
        let c = ScenarioConfig { base_seed: a.base_seed + 1, ..a };
        assert_ne!(generate_scenario(&a, 3).y, generate_scenario(&c, 3).y);
    }

    #[test]
    fn mask_matches_generated_indicator() {
        let d = generate_latent(&ScenarioConfig { n: 300, ..Default::default() }, 0);
        let x = &d.data.partial[0];
        for i in 0..300 {
            assert_eq!(x.observed[i], d.r[i] == 1.0);
            if x.observed[i] {
                assert_eq!(x.covariate.values[i], d.x[i]);
            } else {
                assert!(x.covariate.values[i].is_nan());
            }
        }
    }

    #[test]
    fn flags_follow_parameters() {
        let c = ScenarioConfig { tau: 1.25, gamma: -1.55, delta_y: -4.2, ..Default::default() };
        let f = c.flags();
        assert!(!f.msita && f.cit && !f.cio);
        assert_eq!(f.spec_code(), "CI");
        assert_eq!(c.label(), "-mSITA +CIT -CIO CI");
    }

    #[test]
    fn working_model_blip_follows_heterogeneity() {
        let hom = working_models(&ScenarioConfig::default());
        assert_eq!(hom.blip, vec![Term::Intercept]);
        let het = working_models(&ScenarioConfig { psi1: -1.0, ..Default::default() });
        assert_eq!(het.blip, vec![Term::Intercept, Term::column("C")]);
        assert_eq!(het.treatment.len(), 4);
        assert_eq!(het.treatment, het.treatment_free);
    }

    #[test]
    fn grid_sizes() {
        assert_eq!(table1_grid(500, 10, 1).len(), 16);
        assert_eq!(full_grid(500, 10, 1, 0.0).len(), 32);
        let g = GridConfig { delta_z: OneOrMany::Many(vec![0.0, -4.2]), ..Default::default() };
        assert_eq!(g.scenarios().len(), 2);
        assert_eq!(g.methods().unwrap().len(), 6);
    }

    #[test]
    fn single_replicate_has_no_ese() {
        let cfg = ScenarioConfig { n: 300, reps: 1, ..Default::default() };
        let run = run_scenario(&cfg, &[Method::Miwols(WeightKind::Abs), Method::GEst], EstimateOptions::default()).unwrap();
        let t = MetricsTable::from_runs(&[run.clone()]);
        let r = &t.rows[0];
        assert!(r.ese.is_none() && r.ase_ese_ratio.is_none());
        let ReplicateResult::Ok { estimates, .. } = &run.results[0][0] else { panic!() };
        assert_eq!(r.bias, estimates[0] - PSI0);
    }

    #[test]
    fn gest_relative_mse_is_one_and_mse_decomposes() {
        let cfg = ScenarioConfig { n: 300, reps: 12, ..Default::default() };
        let (_, t) = run_monte_carlo(&[cfg], &Method::ALL, Some(2), EstimateOptions::default()).unwrap();
        for r in &t.rows {
            let ese = r.ese.unwrap();
            assert!((r.mse - (r.bias * r.bias + ese * ese)).abs() < 1e-10);
            if r.method == "GEST" {
                assert_eq!(r.mse_relative_to_gest, Some(1.0));
            }
        }
    }
}
