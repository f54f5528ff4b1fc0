use std::fmt::Write as _;
use std::fs::File;
use std::path::{Path, PathBuf};

use miwols::cohort::{self, CohortConfig, IllustrationRow};
use miwols::data::{read_csv, roles_of, write_csv, AugmentedDesign, Dataset};
use miwols::estimators::{fit_propensity, Analysis, EstimateOptions, FitResult, Method};
use miwols::sim::{self, fmt_f, GridConfig, MetricsTable, ScenarioRun, LONG_CSV_HEADER};
use miwols::weights::{check_balance, compute_weights, weighted_mean_differences, WeightKind, WeightScheme};
use serde_json::json;

use crate::config::{self, EstimateConfig, ModelDecl, Table1Config};
use crate::error::CliError;
use crate::output::{trim_float, OutDir, Provenance};

/// Flags shared by every command.
#[derive(Debug, Clone, Default)]
pub struct Common {
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub reps: Option<usize>,
    pub n: Option<usize>,
}

impl Common {
    fn require_config(&self, command: &str) -> Result<&Path, CliError> {
        self.config
            .as_deref()
            .ok_or_else(|| CliError::Config(format!("{command} needs --config")))
    }
}

fn load_dataset(cfg: &EstimateConfig, config_path: &Path) -> Result<(Dataset, PathBuf), CliError> {
    let input = cfg.input_path(config_path);
    let file = File::open(&input).map_err(|e| CliError::Config(format!("cannot open {}: {e}", input.display())))?;
    Ok((read_csv(file, &cfg.columns)?, input))
}

fn build_design(data: &Dataset, model: &ModelDecl) -> Result<AugmentedDesign, CliError> {
    AugmentedDesign::from_dataset(data, &model.spec()).map_err(|e| CliError::Config(format!("model specification: {e}")))
}

const ESTIMATE_HEADER: [&str; 9] = ["method", "estimator", "parameter", "term", "estimate", "se", "ci_lower", "ci_upper", "n"];

fn estimates_markdown(results: &[FitResult]) -> String {
    let mut s = String::from("| method | parameter | term | estimate | SE | 95% CI |\n|---|---|---|---:|---:|---|\n");
    for r in results {
        for j in 0..r.psi_hat.len() {
            let (lo, hi) = r.ci95[j];
            let _ = writeln!(
                s,
                "| {} | {} | {} | {:.4} | {:.4} | [{lo:.4}, {hi:.4}] |",
                r.method, r.psi_names[j], r.psi_terms[j], r.psi_hat[j], r.se[j]
            );
        }
    }
    s
}

pub fn estimate(common: &Common) -> Result<(), CliError> {
    let path = common.require_config("estimate")?;
    let cfg: EstimateConfig = config::load(path)?;
    let methods = cfg.methods()?;
    let (data, input) = load_dataset(&cfg, path)?;
    let design = build_design(&data, &cfg.model)?;
    let analysis = Analysis::new(&design, &data);
    let results = methods
        .iter()
        .map(|&m| analysis.run(m).map_err(|e| CliError::fit(m, e)))
        .collect::<Result<Vec<_>, _>>()?;

    let prov = Provenance {
        command: "estimate",
        config_sha256: config::config_hash(&json!({
            "command": "estimate",
            "config": cfg,
            "input_sha256": config::file_hash(&input)?,
        })),
        seed: None,
    };
    let out = OutDir::create(&common.out, prov)?;
    out.csv("estimates", |w| {
        w.write_record(ESTIMATE_HEADER)?;
        for r in &results {
            for j in 0..r.psi_hat.len() {
                w.write_record([
                    r.method.label().to_string(),
                    r.method.estimator_name().to_string(),
                    r.psi_names[j].clone(),
                    r.psi_terms[j].clone(),
                    fmt_f(r.psi_hat[j]),
                    fmt_f(r.se[j]),
                    fmt_f(r.ci95[j].0),
                    fmt_f(r.ci95[j].1),
                    data.n().to_string(),
                ])?;
            }
        }
        Ok(())
    })?;
    let md = estimates_markdown(&results);
    out.markdown("estimates", &md)?;
    print!("{md}");
    Ok(())
}

fn write_metrics(out: &OutDir, stem: &str, table: &MetricsTable) -> Result<(), CliError> {
    out.csv(stem, |w| Ok(table.write_csv(w)?))?;
    Ok(())
}

fn write_long(out: &OutDir, runs: &[ScenarioRun]) -> Result<(), CliError> {
    out.csv("replicates", |w| {
        w.write_record(LONG_CSV_HEADER)?;
        for r in runs {
            r.write_long_csv(w)?;
        }
        Ok(())
    })?;
    Ok(())
}

fn failure_summary(runs: &[ScenarioRun]) {
    for r in runs {
        for (k, m) in r.methods.iter().enumerate() {
            let f = r.failures(k);
            if f > 0 {
                log::warn!("{} {m}: {f} of {} replicates failed", r.config.label(), r.config.reps);
            }
        }
    }
}

pub fn simulate(common: &Common) -> Result<(), CliError> {
    let mut grid = match &common.config {
        Some(p) => config::load::<GridConfig>(p)?,
        None => GridConfig::default(),
    };
    if let Some(n) = common.n {
        grid.n = n;
    }
    if let Some(r) = common.reps {
        grid.reps = r;
    }
    if let Some(s) = common.seed {
        grid.base_seed = s;
    }
    let methods = grid.methods()?;
    let scenarios = grid.scenarios();
    let (runs, table) = sim::run_monte_carlo(&scenarios, &methods, common.workers, EstimateOptions::default())?;
    failure_summary(&runs);
    let prov = Provenance {
        command: "simulate",
        config_sha256: config::config_hash(&json!({ "command": "simulate", "grid": grid })),
        seed: Some(grid.base_seed),
    };
    let out = OutDir::create(&common.out, prov)?;
    write_metrics(&out, "metrics", &table)?;
    let md = table.to_markdown();
    out.markdown("metrics", &md)?;
    write_long(&out, &runs)?;
    print!("{md}");
    Ok(())
}

/// Minimum replication count for a table replication run.
pub const MIN_TABLE1_REPS: usize = 100;

pub fn replicate_table1(common: &Common) -> Result<(), CliError> {
    let mut cfg = match &common.config {
        Some(p) => config::load::<Table1Config>(p)?,
        None => Table1Config::default(),
    };
    cfg.n = common.n.unwrap_or(cfg.n);
    cfg.reps = common.reps.unwrap_or(cfg.reps);
    cfg.base_seed = common.seed.unwrap_or(cfg.base_seed);
    if cfg.reps < MIN_TABLE1_REPS {
        return Err(CliError::Config(format!("replicate-table1 needs at least {MIN_TABLE1_REPS} replications, got {}", cfg.reps)));
    }
    if cfg.reps < 1000 {
        log::warn!("{} replications: Monte Carlo error is larger than at the reference 1000", cfg.reps);
    }
    let scenarios = sim::table1_grid(cfg.n, cfg.reps, cfg.base_seed);
    let (runs, table) = sim::run_monte_carlo(&scenarios, &Method::ALL, common.workers, EstimateOptions::default())?;
    failure_summary(&runs);
    let prov = Provenance {
        command: "replicate-table1",
        config_sha256: config::config_hash(&json!({ "command": "replicate-table1", "config": cfg })),
        seed: Some(cfg.base_seed),
    };
    let out = OutDir::create(&common.out, prov)?;
    write_metrics(&out, "table1", &table)?;
    let wide = table.to_wide_markdown(&Method::ALL, "psi0");
    let md = format!(
        "n = {}, {} replications per scenario; Monte Carlo SEs in parentheses.\n\n{wide}\n## All metrics\n\n{}",
        cfg.n,
        cfg.reps,
        table.to_markdown()
    );
    out.markdown("table1", &md)?;
    write_long(&out, &runs)?;
    print!("{wide}");
    Ok(())
}

const ILLUSTRATION_HEADER: [&str; 8] = ["method", "pi_model_correct", "y_model_correct", "estimate", "bias", "se", "ci_lower", "ci_upper"];

fn write_illustration(out: &OutDir, rows: &[IllustrationRow]) -> Result<(), CliError> {
    out.csv("table3", |w| {
        w.write_record(ILLUSTRATION_HEADER)?;
        for r in rows {
            w.write_record([
                r.method.clone(),
                r.pi_model_correct.map(|b| b.to_string()).unwrap_or_default(),
                r.y_model_correct.to_string(),
                fmt_f(r.estimate),
                fmt_f(r.bias),
                fmt_f(r.se),
                fmt_f(r.ci_lower),
                fmt_f(r.ci_upper),
            ])?;
        }
        Ok(())
    })?;
    Ok(())
}

/// Estimation config for an exported cohort with both working models correct.
fn cohort_estimate_config(data: &Dataset) -> EstimateConfig {
    let spec = cohort::cohort_models(true, true);
    EstimateConfig {
        input: "cohort.csv".into(),
        columns: roles_of(data),
        model: ModelDecl {
            treatment: spec.treatment[1..].to_vec(),
            treatment_free: spec.treatment_free[1..].to_vec(),
            blip: vec![],
        },
        estimators: None,
        schemes: None,
    }
}

pub fn replicate_table3(common: &Common, export_cohort: bool) -> Result<(), CliError> {
    let mut cfg = match &common.config {
        Some(p) => config::load::<CohortConfig>(p)?,
        None => CohortConfig::default(),
    };
    cfg.n = common.n.unwrap_or(cfg.n);
    cfg.seed = common.seed.unwrap_or(cfg.seed);
    let pool = sim::worker_pool(common.workers)?;
    let (data, rows) = pool.install(|| -> Result<_, CliError> {
        let data = cohort::generate_cohort(&cfg)?;
        let rows = cohort::run_illustration(&data, cfg.true_effect, &cohort::ILLUSTRATION_METHODS, EstimateOptions::default())?;
        Ok((data, rows))
    })?;
    let prov = Provenance {
        command: "replicate-table3",
        config_sha256: config::config_hash(&json!({ "command": "replicate-table3", "config": cfg })),
        seed: Some(cfg.seed),
    };
    let out = OutDir::create(&common.out, prov)?;
    write_illustration(&out, &rows)?;

    let sim_m = cohort::marginal_summary(&data);
    let reference = cohort::reference_marginals();
    out.csv("marginals", |w| {
        w.write_record(["category", "simulated_pct", "reference_pct", "difference_pp"])?;
        for (k, r) in &reference {
            let s = sim_m.get(k).copied().unwrap_or(f64::NAN);
            w.write_record([k.clone(), fmt_f(s), fmt_f(*r), fmt_f(s - r)])?;
        }
        Ok(())
    })?;
    let mut marg = String::from("| category | simulated % | reference % |\n|---|---:|---:|\n");
    for (k, r) in &reference {
        let _ = writeln!(marg, "| {k} | {:.2} | {r:.2} |", sim_m.get(k).copied().unwrap_or(f64::NAN));
    }
    let table = cohort::illustration_markdown(&rows);
    let md = format!(
        "n = {}, true effect {}.\n\n{table}\n## Baseline characteristics\n\n{marg}",
        cfg.n, cfg.true_effect
    );
    out.markdown("table3", &md)?;
    if export_cohort {
        let mut buf = Vec::new();
        write_csv(&data, &mut buf)?;
        out.write("cohort.csv", &buf)?;
        let est = toml::to_string(&cohort_estimate_config(&data)).map_err(|e| CliError::Config(e.to_string()))?;
        out.write("estimate.toml", est.as_bytes())?;
    }
    print!("{table}");
    Ok(())
}

pub struct BalanceArgs {
    pub schemes: Vec<WeightKind>,
    pub p_bar: Option<f64>,
    pub grid_points: usize,
}

pub fn balance_check(common: &Common, args: &BalanceArgs) -> Result<(), CliError> {
    let dataset = match &common.config {
        Some(p) => {
            let cfg: EstimateConfig = config::load(p)?;
            let (data, _) = load_dataset(&cfg, p)?;
            let design = build_design(&data, &cfg.model)?;
            Some((cfg, data, design))
        }
        None => None,
    };
    let p_bar = match (args.p_bar, &dataset) {
        (Some(p), _) => p,
        (None, Some((_, data, _))) => data.treated_fraction(),
        (None, None) => 0.5,
    };
    if args.grid_points == 0 {
        return Err(CliError::Config("--grid-points must be positive".into()));
    }
    let grid: Vec<f64> = (1..=args.grid_points).map(|k| k as f64 / (args.grid_points + 1) as f64).collect();
    let schemes = if args.schemes.is_empty() { WeightKind::ALL.to_vec() } else { args.schemes.clone() };
    let make = |k: WeightKind| match k {
        WeightKind::Sipw => WeightScheme::sipw(p_bar),
        WeightKind::Abs => Ok(WeightScheme::abs()),
        WeightKind::Ipw => Ok(WeightScheme::ipw()),
        WeightKind::Unw => Ok(WeightScheme::unw()),
    };
    let reports = schemes
        .iter()
        .map(|&k| Ok(check_balance(&make(k)?, &grid)))
        .collect::<Result<Vec<_>, miwols::Error>>()?;

    let mut summary = String::new();
    for r in &reports {
        let extra = if r.scheme == WeightKind::Sipw { format!(" (p_bar = {})", trim_float(p_bar, 6)) } else { String::new() };
        let _ = writeln!(
            summary,
            "{}{extra}: max defect {}, balanced: {}",
            r.scheme,
            trim_float(r.max_abs_defect, 12),
            if r.balanced { "yes" } else { "no" }
        );
    }

    let mut empirical = Vec::new();
    if let Some((_, data, design)) = &dataset {
        let prop = fit_propensity(design, data).map_err(|e| CliError::fit("propensity model", e))?;
        for &k in &schemes {
            let w = compute_weights(&make(k)?, &data.z, &prop.clipped)?;
            for (col, d) in weighted_mean_differences(&design.h_alpha, &data.z, &w) {
                empirical.push((k, col, d));
            }
        }
    }

    let cfg_json = dataset.as_ref().map(|(c, _, _)| serde_json::to_value(c).expect("config serializes"));
    let prov = Provenance {
        command: "balance-check",
        config_sha256: config::config_hash(&json!({
            "command": "balance-check",
            "schemes": schemes,
            "p_bar": p_bar,
            "grid_points": args.grid_points,
            "dataset": cfg_json,
        })),
        seed: None,
    };
    let out = OutDir::create(&common.out, prov)?;
    out.csv("balance", |w| {
        w.write_record(["scheme", "pi", "defect"])?;
        for r in &reports {
            for (p, d) in &r.defects {
                w.write_record([r.scheme.to_string(), fmt_f(*p), fmt_f(*d)])?;
            }
        }
        Ok(())
    })?;
    let mut md = format!("Analytic balance defect over {} propensity values.\n\n```\n{summary}```\n", grid.len());
    if !empirical.is_empty() {
        out.csv("balance_data", |w| {
            w.write_record(["scheme", "column", "weighted_mean_difference"])?;
            for (k, c, d) in &empirical {
                w.write_record([k.to_string(), c.clone(), fmt_f(*d)])?;
            }
            Ok(())
        })?;
        md.push_str("\n| scheme | column | weighted mean difference (treated - control) |\n|---|---|---:|\n");
        for (k, c, d) in &empirical {
            let _ = writeln!(md, "| {k} | {c} | {d:.4} |");
        }
    }
    out.markdown("balance", &md)?;
    print!("{summary}");
    Ok(())
}
