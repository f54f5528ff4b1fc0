use miwols::data::AugmentedDesign;
use miwols::estimators::fit_propensity;
use miwols::sim::*;

fn scenario(lambda: f64, delta_z: f64, psi1: f64, n: usize) -> ScenarioConfig {
    ScenarioConfig {
        tau: 0.0,
        lambda,
        gamma: 0.0,
        delta_z,
        delta_y: 0.0,
        psi0: PSI0,
        psi1,
        n,
        reps: 1,
        base_seed: 99,
    }
}

#[test]
fn treated_and_missing_fractions_stay_in_range_over_the_grid() {
    for psi1 in [0.0, -1.0] {
        for cfg in full_grid(500, 1, 7, psi1) {
            let d = generate_scenario(&cfg, 0);
            let treated = d.treated_fraction();
            let missing = d.partial[0].missing_fraction();
            assert!((0.37..=0.90).contains(&treated), "{}: treated {treated}", cfg.label());
            assert!((0.29..=0.56).contains(&missing), "{}: missing {missing}", cfg.label());
        }
    }
}

#[test]
fn correct_treatment_model_recovers_generating_coefficients() {
    let cfg = scenario(0.0, 0.0, 0.0, 200_000);
    let data = generate_scenario(&cfg, 0);
    let design = AugmentedDesign::from_dataset(&data, &working_models(&cfg)).unwrap();
    assert_eq!(design.h_alpha.names, ["intercept", "X*R_X", "R_X", "C"]);
    let fit = fit_propensity(&design, &data).unwrap().fit;
    let cov = fit.information.clone().try_inverse().unwrap();
    for (j, truth) in [-1.2, 1.38, 2.0, 1.69].into_iter().enumerate() {
        let se = cov[(j, j)].sqrt();
        assert!((fit.alpha[j] - truth).abs() < 3.0 * se, "alpha[{j}] = {} vs {truth} (se {se})", fit.alpha[j]);
    }
}

#[test]
fn misspecified_treatment_model_misses_the_interaction() {
    let cfg = scenario(0.0, DELTA_MISSPECIFIED, 0.0, 200_000);
    let data = generate_scenario(&cfg, 0);
    let design = AugmentedDesign::from_dataset(&data, &working_models(&cfg)).unwrap();
    let fit = fit_propensity(&design, &data).unwrap().fit;
    let cov = fit.information.clone().try_inverse().unwrap();
    let worst = [-1.2, 1.38, 2.0, 1.69]
        .iter()
        .enumerate()
        .map(|(j, t)| (fit.alpha[j] - t).abs() / cov[(j, j)].sqrt())
        .fold(0.0, f64::max);
    assert!(worst > 10.0);
}

/// Mean of `v` and its Monte Carlo standard error.
fn mean_se(v: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = v.clone().count() as f64;
    let m = v.clone().sum::<f64>() / n;
    let var = v.map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

#[test]
fn potential_outcome_contrasts_match_the_blip() {
    for psi1 in [0.0, -1.0] {
        let cfg = scenario(LAMBDA_VIOLATED, 0.0, psi1, 1_000_000);
        let draw = generate_latent(&cfg, 0);
        let c = draw.data.observed[0].values.clone();
        let y = &draw.data.y;
        // Realized noise is y minus the applicable mean; both potential
        // outcomes share it.
        let eps: Vec<f64> = (0..cfg.n)
            .map(|i| y[i] - if draw.data.z[i] == 1.0 { draw.mu1[i] } else { draw.mu0[i] })
            .collect();
        for level in [0.0, 1.0] {
            let rows: Vec<usize> = (0..cfg.n).filter(|&i| c[i] == level).collect();
            let (m1, s1) = mean_se(rows.iter().map(|&i| draw.mu1[i] + eps[i]));
            let (m0, s0) = mean_se(rows.iter().map(|&i| draw.mu0[i] + eps[i]));
            let target = PSI0 + psi1 * level;
            let (diff, se) = mean_se(rows.iter().map(|&i| draw.mu1[i] - draw.mu0[i]));
            assert!((diff - target).abs() <= 3.0 * se + 1e-9, "psi1 {psi1}, C = {level}: {diff}");
            assert!((m1 - m0 - target).abs() < 3.0 * (s1 * s1 + s0 * s0).sqrt());
        }
        let (ate, se) = mean_se((0..cfg.n).map(|i| draw.mu1[i] - draw.mu0[i]));
        assert!((ate - cfg.truth("ATE").unwrap()).abs() < 3.0 * se + 1e-9);
        if psi1 == 0.0 {
            assert_eq!(cfg.truth("ATE"), Some(PSI0));
        }
    }
}
