use miwols::cohort::*;
use miwols::estimators::{EstimateOptions, Method};
use miwols::weights::WeightKind;
use rayon::prelude::*;

#[test]
fn full_size_cohort_is_calibrated() {
    let cfg = CohortConfig::default();
    let data = generate_cohort(&cfg).unwrap();
    let n = data.n() as f64;
    let p = 155_982.0 / n;
    let treated: f64 = data.z.iter().sum();
    assert!((treated - 155_982.0).abs() <= 3.0 * (n * p * (1.0 - p)).sqrt(), "treated {treated}");
    let mean = data.y.iter().sum::<f64>() / n;
    let sd = (data.y.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!((mean - 82.15).abs() < 0.2, "mean {mean}");
    assert!((sd - 17.82).abs() < 0.2, "sd {sd}");
    let eth = data.partial.iter().find(|c| c.name() == ETHNICITY).unwrap();
    assert!((eth.missing_fraction() - 0.590).abs() < 0.005);
    let summary = marginal_summary(&data);
    for (key, target) in reference_marginals() {
        let got = summary[&key];
        assert!((got - target).abs() <= 0.5, "{key}: {got:.2}% vs {target:.2}%");
    }
}

#[test]
fn illustration_driver_reports_bias_against_truth() {
    let cfg = CohortConfig { n: 20_000, seed: 5, ..Default::default() };
    let data = generate_cohort(&cfg).unwrap();
    let methods = [Method::Miwols(WeightKind::Unw)];
    let rows = run_illustration(&data, TRUE_EFFECT, &methods, EstimateOptions::default()).unwrap();
    assert_eq!(rows.len(), 2);
    for r in rows {
        assert!((r.bias - (r.estimate - TRUE_EFFECT)).abs() < 1e-15);
        assert!(r.ci_lower < r.estimate && r.estimate < r.ci_upper);
        assert!(r.pi_model_correct.is_none());
    }
}

/// Repeated moderately sized cohorts: the weighted estimators are unbiased
/// whenever one working model is right, and UNW only when the outcome model
/// is. Thresholds are in units of the Monte Carlo SE of the mean bias.
#[test]
fn double_robustness_over_repeated_cohorts() {
    const COHORTS: u64 = 200;
    let methods = [
        Method::Miwols(WeightKind::Unw),
        Method::Miwols(WeightKind::Abs),
        Method::Miwols(WeightKind::Ipw),
        Method::Miwols(WeightKind::Sipw),
    ];
    let runs: Vec<Vec<IllustrationRow>> = (1..=COHORTS)
        .into_par_iter()
        .map(|seed| {
            let cfg = CohortConfig { n: 50_000, seed, ..Default::default() };
            let data = generate_cohort(&cfg).unwrap();
            run_illustration(&data, TRUE_EFFECT, &methods, EstimateOptions { variance: false }).unwrap()
        })
        .collect();
    let m = COHORTS as f64;
    for (cell, proto) in runs[0].iter().enumerate() {
        let bias: Vec<f64> = runs.iter().map(|r| r[cell].bias).collect();
        let mean = bias.iter().sum::<f64>() / m;
        let ese = (bias.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / m).sqrt();
        let z = mean.abs() / (ese / m.sqrt());
        let both_wrong = proto.pi_model_correct == Some(false) && !proto.y_model_correct;
        let biased = both_wrong || (proto.pi_model_correct.is_none() && !proto.y_model_correct);
        let label = format!("{} pi={:?} y={}", proto.method, proto.pi_model_correct, proto.y_model_correct);
        if biased {
            assert!(z > 10.0, "{label}: mean bias {mean:.4} only {z:.1} MC SEs from 0");
        } else {
            assert!(z < 4.0, "{label}: mean bias {mean:.4} is {z:.1} MC SEs from 0");
        }
    }
}
