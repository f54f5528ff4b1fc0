//! Regression weights built from propensity scores, and the balancing
//! condition `pi(h) w(1, h) = (1 - pi(h)) w(0, h)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::DesignMatrix;
use crate::error::{Error, Result};

/// Fitted propensities are clipped into `[PI_CLIP, 1 - PI_CLIP]` before any
/// weight is formed.
pub const PI_CLIP: f64 = 1e-6;

/// A scheme satisfies balance when its largest defect is below this.
pub const BALANCE_TOL: f64 = 1e-12;

pub fn clip_propensity(p: f64) -> f64 {
    p.clamp(PI_CLIP, 1.0 - PI_CLIP)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum WeightKind {
    /// `|z - pi|`
    Abs,
    /// `z / pi + (1 - z) / (1 - pi)`
    Ipw,
    /// `z p / pi + (1 - z)(1 - p) / (1 - pi)` with `p` the treated fraction
    Sipw,
    /// unit weights
    Unw,
}

impl WeightKind {
    pub const ALL: [WeightKind; 4] = [WeightKind::Abs, WeightKind::Ipw, WeightKind::Sipw, WeightKind::Unw];

    pub fn uses_propensity(self) -> bool {
        self != WeightKind::Unw
    }

    pub fn label(self) -> &'static str {
        match self {
            WeightKind::Abs => "ABS",
            WeightKind::Ipw => "IPW",
            WeightKind::Sipw => "SIPW",
            WeightKind::Unw => "UNW",
        }
    }
}

impl fmt::Display for WeightKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for WeightKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "ABS" => Ok(WeightKind::Abs),
            "IPW" => Ok(WeightKind::Ipw),
            "SIPW" => Ok(WeightKind::Sipw),
            "UNW" => Ok(WeightKind::Unw),
            other => Err(Error::Config(format!("unknown weight scheme `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightScheme {
    kind: WeightKind,
    marginal_p: Option<f64>,
}

impl WeightScheme {
    pub fn abs() -> Self {
        Self { kind: WeightKind::Abs, marginal_p: None }
    }

    pub fn ipw() -> Self {
        Self { kind: WeightKind::Ipw, marginal_p: None }
    }

    pub fn unw() -> Self {
        Self { kind: WeightKind::Unw, marginal_p: None }
    }

    pub fn sipw(marginal_p: f64) -> Result<Self> {
        if !(marginal_p > 0.0 && marginal_p < 1.0) {
            return Err(Error::Config(format!("SIPW marginal probability {marginal_p} outside (0, 1)")));
        }
        Ok(Self { kind: WeightKind::Sipw, marginal_p: Some(marginal_p) })
    }

    /// Scheme of the given kind; `z` supplies the treated fraction for SIPW.
    pub fn for_data(kind: WeightKind, z: &[f64]) -> Result<Self> {
        match kind {
            WeightKind::Abs => Ok(Self::abs()),
            WeightKind::Ipw => Ok(Self::ipw()),
            WeightKind::Unw => Ok(Self::unw()),
            WeightKind::Sipw => Self::sipw(z.iter().sum::<f64>() / z.len() as f64),
        }
    }

    pub fn kind(&self) -> WeightKind {
        self.kind
    }

    pub fn marginal_p(&self) -> Option<f64> {
        self.marginal_p
    }

    /// Weight of one unit with treatment `z` and (clipped) propensity `pi`.
    #[inline]
    pub fn weight(&self, z: f64, pi: f64) -> f64 {
        weight_value(self.kind, self.marginal_p.unwrap_or(0.5), z, pi)
    }

    /// Balance defect `pi w(1, pi) - (1 - pi) w(0, pi)`, grouped so that
    /// `pi / pi` and `(1 - pi) / (1 - pi)` cancel exactly.
    pub fn balance_defect(&self, pi: f64) -> f64 {
        let q = 1.0 - pi;
        match self.kind {
            WeightKind::Abs => pi * q - q * pi,
            WeightKind::Ipw => pi / pi - q / q,
            WeightKind::Sipw => self.marginal_p.unwrap_or(0.5) * (pi / pi + q / q) - q / q,
            WeightKind::Unw => pi - q,
        }
    }
}

#[inline]
pub(crate) fn weight_value(kind: WeightKind, p_bar: f64, z: f64, pi: f64) -> f64 {
    match kind {
        WeightKind::Abs => (z - pi).abs(),
        WeightKind::Ipw => z / pi + (1.0 - z) / (1.0 - pi),
        WeightKind::Sipw => z * p_bar / pi + (1.0 - z) * (1.0 - p_bar) / (1.0 - pi),
        WeightKind::Unw => 1.0,
    }
}

pub fn compute_weights(scheme: &WeightScheme, z: &[f64], pi: &[f64]) -> Result<Vec<f64>> {
    assert_eq!(z.len(), pi.len(), "treatment and propensity lengths differ");
    if let Some(row) = pi.iter().position(|&p| !(p > 0.0 && p < 1.0)) {
        return Err(Error::PropensityOutOfRange { row, value: pi[row] });
    }
    Ok(z.iter().zip(pi).map(|(&zi, &p)| scheme.weight(zi, p)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BalanceReport {
    pub scheme: WeightKind,
    /// `(pi, pi w(1, pi) - (1 - pi) w(0, pi))`
    pub defects: Vec<(f64, f64)>,
    pub max_abs_defect: f64,
    pub balanced: bool,
}

pub fn check_balance(scheme: &WeightScheme, pi_grid: &[f64]) -> BalanceReport {
    let defects: Vec<(f64, f64)> = pi_grid
        .iter()
        .map(|&p| (p, scheme.balance_defect(p)))
        .collect();
    let max_abs_defect = defects.iter().map(|d| d.1.abs()).fold(0.0, f64::max);
    BalanceReport {
        scheme: scheme.kind(),
        defects,
        max_abs_defect,
        balanced: max_abs_defect < BALANCE_TOL,
    }
}

/// Weighted mean of each design column among treated minus among controls.
pub fn weighted_mean_differences(h: &DesignMatrix, z: &[f64], w: &[f64]) -> Vec<(String, f64)> {
    let (mut w1, mut w0) = (0.0, 0.0);
    for (&zi, &wi) in z.iter().zip(w) {
        if zi == 1.0 {
            w1 += wi;
        } else {
            w0 += wi;
        }
    }
    h.names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let (mut s1, mut s0) = (0.0, 0.0);
            for (i, (&zi, &wi)) in z.iter().zip(w).enumerate() {
                let v = wi * h.matrix[(i, j)];
                if zi == 1.0 {
                    s1 += v;
                } else {
                    s0 += v;
                }
            }
            (name.clone(), s1 / w1 - s0 / w0)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adopted_formulas() {
        assert!((WeightScheme::abs().weight(1.0, 0.3) - 0.7).abs() < 1e-15);
        assert!((WeightScheme::ipw().weight(0.0, 0.2) - 1.25).abs() < 1e-15);
        assert_eq!(WeightScheme::unw().weight(1.0, 0.9), 1.0);
        assert_eq!(WeightScheme::unw().weight(0.0, 0.1), 1.0);
    }

    #[test]
    fn out_of_range_propensity_is_rejected() {
        let err = compute_weights(&WeightScheme::ipw(), &[1.0, 0.0], &[0.5, 1.0]).unwrap_err();
        assert!(matches!(err, Error::PropensityOutOfRange { row: 1, .. }));
    }

    #[test]
    fn abs_and_ipw_balance_sipw_does_not() {
        let grid: Vec<f64> = (1..10).map(|k| k as f64 / 10.0).collect();
        assert!(check_balance(&WeightScheme::abs(), &grid).balanced);
        assert!(check_balance(&WeightScheme::ipw(), &grid).balanced);
        let r = check_balance(&WeightScheme::sipw(0.6).unwrap(), &[0.3]);
        assert!((r.defects[0].1 - 0.2).abs() < 1e-15);
        assert!(!r.balanced);
        assert!(check_balance(&WeightScheme::sipw(0.5).unwrap(), &grid).balanced);
    }

    #[test]
    fn abs_weights_bounded_by_one() {
        let z = [1.0, 0.0, 1.0, 0.0];
        let pi = [1e-6, 1e-6, 0.5, 1.0 - 1e-6];
        let w = compute_weights(&WeightScheme::abs(), &z, &pi).unwrap();
        assert!(w.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn clipping_bounds() {
        assert_eq!(clip_propensity(0.0), PI_CLIP);
        assert_eq!(clip_propensity(1.0), 1.0 - PI_CLIP);
        assert_eq!(clip_propensity(0.4), 0.4);
    }

    #[test]
    fn parse_kind() {
        assert_eq!("sipw".parse::<WeightKind>().unwrap(), WeightKind::Sipw);
        assert!("xyz".parse::<WeightKind>().is_err());
    }

    #[test]
    fn balance_defect_matches_weights() {
        for scheme in [WeightScheme::abs(), WeightScheme::ipw(), WeightScheme::unw(), WeightScheme::sipw(0.3).unwrap()] {
            for p in [0.05, 0.4, 0.77] {
                let direct = p * scheme.weight(1.0, p) - (1.0 - p) * scheme.weight(0.0, p);
                assert!((scheme.balance_defect(p) - direct).abs() < 1e-15);
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn balance_defects(pi in 1e-9f64..1.0 - 1e-9, p_bar in 1e-9f64..1.0 - 1e-9) {
            let abs = check_balance(&WeightScheme::abs(), &[pi]).max_abs_defect;
            let ipw = check_balance(&WeightScheme::ipw(), &[pi]).max_abs_defect;
            let sipw = check_balance(&WeightScheme::sipw(p_bar).unwrap(), &[pi]).max_abs_defect;
            proptest::prop_assert!(abs < BALANCE_TOL && ipw < BALANCE_TOL);
            proptest::prop_assert_eq!(sipw, (2.0 * p_bar - 1.0).abs());
        }

        #[test]
        fn weights_are_positive_and_finite(z in 0u8..2, pi in PI_CLIP..=1.0 - PI_CLIP, p_bar in 0.01f64..0.99) {
            for s in [WeightScheme::abs(), WeightScheme::ipw(), WeightScheme::unw(), WeightScheme::sipw(p_bar).unwrap()] {
                let w = s.weight(f64::from(z), pi);
                proptest::prop_assert!(w.is_finite() && w > 0.0);
            }
        }
    }
}
