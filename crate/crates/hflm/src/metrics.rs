//! Evaluation criteria: predictive R^2, surface recovery R^2, and the two
//! lag-function criteria (bias in days, Pearson correlation over the year).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::core::{CoefficientSurface, LagFunction};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 observations")]
    TooFewObservations,
    #[error("observed series has zero variance")]
    ZeroVariance,
    #[error("truth surface is constant")]
    ConstantTruth,
    #[error("constant sequence")]
    ConstantSequence,
    #[error("grid shapes differ")]
    SpecMismatch,
}

/// `1 - SS_res / SS_tot` against the observed mean.
pub fn r2(observed: &[f64], predicted: &[f64]) -> Result<f64, MetricsError> {
    if observed.len() != predicted.len() {
        return Err(MetricsError::LengthMismatch(observed.len(), predicted.len()));
    }
    if observed.len() < 2 {
        return Err(MetricsError::TooFewObservations);
    }
    let mean = observed.iter().sum::<f64>() / observed.len() as f64;
    let ss_tot: f64 = observed.iter().map(|o| (o - mean) * (o - mean)).sum();
    if ss_tot <= 0.0 {
        return Err(MetricsError::ZeroVariance);
    }
    let ss_res: f64 = observed
        .iter()
        .zip(predicted)
        .map(|(o, p)| (o - p) * (o - p))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Surface recovery score: grid sums stand in for the double integral,
/// centered on the grid mean of the truth.
pub fn beta_r2(
    truth: &CoefficientSurface,
    est: &CoefficientSurface,
) -> Result<f64, MetricsError> {
    if truth.spec.max_lag_count != est.spec.max_lag_count
        || truth.spec.period_length != est.spec.period_length
    {
        return Err(MetricsError::SpecMismatch);
    }
    let mean = truth.b.iter().sum::<f64>() / truth.b.len() as f64;
    let denom: f64 = truth.b.iter().map(|v| (v - mean) * (v - mean)).sum();
    if denom <= 0.0 {
        return Err(MetricsError::ConstantTruth);
    }
    let num: f64 = truth
        .b
        .iter()
        .zip(&est.b)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(1.0 - num / denom)
}

/// Mean estimated lag minus mean true lag, in days. Sentinel entries enter
/// the means as -1.
pub fn delta_bias(truth: &LagFunction, est: &LagFunction) -> Result<f64, MetricsError> {
    if truth.delta.len() != est.delta.len() {
        return Err(MetricsError::LengthMismatch(truth.delta.len(), est.delta.len()));
    }
    let n = truth.delta.len() as f64;
    let mean_est = est.delta.iter().map(|&d| d as f64).sum::<f64>() / n;
    let mean_truth = truth.delta.iter().map(|&d| d as f64).sum::<f64>() / n;
    Ok(mean_est - mean_truth)
}

/// Pearson correlation of the two lag functions over the period.
pub fn delta_corr(truth: &LagFunction, est: &LagFunction) -> Result<f64, MetricsError> {
    if truth.delta.len() != est.delta.len() {
        return Err(MetricsError::LengthMismatch(truth.delta.len(), est.delta.len()));
    }
    let a: Vec<f64> = truth.delta.iter().map(|&d| d as f64).collect();
    let b: Vec<f64> = est.delta.iter().map(|&d| d as f64).collect();
    pearson(&a, &b)
}

fn pearson(a: &[f64], b: &[f64]) -> Result<f64, MetricsError> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let va: f64 = a.iter().map(|x| (x - ma) * (x - ma)).sum();
    let vb: f64 = b.iter().map(|x| (x - mb) * (x - mb)).sum();
    if va <= 0.0 || vb <= 0.0 {
        return Err(MetricsError::ConstantSequence);
    }
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    Ok(cov / (va.sqrt() * vb.sqrt()))
}

/// Criteria bundle; fields are absent when the matching ground truth is
/// unavailable or the criterion is undefined for the inputs.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MetricReport {
    pub r2: Option<f64>,
    pub beta_r2: Option<f64>,
    pub delta_bias: Option<f64>,
    pub delta_corr: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::PanelSpec;

    #[test]
    fn r2_examples() {
        assert_eq!(r2(&[0.0, 1.0, 2.0], &[0.0, 1.0, 2.0]).unwrap(), 1.0);
        assert_eq!(r2(&[0.0, 1.0, 2.0], &[1.0, 1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(r2(&[0.0, 1.0, 2.0], &[0.0, 0.0, 2.0]).unwrap(), 0.5);
        assert!(matches!(
            r2(&[1.0, 1.0], &[0.0, 2.0]),
            Err(MetricsError::ZeroVariance)
        ));
    }

    #[test]
    fn r2_is_unbounded_below() {
        let v = r2(&[0.0, 1.0], &[100.0, -100.0]).unwrap();
        assert!(v < -1000.0);
    }

    #[test]
    fn beta_r2_examples() {
        let spec = PanelSpec::new(1, 2, 2).unwrap();
        let truth = CoefficientSurface::new(spec, vec![0.0, 2.0]).unwrap();
        let same = truth.clone();
        assert_eq!(beta_r2(&truth, &same).unwrap(), 1.0);
        let at_mean = CoefficientSurface::new(spec, vec![1.0, 1.0]).unwrap();
        assert_eq!(beta_r2(&truth, &at_mean).unwrap(), 0.0);
        let constant = CoefficientSurface::new(spec, vec![3.0, 3.0]).unwrap();
        assert!(matches!(
            beta_r2(&constant, &same),
            Err(MetricsError::ConstantTruth)
        ));
    }

    #[test]
    fn beta_r2_shift_invariance() {
        let spec = PanelSpec::new(2, 2, 2).unwrap();
        let truth = CoefficientSurface::new(spec, vec![0.0, 1.0, 2.0, 4.0]).unwrap();
        let est = CoefficientSurface::new(spec, vec![0.5, 0.5, 2.5, 3.0]).unwrap();
        let c = 7.3;
        let truth_s =
            CoefficientSurface::new(spec, truth.b.iter().map(|v| v + c).collect()).unwrap();
        let est_s = CoefficientSurface::new(spec, est.b.iter().map(|v| v + c).collect()).unwrap();
        let a = beta_r2(&truth, &est).unwrap();
        let b = beta_r2(&truth_s, &est_s).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn delta_bias_examples() {
        let spec = PanelSpec::new(4, 10, 3).unwrap();
        let truth = LagFunction::new(spec, vec![3, 5, 2, 8]).unwrap();
        let same = truth.clone();
        assert_eq!(delta_bias(&truth, &same).unwrap(), 0.0);
        let shifted = LagFunction::new(spec, vec![5, 7, 4, 9]).unwrap();
        let b = delta_bias(&truth, &shifted).unwrap();
        assert!((b - 1.75).abs() < 1e-12);
        assert_eq!(
            delta_bias(&truth, &shifted).unwrap(),
            -delta_bias(&shifted, &truth).unwrap()
        );
    }

    #[test]
    fn delta_corr_examples() {
        let spec = PanelSpec::new(4, 10, 3).unwrap();
        let truth = LagFunction::new(spec, vec![3, 5, 2, 8]).unwrap();
        assert!((delta_corr(&truth, &truth).unwrap() - 1.0).abs() < 1e-12);
        let neg = LagFunction::new(spec, vec![6, 4, 7, 1]).unwrap();
        assert!((delta_corr(&truth, &neg).unwrap() + 1.0).abs() < 1e-12);
        let flat = LagFunction::new(spec, vec![2, 2, 2, 2]).unwrap();
        assert!(matches!(
            delta_corr(&truth, &flat),
            Err(MetricsError::ConstantSequence)
        ));
    }

    #[test]
    fn single_perturbation_keeps_high_correlation() {
        let spec = PanelSpec::new(365, 40, 2).unwrap();
        let truth_vals: Vec<i32> = (0..365)
            .map(|t| {
                let phase = 2.0 * std::f64::consts::PI * t as f64 / 365.0;
                (20.0 + 10.0 * phase.sin()).round() as i32
            })
            .collect();
        let mut est_vals = truth_vals.clone();
        est_vals[100] += 1;
        let truth = LagFunction::new(spec, truth_vals).unwrap();
        let est = LagFunction::new(spec, est_vals).unwrap();
        assert!(delta_corr(&truth, &est).unwrap() > 0.99);
    }
}
