//! Ground-truth scenario generation, noise calibration to a target signal
//! R^2, and the replicated recovery study.
//!
//! Replicates are embarrassingly parallel; each derives its own random
//! stream from the scenario seed and its index, so the study table is
//! identical no matter how the work is scheduled.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::Serialize;
use thiserror::Error;

use crate::core::{
    mix_seed, CoefficientSurface, CoreError, FitConfig, LagFunction, PanelKind, PanelSpec,
    SeriesPanel, NO_LAG,
};
use crate::ingest::seasonal_demean;
use crate::io::{self, IoError};
use crate::metrics::{self, MetricsError};
use crate::operators::{build_design_matrix, OperatorError};
use crate::par::par_map_indices;
use crate::pipeline::{run_algorithm1, PipelineError};

#[derive(Debug, Error)]
pub enum SimulateError {
    #[error("target R^2 must lie strictly between 0 and 1, got {0}")]
    BadTargetR2(f64),
    #[error("true response has (near-)zero variance; nothing to calibrate")]
    DegenerateSignal,
    #[error("truth grid is {truth_d}x{truth_t} but the scenario needs {want_d}x{want_t}")]
    TruthShapeMismatch {
        truth_d: usize,
        truth_t: usize,
        want_d: usize,
        want_t: usize,
    },
    #[error("smooth bump recipe invalid: {0}")]
    BadRecipe(String),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

// -- ground truth ---------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SmoothBumpRecipe {
    /// Smallest and largest lag reached by the seasonal cycle of delta(t).
    pub delta_min: usize,
    pub delta_max: usize,
    /// Coefficient scale at lag zero in the peak season.
    pub amplitude: f64,
    /// Day of year where the lag influence peaks.
    pub peak_day: usize,
}

#[derive(Debug, Clone)]
pub enum TruthRecipe {
    /// Load an exported surface; its grid must match the scenario spec.
    FromFile(PathBuf),
    /// Parametric surface with a known, exactly-zero upper tail.
    SmoothBump(SmoothBumpRecipe),
}

/// Builds a ground-truth surface on the given grid.
///
/// The smooth bump tapers linearly to zero just past `delta(t)`, so the
/// largest nonzero lag at day `t` is exactly the designed delta: positive
/// at `s = delta(t)`, zero from `s = delta(t) + 1` on.
pub fn synth_truth(
    spec: &PanelSpec,
    recipe: &TruthRecipe,
) -> Result<CoefficientSurface, SimulateError> {
    match recipe {
        TruthRecipe::FromFile(path) => {
            let loaded = io::read_surface_csv(path)?;
            if loaded.spec.max_lag_count != spec.max_lag_count
                || loaded.spec.period_length != spec.period_length
            {
                return Err(SimulateError::TruthShapeMismatch {
                    truth_d: loaded.spec.max_lag_count,
                    truth_t: loaded.spec.period_length,
                    want_d: spec.max_lag_count,
                    want_t: spec.period_length,
                });
            }
            Ok(CoefficientSurface::new(*spec, loaded.b)?)
        }
        TruthRecipe::SmoothBump(r) => smooth_bump(spec, r),
    }
}

fn smooth_bump(
    spec: &PanelSpec,
    recipe: &SmoothBumpRecipe,
) -> Result<CoefficientSurface, SimulateError> {
    let d = spec.max_lag_count;
    let t_len = spec.period_length;
    if recipe.delta_min > recipe.delta_max {
        return Err(SimulateError::BadRecipe("delta_min > delta_max".into()));
    }
    if recipe.delta_max >= d {
        return Err(SimulateError::BadRecipe(format!(
            "delta_max {} must stay below the lag count {d}",
            recipe.delta_max
        )));
    }
    if !(recipe.amplitude > 0.0) {
        return Err(SimulateError::BadRecipe("amplitude must be > 0".into()));
    }
    if recipe.peak_day >= t_len {
        return Err(SimulateError::BadRecipe("peak_day outside period".into()));
    }
    let range = (recipe.delta_max - recipe.delta_min) as f64;
    let mut b = vec![0.0; spec.coefficient_count()];
    for t in 0..t_len {
        let phase =
            2.0 * std::f64::consts::PI * (t as f64 - recipe.peak_day as f64) / t_len as f64;
        // seasonal cycle with a peaked wet-season maximum: the long-lag
        // regime is a season, not half the year
        let w = ((1.0 + phase.cos()) / 2.0).powf(1.5);
        let delta_t = (recipe.delta_min as f64 + range * w).round() as usize;
        let delta_t = delta_t.clamp(recipe.delta_min, recipe.delta_max);
        let amp = recipe.amplitude * (0.8 + 0.2 * phase.cos());
        for s in 0..=delta_t {
            // fast early decay: most of the response mass sits at short
            // lags, as fitted rainfall-runoff surfaces do
            b[t * d + s] = amp * (-3.0 * s as f64 / (delta_t + 1) as f64).exp();
        }
    }
    Ok(CoefficientSurface::new(*spec, b)?)
}

/// The exact lag function of a surface: largest lag with a nonzero
/// coefficient per day, sentinel when a whole day is zero.
pub fn truth_delta(surface: &CoefficientSurface) -> LagFunction {
    let d = surface.spec.max_lag_count;
    let delta = (0..surface.spec.period_length)
        .map(|t| {
            (0..d)
                .rev()
                .find(|&s| surface.b[t * d + s] != 0.0)
                .map(|s| s as i32)
                .unwrap_or(NO_LAG)
        })
        .collect();
    LagFunction {
        spec: surface.spec,
        delta,
    }
}

// -- noise ---------------------------------------------------------------

/// Noise variance that hits the target signal R^2 in expectation:
/// independent additive noise gives `R^2 = var(y_true) / (var(y_true) +
/// sigma^2)`, inverted here.
pub fn calibrate_noise(y_true: &[f64], target_r2: f64) -> Result<f64, SimulateError> {
    if !(target_r2 > 0.0 && target_r2 < 1.0) {
        return Err(SimulateError::BadTargetR2(target_r2));
    }
    let n = y_true.len() as f64;
    let mean = y_true.iter().sum::<f64>() / n;
    let var = y_true.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if var <= 1e-300 {
        return Err(SimulateError::DegenerateSignal);
    }
    Ok(var * (1.0 - target_r2) / target_r2)
}

/// Forward model plus Gaussian noise. The response panel is populated on
/// the rows the fit will use; the first `D - 1` global slots stay zero
/// since no design row exists for them.
pub fn simulate_response(
    x_panel: &SeriesPanel,
    truth: &CoefficientSurface,
    sigma2: f64,
    seed: u64,
) -> Result<SeriesPanel, SimulateError> {
    let (z, _, row_global) = build_design_matrix(x_panel)?;
    let y_true = z.matvec(&truth.b);
    let values = scatter_response(x_panel.spec, &y_true, &row_global, sigma2, seed);
    Ok(SeriesPanel {
        spec: x_panel.spec,
        values,
        kind: PanelKind::Anomaly,
    })
}

fn scatter_response(
    spec: PanelSpec,
    y_true: &[f64],
    row_global: &[usize],
    sigma2: f64,
    seed: u64,
) -> Vec<f64> {
    let mut values = vec![0.0; spec.observation_count()];
    if sigma2 > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, sigma2.sqrt()).expect("finite std dev");
        for (row, &u) in row_global.iter().enumerate() {
            values[u] = y_true[row] + noise.sample(&mut rng);
        }
    } else {
        for (row, &u) in row_global.iter().enumerate() {
            values[u] = y_true[row];
        }
    }
    values
}

// -- synthetic driver ----------------------------------------------------

/// Seasonal wet/dry rainfall generator (Bernoulli occurrence with an
/// exponential depth, both cycling over the year). Produces a raw panel;
/// demean it before fitting.
#[derive(Debug, Clone)]
pub struct RainfallParams {
    pub wet_probability_mean: f64,
    pub wet_probability_amplitude: f64,
    pub intensity_mean_mm: f64,
    pub intensity_relative_amplitude: f64,
    pub wet_peak_day: usize,
}

impl Default for RainfallParams {
    fn default() -> Self {
        RainfallParams {
            wet_probability_mean: 0.55,
            wet_probability_amplitude: 0.1,
            intensity_mean_mm: 8.0,
            intensity_relative_amplitude: 0.2,
            wet_peak_day: 0,
        }
    }
}

pub fn synth_rainfall(spec: &PanelSpec, params: &RainfallParams, seed: u64) -> SeriesPanel {
    let t_len = spec.period_length;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..spec.observation_count())
        .map(|u| {
            let t = u % t_len;
            let phase =
                2.0 * std::f64::consts::PI * (t as f64 - params.wet_peak_day as f64) / t_len as f64;
            let p = (params.wet_probability_mean + params.wet_probability_amplitude * phase.cos())
                .clamp(0.02, 0.95);
            if rng.gen::<f64>() < p {
                let mean_depth = params.intensity_mean_mm
                    * (1.0 + params.intensity_relative_amplitude * phase.cos()).max(0.1);
                Exp::new(1.0 / mean_depth).expect("positive rate").sample(&mut rng)
            } else {
                0.0
            }
        })
        .collect();
    SeriesPanel {
        spec: *spec,
        values,
        kind: PanelKind::Raw,
    }
}

// -- the study runner ----------------------------------------------------

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    /// Driver anomalies shared by every replicate.
    pub x_panel: SeriesPanel,
    pub truth: CoefficientSurface,
    pub target_r2: f64,
    pub replicate_runs: usize,
    pub seed: u64,
    pub fit: FitConfig,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplicateRow {
    pub replicate: usize,
    pub beta_r2: f64,
    pub delta_bias: f64,
    pub delta_corr: Option<f64>,
    pub r2_signal_check: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplicateFailure {
    pub replicate: usize,
    pub error: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct StudySummary {
    pub scenario: String,
    pub target_r2: f64,
    pub noise_variance: f64,
    pub signal_variance: f64,
    pub replicates_requested: usize,
    pub replicates_succeeded: usize,
    pub failure_count: usize,
    pub beta_r2_mean: Option<f64>,
    pub beta_r2_sd: Option<f64>,
    pub delta_bias_mean: Option<f64>,
    pub delta_bias_sd: Option<f64>,
    pub delta_corr_mean: Option<f64>,
    pub delta_corr_sd: Option<f64>,
    pub r2_signal_mean: Option<f64>,
    pub hyperopt_init_count: usize,
    pub hyperopt_iter_count: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct StudyOutput {
    pub rows: Vec<ReplicateRow>,
    pub failures: Vec<ReplicateFailure>,
    pub summary: StudySummary,
    pub truth: CoefficientSurface,
    pub truth_delta: LagFunction,
}

/// Runs the full pipeline once per replicate against a fresh noise draw
/// and scores each fit against the ground truth.
pub fn run_study(scenario: &Scenario) -> Result<StudyOutput, SimulateError> {
    if !(scenario.target_r2 > 0.0 && scenario.target_r2 < 1.0) {
        return Err(SimulateError::BadTargetR2(scenario.target_r2));
    }
    let spec = scenario.x_panel.spec;
    if scenario.truth.spec.max_lag_count != spec.max_lag_count
        || scenario.truth.spec.period_length != spec.period_length
    {
        return Err(SimulateError::TruthShapeMismatch {
            truth_d: scenario.truth.spec.max_lag_count,
            truth_t: scenario.truth.spec.period_length,
            want_d: spec.max_lag_count,
            want_t: spec.period_length,
        });
    }
    let (z, _, row_global) = build_design_matrix(&scenario.x_panel)?;
    let y_true = z.matvec(&scenario.truth.b);
    let sigma2 = calibrate_noise(&y_true, scenario.target_r2)?;
    let signal_variance = sigma2 * scenario.target_r2 / (1.0 - scenario.target_r2);
    let truth_lag = truth_delta(&scenario.truth);

    let results: Vec<Result<ReplicateRow, ReplicateFailure>> =
        par_map_indices(scenario.replicate_runs, |r| {
            run_replicate(scenario, &y_true, &row_global, sigma2, &truth_lag, r)
        });

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for res in results {
        match res {
            Ok(row) => rows.push(row),
            Err(f) => failures.push(f),
        }
    }

    let mean_sd = |take: &dyn Fn(&ReplicateRow) -> Option<f64>| -> (Option<f64>, Option<f64>) {
        let vals: Vec<f64> = rows.iter().filter_map(|r| take(r)).collect();
        if vals.is_empty() {
            return (None, None);
        }
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let sd = if vals.len() > 1 {
            Some(
                (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                    / (vals.len() - 1) as f64)
                    .sqrt(),
            )
        } else {
            None
        };
        (Some(mean), sd)
    };
    let (beta_r2_mean, beta_r2_sd) = mean_sd(&|r| Some(r.beta_r2));
    let (delta_bias_mean, delta_bias_sd) = mean_sd(&|r| Some(r.delta_bias));
    let (delta_corr_mean, delta_corr_sd) = mean_sd(&|r| r.delta_corr);
    let (r2_signal_mean, _) = mean_sd(&|r| Some(r.r2_signal_check));

    let summary = StudySummary {
        scenario: scenario.name.clone(),
        target_r2: scenario.target_r2,
        noise_variance: sigma2,
        signal_variance,
        replicates_requested: scenario.replicate_runs,
        replicates_succeeded: rows.len(),
        failure_count: failures.len(),
        beta_r2_mean,
        beta_r2_sd,
        delta_bias_mean,
        delta_bias_sd,
        delta_corr_mean,
        delta_corr_sd,
        r2_signal_mean,
        hyperopt_init_count: scenario.fit.hyperopt_init_count,
        hyperopt_iter_count: scenario.fit.hyperopt_iter_count,
        seed: scenario.seed,
    };
    Ok(StudyOutput {
        rows,
        failures,
        summary,
        truth: scenario.truth.clone(),
        truth_delta: truth_lag,
    })
}

fn run_replicate(
    scenario: &Scenario,
    y_true: &[f64],
    row_global: &[usize],
    sigma2: f64,
    truth_lag: &LagFunction,
    replicate: usize,
) -> Result<ReplicateRow, ReplicateFailure> {
    let fail = |e: String| ReplicateFailure {
        replicate,
        error: e,
    };
    let spec = scenario.x_panel.spec;
    let noise_seed = mix_seed(scenario.seed, 0x5eed_0000 + replicate as u64);
    let values = scatter_response(spec, y_true, row_global, sigma2, noise_seed);
    let y_panel = SeriesPanel {
        spec,
        values,
        kind: PanelKind::Anomaly,
    };
    let mut config = scenario.fit.clone();
    config.seed = mix_seed(scenario.seed, 0xf17_0000 + replicate as u64);

    let out = run_algorithm1(&scenario.x_panel, &y_panel, &config)
        .map_err(|e: PipelineError| fail(e.to_string()))?;

    let beta_r2 =
        metrics::beta_r2(&scenario.truth, &out.fit.surface).map_err(|e| fail(e.to_string()))?;
    let delta_bias =
        metrics::delta_bias(truth_lag, &out.fit.delta).map_err(|e| fail(e.to_string()))?;
    let delta_corr = metrics::delta_corr(truth_lag, &out.fit.delta).ok();
    let y_sim: Vec<f64> = row_global.iter().map(|&u| y_panel.values[u]).collect();
    let r2_signal_check = metrics::r2(&y_sim, y_true).map_err(|e| fail(e.to_string()))?;
    Ok(ReplicateRow {
        replicate,
        beta_r2,
        delta_bias,
        delta_corr,
        r2_signal_check,
    })
}

/// The second-scale default scenario: period 73, 20 lags, 10 replicates of
/// the panel, a seasonal smooth-bump truth with delta between 3 and 18,
/// and reduced optimizer budgets (recorded in the summary).
///
/// The weight search box is wider than the daily-data default: with a
/// 73-day period the day-to-day coefficient differences are several times
/// larger, so the optimal horizontal weight sits well below the
/// daily-scale range.
pub fn desk_scale_scenario(
    target_r2: f64,
    replicate_runs: usize,
    seed: u64,
) -> Result<Scenario, SimulateError> {
    let spec = PanelSpec::new(73, 20, 10)?;
    let raw = synth_rainfall(&spec, &RainfallParams::default(), mix_seed(seed, 0xa11));
    let (x_panel, _) = seasonal_demean(&raw);
    let truth = synth_truth(
        &spec,
        &TruthRecipe::SmoothBump(SmoothBumpRecipe {
            delta_min: 3,
            delta_max: 18,
            amplitude: 0.05,
            peak_day: 15,
        }),
    )?;
    let fit = FitConfig {
        hyperopt_init_count: 20,
        hyperopt_iter_count: 20,
        log_wh_bounds: (5.0, 13.0),
        log_wv_bounds: (0.0, 10.0),
        ..FitConfig::default()
    };
    Ok(Scenario {
        name: format!("desk_scale_r2_{target_r2}"),
        x_panel,
        truth,
        target_r2,
        replicate_runs,
        seed,
        fit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smooth_bump_delta_is_exact() {
        let spec = PanelSpec::new(30, 8, 2).unwrap();
        let truth = synth_truth(
            &spec,
            &TruthRecipe::SmoothBump(SmoothBumpRecipe {
                delta_min: 5,
                delta_max: 5,
                amplitude: 1.0,
                peak_day: 0,
            }),
        )
        .unwrap();
        let lag = truth_delta(&truth);
        assert!(lag.delta.iter().all(|&d| d == 5));
        // positive at the designed lag, zero beyond
        for t in 0..30 {
            assert!(truth.value(5, t) > 0.0);
            assert_eq!(truth.value(6, t), 0.0);
        }
    }

    #[test]
    fn smooth_bump_cycles_between_bounds() {
        let spec = PanelSpec::new(73, 20, 2).unwrap();
        let truth = synth_truth(
            &spec,
            &TruthRecipe::SmoothBump(SmoothBumpRecipe {
                delta_min: 3,
                delta_max: 18,
                amplitude: 0.05,
                peak_day: 15,
            }),
        )
        .unwrap();
        let lag = truth_delta(&truth);
        let max = *lag.delta.iter().max().unwrap();
        let min = *lag.delta.iter().min().unwrap();
        assert_eq!(max, 18);
        assert_eq!(min, 3);
        assert_eq!(lag.delta[15], 18);
        // periodic smoothness: wrap step is small
        let wrap = (lag.delta[0] - lag.delta[72]).abs();
        assert!(wrap <= 2, "wrap jump {wrap}");
    }

    #[test]
    fn truth_round_trips_through_file() {
        let spec = PanelSpec::new(20, 6, 2).unwrap();
        let truth = synth_truth(
            &spec,
            &TruthRecipe::SmoothBump(SmoothBumpRecipe {
                delta_min: 2,
                delta_max: 4,
                amplitude: 0.7,
                peak_day: 3,
            }),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("truth.csv");
        io::write_surface_csv(&path, &truth).unwrap();
        let back = synth_truth(&spec, &TruthRecipe::FromFile(path)).unwrap();
        assert!(truth.b.iter().zip(&back.b).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn from_file_rejects_wrong_grid() {
        let spec = PanelSpec::new(20, 6, 2).unwrap();
        let truth = synth_truth(
            &spec,
            &TruthRecipe::SmoothBump(SmoothBumpRecipe {
                delta_min: 2,
                delta_max: 4,
                amplitude: 0.7,
                peak_day: 3,
            }),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("truth.csv");
        io::write_surface_csv(&path, &truth).unwrap();
        let other = PanelSpec::new(20, 7, 2).unwrap();
        assert!(matches!(
            synth_truth(&other, &TruthRecipe::FromFile(path)),
            Err(SimulateError::TruthShapeMismatch { .. })
        ));
    }

    #[test]
    fn noise_calibration_identities() {
        let y: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.01).sin()).collect();
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / y.len() as f64;
        let s = calibrate_noise(&y, 0.5).unwrap();
        assert!((s - var).abs() < 1e-12);
        // the 0.4 vs 0.8 ratio is 6 by construction
        let ratio = calibrate_noise(&y, 0.4).unwrap() / calibrate_noise(&y, 0.8).unwrap();
        assert!((ratio - 6.0).abs() < 1e-9);
        assert!(calibrate_noise(&y, 1.2).is_err());
        assert!(calibrate_noise(&[1.0; 10], 0.5).is_err());
    }

    #[test]
    fn zero_noise_reproduces_signal() {
        let spec = PanelSpec::new(20, 4, 3).unwrap();
        let raw = synth_rainfall(&spec, &RainfallParams::default(), 5);
        let (x, _) = seasonal_demean(&raw);
        let truth = synth_truth(
            &spec,
            &TruthRecipe::SmoothBump(SmoothBumpRecipe {
                delta_min: 1,
                delta_max: 3,
                amplitude: 0.1,
                peak_day: 2,
            }),
        )
        .unwrap();
        let y = simulate_response(&x, &truth, 0.0, 9).unwrap();
        let (z, _, row_global) = build_design_matrix(&x).unwrap();
        let y_true = z.matvec(&truth.b);
        let y_rows: Vec<f64> = row_global.iter().map(|&u| y.values[u]).collect();
        assert_eq!(metrics::r2(&y_rows, &y_true).unwrap(), 1.0);
    }

    #[test]
    fn replicates_are_deterministic() {
        let spec = PanelSpec::new(20, 4, 3).unwrap();
        let raw = synth_rainfall(&spec, &RainfallParams::default(), 5);
        let (x, _) = seasonal_demean(&raw);
        let truth = synth_truth(
            &spec,
            &TruthRecipe::SmoothBump(SmoothBumpRecipe {
                delta_min: 1,
                delta_max: 3,
                amplitude: 0.1,
                peak_day: 2,
            }),
        )
        .unwrap();
        let (z, _, row_global) = build_design_matrix(&x).unwrap();
        let y_true = z.matvec(&truth.b);
        let a = scatter_response(spec, &y_true, &row_global, 0.3, mix_seed(1, 42));
        let b = scatter_response(spec, &y_true, &row_global, 0.3, mix_seed(1, 42));
        assert_eq!(a, b);
        let c = scatter_response(spec, &y_true, &row_global, 0.3, mix_seed(1, 43));
        assert_ne!(a, c);
    }
}
