//! End-to-end orchestration: optimize smoothing weights on a validation
//! split, fit the smooth surface, sweep the sparsity threshold, pick the
//! knee onset, re-optimize weights under the selected support, and refit
//! on all in-scope data.
//!
//! Splits are chronological over the usable rows: serial dependence makes
//! random splits leak history across the boundary. The holdout mode keeps
//! the final 20% of rows untouched for test scoring; its lag windows may
//! reach back into earlier blocks, which is how prediction at the boundary
//! works on real data too.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::core::{
    mix_seed, CoefficientSurface, CoreError, FitConfig, FitResult, PanelSpec, SeriesPanel,
};
use crate::hyperopt::{
    optimize_weights, optimize_weights_with_design, HyperoptError, SearchSpace, TraceEntry,
};
use crate::metrics::{self, MetricsError};
use crate::operators::{
    build_design, build_horizontal_penalty, build_vertical_penalty, DesignSystem, OperatorError,
};
use crate::solver::{self, GramCache, PenaltyGrams, SolveOptions, SolverError};
use crate::sparsity::{
    apply_threshold, extract_delta, group_norms, knee_onset, threshold_curve, KneeMethod,
    KneeResult, SparsityError, ThresholdCurve,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Sparsity(#[from] SparsityError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Hyperopt(#[from] HyperoptError),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("test block has {rows} rows; need at least the lag window ({need})")]
    TestBlockTooShort { rows: usize, need: usize },
    #[error("split leaves an empty train or validation block")]
    EmptySplit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitMode {
    /// 80% training, final 20% validation; refits use all rows.
    Train80Val20,
    /// 60/20/20; the final 20% is never touched until test scoring.
    Train60Val20Test20,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub fit: FitResult,
    pub curve: Option<ThresholdCurve>,
    pub knee: Option<KneeResult>,
    pub trace_smooth: Vec<TraceEntry>,
    pub trace_sparse: Vec<TraceEntry>,
    pub test_r2: Option<f64>,
}

/// The full fitting pipeline on the 80/20 split.
pub fn run_algorithm1(
    x: &SeriesPanel,
    y: &SeriesPanel,
    config: &FitConfig,
) -> Result<PipelineOutput, PipelineError> {
    run_pipeline(x, y, config, SplitMode::Train80Val20)
}

/// The pipeline fit on train+validation only, scored on the untouched
/// chronological test block.
pub fn evaluate_holdout(
    x: &SeriesPanel,
    y: &SeriesPanel,
    config: &FitConfig,
) -> Result<PipelineOutput, PipelineError> {
    run_pipeline(x, y, config, SplitMode::Train60Val20Test20)
}

pub fn run_pipeline(
    x: &SeriesPanel,
    y: &SeriesPanel,
    config: &FitConfig,
    mode: SplitMode,
) -> Result<PipelineOutput, PipelineError> {
    config.validate()?;
    let spec = x.spec;
    let system = build_design(x, y)?;
    let rows = system.z.row_count();
    let (train_end, val_end, whole_end) = match mode {
        SplitMode::Train80Val20 => (rows * 8 / 10, rows, rows),
        SplitMode::Train60Val20Test20 => {
            let test_rows = rows - rows * 8 / 10;
            if test_rows < spec.max_lag_count {
                return Err(PipelineError::TestBlockTooShort {
                    rows: test_rows,
                    need: spec.max_lag_count,
                });
            }
            (rows * 6 / 10, rows * 8 / 10, rows * 8 / 10)
        }
    };
    if train_end == 0 || val_end <= train_end {
        return Err(PipelineError::EmptySplit);
    }

    let d_h = build_horizontal_penalty(&spec);
    let d_v = build_vertical_penalty(&spec);
    let penalties = PenaltyGrams::new(&d_h, &d_v);
    let gram_train = GramCache::for_rows(&system, 0, train_end);
    let gram_whole = GramCache::for_rows(&system, 0, whole_end);
    let opts = SolveOptions {
        rel_tol: config.solver_rel_tol,
        ..SolveOptions::default()
    };
    let space = SearchSpace::new(config.log_wh_bounds, config.log_wv_bounds)?;
    let k = spec.coefficient_count();
    let full_support = vec![true; k];

    let z_val = system.z.select_rows(train_end, val_end);
    let y_val = &system.y[train_end..val_end];
    let val_r2 = |w_h: f64, w_v: f64, support: &[bool]| -> Option<f64> {
        let (surf, _) =
            solver::fit_surface_cached(&spec, &gram_train, &penalties, w_h, w_v, support, &opts)
                .ok()?;
        metrics::r2(y_val, &z_val.matvec(&surf.b)).ok()
    };

    let mut diagnostics: BTreeMap<String, f64> = BTreeMap::new();
    diagnostics.insert("train_rows".into(), train_end as f64);
    diagnostics.insert("val_rows".into(), (val_end - train_end) as f64);
    diagnostics.insert("whole_rows".into(), whole_end as f64);

    // step 1: smoothing weights on the validation split
    let (mut w_h, mut w_v) = (config.w_h, config.w_v);
    let mut trace_smooth = Vec::new();
    let mut smooth_points: Vec<[f64; 2]> = Vec::new();
    let mut r2_validation = f64::NEG_INFINITY;
    if config.optimize_weights {
        let out = optimize_weights(
            &|wh, wv| val_r2(wh, wv, &full_support),
            &space,
            config.hyperopt_init_count,
            config.hyperopt_iter_count,
            mix_seed(config.seed, 1),
        );
        w_h = out.w_h;
        w_v = out.w_v;
        r2_validation = out.best_value;
        smooth_points = out.points.clone();
        trace_smooth = out.trace;
    } else if let Some(v) = val_r2(w_h, w_v, &full_support) {
        r2_validation = v;
    }
    diagnostics.insert("w_h_smooth".into(), w_h);
    diagnostics.insert("w_v_smooth".into(), w_v);

    // step 2: smooth full-support fit on the training rows
    let (surface_smooth, _) =
        solver::fit_surface_cached(&spec, &gram_train, &penalties, w_h, w_v, &full_support, &opts)?;

    // steps 3-4: group norms, threshold sweep, knee onset
    let curve = match threshold_curve(
        &system,
        &gram_whole,
        &penalties,
        w_h,
        w_v,
        &surface_smooth,
        config.threshold_grid_size,
        &opts,
    ) {
        Ok(c) => Some(c),
        Err(SparsityError::NothingToThreshold) => None,
        Err(e) => return Err(e.into()),
    };

    let mut knee = None;
    let q = match (config.q, &curve) {
        (Some(q), _) => q,
        (None, Some(c)) => match knee_onset(c) {
            Ok(kr) => {
                diagnostics.insert("knee_index".into(), kr.index as f64);
                diagnostics.insert(
                    "knee_method_fallback".into(),
                    f64::from(kr.method == KneeMethod::CurvatureFallback),
                );
                knee = Some(kr);
                kr.q
            }
            Err(SparsityError::NoKnee) | Err(SparsityError::CurveTooShort(_)) => {
                diagnostics.insert("knee_failed".into(), 1.0);
                0.0
            }
            Err(e) => return Err(e.into()),
        },
        // an all-zero smooth surface has nothing to threshold; fall through
        // to an explicit empty-or-full support via q
        (None, None) => 0.0,
    };
    diagnostics.insert("q".into(), q);

    let norms = group_norms(&surface_smooth);
    let support = apply_threshold(&norms, q);
    let support_size = support.iter().filter(|&&s| s).count();
    diagnostics.insert("support_size".into(), support_size as f64);

    let y_whole = &system.y[..whole_end];
    let z_whole = system.z.select_rows(0, whole_end);

    // empty support: report the null model instead of failing
    if support_size == 0 {
        diagnostics.insert("empty_support".into(), 1.0);
        let surface = CoefficientSurface::zeros(spec);
        let delta = extract_delta(&spec, &support)?;
        let r2_whole = metrics::r2(y_whole, &vec![0.0; whole_end]).unwrap_or(0.0);
        let r2_val_null = metrics::r2(y_val, &vec![0.0; y_val.len()]).unwrap_or(0.0);
        let fit = FitResult {
            surface,
            delta,
            support,
            weights: (w_h, w_v),
            threshold: q,
            r2_whole,
            r2_validation: r2_val_null,
            diagnostics,
        };
        let test_r2 = test_score(&system, mode, val_end, rows, &fit.surface.b)?;
        return Ok(PipelineOutput {
            fit,
            curve,
            knee,
            trace_smooth,
            trace_sparse: Vec::new(),
            test_r2,
        });
    }

    // step 5: re-optimize the weights under the selected support, warm
    // started from the step-1 design, then refit on all in-scope rows
    let mut trace_sparse = Vec::new();
    if config.optimize_weights {
        let out = if smooth_points.is_empty() {
            optimize_weights(
                &|wh, wv| val_r2(wh, wv, &support),
                &space,
                config.hyperopt_init_count,
                config.hyperopt_iter_count,
                mix_seed(config.seed, 2),
            )
        } else {
            optimize_weights_with_design(
                &|wh, wv| val_r2(wh, wv, &support),
                &space,
                &smooth_points,
                config.hyperopt_iter_count,
            )
        };
        w_h = out.w_h;
        w_v = out.w_v;
        r2_validation = out.best_value;
        trace_sparse = out.trace;
    } else if let Some(v) = val_r2(w_h, w_v, &support) {
        r2_validation = v;
    }

    let (surface, stats) =
        solver::fit_surface_cached(&spec, &gram_whole, &penalties, w_h, w_v, &support, &opts)?;
    diagnostics.insert("solver_iterations_final".into(), stats.iterations as f64);
    diagnostics.insert("solver_residual_final".into(), stats.rel_residual);

    let delta = extract_delta(&spec, &support)?;
    let r2_whole = metrics::r2(y_whole, &z_whole.matvec(&surface.b))?;
    diagnostics.insert(
        "eval_count_smooth".into(),
        trace_smooth.len() as f64,
    );
    diagnostics.insert(
        "eval_count_sparse".into(),
        trace_sparse.len() as f64,
    );

    let fit = FitResult {
        surface,
        delta,
        support,
        weights: (w_h, w_v),
        threshold: q,
        r2_whole,
        r2_validation,
        diagnostics,
    };
    let test_r2 = test_score(&system, mode, val_end, rows, &fit.surface.b)?;
    Ok(PipelineOutput {
        fit,
        curve,
        knee,
        trace_smooth,
        trace_sparse,
        test_r2,
    })
}

fn test_score(
    system: &DesignSystem,
    mode: SplitMode,
    test_start: usize,
    rows: usize,
    b: &[f64],
) -> Result<Option<f64>, PipelineError> {
    if mode != SplitMode::Train60Val20Test20 {
        return Ok(None);
    }
    let z_test = system.z.select_rows(test_start, rows);
    let preds = z_test.matvec(b);
    Ok(Some(metrics::r2(&system.y[test_start..rows], &preds)?))
}

/// A fresh fit of the smooth objective at fixed weights, outside the
/// pipeline; used by callers that only need a single surface.
pub fn fit_once(
    x: &SeriesPanel,
    y: &SeriesPanel,
    spec: &PanelSpec,
    w_h: f64,
    w_v: f64,
    rel_tol: f64,
) -> Result<CoefficientSurface, PipelineError> {
    let system = build_design(x, y)?;
    let d_h = build_horizontal_penalty(spec);
    let d_v = build_vertical_penalty(spec);
    let opts = SolveOptions {
        rel_tol,
        ..SolveOptions::default()
    };
    let support = vec![true; spec.coefficient_count()];
    let (surface, _) = solver::fit_surface(spec, &system, &d_h, &d_v, w_h, w_v, &support, &opts)?;
    Ok(surface)
}
