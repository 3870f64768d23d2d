//! Domain types and index arithmetic shared by every stage of the fit.
//!
//! The coefficient surface lives on a `max_lag_count x period_length` grid
//! and is stored flat in time-major order: the coefficient for lag `s` at
//! day-of-year `t` sits at index `t * D + s`. All types here are immutable
//! after construction and safe to share across threads.

mod sparse;

pub use sparse::SparseOperator;

use std::collections::BTreeMap;

use thiserror::Error;

pub const ANOMALY_MEAN_TOL: f64 = 1e-10;

/// Derives an independent sub-seed; replicates and pipeline stages get
/// their own streams so results do not depend on scheduling.
pub(crate) fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("{what} = {value} out of range [0, {bound})")]
    IndexOutOfRange {
        what: &'static str,
        value: usize,
        bound: usize,
    },
    #[error("invalid panel spec: {0}")]
    InvalidSpec(String),
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("panel specs differ: {0}")]
    SpecMismatch(String),
    #[error("sparse entry ({row}, {col}) outside {row_count}x{col_count} operator")]
    EntryOutOfBounds {
        row: usize,
        col: usize,
        row_count: usize,
        col_count: usize,
    },
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
}

/// Dimensions of the periodic panel problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PanelSpec {
    /// Time points per replicate (days per year for daily data), `T`.
    pub period_length: usize,
    /// Number of lags considered, `D`; lags run over `0..D`.
    pub max_lag_count: usize,
    /// Number of replicates (years), `n`.
    pub replicate_count: usize,
}

impl PanelSpec {
    pub fn new(
        period_length: usize,
        max_lag_count: usize,
        replicate_count: usize,
    ) -> Result<Self, CoreError> {
        let spec = PanelSpec {
            period_length,
            max_lag_count,
            replicate_count,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        if self.period_length == 0 || self.max_lag_count == 0 || self.replicate_count == 0 {
            return Err(CoreError::InvalidSpec(
                "period_length, max_lag_count and replicate_count must all be >= 1".into(),
            ));
        }
        if self.max_lag_count > self.observation_count() {
            return Err(CoreError::InvalidSpec(format!(
                "max_lag_count {} exceeds observation count {}; no row is constructible",
                self.max_lag_count,
                self.observation_count()
            )));
        }
        Ok(())
    }

    /// Total coefficients `K = D * T`.
    pub fn coefficient_count(&self) -> usize {
        self.max_lag_count * self.period_length
    }

    /// Total observations `N = n * T`.
    pub fn observation_count(&self) -> usize {
        self.replicate_count * self.period_length
    }

    /// Rows with a full lag window available: `N - (D - 1)`.
    pub fn usable_rows(&self) -> usize {
        self.observation_count() - (self.max_lag_count - 1)
    }

    /// Flat coefficient index for lag `s` at day-of-year `t`.
    pub fn flat_index(&self, s: usize, t: usize) -> Result<usize, CoreError> {
        if s >= self.max_lag_count {
            return Err(CoreError::IndexOutOfRange {
                what: "lag",
                value: s,
                bound: self.max_lag_count,
            });
        }
        if t >= self.period_length {
            return Err(CoreError::IndexOutOfRange {
                what: "day",
                value: t,
                bound: self.period_length,
            });
        }
        Ok(t * self.max_lag_count + s)
    }

    #[inline]
    pub(crate) fn flat_unchecked(&self, s: usize, t: usize) -> usize {
        debug_assert!(s < self.max_lag_count && t < self.period_length);
        t * self.max_lag_count + s
    }

    /// Inverse of [`flat_index`](Self::flat_index): `(lag, day)` of flat index `k`.
    pub fn lag_day_of(&self, k: usize) -> Result<(usize, usize), CoreError> {
        if k >= self.coefficient_count() {
            return Err(CoreError::IndexOutOfRange {
                what: "coefficient",
                value: k,
                bound: self.coefficient_count(),
            });
        }
        Ok((k % self.max_lag_count, k / self.max_lag_count))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PanelKind {
    Raw,
    Anomaly,
}

/// One flattened series over `n` replicates of `T` time points.
///
/// Values are stored replicate-major: the value for replicate `i` at
/// day-of-year `t` sits at `i * T + t`.
#[derive(Debug, Clone)]
pub struct SeriesPanel {
    pub spec: PanelSpec,
    pub values: Vec<f64>,
    pub kind: PanelKind,
}

impl SeriesPanel {
    pub fn new(spec: PanelSpec, values: Vec<f64>, kind: PanelKind) -> Result<Self, CoreError> {
        spec.validate()?;
        if values.len() != spec.observation_count() {
            return Err(CoreError::LengthMismatch {
                expected: spec.observation_count(),
                actual: values.len(),
            });
        }
        Ok(SeriesPanel { spec, values, kind })
    }

    #[inline]
    pub fn value(&self, replicate: usize, t: usize) -> f64 {
        self.values[replicate * self.spec.period_length + t]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PanelViolation {
    LengthMismatch { expected: usize, actual: usize },
    NonFinite { index: usize },
    SeasonalMeanNonzero { day: usize, mean: f64 },
}

impl std::fmt::Display for PanelViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PanelViolation::LengthMismatch { expected, actual } => {
                write!(f, "length mismatch: expected {expected}, got {actual}")
            }
            PanelViolation::NonFinite { index } => write!(f, "non-finite at index {index}"),
            PanelViolation::SeasonalMeanNonzero { day, mean } => {
                write!(f, "seasonal mean nonzero at day {}: {mean}", day + 1)
            }
        }
    }
}

/// Report-only invariant check on a panel. Returns every violation found.
pub fn validate_panel(panel: &SeriesPanel) -> Vec<PanelViolation> {
    let mut violations = Vec::new();
    let expected = panel.spec.observation_count();
    if panel.values.len() != expected {
        violations.push(PanelViolation::LengthMismatch {
            expected,
            actual: panel.values.len(),
        });
        return violations;
    }
    for (i, v) in panel.values.iter().enumerate() {
        if !v.is_finite() {
            violations.push(PanelViolation::NonFinite { index: i });
        }
    }
    if panel.kind == PanelKind::Anomaly && violations.is_empty() {
        let t_len = panel.spec.period_length;
        let n = panel.spec.replicate_count;
        for t in 0..t_len {
            let mean: f64 =
                (0..n).map(|i| panel.values[i * t_len + t]).sum::<f64>() / n as f64;
            if mean.abs() > ANOMALY_MEAN_TOL {
                violations.push(PanelViolation::SeasonalMeanNonzero { day: t, mean });
            }
        }
    }
    violations
}

/// The coefficient surface on the lag x day grid, stored flat.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSurface {
    pub spec: PanelSpec,
    pub b: Vec<f64>,
}

impl CoefficientSurface {
    pub fn new(spec: PanelSpec, b: Vec<f64>) -> Result<Self, CoreError> {
        spec.validate()?;
        if b.len() != spec.coefficient_count() {
            return Err(CoreError::LengthMismatch {
                expected: spec.coefficient_count(),
                actual: b.len(),
            });
        }
        Ok(CoefficientSurface { spec, b })
    }

    pub fn zeros(spec: PanelSpec) -> Self {
        let k = spec.coefficient_count();
        CoefficientSurface {
            spec,
            b: vec![0.0; k],
        }
    }

    #[inline]
    pub fn value(&self, s: usize, t: usize) -> f64 {
        self.b[self.spec.flat_unchecked(s, t)]
    }
}

/// Sentinel for a day where every lag coefficient is zero.
pub const NO_LAG: i32 = -1;

/// The dynamic lag function: for each day of year, the largest lag with a
/// nonzero coefficient, or [`NO_LAG`] when the whole column is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct LagFunction {
    pub spec: PanelSpec,
    pub delta: Vec<i32>,
}

impl LagFunction {
    pub fn new(spec: PanelSpec, delta: Vec<i32>) -> Result<Self, CoreError> {
        spec.validate()?;
        if delta.len() != spec.period_length {
            return Err(CoreError::LengthMismatch {
                expected: spec.period_length,
                actual: delta.len(),
            });
        }
        for (t, &d) in delta.iter().enumerate() {
            if d < NO_LAG || d >= spec.max_lag_count as i32 {
                return Err(CoreError::IndexOutOfRange {
                    what: "delta",
                    value: t,
                    bound: spec.max_lag_count,
                });
            }
        }
        Ok(LagFunction { spec, delta })
    }
}

/// Tuning knobs for a full fit.
#[derive(Debug, Clone)]
pub struct FitConfig {
    /// Horizontal (across-time) smoothing weight; used directly when
    /// `optimize_weights` is false, otherwise a fallback for degenerate runs.
    pub w_h: f64,
    /// Vertical (across-lag) smoothing weight.
    pub w_v: f64,
    /// Explicit sparsity threshold; `None` selects it from the knee onset
    /// of the threshold curve.
    pub q: Option<f64>,
    pub optimize_weights: bool,
    pub solver_rel_tol: f64,
    pub hyperopt_init_count: usize,
    pub hyperopt_iter_count: usize,
    /// Search box for `ln(w_h)`.
    pub log_wh_bounds: (f64, f64),
    /// Search box for `ln(w_v)`.
    pub log_wv_bounds: (f64, f64),
    pub threshold_grid_size: usize,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            w_h: 1.0,
            w_v: 1.0,
            q: None,
            optimize_weights: true,
            solver_rel_tol: 1e-10,
            hyperopt_init_count: 30,
            hyperopt_iter_count: 35,
            log_wh_bounds: (10.0, 20.0),
            log_wv_bounds: (-5.0, 15.0),
            threshold_grid_size: 50,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<(), CoreError> {
        if !(self.w_h > 0.0) || !(self.w_v > 0.0) {
            return Err(CoreError::InvalidSpec("weights must be > 0".into()));
        }
        if let Some(q) = self.q {
            if !(q >= 0.0) {
                return Err(CoreError::InvalidSpec("q must be >= 0".into()));
            }
        }
        if !(self.solver_rel_tol > 0.0) {
            return Err(CoreError::InvalidSpec("solver_rel_tol must be > 0".into()));
        }
        if self.hyperopt_init_count == 0 || self.hyperopt_iter_count == 0 {
            return Err(CoreError::InvalidSpec("hyperopt counts must be >= 1".into()));
        }
        if self.log_wh_bounds.0 >= self.log_wh_bounds.1
            || self.log_wv_bounds.0 >= self.log_wv_bounds.1
        {
            return Err(CoreError::InvalidSpec("weight bounds must be ordered".into()));
        }
        if !self.log_wh_bounds.0.is_finite()
            || !self.log_wh_bounds.1.is_finite()
            || !self.log_wv_bounds.0.is_finite()
            || !self.log_wv_bounds.1.is_finite()
        {
            return Err(CoreError::InvalidSpec("weight bounds must be finite".into()));
        }
        if self.threshold_grid_size < 5 {
            return Err(CoreError::InvalidSpec(
                "threshold_grid_size must be >= 5".into(),
            ));
        }
        Ok(())
    }
}

/// Everything a fit produces.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub surface: CoefficientSurface,
    pub delta: LagFunction,
    pub support: Vec<bool>,
    /// Final `(w_h, w_v)` used for the all-data refit.
    pub weights: (f64, f64),
    pub threshold: f64,
    pub r2_whole: f64,
    pub r2_validation: f64,
    pub diagnostics: BTreeMap<String, f64>,
}

impl FitResult {
    /// Checks the support/surface/delta consistency contract.
    pub fn validate(&self) -> Result<(), CoreError> {
        for (k, &kept) in self.support.iter().enumerate() {
            if !kept && self.surface.b[k] != 0.0 {
                return Err(CoreError::InvalidSpec(format!(
                    "coefficient {k} nonzero outside support"
                )));
            }
        }
        let d = self.surface.spec.max_lag_count;
        for (t, &dt) in self.delta.delta.iter().enumerate() {
            let max_kept = (0..d)
                .rev()
                .find(|&s| self.support[self.surface.spec.flat_unchecked(s, t)])
                .map(|s| s as i32)
                .unwrap_or(NO_LAG);
            if dt != max_kept {
                return Err(CoreError::InvalidSpec(format!(
                    "delta({t}) = {dt} inconsistent with support (expected {max_kept})"
                )));
            }
        }
        Ok(())
    }
}
