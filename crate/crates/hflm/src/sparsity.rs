//! Nested tail group norms, thresholding, knee-onset selection of the
//! sparsity level, and extraction of the dynamic lag function.
//!
//! For each day `t` the group at lag `s` collects all coefficients from
//! `s` up to the top lag, so group norms are reverse cumulative sums of
//! squares and are non-increasing in `s`. Thresholding the norms therefore
//! always zeroes an upper tail of lags, which is exactly what defines
//! `delta(t)`.

use thiserror::Error;

use crate::core::{CoefficientSurface, LagFunction, PanelSpec, NO_LAG};
use crate::metrics;
use crate::operators::DesignSystem;
use crate::par::par_map_indices;
use crate::solver::{self, GramCache, PenaltyGrams, SolveOptions, SolverError};

#[derive(Debug, Error)]
pub enum SparsityError {
    #[error("nothing to threshold: all group norms are zero")]
    NothingToThreshold,
    #[error("support at day {day} is not an upper tail in lag")]
    NonTailSupport { day: usize },
    #[error("threshold curve too short: {0} points (need >= 5)")]
    CurveTooShort(usize),
    #[error("no knee: curve is constant")]
    NoKnee,
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// Tail group norms `G(s, t) = sum of beta(s', t)^2 for s' >= s`,
/// stored in the same flat layout as the surface.
#[derive(Debug, Clone)]
pub struct GroupNormGrid {
    pub spec: PanelSpec,
    pub g: Vec<f64>,
}

pub fn group_norms(surface: &CoefficientSurface) -> GroupNormGrid {
    let spec = surface.spec;
    let d = spec.max_lag_count;
    let mut g = vec![0.0; spec.coefficient_count()];
    for t in 0..spec.period_length {
        let base = t * d;
        let mut acc = 0.0;
        for s in (0..d).rev() {
            let v = surface.b[base + s];
            acc += v * v;
            g[base + s] = acc;
        }
    }
    GroupNormGrid { spec, g }
}

/// Keeps lag `s` at day `t` while the tail norm at `s` is still `>= q`.
/// Nesting makes the zero set an upper tail in `s` for every day.
pub fn apply_threshold(grid: &GroupNormGrid, q: f64) -> Vec<bool> {
    let d = grid.spec.max_lag_count;
    let mut support = vec![false; grid.g.len()];
    for t in 0..grid.spec.period_length {
        let base = t * d;
        for s in 0..d {
            if grid.g[base + s] < q {
                break;
            }
            support[base + s] = true;
        }
    }
    support
}

/// Largest kept lag per day, or the sentinel when a day keeps nothing.
pub fn extract_delta(spec: &PanelSpec, support: &[bool]) -> Result<LagFunction, SparsityError> {
    let d = spec.max_lag_count;
    let mut delta = Vec::with_capacity(spec.period_length);
    for t in 0..spec.period_length {
        let base = t * d;
        let col = &support[base..base + d];
        let last_kept = col.iter().rposition(|&k| k);
        // kept entries must form a prefix
        let prefix_len = col.iter().position(|&k| !k).unwrap_or(d);
        match last_kept {
            Some(s) if s + 1 != prefix_len => {
                return Err(SparsityError::NonTailSupport { day: t });
            }
            Some(s) => delta.push(s as i32),
            None => delta.push(NO_LAG),
        }
    }
    Ok(LagFunction {
        spec: *spec,
        delta,
    })
}

/// The sparsity-level sweep: threshold, refit, score.
#[derive(Debug, Clone)]
pub struct ThresholdCurve {
    pub q_grid: Vec<f64>,
    pub r2: Vec<f64>,
    pub support_sizes: Vec<usize>,
}

/// Sweeps a geometric grid of thresholds over the positive group-norm
/// range. Each grid point refits the restricted model on the cached rows
/// and scores whole-data R^2; zeroing alone is never scored.
#[allow(clippy::too_many_arguments)]
pub fn threshold_curve(
    system: &DesignSystem,
    gram: &GramCache,
    penalties: &PenaltyGrams,
    w_h: f64,
    w_v: f64,
    surface: &CoefficientSurface,
    grid_size: usize,
    opts: &SolveOptions,
) -> Result<ThresholdCurve, SparsityError> {
    let grid = group_norms(surface);
    let mut min_pos = f64::INFINITY;
    let mut max_g = 0.0f64;
    for &g in &grid.g {
        if g > 0.0 {
            min_pos = min_pos.min(g);
            max_g = max_g.max(g);
        }
    }
    if !min_pos.is_finite() {
        return Err(SparsityError::NothingToThreshold);
    }
    let (lo, hi) = if max_g / min_pos < 1.0 + 1e-12 {
        (min_pos * (1.0 - 1e-6), max_g * (1.0 + 1e-6))
    } else {
        (min_pos, max_g)
    };
    let ratio = (hi / lo).ln();
    let q_grid: Vec<f64> = (0..grid_size)
        .map(|i| lo * (ratio * i as f64 / (grid_size - 1) as f64).exp())
        .collect();

    let rows = gram.row_count;
    let y_rows = &system.y[..rows];
    let results = par_map_indices(grid_size, |i| -> Result<(f64, usize), SparsityError> {
        let support = apply_threshold(&grid, q_grid[i]);
        let size = support.iter().filter(|&&s| s).count();
        if size == 0 {
            // empty model predicts zero everywhere
            let r2 = metrics::r2(y_rows, &vec![0.0; rows]).unwrap_or(0.0);
            return Ok((r2, 0));
        }
        let (surf, _) =
            solver::fit_surface_cached(&grid.spec, gram, penalties, w_h, w_v, &support, opts)?;
        let preds = system.z.select_rows(0, rows).matvec(&surf.b);
        let r2 = metrics::r2(y_rows, &preds).unwrap_or(0.0);
        Ok((r2, size))
    });
    let mut r2 = Vec::with_capacity(grid_size);
    let mut support_sizes = Vec::with_capacity(grid_size);
    for res in results {
        let (v, s) = res?;
        r2.push(v);
        support_sizes.push(s);
    }
    Ok(ThresholdCurve {
        q_grid,
        r2,
        support_sizes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KneeMethod {
    Kneedle,
    CurvatureFallback,
}

#[derive(Debug, Clone, Copy)]
pub struct KneeResult {
    pub q: f64,
    pub index: usize,
    pub method: KneeMethod,
}

const KNEE_PROMINENCE_FLOOR: f64 = 0.01;

/// Picks the threshold where the R^2 decline sets in: normalize the curve
/// to the unit square, take the elevation of the curve above the falling
/// diagonal, and return the smallest-q local maximum with enough
/// prominence. A curve with no prominent maximum falls back to the point
/// of largest first/current/last Menger curvature.
pub fn knee_onset(curve: &ThresholdCurve) -> Result<KneeResult, SparsityError> {
    let n = curve.r2.len();
    if n < 5 {
        return Err(SparsityError::CurveTooShort(n));
    }
    let max = curve.r2.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = curve.r2.iter().cloned().fold(f64::INFINITY, f64::min);
    if max - min <= 0.0 || !(max - min).is_finite() {
        return Err(SparsityError::NoKnee);
    }
    let xs: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
    let ys: Vec<f64> = curve.r2.iter().map(|&v| (v - min) / (max - min)).collect();
    let diff: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| y + x - 1.0).collect();

    let peaks = local_maxima(&diff);
    let mut knees: Vec<usize> = peaks
        .into_iter()
        .filter(|&i| prominence(&diff, i) >= KNEE_PROMINENCE_FLOOR)
        .collect();
    knees.sort_unstable();
    if let Some(&first) = knees.first() {
        return Ok(KneeResult {
            q: curve.q_grid[first],
            index: first,
            method: KneeMethod::Kneedle,
        });
    }

    // Menger curvature of (first, i, last) on the normalized curve
    let (x0, y0) = (xs[0], ys[0]);
    let (xl, yl) = (xs[n - 1], ys[n - 1]);
    let mut best = (1usize, f64::NEG_INFINITY);
    for i in 1..n - 1 {
        let (xi, yi) = (xs[i], ys[i]);
        let area2 = ((xi - x0) * (yl - y0) - (xl - x0) * (yi - y0)).abs();
        let d0 = ((xi - x0).powi(2) + (yi - y0).powi(2)).sqrt();
        let dl = ((xl - xi).powi(2) + (yl - yi).powi(2)).sqrt();
        let d0l = ((xl - x0).powi(2) + (yl - y0).powi(2)).sqrt();
        // rounding noise on collinear points must not win the argmax
        let curv = if d0 * dl * d0l > 0.0 && area2 > 1e-12 {
            2.0 * area2 / (d0 * dl * d0l)
        } else {
            0.0
        };
        if curv > best.1 {
            best = (i, curv);
        }
    }
    Ok(KneeResult {
        q: curve.q_grid[best.0],
        index: best.0,
        method: KneeMethod::CurvatureFallback,
    })
}

/// Indices of strict-or-plateau local maxima; a plateau reports its first
/// index.
fn local_maxima(d: &[f64]) -> Vec<usize> {
    let n = d.len();
    let mut peaks = Vec::new();
    let mut i = 1;
    while i < n - 1 {
        if d[i] > d[i - 1] {
            // scan the plateau starting at i
            let start = i;
            while i + 1 < n && d[i + 1] == d[i] {
                i += 1;
            }
            if i + 1 < n && d[i + 1] < d[i] {
                peaks.push(start);
            }
        }
        i += 1;
    }
    peaks
}

/// Topographic prominence: height above the higher of the valley floors
/// separating this peak from greater terrain (or the curve ends).
fn prominence(d: &[f64], peak: usize) -> f64 {
    let h = d[peak];
    let mut left_min = h;
    for i in (0..peak).rev() {
        if d[i] > h {
            break;
        }
        left_min = left_min.min(d[i]);
    }
    let mut right_min = h;
    for &v in &d[peak + 1..] {
        if v > h {
            break;
        }
        right_min = right_min.min(v);
    }
    h - left_min.max(right_min)
}
