//! Construction of the sparse design system and the two first-difference
//! penalty operators.
//!
//! The response row for global time index `u` regresses `y(u)` on the `D`
//! most recent driver values `x(u), x(u-1), ..., x(u-D+1)`. Lags reaching
//! before the start of a replicate read the tail of the previous replicate
//! through the global index; the first `D-1` global rows have no full lag
//! window and are dropped.

use thiserror::Error;

use crate::core::{CoreError, PanelKind, PanelSpec, SeriesPanel, SparseOperator};

#[derive(Debug, Error)]
pub enum OperatorError {
    #[error("driver and response specs differ")]
    SpecMismatch,
    #[error("panels must be anomalies (seasonally demeaned)")]
    NotAnomaly,
    #[error(transparent)]
    Core(#[from] CoreError),
}

/// Design matrix, response vector, and row bookkeeping.
#[derive(Debug, Clone)]
pub struct DesignSystem {
    pub spec: PanelSpec,
    /// `usable_rows x K`; each row holds the `D` lagged driver values.
    pub z: SparseOperator,
    pub y: Vec<f64>,
    /// Day-of-year of each row.
    pub row_day: Vec<usize>,
    /// Global time index of each row.
    pub row_global: Vec<usize>,
}

impl DesignSystem {
    /// Predicted response on all rows for a full-length coefficient vector.
    pub fn predict(&self, b: &[f64]) -> Vec<f64> {
        self.z.matvec(b)
    }
}

/// Builds just the lag matrix for a driver panel (no response attached).
pub fn build_design_matrix(
    x: &SeriesPanel,
) -> Result<(SparseOperator, Vec<usize>, Vec<usize>), OperatorError> {
    let spec = x.spec;
    spec.validate().map_err(OperatorError::Core)?;
    let d = spec.max_lag_count;
    let t_len = spec.period_length;
    let n_obs = spec.observation_count();
    let rows = spec.usable_rows();

    let mut triplets = Vec::with_capacity(rows * d);
    let mut row_day = Vec::with_capacity(rows);
    let mut row_global = Vec::with_capacity(rows);
    for (row, u) in ((d - 1)..n_obs).enumerate() {
        let t = u % t_len;
        for s in 0..d {
            triplets.push((row, spec.flat_unchecked(s, t), x.values[u - s]));
        }
        row_day.push(t);
        row_global.push(u);
    }
    let z = SparseOperator::from_triplets(rows, spec.coefficient_count(), &triplets)?;
    Ok((z, row_day, row_global))
}

/// Builds the full design system from anomaly panels.
pub fn build_design(x: &SeriesPanel, y: &SeriesPanel) -> Result<DesignSystem, OperatorError> {
    if x.spec != y.spec {
        return Err(OperatorError::SpecMismatch);
    }
    if x.kind != PanelKind::Anomaly || y.kind != PanelKind::Anomaly {
        return Err(OperatorError::NotAnomaly);
    }
    let (z, row_day, row_global) = build_design_matrix(x)?;
    let y_vec = row_global.iter().map(|&u| y.values[u]).collect();
    Ok(DesignSystem {
        spec: x.spec,
        z,
        y: y_vec,
        row_day,
        row_global,
    })
}

/// First differences across time at fixed lag, with periodic wrap so the
/// end of the period is tied back to its start. Row `t*D + s` encodes
/// `beta(s, (t+1) mod T) - beta(s, t)`.
pub fn build_horizontal_penalty(spec: &PanelSpec) -> SparseOperator {
    let d = spec.max_lag_count;
    let t_len = spec.period_length;
    let k = spec.coefficient_count();
    let mut triplets = Vec::with_capacity(2 * k);
    for t in 0..t_len {
        let t_next = (t + 1) % t_len;
        for s in 0..d {
            let row = t * d + s;
            // T = 1 degenerates: both entries land on one cell and cancel.
            triplets.push((row, spec.flat_unchecked(s, t), -1.0));
            triplets.push((row, spec.flat_unchecked(s, t_next), 1.0));
        }
    }
    SparseOperator::from_triplets(k, k, &triplets).expect("in-bounds by construction")
}

/// First differences across lag at fixed time, plus one boundary row per
/// time point pinning the top lag toward zero (influence past the largest
/// lag is assumed absent). `(D-1)*T` difference rows then `T` boundary rows.
pub fn build_vertical_penalty(spec: &PanelSpec) -> SparseOperator {
    let d = spec.max_lag_count;
    let t_len = spec.period_length;
    let k = spec.coefficient_count();
    let mut triplets = Vec::with_capacity(2 * k);
    for t in 0..t_len {
        for s in 0..d - 1 {
            let row = t * (d - 1) + s;
            triplets.push((row, spec.flat_unchecked(s, t), -1.0));
            triplets.push((row, spec.flat_unchecked(s + 1, t), 1.0));
        }
    }
    let boundary_base = (d - 1) * t_len;
    for t in 0..t_len {
        triplets.push((boundary_base + t, spec.flat_unchecked(d - 1, t), 1.0));
    }
    SparseOperator::from_triplets(k, k, &triplets).expect("in-bounds by construction")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::PanelKind;

    fn anomaly(spec: PanelSpec, values: Vec<f64>) -> SeriesPanel {
        SeriesPanel::new(spec, values, PanelKind::Anomaly).unwrap()
    }

    #[test]
    fn design_rows_follow_example_order() {
        // n=2, D=2, T=3: rows are y_1(2), y_1(3), y_2(1), y_2(2), y_2(3)
        // in 1-based labels, i.e. global indices 1..=5.
        let spec = PanelSpec::new(3, 2, 2).unwrap();
        let x = anomaly(spec, vec![10.0, 20.0, 30.0, 40.0, 50.0, 60.0]);
        let y = anomaly(spec, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let sys = build_design(&x, &y).unwrap();
        assert_eq!(sys.z.row_count(), 5);
        assert_eq!(sys.y, vec![2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(sys.row_global, vec![1, 2, 3, 4, 5]);
        assert_eq!(sys.row_day, vec![1, 2, 0, 1, 2]);
    }

    #[test]
    fn design_reads_previous_replicate_tail() {
        let spec = PanelSpec::new(3, 2, 2).unwrap();
        let x = anomaly(spec, vec![10.0, 20.0, 30.0, 40.0, 50.0, 60.0]);
        let y = anomaly(spec, vec![0.0; 6]);
        let sys = build_design(&x, &y).unwrap();
        // Row for y_2(1) (global u=3, day 0): lag 0 reads x_2(1)=40,
        // lag 1 reads x_1(3)=30 from the previous replicate.
        let (cols, vals) = sys.z.row(2);
        assert_eq!(cols, &[spec.flat_index(0, 0).unwrap(), spec.flat_index(1, 0).unwrap()]);
        assert_eq!(vals, &[40.0, 30.0]);
    }

    #[test]
    fn design_zero_driver_gives_zero_entries() {
        let spec = PanelSpec::new(3, 2, 2).unwrap();
        let x = anomaly(spec, vec![0.0; 6]);
        let y = anomaly(spec, vec![1.0, -1.0, 0.0, -1.0, 1.0, 0.0]);
        let sys = build_design(&x, &y).unwrap();
        assert!(sys.z.triplets().all(|(_, _, v)| v == 0.0));
        // structure is still D entries per row
        for r in 0..sys.z.row_count() {
            assert_eq!(sys.z.row(r).0.len(), 2);
        }
    }

    #[test]
    fn design_rejects_spec_mismatch() {
        let a = PanelSpec::new(3, 2, 2).unwrap();
        let b = PanelSpec::new(3, 2, 3).unwrap();
        let x = anomaly(a, vec![0.0; 6]);
        let y = anomaly(b, vec![0.0; 9]);
        assert!(matches!(build_design(&x, &y), Err(OperatorError::SpecMismatch)));
    }

    #[test]
    fn horizontal_penalty_matches_displayed_matrix() {
        let spec = PanelSpec::new(3, 2, 2).unwrap();
        let dh = build_horizontal_penalty(&spec);
        let want = [
            [-1.0, 0.0, 1.0, 0.0, 0.0, 0.0],
            [0.0, -1.0, 0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, -1.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, -1.0, 0.0, 1.0],
            [1.0, 0.0, 0.0, 0.0, -1.0, 0.0],
            [0.0, 1.0, 0.0, 0.0, 0.0, -1.0],
        ];
        assert_eq!(dh.to_dense(), want.map(|r| r.to_vec()).to_vec());
    }

    #[test]
    fn vertical_penalty_matches_displayed_matrix() {
        let spec = PanelSpec::new(3, 2, 2).unwrap();
        let dv = build_vertical_penalty(&spec);
        let want = [
            [-1.0, 1.0, 0.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, -1.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 0.0, -1.0, 1.0],
            [0.0, 1.0, 0.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 0.0, 0.0, 1.0],
        ];
        assert_eq!(dv.to_dense(), want.map(|r| r.to_vec()).to_vec());
    }

    #[test]
    fn horizontal_penalty_degenerate_period_is_zero() {
        let spec = PanelSpec::new(1, 2, 3).unwrap();
        let dh = build_horizontal_penalty(&spec);
        assert!(dh.triplets().all(|(_, _, v)| v == 0.0));
        let b = vec![3.0, -4.0];
        assert!(dh.matvec(&b).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_in_time_surface_has_zero_horizontal_energy() {
        let spec = PanelSpec::new(5, 3, 2).unwrap();
        let dh = build_horizontal_penalty(&spec);
        let mut b = vec![0.0; spec.coefficient_count()];
        for t in 0..5 {
            for s in 0..3 {
                b[spec.flat_index(s, t).unwrap()] = (s + 1) as f64;
            }
        }
        let norm: f64 = dh.matvec(&b).iter().map(|v| v * v).sum();
        assert_eq!(norm, 0.0);
    }

    #[test]
    fn vertical_boundary_rows_penalize_top_lag() {
        // constant surface c: difference rows vanish, boundary rows give T*c^2.
        let spec = PanelSpec::new(4, 3, 2).unwrap();
        let dv = build_vertical_penalty(&spec);
        let c = 2.5;
        let b = vec![c; spec.coefficient_count()];
        let norm: f64 = dv.matvec(&b).iter().map(|v| v * v).sum();
        assert!((norm - 4.0 * c * c).abs() < 1e-12);
    }

    #[test]
    fn z_rows_sum_to_recent_driver_window() {
        let spec = PanelSpec::new(4, 3, 2).unwrap();
        let vals: Vec<f64> = (0..8).map(|i| (i as f64) * 0.7 - 2.0).collect();
        let x = anomaly(spec, vals.clone());
        let y = anomaly(spec, vec![0.0; 8]);
        let sys = build_design(&x, &y).unwrap();
        for (row, &u) in sys.row_global.iter().enumerate() {
            let want: f64 = (0..3).map(|s| vals[u - s]).sum();
            let got: f64 = sys.z.row(row).1.iter().sum();
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn paper_scale_row_count() {
        let spec = PanelSpec::new(365, 150, 40).unwrap();
        assert_eq!(spec.usable_rows(), 14_451);
        assert_eq!(spec.coefficient_count(), 54_750);
    }
}
