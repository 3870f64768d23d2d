//! Dynamically sparse historical functional linear models.
//!
//! Estimates the time-varying coefficient surface `beta(s, t)` linking a
//! daily driver series (rainfall) to a response series (streamflow) over a
//! window of past days, together with the dynamic lag function `delta(t)`:
//! the largest lag that still influences the response at each day of year.
//!
//! The surface lives on a zero-degree-spline (Whittaker) grid, so fitting
//! reduces to a doubly penalized sparse least-squares problem: first
//! differences across time (with a periodic wrap) and across lag (with a
//! zero top boundary) regularize the underdetermined system. Sparsity comes
//! from nested tail group norms: all coefficients at day `t` from lag `s`
//! up form one group, and groups whose squared norm falls below a threshold
//! `q` are zeroed before a refit. Smoothing weights are chosen by Gaussian
//! process Bayesian optimization of validation R^2, and `q` by the knee
//! onset of the threshold-vs-R^2 curve.
//!
//! The `simulate` module generates ground-truth scenarios, calibrates noise
//! to a target signal R^2, and runs replicated recovery studies; `cli`
//! backs the `hflm` binary (`fit`, `simulate`, `eval`).

pub mod core;
pub mod hyperopt;
pub mod ingest;
pub mod io;
pub mod metrics;
pub mod operators;
mod par;
pub mod pipeline;
pub mod simulate;
pub mod solver;
pub mod sparsity;

pub mod cli;

pub use crate::core::{
    CoefficientSurface, FitConfig, FitResult, LagFunction, PanelKind, PanelSpec, SeriesPanel,
    SparseOperator,
};
pub use crate::par::is_parallel;
