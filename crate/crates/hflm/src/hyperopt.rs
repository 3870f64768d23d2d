//! Bayesian optimization of the two smoothing weights.
//!
//! Works in log-weight coordinates normalized to the unit square. A
//! Gaussian process with an anisotropic squared-exponential kernel is fit
//! to the observed validation scores (kernel hyperparameters picked by
//! marginal likelihood over a coarse grid), and the next point maximizes
//! expected improvement over a fixed candidate lattice plus the incumbent's
//! neighborhood. Everything is deterministic for a fixed seed: the only
//! randomness is the initial design, and ties resolve by candidate order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};
use thiserror::Error;

use crate::par::par_map_indices;

#[derive(Debug, Error)]
pub enum HyperoptError {
    #[error("need at least {need} observations, got {got}")]
    NotEnoughPoints { need: usize, got: usize },
    #[error("non-finite observation value")]
    NonFiniteValue,
    #[error("kernel matrix not positive definite after nugget escalation")]
    KernelNotPd,
    #[error("search bounds must be finite and ordered")]
    BadBounds,
}

/// Log-scale search box for `(w_h, w_v)`.
#[derive(Debug, Clone, Copy)]
pub struct SearchSpace {
    pub log_wh: (f64, f64),
    pub log_wv: (f64, f64),
}

impl SearchSpace {
    pub fn new(log_wh: (f64, f64), log_wv: (f64, f64)) -> Result<Self, HyperoptError> {
        let ordered = log_wh.0 < log_wh.1 && log_wv.0 < log_wv.1;
        let finite = [log_wh.0, log_wh.1, log_wv.0, log_wv.1]
            .iter()
            .all(|v| v.is_finite());
        if !ordered || !finite {
            return Err(HyperoptError::BadBounds);
        }
        Ok(SearchSpace { log_wh, log_wv })
    }

    /// Maps a point of the unit square to weight space.
    pub fn weights_at(&self, u: [f64; 2]) -> (f64, f64) {
        let lw = self.log_wh.0 + u[0] * (self.log_wh.1 - self.log_wh.0);
        let lv = self.log_wv.0 + u[1] * (self.log_wv.1 - self.log_wv.0);
        (lw.exp(), lv.exp())
    }

    pub fn contains(&self, w_h: f64, w_v: f64) -> bool {
        let (lh, lv) = (w_h.ln(), w_v.ln());
        let eps = 1e-9;
        lh >= self.log_wh.0 - eps
            && lh <= self.log_wh.1 + eps
            && lv >= self.log_wv.0 - eps
            && lv <= self.log_wv.1 + eps
    }
}

/// Uniform points on the unit square; fixed seed, fixed list.
pub fn sample_initial(count: usize, seed: u64) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| [rng.gen::<f64>(), rng.gen::<f64>()]).collect()
}

// -- Gaussian process surrogate ------------------------------------------

const LENGTH_SCALE_GRID: [f64; 5] = [0.05, 0.1, 0.2, 0.4, 0.8];
const SIGNAL_SCALE_GRID: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];
const NUGGET_FACTOR: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct SurrogateModel {
    points: Vec<[f64; 2]>,
    mean_offset: f64,
    alpha: Vec<f64>,
    chol: DenseChol,
    pub length_scales: [f64; 2],
    pub signal_variance: f64,
    pub nugget: f64,
    best_value: f64,
}

impl SurrogateModel {
    /// Fits the GP: duplicates collapse to their best value, kernel
    /// hyperparameters come from the marginal-likelihood grid.
    pub fn fit(points: &[[f64; 2]], values: &[f64]) -> Result<Self, HyperoptError> {
        assert_eq!(points.len(), values.len());
        if values.iter().any(|v| !v.is_finite()) {
            return Err(HyperoptError::NonFiniteValue);
        }
        let mut paired: Vec<([f64; 2], f64)> =
            points.iter().copied().zip(values.iter().copied()).collect();
        paired.sort_by(|a, b| {
            (a.0[0].to_bits(), a.0[1].to_bits()).cmp(&(b.0[0].to_bits(), b.0[1].to_bits()))
        });
        paired.dedup_by(|next, prev| {
            if next.0 == prev.0 {
                prev.1 = prev.1.max(next.1);
                true
            } else {
                false
            }
        });
        let n = paired.len();
        if n < 2 {
            return Err(HyperoptError::NotEnoughPoints { need: 2, got: n });
        }
        let pts: Vec<[f64; 2]> = paired.iter().map(|p| p.0).collect();
        let vals: Vec<f64> = paired.iter().map(|p| p.1).collect();
        let mean_offset = vals.iter().sum::<f64>() / n as f64;
        let resid: Vec<f64> = vals.iter().map(|v| v - mean_offset).collect();
        let var = resid.iter().map(|r| r * r).sum::<f64>() / n as f64;
        let var_floor = var.max(1e-12);

        let mut best: Option<(f64, SurrogateModel)> = None;
        for &l1 in &LENGTH_SCALE_GRID {
            for &l2 in &LENGTH_SCALE_GRID {
                for &ss in &SIGNAL_SCALE_GRID {
                    let signal = ss * var_floor;
                    let nugget = NUGGET_FACTOR * signal;
                    let Some((chol, alpha, lml)) =
                        try_fit(&pts, &resid, [l1, l2], signal, nugget)
                    else {
                        continue;
                    };
                    if best.as_ref().map(|(b, _)| lml > *b).unwrap_or(true) {
                        let best_value =
                            vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        best = Some((
                            lml,
                            SurrogateModel {
                                points: pts.clone(),
                                mean_offset,
                                alpha,
                                chol,
                                length_scales: [l1, l2],
                                signal_variance: signal,
                                nugget,
                                best_value,
                            },
                        ));
                    }
                }
            }
        }
        match best {
            Some((_, model)) => Ok(model),
            None => {
                // escalate the nugget once before giving up
                for bump in [1e-4, 1e-2] {
                    let signal = var_floor;
                    let nugget = bump * signal;
                    if let Some((chol, alpha, _)) =
                        try_fit(&pts, &resid, [0.2, 0.2], signal, nugget)
                    {
                        let best_value =
                            vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        return Ok(SurrogateModel {
                            points: pts,
                            mean_offset,
                            alpha,
                            chol,
                            length_scales: [0.2, 0.2],
                            signal_variance: signal,
                            nugget,
                            best_value,
                        });
                    }
                }
                Err(HyperoptError::KernelNotPd)
            }
        }
    }

    /// Posterior mean and variance at a point of the unit square.
    pub fn predict(&self, x: [f64; 2]) -> (f64, f64) {
        let n = self.points.len();
        let kstar: Vec<f64> = (0..n)
            .map(|i| kernel(self.points[i], x, self.length_scales, self.signal_variance))
            .collect();
        let mean = self.mean_offset + dot(&kstar, &self.alpha);
        let v = self.chol.solve_lower(&kstar);
        let var = (self.signal_variance - v.iter().map(|x| x * x).sum::<f64>()).max(0.0);
        (mean, var)
    }

    pub fn best_observed(&self) -> f64 {
        self.best_value
    }

    pub fn observation_count(&self) -> usize {
        self.points.len()
    }
}

fn kernel(a: [f64; 2], b: [f64; 2], ls: [f64; 2], signal: f64) -> f64 {
    let d0 = (a[0] - b[0]) / ls[0];
    let d1 = (a[1] - b[1]) / ls[1];
    signal * (-0.5 * (d0 * d0 + d1 * d1)).exp()
}

fn try_fit(
    pts: &[[f64; 2]],
    resid: &[f64],
    ls: [f64; 2],
    signal: f64,
    nugget: f64,
) -> Option<(DenseChol, Vec<f64>, f64)> {
    let n = pts.len();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            k[i * n + j] = kernel(pts[i], pts[j], ls, signal);
        }
        k[i * n + i] += nugget;
    }
    let chol = DenseChol::factor(&k, n)?;
    let alpha = chol.solve(resid);
    let lml = -0.5 * dot(resid, &alpha)
        - chol.log_det_half()
        - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    lml.is_finite().then_some((chol, alpha, lml))
}

/// Expected improvement for maximization given a posterior `(mu, sigma)`
/// and the incumbent best value; zero when the posterior is certain.
pub fn ei_value(mu: f64, sigma: f64, f_best: f64) -> f64 {
    if sigma <= 0.0 {
        return 0.0;
    }
    let z = (mu - f_best) / sigma;
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    ((mu - f_best) * std_normal.cdf(z) + sigma * std_normal.pdf(z)).max(0.0)
}

/// Expected improvement of a candidate over the model's incumbent.
pub fn expected_improvement(model: &SurrogateModel, candidate: [f64; 2]) -> f64 {
    let (mu, var) = model.predict(candidate);
    ei_value(mu, var.sqrt(), model.best_observed())
}

// -- the optimization loop -----------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct TraceEntry {
    pub iteration: usize,
    pub w_h: f64,
    pub w_v: f64,
    /// Objective value; failures are recorded as negative infinity.
    pub r2_val: f64,
    pub best_so_far: f64,
}

#[derive(Debug, Clone)]
pub struct OptimizeOutcome {
    pub w_h: f64,
    pub w_v: f64,
    pub best_point: [f64; 2],
    pub best_value: f64,
    pub trace: Vec<TraceEntry>,
    /// Every evaluated point (unit-square coordinates), in trace order.
    pub points: Vec<[f64; 2]>,
}

const LATTICE_SIDE: usize = 64;

/// Full run: a random initial design followed by EI-selected evaluations.
/// The objective returns `None` on failure; failed points are kept in the
/// trace as negative infinity.
pub fn optimize_weights<F>(
    objective: &F,
    space: &SearchSpace,
    init_count: usize,
    iter_count: usize,
    seed: u64,
) -> OptimizeOutcome
where
    F: Fn(f64, f64) -> Option<f64> + Sync,
{
    let init = sample_initial(init_count, seed);
    optimize_weights_with_design(objective, space, &init, iter_count)
}

/// Same loop with a caller-provided initial design (re-evaluated here).
pub fn optimize_weights_with_design<F>(
    objective: &F,
    space: &SearchSpace,
    initial_points: &[[f64; 2]],
    iter_count: usize,
) -> OptimizeOutcome
where
    F: Fn(f64, f64) -> Option<f64> + Sync,
{
    let eval = |u: [f64; 2]| -> f64 {
        let (w_h, w_v) = space.weights_at(u);
        objective(w_h, w_v).unwrap_or(f64::NEG_INFINITY)
    };

    // the initial batch has no ordering dependence; evaluate it in parallel
    let init_values = par_map_indices(initial_points.len(), |i| eval(initial_points[i]));

    let mut points: Vec<[f64; 2]> = initial_points.to_vec();
    let mut values = init_values;
    let mut trace = Vec::with_capacity(points.len() + iter_count);
    let mut best_so_far = f64::NEG_INFINITY;
    for (i, (&p, &v)) in points.iter().zip(&values).enumerate() {
        best_so_far = best_so_far.max(v);
        let (w_h, w_v) = space.weights_at(p);
        trace.push(TraceEntry {
            iteration: i,
            w_h,
            w_v,
            r2_val: v,
            best_so_far,
        });
    }

    for it in 0..iter_count {
        let next = select_next(&points, &values);
        let v = eval(next);
        points.push(next);
        values.push(v);
        best_so_far = best_so_far.max(v);
        let (w_h, w_v) = space.weights_at(next);
        trace.push(TraceEntry {
            iteration: initial_points.len() + it,
            w_h,
            w_v,
            r2_val: v,
            best_so_far,
        });
    }

    let best_idx = argmax(&values);
    let best_point = points[best_idx];
    let (w_h, w_v) = space.weights_at(best_point);
    OptimizeOutcome {
        w_h,
        w_v,
        best_point,
        best_value: values[best_idx],
        trace,
        points,
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0usize;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn select_next(points: &[[f64; 2]], values: &[f64]) -> [f64; 2] {
    let finite: Vec<usize> = (0..values.len()).filter(|&i| values[i].is_finite()).collect();
    let candidates = candidate_set(points, values, &finite);

    if finite.len() >= 2 {
        let pts: Vec<[f64; 2]> = finite.iter().map(|&i| points[i]).collect();
        let vals: Vec<f64> = finite.iter().map(|&i| values[i]).collect();
        if let Ok(model) = SurrogateModel::fit(&pts, &vals) {
            let mut best: Option<(f64, f64, [f64; 2])> = None;
            for &c in &candidates {
                let ei = expected_improvement(&model, c);
                let dist = nearest_distance(points, c);
                let better = match &best {
                    None => true,
                    Some((bei, bdist, _)) => ei > *bei || (ei == *bei && dist > *bdist),
                };
                if better {
                    best = Some((ei, dist, c));
                }
            }
            if let Some((ei, _, c)) = best {
                if ei > 0.0 {
                    return c;
                }
                // nothing promises improvement; fall through to exploration
            }
        }
    }
    // no usable surrogate: explore the least-covered candidate
    let mut best = (f64::NEG_INFINITY, candidates[0]);
    for &c in &candidates {
        let d = nearest_distance(points, c);
        if d > best.0 {
            best = (d, c);
        }
    }
    best.1
}

fn candidate_set(points: &[[f64; 2]], values: &[f64], finite: &[usize]) -> Vec<[f64; 2]> {
    let mut candidates = Vec::with_capacity(LATTICE_SIDE * LATTICE_SIDE + 8);
    let m = (LATTICE_SIDE - 1) as f64;
    for i in 0..LATTICE_SIDE {
        for j in 0..LATTICE_SIDE {
            candidates.push([i as f64 / m, j as f64 / m]);
        }
    }
    // refine around the incumbent
    if let Some(&best) = finite
        .iter()
        .max_by(|&&a, &&b| values[a].total_cmp(&values[b]))
    {
        let p = points[best];
        for h in [1.0 / 128.0, 1.0 / 512.0] {
            for (dx, dy) in [(h, 0.0), (-h, 0.0), (0.0, h), (0.0, -h)] {
                candidates.push([(p[0] + dx).clamp(0.0, 1.0), (p[1] + dy).clamp(0.0, 1.0)]);
            }
        }
    }
    candidates
}

fn nearest_distance(points: &[[f64; 2]], c: [f64; 2]) -> f64 {
    points
        .iter()
        .map(|p| {
            let dx = p[0] - c[0];
            let dy = p[1] - c[1];
            (dx * dx + dy * dy).sqrt()
        })
        .fold(f64::INFINITY, f64::min)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// -- small dense Cholesky for the kernel matrix ---------------------------

#[derive(Debug, Clone)]
struct DenseChol {
    n: usize,
    l: Vec<f64>,
}

impl DenseChol {
    fn factor(a: &[f64], n: usize) -> Option<Self> {
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut sum = a[i * n + j];
                for k in 0..j {
                    sum -= l[i * n + k] * l[j * n + k];
                }
                if i == j {
                    if sum <= 0.0 || !sum.is_finite() {
                        return None;
                    }
                    l[i * n + i] = sum.sqrt();
                } else {
                    l[i * n + j] = sum / l[j * n + j];
                }
            }
        }
        Some(DenseChol { n, l })
    }

    fn solve_lower(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y = b.to_vec();
        for i in 0..n {
            for k in 0..i {
                y[i] -= self.l[i * n + k] * y[k];
            }
            y[i] /= self.l[i * n + i];
        }
        y
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y = self.solve_lower(b);
        for i in (0..n).rev() {
            for k in i + 1..n {
                y[i] -= self.l[k * n + i] * y[k];
            }
            y[i] /= self.l[i * n + i];
        }
        y
    }

    fn log_det_half(&self) -> f64 {
        (0..self.n).map(|i| self.l[i * self.n + i].ln()).sum()
    }
}
