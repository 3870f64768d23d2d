//! Solves the doubly penalized least-squares problem and its
//! support-restricted refits.
//!
//! The normal matrix `A = Z'Z + w_h D_H'D_H + w_v D_V'D_V` couples
//! coefficients within one day densely, adjacent days diagonally, and the
//! last day of the period back to the first. Interleaving days from both
//! ends of the period turns that periodic block tridiagonal pattern into a
//! plain band, which a banded Cholesky factors in `O(K * bandwidth^2)`.
//! Systems too large for that go through Jacobi-preconditioned conjugate
//! gradients. Both paths verify the same relative-residual contract, and
//! both are deterministic: every reduction runs in a fixed order.

use thiserror::Error;

use crate::core::{CoefficientSurface, CoreError, PanelSpec, SparseOperator};
use crate::operators::{DesignSystem, OperatorError};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("empty support: nothing to fit")]
    EmptySupport,
    #[error("singular configuration: no penalties and {usable_rows} rows < {k} coefficients")]
    SingularConfiguration { usable_rows: usize, k: usize },
    #[error("normal matrix not positive definite (pivot {pivot:.3e} at column {column})")]
    Indefinite { pivot: f64, column: usize },
    #[error("solver did not reach tolerance: relative residual {residual:.3e} after {iterations} iterations")]
    NonConvergence { residual: f64, iterations: usize },
    #[error("negative weight {0}")]
    NegativeWeight(f64),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Core(#[from] CoreError),
}

/// Cached `Z'Z` and `Z'Y` for one row range of a design system.
#[derive(Debug, Clone)]
pub struct GramCache {
    pub spec: PanelSpec,
    pub gz: SparseOperator,
    pub zty: Vec<f64>,
    pub row_count: usize,
}

impl GramCache {
    /// Grams over rows `[start, end)` of the design system.
    pub fn for_rows(system: &DesignSystem, start: usize, end: usize) -> Self {
        let zr = system.z.select_rows(start, end);
        let zty = zr.matvec_transpose(&system.y[start..end]);
        GramCache {
            spec: system.spec,
            gz: zr.gram(),
            zty,
            row_count: end - start,
        }
    }
}

/// Cached penalty grams `D_H'D_H` and `D_V'D_V`.
#[derive(Debug, Clone)]
pub struct PenaltyGrams {
    pub hth: SparseOperator,
    pub vtv: SparseOperator,
}

impl PenaltyGrams {
    pub fn new(d_h: &SparseOperator, d_v: &SparseOperator) -> Self {
        PenaltyGrams {
            hth: d_h.gram(),
            vtv: d_v.gram(),
        }
    }
}

/// The assembled, support-restricted normal system.
#[derive(Debug, Clone)]
pub struct NormalSystem {
    pub spec: PanelSpec,
    /// `K' x K'`, exactly symmetric by construction.
    pub a: SparseOperator,
    pub rhs: Vec<f64>,
    pub support: Vec<bool>,
    /// Original coefficient index of each restricted column.
    pub kept: Vec<usize>,
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    pub rel_tol: f64,
    /// Restricted sizes at or below this use the banded factorization;
    /// larger systems use conjugate gradients.
    pub direct_threshold: usize,
    pub max_cg_iter: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            rel_tol: 1e-10,
            direct_threshold: 20_000,
            max_cg_iter: 200_000,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolveStats {
    /// CG iterations, or refinement steps for the direct path.
    pub iterations: usize,
    pub rel_residual: f64,
}

/// Assembles the restricted normal system from cached grams.
pub fn assemble_cached(
    gram: &GramCache,
    penalties: &PenaltyGrams,
    w_h: f64,
    w_v: f64,
    support: &[bool],
) -> Result<NormalSystem, SolverError> {
    if w_h < 0.0 {
        return Err(SolverError::NegativeWeight(w_h));
    }
    if w_v < 0.0 {
        return Err(SolverError::NegativeWeight(w_v));
    }
    let k_full = gram.gz.col_count();
    assert_eq!(support.len(), k_full);
    let k_prime = support.iter().filter(|&&s| s).count();
    if k_prime == 0 {
        return Err(SolverError::EmptySupport);
    }
    if w_h == 0.0 && w_v == 0.0 && gram.row_count < k_prime {
        return Err(SolverError::SingularConfiguration {
            usable_rows: gram.row_count,
            k: k_prime,
        });
    }
    let a_full = SparseOperator::add_scaled(&[
        (1.0, &gram.gz),
        (w_h, &penalties.hth),
        (w_v, &penalties.vtv),
    ])?;
    let (a, kept) = a_full.restrict_symmetric(support);
    let rhs = kept.iter().map(|&k| gram.zty[k]).collect();
    Ok(NormalSystem {
        spec: gram.spec,
        a,
        rhs,
        support: support.to_vec(),
        kept,
    })
}

/// Uncached assembly straight from the design system and penalty operators.
pub fn assemble(
    system: &DesignSystem,
    d_h: &SparseOperator,
    d_v: &SparseOperator,
    w_h: f64,
    w_v: f64,
    support: &[bool],
) -> Result<NormalSystem, SolverError> {
    let gram = GramCache::for_rows(system, 0, system.z.row_count());
    let penalties = PenaltyGrams::new(d_h, d_v);
    assemble_cached(&gram, &penalties, w_h, w_v, support)
}

/// Solves the normal system; returns the full-length coefficient vector
/// with zeros written back outside the support.
pub fn solve(ns: &NormalSystem, opts: &SolveOptions) -> Result<(Vec<f64>, SolveStats), SolverError> {
    let n = ns.a.row_count();
    let rhs_norm = norm2(&ns.rhs);
    let (restricted, stats) = if rhs_norm == 0.0 {
        (vec![0.0; n], SolveStats { iterations: 0, rel_residual: 0.0 })
    } else if n <= opts.direct_threshold {
        solve_banded(ns, opts)?
    } else {
        solve_cg(ns, opts)?
    };
    let mut full = vec![0.0; ns.spec.coefficient_count()];
    for (j, &k) in ns.kept.iter().enumerate() {
        full[k] = restricted[j];
    }
    Ok((full, stats))
}

/// Assemble + solve, returning the fitted surface.
pub fn fit_surface(
    spec: &PanelSpec,
    system: &DesignSystem,
    d_h: &SparseOperator,
    d_v: &SparseOperator,
    w_h: f64,
    w_v: f64,
    support: &[bool],
    opts: &SolveOptions,
) -> Result<(CoefficientSurface, SolveStats), SolverError> {
    let ns = assemble(system, d_h, d_v, w_h, w_v, support)?;
    let (b, stats) = solve(&ns, opts)?;
    Ok((CoefficientSurface::new(*spec, b)?, stats))
}

/// Cached variant used inside the optimization loops.
pub fn fit_surface_cached(
    spec: &PanelSpec,
    gram: &GramCache,
    penalties: &PenaltyGrams,
    w_h: f64,
    w_v: f64,
    support: &[bool],
    opts: &SolveOptions,
) -> Result<(CoefficientSurface, SolveStats), SolverError> {
    let ns = assemble_cached(gram, penalties, w_h, w_v, support)?;
    let (b, stats) = solve(&ns, opts)?;
    Ok((CoefficientSurface::new(*spec, b)?, stats))
}

/// Value of the penalized objective at `b` (full-length).
pub fn objective_value(
    system: &DesignSystem,
    d_h: &SparseOperator,
    d_v: &SparseOperator,
    w_h: f64,
    w_v: f64,
    b: &[f64],
) -> f64 {
    let resid: f64 = system
        .z
        .matvec(b)
        .iter()
        .zip(&system.y)
        .map(|(p, y)| (y - p) * (y - p))
        .sum();
    let pen_h: f64 = d_h.matvec(b).iter().map(|v| v * v).sum();
    let pen_v: f64 = d_v.matvec(b).iter().map(|v| v * v).sum();
    resid + w_h * pen_h + w_v * pen_v
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn rel_residual(a: &SparseOperator, x: &[f64], rhs: &[f64]) -> f64 {
    let ax = a.matvec(x);
    let r: f64 = ax
        .iter()
        .zip(rhs)
        .map(|(axi, bi)| (bi - axi) * (bi - axi))
        .sum();
    r.sqrt() / norm2(rhs)
}

// -- direct path --------------------------------------------------------

/// Day order that interleaves from both ends of the period, so the
/// periodic wrap coupling day T-1 to day 0 stays within two block steps.
fn fold_order(t_len: usize) -> Vec<usize> {
    let mut order = Vec::with_capacity(t_len);
    let (mut lo, mut hi) = (0usize, t_len as isize - 1);
    while lo as isize <= hi {
        order.push(lo);
        if (lo as isize) < hi {
            order.push(hi as usize);
        }
        lo += 1;
        hi -= 1;
    }
    order
}

fn banded_permutation(ns: &NormalSystem, spec_d: usize, t_len: usize) -> (Vec<usize>, Vec<usize>) {
    // bucket restricted columns by day, preserving lag order within a day
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); t_len];
    for (j, &k) in ns.kept.iter().enumerate() {
        buckets[k / spec_d].push(j);
    }
    let mut perm = Vec::with_capacity(ns.kept.len());
    for t in fold_order(t_len) {
        perm.extend_from_slice(&buckets[t]);
    }
    let mut inv = vec![0usize; perm.len()];
    for (pos, &j) in perm.iter().enumerate() {
        inv[j] = pos;
    }
    (perm, inv)
}

fn solve_banded(
    ns: &NormalSystem,
    opts: &SolveOptions,
) -> Result<(Vec<f64>, SolveStats), SolverError> {
    let n = ns.a.row_count();
    let d = ns.spec.max_lag_count;
    let t_len = ns.spec.period_length;
    let (perm, inv) = banded_permutation(ns, d, t_len);

    let mut bw = 0usize;
    for (i, j, _) in ns.a.triplets() {
        bw = bw.max(inv[i].abs_diff(inv[j]));
    }

    // lower band, column-major: band[j * (bw + 1) + offset] = A[j + offset, j]
    let stride = bw + 1;
    let mut band = vec![0.0f64; n * stride];
    for (i, j, v) in ns.a.triplets() {
        let (pi, pj) = (inv[i], inv[j]);
        if pi >= pj {
            band[pj * stride + (pi - pj)] = v;
        }
    }

    // in-place LL' factorization
    for j in 0..n {
        let pivot = band[j * stride];
        if pivot <= 0.0 || !pivot.is_finite() {
            return Err(SolverError::Indefinite { pivot, column: j });
        }
        let ljj = pivot.sqrt();
        band[j * stride] = ljj;
        let reach = (n - 1 - j).min(bw);
        for off in 1..=reach {
            band[j * stride + off] /= ljj;
        }
        for kcol in 1..=reach {
            let ljk = band[j * stride + kcol];
            if ljk == 0.0 {
                continue;
            }
            let col = j + kcol;
            for off in kcol..=reach {
                band[col * stride + (off - kcol)] -= ljk * band[j * stride + off];
            }
        }
    }

    let banded_solve = |b: &[f64]| -> Vec<f64> {
        let mut y = b.to_vec();
        for j in 0..n {
            y[j] /= band[j * stride];
            let reach = (n - 1 - j).min(bw);
            for off in 1..=reach {
                y[j + off] -= band[j * stride + off] * y[j];
            }
        }
        for j in (0..n).rev() {
            let reach = (n - 1 - j).min(bw);
            let mut acc = y[j];
            for off in 1..=reach {
                acc -= band[j * stride + off] * y[j + off];
            }
            y[j] = acc / band[j * stride];
        }
        y
    };

    let rhs_perm: Vec<f64> = perm.iter().map(|&j| ns.rhs[j]).collect();
    let a_perm = permute_symmetric(&ns.a, &inv);
    let mut x = banded_solve(&rhs_perm);
    let mut refinements = 0usize;
    let mut res = rel_residual(&a_perm, &x, &rhs_perm);
    while res > opts.rel_tol && refinements < 3 {
        let ax = a_perm.matvec(&x);
        let r: Vec<f64> = rhs_perm.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let dx = banded_solve(&r);
        for (xi, di) in x.iter_mut().zip(&dx) {
            *xi += di;
        }
        refinements += 1;
        res = rel_residual(&a_perm, &x, &rhs_perm);
    }
    if res > opts.rel_tol || !res.is_finite() {
        return Err(SolverError::NonConvergence {
            residual: res,
            iterations: refinements,
        });
    }
    let mut out = vec![0.0; n];
    for (pos, &j) in perm.iter().enumerate() {
        out[j] = x[pos];
    }
    Ok((
        out,
        SolveStats {
            iterations: refinements,
            rel_residual: res,
        },
    ))
}

fn permute_symmetric(a: &SparseOperator, inv: &[usize]) -> SparseOperator {
    let n = a.row_count();
    let mut triplets = Vec::with_capacity(a.nnz());
    for (i, j, v) in a.triplets() {
        triplets.push((inv[i], inv[j], v));
    }
    SparseOperator::from_triplets(n, n, &triplets).expect("permutation preserves bounds")
}

// -- iterative path ------------------------------------------------------

fn solve_cg(ns: &NormalSystem, opts: &SolveOptions) -> Result<(Vec<f64>, SolveStats), SolverError> {
    let n = ns.a.row_count();
    let diag = ns.a.diagonal();
    for (j, &d) in diag.iter().enumerate() {
        if d <= 0.0 || !d.is_finite() {
            return Err(SolverError::Indefinite { pivot: d, column: j });
        }
    }
    let rhs_norm = norm2(&ns.rhs);
    let mut x = vec![0.0f64; n];
    let mut r = ns.rhs.clone();
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(ri, di)| ri / di).collect();
    let mut p = z.clone();
    let mut rz: f64 = dot(&r, &z);
    let mut iterations = 0usize;
    // aim below tolerance on the recursive residual, then confirm on the
    // true residual (they drift apart in long runs)
    let target = opts.rel_tol * rhs_norm * 0.1;
    while iterations < opts.max_cg_iter {
        if norm2(&r) <= target {
            let true_res = rel_residual(&ns.a, &x, &ns.rhs);
            if true_res <= opts.rel_tol {
                return Ok((
                    x,
                    SolveStats {
                        iterations,
                        rel_residual: true_res,
                    },
                ));
            }
        }
        let ap = ns.a.matvec(&p);
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            return Err(SolverError::Indefinite { pivot: pap, column: iterations });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        iterations += 1;
    }
    let res = rel_residual(&ns.a, &x, &ns.rhs);
    if res <= opts.rel_tol {
        return Ok((
            x,
            SolveStats {
                iterations,
                rel_residual: res,
            },
        ));
    }
    Err(SolverError::NonConvergence {
        residual: res,
        iterations,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::{PanelKind, SeriesPanel};
    use crate::operators::{build_design, build_horizontal_penalty, build_vertical_penalty};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy_system(d: usize, t: usize, n: usize, seed: u64) -> DesignSystem {
        let spec = PanelSpec::new(t, d, n).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let obs = spec.observation_count();
        let x: Vec<f64> = (0..obs).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let y: Vec<f64> = (0..obs).map(|_| rng.gen_range(-1.0..1.0)).collect();
        build_design(
            &SeriesPanel::new(spec, x, PanelKind::Anomaly).unwrap(),
            &SeriesPanel::new(spec, y, PanelKind::Anomaly).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn identity_system_returns_rhs() {
        let spec = PanelSpec::new(3, 1, 1).unwrap();
        let ns = NormalSystem {
            spec,
            a: SparseOperator::identity(3),
            rhs: vec![1.0, 2.0, 3.0],
            support: vec![true; 3],
            kept: vec![0, 1, 2],
        };
        let (b, _) = solve(&ns, &SolveOptions::default()).unwrap();
        assert_eq!(b, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn assemble_dimensions_follow_support() {
        let sys = toy_system(2, 3, 2, 7);
        let dh = build_horizontal_penalty(&sys.spec);
        let dv = build_vertical_penalty(&sys.spec);
        let ns = assemble(&sys, &dh, &dv, 1.0, 1.0, &[true; 6]).unwrap();
        assert_eq!(ns.a.row_count(), 6);
        assert!(ns.a.is_exactly_symmetric());
        // mask out the lag-1 column at every day
        let mask = [true, false, true, false, true, false];
        let ns = assemble(&sys, &dh, &dv, 1.0, 1.0, &mask).unwrap();
        assert_eq!(ns.a.row_count(), 3);
    }

    #[test]
    fn empty_support_is_rejected() {
        let sys = toy_system(2, 3, 2, 8);
        let dh = build_horizontal_penalty(&sys.spec);
        let dv = build_vertical_penalty(&sys.spec);
        assert!(matches!(
            assemble(&sys, &dh, &dv, 1.0, 1.0, &[false; 6]),
            Err(SolverError::EmptySupport)
        ));
    }

    #[test]
    fn unpenalized_underdetermined_is_rejected() {
        let sys = toy_system(2, 3, 2, 9); // 5 rows, 6 coefficients
        let dh = build_horizontal_penalty(&sys.spec);
        let dv = build_vertical_penalty(&sys.spec);
        assert!(matches!(
            assemble(&sys, &dh, &dv, 0.0, 0.0, &[true; 6]),
            Err(SolverError::SingularConfiguration { .. })
        ));
    }

    #[test]
    fn solution_is_deterministic() {
        let sys = toy_system(3, 5, 2, 10);
        let dh = build_horizontal_penalty(&sys.spec);
        let dv = build_vertical_penalty(&sys.spec);
        let support = vec![true; sys.spec.coefficient_count()];
        let opts = SolveOptions::default();
        let (a, _) = fit_surface(&sys.spec, &sys, &dh, &dv, 1.0, 1.0, &support, &opts).unwrap();
        let (b, _) = fit_surface(&sys.spec, &sys, &dh, &dv, 1.0, 1.0, &support, &opts).unwrap();
        assert!(a.b.iter().zip(&b.b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn huge_vertical_weight_drives_surface_to_zero() {
        let sys = toy_system(3, 5, 2, 11);
        let dh = build_horizontal_penalty(&sys.spec);
        let dv = build_vertical_penalty(&sys.spec);
        let support = vec![true; sys.spec.coefficient_count()];
        let opts = SolveOptions::default();
        let (small, _) =
            fit_surface(&sys.spec, &sys, &dh, &dv, 0.0, 1e-8, &support, &opts).unwrap();
        let (huge, _) =
            fit_surface(&sys.spec, &sys, &dh, &dv, 0.0, 1e12, &support, &opts).unwrap();
        let n_small = huge_norm(&small.b);
        let n_huge = huge_norm(&huge.b);
        assert!(n_huge <= 1e-6 * n_small, "{n_huge} vs {n_small}");
    }

    fn huge_norm(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn cg_agrees_with_direct() {
        let sys = toy_system(4, 8, 3, 12);
        let dh = build_horizontal_penalty(&sys.spec);
        let dv = build_vertical_penalty(&sys.spec);
        let support = vec![true; sys.spec.coefficient_count()];
        let direct = SolveOptions::default();
        let cg = SolveOptions {
            direct_threshold: 0,
            ..SolveOptions::default()
        };
        let (a, _) = fit_surface(&sys.spec, &sys, &dh, &dv, 2.0, 0.5, &support, &direct).unwrap();
        let (b, _) = fit_surface(&sys.spec, &sys, &dh, &dv, 2.0, 0.5, &support, &cg).unwrap();
        let diff: f64 = a.b.iter().zip(&b.b).map(|(x, y)| (x - y) * (x - y)).sum();
        let scale: f64 = a.b.iter().map(|x| x * x).sum();
        assert!(diff.sqrt() <= 1e-7 * scale.sqrt().max(1e-30));
    }

    #[test]
    fn pure_penalty_minimizer_is_zero() {
        // zero driver: the data term vanishes on b's range, penalties pull to 0
        let spec = PanelSpec::new(4, 2, 2).unwrap();
        let x = SeriesPanel::new(spec, vec![0.0; 8], PanelKind::Anomaly).unwrap();
        let y = SeriesPanel::new(
            spec,
            vec![1.0, -1.0, 0.5, -0.5, -1.0, 1.0, -0.5, 0.5],
            PanelKind::Anomaly,
        )
        .unwrap();
        let sys = build_design(&x, &y).unwrap();
        let dh = build_horizontal_penalty(&spec);
        let dv = build_vertical_penalty(&spec);
        let (surf, _) = fit_surface(
            &spec,
            &sys,
            &dh,
            &dv,
            1.0,
            1.0,
            &vec![true; spec.coefficient_count()],
            &SolveOptions::default(),
        )
        .unwrap();
        assert!(surf.b.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn objective_at_solution_beats_perturbations() {
        let sys = toy_system(3, 6, 2, 13);
        let dh = build_horizontal_penalty(&sys.spec);
        let dv = build_vertical_penalty(&sys.spec);
        let k = sys.spec.coefficient_count();
        let (surf, _) = fit_surface(
            &sys.spec,
            &sys,
            &dh,
            &dv,
            1.5,
            0.7,
            &vec![true; k],
            &SolveOptions::default(),
        )
        .unwrap();
        let at_solution = objective_value(&sys, &dh, &dv, 1.5, 0.7, &surf.b);
        let at_zero = objective_value(&sys, &dh, &dv, 1.5, 0.7, &vec![0.0; k]);
        let slack = 1e-8 * at_zero.max(1.0);
        assert!(at_solution <= at_zero + slack);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let mut v: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm = huge_norm(&v);
            let perturbed: Vec<f64> = surf
                .b
                .iter()
                .zip(v.iter_mut())
                .map(|(b, vi)| b + 1e-3 * *vi / norm)
                .collect();
            let val = objective_value(&sys, &dh, &dv, 1.5, 0.7, &perturbed);
            assert!(at_solution <= val + slack);
        }
    }

    #[test]
    fn noiseless_data_is_recovered_with_tiny_weights() {
        // overdetermined: usable rows (78) > coefficients (60)
        let spec = PanelSpec::new(20, 3, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let obs = spec.observation_count();
        let x: Vec<f64> = (0..obs).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let x_panel = SeriesPanel::new(spec, x, PanelKind::Anomaly).unwrap();
        let mut b_true = vec![0.0; spec.coefficient_count()];
        for (k, v) in b_true.iter_mut().enumerate() {
            *v = ((k % 7) as f64 - 3.0) * 0.1;
        }
        let (z, _, row_global) = crate::operators::build_design_matrix(&x_panel).unwrap();
        let preds = z.matvec(&b_true);
        let mut y = vec![0.0; obs];
        for (row, &u) in row_global.iter().enumerate() {
            y[u] = preds[row];
        }
        let y_panel = SeriesPanel::new(spec, y, PanelKind::Anomaly).unwrap();
        let sys = build_design(&x_panel, &y_panel).unwrap();
        let dh = build_horizontal_penalty(&spec);
        let dv = build_vertical_penalty(&spec);
        let (surf, _) = fit_surface(
            &spec,
            &sys,
            &dh,
            &dv,
            1e-8,
            1e-8,
            &vec![true; spec.coefficient_count()],
            &SolveOptions::default(),
        )
        .unwrap();
        let err: f64 = surf
            .b
            .iter()
            .zip(&b_true)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let scale: f64 = b_true.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(err <= 1e-4 * scale, "relative error {}", err / scale);
    }
}
