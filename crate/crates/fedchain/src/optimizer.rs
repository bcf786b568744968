//! Biconvex minimization of the squared bound objective over `(k, lambda)`.
//!
//! The objective is convex in `k` for fixed `lambda` and in `lambda` for
//! fixed `k`, so alternate convex search (ACS) — golden-section minimization
//! along one axis at a time — converges to a partial optimum. Both axes are
//! searched on a log scale: the interesting `k` sits orders of magnitude
//! below `d`, and the feasible `lambda` bracket spans six decades. Golden
//! section only needs unimodality, which monotone reparameterization
//! preserves.

use thiserror::Error;

use crate::convergence::{objective_squared, BoundCoefficients};
use crate::timecost::HCoefficients;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("invalid search interval [{lo}, {hi}]")]
    BadInterval { lo: f64, hi: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("objective is not finite at (k={k}, lambda={lambda}): {value}")]
    NonFiniteObjective { k: f64, lambda: f64, value: f64 },
    #[error("grid too coarse: need at least 3 points per axis")]
    GridTooCoarse,
}

/// Golden-section minimization of `f` on `[lo, hi]`.
///
/// For a unimodal `f` the returned point is within `tol` of the minimizer;
/// `tol` is an absolute interval width.
pub fn minimize_1d_convex(
    f: impl Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    tol: f64,
) -> Result<f64, OptimError> {
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(OptimError::BadInterval { lo, hi });
    }
    if !(tol > 0.0) {
        return Err(OptimError::InvalidParameter(format!(
            "tol={tol} must be positive"
        )));
    }
    const INV_PHI: f64 = 0.618_033_988_749_894_9; // (sqrt(5) - 1) / 2
    let mut a = lo;
    let mut b = hi;
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while b - a > tol {
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2);
        }
    }
    Ok(if f1 < f2 { x1 } else { x2 })
}

/// The squared bound objective over the feasible box, assembled from the
/// round-time coefficients, the bound coefficients, and the time budget.
#[derive(Debug, Clone)]
pub struct Objective {
    pub h: HCoefficients,
    pub bounds: BoundCoefficients,
    /// Model dimension (upper end of the `k` box).
    pub d: f64,
    /// Training time budget `Y` in seconds.
    pub budget: f64,
    pub k_range: (f64, f64),
    pub lambda_range: (f64, f64),
}

impl Objective {
    pub fn new(
        h: HCoefficients,
        bounds: BoundCoefficients,
        d: usize,
        budget: f64,
    ) -> Result<Self, OptimError> {
        if d == 0 {
            return Err(OptimError::InvalidParameter("d must be positive".into()));
        }
        if !(budget > 0.0) {
            return Err(OptimError::InvalidParameter("budget must be positive".into()));
        }
        Ok(Objective {
            h,
            bounds,
            d: d as f64,
            budget,
            k_range: (1.0, d as f64),
            lambda_range: (1e-4, 100.0),
        })
    }

    pub fn with_lambda_range(mut self, lo: f64, hi: f64) -> Result<Self, OptimError> {
        if !(lo > 0.0) || !(lo < hi) {
            return Err(OptimError::BadInterval { lo, hi });
        }
        self.lambda_range = (lo, hi);
        Ok(self)
    }

    /// `J^2(k, lambda)`; `+inf` where the round-time exponential overflows.
    pub fn j_squared(&self, k: f64, lambda: f64) -> f64 {
        let h = self.h.h(k, lambda);
        objective_squared(&self.bounds, self.d, k, h, self.budget)
    }
}

/// One half-step of the ACS trace.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AcsIterate {
    pub sweep: usize,
    pub k: f64,
    pub lambda: f64,
    pub objective: f64,
}

/// Solution returned by alternate convex search.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AcsSolution {
    /// Relaxed (real-valued) minimizer.
    pub k_real: f64,
    /// Better of floor/ceil of `k_real`, clamped to `[1, d]`.
    pub k_int: usize,
    pub lambda: f64,
    /// Objective at `(k_real, lambda)`.
    pub objective_real: f64,
    /// Objective at `(k_int, lambda)`.
    pub objective_int: f64,
    pub sweeps: usize,
    pub trace: Vec<AcsIterate>,
}

/// Alternate convex search from `(k0, lambda0)`: minimize over `k` with
/// `lambda` fixed, then over `lambda` with `k` fixed, until the relative
/// objective change drops below `tol` or `max_sweeps` is reached. A half
/// step that fails to improve (within golden-section tolerance) keeps the
/// incumbent, so the trace is nonincreasing.
pub fn acs_solve(
    obj: &Objective,
    k0: f64,
    lambda0: f64,
    tol: f64,
    max_sweeps: usize,
) -> Result<AcsSolution, OptimError> {
    let (k_lo, k_hi) = obj.k_range;
    let (l_lo, l_hi) = obj.lambda_range;
    let k0 = k0.clamp(k_lo, k_hi);
    let lambda0 = lambda0.clamp(l_lo, l_hi);
    if !(tol > 0.0) || max_sweeps == 0 {
        return Err(OptimError::InvalidParameter(
            "tol must be positive and max_sweeps at least 1".into(),
        ));
    }
    let mut k = k0;
    let mut lambda = lambda0;
    let mut value = obj.j_squared(k, lambda);
    if !value.is_finite() {
        return Err(OptimError::NonFiniteObjective {
            k,
            lambda,
            value,
        });
    }
    let mut trace = vec![AcsIterate {
        sweep: 0,
        k,
        lambda,
        objective: value,
    }];
    // interval tolerance in log space: resolves points to ~1e-10 relative
    let axis_tol = 1e-10;
    let mut sweeps = 0;
    for sweep in 1..=max_sweeps {
        sweeps = sweep;
        let before = value;

        let l_fixed = lambda;
        let k_cand = minimize_1d_convex(
            |u| obj.j_squared(u.exp(), l_fixed),
            k_lo.ln(),
            k_hi.ln(),
            axis_tol,
        )?
        .exp();
        let cand = obj.j_squared(k_cand, lambda);
        if cand < value {
            k = k_cand;
            value = cand;
        }
        trace.push(AcsIterate {
            sweep,
            k,
            lambda,
            objective: value,
        });

        let k_fixed = k;
        let l_cand = minimize_1d_convex(
            |u| obj.j_squared(k_fixed, u.exp()),
            l_lo.ln(),
            l_hi.ln(),
            axis_tol,
        )?
        .exp();
        let cand = obj.j_squared(k, l_cand);
        if cand < value {
            lambda = l_cand;
            value = cand;
        }
        trace.push(AcsIterate {
            sweep,
            k,
            lambda,
            objective: value,
        });

        if (before - value).abs() <= tol * (1.0 + value.abs()) {
            break;
        }
    }
    if !value.is_finite() {
        return Err(OptimError::NonFiniteObjective {
            k,
            lambda,
            value,
        });
    }
    // integer k: evaluate floor and ceiling, keep the better
    let lo_int = (k.floor().max(1.0)) as usize;
    let hi_int = (k.ceil().min(obj.d)) as usize;
    let (k_int, objective_int) = {
        let lo_val = obj.j_squared(lo_int as f64, lambda);
        let hi_val = obj.j_squared(hi_int as f64, lambda);
        if lo_val <= hi_val {
            (lo_int, lo_val)
        } else {
            (hi_int, hi_val)
        }
    };
    Ok(AcsSolution {
        k_real: k,
        k_int,
        lambda,
        objective_real: value,
        objective_int,
        sweeps,
        trace,
    })
}

/// ACS from a small deterministic set of starting points, keeping the best
/// partial optimum. Biconvex problems can have several partial optima; a
/// few spread-out starts make the search robust without giving up
/// determinism.
pub fn acs_solve_multistart(
    obj: &Objective,
    tol: f64,
    max_sweeps: usize,
) -> Result<AcsSolution, OptimError> {
    let (k_lo, k_hi) = obj.k_range;
    let (l_lo, l_hi) = obj.lambda_range;
    let geo = |lo: f64, hi: f64, t: f64| (lo.ln() + t * (hi.ln() - lo.ln())).exp();
    let starts = [
        (geo(k_lo, k_hi, 0.3), geo(l_lo, l_hi, 0.5)),
        (geo(k_lo, k_hi, 0.7), geo(l_lo, l_hi, 0.5)),
        (geo(k_lo, k_hi, 0.5), geo(l_lo, l_hi, 0.25)),
        (geo(k_lo, k_hi, 0.5), geo(l_lo, l_hi, 0.75)),
    ];
    let mut best: Option<AcsSolution> = None;
    for (k0, l0) in starts {
        let sol = acs_solve(obj, k0, l0, tol, max_sweeps)?;
        if best
            .as_ref()
            .map(|b| sol.objective_real < b.objective_real)
            .unwrap_or(true)
        {
            best = Some(sol);
        }
    }
    Ok(best.unwrap())
}

/// Warm-started re-solve after the environment (and hence the objective)
/// changed; an unchanged objective returns in a single sweep.
pub fn reoptimize_on_env_change(
    previous: &AcsSolution,
    obj: &Objective,
    tol: f64,
    max_sweeps: usize,
) -> Result<AcsSolution, OptimError> {
    acs_solve(obj, previous.k_real, previous.lambda, tol, max_sweeps)
}

/// Numeric convexity report over an axis-aligned grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexityReport {
    /// Smallest second divided difference along `k`, over all grid lines.
    pub min_second_diff_k: f64,
    /// Smallest second divided difference along `lambda`.
    pub min_second_diff_lambda: f64,
    /// Points `(k, lambda, second_diff)` below `-tolerance`.
    pub violations: Vec<(f64, f64, f64)>,
    pub tolerance: f64,
}

impl ConvexityReport {
    pub fn is_convex(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Second divided difference `~ f''` on a (possibly nonuniform) triple.
fn second_divided_diff(x0: f64, x1: f64, x2: f64, f0: f64, f1: f64, f2: f64) -> f64 {
    2.0 * (f0 / ((x1 - x0) * (x2 - x0)) - f1 / ((x2 - x1) * (x1 - x0)) + f2 / ((x2 - x1) * (x2 - x0)))
}

/// Check numeric convexity of `f` along each axis of the grid. The grids
/// may be log-spaced; the divided differences use the actual coordinates,
/// so they estimate curvature in the original variables.
pub fn convexity_report(
    f: impl Fn(f64, f64) -> f64,
    k_grid: &[f64],
    lambda_grid: &[f64],
    tolerance: f64,
) -> Result<ConvexityReport, OptimError> {
    if k_grid.len() < 3 || lambda_grid.len() < 3 {
        return Err(OptimError::GridTooCoarse);
    }
    let values: Vec<Vec<f64>> = k_grid
        .iter()
        .map(|&k| lambda_grid.iter().map(|&l| f(k, l)).collect())
        .collect();
    let mut min_k = f64::INFINITY;
    let mut min_l = f64::INFINITY;
    let mut violations = Vec::new();
    for (li, &lambda) in lambda_grid.iter().enumerate() {
        for ki in 1..k_grid.len() - 1 {
            let dd = second_divided_diff(
                k_grid[ki - 1],
                k_grid[ki],
                k_grid[ki + 1],
                values[ki - 1][li],
                values[ki][li],
                values[ki + 1][li],
            );
            min_k = min_k.min(dd);
            if dd < -tolerance {
                violations.push((k_grid[ki], lambda, dd));
            }
        }
    }
    for (ki, &k) in k_grid.iter().enumerate() {
        for li in 1..lambda_grid.len() - 1 {
            let dd = second_divided_diff(
                lambda_grid[li - 1],
                lambda_grid[li],
                lambda_grid[li + 1],
                values[ki][li - 1],
                values[ki][li],
                values[ki][li + 1],
            );
            min_l = min_l.min(dd);
            if dd < -tolerance {
                violations.push((k, lambda_grid[li], dd));
            }
        }
    }
    Ok(ConvexityReport {
        min_second_diff_k: min_k,
        min_second_diff_lambda: min_l,
        violations,
        tolerance,
    })
}

/// `n` log-spaced points covering `[lo, hi]` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo && n >= 2);
    let (llo, lhi) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (llo + (lhi - llo) * i as f64 / (n - 1) as f64).exp())
        .collect()
}
