//! Dense brute-force oracles.
//!
//! Everything here forms or sweeps explicit n×n kernels, so it is limited to
//! grids under [`DENSE_GUARD`](crate::dense::DENSE_GUARD). The Sinkhorn loop
//! is written out again on top of matrix-vector products rather than shared
//! with the spectral solver, so the two can check each other.

use std::sync::Arc;

use rayon::prelude::*;

use crate::dense::{check_capacity, DenseMatrix};
use crate::error::{Result, ShotError};
use crate::grid::{geodesic_distance, Grid};
use crate::heat::{check_resolvable, heat_conv, heat_multipliers};
use crate::sht::Field;
use crate::sinkhorn::{
    check_inputs, dual_cost, log_dual_mass, marginal_residual, scaling_update, SinkhornParams,
    SinkhornSolution,
};

/// Largest exponent `C/ε` admitted before the Gibbs kernel is considered to
/// underflow.
pub const UNDERFLOW_EXPONENT: f64 = 700.0;

/// Rejects `ε < max_cost/700` unless `unsafe_eps` is set. On the squared
/// geodesic cost this is `ε ≥ π²/700 ≈ 0.0141`.
pub fn check_underflow(eps: f64, max_cost: f64, unsafe_eps: bool) -> Result<()> {
    let min_eps = max_cost / UNDERFLOW_EXPONENT;
    if eps < min_eps && !unsafe_eps {
        return Err(ShotError::UnderflowGuard { eps, min_eps });
    }
    Ok(())
}

/// Transport plan density `π_ij` with respect to the `a_i a_j` weighting.
#[derive(Debug, Clone)]
pub struct DensePlan {
    grid: Arc<Grid>,
    pi: DenseMatrix,
}

impl DensePlan {
    pub fn new(grid: Arc<Grid>, pi: DenseMatrix) -> Result<Self> {
        if pi.dim() != grid.len() {
            return Err(ShotError::GridMismatch);
        }
        if let Some(x) = pi.as_slice().iter().find(|x| !x.is_finite() || **x < 0.0) {
            return Err(ShotError::Data(format!("plan entry {x} is not a nonnegative real")));
        }
        Ok(Self { grid, pi })
    }

    /// Product plan `π_ij = p_i q_j`.
    pub fn product(p: &Field, q: &Field) -> Result<Self> {
        if !p.same_grid(q) {
            return Err(ShotError::GridMismatch);
        }
        let (pv, qv) = (p.values(), q.values());
        let pi = DenseMatrix::from_fn(p.len(), |i, j| pv[i] * qv[j])?;
        Self::new(p.grid().clone(), pi)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.pi
    }

    /// Left marginal density `(π a)_i`.
    pub fn left_marginal(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.pi.dim()];
        self.pi.matvec(self.grid.area_weights(), &mut out);
        out
    }

    /// Right marginal density `(πᵀ a)_j`.
    pub fn right_marginal(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.pi.dim()];
        self.pi.matvec_transpose(self.grid.area_weights(), &mut out);
        out
    }

    pub fn mass(&self) -> f64 {
        self.grid.integrate(&self.left_marginal())
    }
}

/// Output of the explicit-matrix loop on raw weights.
#[derive(Debug, Clone)]
pub(crate) struct RawSolve {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub iterations: usize,
    pub marginal_error: f64,
    pub cost: f64,
    pub plan_mass: f64,
    pub kernel: DenseMatrix,
}

/// Sinkhorn with `K = e^{−C/ε}` and weighted products `K(a⊙v)`,
/// `Kᵀ(a⊙u)`. Same update order, rescaling and stopping rule as the
/// spectral solver.
pub(crate) fn raw_sinkhorn(
    a: &[f64],
    p: &[f64],
    q: &[f64],
    cost: &DenseMatrix,
    params: &SinkhornParams,
) -> Result<RawSolve> {
    let n = a.len();
    if cost.dim() != n || p.len() != n || q.len() != n {
        return Err(ShotError::Data(format!(
            "cost is {}x{}, weights have {} entries",
            cost.dim(),
            cost.dim(),
            n
        )));
    }
    check_capacity(n)?;
    let max_cost = cost.max();
    check_underflow(params.eps, max_cost, params.unsafe_eps)?;
    let eps = params.eps;
    let kernel = DenseMatrix::from_fn(n, |i, j| (-cost.get(i, j) / eps).exp())?;
    kernel_sinkhorn(a, p, q, kernel, max_cost, params)
}

/// The loop itself, on a prebuilt kernel.
pub(crate) fn kernel_sinkhorn(
    a: &[f64],
    p: &[f64],
    q: &[f64],
    kernel: DenseMatrix,
    max_cost: f64,
    params: &SinkhornParams,
) -> Result<RawSolve> {
    let n = a.len();
    let eps = params.eps;
    let weighted = |x: &[f64]| -> Vec<f64> { x.iter().zip(a).map(|(x, a)| x * a).collect() };
    let underflow = || ShotError::UnderflowGuard {
        eps,
        min_eps: max_cost / UNDERFLOW_EXPONENT,
    };
    let k_apply = |x: &[f64]| -> Result<Vec<f64>> {
        let mut out = vec![0.0; n];
        kernel.matvec(&weighted(x), &mut out);
        if out.iter().zip(p).any(|(&k, &m)| k == 0.0 && m > 0.0) {
            return Err(underflow());
        }
        Ok(out)
    };
    let kt_apply = |x: &[f64]| -> Result<Vec<f64>> {
        let mut out = vec![0.0; n];
        kernel.matvec_transpose(&weighted(x), &mut out);
        if out.iter().zip(q).any(|(&k, &m)| k == 0.0 && m > 0.0) {
            return Err(underflow());
        }
        Ok(out)
    };

    let e = params.exponent();
    let mut u = vec![1.0; n];
    let mut v = vec![1.0; n];
    let mut kv = k_apply(&v)?;
    let mut err = f64::INFINITY;
    let mut iterations = 0;
    let mut checked_last = false;
    for it in 1..=params.max_iter {
        scaling_update(&mut u, p, &kv, e);
        let ku = kt_apply(&u)?;
        scaling_update(&mut v, q, &ku, e);
        if params.mass_centering {
            if params.is_balanced() {
                let s: f64 = u.iter().sum();
                u.iter_mut().for_each(|x| *x /= s);
                v.iter_mut().for_each(|x| *x *= s);
            } else {
                let pow = -eps / params.tau;
                let c = 0.5 * params.tau * (log_dual_mass(a, p, &u, pow) - log_dual_mass(a, q, &v, pow));
                let (su, sv) = ((c / eps).exp(), (-c / eps).exp());
                u.iter_mut().for_each(|x| *x *= su);
                v.iter_mut().for_each(|x| *x *= sv);
            }
        }
        kv = k_apply(&v)?;
        iterations = it;
        checked_last = it % params.check_every == 0;
        if checked_last {
            err = marginal_residual(&u, &kv, p, params);
            if err < params.tol {
                break;
            }
        }
    }
    if !checked_last {
        err = marginal_residual(&u, &kv, p, params);
    }
    let phi: Vec<f64> = u.iter().map(|x| eps * x.ln()).collect();
    let psi: Vec<f64> = v.iter().map(|x| eps * x.ln()).collect();
    let cost_value = dual_cost(a, p, q, &phi, &psi, params.tau);
    let plan_mass = a.iter().zip(&u).zip(&kv).map(|((a, u), k)| a * u * k).sum();
    Ok(RawSolve {
        u,
        v,
        iterations,
        marginal_error: err,
        cost: cost_value,
        plan_mass,
        kernel,
    })
}

/// Explicit-matrix Sinkhorn on an arbitrary cost matrix over the grid nodes.
pub fn dense_sinkhorn(
    p: &Field,
    q: &Field,
    cost: &DenseMatrix,
    params: &SinkhornParams,
) -> Result<(SinkhornSolution, DensePlan)> {
    check_inputs(p, q, params)?;
    let grid = p.grid().clone();
    let raw = raw_sinkhorn(grid.area_weights(), p.values(), q.values(), cost, params)?;
    let RawSolve {
        u,
        v,
        iterations,
        marginal_error,
        cost: cost_value,
        plan_mass,
        mut kernel,
    } = raw;
    // Reuse the kernel storage for the plan.
    let n = grid.len();
    for i in 0..n {
        for j in 0..n {
            kernel.set(i, j, u[i] * kernel.get(i, j) * v[j]);
        }
    }
    let plan = DensePlan::new(grid.clone(), kernel)?;
    let eps = params.eps;
    let sol = SinkhornSolution {
        grid,
        phi: u.iter().map(|x| eps * x.ln()).collect(),
        psi: v.iter().map(|x| eps * x.ln()).collect(),
        u,
        v,
        iterations_used: iterations,
        marginal_error,
        cost: cost_value,
        converged: marginal_error < params.tol,
        plan_mass,
        clamped_entries: 0,
        eps,
    };
    Ok((sol, plan))
}

/// Dense Sinkhorn on the squared geodesic cost without forming the cost
/// matrix or the plan: only the Gibbs kernel is stored. Returns the solution
/// alone; used for timings and for the small-ε reference values.
pub fn dense_geodesic_sinkhorn(
    p: &Field,
    q: &Field,
    params: &SinkhornParams,
) -> Result<SinkhornSolution> {
    check_inputs(p, q, params)?;
    let grid = p.grid().clone();
    check_gibbs(&grid, params.eps, params.unsafe_eps)?;
    let kernel = gibbs_kernel(&grid, params.eps)?;
    let raw = kernel_sinkhorn(
        grid.area_weights(),
        p.values(),
        q.values(),
        kernel,
        std::f64::consts::PI.powi(2),
        params,
    )?;
    let eps = params.eps;
    Ok(SinkhornSolution {
        phi: raw.u.iter().map(|x| eps * x.ln()).collect(),
        psi: raw.v.iter().map(|x| eps * x.ln()).collect(),
        grid,
        u: raw.u,
        v: raw.v,
        iterations_used: raw.iterations,
        marginal_error: raw.marginal_error,
        cost: raw.cost,
        converged: raw.marginal_error < params.tol,
        plan_mass: raw.plan_mass,
        clamped_entries: 0,
        eps,
    })
}

/// Gibbs matrix `e^{−d(x_i, x_j)²/ε}` on the grid nodes.
pub fn gibbs_kernel(g: &Grid, eps: f64) -> Result<DenseMatrix> {
    let n = g.len();
    let mut k = DenseMatrix::zeros(n)?;
    let pts = g.points();
    k.par_rows_mut(|i, row| {
        for (j, x) in row.iter_mut().enumerate() {
            let d = if i == j { 0.0 } else { geodesic_distance(&pts[i], &pts[j]) };
            *x = (-d * d / eps).exp();
        }
    });
    Ok(k)
}

/// Entropy reference measure of the primal problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EntropyReference {
    /// Uniform density 1, the reference implicit in the Sinkhorn updates.
    #[default]
    Lebesgue,
    /// The product `p ⊗ q`.
    Marginals,
}

/// Generalized KL `Σ w (x log(x/y) − x + y)` with `0·log 0 = 0`. A positive
/// `x` over a zero `y` gives `+∞`.
pub fn weighted_kl(w: &[f64], x: &[f64], y: &[f64]) -> f64 {
    w.iter()
        .zip(x)
        .zip(y)
        .map(|((&w, &x), &y)| {
            if x == 0.0 {
                w * y
            } else if y == 0.0 {
                f64::INFINITY
            } else {
                w * (x * (x / y).ln() - x + y)
            }
        })
        .sum()
}

/// Relative marginal violation above which a balanced plan is infeasible.
pub const FEASIBILITY_TOLERANCE: f64 = 1e-6;

/// Primal objective
/// `Σ C_ij π_ij a_i a_j + ε KL_a(π | R) + τ (KL_a(πa | p) + KL_a(πᵀa | q))`.
/// In the balanced case the marginal terms are replaced by a feasibility
/// check at [`FEASIBILITY_TOLERANCE`].
pub fn primal_objective(
    plan: &DensePlan,
    p: &Field,
    q: &Field,
    cost: &DenseMatrix,
    eps: f64,
    tau: f64,
    reference: EntropyReference,
) -> Result<f64> {
    let g = plan.grid();
    if !p.same_grid(q) || p.grid().as_ref() != g.as_ref() {
        return Err(ShotError::GridMismatch);
    }
    let n = g.len();
    if cost.dim() != n {
        return Err(ShotError::GridMismatch);
    }
    let a = g.area_weights();
    let (pv, qv) = (p.values(), q.values());
    let pi = plan.matrix();

    let (transport, entropy): (f64, f64) = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut t = 0.0;
            let mut h = 0.0;
            for j in 0..n {
                let w = a[i] * a[j];
                let x = pi.get(i, j);
                let r = match reference {
                    EntropyReference::Lebesgue => 1.0,
                    EntropyReference::Marginals => pv[i] * qv[j],
                };
                t += w * cost.get(i, j) * x;
                h += if x == 0.0 {
                    w * r
                } else if r == 0.0 {
                    f64::INFINITY
                } else {
                    w * (x * (x / r).ln() - x + r)
                };
            }
            (t, h)
        })
        .reduce(|| (0.0, 0.0), |x, y| (x.0 + y.0, x.1 + y.1));

    let left = plan.left_marginal();
    let right = plan.right_marginal();
    let marginal = if tau == f64::INFINITY {
        for (name, m, target) in [("left", &left, pv), ("right", &right, qv)] {
            if m.iter().zip(target).any(|(&x, &y)| y == 0.0 && x > 0.0) {
                return Err(ShotError::Data(format!(
                    "{name} marginal charges nodes outside the support"
                )));
            }
            let viol = m
                .iter()
                .zip(target)
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt()
                / target.iter().map(|y| y * y).sum::<f64>().sqrt();
            if viol > FEASIBILITY_TOLERANCE {
                return Err(ShotError::Data(format!(
                    "{name} marginal violates the constraint by {viol:e}"
                )));
            }
        }
        0.0
    } else {
        tau * (weighted_kl(a, &left, pv) + weighted_kl(a, &right, qv))
    };
    Ok(transport + eps * entropy + marginal)
}

/// Squared geodesic distance `d(x_i, x_j)²` for one row.
fn distance_row(g: &Grid, i: usize, out: &mut [f64]) {
    let x = g.point(i);
    for (j, o) in out.iter_mut().enumerate() {
        *o = if i == j {
            0.0
        } else {
            let d = geodesic_distance(&x, &g.point(j));
            d * d
        };
    }
}

fn check_gibbs(g: &Grid, eps: f64, unsafe_eps: bool) -> Result<()> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(ShotError::Parameter(format!("eps must be positive, got {eps}")));
    }
    check_capacity(g.len())?;
    check_underflow(eps, std::f64::consts::PI.powi(2), unsafe_eps)
}

/// Unnormalized geodesic Gibbs convolution `(Kf)_i = Σ_j e^{−d_ij²/ε} f_j a_j`.
/// Rows are generated on the fly, so memory stays O(n) while time is O(n²).
pub fn gibbs_matrix_conv(f: &Field, eps: f64, unsafe_eps: bool) -> Result<Field> {
    let g = f.grid().clone();
    check_gibbs(&g, eps, unsafe_eps)?;
    let a = g.area_weights();
    let fv = f.values();
    let n = g.len();
    let out: Vec<f64> = (0..n)
        .into_par_iter()
        .map_init(
            || vec![0.0; n],
            |row, i| {
                distance_row(&g, i, row);
                row.iter()
                    .zip(fv)
                    .zip(a)
                    .map(|((d2, f), a)| (-d2 / eps).exp() * f * a)
                    .sum()
            },
        )
        .collect();
    Field::new(g, out)
}

/// Node on the equator ring (furthest from both poles), longitude 0.
pub fn equatorial_node(g: &Grid) -> usize {
    g.index((g.n_lat() - 1) / 2, 0)
}

/// `C(ε) = Σ_j a_j e^{−d(x_i, x_j)²/ε}` evaluated at node `i`.
pub fn gibbs_mass_at(g: &Grid, eps: f64, i: usize) -> f64 {
    let mut row = vec![0.0; g.len()];
    distance_row(g, i, &mut row);
    row.iter()
        .zip(g.area_weights())
        .map(|(d2, a)| a * (-d2 / eps).exp())
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvComparison {
    /// Unweighted mean over nodes of `|C(ε)·HeatConv_{ε/4}(f) − K_ε f|`.
    pub mean_abs_error: f64,
    pub c_eps: f64,
}

/// Compares the heat convolution at `t = ε/4`, rescaled by `C(ε)`, against
/// the Gibbs matrix convolution. `C(ε)` is taken at [`equatorial_node`].
pub fn conv_comparison(f: &Field, eps: f64, unsafe_eps: bool) -> Result<ConvComparison> {
    let g = f.grid();
    check_gibbs(g, eps, unsafe_eps)?;
    check_resolvable(eps, g.band_limit(), unsafe_eps)?;
    let c_eps = gibbs_mass_at(g, eps, equatorial_node(g));
    let heat = heat_conv(f, &heat_multipliers(eps / 4.0, g.band_limit())?)?;
    let gibbs = gibbs_matrix_conv(f, eps, unsafe_eps)?;
    let mean_abs_error = heat
        .values()
        .iter()
        .zip(gibbs.values())
        .map(|(h, k)| (c_eps * h - k).abs())
        .sum::<f64>()
        / f.len() as f64;
    Ok(ConvComparison {
        mean_abs_error,
        c_eps,
    })
}
