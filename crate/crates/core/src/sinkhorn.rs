//! Balanced and unbalanced Sinkhorn iterations with heat-kernel convolutions.
//!
//! The Gibbs kernel is never formed. Every kernel product is a heat
//! convolution at time `t = ε/4`, evaluated through the harmonic transform.
//! Potentials are `φ = ε log u`, `ψ = ε log v`; nodes where the input
//! density is zero carry `u = 0` and therefore `φ = −∞`.

use std::sync::Arc;
use std::thread;

use crate::error::{Result, ShotError};
use crate::grid::Grid;
use crate::heat::{check_resolvable, enforce_floor, HeatMultipliers, HeatOperator, NegativityPolicy};
use crate::sht::Field;

/// Relative tolerance on the mass equality required by the balanced branch.
pub const MASS_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornParams {
    pub eps: f64,
    /// Marginal relaxation; `f64::INFINITY` selects the balanced problem.
    pub tau: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub check_every: usize,
    pub negativity: NegativityPolicy,
    /// Skip the `ε ≥ 4/L²` resolution guard.
    pub unsafe_eps: bool,
    /// Apply the per-iteration rescaling of `(u, v)`. Only tests turn it off.
    pub mass_centering: bool,
}

impl SinkhornParams {
    pub fn new(eps: f64, tau: f64) -> Self {
        Self {
            eps,
            tau,
            max_iter: 1000,
            tol: 1e-9,
            check_every: 10,
            negativity: NegativityPolicy::Clamp,
            unsafe_eps: false,
            mass_centering: true,
        }
    }

    pub fn balanced(eps: f64) -> Self {
        Self::new(eps, f64::INFINITY)
    }

    pub fn is_balanced(&self) -> bool {
        self.tau == f64::INFINITY
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(ShotError::Parameter(msg));
        if !(self.eps > 0.0) || !self.eps.is_finite() {
            return bad(format!("eps must be positive and finite, got {}", self.eps));
        }
        if !(self.tau > 0.0) {
            return bad(format!("tau must be positive or infinite, got {}", self.tau));
        }
        if self.max_iter == 0 {
            return bad("max_iter must be at least 1".into());
        }
        if !(self.tol > 0.0) {
            return bad(format!("tol must be positive, got {}", self.tol));
        }
        if self.check_every == 0 {
            return bad("check_every must be at least 1".into());
        }
        Ok(())
    }

    /// Exponent `τ/(τ+ε)` of the unbalanced updates (1 when balanced).
    pub(crate) fn exponent(&self) -> f64 {
        if self.is_balanced() {
            1.0
        } else {
            self.tau / (self.tau + self.eps)
        }
    }
}

#[derive(Debug, Clone)]
pub struct SinkhornSolution {
    pub(crate) grid: Arc<Grid>,
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub iterations_used: usize,
    pub marginal_error: f64,
    /// Dual objective as accumulated by the iterations (see [`solve`]).
    pub cost: f64,
    pub converged: bool,
    /// Total plan mass `Σ_i a_i u_i (H v)_i`.
    pub plan_mass: f64,
    /// Convolution outputs raised to the negativity floor over the run.
    pub clamped_entries: usize,
    pub eps: f64,
}

impl SinkhornSolution {
    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    /// Full dual value `cost − ε·m(π)`, the quantity whose derivative in the
    /// density is `a_i` times the potential term of `cost`.
    pub fn dual_value(&self) -> f64 {
        self.cost - self.eps * self.plan_mass
    }

    /// Dual objective including the constant `ε·Σ_ij a_i a_j` contributed by
    /// the entropy against the uniform (Lebesgue) reference; equals the primal
    /// optimum at convergence.
    pub fn dual_objective(&self) -> f64 {
        let total: f64 = self.grid.area_weights().iter().sum();
        self.dual_value() + self.eps * total * total
    }
}

pub(crate) fn check_inputs(p: &Field, q: &Field, params: &SinkhornParams) -> Result<(f64, f64)> {
    params.validate()?;
    if !p.same_grid(q) {
        return Err(ShotError::GridMismatch);
    }
    for (name, f) in [("p", p), ("q", q)] {
        if let Some(i) = f.values().iter().position(|&x| x < 0.0) {
            return Err(ShotError::Data(format!("{name} is negative at node {i}")));
        }
    }
    let (mp, mq) = (p.mass(), q.mass());
    if !(mp > 0.0) || !(mq > 0.0) {
        return Err(ShotError::Data(format!(
            "inputs need positive mass, got {mp} and {mq}"
        )));
    }
    if params.is_balanced() && (mp - mq).abs() > MASS_TOLERANCE * mp.max(mq) {
        return Err(ShotError::MassMismatch {
            mass_p: mp,
            mass_q: mq,
        });
    }
    Ok((mp, mq))
}

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `‖u ⊙ kv − p ⊙ u^{−ε/τ}‖ / ‖p‖`; the power term is 1 when balanced.
pub(crate) fn marginal_residual(u: &[f64], kv: &[f64], p: &[f64], params: &SinkhornParams) -> f64 {
    let pow = if params.is_balanced() {
        0.0
    } else {
        -params.eps / params.tau
    };
    let r: f64 = u
        .iter()
        .zip(kv)
        .zip(p)
        .map(|((&ui, &ki), &pi)| {
            let target = if pi == 0.0 { 0.0 } else { pi * ui.powf(pow) };
            let d = ui * ki - target;
            d * d
        })
        .sum();
    r.sqrt() / norm2(p)
}

/// Balanced marginal violation `‖u ⊙ HeatConv(v) − p‖₂ / ‖p‖₂`, with plain
/// (unweighted) norms over node values.
pub fn marginal_error(u: &Field, v: &Field, p: &Field, h: &HeatMultipliers) -> Result<f64> {
    if !u.same_grid(v) || !u.same_grid(p) {
        return Err(ShotError::GridMismatch);
    }
    if norm2(p.values()) == 0.0 {
        return Err(ShotError::Data("marginal error against a zero field".into()));
    }
    let op = HeatOperator::new(u.grid().clone(), h.clone())?;
    let kv = op.apply(v.values())?;
    let r: f64 = u
        .values()
        .iter()
        .zip(&kv)
        .zip(p.values())
        .map(|((a, b), c)| (a * b - c).powi(2))
        .sum();
    Ok(r.sqrt() / norm2(p.values()))
}

/// Scaling update `x_i = (m_i / k_i)^e`, zero where `m_i = 0`.
pub(crate) fn scaling_update(out: &mut [f64], m: &[f64], k: &[f64], e: f64) {
    for ((o, &mi), &ki) in out.iter_mut().zip(m).zip(k) {
        *o = if mi == 0.0 {
            0.0
        } else if e == 1.0 {
            mi / ki
        } else {
            (mi / ki).powf(e)
        };
    }
}

/// `log Σ_i a_i m_i x_i^{−ε/τ}` over the support of `m`.
pub(crate) fn log_dual_mass(a: &[f64], m: &[f64], x: &[f64], pow: f64) -> f64 {
    a.iter()
        .zip(m)
        .zip(x)
        .filter(|((_, &mi), _)| mi > 0.0)
        .map(|((ai, mi), xi)| ai * mi * xi.powf(pow))
        .sum::<f64>()
        .ln()
}

/// Dual cost of the potentials: `Σ a(φp + ψq)` when balanced, otherwise
/// `Σ a[τ(1 − e^{−φ/τ})p + τ(1 − e^{−ψ/τ})q]`.
pub(crate) fn dual_cost(
    a: &[f64],
    p: &[f64],
    q: &[f64],
    phi: &[f64],
    psi: &[f64],
    tau: f64,
) -> f64 {
    let term = |x: f64| {
        if tau == f64::INFINITY {
            x
        } else {
            tau * (1.0 - (-x / tau).exp())
        }
    };
    let side = |m: &[f64], pot: &[f64]| -> f64 {
        a.iter()
            .zip(m)
            .zip(pot)
            .filter(|((_, &mi), _)| mi > 0.0)
            .map(|((ai, mi), &x)| ai * term(x) * mi)
            .sum()
    };
    side(p, phi) + side(q, psi)
}

/// Runs the heat-kernel Sinkhorn iterations between densities `p` and `q`.
///
/// One iteration is one `(u, v)` update pair. The marginal error is checked
/// every `check_every` iterations and once more at the end. When `τ < ∞` the
/// monitored residual is `‖u ⊙ Hv − p ⊙ u^{−ε/τ}‖/‖p‖`, which vanishes at the
/// unbalanced fixed point; for `τ = ∞` it is the plain marginal violation.
pub fn solve(p: &Field, q: &Field, params: &SinkhornParams) -> Result<SinkhornSolution> {
    check_inputs(p, q, params)?;
    check_resolvable(params.eps, p.grid().band_limit(), params.unsafe_eps)?;
    let grid = p.grid().clone();
    let l = grid.band_limit();
    let op = HeatOperator::with_time(grid.clone(), params.eps / 4.0)?;
    let a = grid.area_weights();
    let (pv, qv) = (p.values(), q.values());
    let n = grid.len();
    let e = params.exponent();
    let eps = params.eps;

    let mut u = vec![1.0; n];
    let mut v = vec![1.0; n];
    let mut clamped = 0;
    let mut conv = |x: &[f64]| -> Result<Vec<f64>> {
        let mut y = op.apply(x)?;
        clamped += enforce_floor(&mut y, params.negativity, eps, l)?;
        Ok(y)
    };

    // `kv` always holds the convolution of the current `v`.
    let mut kv = conv(&v)?;
    let mut err = f64::INFINITY;
    let mut iterations = 0;
    let mut checked_last = false;
    for k in 1..=params.max_iter {
        scaling_update(&mut u, pv, &kv, e);
        let ku = conv(&u)?;
        scaling_update(&mut v, qv, &ku, e);
        if params.mass_centering {
            if params.is_balanced() {
                let s: f64 = u.iter().sum();
                u.iter_mut().for_each(|x| *x /= s);
                v.iter_mut().for_each(|x| *x *= s);
            } else {
                let pow = -eps / params.tau;
                let c = 0.5
                    * params.tau
                    * (log_dual_mass(a, pv, &u, pow) - log_dual_mass(a, qv, &v, pow));
                let (su, sv) = ((c / eps).exp(), (-c / eps).exp());
                u.iter_mut().for_each(|x| *x *= su);
                v.iter_mut().for_each(|x| *x *= sv);
            }
        }
        kv = conv(&v)?;
        iterations = k;
        checked_last = k % params.check_every == 0;
        if checked_last {
            err = marginal_residual(&u, &kv, pv, params);
            if err < params.tol {
                break;
            }
        }
    }
    if !checked_last {
        err = marginal_residual(&u, &kv, pv, params);
    }

    let phi: Vec<f64> = u.iter().map(|x| eps * x.ln()).collect();
    let psi: Vec<f64> = v.iter().map(|x| eps * x.ln()).collect();
    let cost = dual_cost(a, pv, qv, &phi, &psi, params.tau);
    let plan_mass = a
        .iter()
        .zip(&u)
        .zip(&kv)
        .map(|((ai, ui), ki)| ai * ui * ki)
        .sum();
    Ok(SinkhornSolution {
        grid,
        phi,
        psi,
        u,
        v,
        iterations_used: iterations,
        marginal_error: err,
        cost,
        converged: err < params.tol,
        plan_mass,
        clamped_entries: clamped,
        eps,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceReport {
    pub value: f64,
    /// Dual costs of the `(p, q)`, `(p, p)` and `(q, q)` solves.
    pub cost_pq: f64,
    pub cost_pp: f64,
    pub cost_qq: f64,
    pub mass_p: f64,
    pub mass_q: f64,
    pub iterations: [usize; 3],
    pub converged: [bool; 3],
    pub marginal_errors: [f64; 3],
    pub clamped_entries: usize,
}

impl DivergenceReport {
    pub fn converged(&self) -> bool {
        self.converged.iter().all(|&c| c)
    }
}

fn three_solves(p: &Field, q: &Field, params: &SinkhornParams) -> Result<[SinkhornSolution; 3]> {
    check_inputs(p, q, params)?;
    let (pq, pp, qq) = thread::scope(|s| {
        let pp = s.spawn(|| solve(p, p, params));
        let qq = s.spawn(|| solve(q, q, params));
        let pq = solve(p, q, params);
        (pq, pp.join(), qq.join())
    });
    let join = |r: thread::Result<Result<SinkhornSolution>>| {
        r.unwrap_or_else(|e| std::panic::resume_unwind(e))
    };
    Ok([pq?, join(pp)?, join(qq)?])
}

fn report(sols: &[SinkhornSolution; 3], mass_p: f64, mass_q: f64, eps: f64) -> DivergenceReport {
    let [pq, pp, qq] = sols;
    let dm = mass_p - mass_q;
    let value = pq.dual_value() - 0.5 * (pp.dual_value() + qq.dual_value()) + 0.5 * eps * dm * dm;
    DivergenceReport {
        value,
        cost_pq: pq.cost,
        cost_pp: pp.cost,
        cost_qq: qq.cost,
        mass_p,
        mass_q,
        iterations: sols.each_ref().map(|s| s.iterations_used),
        converged: sols.each_ref().map(|s| s.converged),
        marginal_errors: sols.each_ref().map(|s| s.marginal_error),
        clamped_entries: sols.iter().map(|s| s.clamped_entries).sum(),
    }
}

/// Debiased divergence
/// `S = D(p,q) − ½D(p,p) − ½D(q,q) + (ε/2)(m(p) − m(q))²`
/// with `D = cost − ε·m(π)` from each solve. The three solves run on
/// separate threads.
pub fn divergence(p: &Field, q: &Field, params: &SinkhornParams) -> Result<DivergenceReport> {
    let sols = three_solves(p, q, params)?;
    Ok(report(&sols, p.mass(), q.mass(), params.eps))
}

#[derive(Debug, Clone)]
pub struct GradientReport {
    /// `∂S/∂p_i / a_i` at every node.
    pub raw: Field,
    /// `raw` minus its area-weighted mean.
    pub centered: Field,
    pub divergence: DivergenceReport,
}

/// Gradient of the divergence with respect to the density values of `p`,
/// assembled from the converged potentials. The derivative with respect to
/// `p_i` itself is `a_i · raw_i`.
///
/// The entropy term has infinite slope at zero density, so `p` must be
/// strictly positive.
pub fn divergence_gradient(p: &Field, q: &Field, params: &SinkhornParams) -> Result<GradientReport> {
    if let Some(i) = p.values().iter().position(|&x| x == 0.0) {
        return Err(ShotError::Data(format!(
            "gradient needs a strictly positive p, zero at node {i}"
        )));
    }
    let sols = three_solves(p, q, params)?;
    let (mp, mq) = (p.mass(), q.mass());
    let rep = report(&sols, mp, mq, params.eps);
    let [pq, pp, _] = &sols;
    let tau = params.tau;
    let term = |x: f64| {
        if params.is_balanced() {
            x
        } else {
            tau * (1.0 - (-x / tau).exp())
        }
    };
    let shift = params.eps * (mp - mq);
    let raw: Vec<f64> = (0..p.len())
        .map(|i| term(pq.phi[i]) - 0.5 * (term(pp.phi[i]) + term(pp.psi[i])) + shift)
        .collect();
    let grid = p.grid().clone();
    let mean = grid.integrate(&raw) / grid.area_weights().iter().sum::<f64>();
    let centered = raw.iter().map(|g| g - mean).collect();
    Ok(GradientReport {
        raw: Field::new(grid.clone(), raw)?,
        centered: Field::new(grid, centered)?,
        divergence: rep,
    })
}

/// A latitude band in degrees. Nodes with `lo < lat < hi` belong to it;
/// a bound at ±90° also admits the pole ring itself.
#[derive(Debug, Clone, PartialEq)]
pub struct LatBand {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
}

impl LatBand {
    pub fn new(name: impl Into<String>, lo: f64, hi: f64) -> Result<Self> {
        if !(-90.0..=90.0).contains(&lo) || !(-90.0..=90.0).contains(&hi) || !(lo < hi) {
            return Err(ShotError::Parameter(format!(
                "latitude band ({lo}, {hi}) must satisfy -90 <= lo < hi <= 90"
            )));
        }
        Ok(Self {
            name: name.into(),
            lo,
            hi,
        })
    }

    pub fn contains(&self, lat: f64) -> bool {
        (lat > self.lo || (self.lo == -90.0 && lat == -90.0))
            && (lat < self.hi || (self.hi == 90.0 && lat == 90.0))
    }
}

/// Tropics, ITCZ, both midlatitude belts and the Arctic.
pub fn default_bands() -> Vec<LatBand> {
    [
        ("Tropics", -23.5, 23.5),
        ("ITCZ", -10.0, 10.0),
        ("NH Midlatitudes", 30.0, 60.0),
        ("SH Midlatitudes", -60.0, -30.0),
        ("Arctic", 66.5, 90.0),
    ]
    .into_iter()
    .map(|(n, lo, hi)| LatBand::new(n, lo, hi).expect("valid default band"))
    .collect()
}

/// Area-weighted RMS of `g` over the nodes of a latitude band.
pub fn regional_rms(g: &Field, band: &LatBand) -> Result<f64> {
    LatBand::new(band.name.clone(), band.lo, band.hi)?;
    let grid = g.grid();
    let a = grid.area_weights();
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &x) in g.values().iter().enumerate() {
        if band.contains(grid.latitude_deg(i)) {
            num += a[i] * x * x;
            den += a[i];
        }
    }
    if den == 0.0 {
        return Err(ShotError::Data(format!(
            "band {} ({}, {}) contains no grid nodes",
            band.name, band.lo, band.hi
        )));
    }
    Ok((num / den).sqrt())
}
