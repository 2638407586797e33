//! Heat-kernel smoothing in the spherical-harmonic domain.
//!
//! The Laplace–Beltrami operator is diagonal on harmonics, so diffusing for
//! time `t` multiplies every coefficient of degree `ℓ` by `e^{−tℓ(ℓ+1)}`.
//! The dense kernel is only ever produced by pushing discrete deltas through
//! the same transform pair.

use std::sync::Arc;

use crate::dense::{check_capacity, DenseMatrix};
use crate::error::{Result, ShotError};
use crate::grid::Grid;
use crate::sht::{Field, ShtPlan};

/// Floor used when truncation drives a convolution output to `≤ 0`.
pub const NEGATIVITY_FLOOR: f64 = 1e-30;

/// Smallest `ε` whose heat width `sqrt(ε)` is resolvable at band limit `L`.
pub fn min_resolvable_eps(band_limit: usize) -> f64 {
    4.0 / (band_limit as f64 * band_limit as f64)
}

/// Rejects `ε < 4/L²` unless `unsafe_eps` is set.
pub fn check_resolvable(eps: f64, band_limit: usize, unsafe_eps: bool) -> Result<()> {
    let min_eps = min_resolvable_eps(band_limit);
    if eps < min_eps && !unsafe_eps {
        return Err(ShotError::StabilityGuard {
            eps,
            band_limit,
            min_eps,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NegativityPolicy {
    /// Raise entries below the floor to the floor and count them.
    #[default]
    Clamp,
    /// Any entry below the floor is an error.
    Strict,
}

/// Applies the negativity policy in place; returns how many entries were
/// raised to [`NEGATIVITY_FLOOR`].
pub fn enforce_floor(
    values: &mut [f64],
    policy: NegativityPolicy,
    eps: f64,
    band_limit: usize,
) -> Result<usize> {
    let count = values.iter().filter(|&&v| v < NEGATIVITY_FLOOR).count();
    if count == 0 {
        return Ok(0);
    }
    if policy == NegativityPolicy::Strict {
        return Err(ShotError::TruncationNegativity {
            eps,
            band_limit,
            count,
        });
    }
    for v in values.iter_mut() {
        if *v < NEGATIVITY_FLOOR {
            *v = NEGATIVITY_FLOOR;
        }
    }
    Ok(count)
}

/// Degree multipliers `h_ℓ = e^{−tℓ(ℓ+1)}`, `ℓ < L`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatMultipliers {
    time: f64,
    values: Vec<f64>,
}

impl HeatMultipliers {
    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn band_limit(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

pub fn heat_multipliers(t: f64, band_limit: usize) -> Result<HeatMultipliers> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(ShotError::Parameter(format!(
            "heat time must be finite and nonnegative, got {t}"
        )));
    }
    let values = (0..band_limit)
        .map(|l| {
            let l = l as f64;
            (-t * l * (l + 1.0)).exp()
        })
        .collect();
    Ok(HeatMultipliers { time: t, values })
}

/// Transform plan bundled with a set of multipliers, for repeated use.
#[derive(Debug)]
pub struct HeatOperator {
    plan: ShtPlan,
    h: HeatMultipliers,
}

impl HeatOperator {
    pub fn new(grid: Arc<Grid>, h: HeatMultipliers) -> Result<Self> {
        if h.band_limit() != grid.band_limit() {
            return Err(ShotError::BandLimitMismatch {
                found: h.band_limit(),
                allowed: grid.band_limit(),
            });
        }
        Ok(Self {
            plan: ShtPlan::new(grid),
            h,
        })
    }

    pub fn with_time(grid: Arc<Grid>, t: f64) -> Result<Self> {
        let h = heat_multipliers(t, grid.band_limit())?;
        Self::new(grid, h)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.plan.grid()
    }

    pub fn multipliers(&self) -> &HeatMultipliers {
        &self.h
    }

    /// `F⁻¹(h ⊙ F(values))` on raw samples.
    pub fn apply(&self, values: &[f64]) -> Result<Vec<f64>> {
        let mut c = self.plan.forward_values(values)?;
        c.scale_degrees(self.h.values());
        self.plan.inverse_values(&c)
    }
}

/// Heat convolution of `f` with the multipliers `h`.
pub fn heat_conv(f: &Field, h: &HeatMultipliers) -> Result<Field> {
    let op = HeatOperator::new(f.grid().clone(), h.clone())?;
    Field::new(f.grid().clone(), op.apply(f.values())?)
}

/// Dense truncated heat kernel: column `j` is the heat convolution of the
/// discrete delta carrying `1/a_j` at node `j`.
pub fn materialize_heat_kernel(g: &Arc<Grid>, t: f64) -> Result<DenseMatrix> {
    if !(t > 0.0) {
        return Err(ShotError::Parameter(format!(
            "heat time must be positive, got {t}"
        )));
    }
    let n = g.len();
    check_capacity(n)?;
    let op = HeatOperator::with_time(g.clone(), t)?;
    let mut k = DenseMatrix::zeros(n)?;
    let mut delta = vec![0.0; n];
    for j in 0..n {
        delta[j] = 1.0 / g.area_weights()[j];
        let col = op.apply(&delta)?;
        delta[j] = 0.0;
        for (i, v) in col.into_iter().enumerate() {
            k.set(i, j, v);
        }
    }
    Ok(k)
}

/// Time-ε cost `−ε log H_{ε/4}` on the grid nodes.
pub fn time_eps_cost(g: &Arc<Grid>, eps: f64) -> Result<DenseMatrix> {
    if !(eps > 0.0) {
        return Err(ShotError::Parameter(format!("eps must be positive, got {eps}")));
    }
    let mut k = materialize_heat_kernel(g, eps / 4.0)?;
    let count = k.as_slice().iter().filter(|&&v| v <= 0.0).count();
    if count > 0 {
        return Err(ShotError::TruncationNegativity {
            eps,
            band_limit: g.band_limit(),
            count,
        });
    }
    k.map_inplace(|v| -eps * v.ln());
    Ok(k)
}
