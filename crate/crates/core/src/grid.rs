//! Clenshaw–Curtis equiangular discretization of the unit sphere.
//!
//! Colatitude rings sit at `θ_j = jπ/(n_lat − 1)` (both poles included) and
//! longitudes at `φ_k = 2πk/n_lon`. With `n_lat = 2L − 1` and `n_lon = 2L`
//! the rule integrates products of two harmonics of degree `< L` exactly.

use std::f64::consts::PI;

use crate::dense::DenseMatrix;
use crate::error::{Result, ShotError};

pub const MIN_BAND_LIMIT: usize = 2;
pub const MAX_BAND_LIMIT: usize = 2048;

/// A point on the unit sphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpherePoint {
    v: [f64; 3],
}

impl SpherePoint {
    /// Point at colatitude `theta` and longitude `phi` (radians).
    pub fn from_angles(theta: f64, phi: f64) -> Self {
        let (st, ct) = theta.sin_cos();
        let (sp, cp) = phi.sin_cos();
        Self {
            v: [cp * st, sp * st, ct],
        }
    }

    /// Normalizes `v`; fails on the zero vector or non-finite input.
    pub fn from_vector(v: [f64; 3]) -> Result<Self> {
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(ShotError::Parameter(format!(
                "cannot normalize vector {v:?}"
            )));
        }
        Ok(Self {
            v: [v[0] / norm, v[1] / norm, v[2] / norm],
        })
    }

    pub fn north_pole() -> Self {
        Self { v: [0.0, 0.0, 1.0] }
    }

    pub fn unit_vector(&self) -> [f64; 3] {
        self.v
    }

    pub fn dot(&self, other: &SpherePoint) -> f64 {
        self.v[0] * other.v[0] + self.v[1] * other.v[1] + self.v[2] * other.v[2]
    }
}

/// Great-circle distance in radians, in `[0, π]`.
pub fn geodesic_distance(x: &SpherePoint, y: &SpherePoint) -> f64 {
    x.dot(y).clamp(-1.0, 1.0).acos()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    band_limit: usize,
    n_lat: usize,
    n_lon: usize,
    colatitudes: Vec<f64>,
    longitudes: Vec<f64>,
    lat_weights: Vec<f64>,
    area_weights: Vec<f64>,
}

impl Grid {
    pub fn band_limit(&self) -> usize {
        self.band_limit
    }

    pub fn n_lat(&self) -> usize {
        self.n_lat
    }

    pub fn n_lon(&self) -> usize {
        self.n_lon
    }

    /// Total number of nodes, `n_lat · n_lon`.
    pub fn len(&self) -> usize {
        self.n_lat * self.n_lon
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn colatitudes(&self) -> &[f64] {
        &self.colatitudes
    }

    pub fn longitudes(&self) -> &[f64] {
        &self.longitudes
    }

    pub fn lat_weights(&self) -> &[f64] {
        &self.lat_weights
    }

    /// Area weights `a_i`, flattened latitude-major.
    pub fn area_weights(&self) -> &[f64] {
        &self.area_weights
    }

    /// Flat index of ring `j`, longitude `k`.
    #[inline]
    pub fn index(&self, j: usize, k: usize) -> usize {
        j * self.n_lon + k
    }

    pub fn point(&self, i: usize) -> SpherePoint {
        let (j, k) = (i / self.n_lon, i % self.n_lon);
        SpherePoint::from_angles(self.colatitudes[j], self.longitudes[k])
    }

    pub fn points(&self) -> Vec<SpherePoint> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    /// Latitude of node `i` in degrees, `90 − θ·180/π`.
    pub fn latitude_deg(&self, i: usize) -> f64 {
        90.0 - self.colatitudes[i / self.n_lon].to_degrees()
    }

    /// Longitude of node `i` in degrees.
    pub fn longitude_deg(&self, i: usize) -> f64 {
        self.longitudes[i % self.n_lon].to_degrees()
    }

    /// Quadrature `Σ_i a_i f_i`.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.len());
        self.area_weights.iter().zip(values).map(|(a, f)| a * f).sum()
    }

    pub fn is_pole_ring(&self, j: usize) -> bool {
        j == 0 || j + 1 == self.n_lat
    }
}

/// Clenshaw–Curtis weights on `[-1, 1]` for the nodes `x_j = cos(jπ/n)`,
/// `j = 0..=n`, from the closed cosine-series formula.
pub fn clenshaw_curtis_weights(n_nodes: usize) -> Vec<f64> {
    assert!(n_nodes >= 2, "need at least two Clenshaw-Curtis nodes");
    let n = n_nodes - 1;
    let nf = n as f64;
    (0..=n)
        .map(|j| {
            let c = if j == 0 || j == n { 1.0 } else { 2.0 };
            let mut s = 0.0;
            for k in 1..=n / 2 {
                let b = if 2 * k == n { 1.0 } else { 2.0 };
                let kf = k as f64;
                s += b / (4.0 * kf * kf - 1.0) * (2.0 * kf * j as f64 * PI / nf).cos();
            }
            c / nf * (1.0 - s)
        })
        .collect()
}

/// Equiangular grid with `n_lat = 2L − 1` rings and `n_lon = 2L` longitudes.
pub fn build_grid(band_limit: usize) -> Result<Grid> {
    if !(MIN_BAND_LIMIT..=MAX_BAND_LIMIT).contains(&band_limit) {
        return Err(ShotError::Parameter(format!(
            "band limit {band_limit} outside [{MIN_BAND_LIMIT}, {MAX_BAND_LIMIT}]"
        )));
    }
    let n_lat = 2 * band_limit - 1;
    let n_lon = 2 * band_limit;
    let colatitudes: Vec<f64> = (0..n_lat)
        .map(|j| j as f64 * PI / (n_lat - 1) as f64)
        .collect();
    let longitudes: Vec<f64> = (0..n_lon)
        .map(|k| 2.0 * PI * k as f64 / n_lon as f64)
        .collect();
    let lat_weights = clenshaw_curtis_weights(n_lat);
    let dphi = 2.0 * PI / n_lon as f64;
    let area_weights = lat_weights
        .iter()
        .flat_map(|&w| std::iter::repeat(w * dphi).take(n_lon))
        .collect();
    Ok(Grid {
        band_limit,
        n_lat,
        n_lon,
        colatitudes,
        longitudes,
        lat_weights,
        area_weights,
    })
}

/// Dense matrix of squared geodesic distances between grid nodes.
pub fn cost_matrix(g: &Grid) -> Result<DenseMatrix> {
    let pts = g.points();
    DenseMatrix::from_fn(g.len(), |i, j| {
        if i == j {
            0.0
        } else {
            let d = geodesic_distance(&pts[i], &pts[j]);
            d * d
        }
    })
}
