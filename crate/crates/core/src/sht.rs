//! Semi-naive spherical harmonic transforms on the Clenshaw–Curtis grid.
//!
//! The forward transform runs a longitude DFT on every ring, then for each
//! order `m` a Legendre-weighted quadrature over the rings. The inverse runs
//! the same two stages backwards. Both are `O(L³)` and keep only `O(L·n_lat)`
//! working memory.
//!
//! Only orders `m ≥ 0` are stored. For real fields the negative orders follow
//! from `f̂_{ℓ,−m} = (−1)^m conj(f̂_{ℓm})`.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Result, ShotError};
use crate::grid::Grid;
use crate::legendre::{normalized_legendre_sc, tri_index, tri_len, LegendreRecurrence};

/// Real samples of a function on a [`Grid`], latitude-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(ShotError::Data(format!(
                "field has {} samples, grid has {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(ShotError::Data(format!("non-finite sample at node {i}")));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Arc<Grid>) -> Self {
        let n = grid.len();
        Self {
            grid,
            values: vec![0.0; n],
        }
    }

    pub fn constant(grid: Arc<Grid>, value: f64) -> Self {
        let n = grid.len();
        Self {
            grid,
            values: vec![value; n],
        }
    }

    /// Samples `f(θ, φ)` at every node.
    pub fn from_fn(grid: Arc<Grid>, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(grid.len());
        for &theta in grid.colatitudes() {
            for &phi in grid.longitudes() {
                values.push(f(theta, phi));
            }
        }
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Weighted total `Σ_i a_i f_i`.
    pub fn mass(&self) -> f64 {
        self.grid.integrate(&self.values)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest absolute difference between two fields on the same grid.
    pub fn sup_distance(&self, other: &Field) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Checks that both pole rings are constant in longitude within `tol`.
    pub fn check_pole_rings(&self, tol: f64) -> Result<()> {
        let g = &self.grid;
        for j in [0, g.n_lat() - 1] {
            let ring = &self.values[g.index(j, 0)..g.index(j, 0) + g.n_lon()];
            let (lo, hi) = ring
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                });
            if hi - lo > tol {
                return Err(ShotError::Data(format!(
                    "pole ring {j} varies by {:e} in longitude",
                    hi - lo
                )));
            }
        }
        Ok(())
    }

    pub fn same_grid(&self, other: &Field) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || self.grid == other.grid
    }
}

/// Triangular table of coefficients `f̂_ℓm`, `0 ≤ m ≤ ℓ < L`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCoeffs {
    band_limit: usize,
    coeffs: Vec<Complex64>,
}

impl SpectralCoeffs {
    pub fn zeros(band_limit: usize) -> Self {
        Self {
            band_limit,
            coeffs: vec![Complex64::new(0.0, 0.0); tri_len(band_limit)],
        }
    }

    pub fn from_vec(band_limit: usize, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != tri_len(band_limit) {
            return Err(ShotError::Data(format!(
                "expected {} coefficients for L = {band_limit}, got {}",
                tri_len(band_limit),
                coeffs.len()
            )));
        }
        Ok(Self { band_limit, coeffs })
    }

    pub fn band_limit(&self) -> usize {
        self.band_limit
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    /// `f̂_ℓm` for any `|m| ≤ ℓ`; negative orders use the real-field symmetry.
    pub fn get(&self, l: usize, m: i64) -> Complex64 {
        let am = m.unsigned_abs() as usize;
        assert!(am <= l && l < self.band_limit, "({l}, {m}) out of range");
        let c = self.coeffs[tri_index(l, am)];
        if m >= 0 {
            c
        } else if am % 2 == 0 {
            c.conj()
        } else {
            -c.conj()
        }
    }

    pub fn set(&mut self, l: usize, m: usize, value: Complex64) {
        self.coeffs[tri_index(l, m)] = value;
    }

    /// Multiplies every order of degree `ℓ` by `factors[ℓ]`.
    pub fn scale_degrees(&mut self, factors: &[f64]) {
        assert!(factors.len() >= self.band_limit);
        for (l, &h) in factors.iter().enumerate().take(self.band_limit) {
            for c in &mut self.coeffs[tri_index(l, 0)..=tri_index(l, l)] {
                *c *= h;
            }
        }
    }

    /// `Σ_ℓ Σ_{|m|≤ℓ} |f̂_ℓm|²`, counting the implied negative orders.
    pub fn energy(&self) -> f64 {
        let mut s = 0.0;
        for l in 0..self.band_limit {
            s += self.coeffs[tri_index(l, 0)].norm_sqr();
            for m in 1..=l {
                s += 2.0 * self.coeffs[tri_index(l, m)].norm_sqr();
            }
        }
        s
    }

    /// Largest coefficient-wise modulus of the difference.
    pub fn sup_distance(&self, other: &SpectralCoeffs) -> f64 {
        assert_eq!(self.band_limit, other.band_limit);
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

/// Orthonormal complex harmonic `Y_ℓm(θ, φ)`.
pub fn eval_harmonic(l: usize, m: i64, theta: f64, phi: f64) -> Result<Complex64> {
    let am = m.unsigned_abs() as usize;
    if am > l {
        return Err(ShotError::Parameter(format!("|m| = {am} exceeds ℓ = {l}")));
    }
    let (s, x) = theta.sin_cos();
    let p = normalized_legendre_sc(l, am, x, s);
    let y = Complex64::from_polar(p, am as f64 * phi);
    Ok(if m >= 0 {
        y
    } else if am % 2 == 0 {
        y.conj()
    } else {
        -y.conj()
    })
}

/// How the longitude stage is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LongitudeMode {
    /// FFT when `n_lon` factors into small primes, direct DFT otherwise.
    Auto,
    Fft,
    Direct,
}

enum LongitudeTransform {
    Fft {
        forward: Arc<dyn Fft<f64>>,
        inverse: Arc<dyn Fft<f64>>,
    },
    /// `cos(mφ_k)`, `sin(mφ_k)` tables, row `m`, column `k`.
    Direct { cos: Vec<f64>, sin: Vec<f64> },
}

fn has_small_factors(mut n: usize) -> bool {
    for p in [2, 3, 5, 7] {
        while n % p == 0 {
            n /= p;
        }
    }
    n == 1
}

/// Precomputed state for repeated transforms on one grid.
pub struct ShtPlan {
    grid: Arc<Grid>,
    rec: LegendreRecurrence,
    cos_theta: Vec<f64>,
    sin_theta: Vec<f64>,
    longitude: LongitudeTransform,
}

impl std::fmt::Debug for ShtPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ShtPlan")
            .field("band_limit", &self.grid.band_limit())
            .field("fft", &matches!(self.longitude, LongitudeTransform::Fft { .. }))
            .finish()
    }
}

impl ShtPlan {
    pub fn new(grid: Arc<Grid>) -> Self {
        Self::with_mode(grid, LongitudeMode::Auto)
    }

    pub fn with_mode(grid: Arc<Grid>, mode: LongitudeMode) -> Self {
        let l = grid.band_limit();
        let n_lon = grid.n_lon();
        let use_fft = match mode {
            LongitudeMode::Auto => has_small_factors(n_lon),
            LongitudeMode::Fft => true,
            LongitudeMode::Direct => false,
        };
        let longitude = if use_fft {
            let mut planner = FftPlanner::new();
            LongitudeTransform::Fft {
                forward: planner.plan_fft_forward(n_lon),
                inverse: planner.plan_fft_inverse(n_lon),
            }
        } else {
            let mut cos = Vec::with_capacity(l * n_lon);
            let mut sin = Vec::with_capacity(l * n_lon);
            for m in 0..l {
                for k in 0..n_lon {
                    // Reduce m·k mod n_lon so the angle stays in [0, 2π).
                    let ang = 2.0 * PI * ((m * k) % n_lon) as f64 / n_lon as f64;
                    cos.push(ang.cos());
                    sin.push(ang.sin());
                }
            }
            LongitudeTransform::Direct { cos, sin }
        };
        let (sin_theta, cos_theta) = grid
            .colatitudes()
            .iter()
            .enumerate()
            .map(|(j, &t)| {
                // Exact zeros at the poles.
                if grid.is_pole_ring(j) {
                    (0.0, if j == 0 { 1.0 } else { -1.0 })
                } else {
                    t.sin_cos()
                }
            })
            .unzip();
        Self {
            rec: LegendreRecurrence::new(l),
            grid,
            cos_theta,
            sin_theta,
            longitude,
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn band_limit(&self) -> usize {
        self.grid.band_limit()
    }

    pub fn uses_fft(&self) -> bool {
        matches!(self.longitude, LongitudeTransform::Fft { .. })
    }

    /// `out[m] = Σ_k ring[k] e^{−imφ_k}` for `m < out.len()`.
    fn analyze_ring(&self, ring: &[f64], buf: &mut [Complex64], out: &mut [Complex64]) {
        let n_lon = ring.len();
        match &self.longitude {
            LongitudeTransform::Fft { forward, .. } => {
                for (b, &r) in buf.iter_mut().zip(ring) {
                    *b = Complex64::new(r, 0.0);
                }
                forward.process(buf);
                out.copy_from_slice(&buf[..out.len()]);
            }
            LongitudeTransform::Direct { cos, sin } => {
                for (m, o) in out.iter_mut().enumerate() {
                    let c = &cos[m * n_lon..(m + 1) * n_lon];
                    let s = &sin[m * n_lon..(m + 1) * n_lon];
                    let mut re = 0.0;
                    let mut im = 0.0;
                    for k in 0..n_lon {
                        re += ring[k] * c[k];
                        im -= ring[k] * s[k];
                    }
                    *o = Complex64::new(re, im);
                }
            }
        }
    }

    /// `ring[k] = Re G_0 + 2 Σ_{m≥1} Re(G_m e^{imφ_k})`.
    fn synthesize_ring(&self, g: &[Complex64], buf: &mut [Complex64], ring: &mut [f64]) {
        let n_lon = ring.len();
        match &self.longitude {
            LongitudeTransform::Fft { inverse, .. } => {
                buf.fill(Complex64::new(0.0, 0.0));
                buf[0] = Complex64::new(g[0].re, 0.0);
                for (m, &gm) in g.iter().enumerate().skip(1) {
                    buf[m] += gm;
                    buf[n_lon - m] += gm.conj();
                }
                inverse.process(buf);
                for (r, b) in ring.iter_mut().zip(buf.iter()) {
                    *r = b.re;
                }
            }
            LongitudeTransform::Direct { cos, sin } => {
                for (k, r) in ring.iter_mut().enumerate() {
                    let mut acc = g[0].re;
                    for (m, gm) in g.iter().enumerate().skip(1) {
                        let i = m * n_lon + k;
                        acc += 2.0 * (gm.re * cos[i] - gm.im * sin[i]);
                    }
                    *r = acc;
                }
            }
        }
    }

    /// Forward transform of raw samples on this plan's grid.
    pub fn forward_values(&self, values: &[f64]) -> Result<SpectralCoeffs> {
        let g = &self.grid;
        if values.len() != g.len() {
            return Err(ShotError::Data(format!(
                "expected {} samples, got {}",
                g.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ShotError::Data("non-finite sample".into()));
        }
        let l_max = g.band_limit();
        let n_lon = g.n_lon();
        let n_lat = g.n_lat();
        let dphi = 2.0 * PI / n_lon as f64;

        // Longitude stage: weighted Fourier coefficients per ring, row j.
        let mut fourier = vec![Complex64::new(0.0, 0.0); n_lat * l_max];
        let mut buf = vec![Complex64::new(0.0, 0.0); n_lon];
        for j in 0..n_lat {
            let ring = &values[g.index(j, 0)..g.index(j, 0) + n_lon];
            let out = &mut fourier[j * l_max..(j + 1) * l_max];
            self.analyze_ring(ring, &mut buf, out);
            let w = g.lat_weights()[j] * dphi;
            for o in out.iter_mut() {
                *o *= w;
            }
        }

        // Latitude stage, one order at a time.
        let mut out = SpectralCoeffs::zeros(l_max);
        let mut pmm = vec![1.0 / (4.0 * PI).sqrt(); n_lat];
        let mut acc = vec![Complex64::new(0.0, 0.0); l_max];
        for m in 0..l_max {
            if m > 0 {
                for (p, &s) in pmm.iter_mut().zip(&self.sin_theta) {
                    *p = self.rec.next_sectoral(m, *p, s);
                }
            }
            acc[m..].fill(Complex64::new(0.0, 0.0));
            for j in 0..n_lat {
                let fm = fourier[j * l_max + m];
                if fm == Complex64::new(0.0, 0.0) || pmm[j] == 0.0 {
                    continue;
                }
                self.rec.column(m, self.cos_theta[j], pmm[j], |l, p| {
                    acc[l] += fm * p;
                });
            }
            for l in m..l_max {
                out.coeffs[tri_index(l, m)] = acc[l];
            }
        }
        Ok(out)
    }

    pub fn forward(&self, f: &Field) -> Result<SpectralCoeffs> {
        if !Arc::ptr_eq(f.grid(), &self.grid) && **f.grid() != *self.grid {
            return Err(ShotError::GridMismatch);
        }
        self.forward_values(f.values())
    }

    /// Inverse transform into raw samples on this plan's grid.
    pub fn inverse_values(&self, c: &SpectralCoeffs) -> Result<Vec<f64>> {
        let g = &self.grid;
        let lc = c.band_limit();
        if lc > g.band_limit() {
            return Err(ShotError::BandLimitMismatch {
                found: lc,
                allowed: g.band_limit(),
            });
        }
        let n_lon = g.n_lon();
        let n_lat = g.n_lat();
        let mut values = vec![0.0; g.len()];
        if lc == 0 {
            return Ok(values);
        }

        // Legendre synthesis: g_m(θ_j) for every ring, row j.
        let mut sums = vec![Complex64::new(0.0, 0.0); n_lat * lc];
        let mut pmm = vec![1.0 / (4.0 * PI).sqrt(); n_lat];
        for m in 0..lc {
            if m > 0 {
                for (p, &s) in pmm.iter_mut().zip(&self.sin_theta) {
                    *p = self.rec.next_sectoral(m, *p, s);
                }
            }
            for j in 0..n_lat {
                if pmm[j] == 0.0 {
                    continue;
                }
                let mut s = Complex64::new(0.0, 0.0);
                self.rec.column(m, self.cos_theta[j], pmm[j], |l, p| {
                    if l < lc {
                        s += c.coeffs[tri_index(l, m)] * p;
                    }
                });
                sums[j * lc + m] = s;
            }
        }

        let mut buf = vec![Complex64::new(0.0, 0.0); n_lon];
        for j in 0..n_lat {
            let ring = &mut values[j * n_lon..(j + 1) * n_lon];
            self.synthesize_ring(&sums[j * lc..(j + 1) * lc], &mut buf, ring);
        }
        Ok(values)
    }

    pub fn inverse(&self, c: &SpectralCoeffs) -> Result<Field> {
        let values = self.inverse_values(c)?;
        Field::new(self.grid.clone(), values)
    }
}

/// Forward transform of `f` on its own grid.
pub fn forward(f: &Field) -> Result<SpectralCoeffs> {
    ShtPlan::new(f.grid().clone()).forward_values(f.values())
}

/// Synthesizes the real field with coefficients `c` on grid `g`.
pub fn inverse(c: &SpectralCoeffs, g: &Arc<Grid>) -> Result<Field> {
    ShtPlan::new(g.clone()).inverse(c)
}
