//! Fully normalized associated Legendre functions.
//!
//! `P̃_ℓ^m(x) = N_ℓm P_ℓ^m(x)` with `N_ℓm = sqrt((2ℓ+1)/(4π) · (ℓ−m)!/(ℓ+m)!)`
//! and the Condon–Shortley phase folded into `P_ℓ^m`, so that
//! `Y_ℓm(θ, φ) = P̃_ℓ^m(cos θ) e^{imφ}`.
//!
//! Values come from the two-term recurrence in `ℓ` at fixed `m`, seeded by
//! the sectoral values `P̃_m^m`. Nothing is tabulated beyond the O(L²)
//! recurrence coefficients.

use std::f64::consts::PI;

/// Flat index of `(ℓ, m)` in an ℓ-major triangular table, `0 ≤ m ≤ ℓ`.
#[inline]
pub fn tri_index(l: usize, m: usize) -> usize {
    l * (l + 1) / 2 + m
}

/// Number of entries in a triangular table of band limit `band_limit`.
#[inline]
pub fn tri_len(band_limit: usize) -> usize {
    band_limit * (band_limit + 1) / 2
}

/// Recurrence coefficients for degrees `ℓ < band_limit`.
#[derive(Debug, Clone)]
pub struct LegendreRecurrence {
    band_limit: usize,
    /// `−sqrt((2m+1)/(2m))`, taking `P̃_{m−1}^{m−1}` to `P̃_m^m` (times sin θ).
    sectoral: Vec<f64>,
    /// `sqrt(2m+3)`, taking `P̃_m^m` to `P̃_{m+1}^m` (times cos θ).
    first: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl LegendreRecurrence {
    pub fn new(band_limit: usize) -> Self {
        let mut sectoral = vec![0.0; band_limit.max(1)];
        let mut first = vec![0.0; band_limit.max(1)];
        for m in 0..band_limit {
            let mf = m as f64;
            if m > 0 {
                sectoral[m] = -((2.0 * mf + 1.0) / (2.0 * mf)).sqrt();
            }
            first[m] = (2.0 * mf + 3.0).sqrt();
        }
        let mut a = vec![0.0; tri_len(band_limit)];
        let mut b = vec![0.0; tri_len(band_limit)];
        for l in 2..band_limit {
            let lf = l as f64;
            for m in 0..l - 1 {
                let mf = m as f64;
                let k = tri_index(l, m);
                a[k] = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
                let l1 = lf - 1.0;
                b[k] = ((l1 * l1 - mf * mf) / (4.0 * l1 * l1 - 1.0)).sqrt();
            }
        }
        Self {
            band_limit,
            sectoral,
            first,
            a,
            b,
        }
    }

    pub fn band_limit(&self) -> usize {
        self.band_limit
    }

    /// `P̃_m^m` from `P̃_{m−1}^{m−1}` at a point with sine `s`.
    #[inline]
    pub fn next_sectoral(&self, m: usize, prev: f64, s: f64) -> f64 {
        self.sectoral[m] * s * prev
    }

    /// Calls `emit(ℓ, P̃_ℓ^m(x))` for `ℓ = m .. band_limit` in order, given
    /// the sectoral value `pmm = P̃_m^m`.
    #[inline]
    pub fn column(&self, m: usize, x: f64, pmm: f64, mut emit: impl FnMut(usize, f64)) {
        let lmax = self.band_limit;
        if m >= lmax {
            return;
        }
        emit(m, pmm);
        if m + 1 >= lmax {
            return;
        }
        let mut p2 = pmm;
        let mut p1 = self.first[m] * x * pmm;
        emit(m + 1, p1);
        for l in m + 2..lmax {
            let k = tri_index(l, m);
            let p = self.a[k] * (x * p1 - self.b[k] * p2);
            emit(l, p);
            p2 = p1;
            p1 = p;
        }
    }
}

/// `P̃_ℓ^m(x)` for a single argument, `0 ≤ m ≤ ℓ`, `x ∈ [−1, 1]`.
pub fn normalized_legendre(l: usize, m: usize, x: f64) -> f64 {
    assert!(m <= l, "order {m} exceeds degree {l}");
    let s = ((1.0 - x) * (1.0 + x)).max(0.0).sqrt();
    normalized_legendre_sc(l, m, x, s)
}

/// Same as [`normalized_legendre`], with `x = cos θ` and `s = sin θ` given
/// separately so that pole-adjacent points keep full relative accuracy.
pub fn normalized_legendre_sc(l: usize, m: usize, x: f64, s: f64) -> f64 {
    let rec = LegendreRecurrence::new(l + 1);
    let mut pmm = 1.0 / (4.0 * PI).sqrt();
    for mm in 1..=m {
        pmm = rec.next_sectoral(mm, pmm, s);
    }
    let mut out = 0.0;
    rec.column(m, x, pmm, |ll, p| {
        if ll == l {
            out = p;
        }
    });
    out
}
