//! File formats, run configuration and seeded synthetic fields.
//!
//! Field and coefficient files are a one-line JSON header, a single `\n`,
//! then raw little-endian `f64` values. Field payloads are latitude-major;
//! coefficient payloads are `(re, im)` pairs in ℓ-major triangular order.

use std::io::{Read, Write};
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Result, ShotError};
use crate::grid::{build_grid, Grid, SpherePoint};
use crate::heat::NegativityPolicy;
use crate::legendre::tri_len;
use crate::sht::{Field, SpectralCoeffs};
use crate::sinkhorn::SinkhornParams;

pub const FIELD_FORMAT: &str = "shot-field/1";
pub const COEFF_FORMAT: &str = "shot-coeffs/1";
pub const GRID_NAME: &str = "clenshaw-curtis";
pub const DTYPE: &str = "f64le";
pub const FIELD_LAYOUT: &str = "lat-major";
pub const COEFF_LAYOUT: &str = "lm-triangular";

/// Longest header accepted before the newline.
const MAX_HEADER_BYTES: usize = 1 << 16;

/// Pole rings read from disk must be constant in longitude to this tolerance.
pub const POLE_RING_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileHeader {
    pub format: String,
    pub grid: String,
    pub band_limit: usize,
    pub n_lat: usize,
    pub n_lon: usize,
    pub dtype: String,
    pub layout: String,
    /// Operation parameters echoed by commands that transform a field.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub applied: Option<serde_json::Value>,
}

impl FileHeader {
    fn new(format: &str, layout: &str, g: &Grid) -> Self {
        Self {
            format: format.into(),
            grid: GRID_NAME.into(),
            band_limit: g.band_limit(),
            n_lat: g.n_lat(),
            n_lon: g.n_lon(),
            dtype: DTYPE.into(),
            layout: layout.into(),
            applied: None,
        }
    }

    pub fn for_field(g: &Grid) -> Self {
        Self::new(FIELD_FORMAT, FIELD_LAYOUT, g)
    }

    pub fn for_coeffs(g: &Grid) -> Self {
        Self::new(COEFF_FORMAT, COEFF_LAYOUT, g)
    }

    pub fn with_applied(mut self, applied: serde_json::Value) -> Self {
        self.applied = Some(applied);
        self
    }

    /// Checks the fixed keys and rebuilds the grid they describe.
    fn grid_for(&self, format: &str, layout: &str) -> Result<Arc<Grid>> {
        let bad = |msg: String| Err(ShotError::BadHeader(msg));
        if self.format != format {
            return bad(format!("format {:?}, expected {format:?}", self.format));
        }
        if self.grid != GRID_NAME {
            return bad(format!("grid {:?}, expected {GRID_NAME:?}", self.grid));
        }
        if self.dtype != DTYPE {
            return bad(format!("dtype {:?}, expected {DTYPE:?}", self.dtype));
        }
        if self.layout != layout {
            return bad(format!("layout {:?}, expected {layout:?}", self.layout));
        }
        let g = build_grid(self.band_limit).map_err(|e| ShotError::BadHeader(e.to_string()))?;
        if (self.n_lat, self.n_lon) != (g.n_lat(), g.n_lon()) {
            return bad(format!(
                "n_lat = {}, n_lon = {} do not match band limit {} ({} x {})",
                self.n_lat,
                self.n_lon,
                self.band_limit,
                g.n_lat(),
                g.n_lon()
            ));
        }
        Ok(Arc::new(g))
    }
}

fn write_header(w: &mut impl Write, h: &FileHeader) -> Result<()> {
    let json = serde_json::to_string(h).map_err(|e| ShotError::BadHeader(e.to_string()))?;
    w.write_all(json.as_bytes())?;
    w.write_all(b"\n")?;
    Ok(())
}

fn read_header(r: &mut impl Read) -> Result<FileHeader> {
    let mut buf = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        match r.read(&mut byte)? {
            0 => return Err(ShotError::BadHeader("no newline after header".into())),
            _ if byte[0] == b'\n' => break,
            _ => buf.push(byte[0]),
        }
        if buf.len() > MAX_HEADER_BYTES {
            return Err(ShotError::BadHeader("header too long".into()));
        }
    }
    serde_json::from_slice(&buf).map_err(|e| ShotError::BadHeader(e.to_string()))
}

fn write_f64s(w: &mut impl Write, values: impl Iterator<Item = f64>) -> Result<()> {
    let bytes: Vec<u8> = values.flat_map(f64::to_le_bytes).collect();
    w.write_all(&bytes)?;
    Ok(())
}

fn read_f64s(r: &mut impl Read, count: usize) -> Result<Vec<f64>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != 8 * count {
        return Err(ShotError::BadPayload(format!(
            "payload has {} bytes, expected {}",
            bytes.len(),
            8 * count
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

pub fn write_field(w: &mut impl Write, f: &Field, header: &FileHeader) -> Result<()> {
    write_header(w, header)?;
    write_f64s(w, f.values().iter().copied())
}

/// Reads a field file; the payload must be finite with constant pole rings.
pub fn read_field(r: &mut impl Read) -> Result<(Field, FileHeader)> {
    let header = read_header(r)?;
    let g = header.grid_for(FIELD_FORMAT, FIELD_LAYOUT)?;
    let values = read_f64s(r, g.len())?;
    let f = Field::new(g, values).map_err(|e| ShotError::BadPayload(e.to_string()))?;
    f.check_pole_rings(POLE_RING_TOLERANCE)
        .map_err(|e| ShotError::BadPayload(e.to_string()))?;
    Ok((f, header))
}

pub fn write_coeffs(w: &mut impl Write, c: &SpectralCoeffs) -> Result<()> {
    let g = build_grid(c.band_limit())?;
    write_header(w, &FileHeader::for_coeffs(&g))?;
    write_f64s(w, c.as_slice().iter().flat_map(|z| [z.re, z.im]))
}

pub fn read_coeffs(r: &mut impl Read) -> Result<(SpectralCoeffs, FileHeader)> {
    let header = read_header(r)?;
    let g = header.grid_for(COEFF_FORMAT, COEFF_LAYOUT)?;
    let values = read_f64s(r, 2 * tri_len(g.band_limit()))?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(ShotError::BadPayload("non-finite coefficient".into()));
    }
    let coeffs = values
        .chunks_exact(2)
        .map(|c| Complex64::new(c[0], c[1]))
        .collect();
    Ok((SpectralCoeffs::from_vec(g.band_limit(), coeffs)?, header))
}

/// Field file contents as bytes.
pub fn field_to_bytes(f: &Field, header: &FileHeader) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    write_field(&mut out, f, header)?;
    Ok(out)
}

/// Plain-text export, one node per line with 17 significant digits. Lossy
/// in principle and meant for inspection only.
pub fn write_field_csv(w: &mut impl Write, f: &Field) -> Result<()> {
    let g = f.grid();
    writeln!(w, "lat_deg,lon_deg,value")?;
    for (i, v) in f.values().iter().enumerate() {
        writeln!(
            w,
            "{:.16e},{:.16e},{:.16e}",
            g.latitude_deg(i),
            g.longitude_deg(i),
            v
        )?;
    }
    Ok(())
}

fn serialize_tau<S: Serializer>(tau: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if *tau == f64::INFINITY {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*tau)
    }
}

fn deserialize_tau<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Tau {
        Num(f64),
        Str(String),
    }
    match Tau::deserialize(d)? {
        Tau::Num(x) => Ok(x),
        Tau::Str(s) if s == "inf" => Ok(f64::INFINITY),
        Tau::Str(s) => Err(serde::de::Error::custom(format!(
            "tau must be a number or \"inf\", got {s:?}"
        ))),
    }
}

/// Parses a τ given on the command line: a number or `inf`.
pub fn parse_tau(s: &str) -> Result<f64> {
    if s == "inf" {
        return Ok(f64::INFINITY);
    }
    s.parse::<f64>()
        .ok()
        .filter(|t| t.is_finite())
        .ok_or_else(|| ShotError::Parameter(format!("tau must be a number or inf, got {s:?}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub eps: f64,
    #[serde(serialize_with = "serialize_tau", deserialize_with = "deserialize_tau")]
    pub tau: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub check_every: usize,
    pub band_limit: Option<usize>,
    pub strict_negativity: bool,
    pub unsafe_eps: bool,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = SinkhornParams::new(0.1, f64::INFINITY);
        Self {
            eps: p.eps,
            tau: p.tau,
            max_iter: p.max_iter,
            tol: p.tol,
            check_every: p.check_every,
            band_limit: None,
            strict_negativity: false,
            unsafe_eps: false,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| ShotError::Parameter(format!("config: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn params(&self) -> Result<SinkhornParams> {
        let p = SinkhornParams {
            eps: self.eps,
            tau: self.tau,
            max_iter: self.max_iter,
            tol: self.tol,
            check_every: self.check_every,
            negativity: if self.strict_negativity {
                NegativityPolicy::Strict
            } else {
                NegativityPolicy::Clamp
            },
            unsafe_eps: self.unsafe_eps,
            mass_centering: true,
        };
        p.validate()?;
        Ok(p)
    }
}

/// Scales `values` so that `Σ a_i f_i = 1`.
fn unit_mass(g: Arc<Grid>, mut values: Vec<f64>) -> Result<Field> {
    let m = g.integrate(&values);
    if !(m > 0.0) {
        return Err(ShotError::Data(format!("cannot normalize a field of mass {m}")));
    }
    values.iter_mut().for_each(|v| *v /= m);
    Field::new(g, values)
}

/// Uniform random density normalized to unit mass. Each pole ring takes a
/// single draw so the field is a valid sample of a continuous function.
pub fn uniform_random_field(g: Arc<Grid>, seed: u64) -> Result<Field> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_lon = g.n_lon();
    let mut values = Vec::with_capacity(g.len());
    for j in 0..g.n_lat() {
        if g.is_pole_ring(j) {
            let x: f64 = rng.gen();
            values.extend(std::iter::repeat(x).take(n_lon));
        } else {
            values.extend((0..n_lon).map(|_| rng.gen::<f64>()));
        }
    }
    unit_mass(g, values)
}

/// Von Mises–Fisher bump `e^{κ(⟨x, μ⟩ − 1)} + background`, normalized to
/// unit mass.
pub fn vmf_field(g: Arc<Grid>, kappa: f64, mean: &SpherePoint, background: f64) -> Result<Field> {
    if !(kappa >= 0.0) || !kappa.is_finite() {
        return Err(ShotError::Parameter(format!("kappa must be nonnegative, got {kappa}")));
    }
    if !(background >= 0.0) || !background.is_finite() {
        return Err(ShotError::Parameter(format!(
            "background must be nonnegative, got {background}"
        )));
    }
    let n_lon = g.n_lon();
    let mut values = Vec::with_capacity(g.len());
    for j in 0..g.n_lat() {
        if g.is_pole_ring(j) {
            let x = (kappa * (g.point(g.index(j, 0)).dot(mean) - 1.0)).exp() + background;
            values.extend(std::iter::repeat(x).take(n_lon));
        } else {
            for k in 0..n_lon {
                let x = g.point(g.index(j, k));
                values.push((kappa * (x.dot(mean) - 1.0)).exp() + background);
            }
        }
    }
    unit_mass(g, values)
}

/// Point at latitude/longitude given in degrees.
pub fn point_from_degrees(lat: f64, lon: f64) -> SpherePoint {
    SpherePoint::from_angles((90.0 - lat).to_radians(), lon.to_radians())
}
