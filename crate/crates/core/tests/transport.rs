use std::sync::Arc;

use shot_core::io::{point_from_degrees, vmf_field};
use shot_core::reference::{equatorial_node, gibbs_mass_at};
use shot_core::{
    build_grid, dense_geodesic_sinkhorn, divergence, solve, Field, Grid, SinkhornParams,
};

fn grid(l: usize) -> Arc<Grid> {
    Arc::new(build_grid(l).unwrap())
}

fn bump(g: &Arc<Grid>, kappa: f64, lat: f64, lon: f64, background: f64) -> Field {
    vmf_field(g.clone(), kappa, &point_from_degrees(lat, lon), background).unwrap()
}

#[test]
fn distinct_bumps_have_positive_divergence() {
    let g = grid(48);
    let p = bump(&g, 5.0, 30.0, 0.0, 0.05);
    let q = bump(&g, 5.0, -30.0, 0.0, 0.05);
    let mut params = SinkhornParams::balanced(0.1);
    params.tol = 1e-5;
    params.max_iter = 3000;
    let r = divergence(&p, &q, &params).unwrap();
    assert!(r.converged(), "{r:?}");
    assert_eq!(r.clamped_entries, 0);
    assert!(r.value > 0.1, "{}", r.value);
}

/// Two bumps well inside the resolvable regime. The heat kernel has unit
/// mass while e^{-d²/ε} has mass C(ε); rescaling a balanced kernel by c
/// shifts the dual cost by -ε·m·log c, so the spectral cost is compared
/// after that shift.
#[test]
fn spectral_cost_near_dense_geodesic_cost() {
    let g = grid(32);
    let p = bump(&g, 10.0, 55.6, 0.0, 0.05);
    let q = bump(&g, 10.0, -13.1, 0.0, 0.05);
    let mut params = SinkhornParams::balanced(0.5);
    params.tol = 1e-10;
    params.max_iter = 5000;
    let spectral = solve(&p, &q, &params).unwrap();
    let dense = dense_geodesic_sinkhorn(&p, &q, &params).unwrap();
    assert!(spectral.converged && dense.converged);
    let c_eps = gibbs_mass_at(&g, 0.5, equatorial_node(&g));
    let shifted = spectral.cost - 0.5 * p.mass() * c_eps.ln();
    let rel = (shifted - dense.cost).abs() / dense.cost.abs();
    assert!(rel < 0.1, "spectral {shifted} dense {} rel {rel}", dense.cost);
}

/// Antipodal κ = 50 bumps at ε = 0.1, L = 32. The far-field Gibbs weights
/// (about e^{-98}) sit far below the transform's rounding error, so the heat
/// convolution of the scalings turns negative and the iteration cannot
/// converge in double precision.
#[test]
#[ignore = "not attainable in f64: far-field kernel values fall below transform roundoff"]
fn antipodal_concentrated_bumps_match_dense() {
    let g = grid(32);
    let p = bump(&g, 50.0, 90.0, 0.0, 0.0);
    let q = bump(&g, 50.0, -90.0, 0.0, 0.0);
    let mut params = SinkhornParams::balanced(0.1);
    params.max_iter = 5000;
    let spectral = solve(&p, &q, &params).unwrap();
    let dense = dense_geodesic_sinkhorn(&p, &q, &params).unwrap();
    let rel = (spectral.cost - dense.cost).abs() / dense.cost.abs();
    assert!(spectral.converged && rel < 0.1, "rel {rel}");
}
