//! Entropic optimal transport between nonnegative fields on the 2-sphere,
//! with heat-kernel convolutions evaluated in the spherical-harmonic domain.

pub mod dense;
pub mod error;
pub mod grid;
pub mod heat;
pub mod io;
pub mod legendre;
pub mod reference;
pub mod sht;
pub mod sinkhorn;

pub use dense::{dense_allocations, DenseMatrix, DENSE_GUARD};
pub use error::{Result, ShotError};
pub use grid::{build_grid, cost_matrix, geodesic_distance, Grid, SpherePoint};
pub use sht::{eval_harmonic, forward, inverse, Field, ShtPlan, SpectralCoeffs};
pub use heat::{
    heat_conv, heat_multipliers, materialize_heat_kernel, time_eps_cost, HeatMultipliers,
    HeatOperator, NegativityPolicy,
};
pub use sinkhorn::{
    default_bands, divergence, divergence_gradient, marginal_error, regional_rms, solve,
    DivergenceReport, GradientReport, LatBand, SinkhornParams, SinkhornSolution,
};
pub use reference::{
    conv_comparison, dense_geodesic_sinkhorn, dense_sinkhorn, gibbs_matrix_conv, primal_objective, ConvComparison,
    DensePlan, EntropyReference,
};
