//! Interpolation and extrapolation of probability measures by cubic splines
//! and geodesics in Wasserstein space.
//!
//! Three solver families share the types in [`grid`] and [`cloud`]:
//!
//! * [`mm_sinkhorn`]: entropic multimarginal transport on 1D/2D grids with
//!   chain-structured acceleration or speed costs.
//! * [`phase_ot`]: two-marginal entropic transport between weighted clouds
//!   in position/velocity space under the Hermite cost.
//! * [`semidiscrete`]: particle trajectories optimized against quantized
//!   target densities.
//!
//! Closed-form spline energies live in [`splines`].

pub mod assignment;
pub mod cloud;
pub mod error;
pub mod grid;
pub mod io;
pub mod lbfgs;
pub mod mm_sinkhorn;
pub mod phase_ot;
pub mod semidiscrete;
pub mod splines;

pub use cloud::{quantize_density, PhasePoint, WeightedPhaseCloud};
pub use error::{Error, Result};
pub use grid::{quartile_level, DensityGrid, GaussianComponent, GaussianMixture, Grid, TimeGrid};
pub use mm_sinkhorn::{
    build_chain_kernel, sinkhorn_solve, ChainKernel, Constraint, CostKind, PotentialSet, SolveOptions, SolveReport,
};
pub use splines::{
    discrete_acceleration_cost, discrete_speed_cost, eval_path, extrapolation_cost, fit_cubic_interpolant,
    hermite_energy, scaled_segment_energy, spline_cost, CubicPath,
};
