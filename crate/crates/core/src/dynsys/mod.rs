//! Snapshot generators: the exact viscous Burgers solution over a `(t, nu)` grid and
//! an ETDRK4 pseudo-spectral integrator for the Kuramoto–Sivashinsky equation.

mod burgers;
mod field;
mod ks;
mod snapshot;

pub use burgers::{
    burgers_exact, burgers_snapshots, param_grid, uniform_grid, BurgersSampling, ParamPoint,
    NU_RANGE, T_RANGE,
};
pub use field::FieldGrid;
pub use ks::{
    contour_weights, etdrk4_coefficients, ks_generate, ks_generate_from, ks_initial_condition,
    ks_rk4_reference, EtdCoefficients, KsConfig, KsSolver, CONTOUR_POINTS,
};
pub use snapshot::{read_snapshots, write_snapshots, SnapshotMatrix};
