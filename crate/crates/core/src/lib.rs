//! Conformal prediction regions for multi-dimensional time series with
//! minimal average radius.
//!
//! The pipeline splits a calibration set of residual trajectories in two.
//! The first half determines per-time radii `r_t` by exactly solving a
//! subset-selection problem (smallest `Σ r_t` covering the required number
//! of trajectories); the second half calibrates a scalar inflation so that
//! the final regions `{y : ||y - ŷ_t|| <= inflation + r_t}` hold all `T`
//! steps jointly with probability at least `1 - ε`.

pub mod calibration;
pub mod cli;
pub mod dataio;
pub mod evaluation;
pub mod norms;
pub mod selector;
