//! Optimal control of a bilinear-controlled chemotaxis-consumption system.
//!
//! ```text
//! u_t - lap(u) = -div(u grad v)
//! v_t - lap(v) = -u^s v + f v 1_{control}
//! ```
//!
//! on a box with no-flux boundaries. The crate provides
//!
//! * [`grid`]: cell-centered fields, Neumann operators and discrete norms,
//! * [`forward`]: a positivity-preserving IMEX integrator plus energy and
//!   regularity diagnostics,
//! * [`tangent_adjoint`]: the exact tangent of the discrete scheme and its
//!   transpose (the discrete adjoint),
//! * [`cost`]: the tracking cost, its gradient and the admissible set,
//! * [`optimize`]: projected gradient descent on the reduced cost,
//! * [`io`]: field dumps and CSV reports.

pub mod cost;
pub mod error;
pub mod forward;
pub mod grid;
pub mod io;
pub mod linsolve;
pub mod optimize;
pub mod tangent_adjoint;

pub use cost::{ControlConstraints, CostSpec};
pub use error::{Error, Result};
pub use forward::{ControlField, DiagnosticsReport, ModelParams, TimeGrid, Trajectory};
pub use grid::{Grid, ScalarField, SubdomainMask, VectorField};
pub use linsolve::CgOptions;
pub use optimize::{OptimizationReport, OptimizeOptions, StopReason};
pub use tangent_adjoint::{AdjointPair, LinearCoefficients, LinearSolution};
