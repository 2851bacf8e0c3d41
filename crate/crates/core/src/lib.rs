//! Finite-element solver for an obstacle-type elliptic variational
//! inequality with mixed Dirichlet/Neumann boundary conditions, the discrete
//! distributed optimal control problem built on it, and experiments that
//! measure mesh-refinement behaviour of both.
//!
//! Layers, bottom up: [`mesh`] (structured triangulations), [`fem`] (P1
//! assembly and norms), [`vi`] (obstacle solvers), [`control`] (cost,
//! adjoint gradient, optimizer) and [`harness`] (convergence studies and
//! randomized checks).

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod control;
pub mod error;
pub mod fem;
pub mod field;
pub mod harness;
pub mod linalg;
pub mod mesh;
pub mod presets;
pub mod vi;

pub use control::{ControlProblem, CostParams, CostReport, OptimizerOptions, OptimizerResult};
pub use error::{Error, Result};
pub use fem::{DofMap, FemSpace};
pub use field::{ControlField, NodalField, StateField};
pub use linalg::SparseSymOperator;
pub use mesh::{BoundaryTag, Mesh, Rect, Side};
pub use presets::ScalarFn;
pub use vi::{ObstacleProblem, PdasOptions, PsorOptions, VISolution, VISolver};
