//! Periodic and conormal orbits of magnetic Lagrangian flows on surfaces:
//! discrete free-time action, truncated action flows, minimax sweeps and critical values.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod critical;
pub mod descent;
pub mod dynamics;
pub mod error;
pub mod fields;
pub mod linalg;
pub mod paths;
pub mod presets;

pub mod surface;

pub use dynamics::{LagrangianModel, OrbitCertificate, QuadraticBounds};
pub use error::{MagflowError, Result};
pub use paths::{BoundarySpec, CovectorField, DiscretePath, PathMetric, PathTangent, Submanifold};
pub use surface::{ChartPoint, HomotopyClass, SurfaceModel};
