//! Analytic machinery: expression trees, truncated multivariate Taylor
//! series (jets), and the control-affine system representation.
//!
//! Dynamics, input maps and constraint functions are small closed
//! expression trees ([`Expr`]) interpreted two ways: pointwise over the
//! scalar type, and over [`PolyMap`] jets to extract exact derivatives of
//! any order about the origin. Simulation only ever needs the pointwise
//! interpretation; synthesis only ever expands about the equilibrium.

mod expr;
mod jet;
mod poly;
mod system;

pub use expr::{Expr, ExprError};
pub use jet::{jet_compose, Jet, JetError, JetOp};
pub use poly::{monomials_of_degree, MultiIndex, PolyMap};
pub use system::{ControlAffineSystem, FieldTaylor, SystemError};
