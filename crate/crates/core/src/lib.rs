//! Safety-embedded control synthesis via barrier states.
//!
//! The pipeline implemented here turns a constrained stabilization problem
//! into an unconstrained one:
//!
//! 1. [`barriers`] catalogs barrier functions `B(η)` together with the
//!    auxiliary maps `φ0 = B′∘B⁻¹` and `φ1` that make the barrier-state
//!    dynamics smooth and stabilizable.
//! 2. [`embedding`] appends barrier states `z` to a control-affine plant
//!    `ẋ = f(x) + g(x)u`, producing the safety-embedded model
//!    `ẋ̄ = f̄(x̄) + ḡ(x̄)u` whose origin is an equilibrium.
//! 3. [`linear_synthesis`] and [`hjb_series`] stabilize the embedded model:
//!    pole placement and LQR on its linearization, or a polynomial feedback
//!    from a power-series solution of the Hamilton-Jacobi-Bellman equation.
//! 4. [`simulation`] integrates the closed loop and checks that asymptotic
//!    stability of the embedded origin indeed produced safe trajectories
//!    (`h_i(x(t)) > 0` throughout) of the original plant.
//!
//! All numerical kernels are generic over the scalar type through the
//! [`Scalar`] trait (`f32` or `f64`); the scenario layer and CLI work in
//! `f64` via the type aliases at the crate root.

pub mod analytic;
pub mod barriers;
pub mod embedding;
pub mod hjb_series;
pub mod linear_synthesis;
pub mod scenarios;
pub mod simulation;

use num_traits::{FromPrimitive, ToPrimitive};

/// Scalar abstraction for every numerical kernel in this crate.
///
/// `nalgebra::RealField` supplies the transcendental functions and linear
/// algebra support; `FromPrimitive`/`ToPrimitive` let generic code absorb
/// `f64` constants (tolerances, table coefficients) and report values in
/// diagnostics without macros.
pub trait Scalar: nalgebra::RealField + FromPrimitive + ToPrimitive + Copy {
    /// Converts an `f64` constant into `Self`.
    fn lit(value: f64) -> Self {
        Self::from_f64(value).expect("finite f64 constant must be representable")
    }

    /// Widens to `f64` (NaN if the value has no finite image).
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

pub use analytic::{ControlAffineSystem, Expr, FieldTaylor, Jet, MultiIndex, PolyMap};
pub use barriers::{BarrierKind, BarrierSpec};
pub use embedding::{BasBlock, BasMode, EmbeddedSystem};
pub use hjb_series::{CostSpec, PolyController, ValueSeries};
pub use linear_synthesis::{FeedbackGain, LinearizedEmbedded, StaircaseDecomposition};
pub use scenarios::Scenario;
pub use simulation::{SafetyReport, SimEvent, Trajectory};

/// `f64` instantiations used by the scenario layer and the CLI.
pub type PolyMap64 = PolyMap<f64>;
pub type Expr64 = Expr<f64>;
pub type System64 = ControlAffineSystem<f64>;
pub type Embedded64 = EmbeddedSystem<f64>;
pub type Gain64 = FeedbackGain<f64>;
pub type Controller64 = PolyController<f64>;
pub type Trajectory64 = Trajectory<f64>;
