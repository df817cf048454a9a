//! Barrier-state construction and the safety-embedded model.
//!
//! Given a plant and a set of barrier specs, this module produces the
//! augmented control-affine system
//!
//! ```text
//! ẋ = f(x) + g(x) u
//! ż = f_b(x, z) + g_b(x, z) u
//! ```
//!
//! where each barrier state obeys
//! `ż = φ0(z + β0) ḣ(x) − γ φ1(z + β0, h(x))`, or the fused multi-
//! constraint form with per-constraint rates `γ_i`. With the exact
//! initialization `z(0) = β(x(0)) − β(0)` the barrier state tracks the
//! recentered barrier along every trajectory, so boundedness of `z`
//! certifies the safety condition.
//!
//! The augmented model is materialized as a [`ControlAffineSystem`] over
//! `n + q` variables (expression trees, with `∇h` obtained symbolically),
//! so pointwise evaluation and Taylor expansion apply to it unchanged.

use nalgebra::{DVector, RowDVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytic::{ControlAffineSystem, Expr, SystemError};
use crate::barriers::{bf_value, phi0, phi1, BarrierError, BarrierKind, BarrierSpec};
use crate::Scalar;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("barrier: {0}")]
    Barrier(#[from] BarrierError),
    #[error("state is outside the safe set: h_{index}(x) = {value} is not positive")]
    UnsafeState { index: usize, value: f64 },
    #[error("initial state is outside the safe set: h_{index}(x0) = {value} is not positive")]
    UnsafeInitialState { index: usize, value: f64 },
    #[error("fused barrier states require every spec to share one barrier kind")]
    MixedFusedKinds,
    #[error("barrier spec {spec} references constraint {h_index}, but the system has {num_constraints}")]
    ConstraintOutOfRange {
        spec: usize,
        h_index: usize,
        num_constraints: usize,
    },
    #[error("a barrier block needs at least one spec")]
    Empty,
    #[error("single-mode blocks hold exactly one spec, got {0}")]
    SingleWithManySpecs(usize),
    #[error("embedded model construction failed: {0}")]
    System(#[from] SystemError),
}

/// How constraints map to barrier states.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasMode {
    /// One constraint, one barrier state.
    Single,
    /// All constraints folded into one barrier state through
    /// `β(x) = Σ_i B(h_i(x))` (same kind required, per-constraint rates).
    Fused,
    /// One barrier state per constraint.
    PerConstraint,
}

/// A set of barrier specs plus the fusion mode; produces `q` barrier states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasBlock<T> {
    mode: BasMode,
    specs: Vec<BarrierSpec<T>>,
}

impl<T: Scalar> BasBlock<T> {
    /// Validates the block against the plant it will be attached to and
    /// caches each spec's `β0 = B(h_i(0))`.
    pub fn new(
        mode: BasMode,
        kinds_gammas: &[(BarrierKind, T, usize)],
        sys: &ControlAffineSystem<T>,
    ) -> Result<Self, EmbeddingError> {
        if kinds_gammas.is_empty() {
            return Err(EmbeddingError::Empty);
        }
        if mode == BasMode::Single && kinds_gammas.len() != 1 {
            return Err(EmbeddingError::SingleWithManySpecs(kinds_gammas.len()));
        }
        if mode == BasMode::Fused {
            let k0 = kinds_gammas[0].0;
            if kinds_gammas.iter().any(|(k, _, _)| *k != k0) {
                return Err(EmbeddingError::MixedFusedKinds);
            }
        }
        let origin = DVector::zeros(sys.state_dim());
        let h0 = sys.constraint_values(&origin);
        let mut specs = Vec::with_capacity(kinds_gammas.len());
        for (i, (kind, gamma, h_index)) in kinds_gammas.iter().enumerate() {
            if *h_index >= sys.num_constraints() {
                return Err(EmbeddingError::ConstraintOutOfRange {
                    spec: i,
                    h_index: *h_index,
                    num_constraints: sys.num_constraints(),
                });
            }
            specs.push(BarrierSpec::new(*kind, *h_index, *gamma, h0[*h_index])?);
        }
        Ok(BasBlock { mode, specs })
    }

    /// One spec per constraint of `sys`, in order, with a shared kind.
    pub fn for_all_constraints(
        mode: BasMode,
        kind: BarrierKind,
        gammas: &[T],
        sys: &ControlAffineSystem<T>,
    ) -> Result<Self, EmbeddingError> {
        let triples: Vec<(BarrierKind, T, usize)> = gammas
            .iter()
            .enumerate()
            .map(|(i, g)| (kind, *g, i))
            .collect();
        Self::new(mode, &triples, sys)
    }

    pub fn mode(&self) -> BasMode {
        self.mode
    }

    pub fn specs(&self) -> &[BarrierSpec<T>] {
        &self.specs
    }

    /// Number of barrier states this block produces.
    pub fn z_dim(&self) -> usize {
        match self.mode {
            BasMode::Single | BasMode::Fused => 1,
            BasMode::PerConstraint => self.specs.len(),
        }
    }

    /// `β0` of the (fused) barrier: sum of the per-spec recentering values.
    pub fn fused_beta0(&self) -> T {
        self.specs
            .iter()
            .fold(T::zero(), |acc, s| acc + s.beta0)
    }
}

fn check_safe<T: Scalar>(
    sys: &ControlAffineSystem<T>,
    x: &DVector<T>,
    initial: bool,
) -> Result<DVector<T>, EmbeddingError> {
    let h = sys.constraint_values(x);
    for (i, v) in h.iter().enumerate() {
        if !(*v > T::zero()) {
            let value = v.as_f64();
            return Err(if initial {
                EmbeddingError::UnsafeInitialState { index: i, value }
            } else {
                EmbeddingError::UnsafeState { index: i, value }
            });
        }
    }
    Ok(h)
}

/// Right-hand side of a single barrier state, split into drift and input
/// parts: `ż = fb + gb·u` with
/// `fb = φ0(z+β0) L_f h − γ φ1(z+β0, h(x))`, `gb = φ0(z+β0) L_g h`.
pub fn single_bas_rhs<T: Scalar>(
    spec: &BarrierSpec<T>,
    sys: &ControlAffineSystem<T>,
    x: &DVector<T>,
    z: T,
) -> Result<(T, RowDVector<T>), EmbeddingError> {
    let h = check_safe(sys, x, false)?;
    let (lf, lg) = sys.lie_derivatives(spec.h_index, x);
    let zeta = z + spec.beta0;
    let p0 = phi0(spec.kind, zeta);
    let fb = p0 * lf - spec.gamma * phi1(spec.kind, zeta, h[spec.h_index]);
    Ok((fb, lg * p0))
}

/// Right-hand side of a fused barrier state over all specs of the block:
/// the sum over constraints `i` of the single-BaS form evaluated at
/// `ζ_i = z + β0 − Σ_{j≠i} B(h_j(x))`.
pub fn fused_bas_rhs<T: Scalar>(
    block: &BasBlock<T>,
    sys: &ControlAffineSystem<T>,
    x: &DVector<T>,
    z: T,
) -> Result<(T, RowDVector<T>), EmbeddingError> {
    let h = check_safe(sys, x, false)?;
    let beta0 = block.fused_beta0();
    let b_vals: Vec<T> = block
        .specs()
        .iter()
        .map(|s| bf_value(s.kind, h[s.h_index]))
        .collect::<Result<_, _>>()?;
    let mut fb = T::zero();
    let mut gb = RowDVector::zeros(sys.input_dim());
    for (i, spec) in block.specs().iter().enumerate() {
        let others = b_vals
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .fold(T::zero(), |acc, (_, b)| acc + *b);
        let zeta = z + beta0 - others;
        let (lf, lg) = sys.lie_derivatives(spec.h_index, x);
        let p0 = phi0(spec.kind, zeta);
        fb += p0 * lf - spec.gamma * phi1(spec.kind, zeta, h[spec.h_index]);
        gb += lg * p0;
    }
    Ok((fb, gb))
}

/// Barrier-state right-hand side for any mode, one row per state.
pub fn bas_rhs<T: Scalar>(
    block: &BasBlock<T>,
    sys: &ControlAffineSystem<T>,
    x: &DVector<T>,
    z: &DVector<T>,
) -> Result<(DVector<T>, nalgebra::DMatrix<T>), EmbeddingError> {
    assert_eq!(z.len(), block.z_dim(), "barrier state dimension mismatch");
    let mut fb = DVector::zeros(block.z_dim());
    let mut gb = nalgebra::DMatrix::zeros(block.z_dim(), sys.input_dim());
    match block.mode() {
        BasMode::Single | BasMode::Fused => {
            let (f, g) = fused_bas_rhs(block, sys, x, z[0])?;
            fb[0] = f;
            gb.set_row(0, &g);
        }
        BasMode::PerConstraint => {
            for (l, spec) in block.specs().iter().enumerate() {
                let (f, g) = single_bas_rhs(spec, sys, x, z[l])?;
                fb[l] = f;
                gb.set_row(l, &g);
            }
        }
    }
    Ok((fb, gb))
}

/// Recentered barrier values `β(x) − β(0)`, one per barrier state: the
/// exact initialization `z(0)` and the reference that simulated barrier
/// states are expected to track (Proposition-2 drift).
pub fn bas_reference<T: Scalar>(
    block: &BasBlock<T>,
    sys: &ControlAffineSystem<T>,
    x: &DVector<T>,
) -> Result<DVector<T>, EmbeddingError> {
    let h = check_safe(sys, x, true)?;
    match block.mode() {
        BasMode::Single | BasMode::Fused => {
            let mut beta = T::zero();
            for spec in block.specs() {
                beta += bf_value(spec.kind, h[spec.h_index])?;
            }
            Ok(DVector::from_element(1, beta - block.fused_beta0()))
        }
        BasMode::PerConstraint => {
            let mut z = DVector::zeros(block.specs().len());
            for (l, spec) in block.specs().iter().enumerate() {
                z[l] = bf_value(spec.kind, h[spec.h_index])? - spec.beta0;
            }
            Ok(z)
        }
    }
}

/// Exact barrier-state initialization `z(0) = β(x0) − β(0)`.
pub fn init_bas<T: Scalar>(
    block: &BasBlock<T>,
    sys: &ControlAffineSystem<T>,
    x0: &DVector<T>,
) -> Result<DVector<T>, EmbeddingError> {
    bas_reference(block, sys, x0)
}

// --- expression builders -------------------------------------------------

/// `B(h)` as an expression, for the argument shifts of the fused form.
fn bf_expr<T: Scalar>(kind: BarrierKind, h: Expr<T>) -> Expr<T> {
    match kind {
        BarrierKind::Inverse => h.recip(),
        // log((1+h)/h) = log(1+h) − log(h)
        BarrierKind::Log => (Expr::constant(T::one()) + h.clone()).log() - h.log(),
        BarrierKind::InvHyperbolic => Expr::constant(T::lit(2.0)) * h.atanh_exp_neg(),
    }
}

fn phi0_expr<T: Scalar>(kind: BarrierKind, zeta: Expr<T>) -> Expr<T> {
    match kind {
        BarrierKind::Inverse => -(zeta.clone() * zeta),
        BarrierKind::Log => {
            -(Expr::constant(T::lit(4.0))
                * (Expr::constant(T::lit(0.5)) * zeta).sinh().pow(2))
        }
        BarrierKind::InvHyperbolic => -zeta.sinh(),
    }
}

fn phi1_expr<T: Scalar>(kind: BarrierKind, zeta: Expr<T>, eta: Expr<T>) -> Expr<T> {
    match kind {
        BarrierKind::Inverse => eta * zeta.clone().pow(2) - zeta,
        BarrierKind::Log => {
            let e = zeta.exp() - Expr::constant(T::one());
            eta * e.clone().pow(2) - e
        }
        BarrierKind::InvHyperbolic => {
            (Expr::constant(T::lit(0.5)) * zeta).tanh() - (-eta).exp()
        }
    }
}

/// The safety-embedded model: the base plant, its barrier block, and the
/// materialized `(n+q)`-state control-affine system `ẋ̄ = f̄(x̄) + ḡ(x̄)u`.
#[derive(Clone, Debug)]
pub struct EmbeddedSystem<T> {
    base: ControlAffineSystem<T>,
    bas: BasBlock<T>,
    full: ControlAffineSystem<T>,
}

impl<T: Scalar> EmbeddedSystem<T> {
    pub fn base(&self) -> &ControlAffineSystem<T> {
        &self.base
    }

    pub fn bas(&self) -> &BasBlock<T> {
        &self.bas
    }

    /// The augmented system itself; every `analytic` operation applies.
    pub fn full(&self) -> &ControlAffineSystem<T> {
        &self.full
    }

    pub fn base_dim(&self) -> usize {
        self.base.state_dim()
    }

    pub fn z_dim(&self) -> usize {
        self.bas.z_dim()
    }

    pub fn state_dim(&self) -> usize {
        self.full.state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.full.input_dim()
    }

    /// Splits an embedded state into `(x, z)`.
    pub fn split_state(&self, xbar: &DVector<T>) -> (DVector<T>, DVector<T>) {
        let n = self.base_dim();
        (
            DVector::from_column_slice(&xbar.as_slice()[..n]),
            DVector::from_column_slice(&xbar.as_slice()[n..]),
        )
    }

    /// Embeds a base initial state with the exact barrier initialization.
    pub fn embed_state(&self, x0: &DVector<T>) -> Result<DVector<T>, EmbeddingError> {
        let z0 = init_bas(&self.bas, &self.base, x0)?;
        let mut out = DVector::zeros(self.state_dim());
        out.rows_mut(0, self.base_dim()).copy_from(x0);
        out.rows_mut(self.base_dim(), self.z_dim()).copy_from(&z0);
        Ok(out)
    }
}

/// Builds the safety-embedded model (the augmentation of `sys` by the
/// barrier states of `block`).
///
/// The barrier-state drift and input rows are assembled symbolically:
/// `ḣ_i` is expanded through `∇h_i` (symbolic differentiation), `ζ`
/// arguments become expressions in `z` and the other constraints' barrier
/// values. The resulting system passes the usual construction checks, in
/// particular `f̄(0) = 0`.
pub fn augment<T: Scalar>(
    sys: &ControlAffineSystem<T>,
    block: &BasBlock<T>,
) -> Result<EmbeddedSystem<T>, EmbeddingError> {
    let n = sys.state_dim();
    let m = sys.input_dim();
    let q = block.z_dim();
    let nv = n + q;

    // base f, g, h reference variables 0..n and lift unchanged
    let mut f_full: Vec<Expr<T>> = sys.drift().to_vec();
    let mut g_full: Vec<Vec<Expr<T>>> = sys.input_map().to_vec();

    // per-constraint pieces shared by all modes
    let lf_h = |idx: usize| -> Expr<T> {
        (0..n)
            .map(|k| sys.constraints()[idx].diff(k) * sys.drift()[k].clone())
            .fold(Expr::constant(T::zero()), |acc, e| acc + e)
    };
    let lg_h = |idx: usize, j: usize| -> Expr<T> {
        (0..n)
            .map(|k| sys.constraints()[idx].diff(k) * sys.input_map()[k][j].clone())
            .fold(Expr::constant(T::zero()), |acc, e| acc + e)
    };

    match block.mode() {
        BasMode::Single | BasMode::Fused => {
            let z = Expr::var(n);
            let beta0 = block.fused_beta0();
            let b_exprs: Vec<Expr<T>> = block
                .specs()
                .iter()
                .map(|s| bf_expr(s.kind, sys.constraints()[s.h_index].clone()))
                .collect();
            let mut fb = Expr::constant(T::zero());
            let mut gb: Vec<Expr<T>> = vec![Expr::constant(T::zero()); m];
            for (i, spec) in block.specs().iter().enumerate() {
                let others = b_exprs
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .fold(Expr::constant(T::zero()), |acc, (_, b)| acc + b.clone());
                let zeta = z.clone() + Expr::constant(beta0) - others;
                let p0 = phi0_expr(spec.kind, zeta.clone());
                fb = fb + p0.clone() * lf_h(spec.h_index)
                    - Expr::constant(spec.gamma)
                        * phi1_expr(spec.kind, zeta, sys.constraints()[spec.h_index].clone());
                for (j, gbj) in gb.iter_mut().enumerate() {
                    *gbj = gbj.clone() + p0.clone() * lg_h(spec.h_index, j);
                }
            }
            f_full.push(fb);
            g_full.push(gb);
        }
        BasMode::PerConstraint => {
            for (l, spec) in block.specs().iter().enumerate() {
                let zeta = Expr::var(n + l) + Expr::constant(spec.beta0);
                let p0 = phi0_expr(spec.kind, zeta.clone());
                let fb = p0.clone() * lf_h(spec.h_index)
                    - Expr::constant(spec.gamma)
                        * phi1_expr(spec.kind, zeta, sys.constraints()[spec.h_index].clone());
                f_full.push(fb);
                g_full.push((0..m).map(|j| p0.clone() * lg_h(spec.h_index, j)).collect());
            }
        }
    }

    let full = ControlAffineSystem::new(nv, m, f_full, g_full, sys.constraints().to_vec())?;
    Ok(EmbeddedSystem {
        base: sys.clone(),
        bas: block.clone(),
        full,
    })
}
