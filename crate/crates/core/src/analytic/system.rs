//! Control-affine systems `ẋ = f(x) + g(x)u` with analytic constraints.

use nalgebra::{DMatrix, DVector, RowDVector};
use thiserror::Error;

use super::expr::Expr;
use super::jet::{Jet, JetError};
use super::poly::PolyMap;
use crate::Scalar;

#[derive(Debug, Error)]
pub enum SystemError {
    #[error("drift must have one expression per state: expected {expected}, got {got}")]
    DriftArity { expected: usize, got: usize },
    #[error("input map must be state_dim x input_dim: expected {n}x{m}")]
    InputMapShape { n: usize, m: usize },
    #[error("expression uses out-of-range variable: {0}")]
    BadVariable(#[from] super::expr::ExprError),
    #[error("the origin is not an equilibrium: |f_{index}(0)| = {value:e} exceeds 1e-12")]
    OriginNotEquilibrium { index: usize, value: f64 },
    #[error("origin must be strictly safe: h_{index}(0) = {value} is not positive")]
    OriginUnsafe { index: usize, value: f64 },
    #[error("Taylor expansion failed: {0}")]
    Taylor(#[from] JetError),
    #[error("taylor order must be at least 1")]
    OrderTooLow,
}

/// `ẋ = f(x) + g(x)u` with safe set `∩_i {h_i(x) > 0}`.
///
/// Construction checks that the origin is an equilibrium (`f(0) = 0` to
/// 1e-12) and strictly safe (`h_i(0) > 0`). Immutable afterwards.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlAffineSystem<T> {
    state_dim: usize,
    input_dim: usize,
    f: Vec<Expr<T>>,
    g: Vec<Vec<Expr<T>>>,
    h: Vec<Expr<T>>,
}

/// Taylor data of a control-affine field about the origin: one polynomial
/// per drift coordinate and per input-map entry.
#[derive(Clone, Debug)]
pub struct FieldTaylor<T> {
    pub f: Vec<PolyMap<T>>,
    pub g: Vec<Vec<PolyMap<T>>>,
}

impl<T: Scalar> FieldTaylor<T> {
    /// Degree-1 part of the drift: the Jacobian `∂f/∂x(0)`.
    pub fn linear_drift(&self) -> DMatrix<T> {
        let n = self.f.len();
        let nv = self.f[0].num_vars();
        DMatrix::from_fn(n, nv, |i, j| {
            self.f[i].coefficient(&super::poly::MultiIndex::unit(j, nv))
        })
    }

    /// Degree-0 part of the input map: `g(0)`.
    pub fn constant_input_map(&self) -> DMatrix<T> {
        let n = self.g.len();
        let m = self.g[0].len();
        DMatrix::from_fn(n, m, |i, j| self.g[i][j].constant_term())
    }
}

impl<T: Scalar> ControlAffineSystem<T> {
    pub fn new(
        state_dim: usize,
        input_dim: usize,
        f: Vec<Expr<T>>,
        g: Vec<Vec<Expr<T>>>,
        h: Vec<Expr<T>>,
    ) -> Result<Self, SystemError> {
        if f.len() != state_dim {
            return Err(SystemError::DriftArity {
                expected: state_dim,
                got: f.len(),
            });
        }
        if g.len() != state_dim || g.iter().any(|row| row.len() != input_dim) {
            return Err(SystemError::InputMapShape {
                n: state_dim,
                m: input_dim,
            });
        }
        for e in f.iter().chain(g.iter().flatten()).chain(h.iter()) {
            e.check_arity(state_dim)?;
        }
        let origin = vec![T::zero(); state_dim];
        for (i, fi) in f.iter().enumerate() {
            let v = fi.eval(&origin);
            if !(v.abs() <= T::lit(1e-12)) {
                return Err(SystemError::OriginNotEquilibrium {
                    index: i,
                    value: v.as_f64(),
                });
            }
        }
        for (i, hi) in h.iter().enumerate() {
            let v = hi.eval(&origin);
            if !(v > T::zero()) {
                return Err(SystemError::OriginUnsafe {
                    index: i,
                    value: v.as_f64(),
                });
            }
        }
        Ok(ControlAffineSystem {
            state_dim,
            input_dim,
            f,
            g,
            h,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn drift(&self) -> &[Expr<T>] {
        &self.f
    }

    pub fn input_map(&self) -> &[Vec<Expr<T>>] {
        &self.g
    }

    pub fn constraints(&self) -> &[Expr<T>] {
        &self.h
    }

    pub fn num_constraints(&self) -> usize {
        self.h.len()
    }

    /// `f(x) + g(x)u`.
    pub fn eval_field(&self, x: &DVector<T>, u: &DVector<T>) -> DVector<T> {
        assert_eq!(x.len(), self.state_dim, "state dimension mismatch");
        assert_eq!(u.len(), self.input_dim, "input dimension mismatch");
        let xs = x.as_slice();
        DVector::from_fn(self.state_dim, |i, _| {
            let mut v = self.f[i].eval(xs);
            for (j, gij) in self.g[i].iter().enumerate() {
                v += gij.eval(xs) * u[j];
            }
            v
        })
    }

    pub fn eval_drift(&self, x: &DVector<T>) -> DVector<T> {
        let xs = x.as_slice();
        DVector::from_fn(self.state_dim, |i, _| self.f[i].eval(xs))
    }

    pub fn eval_input_map(&self, x: &DVector<T>) -> DMatrix<T> {
        let xs = x.as_slice();
        DMatrix::from_fn(self.state_dim, self.input_dim, |i, j| {
            self.g[i][j].eval(xs)
        })
    }

    pub fn constraint_values(&self, x: &DVector<T>) -> DVector<T> {
        let xs = x.as_slice();
        DVector::from_fn(self.h.len(), |i, _| self.h[i].eval(xs))
    }

    /// Gradient of constraint `h_index` at `x`, by symbolic differentiation.
    pub fn constraint_gradient(&self, h_index: usize, x: &DVector<T>) -> RowDVector<T> {
        let xs = x.as_slice();
        RowDVector::from_fn(self.state_dim, |_, j| self.h[h_index].diff(j).eval(xs))
    }

    /// Lie derivatives of `h_index` along the field:
    /// `L_f h = ∇h·f(x)` and the row `L_g h = ∇h·g(x)`, so that
    /// `ḣ = L_f h + L_g h · u`.
    pub fn lie_derivatives(&self, h_index: usize, x: &DVector<T>) -> (T, RowDVector<T>) {
        let grad = self.constraint_gradient(h_index, x);
        let lf = (&grad * self.eval_drift(x))[0];
        let lg = grad * self.eval_input_map(x);
        (lf, lg)
    }

    /// Truncated Taylor expansion of `(f, g)` about the origin.
    ///
    /// The degree-1 part of `f` is the Jacobian at 0; the degree-0 part of
    /// `g` is `g(0)`.
    pub fn taylor_of_field(&self, order: u32) -> Result<FieldTaylor<T>, SystemError> {
        if order < 1 {
            return Err(SystemError::OrderTooLow);
        }
        let center = vec![T::zero(); self.state_dim];
        let seeds = Jet::seeds(&center, order);
        let f = self
            .f
            .iter()
            .map(|e| e.eval_jet(&seeds))
            .collect::<Result<Vec<_>, _>>()?;
        let g = self
            .g
            .iter()
            .map(|row| {
                row.iter()
                    .map(|e| e.eval_jet(&seeds))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(FieldTaylor { f, g })
    }

    /// Taylor expansion of constraint `h_index` about the origin.
    pub fn taylor_of_constraint(&self, h_index: usize, order: u32) -> Result<PolyMap<T>, SystemError> {
        let center = vec![T::zero(); self.state_dim];
        let seeds = Jet::seeds(&center, order);
        Ok(self.h[h_index].eval_jet(&seeds)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn linear2d() -> ControlAffineSystem<f64> {
        // xdot = [[1,-5],[0,-1]] x + [0,1]^T u, h = (x1-2)^2 + (x2-2)^2 - 0.25
        let x1 = Expr::var(0);
        let x2 = Expr::var(1);
        let f = vec![
            x1.clone() - Expr::constant(5.0) * x2.clone(),
            -x2.clone(),
        ];
        let g = vec![vec![Expr::constant(0.0)], vec![Expr::constant(1.0)]];
        let h = vec![
            (x1 - Expr::constant(2.0)).pow(2) + (x2 - Expr::constant(2.0)).pow(2)
                - Expr::constant(0.25),
        ];
        ControlAffineSystem::new(2, 1, f, g, h).unwrap()
    }

    fn pendulum() -> ControlAffineSystem<f64> {
        let x1 = Expr::var(0);
        let x2 = Expr::var(1);
        let f = vec![
            x2.clone(),
            x1.clone().sin()
                - Expr::constant(0.5) * ((Expr::constant(10.0) * x2.clone()).tanh() + x2.clone()),
        ];
        let g = vec![vec![Expr::constant(0.0)], vec![x1.clone().cos()]];
        let h = vec![
            (x1.clone() - Expr::constant(2.0)).pow(2) + x2.clone().pow(2) - Expr::constant(1.0),
            (x1 + Expr::constant(2.0)).pow(2) + x2.pow(2) - Expr::constant(1.0),
        ];
        ControlAffineSystem::new(2, 1, f, g, h).unwrap()
    }

    #[test]
    fn linear2d_field_values() {
        let sys = linear2d();
        let v = sys.eval_field(&DVector::from_vec(vec![1.0, 1.0]), &DVector::zeros(1));
        assert_relative_eq!(v[0], -4.0);
        assert_relative_eq!(v[1], -1.0);
        let at0 = sys.eval_field(&DVector::zeros(2), &DVector::zeros(1));
        assert_eq!(at0.norm(), 0.0);
    }

    #[test]
    fn pendulum_field_at_pi_over_2() {
        let sys = pendulum();
        let x = DVector::from_vec(vec![std::f64::consts::FRAC_PI_2, 1.0]);
        let v = sys.eval_field(&x, &DVector::zeros(1));
        assert_relative_eq!(v[0], 1.0);
        // sin(pi/2) - 0.5 (tanh 10 + 1) = 1 - 0.5 tanh(10) - 0.5 ~ 2.06e-9... x1=pi/2? spec point is x=(pi/2,1)
        let expected = 1.0 - 0.5 * (10.0f64.tanh() + 1.0);
        assert_relative_eq!(v[1], expected, epsilon = 1e-15);
        assert!(v[1].abs() < 1e-8);
    }

    #[test]
    fn taylor_linear_system_is_exact() {
        let sys = linear2d();
        let tay = sys.taylor_of_field(3).unwrap();
        let a = tay.linear_drift();
        assert_eq!(a[(0, 0)], 1.0);
        assert_eq!(a[(0, 1)], -5.0);
        assert_eq!(a[(1, 0)], 0.0);
        assert_eq!(a[(1, 1)], -1.0);
        // no higher terms at all
        assert_eq!(tay.f[0].num_terms(), 2);
        assert_eq!(tay.f[1].num_terms(), 1);
        assert_eq!(tay.constant_input_map()[(1, 0)], 1.0);
    }

    #[test]
    fn pendulum_jacobian() {
        let sys = pendulum();
        let tay = sys.taylor_of_field(4).unwrap();
        let a = tay.linear_drift();
        assert_relative_eq!(a[(0, 1)], 1.0);
        assert_relative_eq!(a[(1, 0)], 1.0);
        assert_relative_eq!(a[(1, 1)], -5.5);
        let g0 = tay.constant_input_map();
        assert_relative_eq!(g0[(0, 0)], 0.0);
        assert_relative_eq!(g0[(1, 0)], 1.0);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let sys = pendulum();
        let tay = sys.taylor_of_field(2).unwrap();
        let a = tay.linear_drift();
        let h = 1e-6;
        for j in 0..2 {
            let mut xp = DVector::zeros(2);
            let mut xm = DVector::zeros(2);
            xp[j] = h;
            xm[j] = -h;
            let fd = (sys.eval_drift(&xp) - sys.eval_drift(&xm)) / (2.0 * h);
            for i in 0..2 {
                assert_relative_eq!(a[(i, j)], fd[i], max_relative = 1e-6, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn lie_derivative_examples() {
        let sys = linear2d();
        let (lf, lg) = sys.lie_derivatives(0, &DVector::from_vec(vec![1.0, 1.0]));
        assert_relative_eq!(lf, 10.0);
        assert_relative_eq!(lg[0], -2.0);
        // at the origin Lf h = grad h . f(0) = 0
        let (lf0, _) = sys.lie_derivatives(0, &DVector::zeros(2));
        assert_eq!(lf0, 0.0);

        let pend = pendulum();
        let (lf, lg) = pend.lie_derivatives(0, &DVector::from_vec(vec![1.0, 0.0]));
        assert_relative_eq!(lf, 0.0);
        assert_relative_eq!(lg[0], 0.0);
    }

    #[test]
    fn eval_field_is_affine_in_u() {
        let sys = pendulum();
        let x = DVector::from_vec(vec![0.3, -0.4]);
        let u1 = DVector::from_vec(vec![0.7]);
        let u2 = DVector::from_vec(vec![-1.3]);
        let (a, b) = (2.0, -0.5);
        let lhs = sys.eval_field(&x, &(&u1 * a + &u2 * b));
        let rhs = sys.eval_field(&x, &u1) * a + sys.eval_field(&x, &u2) * b
            - sys.eval_drift(&x) * (a + b - 1.0);
        assert_relative_eq!((lhs - rhs).norm(), 0.0, epsilon = 1e-13);
    }

    #[test]
    fn rejects_non_equilibrium_and_unsafe_origin() {
        let bad_f = ControlAffineSystem::new(
            1,
            1,
            vec![Expr::constant(1.0)],
            vec![vec![Expr::constant(1.0)]],
            vec![],
        );
        assert!(matches!(
            bad_f,
            Err(SystemError::OriginNotEquilibrium { .. })
        ));
        let bad_h = ControlAffineSystem::new(
            1,
            1,
            vec![Expr::var(0)],
            vec![vec![Expr::constant(1.0)]],
            vec![Expr::var(0) - Expr::constant(1.0)],
        );
        assert!(matches!(bad_h, Err(SystemError::OriginUnsafe { .. })));
    }

    /// Taylor truncation error scales like ||x||^{order+1}: the log-log
    /// slope over a decade of radii should be at least order + 0.8.
    #[test]
    fn taylor_error_order() {
        let sys = pendulum();
        for order in [2u32, 3] {
            let tay = sys.taylor_of_field(order).unwrap();
            let dir = [0.6, 0.8];
            let mut pts = Vec::new();
            for k in 0..7 {
                let r = 1e-3 * (10.0f64).powf(k as f64 / 3.0); // up to 1e-1
                let x = DVector::from_vec(vec![r * dir[0], r * dir[1]]);
                let exact = sys.eval_drift(&x);
                let approx_v = DVector::from_vec(vec![
                    tay.f[0].eval(x.as_slice()),
                    tay.f[1].eval(x.as_slice()),
                ]);
                let err = (exact - approx_v).norm();
                if err > 0.0 {
                    pts.push((r.ln(), err.ln()));
                }
            }
            let n = pts.len() as f64;
            let (sx, sy): (f64, f64) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
            let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
            let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
            let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
            assert!(
                slope >= order as f64 + 0.8,
                "order {order}: slope {slope} too shallow"
            );
        }
    }
}
