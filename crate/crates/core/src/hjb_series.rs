//! Power-series solution of the infinite-horizon HJB equation on the
//! embedded model.
//!
//! For the cost `V = ½∫ Q(x̄) + uᵀRu dt` subject to `ẋ̄ = f̄ + ḡu`, the
//! optimal value function satisfies
//!
//! `min_u [ ∇V·(f̄ + ḡu) + ½uᵀRu + ½Q ] = 0`,  `V(0) = 0`,
//!
//! with minimizer `u* = −R⁻¹ḡᵀ∇Vᵀ`. The series `V = V₂ + V₃ + … + V_d`
//! is built degree by degree: `V₂ = ½x̄ᵀPx̄` from the CARE, and for each
//! `k ≥ 3` the homogeneous part `V_k` solves the linear equation
//!
//! `∇V_k · (A_cl x̄) = −(known degree-k terms)`
//!
//! over the graded-lex monomial basis, where `A_cl = Ā − B̄K_lqr`. The
//! operator on the left is invertible whenever `A_cl` is Hurwitz (its
//! eigenvalue sums never hit zero), so the recursion cannot hit a
//! resonance for a stabilizable pair.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::analytic::{monomials_of_degree, FieldTaylor, PolyMap};
use crate::embedding::EmbeddedSystem;
use crate::linear_synthesis::{solve_care, FeedbackGain, SynthesisError};
use crate::Scalar;

#[derive(Debug, Error)]
pub enum HjbError {
    #[error("synthesis: {0}")]
    Synthesis(#[from] SynthesisError),
    #[error("state cost must vanish at the origin, got Q(0) = {0}")]
    CostNotZeroAtOrigin(f64),
    #[error("state cost must be critical at the origin, |∇Q(0)| = {0}")]
    CostGradientNotZero(f64),
    #[error("state-cost Hessian at the origin must be positive definite (min eigenvalue {0:e})")]
    CostHessianNotPd(f64),
    #[error("series degree must be at least 2, got {0}")]
    DegreeTooLow(usize),
    #[error("Taylor data degree {have} cannot support a degree-{want} value series")]
    TaylorTooShort { have: u32, want: usize },
    #[error("singular recursion operator at degree {degree}")]
    SingularRecursion { degree: usize },
    #[error("point is outside the safe set: h_{index}(x) = {value}")]
    UnsafePoint { index: usize, value: f64 },
}

/// Running-cost specification: an analytic state cost `Q(x̄)` with
/// positive-definite Hessian at the origin, and a symmetric
/// positive-definite input weight `R`.
#[derive(Clone, Debug)]
pub struct CostSpec<T> {
    q: PolyMap<T>,
    r: DMatrix<T>,
}

impl<T: Scalar> CostSpec<T> {
    pub fn new(q: PolyMap<T>, r: DMatrix<T>) -> Result<Self, HjbError> {
        let origin = vec![T::zero(); q.num_vars()];
        let q0 = q.eval(&origin);
        if q0.abs() > T::lit(1e-12) {
            return Err(HjbError::CostNotZeroAtOrigin(q0.as_f64()));
        }
        let grad = q.gradient_at(&origin);
        let gnorm = grad.iter().fold(T::zero(), |a, g| a + *g * *g).sqrt();
        if gnorm > T::lit(1e-12) {
            return Err(HjbError::CostGradientNotZero(gnorm.as_f64()));
        }
        let hess = q.hessian_at_zero();
        let min_eig = nalgebra::SymmetricEigen::new(hess)
            .eigenvalues
            .iter()
            .fold(T::lit(f64::MAX), |a, b| a.min(*b));
        if min_eig <= T::lit(1e-12) {
            return Err(HjbError::CostHessianNotPd(min_eig.as_f64()));
        }
        let r_min = nalgebra::SymmetricEigen::new(r.clone())
            .eigenvalues
            .iter()
            .fold(T::lit(f64::MAX), |a, b| a.min(*b));
        if r_min <= T::zero() {
            return Err(HjbError::Synthesis(SynthesisError::InputWeightNotPd(
                r_min.as_f64(),
            )));
        }
        Ok(CostSpec { q, r })
    }

    pub fn state_cost(&self) -> &PolyMap<T> {
        &self.q
    }

    pub fn input_weight(&self) -> &DMatrix<T> {
        &self.r
    }

    /// The CARE state weight: `Q2 = ½·Hess Q(0)`, so that the order-2 HJB
    /// equation is exactly `ĀᵀP + PĀ − PB̄R⁻¹B̄ᵀP + Q2 = 0`.
    pub fn care_q2(&self) -> DMatrix<T> {
        self.q.hessian_at_zero() * T::lit(0.5)
    }
}

/// Polynomial value-function approximation `V = V₂ + … + V_d` with the
/// order-2 matrix `P` (`V₂ = ½x̄ᵀPx̄`).
#[derive(Clone, Debug)]
pub struct ValueSeries<T> {
    poly: PolyMap<T>,
    p2: DMatrix<T>,
    degree: usize,
}

impl<T: Scalar> ValueSeries<T> {
    pub fn poly(&self) -> &PolyMap<T> {
        &self.poly
    }

    pub fn p_matrix(&self) -> &DMatrix<T> {
        &self.p2
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn eval(&self, xbar: &DVector<T>) -> T {
        self.poly.eval(xbar.as_slice())
    }

    pub fn gradient(&self, xbar: &DVector<T>) -> DVector<T> {
        DVector::from_vec(self.poly.gradient_at(xbar.as_slice()))
    }
}

/// Polynomial state feedback, one degree-(d−1) polynomial per input.
#[derive(Clone, Debug)]
pub struct PolyController<T> {
    components: Vec<PolyMap<T>>,
    degree: usize,
}

impl<T: Scalar> PolyController<T> {
    pub fn components(&self) -> &[PolyMap<T>] {
        &self.components
    }

    /// Degree of the feedback polynomials (value degree − 1).
    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn control(&self, xbar: &DVector<T>) -> DVector<T> {
        DVector::from_fn(self.components.len(), |j, _| {
            self.components[j].eval(xbar.as_slice())
        })
    }

    /// The linear part as a gain matrix in the `u = −Kx̄` convention.
    pub fn linear_gain(&self) -> DMatrix<T> {
        let nv = self.components[0].num_vars();
        DMatrix::from_fn(self.components.len(), nv, |j, i| {
            -self.components[j]
                .coefficient(&crate::analytic::MultiIndex::unit(i, nv))
        })
    }
}

/// Gradient rows of a homogeneous part, as polynomials.
fn grad<T: Scalar>(v: &PolyMap<T>) -> Vec<PolyMap<T>> {
    (0..v.num_vars()).map(|i| v.partial_derivative(i)).collect()
}

/// Solves the HJB equation to the given degree over the Taylor data
/// `(f̄, ḡ)` of the embedded model.
///
/// Requires `f̄` expanded to at least degree `d−1` and `ḡ` to `d−2`
/// (a shared expansion degree ≥ d−1 satisfies both).
pub fn solve_value_series<T: Scalar>(
    taylor: &FieldTaylor<T>,
    cost: &CostSpec<T>,
    degree: usize,
) -> Result<ValueSeries<T>, HjbError> {
    if degree < 2 {
        return Err(HjbError::DegreeTooLow(degree));
    }
    let nv = taylor.f[0].num_vars();
    let m = taylor.g[0].len();
    let have = taylor.f[0].max_degree();
    if (have as usize) < degree - 1 {
        return Err(HjbError::TaylorTooShort {
            have,
            want: degree,
        });
    }

    let a = taylor.linear_drift();
    let b = taylor.constant_input_map();
    let q2 = cost.care_q2();
    let (p, k_lqr) = solve_care(&a, &b, &q2, cost.input_weight())?;
    let a_cl = &a - &b * &k_lqr.k;
    let r_inv = cost
        .input_weight()
        .clone()
        .try_inverse()
        .expect("R positive definite");

    let poly_degree = degree as u32;
    // V2 = 1/2 x^T P x
    let mut value = PolyMap::zero(nv, poly_degree);
    for i in 0..nv {
        for j in 0..nv {
            let mut e = vec![0u32; nv];
            e[i] += 1;
            e[j] += 1;
            value.add_term(crate::analytic::MultiIndex(e), p[(i, j)] * T::lit(0.5));
        }
    }

    // homogeneous pieces V_2..V_k as we go
    let mut v_parts: Vec<PolyMap<T>> = vec![value.clone()];

    for k in 3..=degree {
        let ku = k as u32;
        // known terms of degree k, assembled at truncation degree k
        let mut rhs_poly = cost.state_cost().homogeneous_part(ku).truncated(ku).scale(T::lit(0.5));

        // sum_{a=2}^{k-1} grad(V_a) · F_{k+1-a}
        for a_deg in 2..k {
            let f_deg = (k + 1 - a_deg) as u32;
            let va = &v_parts[a_deg - 2];
            let ga = grad(va);
            for i in 0..nv {
                let fb = taylor.f[i].homogeneous_part(f_deg);
                if fb.is_zero() {
                    continue;
                }
                rhs_poly = rhs_poly.add(&ga[i].truncated(ku).mul(&fb.truncated(ku)));
            }
        }

        // −½ Σ (∇V_a ḡ^{(c)}) R⁻¹ (ḡ^{(dd)ᵀ} ∇V_bᵀ) over known degrees:
        // (a−1) + c + (b−1) + dd = k with 2 ≤ a,b ≤ k−1
        for a_deg in 2..k {
            for b_deg in 2..k {
                let ga = grad(&v_parts[a_deg - 2]);
                let gb = grad(&v_parts[b_deg - 2]);
                let rem = k as i64 - (a_deg as i64 - 1) - (b_deg as i64 - 1);
                if rem < 0 {
                    continue;
                }
                for c_deg in 0..=rem {
                    let dd_deg = rem - c_deg;
                    // w_a[j] = Σ_i ∇V_a[i] · g[i][j]^{(c)}
                    let wa: Vec<PolyMap<T>> = (0..m)
                        .map(|j| {
                            let mut acc = PolyMap::zero(nv, ku);
                            for i in 0..nv {
                                let gc = taylor.g[i][j].homogeneous_part(c_deg as u32);
                                if !gc.is_zero() {
                                    acc = acc.add(&ga[i].truncated(ku).mul(&gc.truncated(ku)));
                                }
                            }
                            acc
                        })
                        .collect();
                    let wb: Vec<PolyMap<T>> = (0..m)
                        .map(|j| {
                            let mut acc = PolyMap::zero(nv, ku);
                            for i in 0..nv {
                                let gd = taylor.g[i][j].homogeneous_part(dd_deg as u32);
                                if !gd.is_zero() {
                                    acc = acc.add(&gb[i].truncated(ku).mul(&gd.truncated(ku)));
                                }
                            }
                            acc
                        })
                        .collect();
                    for j1 in 0..m {
                        for j2 in 0..m {
                            let w = r_inv[(j1, j2)];
                            if w == T::zero() || wa[j1].is_zero() || wb[j2].is_zero() {
                                continue;
                            }
                            rhs_poly =
                                rhs_poly.add(&wa[j1].mul(&wb[j2]).scale(-T::lit(0.5) * w));
                        }
                    }
                }
            }
        }

        // assemble and solve  L_k vec(V_k) = −rhs  over the degree-k basis
        let basis = monomials_of_degree(nv, ku);
        let index_of = |mi: &crate::analytic::MultiIndex| -> usize {
            basis.binary_search(mi).expect("degree-k monomial in basis")
        };
        let nb = basis.len();
        let mut op = DMatrix::<T>::zeros(nb, nb);
        for (col, alpha) in basis.iter().enumerate() {
            for i in 0..nv {
                if alpha.0[i] == 0 {
                    continue;
                }
                let ai = T::from_u32(alpha.0[i]).unwrap();
                for j in 0..nv {
                    let acl = a_cl[(i, j)];
                    if acl == T::zero() {
                        continue;
                    }
                    let mut beta = alpha.clone();
                    beta.0[i] -= 1;
                    beta.0[j] += 1;
                    op[(index_of(&beta), col)] += ai * acl;
                }
            }
        }
        let mut rhs = DVector::<T>::zeros(nb);
        for (mi, coef) in rhs_poly.homogeneous_part(ku).terms() {
            rhs[index_of(mi)] = -*coef;
        }
        let solution = op
            .lu()
            .solve(&rhs)
            .ok_or(HjbError::SingularRecursion { degree: k })?;
        let mut vk = PolyMap::zero(nv, poly_degree);
        for (i, mi) in basis.iter().enumerate() {
            vk.add_term(mi.clone(), solution[i]);
        }
        value = value.add(&vk);
        v_parts.push(vk);
    }

    Ok(ValueSeries {
        poly: value,
        p2: p,
        degree,
    })
}

/// The optimal safe feedback `u(x̄) = −R⁻¹ ḡ(x̄)ᵀ ∇V(x̄)`, truncated to
/// polynomial degree `d−1`.
pub fn control_from_value<T: Scalar>(
    series: &ValueSeries<T>,
    g_taylor: &[Vec<PolyMap<T>>],
    r: &DMatrix<T>,
) -> PolyController<T> {
    let nv = series.poly.num_vars();
    let m = g_taylor[0].len();
    let out_degree = (series.degree - 1) as u32;
    let r_inv = r.clone().try_inverse().expect("R positive definite");
    let grad_v = grad(&series.poly);
    let components = (0..m)
        .map(|j| {
            let mut acc = PolyMap::zero(nv, out_degree);
            for j2 in 0..m {
                let w = r_inv[(j, j2)];
                if w == T::zero() {
                    continue;
                }
                for i in 0..nv {
                    let gij = g_taylor[i][j2].truncated(out_degree);
                    if gij.is_zero() {
                        continue;
                    }
                    acc = acc.add(&gij.mul(&grad_v[i].truncated(out_degree)).scale(-w));
                }
            }
            acc
        })
        .collect();
    PolyController {
        components,
        degree: series.degree - 1,
    }
}

/// Left-hand side of the HJB equation at a point, with the exact embedded
/// dynamics (not their Taylor expansions) and the series value/controller:
///
/// `∇V·(f̄(x̄) + ḡ(x̄)u) + ½uᵀRu + ½Q(x̄)`.
///
/// For an exact solution this is identically zero; for the degree-d series
/// it decays like `‖x̄‖^{d+1}`.
pub fn hjb_residual<T: Scalar>(
    series: &ValueSeries<T>,
    controller: &PolyController<T>,
    esys: &EmbeddedSystem<T>,
    cost: &CostSpec<T>,
    xbar: &DVector<T>,
) -> Result<T, HjbError> {
    let (x, _) = esys.split_state(xbar);
    let h = esys.base().constraint_values(&x);
    for (i, v) in h.iter().enumerate() {
        if !(*v > T::zero()) {
            return Err(HjbError::UnsafePoint {
                index: i,
                value: v.as_f64(),
            });
        }
    }
    let u = controller.control(xbar);
    let xdot = esys.full().eval_field(xbar, &u);
    let grad_v = series.gradient(xbar);
    let half = T::lit(0.5);
    Ok(grad_v.dot(&xdot)
        + (u.transpose() * cost.input_weight() * &u)[(0, 0)] * half
        + cost.state_cost().eval(xbar.as_slice()) * half)
}

/// Convenience wrapper: Taylor-expand the embedded model to the degree the
/// series needs, solve, and derive the controller.
pub fn synthesize_nlqr<T: Scalar>(
    esys: &EmbeddedSystem<T>,
    cost: &CostSpec<T>,
    degree: usize,
) -> Result<(ValueSeries<T>, PolyController<T>, FeedbackGain<T>), HjbError> {
    if degree < 2 {
        return Err(HjbError::DegreeTooLow(degree));
    }
    let order = (degree as u32 - 1).max(1);
    let taylor = esys
        .full()
        .taylor_of_field(order)
        .map_err(SynthesisError::from)?;
    let series = solve_value_series(&taylor, cost, degree)?;
    let controller = control_from_value(&series, &taylor.g, cost.input_weight());
    let gain = FeedbackGain {
        k: controller.linear_gain(),
    };
    Ok((series, controller, gain))
}
