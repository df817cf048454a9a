//! Linear synthesis on the embedded model: closed-form and jet-based
//! linearization, controllability staircase, pole placement, and a
//! Newton-Kleinman solver for the continuous algebraic Riccati equation.
//!
//! The linearized embedded pair is typically stabilizable but not
//! controllable: the barrier state contributes an uncontrollable (and
//! feedback-invariant) stable mode at `−γ ∂φ1/∂ζ(β0, h(0))`. All rank
//! decisions therefore go through an orthogonal staircase decomposition
//! with an explicit tolerance; a naive controllability-matrix rank test
//! would see an almost-full-rank matrix in floating point.

use nalgebra::{Complex, DMatrix, DVector};
use thiserror::Error;

use crate::analytic::Expr;
use crate::barriers::{phi0, phi1_grad, BarrierSpec};
use crate::embedding::EmbeddedSystem;
use crate::Scalar;

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("pole placement requested {requested} poles but the controllable dimension is {controllable}")]
    PoleCountMismatch {
        requested: usize,
        controllable: usize,
    },
    #[error("pair is not stabilizable: uncontrollable eigenvalue {re}{im:+}i has nonnegative real part")]
    NotStabilizable { re: f64, im: f64 },
    #[error("desired poles must be closed under conjugation")]
    PolesNotConjugateClosed,
    #[error("dimension mismatch: A is {an}x{an2}, B is {bn}x{bm}")]
    DimensionMismatch {
        an: usize,
        an2: usize,
        bn: usize,
        bm: usize,
    },
    #[error("weight matrix {name} must be symmetric")]
    NotSymmetric { name: &'static str },
    #[error("R must be positive definite (min eigenvalue {0:e})")]
    InputWeightNotPd(f64),
    #[error("Riccati iteration did not converge: residual {residual:e} after {iterations} iterations")]
    RiccatiDiverged { residual: f64, iterations: usize },
    #[error("failed to reduce the multi-input pair to a controllable single-input pair")]
    CyclicReductionFailed,
    #[error("linear algebra failure: {0}")]
    Linalg(&'static str),
    #[error("{0}")]
    Taylor(#[from] crate::analytic::SystemError),
}

/// `ẋ̄ = Ābar x̄ + B̄bar u`, the linearization of the embedded model
/// about the origin.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearizedEmbedded<T> {
    pub abar: DMatrix<T>,
    pub bbar: DMatrix<T>,
}

/// Closed-form linearization for a linear base plant `ẋ = Ax + Bu` with a
/// single barrier state:
///
/// ```text
/// Ābar = [ A                                        0               ]
///        [ φ0(β0)·h_x(0)·A − γ·φ1_η(β0,h0)·h_x(0)   −γ·φ1_ζ(β0,h0)  ]
/// B̄bar = [ B ; φ0(β0)·h_x(0)·B ]
/// ```
pub fn linearize_closed_form<T: Scalar>(
    a: &DMatrix<T>,
    b: &DMatrix<T>,
    spec: &BarrierSpec<T>,
    h: &Expr<T>,
) -> LinearizedEmbedded<T> {
    let n = a.nrows();
    let m = b.ncols();
    let origin = vec![T::zero(); n];
    let h0 = h.eval(&origin);
    let hx0 = nalgebra::RowDVector::<T>::from_fn(n, |_, j| h.diff(j).eval(&origin));
    let p0 = phi0(spec.kind, spec.beta0);
    let (p1_zeta, p1_eta) = phi1_grad(spec.kind, spec.beta0, h0);

    let mut abar = DMatrix::zeros(n + 1, n + 1);
    abar.view_mut((0, 0), (n, n)).copy_from(a);
    let zrow = (&hx0 * a) * p0 - &hx0 * (spec.gamma * p1_eta);
    for j in 0..n {
        abar[(n, j)] = zrow[j];
    }
    abar[(n, n)] = -spec.gamma * p1_zeta;

    let mut bbar = DMatrix::zeros(n + 1, m);
    bbar.view_mut((0, 0), (n, m)).copy_from(b);
    let zb = (&hx0 * b) * p0;
    for j in 0..m {
        bbar[(n, j)] = zb[j];
    }
    LinearizedEmbedded { abar, bbar }
}

/// Jet-based linearization of any embedded model: the degree-1 Taylor
/// data of `f̄` and the degree-0 data of `ḡ`. Agrees with
/// [`linearize_closed_form`] whenever the base plant is linear with a
/// single barrier state.
pub fn linearize_numeric<T: Scalar>(
    esys: &EmbeddedSystem<T>,
) -> Result<LinearizedEmbedded<T>, SynthesisError> {
    let tay = esys.full().taylor_of_field(1)?;
    Ok(LinearizedEmbedded {
        abar: tay.linear_drift(),
        bbar: tay.constant_input_map(),
    })
}

/// Orthogonal controllability staircase of `(A, B)`.
///
/// In the transformed coordinates `TᵀAT, TᵀB`, the controllable block
/// occupies the leading `r` rows/columns and `TᵀB` vanishes below row
/// `r`; the trailing block's eigenvalues are the uncontrollable modes,
/// invariant under any state feedback.
#[derive(Clone, Debug)]
pub struct StaircaseDecomposition<T> {
    /// Orthogonal change of basis (columns ordered controllable-first).
    pub transform: DMatrix<T>,
    /// Dimension of the controllable subsystem.
    pub controllable_dim: usize,
    pub a_stair: DMatrix<T>,
    pub b_stair: DMatrix<T>,
    pub uncontrollable_eigenvalues: Vec<Complex<T>>,
}

impl<T: Scalar> StaircaseDecomposition<T> {
    pub fn controllable_block(&self) -> (DMatrix<T>, DMatrix<T>) {
        let r = self.controllable_dim;
        (
            self.a_stair.view((0, 0), (r, r)).into_owned(),
            self.b_stair
                .view((0, 0), (r, self.b_stair.ncols()))
                .into_owned(),
        )
    }
}

/// Relative rank tolerance for the staircase: `1e-9 · ‖[A B]‖₂`.
fn staircase_tolerance<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>) -> T {
    let mut compound = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    compound
        .view_mut((0, 0), (a.nrows(), a.ncols()))
        .copy_from(a);
    compound
        .view_mut((0, a.ncols()), (b.nrows(), b.ncols()))
        .copy_from(b);
    let scale = compound
        .singular_values()
        .iter()
        .fold(T::zero(), |acc, s| acc.max(*s));
    T::lit(1e-9) * scale.max(T::one())
}

/// Staircase (orthogonal) controllability decomposition with explicit
/// rank tolerance, plus the uncontrollable spectrum.
pub fn ctrb_decompose<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>) -> StaircaseDecomposition<T> {
    let n = a.nrows();
    assert_eq!(a.ncols(), n, "A must be square");
    assert_eq!(b.nrows(), n, "B must have as many rows as A");
    let tol = staircase_tolerance(a, b);

    let mut transform = DMatrix::<T>::identity(n, n);
    let mut a_cur = a.clone();
    let mut b_cur = b.clone();
    let mut r = 0usize; // rows already committed to the controllable block
    let mut stage_cols = b.ncols();
    let mut stage_block = b_cur.clone(); // rows r.. of this are reduced next

    while r < n && stage_cols > 0 {
        let block = stage_block.view((r, 0), (n - r, stage_cols)).into_owned();
        let svd = block.svd(true, false);
        let rank = svd.singular_values.iter().filter(|s| **s > tol).count();
        if rank == 0 {
            break;
        }
        let u = svd.u.as_ref().expect("svd with U requested");
        let q_sub = complete_orthogonal(u, n - r);
        let mut q = DMatrix::<T>::identity(n, n);
        q.view_mut((r, r), (n - r, n - r)).copy_from(&q_sub);
        a_cur = q.transpose() * &a_cur * &q;
        b_cur = q.transpose() * &b_cur;
        transform *= &q;
        let prev_r = r;
        r += rank;
        if r >= n {
            break;
        }
        // next stage reduces the coupling block A[r.., prev_r..r]
        stage_cols = rank;
        stage_block = DMatrix::zeros(n, rank);
        stage_block
            .view_mut((r, 0), (n - r, rank))
            .copy_from(&a_cur.view((r, prev_r), (n - r, rank)).into_owned());
    }

    let uncontrollable = if r < n {
        let tail = a_cur.view((r, r), (n - r, n - r)).into_owned();
        eigenvalues(&tail)
    } else {
        Vec::new()
    };

    StaircaseDecomposition {
        transform,
        controllable_dim: r,
        a_stair: a_cur,
        b_stair: b_cur,
        uncontrollable_eigenvalues: uncontrollable,
    }
}

/// Extends the thin orthonormal column basis `u` (k × rank) to a k × k
/// orthogonal matrix by Gram-Schmidt against the coordinate axes.
fn complete_orthogonal<T: Scalar>(u: &DMatrix<T>, k: usize) -> DMatrix<T> {
    let rank = u.ncols().min(k);
    let mut basis: Vec<DVector<T>> = (0..rank).map(|j| u.column(j).into_owned()).collect();
    let mut axis = 0usize;
    while basis.len() < k && axis < k {
        let mut v = DVector::zeros(k);
        v[axis] = T::one();
        for b in &basis {
            let proj = b.dot(&v);
            v -= b * proj;
        }
        let norm = v.norm();
        if norm > T::lit(1e-8) {
            basis.push(v / norm);
        }
        axis += 1;
    }
    assert_eq!(basis.len(), k, "orthogonal completion failed");
    DMatrix::from_columns(&basis)
}

/// Eigenvalues of a real square matrix.
pub fn eigenvalues<T: Scalar>(a: &DMatrix<T>) -> Vec<Complex<T>> {
    if a.nrows() == 0 {
        return Vec::new();
    }
    a.clone().complex_eigenvalues().iter().copied().collect()
}

/// State feedback gain with the convention `u = −K·x̄` (fixed across the
/// whole crate; all synthesis routines return gains in this form).
#[derive(Clone, Debug, PartialEq)]
pub struct FeedbackGain<T> {
    pub k: DMatrix<T>,
}

impl<T: Scalar> FeedbackGain<T> {
    pub fn closed_loop(&self, a: &DMatrix<T>, b: &DMatrix<T>) -> DMatrix<T> {
        a - b * &self.k
    }

    pub fn control(&self, xbar: &DVector<T>) -> DVector<T> {
        -(&self.k * xbar)
    }
}

fn is_conjugate_closed<T: Scalar>(poles: &[Complex<T>]) -> bool {
    let tol = T::lit(1e-9);
    let mut unmatched: Vec<Complex<T>> = Vec::new();
    for p in poles {
        if p.im.abs() <= tol {
            continue;
        }
        if let Some(pos) = unmatched
            .iter()
            .position(|q| (q.re - p.re).abs() <= tol && (q.im + p.im).abs() <= tol)
        {
            unmatched.remove(pos);
        } else {
            unmatched.push(*p);
        }
    }
    unmatched.is_empty()
}

/// Coefficients `[c_0, …, c_{r-1}]` of the monic polynomial `Π (s − p_i)`
/// `= s^r + c_{r-1} s^{r-1} + … + c_0`; real by conjugate closure.
fn real_char_poly<T: Scalar>(poles: &[Complex<T>]) -> Vec<T> {
    let mut coeffs: Vec<Complex<T>> = vec![Complex::new(T::one(), T::zero())];
    for p in poles {
        let mut next = vec![Complex::new(T::zero(), T::zero()); coeffs.len() + 1];
        for (i, c) in coeffs.iter().enumerate() {
            next[i + 1] += *c;
            next[i] -= *c * *p;
        }
        coeffs = next;
    }
    coeffs[..coeffs.len() - 1].iter().map(|c| c.re).collect()
}

/// Ackermann's formula for a controllable single-input pair.
fn ackermann<T: Scalar>(
    a: &DMatrix<T>,
    b: &DVector<T>,
    poles: &[Complex<T>],
) -> Result<nalgebra::RowDVector<T>, SynthesisError> {
    let r = a.nrows();
    let mut ctrb = DMatrix::zeros(r, r);
    let mut col = b.clone();
    for j in 0..r {
        ctrb.set_column(j, &col);
        col = a * &col;
    }
    let coeffs = real_char_poly(poles);
    // p(A) = A^r + c_{r-1} A^{r-1} + … + c_0 I
    let mut p_a = DMatrix::<T>::identity(r, r) * coeffs[0];
    let mut a_pow = DMatrix::<T>::identity(r, r);
    for c in coeffs.iter().skip(1) {
        a_pow = &a_pow * a;
        p_a += &a_pow * *c;
    }
    a_pow = &a_pow * a;
    p_a += a_pow;
    // k = e_rᵀ C⁻¹ p(A): solve Cᵀ w = e_r, then k = wᵀ p(A)
    let lut = ctrb.transpose().lu();
    let mut e_r = DVector::zeros(r);
    e_r[r - 1] = T::one();
    let wrow = lut
        .solve(&e_r)
        .ok_or(SynthesisError::Linalg("singular controllability matrix"))?;
    Ok(wrow.transpose() * p_a)
}

/// Deterministic pseudo-random values for the cyclic pre-feedback
/// reduction (fixed sequence, so synthesis stays a pure function).
fn lcg_sequence<T: Scalar>(len: usize, salt: u64) -> Vec<T> {
    let mut state = 0x9E3779B97F4A7C15u64 ^ salt;
    (0..len)
        .map(|_| {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            T::lit(((state >> 11) as f64) / ((1u64 << 53) as f64) * 2.0 - 1.0)
        })
        .collect()
}

/// Places the closed-loop poles of the controllable subsystem.
///
/// The returned gain satisfies `u = −Kx̄` with closed-loop spectrum equal
/// to the requested poles plus the uncontrollable modes. Along the
/// uncontrollable staircase coordinates the gain is zero (the canonical
/// minimal-extension member of the gain family). Multi-input pairs are
/// reduced to a cyclic single-input pair by deterministic pre-feedback.
pub fn pole_place<T: Scalar>(
    a: &DMatrix<T>,
    b: &DMatrix<T>,
    poles: &[Complex<T>],
) -> Result<FeedbackGain<T>, SynthesisError> {
    if a.nrows() != a.ncols() || b.nrows() != a.nrows() {
        return Err(SynthesisError::DimensionMismatch {
            an: a.nrows(),
            an2: a.ncols(),
            bn: b.nrows(),
            bm: b.ncols(),
        });
    }
    if !is_conjugate_closed(poles) {
        return Err(SynthesisError::PolesNotConjugateClosed);
    }
    let stair = ctrb_decompose(a, b);
    let r = stair.controllable_dim;
    if poles.len() != r {
        return Err(SynthesisError::PoleCountMismatch {
            requested: poles.len(),
            controllable: r,
        });
    }
    for ev in &stair.uncontrollable_eigenvalues {
        if ev.re >= T::zero() {
            return Err(SynthesisError::NotStabilizable {
                re: ev.re.as_f64(),
                im: ev.im.as_f64(),
            });
        }
    }
    let n = a.nrows();
    let m = b.ncols();
    if r == 0 {
        return Ok(FeedbackGain {
            k: DMatrix::zeros(m, n),
        });
    }
    let (ac, bc) = stair.controllable_block();
    let kc: DMatrix<T> = if m == 1 {
        let krow = ackermann(&ac, &bc.column(0).into_owned(), poles)?;
        DMatrix::from_rows(&[krow])
    } else {
        place_multi_input(&ac, &bc, poles)?
    };
    // pad with zeros along uncontrollable coordinates, rotate back
    let mut k_full = DMatrix::zeros(m, n);
    k_full.view_mut((0, 0), (m, r)).copy_from(&kc);
    let k = k_full * stair.transform.transpose();
    Ok(FeedbackGain { k })
}

/// Cyclic pre-feedback reduction: find `F`, `v` with `(A + BF, Bv)`
/// controllable, place single-input, recombine `K = v·k − F`.
fn place_multi_input<T: Scalar>(
    a: &DMatrix<T>,
    b: &DMatrix<T>,
    poles: &[Complex<T>],
) -> Result<DMatrix<T>, SynthesisError> {
    let r = a.nrows();
    let m = b.ncols();
    for attempt in 0..24u64 {
        let (f, v) = if attempt == 0 {
            let mut v = DVector::zeros(m);
            v[0] = T::one();
            (DMatrix::zeros(m, r), v)
        } else {
            (
                DMatrix::from_vec(m, r, lcg_sequence::<T>(m * r, attempt)),
                DVector::from_vec(lcg_sequence::<T>(m, attempt.wrapping_mul(7919))),
            )
        };
        let a_mod = a + b * &f;
        let b_single = b * &v;
        let b_single_mat = DMatrix::from_columns(&[b_single.clone()]);
        let stair = ctrb_decompose(&a_mod, &b_single_mat);
        if stair.controllable_dim == r {
            let k_single = ackermann(&a_mod, &b_single, poles)?;
            // u = Fx − v·k·x, and u = −Kc x  =>  Kc = v·k − F
            let kc = &v * k_single - f;
            return Ok(kc);
        }
    }
    Err(SynthesisError::CyclicReductionFailed)
}

fn check_symmetric<T: Scalar>(mat: &DMatrix<T>, name: &'static str) -> Result<(), SynthesisError> {
    let n = mat.nrows();
    let scale = mat.amax().max(T::one());
    for i in 0..n {
        for j in (i + 1)..n {
            if (mat[(i, j)] - mat[(j, i)]).abs() > T::lit(1e-9) * scale {
                return Err(SynthesisError::NotSymmetric { name });
            }
        }
    }
    Ok(())
}

/// Solves the continuous Lyapunov equation `AᵀP + PA = −W` by the
/// Kronecker/vec reduction (state dimensions here are single digits).
pub fn solve_lyapunov<T: Scalar>(
    a: &DMatrix<T>,
    w: &DMatrix<T>,
) -> Result<DMatrix<T>, SynthesisError> {
    let n = a.nrows();
    let eye = DMatrix::<T>::identity(n, n);
    let at = a.transpose();
    // (I ⊗ Aᵀ + Aᵀ ⊗ I) vec(P) = −vec(W)   [column-major vec]
    let big = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = DVector::from_column_slice((-w).as_slice());
    let sol = big
        .lu()
        .solve(&rhs)
        .ok_or(SynthesisError::Linalg("singular Lyapunov operator"))?;
    let p = DMatrix::from_column_slice(n, n, sol.as_slice());
    // symmetrize away rounding skew
    Ok((&p + p.transpose()) * T::lit(0.5))
}

/// Newton-Kleinman iteration for the CARE
/// `AᵀP + PA − P B R⁻¹ Bᵀ P + Q2 = 0`.
///
/// Initialization: a stabilizing gain from pole placement at
/// `{−1, −2, …}` on the controllable part (the uncontrollable modes must
/// already be stable, i.e. the pair stabilizable). Each iteration solves
/// one Lyapunov equation; convergence is quadratic.
///
/// Returns `(P, K)` with `K = R⁻¹BᵀP`, `A − BK` Hurwitz, `P ⪰ 0`, and
/// Riccati residual `≤ 1e-10·max(1, ‖Q2‖_F)`.
pub fn solve_care<T: Scalar>(
    a: &DMatrix<T>,
    b: &DMatrix<T>,
    q2: &DMatrix<T>,
    r: &DMatrix<T>,
) -> Result<(DMatrix<T>, FeedbackGain<T>), SynthesisError> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n || q2.nrows() != n || q2.ncols() != n {
        return Err(SynthesisError::DimensionMismatch {
            an: a.nrows(),
            an2: a.ncols(),
            bn: b.nrows(),
            bm: b.ncols(),
        });
    }
    check_symmetric(q2, "Q2")?;
    check_symmetric(r, "R")?;
    let r_eigs = nalgebra::SymmetricEigen::new(r.clone());
    let min_r = r_eigs
        .eigenvalues
        .iter()
        .fold(T::lit(f64::MAX), |a, b| a.min(*b));
    if min_r <= T::zero() {
        return Err(SynthesisError::InputWeightNotPd(min_r.as_f64()));
    }
    let r_inv = r
        .clone()
        .try_inverse()
        .ok_or(SynthesisError::Linalg("R not invertible"))?;

    // stabilizing initial gain
    let stair = ctrb_decompose(a, b);
    for ev in &stair.uncontrollable_eigenvalues {
        if ev.re >= T::zero() {
            return Err(SynthesisError::NotStabilizable {
                re: ev.re.as_f64(),
                im: ev.im.as_f64(),
            });
        }
    }
    let init_poles: Vec<Complex<T>> = (0..stair.controllable_dim)
        .map(|i| Complex::new(-T::from_usize(i + 1).unwrap(), T::zero()))
        .collect();
    let mut k = pole_place(a, b, &init_poles)?.k;

    let target = T::lit(1e-11) * q2.norm().max(T::one());
    let mut p = DMatrix::zeros(n, n);
    let mut best_residual = T::lit(f64::MAX);
    let max_iterations = 60;
    for iteration in 0.. {
        let a_cl = a - b * &k;
        let w = q2 + k.transpose() * r * &k;
        p = solve_lyapunov(&a_cl, &w)?;
        k = &r_inv * b.transpose() * &p;
        let residual =
            (a.transpose() * &p + &p * a - &p * b * &r_inv * b.transpose() * &p + q2).norm();
        best_residual = best_residual.min(residual);
        if residual <= target {
            break;
        }
        if iteration + 1 == max_iterations {
            return Err(SynthesisError::RiccatiDiverged {
                residual: best_residual.as_f64(),
                iterations: max_iterations,
            });
        }
    }
    Ok((p, FeedbackGain { k }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barriers::BarrierKind;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;

    fn linear2d_matrices() -> (DMatrix<f64>, DMatrix<f64>) {
        (dmatrix![1.0, -5.0; 0.0, -1.0], dmatrix![0.0; 1.0])
    }

    fn linear2d_h() -> Expr<f64> {
        let x1 = Expr::var(0);
        let x2 = Expr::var(1);
        (x1 - Expr::constant(2.0)).pow(2) + (x2 - Expr::constant(2.0)).pow(2)
            - Expr::constant(0.25)
    }

    fn section4_embedded(gamma: f64) -> LinearizedEmbedded<f64> {
        let (a, b) = linear2d_matrices();
        let spec = BarrierSpec::new(BarrierKind::Inverse, 0, gamma, 7.75).unwrap();
        linearize_closed_form(&a, &b, &spec, &linear2d_h())
    }

    #[test]
    fn closed_form_matches_printed_entries() {
        let d = 7.75 * 7.75;
        for gamma in [1.0, 2.0] {
            let lin = section4_embedded(gamma);
            assert_relative_eq!(lin.abar[(2, 0)], (4.0 * gamma + 4.0) / d, epsilon = 1e-12);
            assert_relative_eq!(lin.abar[(2, 1)], (4.0 * gamma - 24.0) / d, epsilon = 1e-12);
            assert_relative_eq!(lin.abar[(2, 2)], -gamma, epsilon = 1e-12);
            assert_relative_eq!(lin.bbar[(2, 0)], 4.0 / d, epsilon = 1e-12);
            // top blocks unchanged
            let (a, b) = linear2d_matrices();
            assert_eq!(lin.abar.view((0, 0), (2, 2)).into_owned(), a);
            assert_eq!(lin.bbar[(0, 0)], b[(0, 0)]);
            assert_eq!(lin.abar[(0, 2)], 0.0);
            assert_eq!(lin.abar[(1, 2)], 0.0);
        }
    }

    #[test]
    fn staircase_finds_uncontrollable_barrier_mode() {
        for gamma in [0.5, 1.0, 2.0, 5.0] {
            let lin = section4_embedded(gamma);
            let stair = ctrb_decompose(&lin.abar, &lin.bbar);
            assert_eq!(stair.controllable_dim, 2, "gamma={gamma}");
            assert_eq!(stair.uncontrollable_eigenvalues.len(), 1);
            let ev = stair.uncontrollable_eigenvalues[0];
            assert!(
                (ev.re + gamma).abs() <= 1e-8 && ev.im.abs() <= 1e-8,
                "gamma={gamma}: {ev}"
            );
            let t = &stair.transform;
            let err = (t.transpose() * t - DMatrix::<f64>::identity(3, 3)).norm();
            assert!(err <= 1e-12, "transform not orthogonal: {err:e}");
            for i in stair.controllable_dim..3 {
                assert!(stair.b_stair[(i, 0)].abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn staircase_trivial_cases() {
        let a = dmatrix![0.0, 1.0; 0.0, 0.0];
        let b = dmatrix![0.0; 1.0];
        let stair = ctrb_decompose(&a, &b);
        assert_eq!(stair.controllable_dim, 2);
        assert!(stair.uncontrollable_eigenvalues.is_empty());

        let b0 = dmatrix![0.0; 0.0];
        let stair = ctrb_decompose(&a, &b0);
        assert_eq!(stair.controllable_dim, 0);
        assert_eq!(stair.uncontrollable_eigenvalues.len(), 2);
    }

    #[test]
    fn pole_place_double_integrator() {
        let a = dmatrix![0.0, 1.0; 0.0, 0.0];
        let b = dmatrix![0.0; 1.0];
        let poles = [Complex::new(-1.0, 0.0), Complex::new(-2.0, 0.0)];
        let gain = pole_place(&a, &b, &poles).unwrap();
        assert_relative_eq!(gain.k[(0, 0)], 2.0, epsilon = 1e-10);
        assert_relative_eq!(gain.k[(0, 1)], 3.0, epsilon = 1e-10);
    }

    #[test]
    fn pole_place_embedded_spectrum() {
        let lin = section4_embedded(2.0);
        let poles = [Complex::new(-3.0, 0.0), Complex::new(-5.0, 0.0)];
        let gain = pole_place(&lin.abar, &lin.bbar, &poles).unwrap();
        let mut eigs: Vec<f64> = eigenvalues(&gain.closed_loop(&lin.abar, &lin.bbar))
            .iter()
            .map(|c| c.re)
            .collect();
        eigs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_relative_eq!(eigs[0], -5.0, epsilon = 1e-6);
        assert_relative_eq!(eigs[1], -3.0, epsilon = 1e-6);
        assert_relative_eq!(eigs[2], -2.0, epsilon = 1e-6);
    }

    #[test]
    fn pole_place_rejects_wrong_count_and_unstable_uncontrollable() {
        let lin = section4_embedded(2.0);
        let three = [
            Complex::new(-3.0, 0.0),
            Complex::new(-5.0, 0.0),
            Complex::new(-7.0, 0.0),
        ];
        assert!(matches!(
            pole_place(&lin.abar, &lin.bbar, &three),
            Err(SynthesisError::PoleCountMismatch { .. })
        ));
        let a = dmatrix![1.0, 0.0; 0.0, -1.0];
        let b = dmatrix![0.0; 1.0];
        let err = pole_place(&a, &b, &[Complex::new(-2.0, 0.0)]);
        assert!(matches!(err, Err(SynthesisError::NotStabilizable { .. })));
    }

    #[test]
    fn pole_place_complex_pair_and_validation() {
        let a = dmatrix![0.0, 1.0; 0.0, 0.0];
        let b = dmatrix![0.0; 1.0];
        let pair = [Complex::new(-1.0, 2.0), Complex::new(-1.0, -2.0)];
        let gain = pole_place(&a, &b, &pair).unwrap();
        let eigs = eigenvalues(&gain.closed_loop(&a, &b));
        let mut res: Vec<(f64, f64)> = eigs.iter().map(|c| (c.re, c.im)).collect();
        res.sort_by(|x, y| x.1.partial_cmp(&y.1).unwrap());
        assert_relative_eq!(res[0].0, -1.0, epsilon = 1e-8);
        assert_relative_eq!(res[0].1, -2.0, epsilon = 1e-8);
        let bad = [Complex::new(-1.0, 2.0), Complex::new(-1.0, 1.0)];
        assert!(matches!(
            pole_place(&a, &b, &bad),
            Err(SynthesisError::PolesNotConjugateClosed)
        ));
    }

    #[test]
    fn pole_place_multi_input() {
        let a = dmatrix![0.0, 1.0, 0.0; 0.0, 0.0, 1.0; -1.0, 0.5, -0.2];
        let b = dmatrix![1.0, 0.0; 0.0, 0.0; 0.0, 1.0];
        let poles = [
            Complex::new(-1.0, 0.0),
            Complex::new(-2.0, 1.0),
            Complex::new(-2.0, -1.0),
        ];
        let gain = pole_place(&a, &b, &poles).unwrap();
        let eigs = eigenvalues(&gain.closed_loop(&a, &b));
        let mut re: Vec<f64> = eigs.iter().map(|c| c.re).collect();
        re.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert_relative_eq!(re[0], -2.0, epsilon = 1e-6);
        assert_relative_eq!(re[2], -1.0, epsilon = 1e-6);
    }

    #[test]
    fn care_scalar_cases() {
        let (p, k) = solve_care(
            &dmatrix![0.0],
            &dmatrix![1.0],
            &dmatrix![1.0],
            &dmatrix![1.0],
        )
        .unwrap();
        assert_relative_eq!(p[(0, 0)], 1.0, epsilon = 1e-10);
        assert_relative_eq!(k.k[(0, 0)], 1.0, epsilon = 1e-10);

        // a=1, b=1, q=2, r=1: 2P − P² + 2 = 0 → P = 1 + √3, a − bK = −√3
        let (p, k) = solve_care(
            &dmatrix![1.0],
            &dmatrix![1.0],
            &dmatrix![2.0],
            &dmatrix![1.0],
        )
        .unwrap();
        assert_relative_eq!(p[(0, 0)], 1.0 + 3.0f64.sqrt(), epsilon = 1e-10);
        assert_relative_eq!(1.0 - k.k[(0, 0)], -(3.0f64.sqrt()), epsilon = 1e-10);
    }

    #[test]
    fn care_properties_on_embedded_pair() {
        let lin = section4_embedded(2.0);
        let q2 = DMatrix::<f64>::identity(3, 3);
        let r = dmatrix![1.0];
        let (p, gain) = solve_care(&lin.abar, &lin.bbar, &q2, &r).unwrap();
        let s = &lin.bbar * r.clone().try_inverse().unwrap() * lin.bbar.transpose();
        let res = (lin.abar.transpose() * &p + &p * &lin.abar - &p * &s * &p + &q2).norm();
        assert!(res <= 1e-10 * q2.norm().max(1.0), "residual {res:e}");
        let min_eig = nalgebra::SymmetricEigen::new(p.clone())
            .eigenvalues
            .iter()
            .fold(f64::MAX, |a, b| a.min(*b));
        assert!(min_eig >= -1e-10);
        let max_re = eigenvalues(&gain.closed_loop(&lin.abar, &lin.bbar))
            .iter()
            .fold(f64::MIN, |a, c| a.max(c.re));
        assert!(max_re < 0.0);
    }

    #[test]
    fn care_rejects_bad_weights() {
        let a = dmatrix![0.0];
        let b = dmatrix![1.0];
        assert!(matches!(
            solve_care(&a, &b, &dmatrix![1.0], &dmatrix![0.0]),
            Err(SynthesisError::InputWeightNotPd(_))
        ));
        let q_asym = dmatrix![1.0, 1.0; 0.0, 1.0];
        let a2 = DMatrix::<f64>::identity(2, 2) * -1.0;
        let b2 = dmatrix![1.0; 0.0];
        assert!(matches!(
            solve_care(&a2, &b2, &q_asym, &dmatrix![1.0]),
            Err(SynthesisError::NotSymmetric { .. })
        ));
    }

    #[test]
    fn uncontrollable_eigenvalue_is_feedback_invariant() {
        let lin = section4_embedded(2.0);
        for salt in 0..20u64 {
            let k = DMatrix::from_vec(1, 3, lcg_sequence::<f64>(3, salt));
            let eigs = eigenvalues(&(&lin.abar - &lin.bbar * &k));
            let found = eigs
                .iter()
                .any(|c| (c.re + 2.0).abs() <= 1e-8 && c.im.abs() <= 1e-8);
            assert!(found, "salt {salt}: barrier pole moved: {eigs:?}");
        }
    }

    #[test]
    fn lyapunov_oracle() {
        // A = −I: AᵀP + PA = −2P = −W ⇒ P = W/2
        let a = DMatrix::<f64>::identity(2, 2) * -1.0;
        let w = dmatrix![3.0, 1.0; 1.0, 2.0];
        let p = solve_lyapunov(&a, &w).unwrap();
        assert_relative_eq!((&p * 2.0 - &w).norm(), 0.0, epsilon = 1e-12);
    }
}
