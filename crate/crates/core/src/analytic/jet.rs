//! Composition of elementary functions with truncated Taylor series.
//!
//! Every elementary map `F` is applied to a jet `p = c + q` (constant term
//! `c`, nilpotent part `q`) through its univariate derivative table at `c`:
//!
//! `F(c + q) = Σ_k F^{(k)}(c)/k! · q^k`, truncated at the jet degree.
//!
//! Because `q` has no constant term, `q^k` only contributes monomials of
//! degree ≥ k and the sum is finite.

use thiserror::Error;

use super::poly::PolyMap;
use crate::Scalar;

/// Elementary operations supported over jets. `AtanhExpNeg` is the fused
/// map `x ↦ atanh(e^{−x})`, the inverse-hyperbolic barrier function up to
/// the factor 2; it keeps the barrier catalog closed under jet evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JetOp {
    Add,
    Sub,
    Mul,
    Recip,
    Sin,
    Cos,
    Tanh,
    Sinh,
    Exp,
    Log,
    AtanhExpNeg,
}

#[derive(Debug, Error, PartialEq)]
pub enum JetError {
    /// Composition hit a singularity at the expansion point, e.g. the
    /// reciprocal of a jet whose value at the center is zero.
    #[error("pole at expansion point: {op:?} applied to a jet with constant term {value}")]
    PoleAtExpansionPoint { op: &'static str, value: f64 },
    #[error("{op:?} expects {expected} operand(s), got {got}")]
    ArityMismatch {
        op: JetOp,
        expected: usize,
        got: usize,
    },
}

/// A truncated Taylor expansion of a vector-valued map: one [`PolyMap`]
/// per output coordinate, in the offset variables `x − center`.
#[derive(Clone, Debug, PartialEq)]
pub struct Jet<T> {
    pub center: Vec<T>,
    pub components: Vec<PolyMap<T>>,
}

impl<T: Scalar> Jet<T> {
    /// Jets of the coordinate functions themselves: component `i` is
    /// `center_i + δx_i`.
    pub fn seeds(center: &[T], max_degree: u32) -> Vec<PolyMap<T>> {
        (0..center.len())
            .map(|i| PolyMap::variable(i, center[i], center.len(), max_degree))
            .collect()
    }
}

/// Applies `Σ_k derivs[k]/k! (p − c)^k` with `c` the constant term of `p`.
fn apply_series<T: Scalar>(derivs: &[T], p: &PolyMap<T>) -> PolyMap<T> {
    let nv = p.num_vars();
    let d = p.max_degree();
    let c = p.constant_term();
    let mut q = p.clone();
    q.add_term(super::poly::MultiIndex::zeros(nv), -c);
    let mut out = PolyMap::constant(derivs[0], nv, d);
    let mut q_pow = PolyMap::constant(T::one(), nv, d);
    let mut factorial = T::one();
    for (k, fk) in derivs.iter().enumerate().skip(1) {
        q_pow = q_pow.mul(&q);
        factorial *= T::from_usize(k).unwrap();
        if q_pow.is_zero() {
            break;
        }
        out = out.add(&q_pow.scale(*fk / factorial));
    }
    out
}

fn derivs_recip<T: Scalar>(c: T, order: u32) -> Vec<T> {
    // d^k/dc^k (1/c) = (-1)^k k! / c^{k+1}
    let mut out = Vec::with_capacity(order as usize + 1);
    let mut v = c.recip();
    out.push(v);
    for k in 1..=order {
        v = v * -T::from_u32(k).unwrap() / c;
        out.push(v);
    }
    out
}

fn derivs_exp<T: Scalar>(c: T, order: u32) -> Vec<T> {
    vec![c.exp(); order as usize + 1]
}

fn derivs_log<T: Scalar>(c: T, order: u32) -> Vec<T> {
    // d^k/dc^k ln c = (-1)^{k-1} (k-1)! / c^k
    let mut out = Vec::with_capacity(order as usize + 1);
    out.push(c.ln());
    if order >= 1 {
        let mut v = c.recip();
        out.push(v);
        for k in 2..=order {
            v = v * -T::from_u32(k - 1).unwrap() / c;
            out.push(v);
        }
    }
    out
}

fn derivs_sin<T: Scalar>(c: T, order: u32) -> Vec<T> {
    let (s, co) = (c.sin(), c.cos());
    (0..=order)
        .map(|k| match k % 4 {
            0 => s,
            1 => co,
            2 => -s,
            _ => -co,
        })
        .collect()
}

fn derivs_cos<T: Scalar>(c: T, order: u32) -> Vec<T> {
    let (s, co) = (c.sin(), c.cos());
    (0..=order)
        .map(|k| match k % 4 {
            0 => co,
            1 => -s,
            2 => -co,
            _ => s,
        })
        .collect()
}

fn derivs_sinh<T: Scalar>(c: T, order: u32) -> Vec<T> {
    let (sh, ch) = (c.sinh(), c.cosh());
    (0..=order).map(|k| if k % 2 == 0 { sh } else { ch }).collect()
}

/// Derivatives of tanh at `c` via the recurrence `P_{k+1}(t) = P_k'(t)(1−t²)`
/// on polynomials in `t = tanh c`.
fn derivs_tanh<T: Scalar>(c: T, order: u32) -> Vec<T> {
    let t = c.tanh();
    let mut poly: Vec<T> = vec![T::zero(), T::one()];
    let eval = |p: &[T]| {
        let mut acc = T::zero();
        for coef in p.iter().rev() {
            acc = acc * t + *coef;
        }
        acc
    };
    let mut out = vec![eval(&poly)];
    for _ in 1..=order {
        // derivative in t
        let dp: Vec<T> = (1..poly.len())
            .map(|i| poly[i] * T::from_usize(i).unwrap())
            .collect();
        // multiply by (1 - t^2)
        let mut next = vec![T::zero(); dp.len() + 2];
        for (i, coef) in dp.iter().enumerate() {
            next[i] += *coef;
            next[i + 2] -= *coef;
        }
        poly = next;
        out.push(eval(&poly));
    }
    out
}

pub(crate) fn jet_recip<T: Scalar>(p: &PolyMap<T>) -> Result<PolyMap<T>, JetError> {
    let c = p.constant_term();
    if c == T::zero() {
        return Err(JetError::PoleAtExpansionPoint {
            op: "recip",
            value: 0.0,
        });
    }
    Ok(apply_series(&derivs_recip(c, p.max_degree()), p))
}

pub(crate) fn jet_log<T: Scalar>(p: &PolyMap<T>) -> Result<PolyMap<T>, JetError> {
    let c = p.constant_term();
    if c <= T::zero() {
        return Err(JetError::PoleAtExpansionPoint {
            op: "log",
            value: c.as_f64(),
        });
    }
    Ok(apply_series(&derivs_log(c, p.max_degree()), p))
}

/// Jet of `x ↦ atanh(e^{−x})`, composed from exp and log jets:
/// with `u = e^{−x}`, `atanh u = ½(ln(1+u) − ln(1−u))`. Requires the
/// constant term positive so that `u < 1`.
pub(crate) fn jet_atanh_exp_neg<T: Scalar>(p: &PolyMap<T>) -> Result<PolyMap<T>, JetError> {
    let c = p.constant_term();
    if c <= T::zero() {
        return Err(JetError::PoleAtExpansionPoint {
            op: "atanh_exp_neg",
            value: c.as_f64(),
        });
    }
    let nv = p.num_vars();
    let d = p.max_degree();
    let u = apply_series(&derivs_exp(-c, d), &p.neg());
    let one = PolyMap::constant(T::one(), nv, d);
    let a = jet_log(&one.add(&u))?;
    let b = jet_log(&one.sub(&u))?;
    Ok(a.sub(&b).scale(T::lit(0.5)))
}

/// Truncated Taylor series of an elementary operation applied to jets.
/// Operands must share arity and truncation degree.
pub fn jet_compose<T: Scalar>(op: JetOp, operands: &[PolyMap<T>]) -> Result<PolyMap<T>, JetError> {
    let need = match op {
        JetOp::Add | JetOp::Sub | JetOp::Mul => 2,
        _ => 1,
    };
    if operands.len() != need {
        return Err(JetError::ArityMismatch {
            op,
            expected: need,
            got: operands.len(),
        });
    }
    let p = &operands[0];
    let d = p.max_degree();
    Ok(match op {
        JetOp::Add => p.add(&operands[1]),
        JetOp::Sub => p.sub(&operands[1]),
        JetOp::Mul => p.mul(&operands[1]),
        JetOp::Recip => jet_recip(p)?,
        JetOp::Sin => apply_series(&derivs_sin(p.constant_term(), d), p),
        JetOp::Cos => apply_series(&derivs_cos(p.constant_term(), d), p),
        JetOp::Tanh => apply_series(&derivs_tanh(p.constant_term(), d), p),
        JetOp::Sinh => apply_series(&derivs_sinh(p.constant_term(), d), p),
        JetOp::Exp => apply_series(&derivs_exp(p.constant_term(), d), p),
        JetOp::Log => jet_log(p)?,
        JetOp::AtanhExpNeg => jet_atanh_exp_neg(p)?,
    })
}
