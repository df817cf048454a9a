//! Closed expression trees for analytic dynamics.
//!
//! The node set is deliberately small: it is exactly what the built-in
//! plants, the three barrier kinds and their symbolic derivatives need.
//! Trees are interpreted pointwise (`eval`, IEEE semantics: out-of-domain
//! arguments propagate NaN/inf and are caught downstream) and over jets
//! (`eval_jet`, where poles at the expansion point are hard errors).
//!
//! Serialized form is a prefix s-expression, e.g. `["sin", ["var", 0]]`;
//! bare numbers are constants.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use serde::de::Error as DeError;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use super::jet::{jet_atanh_exp_neg, jet_log, jet_recip, JetError};
use super::poly::PolyMap;
use crate::Scalar;

#[derive(Debug, Error)]
pub enum ExprError {
    #[error("expression references variable {var} but only {num_vars} are available")]
    VariableOutOfRange { var: usize, num_vars: usize },
}

/// An analytic scalar expression over variables `x_0 … x_{n−1}`.
///
/// Subtrees are reference-counted so that symbolic differentiation (which
/// duplicates subexpressions through the product rule) stays cheap.
#[derive(Clone, Debug, PartialEq)]
pub enum Expr<T> {
    Const(T),
    Var(usize),
    Add(Arc<Expr<T>>, Arc<Expr<T>>),
    Sub(Arc<Expr<T>>, Arc<Expr<T>>),
    Mul(Arc<Expr<T>>, Arc<Expr<T>>),
    Neg(Arc<Expr<T>>),
    Recip(Arc<Expr<T>>),
    Pow(Arc<Expr<T>>, u32),
    Sin(Arc<Expr<T>>),
    Cos(Arc<Expr<T>>),
    Tanh(Arc<Expr<T>>),
    Sinh(Arc<Expr<T>>),
    Exp(Arc<Expr<T>>),
    Log(Arc<Expr<T>>),
    /// Fused `atanh(e^{−x})`: the inverse-hyperbolic barrier up to a factor 2.
    AtanhExpNeg(Arc<Expr<T>>),
}

impl<T: Scalar> Expr<T> {
    pub fn constant(v: T) -> Self {
        Expr::Const(v)
    }

    pub fn var(i: usize) -> Self {
        Expr::Var(i)
    }

    pub fn recip(self) -> Self {
        Expr::Recip(Arc::new(self))
    }

    pub fn pow(self, k: u32) -> Self {
        Expr::Pow(Arc::new(self), k)
    }

    pub fn sin(self) -> Self {
        Expr::Sin(Arc::new(self))
    }

    pub fn cos(self) -> Self {
        Expr::Cos(Arc::new(self))
    }

    pub fn tanh(self) -> Self {
        Expr::Tanh(Arc::new(self))
    }

    pub fn sinh(self) -> Self {
        Expr::Sinh(Arc::new(self))
    }

    pub fn exp(self) -> Self {
        Expr::Exp(Arc::new(self))
    }

    pub fn log(self) -> Self {
        Expr::Log(Arc::new(self))
    }

    pub fn atanh_exp_neg(self) -> Self {
        Expr::AtanhExpNeg(Arc::new(self))
    }

    /// Largest variable index referenced, if any.
    pub fn max_var(&self) -> Option<usize> {
        match self {
            Expr::Const(_) => None,
            Expr::Var(i) => Some(*i),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) => {
                match (a.max_var(), b.max_var()) {
                    (Some(x), Some(y)) => Some(x.max(y)),
                    (x, y) => x.or(y),
                }
            }
            Expr::Neg(a)
            | Expr::Recip(a)
            | Expr::Pow(a, _)
            | Expr::Sin(a)
            | Expr::Cos(a)
            | Expr::Tanh(a)
            | Expr::Sinh(a)
            | Expr::Exp(a)
            | Expr::Log(a)
            | Expr::AtanhExpNeg(a) => a.max_var(),
        }
    }

    pub fn check_arity(&self, num_vars: usize) -> Result<(), ExprError> {
        match self.max_var() {
            Some(v) if v >= num_vars => Err(ExprError::VariableOutOfRange { var: v, num_vars }),
            _ => Ok(()),
        }
    }

    /// Pointwise evaluation. Out-of-domain arguments follow IEEE float
    /// semantics (`ln` of a negative is NaN, `1/0` is inf); the simulation
    /// layer converts non-finite dynamics into flagged events.
    pub fn eval(&self, x: &[T]) -> T {
        match self {
            Expr::Const(c) => *c,
            Expr::Var(i) => x[*i],
            Expr::Add(a, b) => a.eval(x) + b.eval(x),
            Expr::Sub(a, b) => a.eval(x) - b.eval(x),
            Expr::Mul(a, b) => a.eval(x) * b.eval(x),
            Expr::Neg(a) => -a.eval(x),
            Expr::Recip(a) => a.eval(x).recip(),
            Expr::Pow(a, k) => a.eval(x).powi(*k as i32),
            Expr::Sin(a) => a.eval(x).sin(),
            Expr::Cos(a) => a.eval(x).cos(),
            Expr::Tanh(a) => a.eval(x).tanh(),
            Expr::Sinh(a) => a.eval(x).sinh(),
            Expr::Exp(a) => a.eval(x).exp(),
            Expr::Log(a) => a.eval(x).ln(),
            Expr::AtanhExpNeg(a) => {
                // atanh(e^{-y}) = (ln(1+e^{-y}) - ln(1-e^{-y})) / 2, with
                // ln1p/expm1 branches keeping accuracy across the range
                let y = a.eval(x);
                let u = (-y).exp();
                let b = if u < T::lit(0.5) {
                    u.ln_1p() - (-u).ln_1p()
                } else {
                    u.ln_1p() - (-(-y).exp_m1()).ln()
                };
                b * T::lit(0.5)
            }
        }
    }

    /// Truncated Taylor expansion around `seeds` (one jet per variable, as
    /// produced by [`super::Jet::seeds`]).
    pub fn eval_jet(&self, seeds: &[PolyMap<T>]) -> Result<PolyMap<T>, JetError> {
        let nv = seeds[0].num_vars();
        let d = seeds[0].max_degree();
        Ok(match self {
            Expr::Const(c) => PolyMap::constant(*c, nv, d),
            Expr::Var(i) => seeds[*i].clone(),
            Expr::Add(a, b) => a.eval_jet(seeds)?.add(&b.eval_jet(seeds)?),
            Expr::Sub(a, b) => a.eval_jet(seeds)?.sub(&b.eval_jet(seeds)?),
            Expr::Mul(a, b) => a.eval_jet(seeds)?.mul(&b.eval_jet(seeds)?),
            Expr::Neg(a) => a.eval_jet(seeds)?.neg(),
            Expr::Recip(a) => jet_recip(&a.eval_jet(seeds)?)?,
            Expr::Pow(a, k) => a.eval_jet(seeds)?.powi(*k),
            Expr::Sin(a) => super::jet_compose(super::JetOp::Sin, &[a.eval_jet(seeds)?])?,
            Expr::Cos(a) => super::jet_compose(super::JetOp::Cos, &[a.eval_jet(seeds)?])?,
            Expr::Tanh(a) => super::jet_compose(super::JetOp::Tanh, &[a.eval_jet(seeds)?])?,
            Expr::Sinh(a) => super::jet_compose(super::JetOp::Sinh, &[a.eval_jet(seeds)?])?,
            Expr::Exp(a) => super::jet_compose(super::JetOp::Exp, &[a.eval_jet(seeds)?])?,
            Expr::Log(a) => jet_log(&a.eval_jet(seeds)?)?,
            Expr::AtanhExpNeg(a) => jet_atanh_exp_neg(&a.eval_jet(seeds)?)?,
        })
    }

    /// Symbolic partial derivative with respect to `x_var`.
    pub fn diff(&self, var: usize) -> Expr<T> {
        use Expr::*;
        match self {
            Const(_) => Const(T::zero()),
            Var(i) => Const(if *i == var { T::one() } else { T::zero() }),
            Add(a, b) => add_s(a.diff(var), b.diff(var)),
            Sub(a, b) => sub_s(a.diff(var), b.diff(var)),
            Mul(a, b) => add_s(
                mul_s(a.diff(var), (**b).clone()),
                mul_s((**a).clone(), b.diff(var)),
            ),
            Neg(a) => neg_s(a.diff(var)),
            // d(1/a) = -a' / a^2
            Recip(a) => neg_s(mul_s(
                a.diff(var),
                Pow(Arc::new(Recip(a.clone())), 2),
            )),
            // d(a^k) = k a^{k-1} a'
            Pow(a, k) => {
                if *k == 0 {
                    Const(T::zero())
                } else {
                    let base = if *k == 1 {
                        Const(T::one())
                    } else if *k == 2 {
                        (**a).clone()
                    } else {
                        Pow(a.clone(), k - 1)
                    };
                    mul_s(mul_s(Const(T::from_u32(*k).unwrap()), base), a.diff(var))
                }
            }
            Sin(a) => mul_s(Cos(a.clone()), a.diff(var)),
            Cos(a) => neg_s(mul_s(Sin(a.clone()), a.diff(var))),
            // tanh' = 1 - tanh^2
            Tanh(a) => mul_s(
                sub_s(Const(T::one()), Pow(Arc::new(Tanh(a.clone())), 2)),
                a.diff(var),
            ),
            // sinh' = cosh = (e^a + e^{-a})/2
            Sinh(a) => mul_s(
                mul_s(
                    Const(T::lit(0.5)),
                    add_s(Exp(a.clone()), Exp(Arc::new(Neg(a.clone())))),
                ),
                a.diff(var),
            ),
            Exp(a) => mul_s(Exp(a.clone()), a.diff(var)),
            Log(a) => mul_s(Recip(a.clone()), a.diff(var)),
            // d atanh(e^{-a}) = -a' / (2 sinh a)
            AtanhExpNeg(a) => neg_s(mul_s(
                mul_s(Const(T::lit(0.5)), Recip(Arc::new(Sinh(a.clone())))),
                a.diff(var),
            )),
        }
    }
}

// Peephole constructors: fold the identity/annihilator cases so that
// derivative trees stay small. No further simplification by design.
fn add_s<T: Scalar>(a: Expr<T>, b: Expr<T>) -> Expr<T> {
    match (a, b) {
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x + y),
        (Expr::Const(x), b) if x == T::zero() => b,
        (a, Expr::Const(y)) if y == T::zero() => a,
        (a, b) => Expr::Add(Arc::new(a), Arc::new(b)),
    }
}

fn sub_s<T: Scalar>(a: Expr<T>, b: Expr<T>) -> Expr<T> {
    match (a, b) {
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x - y),
        (a, Expr::Const(y)) if y == T::zero() => a,
        (Expr::Const(x), b) if x == T::zero() => neg_s(b),
        (a, b) => Expr::Sub(Arc::new(a), Arc::new(b)),
    }
}

fn mul_s<T: Scalar>(a: Expr<T>, b: Expr<T>) -> Expr<T> {
    match (a, b) {
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x * y),
        (Expr::Const(x), _) | (_, Expr::Const(x)) if x == T::zero() => Expr::Const(T::zero()),
        (Expr::Const(x), b) if x == T::one() => b,
        (a, Expr::Const(y)) if y == T::one() => a,
        (a, b) => Expr::Mul(Arc::new(a), Arc::new(b)),
    }
}

fn neg_s<T: Scalar>(a: Expr<T>) -> Expr<T> {
    match a {
        Expr::Const(x) => Expr::Const(-x),
        Expr::Neg(inner) => (*inner).clone(),
        a => Expr::Neg(Arc::new(a)),
    }
}

impl<T: Scalar> Add for Expr<T> {
    type Output = Expr<T>;
    fn add(self, rhs: Expr<T>) -> Expr<T> {
        add_s(self, rhs)
    }
}

impl<T: Scalar> Sub for Expr<T> {
    type Output = Expr<T>;
    fn sub(self, rhs: Expr<T>) -> Expr<T> {
        sub_s(self, rhs)
    }
}

impl<T: Scalar> Mul for Expr<T> {
    type Output = Expr<T>;
    fn mul(self, rhs: Expr<T>) -> Expr<T> {
        mul_s(self, rhs)
    }
}

impl<T: Scalar> Neg for Expr<T> {
    type Output = Expr<T>;
    fn neg(self) -> Expr<T> {
        neg_s(self)
    }
}

impl<T: Scalar> fmt::Display for Expr<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Var(i) => write!(f, "x{i}"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Recip(a) => write!(f, "(1/{a})"),
            Expr::Pow(a, k) => write!(f, "{a}^{k}"),
            Expr::Sin(a) => write!(f, "sin({a})"),
            Expr::Cos(a) => write!(f, "cos({a})"),
            Expr::Tanh(a) => write!(f, "tanh({a})"),
            Expr::Sinh(a) => write!(f, "sinh({a})"),
            Expr::Exp(a) => write!(f, "exp({a})"),
            Expr::Log(a) => write!(f, "log({a})"),
            Expr::AtanhExpNeg(a) => write!(f, "atanhexpneg({a})"),
        }
    }
}

// --- s-expression serde -------------------------------------------------

impl<T: Scalar> Serialize for Expr<T> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        to_value(self).serialize(serializer)
    }
}

fn to_value<T: Scalar>(e: &Expr<T>) -> serde_json::Value {
    use serde_json::{json, Value};
    let num = |c: &T| Value::from(c.as_f64());
    match e {
        Expr::Const(c) => num(c),
        Expr::Var(i) => json!(["var", i]),
        Expr::Add(a, b) => json!(["add", to_value(a), to_value(b)]),
        Expr::Sub(a, b) => json!(["sub", to_value(a), to_value(b)]),
        Expr::Mul(a, b) => json!(["mul", to_value(a), to_value(b)]),
        Expr::Neg(a) => json!(["neg", to_value(a)]),
        Expr::Recip(a) => json!(["recip", to_value(a)]),
        Expr::Pow(a, k) => json!(["pow", to_value(a), k]),
        Expr::Sin(a) => json!(["sin", to_value(a)]),
        Expr::Cos(a) => json!(["cos", to_value(a)]),
        Expr::Tanh(a) => json!(["tanh", to_value(a)]),
        Expr::Sinh(a) => json!(["sinh", to_value(a)]),
        Expr::Exp(a) => json!(["exp", to_value(a)]),
        Expr::Log(a) => json!(["log", to_value(a)]),
        Expr::AtanhExpNeg(a) => json!(["atanhexpneg", to_value(a)]),
    }
}

fn from_value<T: Scalar, E: DeError>(v: &serde_json::Value) -> Result<Expr<T>, E> {
    use serde_json::Value;
    match v {
        Value::Number(n) => {
            let f = n
                .as_f64()
                .ok_or_else(|| E::custom("constant is not a finite number"))?;
            Ok(Expr::Const(T::lit(f)))
        }
        Value::Array(items) => {
            let tag = items
                .first()
                .and_then(Value::as_str)
                .ok_or_else(|| E::custom("s-expression must start with an operator tag"))?;
            let unary = |items: &[Value]| -> Result<Arc<Expr<T>>, E> {
                if items.len() != 2 {
                    return Err(E::custom(format!("\"{tag}\" expects one argument")));
                }
                Ok(Arc::new(from_value(&items[1])?))
            };
            let binary = |items: &[Value]| -> Result<(Arc<Expr<T>>, Arc<Expr<T>>), E> {
                if items.len() != 3 {
                    return Err(E::custom(format!("\"{tag}\" expects two arguments")));
                }
                Ok((
                    Arc::new(from_value(&items[1])?),
                    Arc::new(from_value(&items[2])?),
                ))
            };
            match tag {
                "var" => {
                    let i = items
                        .get(1)
                        .and_then(Value::as_u64)
                        .ok_or_else(|| E::custom("\"var\" expects an index"))?;
                    Ok(Expr::Var(i as usize))
                }
                "const" => {
                    let f = items
                        .get(1)
                        .and_then(Value::as_f64)
                        .ok_or_else(|| E::custom("\"const\" expects a number"))?;
                    Ok(Expr::Const(T::lit(f)))
                }
                "add" => binary(items).map(|(a, b)| Expr::Add(a, b)),
                "sub" => binary(items).map(|(a, b)| Expr::Sub(a, b)),
                "mul" => binary(items).map(|(a, b)| Expr::Mul(a, b)),
                "neg" => unary(items).map(Expr::Neg),
                "recip" => unary(items).map(Expr::Recip),
                "pow" => {
                    if items.len() != 3 {
                        return Err(E::custom("\"pow\" expects a base and an exponent"));
                    }
                    let k = items[2]
                        .as_u64()
                        .ok_or_else(|| E::custom("\"pow\" exponent must be a nonnegative integer"))?;
                    Ok(Expr::Pow(Arc::new(from_value(&items[1])?), k as u32))
                }
                "sin" => unary(items).map(Expr::Sin),
                "cos" => unary(items).map(Expr::Cos),
                "tanh" => unary(items).map(Expr::Tanh),
                "sinh" => unary(items).map(Expr::Sinh),
                "exp" => unary(items).map(Expr::Exp),
                "log" => unary(items).map(Expr::Log),
                "atanhexpneg" => unary(items).map(Expr::AtanhExpNeg),
                other => Err(E::custom(format!("unknown operator \"{other}\""))),
            }
        }
        _ => Err(E::custom("expression must be a number or an s-expression")),
    }
}

impl<'de, T: Scalar> Deserialize<'de> for Expr<T> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let v = serde_json::Value::deserialize(deserializer)?;
        from_value(&v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::Jet;
    use approx::assert_relative_eq;

    fn x() -> Expr<f64> {
        Expr::var(0)
    }

    fn y() -> Expr<f64> {
        Expr::var(1)
    }

    #[test]
    fn eval_and_diff_agree_with_finite_differences() {
        // e = sin(x) * tanh(y) + 1/(x + 2) - atanhexpneg(y + 1)
        let e = x().sin() * y().tanh() + (x() + Expr::constant(2.0)).recip()
            - (y() + Expr::constant(1.0)).atanh_exp_neg();
        let at = [0.4, -0.3];
        let h = 1e-6;
        for var in 0..2 {
            let dsym = e.diff(var).eval(&at);
            let mut xp = at;
            let mut xm = at;
            xp[var] += h;
            xm[var] -= h;
            let dfd = (e.eval(&xp) - e.eval(&xm)) / (2.0 * h);
            assert_relative_eq!(dsym, dfd, max_relative = 1e-8);
        }
    }

    #[test]
    fn jet_constant_term_is_pointwise_value() {
        let e = (x() * x() + Expr::constant(1.5)).log() + y().cos();
        let center = [0.7, 0.2];
        let seeds = Jet::seeds(&center, 4);
        let jet = e.eval_jet(&seeds).unwrap();
        assert_relative_eq!(jet.constant_term(), e.eval(&center), max_relative = 1e-14);
    }

    #[test]
    fn sexpr_round_trip() {
        let e = (Expr::constant(3.0) * x()).sin() - (y().pow(2) + Expr::constant(1.0)).recip();
        let json = serde_json::to_string(&e).unwrap();
        let back: Expr<f64> = serde_json::from_str(&json).unwrap();
        assert_eq!(e, back);
        // and the documented surface form parses
        let parsed: Expr<f64> = serde_json::from_str(r#"["sin", ["var", 0]]"#).unwrap();
        assert_eq!(parsed, x().sin());
        assert_relative_eq!(parsed.eval(&[0.25]), 0.25f64.sin());
    }

    #[test]
    fn unknown_operator_is_rejected() {
        let r: Result<Expr<f64>, _> = serde_json::from_str(r#"["foo", 1.0]"#);
        assert!(r.is_err());
    }
}
