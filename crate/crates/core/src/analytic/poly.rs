//! Sparse multivariate polynomials over a graded-lex monomial order.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::Scalar;

/// Exponent multi-index of a monomial, one entry per variable.
///
/// Ordered graded-lexicographically: lower total degree first, ties broken
/// lexicographically. This fixes a deterministic basis for the per-degree
/// linear solves in the HJB recursion and for serialization.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MultiIndex(pub Vec<u32>);

impl MultiIndex {
    pub fn zeros(num_vars: usize) -> Self {
        MultiIndex(vec![0; num_vars])
    }

    pub fn unit(var: usize, num_vars: usize) -> Self {
        let mut e = vec![0; num_vars];
        e[var] = 1;
        MultiIndex(e)
    }

    /// Total degree `|α| = Σ α_i`.
    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn pointwise_sum(&self, other: &Self) -> Self {
        MultiIndex(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| a + b)
                .collect(),
        )
    }
}

impl Ord for MultiIndex {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.degree()
            .cmp(&other.degree())
            .then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for MultiIndex {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{e}")?;
        }
        write!(f, "]")
    }
}

/// All multi-indices of total degree exactly `degree` in `num_vars`
/// variables, in graded-lex order.
pub fn monomials_of_degree(num_vars: usize, degree: u32) -> Vec<MultiIndex> {
    let mut out = Vec::new();
    let mut cur = vec![0u32; num_vars];
    fn rec(cur: &mut Vec<u32>, pos: usize, rem: u32, out: &mut Vec<MultiIndex>) {
        if pos + 1 == cur.len() {
            cur[pos] = rem;
            out.push(MultiIndex(cur.clone()));
            return;
        }
        for e in 0..=rem {
            cur[pos] = e;
            rec(cur, pos + 1, rem - e, out);
        }
    }
    if num_vars == 0 {
        if degree == 0 {
            out.push(MultiIndex(Vec::new()));
        }
        return out;
    }
    rec(&mut cur, 0, degree, &mut out);
    out.sort();
    out
}

/// Sparse multivariate polynomial truncated at a fixed total degree.
///
/// Exact zero coefficients are never stored, so `==` is term-set equality.
/// Every arithmetic operation truncates its result at the operands'
/// `max_degree`, which keeps jet arithmetic consistent: degree-d inputs
/// yield degree-d outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct PolyMap<T> {
    num_vars: usize,
    max_degree: u32,
    terms: BTreeMap<MultiIndex, T>,
}

impl<T: Scalar> PolyMap<T> {
    pub fn zero(num_vars: usize, max_degree: u32) -> Self {
        PolyMap {
            num_vars,
            max_degree,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(value: T, num_vars: usize, max_degree: u32) -> Self {
        let mut p = Self::zero(num_vars, max_degree);
        p.add_term(MultiIndex::zeros(num_vars), value);
        p
    }

    /// The affine seed `center + x_var`, the jet of the coordinate function.
    pub fn variable(var: usize, center: T, num_vars: usize, max_degree: u32) -> Self {
        assert!(var < num_vars, "variable index out of range");
        let mut p = Self::constant(center, num_vars, max_degree);
        if max_degree >= 1 {
            p.add_term(MultiIndex::unit(var, num_vars), T::one());
        }
        p
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn max_degree(&self) -> u32 {
        self.max_degree
    }

    pub fn terms(&self) -> impl Iterator<Item = (&MultiIndex, &T)> {
        self.terms.iter()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coefficient(&self, index: &MultiIndex) -> T {
        self.terms.get(index).copied().unwrap_or_else(T::zero)
    }

    pub fn constant_term(&self) -> T {
        self.coefficient(&MultiIndex::zeros(self.num_vars))
    }

    /// Adds `coef · x^index`, dropping the term if it cancels to exact zero.
    pub fn add_term(&mut self, index: MultiIndex, coef: T) {
        assert_eq!(index.len(), self.num_vars, "multi-index arity mismatch");
        if index.degree() > self.max_degree || coef == T::zero() {
            return;
        }
        let entry = self.terms.entry(index);
        match entry {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(coef);
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                let s = *o.get() + coef;
                if s == T::zero() {
                    o.remove();
                } else {
                    *o.get_mut() = s;
                }
            }
        }
    }

    fn assert_compatible(&self, other: &Self) {
        assert_eq!(self.num_vars, other.num_vars, "num_vars mismatch");
        assert_eq!(self.max_degree, other.max_degree, "max_degree mismatch");
    }

    pub fn add(&self, other: &Self) -> Self {
        self.assert_compatible(other);
        let mut out = self.clone();
        for (k, v) in &other.terms {
            out.add_term(k.clone(), *v);
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.assert_compatible(other);
        let mut out = self.clone();
        for (k, v) in &other.terms {
            out.add_term(k.clone(), -*v);
        }
        out
    }

    pub fn neg(&self) -> Self {
        self.scale(-T::one())
    }

    pub fn scale(&self, s: T) -> Self {
        let mut out = Self::zero(self.num_vars, self.max_degree);
        if s == T::zero() {
            return out;
        }
        for (k, v) in &self.terms {
            out.add_term(k.clone(), *v * s);
        }
        out
    }

    /// Product truncated at the shared `max_degree`.
    pub fn mul(&self, other: &Self) -> Self {
        self.assert_compatible(other);
        let mut out = Self::zero(self.num_vars, self.max_degree);
        for (ka, va) in &self.terms {
            let rem = self.max_degree - ka.degree();
            for (kb, vb) in &other.terms {
                if kb.degree() > rem {
                    continue;
                }
                out.add_term(ka.pointwise_sum(kb), *va * *vb);
            }
        }
        out
    }

    pub fn powi(&self, k: u32) -> Self {
        let mut out = Self::constant(T::one(), self.num_vars, self.max_degree);
        for _ in 0..k {
            out = out.mul(self);
        }
        out
    }

    pub fn eval(&self, x: &[T]) -> T {
        assert_eq!(x.len(), self.num_vars, "evaluation point arity mismatch");
        let mut total = T::zero();
        for (k, v) in &self.terms {
            let mut term = *v;
            for (e, xi) in k.0.iter().zip(x) {
                if *e > 0 {
                    term *= xi.powi(*e as i32);
                }
            }
            total += term;
        }
        total
    }

    /// Exact partial derivative; the result keeps the same `max_degree`.
    pub fn partial_derivative(&self, var: usize) -> Self {
        assert!(var < self.num_vars);
        let mut out = Self::zero(self.num_vars, self.max_degree);
        for (k, v) in &self.terms {
            if k.0[var] == 0 {
                continue;
            }
            let mut e = k.clone();
            e.0[var] -= 1;
            out.add_term(e, *v * T::from_u32(k.0[var]).unwrap());
        }
        out
    }

    pub fn gradient_at(&self, x: &[T]) -> Vec<T> {
        (0..self.num_vars)
            .map(|i| self.partial_derivative(i).eval(x))
            .collect()
    }

    /// The homogeneous part of total degree `degree`.
    pub fn homogeneous_part(&self, degree: u32) -> Self {
        let mut out = Self::zero(self.num_vars, self.max_degree);
        for (k, v) in &self.terms {
            if k.degree() == degree {
                out.add_term(k.clone(), *v);
            }
        }
        out
    }

    /// Re-truncates to a lower maximum degree.
    pub fn truncated(&self, max_degree: u32) -> Self {
        let mut out = Self::zero(self.num_vars, max_degree);
        for (k, v) in &self.terms {
            out.add_term(k.clone(), *v);
        }
        out
    }

    /// Lifts to a polynomial in `num_vars` additional trailing variables.
    pub fn lifted(&self, extra_vars: usize) -> Self {
        let nv = self.num_vars + extra_vars;
        let mut out = Self::zero(nv, self.max_degree);
        for (k, v) in &self.terms {
            let mut e = k.0.clone();
            e.extend(std::iter::repeat(0).take(extra_vars));
            out.add_term(MultiIndex(e), *v);
        }
        out
    }

    /// `H[i][j] = ∂²p/∂x_i∂x_j (0)`, read off the degree-2 coefficients.
    pub fn hessian_at_zero(&self) -> nalgebra::DMatrix<T> {
        let n = self.num_vars;
        let mut h = nalgebra::DMatrix::zeros(n, n);
        let two = T::from_u32(2).unwrap();
        for (k, v) in &self.terms {
            if k.degree() != 2 {
                continue;
            }
            let nz: Vec<usize> = (0..n).filter(|i| k.0[*i] > 0).collect();
            if nz.len() == 1 {
                h[(nz[0], nz[0])] = two * *v;
            } else {
                h[(nz[0], nz[1])] = *v;
                h[(nz[1], nz[0])] = *v;
            }
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(pairs: &[(&[u32], f64)], nv: usize, d: u32) -> PolyMap<f64> {
        let mut out = PolyMap::zero(nv, d);
        for (e, c) in pairs {
            out.add_term(MultiIndex(e.to_vec()), *c);
        }
        out
    }

    #[test]
    fn grlex_order_sorts_by_degree_then_lex() {
        let a = MultiIndex(vec![0, 2]);
        let b = MultiIndex(vec![1, 0]);
        assert!(b < a); // degree 1 < degree 2
        let c = MultiIndex(vec![1, 1]);
        let d = MultiIndex(vec![0, 2]);
        assert!(d < c); // same degree, lex on exponents
    }

    #[test]
    fn monomial_basis_counts() {
        // C(nv + k - 1, k)
        assert_eq!(monomials_of_degree(3, 3).len(), 10);
        assert_eq!(monomials_of_degree(7, 4).len(), 210);
        assert_eq!(monomials_of_degree(2, 0).len(), 1);
        let basis = monomials_of_degree(3, 2);
        let mut sorted = basis.clone();
        sorted.sort();
        assert_eq!(basis, sorted);
    }

    #[test]
    fn product_truncates_and_cancels() {
        let one_plus_x = p(&[(&[0], 1.0), (&[1], 1.0)], 1, 2);
        let sq = one_plus_x.mul(&one_plus_x);
        assert_eq!(sq.coefficient(&MultiIndex(vec![0])), 1.0);
        assert_eq!(sq.coefficient(&MultiIndex(vec![1])), 2.0);
        assert_eq!(sq.coefficient(&MultiIndex(vec![2])), 1.0);

        let cancel = one_plus_x.sub(&one_plus_x);
        assert!(cancel.is_zero());

        // degree-2 operands stay degree-2: the x^4 term of (x^2)^2 is dropped
        let x2 = p(&[(&[2], 1.0)], 1, 2);
        assert!(x2.mul(&x2).is_zero());
    }

    #[test]
    fn hessian_reads_quadratic_coefficients() {
        // q = x0^2 + 3 x0 x1 + 5 x1^2
        let q = p(&[(&[2, 0], 1.0), (&[1, 1], 3.0), (&[0, 2], 5.0)], 2, 2);
        let h = q.hessian_at_zero();
        assert_eq!(h[(0, 0)], 2.0);
        assert_eq!(h[(0, 1)], 3.0);
        assert_eq!(h[(1, 0)], 3.0);
        assert_eq!(h[(1, 1)], 10.0);
    }

    #[test]
    fn partial_derivative_matches_calculus() {
        // p = 2 x0^2 x1 => dp/dx0 = 4 x0 x1
        let q = p(&[(&[2, 1], 2.0)], 2, 3);
        let dq = q.partial_derivative(0);
        assert_eq!(dq.coefficient(&MultiIndex(vec![1, 1])), 4.0);
        assert_eq!(dq.num_terms(), 1);
    }

    proptest! {
        // evaluation is a ring homomorphism as long as no truncation occurs
        #[test]
        fn eval_respects_add_and_mul(
            ca in proptest::collection::vec(-2.0f64..2.0, 3),
            cb in proptest::collection::vec(-2.0f64..2.0, 3),
            x in proptest::collection::vec(-1.5f64..1.5, 2),
        ) {
            // degree-1 polys in 2 vars, product fits in max_degree 2
            let a = p(&[(&[0,0], ca[0]), (&[1,0], ca[1]), (&[0,1], ca[2])], 2, 2);
            let b = p(&[(&[0,0], cb[0]), (&[1,0], cb[1]), (&[0,1], cb[2])], 2, 2);
            let s = a.add(&b).eval(&x);
            let m = a.mul(&b).eval(&x);
            let (ea, eb) = (a.eval(&x), b.eval(&x));
            prop_assert!((s - (ea + eb)).abs() <= 1e-12);
            prop_assert!((m - ea * eb).abs() <= 1e-10);
        }
    }
}
