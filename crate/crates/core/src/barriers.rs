//! Barrier-function catalog.
//!
//! Three kinds, each strictly decreasing on `η > 0` with `B(η) → ∞` as
//! `η → 0⁺` and `B(η) → 0` as `η → ∞`:
//!
//! | `ζ = B(η)`            | `φ0(ζ)`          | `φ1(ζ, η)`                    |
//! |-----------------------|------------------|-------------------------------|
//! | `log((1+η)/η)`        | `−4 sinh²(ζ/2)`  | `η(e^ζ−1)² − e^ζ + 1`         |
//! | `1/η`                 | `−ζ²`            | `ηζ² − ζ`                     |
//! | `2 atanh(e^{−η})`     | `−sinh ζ`        | `tanh(ζ/2) − e^{−η}`          |
//!
//! `φ0 = B′∘B⁻¹` realizes the chain rule for the barrier state without
//! ever inverting `B` at runtime; `φ1` vanishes on the graph `ζ = B(η)`
//! and its `ζ`-derivative is positive there, which restores
//! stabilizability of the augmented origin.
//!
//! The log and inverse-hyperbolic forms are evaluated through
//! `exp_m1`/`ln_1p` so the graph identities hold to 1e-12 over a wide
//! range. They still overflow once `|ζ|` passes roughly 700 (`sinh`/`exp`
//! leave f64 range); the simulation layer converts such non-finite values
//! into barrier-blowup events instead of propagating infinities.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Scalar;

/// `|ζ|` beyond which the log / inverse-hyperbolic `φ` evaluations leave
/// f64 range. Finite results are not guaranteed past this point.
pub const ZETA_OVERFLOW_CAP: f64 = 700.0;

#[derive(Debug, Error, PartialEq)]
pub enum BarrierError {
    #[error("barrier function requires a positive argument, got {value}")]
    NonPositiveArgument { value: f64 },
    #[error("barrier rate gamma must be positive, got {value}")]
    NonPositiveGamma { value: f64 },
    #[error("constraint must be strictly satisfied at the origin: h(0) = {value}")]
    UnsafeOrigin { value: f64 },
}

/// The three supported barrier-function shapes.
///
/// Serialized in scenario files as `"inverse" | "log" | "invhyp"`.
/// User-defined kinds are out of scope; adding one means extending this
/// enum and the match arms below (plus an expression builder in
/// `embedding`), nothing else.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BarrierKind {
    /// `B(η) = 1/η` (Carroll barrier).
    #[serde(rename = "inverse")]
    Inverse,
    /// `B(η) = log((1+η)/η)`.
    #[serde(rename = "log")]
    Log,
    /// `B(η) = 2 atanh(e^{−η})`, analytic with a known power series.
    #[serde(rename = "invhyp")]
    InvHyperbolic,
}

fn check_positive<T: Scalar>(value: T) -> Result<(), BarrierError> {
    if value > T::zero() {
        Ok(())
    } else {
        Err(BarrierError::NonPositiveArgument {
            value: value.as_f64(),
        })
    }
}

/// `B(η)` for `η > 0`.
pub fn bf_value<T: Scalar>(kind: BarrierKind, eta: T) -> Result<T, BarrierError> {
    check_positive(eta)?;
    Ok(match kind {
        BarrierKind::Inverse => eta.recip(),
        // log((1+η)/η) = ln1p(1/η)
        BarrierKind::Log => eta.recip().ln_1p(),
        // 2 atanh(e^{−η}) = ln(1+e^{−η}) − ln(1−e^{−η}); the second term
        // switches formulation so both branches stay fully accurate
        BarrierKind::InvHyperbolic => {
            let u = (-eta).exp();
            if u < T::lit(0.5) {
                u.ln_1p() - (-u).ln_1p()
            } else {
                u.ln_1p() - (-(-eta).exp_m1()).ln()
            }
        }
    })
}

/// `B′(η)`, strictly negative on `η > 0`.
pub fn bf_deriv<T: Scalar>(kind: BarrierKind, eta: T) -> Result<T, BarrierError> {
    check_positive(eta)?;
    Ok(match kind {
        BarrierKind::Inverse => -(eta * eta).recip(),
        BarrierKind::Log => -(eta * (T::one() + eta)).recip(),
        // −1/sinh(η) = 2e^{−η}/expm1(−2η); avoids sinh overflow past
        // η ≈ 355 and underflows to −0 once 2e^{−η} leaves f64 range
        BarrierKind::InvHyperbolic => {
            T::lit(2.0) * (-eta).exp() / (-(T::lit(2.0) * eta)).exp_m1()
        }
    })
}

/// `B⁻¹(ζ)` for `ζ > 0`: the margin at which the barrier takes value `ζ`.
pub fn bf_inverse<T: Scalar>(kind: BarrierKind, zeta: T) -> Result<T, BarrierError> {
    check_positive(zeta)?;
    Ok(match kind {
        BarrierKind::Inverse => zeta.recip(),
        // η = 1/(e^ζ − 1)
        BarrierKind::Log => zeta.exp_m1().recip(),
        // η = −ln tanh(ζ/2) = ln1p(2/(e^ζ − 1))
        BarrierKind::InvHyperbolic => (T::lit(2.0) / zeta.exp_m1()).ln_1p(),
    })
}

/// `φ0(ζ) = B′(B⁻¹(ζ))`, entire in `ζ` and nonpositive on `ζ ≥ 0`.
pub fn phi0<T: Scalar>(kind: BarrierKind, zeta: T) -> T {
    match kind {
        BarrierKind::Inverse => -zeta * zeta,
        BarrierKind::Log => {
            let s = (zeta * T::lit(0.5)).sinh();
            -T::lit(4.0) * s * s
        }
        BarrierKind::InvHyperbolic => -zeta.sinh(),
    }
}

/// `φ1(ζ, η)`: vanishes identically on the graph `ζ = B(η)`.
pub fn phi1<T: Scalar>(kind: BarrierKind, zeta: T, eta: T) -> T {
    match kind {
        BarrierKind::Inverse => eta * zeta * zeta - zeta,
        // η(e^ζ−1)² − (e^ζ−1), via expm1 so the on-graph cancellation is exact
        BarrierKind::Log => {
            let e = zeta.exp_m1();
            eta * e * e - e
        }
        BarrierKind::InvHyperbolic => (zeta * T::lit(0.5)).tanh() - (-eta).exp(),
    }
}

/// Analytic partials `(∂φ1/∂ζ, ∂φ1/∂η)`.
///
/// On the graph `(B(h0), h0)` the `ζ`-partial is strictly positive for
/// every kind and every `h0 > 0` — the stabilizability condition of the
/// perturbed barrier-state equation.
pub fn phi1_grad<T: Scalar>(kind: BarrierKind, zeta: T, eta: T) -> (T, T) {
    match kind {
        BarrierKind::Inverse => (T::lit(2.0) * eta * zeta - T::one(), zeta * zeta),
        BarrierKind::Log => {
            let e = zeta.exp_m1();
            let ez = zeta.exp();
            (ez * (T::lit(2.0) * eta * e - T::one()), e * e)
        }
        BarrierKind::InvHyperbolic => {
            let c = (zeta * T::lit(0.5)).cosh();
            (T::lit(0.5) / (c * c), (-eta).exp())
        }
    }
}

/// A barrier function bound to one constraint: the kind, the constraint
/// index it guards, the return rate `γ`, and the cached recentering value
/// `β0 = B(h(0))` (constant along any run, so computed once).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BarrierSpec<T> {
    pub kind: BarrierKind,
    pub h_index: usize,
    pub gamma: T,
    pub beta0: T,
}

impl<T: Scalar> BarrierSpec<T> {
    /// Builds a spec for a constraint with origin margin `h0 = h(0) > 0`.
    pub fn new(kind: BarrierKind, h_index: usize, gamma: T, h0: T) -> Result<Self, BarrierError> {
        if !(gamma > T::zero()) {
            return Err(BarrierError::NonPositiveGamma {
                value: gamma.as_f64(),
            });
        }
        if !(h0 > T::zero()) {
            return Err(BarrierError::UnsafeOrigin {
                value: h0.as_f64(),
            });
        }
        Ok(BarrierSpec {
            kind,
            h_index,
            gamma,
            beta0: bf_value(kind, h0)?,
        })
    }
}

pub const ALL_KINDS: [BarrierKind; 3] = [
    BarrierKind::Inverse,
    BarrierKind::Log,
    BarrierKind::InvHyperbolic,
];

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// 400-point log grid over [1e-4, 1e4].
    fn log_grid() -> Vec<f64> {
        (0..400)
            .map(|k| 10.0f64.powf(-4.0 + 8.0 * k as f64 / 399.0))
            .collect()
    }

    #[test]
    fn bf_value_examples() {
        assert_relative_eq!(bf_value(BarrierKind::Inverse, 0.5).unwrap(), 2.0);
        assert_relative_eq!(
            bf_value(BarrierKind::Log, 1.0).unwrap(),
            std::f64::consts::LN_2
        );
        // 2 atanh(e^{-20}) ~ 2 e^{-20}
        assert_relative_eq!(
            bf_value(BarrierKind::InvHyperbolic, 20.0).unwrap(),
            2.0 * (-20.0f64).exp(),
            max_relative = 1e-12
        );
        assert!(bf_value::<f64>(BarrierKind::Log, 0.0).is_err());
        assert!(bf_value::<f64>(BarrierKind::Inverse, -1.0).is_err());
    }

    #[test]
    fn bf_deriv_examples_and_sign() {
        assert_relative_eq!(bf_deriv(BarrierKind::Inverse, 2.0).unwrap(), -0.25);
        assert_relative_eq!(bf_deriv(BarrierKind::Log, 1.0).unwrap(), -0.5);
        for kind in ALL_KINDS {
            for eta in log_grid() {
                let v = bf_deriv(kind, eta).unwrap();
                // strictly negative until 2e^{-eta} underflows, signed
                // zero beyond (the closest representable to the true value)
                assert!(
                    v < 0.0 || (v == 0.0 && v.is_sign_negative() && eta > 700.0),
                    "{kind:?} at {eta}: {v}"
                );
            }
        }
    }

    #[test]
    fn bf_deriv_matches_finite_differences() {
        let eta = 0.7;
        let h = 1e-6;
        for kind in ALL_KINDS {
            let fd = (bf_value(kind, eta + h).unwrap() - bf_value(kind, eta - h).unwrap())
                / (2.0 * h);
            assert_relative_eq!(bf_deriv(kind, eta).unwrap(), fd, epsilon = 1e-8);
        }
    }

    #[test]
    fn bf_inverse_examples_and_roundtrip() {
        assert_relative_eq!(bf_inverse(BarrierKind::Inverse, 2.0).unwrap(), 0.5);
        assert_relative_eq!(
            bf_inverse(BarrierKind::Log, std::f64::consts::LN_2).unwrap(),
            1.0,
            max_relative = 1e-14
        );
        assert!(bf_inverse::<f64>(BarrierKind::InvHyperbolic, 0.0).is_err());
        // roundtrip B(B^{-1}(zeta)) = zeta and B^{-1}(B(eta)) = eta over a
        // log grid; points where B underflows to zero (invhyp at very
        // large eta) are excluded since zero is outside B's range
        for kind in ALL_KINDS {
            for k in 0..60 {
                let eta = 10.0f64.powf(-3.0 + 6.0 * k as f64 / 59.0);
                let zeta = bf_value(kind, eta).unwrap();
                if zeta == 0.0 {
                    continue;
                }
                let eta_back = bf_inverse(kind, zeta).unwrap();
                assert_relative_eq!(eta_back, eta, max_relative = 1e-12);
                let zeta_back = bf_value(kind, eta_back).unwrap();
                assert_relative_eq!(zeta_back, zeta, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn phi0_examples() {
        assert_relative_eq!(phi0(BarrierKind::Inverse, 2.0), -4.0);
        // -4 sinh^2(ln2 / 2) = -0.5 = B'_log(1)
        assert_relative_eq!(
            phi0(BarrierKind::Log, std::f64::consts::LN_2),
            -0.5,
            max_relative = 1e-14
        );
        assert_eq!(phi0(BarrierKind::InvHyperbolic, 0.0), 0.0);
    }

    #[test]
    fn phi0_nonpositive_on_nonnegative_zeta() {
        for kind in ALL_KINDS {
            for k in 0..200 {
                let zeta = 600.0 * k as f64 / 199.0;
                assert!(phi0(kind, zeta) <= 0.0);
            }
        }
    }

    #[test]
    fn phi1_examples() {
        assert_relative_eq!(phi1(BarrierKind::Inverse, 2.0, 0.5), 0.0);
        assert_relative_eq!(
            phi1(BarrierKind::Log, std::f64::consts::LN_2, 1.0),
            0.0,
            epsilon = 1e-15
        );
        assert_relative_eq!(phi1(BarrierKind::Inverse, 2.0, 1.0), 2.0);
    }

    /// Table-I identities on the acceptance grid: phi0 matches B' through
    /// the graph, phi1 vanishes on the graph.
    #[test]
    fn graph_identities_on_log_grid() {
        for kind in ALL_KINDS {
            for eta in log_grid() {
                let zeta = bf_value(kind, eta).unwrap();
                let deriv = bf_deriv(kind, eta).unwrap();
                let err0 = (phi0(kind, zeta) - deriv).abs();
                assert!(
                    err0 <= 1e-9 * deriv.abs().max(1.0),
                    "{kind:?} phi0 identity at eta={eta}: err {err0:e}"
                );
                let err1 = phi1(kind, zeta, eta).abs();
                assert!(err1 <= 1e-10, "{kind:?} phi1 identity at eta={eta}: {err1:e}");
            }
        }
    }

    #[test]
    fn phi1_grad_examples() {
        let (dz, _) = phi1_grad(BarrierKind::Inverse, 1.0 / 7.75, 7.75);
        assert_relative_eq!(dz, 1.0, max_relative = 1e-14);
        let (dz, _) = phi1_grad(
            BarrierKind::Log,
            bf_value(BarrierKind::Log, 1.0).unwrap(),
            1.0,
        );
        assert_relative_eq!(dz, 2.0, max_relative = 1e-14);
    }

    #[test]
    fn phi1_grad_matches_finite_differences() {
        let (zeta, eta) = (0.3, 0.9);
        let h = 1e-6;
        for kind in ALL_KINDS {
            let (dz, de) = phi1_grad(kind, zeta, eta);
            let fdz = (phi1(kind, zeta + h, eta) - phi1(kind, zeta - h, eta)) / (2.0 * h);
            let fde = (phi1(kind, zeta, eta + h) - phi1(kind, zeta, eta - h)) / (2.0 * h);
            assert_relative_eq!(dz, fdz, epsilon = 1e-8);
            assert_relative_eq!(de, fde, epsilon = 1e-8);
        }
    }

    /// Stabilizability holds everywhere on the graph, not just at h(0).
    #[test]
    fn phi1_zeta_partial_positive_on_graph() {
        for kind in ALL_KINDS {
            for k in 0..100 {
                let h0 = 10.0f64.powf(-3.0 + 6.0 * k as f64 / 99.0);
                let zeta = bf_value(kind, h0).unwrap();
                let (dz, _) = phi1_grad(kind, zeta, h0);
                assert!(dz > 0.0, "{kind:?} at h0={h0}: dzeta={dz}");
            }
        }
    }

    #[test]
    fn spec_construction_validates() {
        assert!(BarrierSpec::new(BarrierKind::Inverse, 0, 2.0, 7.75).is_ok());
        assert!(matches!(
            BarrierSpec::new(BarrierKind::Inverse, 0, 0.0, 7.75),
            Err(BarrierError::NonPositiveGamma { .. })
        ));
        assert!(matches!(
            BarrierSpec::new(BarrierKind::Inverse, 0, 1.0, -1.0),
            Err(BarrierError::UnsafeOrigin { .. })
        ));
        let spec = BarrierSpec::new(BarrierKind::Inverse, 0, 2.0, 7.75).unwrap();
        assert_relative_eq!(spec.beta0, 1.0 / 7.75);
    }

    #[test]
    fn kind_serialization_names() {
        assert_eq!(
            serde_json::to_string(&BarrierKind::InvHyperbolic).unwrap(),
            "\"invhyp\""
        );
        let k: BarrierKind = serde_json::from_str("\"log\"").unwrap();
        assert_eq!(k, BarrierKind::Log);
    }

    /// f32 instantiation sanity: the generic path works at reduced precision.
    #[test]
    fn f32_graph_identity() {
        for kind in ALL_KINDS {
            let eta: f32 = 0.37;
            let zeta = bf_value(kind, eta).unwrap();
            let d = bf_deriv(kind, eta).unwrap();
            assert!((phi0(kind, zeta) - d).abs() <= 1e-5 * d.abs().max(1.0));
            assert!(phi1(kind, zeta, eta).abs() <= 1e-6);
        }
    }
}
