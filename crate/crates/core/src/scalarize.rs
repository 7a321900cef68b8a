//! Scalarizations of an objective pair under a request: weighted sum,
//! weighted Tchebycheff (with its active-branch subgradient) and PBI.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::domain::{IdealPoint, Request};
use crate::error::{Error, Result};

/// Tolerance for declaring the two Tchebycheff terms equal.
pub const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum ScalarizerKind {
    WeightedSum,
    #[default]
    Tchebycheff,
    /// Penalty-based boundary intersection with penalty `xi > 0`.
    Pbi(f64),
}

impl FromStr for ScalarizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ws" => Ok(Self::WeightedSum),
            "tch" => Ok(Self::Tchebycheff),
            _ => {
                let xi: f64 = s
                    .strip_prefix("pbi:")
                    .and_then(|x| x.parse().ok())
                    .ok_or_else(|| {
                        Error::InvalidArgument(format!(
                            "unknown scalarizer {s:?} (expected ws | tch | pbi:<xi>)"
                        ))
                    })?;
                if !(xi.is_finite() && xi > 0.0) {
                    return Err(Error::InvalidArgument(format!("PBI penalty {xi} must be > 0")));
                }
                Ok(Self::Pbi(xi))
            }
        }
    }
}

impl fmt::Display for ScalarizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::WeightedSum => f.write_str("ws"),
            Self::Tchebycheff => f.write_str("tch"),
            Self::Pbi(xi) => write!(f, "pbi:{xi}"),
        }
    }
}

impl Serialize for ScalarizerKind {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ScalarizerKind {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BranchSelection {
    /// 1 or 2.
    pub active_index: u8,
    pub tie: bool,
}

pub fn weighted_sum(f: (f64, f64), lam: &Request) -> f64 {
    let [l1, l2] = lam.lambda();
    l1 * f.0 + l2 * f.1
}

fn tch_terms(f: (f64, f64), lam: &Request, z: &IdealPoint) -> (f64, f64) {
    let [l1, l2] = lam.lambda();
    (
        l1 * (f.0 - z.z[0]).max(0.0),
        l2 * (f.1 - z.z[1]).max(0.0),
    )
}

/// `max(λ₁(f₁ − z₁), λ₂(f₂ − z₂))` with negative gaps clamped to zero; the
/// first objective wins ties.
pub fn tchebycheff(f: (f64, f64), lam: &Request, z: &IdealPoint) -> (f64, BranchSelection) {
    let (a, b) = tch_terms(f, lam, z);
    let tie = (a - b).abs() <= TIE_TOL;
    if tie || a >= b {
        (a.max(b), BranchSelection { active_index: 1, tie })
    } else {
        (b, BranchSelection { active_index: 2, tie })
    }
}

/// Subgradient weights `(w₁, w₂)` on `(∇f₁, ∇f̂₂)` for the Tchebycheff loss.
pub fn tch_gradient_weights(f1: f64, f2_hat: f64, lam: &Request, z: &IdealPoint) -> (f64, f64) {
    let (a, b) = tch_terms((f1, f2_hat), lam, z);
    if a >= b || (a - b).abs() <= TIE_TOL {
        (lam.lambda1(), 0.0)
    } else {
        (0.0, lam.lambda2())
    }
}

/// `d₁ + ξ d₂` with `d₁ = |(z − f)ᵀλ| / ‖λ‖` and `d₂ = ‖f − (z − d₁λ)‖`.
pub fn pbi(f: (f64, f64), lam: &Request, z: &IdealPoint, xi: f64) -> f64 {
    pbi_with_grad(f, lam, z, xi).0
}

/// PBI value and its gradient with respect to `(f₁, f₂)`.
pub fn pbi_with_grad(f: (f64, f64), lam: &Request, z: &IdealPoint, xi: f64) -> (f64, (f64, f64)) {
    let l = lam.lambda();
    let norm = l[0].hypot(l[1]);
    let u = (z.z[0] - f.0) * l[0] + (z.z[1] - f.1) * l[1];
    let d1 = u.abs() / norm;
    let v = [f.0 - z.z[0] + d1 * l[0], f.1 - z.z[1] + d1 * l[1]];
    let d2 = v[0].hypot(v[1]);

    // ∂d₁/∂f = −sign(u) λ/‖λ‖
    let sgn = if u > 0.0 { 1.0 } else if u < 0.0 { -1.0 } else { 0.0 };
    let dd1 = [-sgn * l[0] / norm, -sgn * l[1] / norm];
    let mut dd2 = [0.0, 0.0];
    if d2 > 0.0 {
        let lv = l[0] * v[0] + l[1] * v[1];
        for k in 0..2 {
            dd2[k] = (v[k] + dd1[k] * lv) / d2;
        }
    }
    (
        d1 + xi * d2,
        (dd1[0] + xi * dd2[0], dd1[1] + xi * dd2[1]),
    )
}

impl ScalarizerKind {
    /// Loss value and the weights `(w₁, w₂)` to apply to `∇f₁` and `∇f̂₂`.
    pub fn value_and_weights(&self, f: (f64, f64), lam: &Request, z: &IdealPoint) -> (f64, f64, f64) {
        match *self {
            Self::WeightedSum => (weighted_sum(f, lam), lam.lambda1(), lam.lambda2()),
            Self::Tchebycheff => {
                let (value, _) = tchebycheff(f, lam, z);
                let (w1, w2) = tch_gradient_weights(f.0, f.1, lam, z);
                (value, w1, w2)
            }
            Self::Pbi(xi) => {
                let (value, (w1, w2)) = pbi_with_grad(f, lam, z, xi);
                (value, w1, w2)
            }
        }
    }

    pub fn value(&self, f: (f64, f64), lam: &Request, z: &IdealPoint) -> f64 {
        self.value_and_weights(f, lam, z).0
    }
}
