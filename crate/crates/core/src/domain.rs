//! Core value types: strategies, trade-off requests, objective pairs and the
//! ideal point, plus the analytic size objective.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `λ₁ + λ₂ = 1`.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Margin subtracted from the running objective minima when forming `z*`.
pub const IDEAL_MARGIN: f64 = 1e-3;

/// Per-block sparsity ratios, each in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Strategy(Vec<f64>);

impl Strategy {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("strategy must have at least one block".into()));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::InvalidArgument(format!(
                "strategy element {i} = {v} lies outside [0, 1]"
            )));
        }
        Ok(Self(values))
    }

    /// Checks the block count against a configured problem dimension.
    pub fn with_dim(values: Vec<f64>, d: usize) -> Result<Self> {
        if values.len() != d {
            return Err(Error::InvalidArgument(format!(
                "strategy has {} blocks, problem has {d}",
                values.len()
            )));
        }
        Self::new(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    /// Mean sparsity `Σ x_i / d`.
    pub fn mean_sparsity(&self) -> f64 {
        self.0.iter().sum::<f64>() / self.0.len() as f64
    }
}

impl TryFrom<Vec<f64>> for Strategy {
    type Error = Error;
    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<Strategy> for Vec<f64> {
    fn from(s: Strategy) -> Self {
        s.0
    }
}

impl AsRef<[f64]> for Strategy {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// A point on the 2-simplex, stored through its single free coordinate `λ₁`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Request {
    lambda1: f64,
}

impl Request {
    pub fn new(lambda1: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda1) {
            return Err(Error::InvalidArgument(format!(
                "lambda1 = {lambda1} lies outside [0, 1]"
            )));
        }
        Ok(Self { lambda1 })
    }

    pub fn from_pair(lambda: [f64; 2]) -> Result<Self> {
        if lambda.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "request weights {lambda:?} must be finite and nonnegative"
            )));
        }
        if (lambda[0] + lambda[1] - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidArgument(format!(
                "request weights {lambda:?} do not sum to 1"
            )));
        }
        Self::new(lambda[0])
    }

    pub fn lambda1(&self) -> f64 {
        self.lambda1
    }

    pub fn lambda2(&self) -> f64 {
        1.0 - self.lambda1
    }

    pub fn lambda(&self) -> [f64; 2] {
        [self.lambda1, 1.0 - self.lambda1]
    }
}

/// Where an `f₂` value came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum F2Source {
    True,
    Surrogate,
}

impl F2Source {
    pub fn as_str(&self) -> &'static str {
        match self {
            F2Source::True => "true",
            F2Source::Surrogate => "surrogate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectivePair {
    pub f1: f64,
    pub f2: f64,
    pub f2_source: F2Source,
}

impl ObjectivePair {
    pub fn new(f1: f64, f2: f64, f2_source: F2Source) -> Result<Self> {
        if !(0.0..=1.0).contains(&f1) {
            return Err(Error::InvalidArgument(format!("f1 = {f1} lies outside [0, 1]")));
        }
        if !f2.is_finite() {
            return Err(Error::InvalidArgument(format!("f2 = {f2} is not finite")));
        }
        Ok(Self { f1, f2, f2_source })
    }

    pub fn as_point(&self) -> (f64, f64) {
        (self.f1, self.f2)
    }
}

/// Componentwise lower bounds `z*` of `(f₁, f₂)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdealPoint {
    pub z: [f64; 2],
}

impl IdealPoint {
    pub fn new(z1: f64, z2: f64) -> Self {
        Self { z: [z1, z2] }
    }

    /// Running minimum of the observed objectives minus [`IDEAL_MARGIN`].
    pub fn from_observed<'a, I>(pairs: I) -> Option<Self>
    where
        I: IntoIterator<Item = &'a ObjectivePair>,
    {
        let mut lo = [f64::INFINITY; 2];
        let mut any = false;
        for p in pairs {
            lo[0] = lo[0].min(p.f1);
            lo[1] = lo[1].min(p.f2);
            any = true;
        }
        any.then(|| Self::new(lo[0] - IDEAL_MARGIN, lo[1] - IDEAL_MARGIN))
    }

    /// Known lower bounds where available, otherwise the observed minimum,
    /// each lowered by [`IDEAL_MARGIN`].
    pub fn from_bounds<'a, I>(bounds: [Option<f64>; 2], pairs: I) -> Option<Self>
    where
        I: IntoIterator<Item = &'a ObjectivePair>,
    {
        let observed = Self::from_observed(pairs);
        let pick = |k: usize| match bounds[k] {
            Some(b) => Some(b - IDEAL_MARGIN),
            None => observed.map(|o| o.z[k]),
        };
        Some(Self::new(pick(0)?, pick(1)?))
    }
}

/// Analytic lower bound of [`size_objective`].
pub const SIZE_LOWER_BOUND: f64 = 0.0;

/// `f₁(x) = 1 − Σ x_i / d`.
pub fn size_objective(x: &Strategy) -> f64 {
    // clamp guards the last ulp when the sum rounds past d
    (1.0 - x.mean_sparsity()).clamp(0.0, 1.0)
}

/// Gradient of [`size_objective`] with respect to `x`: every entry is `−1/d`.
pub fn size_objective_grad(d: usize) -> Vec<f64> {
    vec![-1.0 / d as f64; d]
}

/// Draws `λ₁ ~ U[0, 1]`.
pub fn sample_request<R: Rng + ?Sized>(rng: &mut R) -> Request {
    Request { lambda1: rng.random::<f64>() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinarizeMode {
    /// Elements `≥ 0.5` become 1.
    #[default]
    Threshold,
    /// The `k` largest elements become 1, lower index first on ties.
    TopK(usize),
}

impl std::str::FromStr for BinarizeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "threshold" => Ok(Self::Threshold),
            _ => match s.strip_prefix("topk:") {
                Some(k) => k
                    .parse()
                    .map(Self::TopK)
                    .map_err(|_| Error::InvalidArgument(format!("bad top-k count in {s:?}"))),
                None => Err(Error::InvalidArgument(format!(
                    "unknown binarize mode {s:?} (expected threshold | topk:<k>)"
                ))),
            },
        }
    }
}

pub fn binarize(x: &Strategy, mode: BinarizeMode) -> Result<Strategy> {
    let values = x.values();
    let out = match mode {
        BinarizeMode::Threshold => values
            .iter()
            .map(|&v| if v >= 0.5 { 1.0 } else { 0.0 })
            .collect(),
        BinarizeMode::TopK(k) => {
            if k > values.len() {
                return Err(Error::InvalidArgument(format!(
                    "top-k with k = {k} exceeds block count {}",
                    values.len()
                )));
            }
            let mut order: Vec<usize> = (0..values.len()).collect();
            // stable sort keeps lower indices first among equal values
            order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
            let mut out = vec![0.0; values.len()];
            for &i in &order[..k] {
                out[i] = 1.0;
            }
            out
        }
    };
    Ok(Strategy(out))
}
