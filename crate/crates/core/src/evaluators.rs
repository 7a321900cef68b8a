//! Black-box performance objectives `f₂`, the memoizing evaluation ledger and
//! brute-force Pareto-front oracles for the synthetic families.

use std::collections::{BinaryHeap, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codec::derived_rng;
use crate::domain::{size_objective, F2Source, ObjectivePair, Strategy};
use crate::error::{Error, Result};
use crate::pareto;

/// Upper bound on the number of grid cells a brute-force oracle will visit.
pub const ORACLE_GRID_LIMIT: u64 = 10_000_000;

/// An expensive, deterministic performance objective.
pub trait BlackBoxObjective: Send + Sync {
    fn dim(&self) -> usize;

    fn evaluate(&self, x: &Strategy) -> f64;

    /// Nominal cost of one call in abstract units.
    fn nominal_cost(&self) -> f64 {
        1.0
    }

    /// A known lower bound of the objective over the whole domain, if any.
    fn lower_bound(&self) -> Option<f64> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    PowerSum,
    Coupled,
}

/// Run-config description of a synthetic objective. Parameters left out are
/// drawn from `seed` when the objective is built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub family: Family,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exponents: Option<Vec<f64>>,
    /// Row-major `d × d`, symmetric, nonnegative. Coupled family only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interaction: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn power_sum(seed: u64) -> Self {
        Self {
            family: Family::PowerSum,
            weights: None,
            exponents: None,
            interaction: None,
            seed,
        }
    }

    pub fn coupled(seed: u64) -> Self {
        Self {
            family: Family::Coupled,
            ..Self::power_sum(seed)
        }
    }

    pub fn build(&self, d: usize) -> Result<SyntheticObjective> {
        if d == 0 {
            return Err(Error::InvalidArgument("dimension must be positive".into()));
        }
        let mut rng = derived_rng(self.seed, 0, 0x5EED);
        let weights = match &self.weights {
            Some(w) => w.clone(),
            None => (0..d).map(|_| rng.random_range(0.5..2.0)).collect(),
        };
        let exponents = match &self.exponents {
            Some(p) => p.clone(),
            None => (0..d).map(|_| rng.random_range(1.0..3.0)).collect(),
        };
        let interaction = match (self.family, &self.interaction) {
            (Family::PowerSum, None) => vec![vec![0.0; d]; d],
            (Family::PowerSum, Some(_)) => {
                return Err(Error::InvalidArgument(
                    "interaction matrix is only valid for the Coupled family".into(),
                ))
            }
            (Family::Coupled, Some(a)) => a.clone(),
            (Family::Coupled, None) => {
                let mut a = vec![vec![0.0; d]; d];
                for i in 0..d {
                    for j in i + 1..d {
                        let v = rng.random_range(0.0..0.5);
                        a[i][j] = v;
                        a[j][i] = v;
                    }
                }
                a
            }
        };
        SyntheticObjective::new(self.family, weights, exponents, interaction)
    }
}

/// `f₂(x) = (Σ w_i x_i^{p_i} + Σ_{i<j} A_ij x_i x_j) / (Σ w_i + Σ_{i<j} A_ij)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticObjective {
    family: Family,
    weights: Vec<f64>,
    exponents: Vec<f64>,
    interaction: Vec<Vec<f64>>,
    normalizer: f64,
}

impl SyntheticObjective {
    pub fn new(
        family: Family,
        weights: Vec<f64>,
        exponents: Vec<f64>,
        interaction: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let d = weights.len();
        let mut problems = Vec::new();
        if d == 0 {
            problems.push("weights must be nonempty".to_string());
        }
        if exponents.len() != d {
            problems.push(format!("exponents has {} entries, expected {d}", exponents.len()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            problems.push("weights must be finite and positive".into());
        }
        // exponents below 1 are accepted: they produce the concave fronts
        if exponents.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            problems.push("exponents must be finite and positive".into());
        }
        if interaction.len() != d || interaction.iter().any(|r| r.len() != d) {
            problems.push(format!("interaction must be {d}x{d}"));
        } else {
            for i in 0..d {
                for j in 0..d {
                    let a = interaction[i][j];
                    if !(a.is_finite() && a >= 0.0) || a != interaction[j][i] {
                        problems.push("interaction must be symmetric, finite, nonnegative".into());
                        break;
                    }
                }
            }
        }
        if !problems.is_empty() {
            problems.dedup();
            return Err(Error::InvalidArgument(problems.join("; ")));
        }
        let mut normalizer: f64 = weights.iter().sum();
        for i in 0..d {
            for j in i + 1..d {
                normalizer += interaction[i][j];
            }
        }
        Ok(Self {
            family,
            weights,
            exponents,
            interaction,
            normalizer,
        })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn exponents(&self) -> &[f64] {
        &self.exponents
    }

    fn is_separable(&self) -> bool {
        self.interaction.iter().flatten().all(|&a| a == 0.0)
    }

    fn value(&self, x: &[f64]) -> f64 {
        let d = x.len();
        let mut acc = 0.0;
        for i in 0..d {
            acc += self.weights[i] * x[i].powf(self.exponents[i]);
        }
        for i in 0..d {
            for j in i + 1..d {
                acc += self.interaction[i][j] * x[i] * x[j];
            }
        }
        acc / self.normalizer
    }
}

impl BlackBoxObjective for SyntheticObjective {
    fn dim(&self) -> usize {
        self.weights.len()
    }

    fn evaluate(&self, x: &Strategy) -> f64 {
        self.value(x.values())
    }

    fn lower_bound(&self) -> Option<f64> {
        Some(0.0)
    }
}

/// Memo table of true evaluations keyed by the strategy rounded to 12 decimals.
#[derive(Debug, Clone, Default)]
pub struct EvalLedger {
    cache: HashMap<Vec<i64>, f64>,
    true_evaluations: u64,
    cache_hits: u64,
}

fn quantize(x: &Strategy) -> Vec<i64> {
    x.values().iter().map(|v| (v * 1e12).round() as i64).collect()
}

impl EvalLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuilds a ledger from previously evaluated strategies and saved counters.
    pub fn restore<'a, I>(entries: I, true_evaluations: u64, cache_hits: u64) -> Self
    where
        I: IntoIterator<Item = (&'a Strategy, f64)>,
    {
        let cache = entries.into_iter().map(|(x, v)| (quantize(x), v)).collect();
        Self {
            cache,
            true_evaluations,
            cache_hits,
        }
    }

    pub fn true_evaluations(&self) -> u64 {
        self.true_evaluations
    }

    pub fn cache_hits(&self) -> u64 {
        self.cache_hits
    }

    pub fn contains(&self, x: &Strategy) -> bool {
        self.cache.contains_key(&quantize(x))
    }
}

/// Returns `f₂(x)`, calling the objective only on a ledger miss.
pub fn evaluate_true(
    obj: &dyn BlackBoxObjective,
    x: &Strategy,
    ledger: &mut EvalLedger,
) -> Result<f64> {
    if x.dim() != obj.dim() {
        return Err(Error::InvalidArgument(format!(
            "strategy has {} blocks, objective expects {}",
            x.dim(),
            obj.dim()
        )));
    }
    let key = quantize(x);
    if let Some(&v) = ledger.cache.get(&key) {
        ledger.cache_hits += 1;
        return Ok(v);
    }
    let v = obj.evaluate(x);
    if !v.is_finite() {
        return Err(Error::EvaluatorFault(format!(
            "objective returned {v} at x = {:?}",
            x.values()
        )));
    }
    ledger.cache.insert(key, v);
    ledger.true_evaluations += 1;
    Ok(v)
}

#[derive(Clone, Copy, PartialEq)]
struct Increment {
    cost: f64,
    index: usize,
}

impl Eq for Increment {}

impl Ord for Increment {
    // BinaryHeap is a max-heap: invert so the cheapest, then lowest index, pops first
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.index.cmp(&self.index))
    }
}

impl PartialOrd for Increment {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

fn pair(x: &Strategy, f2: f64) -> (Strategy, ObjectivePair) {
    let p = ObjectivePair {
        f1: size_objective(x),
        f2,
        f2_source: F2Source::True,
    };
    (x.clone(), p)
}

fn filter_front(points: Vec<(Strategy, ObjectivePair)>) -> Vec<(Strategy, ObjectivePair)> {
    let objs: Vec<(f64, f64)> = points.iter().map(|(_, p)| p.as_point()).collect();
    pareto::nondominated_indices(&objs)
        .into_iter()
        .map(|i| points[i].clone())
        .collect()
}

/// Minimal-`f₂` allocation for every achievable mean sparsity on the lattice
/// `{0, h, …, 1}^d`, `h = 1/(resolution − 1)`, by greedy unit increments.
/// Exact on the lattice when every exponent is ≥ 1 and there are no
/// interactions (separable convex costs).
pub fn greedy_allocation_front(
    obj: &SyntheticObjective,
    resolution: usize,
) -> Result<Vec<(Strategy, ObjectivePair)>> {
    if resolution < 2 {
        return Err(Error::InvalidArgument("grid resolution must be at least 2".into()));
    }
    let d = obj.dim();
    let steps = resolution - 1;
    let h = 1.0 / steps as f64;
    let level = |k: usize| if k == steps { 1.0 } else { k as f64 * h };
    let cost = |i: usize, k: usize| {
        obj.weights[i] * (level(k + 1).powf(obj.exponents[i]) - level(k).powf(obj.exponents[i]))
    };

    let mut counts = vec![0usize; d];
    let mut heap: BinaryHeap<Increment> =
        (0..d).map(|i| Increment { cost: cost(i, 0), index: i }).collect();
    let mut out = Vec::with_capacity(d * steps + 1);
    let start = Strategy::new(vec![0.0; d])?;
    out.push(pair(&start, obj.evaluate(&start)));
    while let Some(Increment { index, .. }) = heap.pop() {
        counts[index] += 1;
        if counts[index] < steps {
            heap.push(Increment {
                cost: cost(index, counts[index]),
                index,
            });
        }
        let x = Strategy::new(counts.iter().map(|&k| level(k)).collect())?;
        let f2 = obj.evaluate(&x);
        out.push(pair(&x, f2));
    }
    Ok(filter_front(out))
}

/// Exhaustive enumeration of `{0, h, …, 1}^d`, keeping the minimal `f₂` for
/// each attainable `f₁` and then the nondominated subset.
pub fn grid_front(
    obj: &dyn BlackBoxObjective,
    resolution: usize,
) -> Result<Vec<(Strategy, ObjectivePair)>> {
    if resolution < 2 {
        return Err(Error::InvalidArgument("grid resolution must be at least 2".into()));
    }
    let d = obj.dim();
    let cells = (resolution as u64).checked_pow(d as u32);
    if cells.is_none_or(|c| c > ORACLE_GRID_LIMIT) {
        return Err(Error::BudgetExceeded(format!(
            "grid of {resolution}^{d} cells exceeds the oracle limit of {ORACLE_GRID_LIMIT}"
        )));
    }
    let steps = resolution - 1;
    let h = 1.0 / steps as f64;
    let level = |k: usize| if k == steps { 1.0 } else { k as f64 * h };

    // f₁ depends only on the index sum
    let mut best: Vec<Option<(Vec<usize>, f64)>> = vec![None; d * steps + 1];
    let mut idx = vec![0usize; d];
    let mut x = vec![0.0; d];
    loop {
        for (xi, &k) in x.iter_mut().zip(&idx) {
            *xi = level(k);
        }
        let f2 = obj.evaluate(&Strategy::new(x.clone())?);
        if !f2.is_finite() {
            return Err(Error::EvaluatorFault(format!("objective returned {f2} at x = {x:?}")));
        }
        let sum: usize = idx.iter().sum();
        if best[sum].as_ref().is_none_or(|(_, b)| f2 < *b) {
            best[sum] = Some((idx.clone(), f2));
        }
        // odometer
        let mut pos = 0;
        loop {
            if pos == d {
                let points = best
                    .into_iter()
                    .flatten()
                    .map(|(k, f2)| {
                        let s = Strategy::new(k.iter().map(|&k| level(k)).collect())?;
                        Ok(pair(&s, f2))
                    })
                    .collect::<Result<Vec<_>>>()?;
                return Ok(filter_front(points));
            }
            idx[pos] += 1;
            if idx[pos] <= steps {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}

/// Brute-force nondominated front of a synthetic objective. Separable convex
/// PowerSum instances use [`greedy_allocation_front`]; everything else falls
/// back to [`grid_front`] and is subject to its size limit.
pub fn pareto_oracle(
    obj: &SyntheticObjective,
    resolution: usize,
) -> Result<Vec<(Strategy, ObjectivePair)>> {
    let convex = obj.exponents.iter().all(|&p| p >= 1.0);
    if obj.family == Family::PowerSum && obj.is_separable() && convex {
        greedy_allocation_front(obj, resolution)
    } else {
        grid_front(obj, resolution)
    }
}
