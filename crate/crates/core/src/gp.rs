//! Gaussian-process regression over strategies with an isotropic Matérn 5/2
//! kernel.
//!
//! Targets are standardized to zero mean and unit variance inside
//! [`fit`]; everything returned through [`SurrogateModel::predict`] is back
//! in the caller's units. Hyperparameters live in log space and are fitted by
//! monotone gradient ascent on the log marginal likelihood
//!
//! ```text
//! log p(y | X, θ) = −½ yᵀα − Σ log L_ii − (n/2) log 2π,   α = (K + σ_n² I)⁻¹ y
//! ```
//!
//! with analytic gradients `½ tr((ααᵀ − K⁻¹) ∂K/∂θ)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{self, derived_rng};
use crate::error::{Error, Result};

/// Floor on the standardized posterior standard deviation.
pub const SIGMA_FLOOR: f64 = 1e-9;

const SQRT5: f64 = 2.236_067_977_499_79;
const LOG_2PI: f64 = 1.837_877_066_409_345_5;

const LN_10: f64 = std::f64::consts::LN_10;
const LOG_LENGTHSCALE_BOUNDS: (f64, f64) = (-3.0 * LN_10, 3.0 * LN_10);
const LOG_SIGNAL_BOUNDS: (f64, f64) = (-6.0 * LN_10, 6.0 * LN_10);
const LOG_NOISE_BOUNDS: (f64, f64) = (-8.0 * LN_10, LN_10);

/// Relative diagonal jitter ladder tried when a factorization fails.
const JITTER_LADDER: [f64; 5] = [1e-8, 1e-7, 1e-6, 1e-5, 1e-4];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub log_lengthscale: f64,
    pub log_signal_variance: f64,
    pub log_noise_variance: f64,
}

impl Default for KernelParams {
    fn default() -> Self {
        Self::new(1.0, 1.0, 1e-4)
    }
}

impl KernelParams {
    /// Builds from natural-scale values, clamped into the admissible box.
    pub fn new(lengthscale: f64, signal_variance: f64, noise_variance: f64) -> Self {
        Self {
            log_lengthscale: lengthscale.ln(),
            log_signal_variance: signal_variance.ln(),
            log_noise_variance: noise_variance.ln(),
        }
        .clamped()
    }

    pub fn clamped(self) -> Self {
        let c = |v: f64, (lo, hi): (f64, f64)| if v.is_nan() { lo } else { v.clamp(lo, hi) };
        Self {
            log_lengthscale: c(self.log_lengthscale, LOG_LENGTHSCALE_BOUNDS),
            log_signal_variance: c(self.log_signal_variance, LOG_SIGNAL_BOUNDS),
            log_noise_variance: c(self.log_noise_variance, LOG_NOISE_BOUNDS),
        }
    }

    pub fn lengthscale(&self) -> f64 {
        self.log_lengthscale.exp()
    }

    pub fn signal_variance(&self) -> f64 {
        self.log_signal_variance.exp()
    }

    pub fn noise_variance(&self) -> f64 {
        self.log_noise_variance.exp()
    }

    fn as_array(&self) -> [f64; 3] {
        [self.log_lengthscale, self.log_signal_variance, self.log_noise_variance]
    }

    fn from_array(a: [f64; 3]) -> Self {
        Self {
            log_lengthscale: a[0],
            log_signal_variance: a[1],
            log_noise_variance: a[2],
        }
        .clamped()
    }
}

fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Matérn 5/2: `σ²(1 + √5 r/ℓ + 5r²/(3ℓ²)) exp(−√5 r/ℓ)`.
pub fn kernel(x: &[f64], y: &[f64], params: &KernelParams) -> f64 {
    let a = SQRT5 * sq_dist(x, y).sqrt() / params.lengthscale();
    params.signal_variance() * (1.0 + a + a * a / 3.0) * (-a).exp()
}

/// Kernel value and `∂k/∂ log ℓ` at scaled distance `a = √5 r/ℓ`.
fn kernel_and_dlogl(a: f64, s2: f64) -> (f64, f64) {
    let e = (-a).exp();
    (s2 * (1.0 + a + a * a / 3.0) * e, s2 * a * a / 3.0 * (1.0 + a) * e)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum AcquisitionKind {
    /// Posterior mean only (κ ignored).
    #[serde(rename = "none")]
    MeanOnly,
    /// `μ̂ + κσ̂`.
    #[default]
    #[serde(rename = "paperlcb")]
    Pessimistic,
    /// `μ̂ − κσ̂`.
    #[serde(rename = "optimistic")]
    Optimistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionConfig {
    pub kind: AcquisitionKind,
    pub kappa: f64,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self {
            kind: AcquisitionKind::Pessimistic,
            kappa: 0.5,
        }
    }
}

impl AcquisitionConfig {
    pub fn new(kind: AcquisitionKind, kappa: f64) -> Result<Self> {
        if !(kappa.is_finite() && kappa >= 0.0) {
            return Err(Error::InvalidArgument(format!("kappa = {kappa} must be >= 0")));
        }
        Ok(Self { kind, kappa })
    }

    fn signed_kappa(&self) -> f64 {
        match self.kind {
            AcquisitionKind::MeanOnly => 0.0,
            AcquisitionKind::Pessimistic => self.kappa,
            AcquisitionKind::Optimistic => -self.kappa,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub mean: f64,
    pub std: f64,
    pub grad_mean: Vec<f64>,
    pub grad_std: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub restarts: usize,
    pub steps: usize,
    pub step_size: f64,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            restarts: 4,
            steps: 200,
            step_size: 0.05,
            seed: 0,
        }
    }
}

/// Per-restart log-likelihood traces from [`fit_traced`]; entry 0 of each
/// trace is the value at the restart's initialization.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub traces: Vec<Vec<f64>>,
    pub starts: Vec<KernelParams>,
    pub best_restart: usize,
}

struct Factor {
    l: DMatrix<f64>,
    alpha: DVector<f64>,
    jitter: f64,
    loglik: f64,
}

fn gram(x: &[Vec<f64>], params: &KernelParams) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = x.len();
    let ell = params.lengthscale();
    let s2 = params.signal_variance();
    let mut k = DMatrix::zeros(n, n);
    let mut dk = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = s2;
        for j in 0..i {
            let a = SQRT5 * sq_dist(&x[i], &x[j]).sqrt() / ell;
            let (v, dv) = kernel_and_dlogl(a, s2);
            k[(i, j)] = v;
            k[(j, i)] = v;
            dk[(i, j)] = dv;
            dk[(j, i)] = dv;
        }
    }
    (k, dk)
}

/// Factorizes `K + σ_n² I`, escalating a relative diagonal jitter on failure.
fn factorize(k: &DMatrix<f64>, noise: f64, y: &DVector<f64>) -> Option<Factor> {
    let n = k.nrows();
    let mean_diag = (0..n).map(|i| k[(i, i)]).sum::<f64>() / n as f64 + noise;
    for jitter in std::iter::once(0.0).chain(JITTER_LADDER.iter().map(|j| j * mean_diag)) {
        let mut a = k.clone();
        for i in 0..n {
            a[(i, i)] += noise + jitter;
        }
        let Some(chol) = a.cholesky() else { continue };
        let l = chol.l();
        let alpha = chol.solve(y);
        let log_det_half: f64 = (0..n).map(|i| l[(i, i)].ln()).sum();
        let loglik = -0.5 * y.dot(&alpha) - log_det_half - 0.5 * n as f64 * LOG_2PI;
        if loglik.is_finite() {
            return Some(Factor { l, alpha, jitter, loglik });
        }
    }
    None
}

fn loglik_gradient(
    factor: &Factor,
    k: &DMatrix<f64>,
    dk_dlogl: &DMatrix<f64>,
    noise: f64,
) -> [f64; 3] {
    let n = k.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let l_inv = factor
        .l
        .solve_lower_triangular(&eye)
        .expect("Cholesky factor has a positive diagonal");
    let k_inv = l_inv.tr_mul(&l_inv);
    let mut g = [0.0; 3];
    for j in 0..n {
        for i in 0..n {
            let w = factor.alpha[i] * factor.alpha[j] - k_inv[(i, j)];
            g[0] += w * dk_dlogl[(i, j)];
            g[1] += w * k[(i, j)];
        }
        g[2] += (factor.alpha[j] * factor.alpha[j] - k_inv[(j, j)]) * noise;
    }
    g.map(|v| 0.5 * v)
}

fn evaluate(x: &[Vec<f64>], y: &DVector<f64>, params: &KernelParams) -> Option<(Factor, DMatrix<f64>, DMatrix<f64>)> {
    let (k, dk) = gram(x, params);
    factorize(&k, params.noise_variance(), y).map(|f| (f, k, dk))
}

/// Monotone ascent from one start: normalized-gradient steps of length
/// `step_size` in log space, halved until the likelihood improves and grown
/// again after each accepted step.
fn ascend(
    x: &[Vec<f64>],
    y: &DVector<f64>,
    start: KernelParams,
    opts: &FitOptions,
) -> Option<(KernelParams, Vec<f64>)> {
    let mut params = start.clamped();
    let (mut factor, mut k, mut dk) = evaluate(x, y, &params)?;
    let mut trace = vec![factor.loglik];
    let mut step = opts.step_size;
    for _ in 0..opts.steps {
        let g = loglik_gradient(&factor, &k, &dk, params.noise_variance());
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            break;
        }
        let mut accepted = false;
        while step > 1e-10 {
            let base = params.as_array();
            let cand = KernelParams::from_array([0, 1, 2].map(|i| base[i] + step * g[i] / norm));
            if cand == params {
                break;
            }
            match evaluate(x, y, &cand) {
                Some((f, kk, dkk)) if f.loglik > factor.loglik => {
                    params = cand;
                    factor = f;
                    k = kk;
                    dk = dkk;
                    accepted = true;
                    step = (step * 1.5).min(1.0);
                    break;
                }
                _ => step *= 0.5,
            }
        }
        if !accepted {
            break;
        }
        trace.push(factor.loglik);
    }
    Some((params, trace))
}

fn standardize(y_raw: &[f64]) -> (DVector<f64>, f64, f64) {
    let n = y_raw.len() as f64;
    let mean = y_raw.iter().sum::<f64>() / n;
    let var = y_raw.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
    (DVector::from_iterator(y_raw.len(), y_raw.iter().map(|v| (v - mean) / std)), mean, std)
}

fn check_data(x: &[Vec<f64>], y_raw: &[f64]) -> Result<usize> {
    if x.len() < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 training points, got {}", x.len())));
    }
    if x.len() != y_raw.len() {
        return Err(Error::InvalidArgument(format!(
            "{} inputs but {} targets",
            x.len(),
            y_raw.len()
        )));
    }
    let d = x[0].len();
    if d == 0 || x.iter().any(|r| r.len() != d) {
        return Err(Error::InvalidArgument("training inputs must share a positive dimension".into()));
    }
    if x.iter().flatten().chain(y_raw).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("training data must be finite".into()));
    }
    Ok(d)
}

/// Fits hyperparameters from the defaults plus `restarts − 1` log-uniform
/// random starts and returns the best model.
pub fn fit(x: &[Vec<f64>], y_raw: &[f64], opts: &FitOptions) -> Result<SurrogateModel> {
    fit_traced(x, y_raw, opts).map(|(m, _)| m)
}

pub fn fit_traced(
    x: &[Vec<f64>],
    y_raw: &[f64],
    opts: &FitOptions,
) -> Result<(SurrogateModel, FitReport)> {
    check_data(x, y_raw)?;
    let (y, _, _) = standardize(y_raw);

    let mut rng = derived_rng(opts.seed, x.len() as u64, 0x6170);
    let mut starts = vec![KernelParams::default()];
    for _ in 1..opts.restarts.max(1) {
        starts.push(KernelParams::from_array([
            rng.random_range(0.1f64.ln()..10f64.ln()),
            rng.random_range(0.1f64.ln()..10f64.ln()),
            rng.random_range(1e-8f64.ln()..1e-2f64.ln()),
        ]));
    }

    let results: Vec<Option<(KernelParams, Vec<f64>)>> =
        starts.par_iter().map(|s| ascend(x, &y, *s, opts)).collect();

    let mut best: Option<(usize, KernelParams, f64)> = None;
    let mut traces = Vec::with_capacity(results.len());
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Some((p, trace)) => {
                let ll = *trace.last().expect("trace holds the start value");
                if best.is_none_or(|(_, _, b)| ll > b) {
                    best = Some((i, p, ll));
                }
                traces.push(trace);
            }
            None => traces.push(Vec::new()),
        }
    }
    let (best_restart, params, _) = best.ok_or_else(|| {
        Error::NumericalFailure("Cholesky failed for every restart after jitter escalation".into())
    })?;
    let model = SurrogateModel::condition(x, y_raw, params)?;
    Ok((
        model,
        FitReport {
            traces,
            starts,
            best_restart,
        },
    ))
}

/// A fitted GP. Immutable; prediction is safe from many threads.
#[derive(Debug, Clone)]
pub struct SurrogateModel {
    params: KernelParams,
    x: Vec<Vec<f64>>,
    y: DVector<f64>,
    y_mean: f64,
    y_std: f64,
    l: DMatrix<f64>,
    alpha: DVector<f64>,
    jitter: f64,
    log_likelihood: f64,
}

/// Serializable part of a [`SurrogateModel`]; the factorization is rebuilt on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateSnapshot {
    pub params: KernelParams,
    pub dim: usize,
    #[serde(with = "codec::b64")]
    pub x: Vec<f64>,
    /// Standardized targets.
    #[serde(with = "codec::b64")]
    pub y: Vec<f64>,
    pub y_mean: f64,
    pub y_std: f64,
}

impl SurrogateModel {
    /// Conditions a GP on raw targets under fixed hyperparameters.
    pub fn condition(x: &[Vec<f64>], y_raw: &[f64], params: KernelParams) -> Result<Self> {
        check_data(x, y_raw)?;
        let (y, y_mean, y_std) = standardize(y_raw);
        Self::from_parts(x.to_vec(), y, y_mean, y_std, params.clamped())
    }

    fn from_parts(
        x: Vec<Vec<f64>>,
        y: DVector<f64>,
        y_mean: f64,
        y_std: f64,
        params: KernelParams,
    ) -> Result<Self> {
        let (k, _) = gram(&x, &params);
        let f = factorize(&k, params.noise_variance(), &y).ok_or_else(|| {
            Error::NumericalFailure(format!(
                "Cholesky of the {n}x{n} kernel matrix failed after jitter escalation",
                n = x.len()
            ))
        })?;
        Ok(Self {
            params,
            x,
            y,
            y_mean,
            y_std,
            l: f.l,
            alpha: f.alpha,
            jitter: f.jitter,
            log_likelihood: f.loglik,
        })
    }

    pub fn snapshot(&self) -> SurrogateSnapshot {
        SurrogateSnapshot {
            params: self.params,
            dim: self.dim(),
            x: self.x.iter().flatten().copied().collect(),
            y: self.y.iter().copied().collect(),
            y_mean: self.y_mean,
            y_std: self.y_std,
        }
    }

    pub fn from_snapshot(s: &SurrogateSnapshot) -> Result<Self> {
        if s.dim == 0 || s.x.len() != s.dim * s.y.len() {
            return Err(Error::Checkpoint(format!(
                "surrogate snapshot holds {} inputs for {} targets of dimension {}",
                s.x.len(),
                s.y.len(),
                s.dim
            )));
        }
        let x = s.x.chunks(s.dim).map(<[f64]>::to_vec).collect();
        Self::from_parts(x, DVector::from_vec(s.y.clone()), s.y_mean, s.y_std, s.params)
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.x[0].len()
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn y_mean(&self) -> f64 {
        self.y_mean
    }

    pub fn y_std(&self) -> f64 {
        self.y_std
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Log marginal likelihood of the standardized targets.
    pub fn log_likelihood(&self) -> f64 {
        self.log_likelihood
    }

    /// `L · Lᵀ`, for checking the stored factor.
    pub fn reconstructed_covariance(&self) -> DMatrix<f64> {
        &self.l * self.l.transpose()
    }

    /// `K + (σ_n² + jitter) I` recomputed from the inputs.
    pub fn covariance(&self) -> DMatrix<f64> {
        let (mut k, _) = gram(&self.x, &self.params);
        for i in 0..k.nrows() {
            k[(i, i)] += self.params.noise_variance() + self.jitter;
        }
        k
    }

    /// Posterior mean and standard deviation with their input gradients.
    pub fn predict(&self, x: &[f64]) -> Posterior {
        let n = self.x.len();
        let d = x.len();
        let ell = self.params.lengthscale();
        let s2 = self.params.signal_variance();
        let c = s2 * 5.0 / (3.0 * ell * ell);

        let mut kstar = DVector::zeros(n);
        // ∂k(x, x_i)/∂x = −σ² 5/(3ℓ²) (1 + a) e^{−a} (x − x_i)
        let mut coef = vec![0.0; n];
        for (i, xi) in self.x.iter().enumerate() {
            let a = SQRT5 * sq_dist(x, xi).sqrt() / ell;
            let e = (-a).exp();
            kstar[i] = s2 * (1.0 + a + a * a / 3.0) * e;
            coef[i] = -c * (1.0 + a) * e;
        }
        let mean_s = kstar.dot(&self.alpha);
        let v = self
            .l
            .solve_lower_triangular(&kstar)
            .expect("Cholesky factor has a positive diagonal");
        let var_s = (s2 - v.dot(&v)).max(SIGMA_FLOOR * SIGMA_FLOOR);
        let std_s = var_s.sqrt();
        let w = self
            .l
            .tr_solve_lower_triangular(&v)
            .expect("Cholesky factor has a positive diagonal");

        let mut grad_mean = vec![0.0; d];
        let mut grad_std = vec![0.0; d];
        let inv_std = 1.0 / std_s.max(SIGMA_FLOOR);
        for (i, xi) in self.x.iter().enumerate() {
            let gm = coef[i] * self.alpha[i];
            let gs = -coef[i] * w[i] * inv_std;
            for k in 0..d {
                let diff = x[k] - xi[k];
                grad_mean[k] += gm * diff;
                grad_std[k] += gs * diff;
            }
        }
        for g in grad_mean.iter_mut().chain(grad_std.iter_mut()) {
            *g *= self.y_std;
        }
        Posterior {
            mean: self.y_mean + self.y_std * mean_s,
            std: (self.y_std * std_s).max(SIGMA_FLOOR),
            grad_mean,
            grad_std,
        }
    }

    /// Standardized posterior variance (no de-scaling), used by invariants.
    pub fn latent_variance(&self, x: &[f64]) -> f64 {
        let p = self.predict(x);
        let s = p.std / self.y_std;
        s * s
    }

    /// The surrogate estimate `f̂₂` and its input gradient.
    pub fn acquire(&self, x: &[f64], cfg: &AcquisitionConfig) -> (f64, Vec<f64>) {
        let p = self.predict(x);
        let kappa = cfg.signed_kappa();
        if kappa == 0.0 {
            return (p.mean, p.grad_mean);
        }
        let grad = p
            .grad_mean
            .iter()
            .zip(&p.grad_std)
            .map(|(m, s)| m + kappa * s)
            .collect();
        (p.mean + kappa * p.std, grad)
    }
}
