//! The alternating training loop.
//!
//! Epoch 0 seeds the dataset with a Latin hypercube design, evaluates it,
//! fits the surrogate and builds the network. Each later epoch
//!
//! 1. refits the GP on the current true-evaluated dataset,
//! 2. runs `I` network updates on sampled requests,
//! 3. maps a jittered λ-grid of `C` requests through the frozen network,
//! 4. scores that pool with the surrogate,
//! 5. greedily picks `batch` strategies by hypervolume improvement,
//! 6. evaluates them for real and appends them,
//! 7. records metrics and refreshes the ideal point.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::codec::{self, derived_rng, fmt_f64};
use crate::domain::{
    binarize, size_objective, SIZE_LOWER_BOUND, BinarizeMode, F2Source, IdealPoint, ObjectivePair, Request, Strategy,
};
use crate::error::{Error, Result};
use crate::evaluators::{evaluate_true, pareto_oracle, BlackBoxObjective, EvalLedger, SyntheticSpec};
use crate::gp::{self, AcquisitionConfig, FitOptions, SurrogateModel};
use crate::pareto::{self, FrontSet, Normalizer, Point, NORMALIZED_REFERENCE};
use crate::scalarize::ScalarizerKind;
use crate::stratnet::{self, StepContext, StratNet};

const CHECKPOINT_FORMAT: &str = "prefopt-checkpoint/1";

// rng stream labels
const STREAM_LHS: u64 = 1;
const STREAM_STEPS: u64 = 2;
const STREAM_POOL: u64 = 3;
const STREAM_GP: u64 = 4;

fn default_steps() -> usize {
    1000
}
fn default_k() -> usize {
    8
}
fn default_n_init() -> usize {
    32
}
fn default_pool() -> usize {
    2240
}
fn default_batch() -> usize {
    10
}
fn default_lr() -> f64 {
    stratnet::DEFAULT_LR
}
fn default_hidden() -> usize {
    stratnet::DEFAULT_HIDDEN
}
fn default_gp_restarts() -> usize {
    4
}
fn default_gp_steps() -> usize {
    200
}
fn default_reference() -> [f64; 2] {
    [1.1, 1.1]
}

/// How the Tchebycheff ideal point is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IdealMode {
    /// Declared lower bounds of the objectives, falling back to the observed
    /// minimum for an objective without one.
    #[default]
    Bounds,
    /// Running minimum of the observed true objectives.
    Observed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub d: usize,
    pub objective: SyntheticSpec,
    #[serde(rename = "T")]
    pub epochs: usize,
    #[serde(rename = "I", default = "default_steps")]
    pub steps_per_epoch: usize,
    #[serde(rename = "K", default = "default_k")]
    pub requests_per_step: usize,
    #[serde(rename = "N_init", default = "default_n_init")]
    pub n_init: usize,
    #[serde(rename = "C_pool", default = "default_pool")]
    pub pool_size: usize,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default)]
    pub acquisition: AcquisitionConfig,
    #[serde(default)]
    pub scalarizer: ScalarizerKind,
    #[serde(default = "default_lr")]
    pub lr: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_budget: Option<u64>,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_gp_restarts")]
    pub gp_restarts: usize,
    #[serde(default = "default_gp_steps")]
    pub gp_steps: usize,
    #[serde(default)]
    pub ideal: IdealMode,
    /// Keep the epoch-0 surrogate for the whole run.
    #[serde(default)]
    pub freeze_gp: bool,
    /// Fixed reference for the `hv_true_front` metric, in raw objective units.
    #[serde(default = "default_reference")]
    pub metrics_reference: [f64; 2],
    /// Write measured wall time into metrics.csv (otherwise 0, keeping the
    /// file byte-reproducible).
    #[serde(default)]
    pub record_wall_time: bool,
}

const REQUIRED_FIELDS: [&str; 4] = ["d", "objective", "T", "seed"];

impl RunConfig {
    /// Library defaults for everything except the problem itself.
    pub fn new(d: usize, objective: SyntheticSpec, seed: u64) -> Self {
        Self {
            d,
            objective,
            epochs: 50,
            steps_per_epoch: default_steps(),
            requests_per_step: default_k(),
            n_init: default_n_init(),
            pool_size: default_pool(),
            batch: default_batch(),
            acquisition: AcquisitionConfig::default(),
            scalarizer: ScalarizerKind::default(),
            ideal: IdealMode::default(),
            lr: default_lr(),
            seed,
            eval_budget: None,
            hidden: default_hidden(),
            gp_restarts: default_gp_restarts(),
            gp_steps: default_gp_steps(),
            freeze_gp: false,
            metrics_reference: default_reference(),
            record_wall_time: false,
        }
    }

    /// Parses a run-config JSON document, reporting every offending field.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text)
            .map_err(|e| Error::Config(vec![format!("malformed JSON: {e}")]))?;
        let Some(obj) = value.as_object() else {
            return Err(Error::Config(vec!["config must be a JSON object".into()]));
        };
        let missing: Vec<String> = REQUIRED_FIELDS
            .iter()
            .filter(|f| !obj.contains_key(**f))
            .map(|f| format!("missing field \"{f}\""))
            .collect();
        if !missing.is_empty() {
            return Err(Error::Config(missing));
        }
        let cfg: RunConfig =
            serde_json::from_value(value).map_err(|e| Error::Config(vec![e.to_string()]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        let counts = [
            ("d", self.d),
            ("T", self.epochs),
            ("I", self.steps_per_epoch),
            ("K", self.requests_per_step),
            ("N_init", self.n_init),
            ("C_pool", self.pool_size),
            ("batch", self.batch),
            ("hidden", self.hidden),
            ("gp_restarts", self.gp_restarts),
        ];
        for (name, v) in counts {
            if v == 0 {
                bad.push(format!("field \"{name}\" must be positive"));
            }
        }
        if self.n_init < 2 {
            bad.push("field \"N_init\" must be at least 2".into());
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            bad.push("field \"lr\" must be finite and nonnegative".into());
        }
        if !(self.acquisition.kappa.is_finite() && self.acquisition.kappa >= 0.0) {
            bad.push("field \"acquisition.kappa\" must be >= 0".into());
        }
        if let Some(b) = self.eval_budget {
            if b < self.n_init as u64 {
                bad.push("field \"eval_budget\" must cover the N_init initial evaluations".into());
            }
        }
        if self.metrics_reference.iter().any(|v| !v.is_finite()) {
            bad.push("field \"metrics_reference\" must be finite".into());
        }
        if self.d > 0 {
            if let Err(e) = self.objective.build(self.d) {
                bad.push(format!("field \"objective\": {e}"));
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }

    /// Restart draws depend only on the seed and the dataset size, so
    /// refitting an unchanged dataset reproduces the previous model.
    fn fit_options(&self) -> FitOptions {
        FitOptions {
            restarts: self.gp_restarts,
            steps: self.gp_steps,
            step_size: 0.05,
            seed: self.seed ^ STREAM_GP,
        }
    }
}

/// `n` points in `[0,1]^d`, one per stratum along every axis.
pub fn latin_hypercube<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut points = vec![vec![0.0; d]; n];
    let mut perm: Vec<usize> = (0..n).collect();
    for k in 0..d {
        perm.shuffle(rng);
        for (i, p) in points.iter_mut().enumerate() {
            p[k] = (perm[i] as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    points
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Origin {
    Initial,
    Pool { epoch: usize, lambda1: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Strategy,
    pub f: ObjectivePair,
    pub origin: Origin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub dataset_size: usize,
    pub true_evals: u64,
    #[serde(with = "codec::nan_null")]
    pub hv_true_front: f64,
    #[serde(with = "codec::nan_null")]
    pub mean_g_tch: f64,
    #[serde(with = "codec::nan_null")]
    pub gp_loglik: f64,
    #[serde(with = "codec::nan_null")]
    pub wall_ms: f64,
    #[serde(default)]
    pub budget_capped: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingDataset {
    pub samples: Vec<Sample>,
    pub history: Vec<EpochMetrics>,
}

impl TrainingDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn inputs(&self) -> Vec<Vec<f64>> {
        self.samples.iter().map(|s| s.x.values().to_vec()).collect()
    }

    pub fn f2_targets(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.f.f2).collect()
    }

    pub fn points(&self) -> Vec<Point> {
        self.samples.iter().map(|s| s.f.as_point()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DatasetSnapshot {
    dim: usize,
    #[serde(with = "codec::b64")]
    x: Vec<f64>,
    #[serde(with = "codec::b64")]
    f1: Vec<f64>,
    #[serde(with = "codec::b64")]
    f2: Vec<f64>,
    origins: Vec<Origin>,
}

/// Everything needed to continue or serve a run; also the bundle format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub epoch: usize,
    pub config: RunConfig,
    dataset: DatasetSnapshot,
    pub history: Vec<EpochMetrics>,
    pub gp: gp::SurrogateSnapshot,
    pub gp_fit_size: usize,
    pub stratnet: stratnet::StratNetSnapshot,
    pub ideal: IdealPoint,
    pub true_evaluations: u64,
    pub cache_hits: u64,
    pub budget_exhausted: bool,
}

/// Live state of a run.
pub struct Trainer {
    cfg: RunConfig,
    objective: Box<dyn BlackBoxObjective>,
    dataset: TrainingDataset,
    gp: SurrogateModel,
    gp_fit_size: usize,
    net: StratNet,
    ideal: IdealPoint,
    ledger: EvalLedger,
    epoch: usize,
    budget_exhausted: bool,
}

/// A finished (or budget-stopped) run.
pub type TrainedBundle = Trainer;

/// One answered request.
#[derive(Debug, Clone, PartialEq)]
pub struct Answer {
    pub request: Request,
    pub x: Strategy,
    pub f1: f64,
    pub f2_hat: f64,
    pub f2_source: F2Source,
}

fn ideal_of(mode: IdealMode, objective: &dyn BlackBoxObjective, dataset: &TrainingDataset) -> IdealPoint {
    let pairs = dataset.samples.iter().map(|s| &s.f);
    match mode {
        IdealMode::Bounds => IdealPoint::from_bounds([Some(SIZE_LOWER_BOUND), objective.lower_bound()], pairs),
        IdealMode::Observed => IdealPoint::from_observed(pairs),
    }
    .expect("dataset holds the initial design")
}

impl Trainer {
    /// Builds the initial design, fits the surrogate and creates the network,
    /// using the configured synthetic objective.
    pub fn initialize(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let objective = Box::new(cfg.objective.build(cfg.d)?);
        Self::initialize_with(cfg, objective)
    }

    /// Like [`Trainer::initialize`] with an arbitrary black-box objective.
    pub fn initialize_with(cfg: RunConfig, objective: Box<dyn BlackBoxObjective>) -> Result<Self> {
        cfg.validate()?;
        if objective.dim() != cfg.d {
            return Err(Error::InvalidArgument(format!(
                "objective dimension {} differs from configured d = {}",
                objective.dim(),
                cfg.d
            )));
        }
        let start = Instant::now();
        let mut rng = derived_rng(cfg.seed, 0, STREAM_LHS);
        let mut ledger = EvalLedger::new();
        let mut dataset = TrainingDataset::default();
        for row in latin_hypercube(cfg.n_init, cfg.d, &mut rng) {
            let x = Strategy::with_dim(row, cfg.d)?;
            let f2 = evaluate_true(objective.as_ref(), &x, &mut ledger)?;
            let f = ObjectivePair::new(size_objective(&x), f2, F2Source::True)?;
            dataset.samples.push(Sample {
                x,
                f,
                origin: Origin::Initial,
            });
        }
        let gp = gp::fit(&dataset.inputs(), &dataset.f2_targets(), &cfg.fit_options())?;
        let net = StratNet::new(cfg.d, cfg.hidden, cfg.lr, cfg.seed);
        let ideal = ideal_of(cfg.ideal, objective.as_ref(), &dataset);
        let mut trainer = Self {
            gp_fit_size: dataset.len(),
            cfg,
            objective,
            dataset,
            gp,
            net,
            ideal,
            ledger,
            epoch: 0,
            budget_exhausted: false,
        };
        trainer.record_metrics(f64::NAN, false, start);
        Ok(trainer)
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn dataset(&self) -> &TrainingDataset {
        &self.dataset
    }

    pub fn surrogate(&self) -> &SurrogateModel {
        &self.gp
    }

    pub fn network(&self) -> &StratNet {
        &self.net
    }

    pub fn ideal(&self) -> &IdealPoint {
        &self.ideal
    }

    pub fn ledger(&self) -> &EvalLedger {
        &self.ledger
    }

    pub fn objective(&self) -> &dyn BlackBoxObjective {
        self.objective.as_ref()
    }

    /// Changes the number of epochs a resumed run continues to.
    pub fn set_epochs(&mut self, epochs: usize) -> Result<()> {
        if epochs == 0 {
            return Err(Error::Config(vec!["field \"T\" must be positive".into()]));
        }
        self.cfg.epochs = epochs;
        Ok(())
    }

    pub fn budget_exhausted(&self) -> bool {
        self.budget_exhausted
    }

    pub fn is_finished(&self) -> bool {
        self.budget_exhausted || self.epoch >= self.cfg.epochs
    }

    fn record_metrics(&mut self, mean_loss: f64, capped: bool, start: Instant) {
        let r = self.cfg.metrics_reference;
        let hv = pareto::hypervolume(&self.dataset.points(), (r[0], r[1]));
        let wall_ms = if self.cfg.record_wall_time {
            start.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        };
        self.dataset.history.push(EpochMetrics {
            epoch: self.epoch,
            dataset_size: self.dataset.len(),
            true_evals: self.ledger.true_evaluations(),
            hv_true_front: hv,
            mean_g_tch: mean_loss,
            gp_loglik: self.gp.log_likelihood(),
            wall_ms,
            budget_capped: capped,
        });
    }

    /// Runs one full epoch.
    pub fn run_epoch(&mut self) -> Result<()> {
        if self.budget_exhausted {
            return Ok(());
        }
        let start = Instant::now();
        let epoch = self.epoch + 1;
        let cfg = self.cfg.clone();

        if !cfg.freeze_gp && self.dataset.len() != self.gp_fit_size {
            self.gp = gp::fit(
                &self.dataset.inputs(),
                &self.dataset.f2_targets(),
                &cfg.fit_options(),
            )?;
            self.gp_fit_size = self.dataset.len();
        }

        let mut rng = derived_rng(cfg.seed, epoch as u64, STREAM_STEPS);
        let mut loss_sum = 0.0;
        for _ in 0..cfg.steps_per_epoch {
            let ctx = StepContext {
                model: &self.gp,
                acquisition: &cfg.acquisition,
                ideal: &self.ideal,
                scalarizer: cfg.scalarizer,
            };
            loss_sum += stratnet::training_step(&mut self.net, &ctx, cfg.requests_per_step, &mut rng)?;
        }
        let mean_loss = loss_sum / cfg.steps_per_epoch as f64;

        let pool_requests = pool_requests(cfg.pool_size, cfg.seed, epoch);
        let pool = self.score_requests(&pool_requests);

        let remaining = cfg
            .eval_budget
            .map_or(u64::MAX, |b| b.saturating_sub(self.ledger.true_evaluations()));
        let take = (cfg.batch as u64).min(remaining) as usize;
        let capped = take < cfg.batch;

        let norm = Normalizer::fit(&self.dataset.points());
        let existing = FrontSet::new(
            self.dataset.points().into_iter().map(|p| norm.apply(p)).collect(),
            NORMALIZED_REFERENCE,
        );
        let pool_points: Vec<Point> = pool.iter().map(|a| norm.apply((a.f1, a.f2_hat))).collect();
        let picked = if take > 0 {
            pareto::select_batch(&existing, &pool_points, take)
        } else {
            Vec::new()
        };

        for i in picked {
            let a = &pool[i];
            let f2 = evaluate_true(self.objective.as_ref(), &a.x, &mut self.ledger)?;
            let f = ObjectivePair::new(a.f1, f2, F2Source::True)?;
            self.dataset.samples.push(Sample {
                x: a.x.clone(),
                f,
                origin: Origin::Pool {
                    epoch,
                    lambda1: a.request.lambda1(),
                },
            });
        }
        self.ideal = ideal_of(cfg.ideal, self.objective.as_ref(), &self.dataset);
        self.epoch = epoch;
        if capped {
            self.budget_exhausted = true;
        }
        self.record_metrics(mean_loss, capped, start);
        Ok(())
    }

    /// Network strategies and surrogate scores for a request list. No true
    /// evaluations happen here.
    pub fn score_requests(&self, requests: &[Request]) -> Vec<Answer> {
        requests
            .par_iter()
            .map(|lam| {
                let x = self.net.predict(lam);
                self.answer_for(*lam, x)
            })
            .collect()
    }

    fn answer_for(&self, request: Request, x: Strategy) -> Answer {
        let (f2_hat, _) = self.gp.acquire(x.values(), &self.cfg.acquisition);
        Answer {
            request,
            f1: size_objective(&x),
            x,
            f2_hat,
            f2_source: F2Source::Surrogate,
        }
    }

    /// Serves a batch of requests from the trained network, optionally
    /// binarizing each strategy before scoring it.
    pub fn answer_requests(
        &self,
        requests: &[Request],
        mode: Option<BinarizeMode>,
    ) -> Result<Vec<Answer>> {
        requests
            .iter()
            .map(|lam| {
                let mut x = self.net.predict(lam);
                if let Some(mode) = mode {
                    x = binarize(&x, mode)?;
                }
                Ok(self.answer_for(*lam, x))
            })
            .collect()
    }

    /// Evaluates the network on `n` evenly spaced requests with the true
    /// objective. Each call to the objective is counted in `ledger`.
    pub fn true_sweep(&self, n: usize, ledger: &mut EvalLedger) -> Result<Vec<(Request, Strategy, ObjectivePair)>> {
        grid_requests(n)?
            .into_iter()
            .map(|lam| {
                let x = self.net.predict(&lam);
                let f2 = evaluate_true(self.objective.as_ref(), &x, ledger)?;
                let f = ObjectivePair::new(size_objective(&x), f2, F2Source::True)?;
                Ok((lam, x, f))
            })
            .collect()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let dim = self.cfg.d;
        let s = &self.dataset.samples;
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            epoch: self.epoch,
            config: self.cfg.clone(),
            dataset: DatasetSnapshot {
                dim,
                x: s.iter().flat_map(|s| s.x.values().iter().copied()).collect(),
                f1: s.iter().map(|s| s.f.f1).collect(),
                f2: s.iter().map(|s| s.f.f2).collect(),
                origins: s.iter().map(|s| s.origin).collect(),
            },
            history: self.dataset.history.clone(),
            gp: self.gp.snapshot(),
            gp_fit_size: self.gp_fit_size,
            stratnet: self.net.snapshot(),
            ideal: self.ideal,
            true_evaluations: self.ledger.true_evaluations(),
            cache_hits: self.ledger.cache_hits(),
            budget_exhausted: self.budget_exhausted,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let objective = Box::new(ck.config.objective.build(ck.config.d)?);
        Self::from_checkpoint_with(ck, objective)
    }

    pub fn from_checkpoint_with(ck: &Checkpoint, objective: Box<dyn BlackBoxObjective>) -> Result<Self> {
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unknown format {:?}", ck.format)));
        }
        ck.config.validate()?;
        let ds = &ck.dataset;
        let n = ds.origins.len();
        if ds.dim != ck.config.d || ds.x.len() != n * ds.dim || ds.f1.len() != n || ds.f2.len() != n {
            return Err(Error::Checkpoint("dataset arrays have inconsistent lengths".into()));
        }
        let mut dataset = TrainingDataset {
            samples: Vec::with_capacity(n),
            history: ck.history.clone(),
        };
        for i in 0..n {
            let x = Strategy::with_dim(ds.x[i * ds.dim..(i + 1) * ds.dim].to_vec(), ds.dim)?;
            let f = ObjectivePair::new(ds.f1[i], ds.f2[i], F2Source::True)?;
            dataset.samples.push(Sample {
                x,
                f,
                origin: ds.origins[i],
            });
        }
        let ledger = EvalLedger::restore(
            dataset.samples.iter().map(|s| (&s.x, s.f.f2)),
            ck.true_evaluations,
            ck.cache_hits,
        );
        Ok(Self {
            cfg: ck.config.clone(),
            objective,
            dataset,
            gp: SurrogateModel::from_snapshot(&ck.gp)?,
            gp_fit_size: ck.gp_fit_size,
            net: StratNet::from_snapshot(&ck.stratnet)?,
            ideal: ck.ideal,
            ledger,
            epoch: ck.epoch,
            budget_exhausted: ck.budget_exhausted,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.checkpoint())?;
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, text)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::from_checkpoint(&ck)
    }

    pub fn write_metrics_csv(&self, path: &Path) -> Result<()> {
        write_metrics_csv(path, &self.dataset.history)
    }
}

/// Hypervolume of a trained network's front against the brute-force optimum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrontScore {
    pub hv: f64,
    pub oracle_hv: f64,
    pub ratio: f64,
    /// True evaluations spent on the sweep (not counted by the run itself).
    pub scoring_evaluations: u64,
}

/// Sweeps the final network over `grid` evenly spaced requests, evaluates the
/// strategies with the true objective and compares the resulting hypervolume
/// with that of the oracle front at `oracle_resolution`. Both use the run's
/// `metrics_reference`.
pub fn score_front(trainer: &Trainer, grid: usize, oracle_resolution: usize) -> Result<FrontScore> {
    let cfg = trainer.config();
    let reference = (cfg.metrics_reference[0], cfg.metrics_reference[1]);
    let mut ledger = EvalLedger::new();
    let sweep = trainer.true_sweep(grid, &mut ledger)?;
    let points: Vec<Point> = sweep.iter().map(|(_, _, f)| f.as_point()).collect();
    let hv = pareto::hypervolume(&points, reference);
    let objective = cfg.objective.build(cfg.d)?;
    let oracle: Vec<Point> = pareto_oracle(&objective, oracle_resolution)?
        .iter()
        .map(|(_, f)| f.as_point())
        .collect();
    let oracle_hv = pareto::hypervolume(&oracle, reference);
    Ok(FrontScore {
        hv,
        oracle_hv,
        ratio: hv / oracle_hv,
        scoring_evaluations: ledger.true_evaluations(),
    })
}

/// `n` requests with `λ₁` evenly spaced over `[0, 1]`.
pub fn grid_requests(n: usize) -> Result<Vec<Request>> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("grid size {n} must be at least 2")));
    }
    (0..n)
        .map(|i| Request::new(if i + 1 == n { 1.0 } else { i as f64 / (n - 1) as f64 }))
        .collect()
}

/// Stratified λ-grid: one request per cell of width `1/c`, uniformly jittered
/// inside its cell.
pub fn pool_requests(c: usize, seed: u64, epoch: usize) -> Vec<Request> {
    let mut rng = derived_rng(seed, epoch as u64, STREAM_POOL);
    (0..c)
        .map(|i| {
            let l = ((i as f64 + rng.random::<f64>()) / c as f64).min(1.0);
            Request::new(l).expect("cell lies in [0, 1]")
        })
        .collect()
}

pub const METRICS_HEADER: &str = "epoch,dataset_size,true_evals,hv_true_front,mean_g_tch,gp_loglik,wall_ms";

pub fn write_metrics_csv(path: &Path, history: &[EpochMetrics]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{METRICS_HEADER}")?;
    for m in history {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            m.epoch,
            m.dataset_size,
            m.true_evals,
            fmt_f64(m.hv_true_front),
            fmt_f64(m.mean_g_tch),
            fmt_f64(m.gp_loglik),
            fmt_f64(m.wall_ms)
        )?;
    }
    out.flush()?;
    Ok(())
}

/// A module error tagged with the epoch it interrupted and the last
/// checkpoint that was written successfully.
#[derive(Debug)]
pub struct RunFailure {
    pub epoch: usize,
    pub last_checkpoint: Option<PathBuf>,
    pub error: Error,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "epoch {} failed: {}", self.epoch, self.error)?;
        if let Some(p) = &self.last_checkpoint {
            write!(f, " (last good checkpoint: {})", p.display())?;
        }
        Ok(())
    }
}

impl std::error::Error for RunFailure {}

/// Runs epochs until `T` (or the evaluation budget), writing
/// `checkpoint_<epoch>.json` and `metrics.csv` after every epoch and
/// `bundle.json` at the end when `out_dir` is given.
pub fn continue_run(mut trainer: Trainer, out_dir: Option<&Path>) -> std::result::Result<Trainer, RunFailure> {
    let mut last_checkpoint = None;
    let persist = |t: &Trainer, last: &mut Option<PathBuf>| -> Result<()> {
        if let Some(dir) = out_dir {
            let path = dir.join(format!("checkpoint_{}.json", t.epoch()));
            t.save(&path)?;
            t.write_metrics_csv(&dir.join("metrics.csv"))?;
            *last = Some(path);
        }
        Ok(())
    };
    persist(&trainer, &mut last_checkpoint).map_err(|error| RunFailure {
        epoch: trainer.epoch(),
        last_checkpoint: None,
        error,
    })?;
    while !trainer.is_finished() {
        let epoch = trainer.epoch() + 1;
        let step = trainer
            .run_epoch()
            .and_then(|_| persist(&trainer, &mut last_checkpoint));
        if let Err(error) = step {
            return Err(RunFailure {
                epoch,
                last_checkpoint,
                error,
            });
        }
    }
    if let Some(dir) = out_dir {
        trainer.save(&dir.join("bundle.json")).map_err(|error| RunFailure {
            epoch: trainer.epoch(),
            last_checkpoint: last_checkpoint.clone(),
            error,
        })?;
    }
    Ok(trainer)
}

/// Initializes and trains a full run.
pub fn run(cfg: RunConfig, out_dir: Option<&Path>) -> std::result::Result<Trainer, RunFailure> {
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| RunFailure {
            epoch: 0,
            last_checkpoint: None,
            error: e.into(),
        })?;
    }
    let trainer = Trainer::initialize(cfg).map_err(|error| RunFailure {
        epoch: 0,
        last_checkpoint: None,
        error,
    })?;
    continue_run(trainer, out_dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_config() -> RunConfig {
        let mut cfg = RunConfig::new(3, SyntheticSpec::power_sum(1), 5);
        cfg.epochs = 2;
        cfg.steps_per_epoch = 20;
        cfg.n_init = 8;
        cfg.pool_size = 40;
        cfg.batch = 3;
        cfg.gp_steps = 30;
        cfg
    }

    #[test]
    fn latin_hypercube_strata() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = latin_hypercube(32, 12, &mut rng);
        for k in 0..12 {
            let mut bins = [0usize; 32];
            for p in &pts {
                bins[(p[k] * 32.0).floor() as usize] += 1;
            }
            assert!(bins.iter().all(|&b| b == 1));
        }
    }

    #[test]
    fn grid_and_pool_requests() {
        let g = grid_requests(2).unwrap();
        assert_eq!(g.iter().map(|r| r.lambda1()).collect::<Vec<_>>(), vec![0.0, 1.0]);
        assert_eq!(grid_requests(11).unwrap().len(), 11);
        assert!(grid_requests(1).is_err());
        let pool = pool_requests(100, 3, 1);
        for (i, r) in pool.iter().enumerate() {
            assert!(r.lambda1() >= i as f64 / 100.0 && r.lambda1() <= (i + 1) as f64 / 100.0);
        }
        assert_eq!(pool, pool_requests(100, 3, 1));
        assert_ne!(pool, pool_requests(100, 3, 2));
    }

    #[test]
    fn config_reports_every_missing_field() {
        let err = RunConfig::from_json_str(r#"{"d": 4, "objective": {"family": "PowerSum"}}"#).unwrap_err();
        let Error::Config(list) = err else { panic!() };
        assert_eq!(list.len(), 2);
        assert!(list.iter().any(|m| m.contains("\"T\"")));
        assert!(list.iter().any(|m| m.contains("\"seed\"")));
    }

    #[test]
    fn config_reports_every_invalid_value() {
        let text = r#"{"d": 4, "objective": {"family": "PowerSum"}, "T": 0, "seed": 1,
                       "batch": 0, "lr": -1.0}"#;
        let Error::Config(list) = RunConfig::from_json_str(text).unwrap_err() else { panic!() };
        assert_eq!(list.len(), 3, "{list:?}");
        let unknown = r#"{"d": 4, "objective": {"family": "PowerSum"}, "T": 1, "seed": 1, "bogus": 3}"#;
        assert!(matches!(RunConfig::from_json_str(unknown), Err(Error::Config(_))));
    }

    #[test]
    fn config_defaults_follow_the_documented_values() {
        let cfg = RunConfig::from_json_str(r#"{"d": 4, "objective": {"family": "PowerSum", "seed": 2}, "T": 3, "seed": 1}"#).unwrap();
        assert_eq!(cfg.steps_per_epoch, 1000);
        assert_eq!(cfg.pool_size, 2240);
        assert_eq!(cfg.batch, 10);
        assert_eq!(cfg.n_init, 32);
        assert_eq!(cfg.requests_per_step, 8);
        assert_eq!(cfg.lr, 1e-3);
        assert_eq!(cfg.acquisition, AcquisitionConfig::default());
        assert_eq!(cfg.scalarizer, ScalarizerKind::Tchebycheff);
        let json = r#"{"d": 2, "objective": {"family": "PowerSum"}, "T": 3, "seed": 1,
                       "acquisition": {"kind": "optimistic", "kappa": 1.0}, "scalarizer": "pbi:5"}"#;
        let cfg = RunConfig::from_json_str(json).unwrap();
        assert_eq!(cfg.scalarizer, ScalarizerKind::Pbi(5.0));
        assert_eq!(cfg.acquisition.kind, gp::AcquisitionKind::Optimistic);
    }

    #[test]
    fn initialize_bookkeeping() {
        let mut cfg = small_config();
        cfg.d = 12;
        cfg.n_init = 32;
        let t = Trainer::initialize(cfg).unwrap();
        assert_eq!(t.dataset().len(), 32);
        assert_eq!(t.ledger().true_evaluations(), 32);
        assert_eq!(t.dataset().history.len(), 1);
        assert!(t.dataset().samples.iter().all(|s| s.origin == Origin::Initial));
    }

    #[test]
    fn epochs_grow_dataset_by_batch() {
        let mut t = Trainer::initialize(small_config()).unwrap();
        t.run_epoch().unwrap();
        assert_eq!(t.dataset().len(), 11);
        assert_eq!(t.ledger().true_evaluations(), 11);
        assert!(t.dataset().samples[8..]
            .iter()
            .all(|s| matches!(s.origin, Origin::Pool { epoch: 1, .. })));
        let h = &t.dataset().history;
        assert!(h[1].hv_true_front >= h[0].hv_true_front);
    }

    #[test]
    fn budget_cap_stops_gracefully() {
        let mut cfg = small_config();
        cfg.eval_budget = Some(10);
        cfg.epochs = 5;
        let t = run(cfg, None).unwrap();
        assert!(t.budget_exhausted());
        assert_eq!(t.ledger().true_evaluations(), 10);
        assert_eq!(t.epoch(), 1);
        assert!(t.dataset().history.last().unwrap().budget_capped);
    }

    #[test]
    fn answering_costs_no_evaluations() {
        let t = run(small_config(), None).unwrap();
        let before = t.ledger().true_evaluations();
        let reqs = grid_requests(64).unwrap();
        let answers = t.answer_requests(&reqs, None).unwrap();
        assert_eq!(answers.len(), 64);
        assert_eq!(t.ledger().true_evaluations(), before);
        assert!(answers.iter().all(|a| a.f2_source == F2Source::Surrogate));
        let dup = t.answer_requests(&[reqs[5], reqs[5]], Some(BinarizeMode::Threshold)).unwrap();
        assert_eq!(dup[0], dup[1]);
        assert!(dup[0].x.values().iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn checkpoint_round_trip_preserves_state() {
        let t = run(small_config(), None).unwrap();
        let json = serde_json::to_string(&t.checkpoint()).unwrap();
        let back = Trainer::from_checkpoint(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(serde_json::to_string(&back.checkpoint()).unwrap(), json);
    }
}
