//! Command-line front end: training, request answering, front sweeps,
//! variant comparison and the brute-force oracle.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::codec::fmt_f64;
use crate::domain::{BinarizeMode, Request};
use crate::error::{Error, Result};
use crate::evaluators::{evaluate_true, pareto_oracle, EvalLedger};
use crate::gp::AcquisitionKind;
use crate::pareto;
use crate::scalarize::ScalarizerKind;
use crate::trainer::{self, grid_requests, score_front, RunConfig, Trainer};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_BUDGET: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "prefopt", version, about = "Request-conditioned Pareto set learning with a GP surrogate")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a strategy network from a run-config JSON file.
    Train {
        config: PathBuf,
        /// Directory receiving metrics.csv, checkpoints and bundle.json.
        #[arg(long, default_value = "prefopt-run")]
        out: PathBuf,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Generate strategies for a batch of requests without true evaluations.
    Answer {
        bundle: PathBuf,
        /// CSV file with a `lambda1` header.
        #[arg(long, conflicts_with = "grid", required_unless_present = "grid")]
        requests: Option<PathBuf>,
        /// Use N evenly spaced requests instead of a file.
        #[arg(long)]
        grid: Option<usize>,
        /// `threshold` or `topk:<k>`.
        #[arg(long)]
        binarize: Option<BinarizeMode>,
        /// Output CSV (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tabulate the learned front over an evenly spaced request grid.
    Sweep {
        bundle: PathBuf,
        #[arg(long)]
        grid: usize,
        /// Also evaluate every strategy with the true objective.
        #[arg(long, requires = "budget")]
        true_eval: bool,
        /// Maximum number of true evaluations the sweep may spend.
        #[arg(long)]
        budget: Option<u64>,
        #[arg(long, default_value = "front.csv")]
        out: PathBuf,
    },
    /// Train one run per variant and compare final fronts with the oracle.
    Compare {
        config: PathBuf,
        /// Any of ws, tch, pbi:<xi>, acq:none, acq:paperlcb, acq:optimistic.
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
        variants: Vec<String>,
        #[arg(long, default_value = "compare.csv")]
        out: PathBuf,
        /// Requests in the scoring sweep.
        #[arg(long, default_value_t = 101)]
        grid: usize,
        /// Oracle grid resolution per coordinate.
        #[arg(long, default_value_t = 200)]
        resolution: usize,
    },
    /// Brute-force the true Pareto front of the configured objective.
    Oracle {
        config: PathBuf,
        #[arg(long)]
        resolution: usize,
        #[arg(long, default_value = "oracle.csv")]
        out: PathBuf,
    },
}

/// Maps a library error onto the documented process exit codes.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::InvalidArgument(_) | Error::Checkpoint(_) | Error::Json(_) => EXIT_CONFIG,
        Error::NumericalFailure(_) | Error::EvaluatorFault(_) => EXIT_NUMERICAL,
        Error::BudgetExceeded(_) => EXIT_BUDGET,
        Error::Io(_) => EXIT_IO,
    }
}

/// A comparison variant: one change applied to the base config.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Variant {
    Scalarizer(ScalarizerKind),
    Acquisition(AcquisitionKind),
}

impl Variant {
    pub fn parse(s: &str) -> Result<Self> {
        let acq = match s {
            "acq:none" => Some(AcquisitionKind::MeanOnly),
            "acq:paperlcb" => Some(AcquisitionKind::Pessimistic),
            "acq:optimistic" => Some(AcquisitionKind::Optimistic),
            _ => None,
        };
        if let Some(kind) = acq {
            return Ok(Self::Acquisition(kind));
        }
        s.parse::<ScalarizerKind>()
            .map(Self::Scalarizer)
            .map_err(|_| Error::Config(vec![format!("unknown variant {s:?}")]))
    }

    pub fn apply(&self, cfg: &mut RunConfig) {
        match *self {
            Self::Scalarizer(k) => cfg.scalarizer = k,
            Self::Acquisition(k) => cfg.acquisition.kind = k,
        }
    }
}

fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(vec![format!("cannot read {}: {e}", path.display())]))?;
    RunConfig::from_json_str(&text)
}

fn load_bundle(path: &Path) -> Result<Trainer> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
    let ck = serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    Trainer::from_checkpoint(&ck)
}

/// Reads a request CSV whose first line is the header `lambda1`.
pub fn read_requests(path: &Path) -> Result<Vec<Request>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    match lines.next() {
        Some("lambda1") => {}
        other => {
            return Err(Error::InvalidArgument(format!(
                "request file must start with the header `lambda1`, found {other:?}"
            )))
        }
    }
    lines
        .enumerate()
        .map(|(i, l)| {
            let v: f64 = l
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("row {}: {l:?} is not a number", i + 1)))?;
            Request::new(v)
        })
        .collect()
}

fn cmd_train(config: &Path, out: &Path, resume: Option<&Path>) -> Result<i32> {
    let cfg = load_config(config)?;
    std::fs::create_dir_all(out)?;
    let trainer = match resume {
        Some(ck) => {
            let mut t = load_bundle(ck)?;
            let mut saved = t.config().clone();
            saved.epochs = cfg.epochs;
            if saved != cfg {
                return Err(Error::Config(vec![format!(
                    "{} was written by a different configuration",
                    ck.display()
                )]));
            }
            t.set_epochs(cfg.epochs)?;
            t
        }
        None => Trainer::initialize(cfg)?,
    };
    let done = trainer::continue_run(trainer, Some(out)).map_err(|f| {
        eprintln!("{f}");
        f.error
    })?;
    let last = done.dataset().history.last().expect("epoch 0 is always recorded");
    println!(
        "trained {} epochs: dataset {} points, {} true evaluations, hv {}",
        done.epoch(),
        last.dataset_size,
        last.true_evals,
        fmt_f64(last.hv_true_front)
    );
    if done.budget_exhausted() {
        eprintln!("evaluation budget exhausted after epoch {}; results are partial", done.epoch());
        return Ok(EXIT_BUDGET);
    }
    Ok(EXIT_OK)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_answer(
    bundle: &Path,
    requests: Option<&Path>,
    grid: Option<usize>,
    binarize: Option<BinarizeMode>,
    out: Option<&Path>,
) -> Result<i32> {
    let t = load_bundle(bundle)?;
    let reqs = match (requests, grid) {
        (Some(p), _) => read_requests(p)?,
        (None, Some(n)) => grid_requests(n)?,
        (None, None) => return Err(Error::InvalidArgument("pass --requests or --grid".into())),
    };
    let answers = t.answer_requests(&reqs, binarize)?;
    let mut text = String::from("lambda1,f1,f2_surrogate");
    for k in 0..t.config().d {
        write!(text, ",x{k}").unwrap();
    }
    text.push('\n');
    for a in &answers {
        write!(text, "{},{},{}", fmt_f64(a.request.lambda1()), fmt_f64(a.f1), fmt_f64(a.f2_hat)).unwrap();
        for v in a.x.values() {
            write!(text, ",{}", fmt_f64(*v)).unwrap();
        }
        text.push('\n');
    }
    emit(out, &text)?;
    Ok(EXIT_OK)
}

fn cmd_sweep(bundle: &Path, grid: usize, true_eval: bool, budget: Option<u64>, out: &Path) -> Result<i32> {
    let t = load_bundle(bundle)?;
    let reqs = grid_requests(grid)?;
    if true_eval {
        let budget = budget.unwrap_or(0);
        if grid as u64 > budget {
            return Err(Error::BudgetExceeded(format!(
                "sweep of {grid} requests needs more than the budget of {budget} true evaluations"
            )));
        }
    }
    let answers = t.score_requests(&reqs);
    let mut ledger = EvalLedger::new();
    let mut text = String::from(if true_eval {
        "lambda1,f1,f2_surrogate,f2_true\n"
    } else {
        "lambda1,f1,f2_surrogate\n"
    });
    for a in &answers {
        write!(text, "{},{},{}", fmt_f64(a.request.lambda1()), fmt_f64(a.f1), fmt_f64(a.f2_hat)).unwrap();
        if true_eval {
            let v = evaluate_true(t.objective(), &a.x, &mut ledger)?;
            write!(text, ",{}", fmt_f64(v)).unwrap();
        }
        text.push('\n');
    }
    std::fs::write(out, text)?;
    let monotone = answers.windows(2).all(|w| w[1].f1 <= w[0].f1);
    println!(
        "wrote {} rows to {}; f1_nonincreasing={monotone}; true_evaluations={}",
        answers.len(),
        out.display(),
        ledger.true_evaluations()
    );
    Ok(EXIT_OK)
}

/// One row of compare.csv.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub variant: String,
    pub final_hv: f64,
    pub hv_ratio: f64,
}

/// Trains one run per variant from the same base config and seed.
pub fn compare(base: &RunConfig, variants: &[String], grid: usize, resolution: usize) -> Result<Vec<CompareRow>> {
    let parsed = variants
        .iter()
        .map(|v| Variant::parse(v))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(parsed.len());
    for (name, v) in variants.iter().zip(parsed) {
        let mut cfg = base.clone();
        v.apply(&mut cfg);
        let t = trainer::run(cfg, None).map_err(|f| f.error)?;
        let score = score_front(&t, grid, resolution)?;
        rows.push(CompareRow {
            variant: name.clone(),
            final_hv: score.hv,
            hv_ratio: score.ratio,
        });
    }
    Ok(rows)
}

fn cmd_compare(config: &Path, variants: &[String], out: &Path, grid: usize, resolution: usize) -> Result<i32> {
    let cfg = load_config(config)?;
    let rows = compare(&cfg, variants, grid, resolution)?;
    let mut text = String::from("variant,final_hv,hv_ratio\n");
    for r in &rows {
        writeln!(text, "{},{},{}", r.variant, fmt_f64(r.final_hv), fmt_f64(r.hv_ratio)).unwrap();
    }
    std::fs::write(out, &text)?;
    print!("{text}");
    Ok(EXIT_OK)
}

fn cmd_oracle(config: &Path, resolution: usize, out: &Path) -> Result<i32> {
    let cfg = load_config(config)?;
    let objective = cfg.objective.build(cfg.d)?;
    let front = pareto_oracle(&objective, resolution)?;
    let mut text = String::from("f1,f2\n");
    for (_, f) in &front {
        writeln!(text, "{},{}", fmt_f64(f.f1), fmt_f64(f.f2)).unwrap();
    }
    std::fs::write(out, text)?;
    let r = cfg.metrics_reference;
    let points: Vec<_> = front.iter().map(|(_, f)| f.as_point()).collect();
    println!(
        "oracle front: {} points, hv {}",
        front.len(),
        fmt_f64(pareto::hypervolume(&points, (r[0], r[1])))
    );
    Ok(EXIT_OK)
}

fn configure_threads() {
    if let Some(n) = std::env::var("PREFOPT_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            // a pool built earlier in the same process wins; that is fine
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

pub fn execute(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Train { config, out, resume } => cmd_train(&config, &out, resume.as_deref()),
        Command::Answer {
            bundle,
            requests,
            grid,
            binarize,
            out,
        } => cmd_answer(&bundle, requests.as_deref(), grid, binarize, out.as_deref()),
        Command::Sweep {
            bundle,
            grid,
            true_eval,
            budget,
            out,
        } => cmd_sweep(&bundle, grid, true_eval, budget, &out),
        Command::Compare {
            config,
            variants,
            out,
            grid,
            resolution,
        } => cmd_compare(&config, &variants, &out, grid, resolution),
        Command::Oracle { config, resolution, out } => cmd_oracle(&config, resolution, &out),
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    configure_threads();
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variants_parse() {
        assert_eq!(Variant::parse("ws").unwrap(), Variant::Scalarizer(ScalarizerKind::WeightedSum));
        assert_eq!(Variant::parse("pbi:0.1").unwrap(), Variant::Scalarizer(ScalarizerKind::Pbi(0.1)));
        assert_eq!(Variant::parse("acq:none").unwrap(), Variant::Acquisition(AcquisitionKind::MeanOnly));
        assert!(matches!(Variant::parse("acq:bogus"), Err(Error::Config(_))));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config(vec![])), 2);
        assert_eq!(exit_code(&Error::NumericalFailure(String::new())), 3);
        assert_eq!(exit_code(&Error::BudgetExceeded(String::new())), 4);
    }

    #[test]
    fn request_file_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        std::fs::write(&p, "lambda1\n0.25\n1\n").unwrap();
        let r = read_requests(&p).unwrap();
        assert_eq!(r.iter().map(|r| r.lambda1()).collect::<Vec<_>>(), vec![0.25, 1.0]);
        std::fs::write(&p, "lambda\n0.25\n").unwrap();
        assert!(read_requests(&p).is_err());
        std::fs::write(&p, "lambda1\n1.5\n").unwrap();
        assert!(read_requests(&p).is_err());
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(main_with_args(["prefopt", "sweep"]), 2);
        assert_eq!(main_with_args(["prefopt", "--help"]), 0);
    }
}
