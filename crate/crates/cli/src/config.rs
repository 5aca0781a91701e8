//! Command-line flags and the resolved, fingerprinted run configuration.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use simplex_score::assembly::{sample_removed, DeltaPolicy, LossConfig};
use simplex_score::model::{Mode, ModelSpec};
use simplex_score::solver::{PathGrid, SolverOptions};
use simplex_score::weights::{Truncation, WeightSpec};

use crate::error::{CliError, CliResult};
use crate::io::{sha256_hex, Ingest};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "simplex-score", version, about = "Score matching for power-interaction models on the simplex")]
pub struct Cli {
    /// Worker threads (default: all cores). Outputs do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a synthetic dataset and record the ground truth.
    Simulate(SimulateArgs),
    /// Fit a regularization path and choose a penalty by cross validation.
    Estimate(EstimateArgs),
    /// Support-recovery and estimation-error metrics against a known truth.
    Eval(EvalArgs),
    /// Permutation tests for differences between two groups' graphs.
    Difftest(DifftestArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    General,
    Symmetric,
    Am1,
    Centered,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::General => Mode::General,
            ModeArg::Symmetric => Mode::Symmetric,
            ModeArg::Am1 => Mode::Am1,
            ModeArg::Centered => Mode::Centered,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long = "a", default_value_t = 0.0)]
    pub a: f64,
    #[arg(long = "b", default_value_t = 0.0)]
    pub b: f64,
    /// Default: am1 when a = b = 0, symmetric otherwise.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
}

impl ModelArgs {
    pub fn spec(&self) -> CliResult<ModelSpec> {
        let mode = match self.mode {
            Some(m) => m.into(),
            None if self.a == 0.0 && self.b == 0.0 => Mode::Am1,
            None => Mode::Symmetric,
        };
        Ok(ModelSpec::new(self.a, self.b, mode)?)
    }
}

#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    /// Treat CSV values as counts and close them to compositions.
    #[arg(long)]
    pub close: bool,
    /// Added to every count before closing.
    #[arg(long, default_value_t = 0.0, requires = "close")]
    pub pseudocount: f64,
}

impl InputArgs {
    pub fn ingest(&self) -> CliResult<Ingest> {
        if !(self.pseudocount >= 0.0 && self.pseudocount.is_finite()) {
            return Err(CliError::Validation(format!("pseudocount {} must be >= 0", self.pseudocount)));
        }
        Ok(if self.close {
            Ingest::Counts { pseudocount: self.pseudocount }
        } else {
            Ingest::Compositions
        })
    }
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Exponent c of h(x) = x^c (default 2 − a).
    #[arg(long = "h-exponent")]
    pub h_exponent: Option<f64>,
    /// Truncation quantile π in (0, 1].
    #[arg(long, default_value_t = 1.0)]
    pub pi: f64,
    /// Explicit truncation constants, one per component (overrides --pi).
    #[arg(long = "C", value_delimiter = ',')]
    pub c: Option<Vec<f64>>,
    /// Removed coordinates, 0-based (overrides --J-count).
    #[arg(long = "J", value_delimiter = ',')]
    pub j: Option<Vec<usize>>,
    /// Number of removed coordinates drawn with --seed.
    #[arg(long = "J-count", default_value_t = 5)]
    pub j_count: usize,
    /// Explicit decreasing penalties (overrides the grid).
    #[arg(long, value_delimiter = ',')]
    pub lambda: Option<Vec<f64>>,
    #[arg(long = "n-lambda", default_value_t = 50)]
    pub n_lambda: usize,
    /// Smallest penalty as a fraction of λ_max.
    #[arg(long, default_value_t = 0.01)]
    pub ratio: f64,
    /// Fixed diagonal multiplier (overrides --tau).
    #[arg(long)]
    pub delta: Option<f64>,
    /// Constant of the diagonal-multiplier bound.
    #[arg(long, default_value_t = 4.0)]
    pub tau: f64,
    /// Cross-validation folds; 0 fits the path only.
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Hold η at zero instead of estimating it.
    #[arg(long = "eta-known-zero")]
    pub eta_known_zero: bool,
    #[arg(long = "max-sweeps", default_value_t = 1000)]
    pub max_sweeps: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Everything that determines a fit, after defaults are applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub spec: ModelSpec,
    pub h_exponent: f64,
    pub truncation: Truncation,
    pub removed: Vec<usize>,
    /// `"explicit"` or `"count"`.
    pub removed_policy: String,
    pub solver: SolverOptions,
    pub lambdas: Option<Vec<f64>>,
    pub grid: PathGrid,
    pub delta: DeltaPolicy,
    pub folds: usize,
    pub seed: u64,
}

impl RunConfig {
    pub fn from_args(args: &FitArgs, m: usize) -> CliResult<Self> {
        let spec = args.model.spec()?;
        let truncation = match &args.c {
            Some(c) => Truncation::Explicit(c.clone()),
            None => Truncation::Quantile(args.pi),
        };
        let (removed, removed_policy) = match &args.j {
            Some(j) => {
                let mut j = j.clone();
                j.sort_unstable();
                j.dedup();
                if let Some(&bad) = j.iter().find(|&&v| v >= m) {
                    return Err(CliError::Validation(format!("removed coordinate {bad} out of range for {m} components")));
                }
                (j, "explicit")
            }
            None => (sample_removed(m, args.j_count.min(m), args.seed)?, "count"),
        };
        let delta = match args.delta {
            Some(d) => DeltaPolicy::Fixed(d),
            None => DeltaPolicy::Bound(args.tau),
        };
        let solver = SolverOptions {
            max_sweeps: args.max_sweeps,
            tol: args.tol,
            eta_known_zero: args.eta_known_zero,
            ..SolverOptions::default()
        };
        solver.check()?;
        let cfg = Self {
            spec,
            h_exponent: args.h_exponent.unwrap_or(2.0 - spec.a),
            truncation,
            removed,
            removed_policy: removed_policy.into(),
            solver,
            lambdas: args.lambda.clone(),
            grid: PathGrid { n_lambda: args.n_lambda, ratio: args.ratio },
            delta,
            folds: args.folds,
            seed: args.seed,
        };
        cfg.loss_config(m).weights.check(m)?;
        if let Some(l) = &cfg.lambdas {
            if l.is_empty() || l.iter().any(|v| !(*v >= 0.0)) || l.windows(2).any(|w| !(w[0] > w[1])) {
                return Err(CliError::Validation("--lambda must be nonnegative and strictly decreasing".into()));
            }
        } else {
            cfg.grid.lambdas(1.0)?;
        }
        if cfg.folds == 1 {
            return Err(CliError::Validation("--folds must be 0 or at least 2".into()));
        }
        Ok(cfg)
    }

    pub fn loss_config(&self, m: usize) -> LossConfig {
        LossConfig {
            spec: self.spec,
            weights: WeightSpec::power(m, self.h_exponent).with_truncation(self.truncation.clone()),
            removed: self.removed.clone(),
            delta: self.delta,
        }
    }

    /// Stable hash of the serialized configuration.
    pub fn fingerprint(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SamplerArg {
    /// Exact sampler when the truth admits one, MCMC otherwise.
    Auto,
    Mcmc,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Number of components (banded truth).
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub n: usize,
    /// Banded graph-Laplacian truth with this bandwidth.
    #[arg(long, conflicts_with_all = ["dirichlet_alpha", "truth"])]
    pub bandwidth: Option<usize>,
    /// Linear term of the banded truth (default 0).
    #[arg(long, value_delimiter = ',', requires = "bandwidth")]
    pub eta: Option<Vec<f64>>,
    /// Dirichlet concentration parameters.
    #[arg(long = "dirichlet-alpha", value_delimiter = ',', conflicts_with = "truth")]
    pub dirichlet_alpha: Option<Vec<f64>>,
    /// Ground truth from a JSON file with `k` and `eta`, or a previous truth.json.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SamplerArg::Auto)]
    pub sampler: SamplerArg,
    #[arg(long = "burn-in", default_value_t = 2000)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 10)]
    pub thin: usize,
    #[arg(long = "step-size", default_value_t = 0.5)]
    pub step_size: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for data.csv and truth.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EstimateArgs {
    pub data: PathBuf,
    #[command(flatten)]
    pub fit: FitArgs,
    #[command(flatten)]
    pub input: InputArgs,
    /// Output directory for estimate.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// estimate.json files or directories holding one.
    #[arg(required = true)]
    pub estimates: Vec<PathBuf>,
    #[arg(long)]
    pub truth: PathBuf,
    /// Output directory for metrics.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct DifftestArgs {
    pub group1: PathBuf,
    pub group2: PathBuf,
    #[command(flatten)]
    pub fit: FitArgs,
    #[command(flatten)]
    pub input: InputArgs,
    /// Permutation replicates.
    #[arg(id = "replicates", long = "B", default_value_t = 100)]
    pub replicates: usize,
    /// Adjusted p-value threshold for the differential edge list.
    #[arg(long, default_value_t = 0.05)]
    pub level: f64,
    /// Output directory for report.json.
    #[arg(long)]
    pub out: PathBuf,
}
