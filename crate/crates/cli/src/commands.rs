//! The four subcommands. Each writes one JSON document carrying the schema
//! version, the library version and the configuration fingerprint.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use simplex_score::evaluation::{cv_fit, cv_fit_at, norm_errors, roc_from_fits, tpr_fpr, NormErrors, ZERO_TOL};
use simplex_score::inference::{differential_edges, permutation_test, PermTestConfig, PermTestResult};
use simplex_score::model::{check_normalizability, Dataset, Mode, ModelSpec, ParameterSet};
use simplex_score::sampling::{
    banded_k, run_mcmc, sample_dirichlet, sample_logistic_normal, McmcOptions,
};
use simplex_score::solver::{fit_path, fit_path_at, FitResult};
use simplex_score::VERSION;

use crate::config::{
    DifftestArgs, EstimateArgs, EvalArgs, RunConfig, SamplerArg, SimulateArgs, SCHEMA_VERSION,
};
use crate::error::{CliError, CliResult};
use crate::io::{file_sha256, read_dataset, read_json, sha256_hex, write_dataset, write_json};

/// Fields shared by every output document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub schema_version: u32,
    pub version: String,
    pub fingerprint: String,
}

impl Envelope {
    fn new(fingerprint: String) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            version: VERSION.to_string(),
            fingerprint,
        }
    }
}

/// Outcome of a command that completed but should exit nonzero.
pub enum Status {
    Ok,
    NotConverged(String),
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

// ---------------------------------------------------------------- simulate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub spec: ModelSpec,
    pub truth_source: String,
    pub sampler: String,
    pub n: usize,
    pub mcmc: Option<McmcOptions>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    #[serde(flatten)]
    pub envelope: Envelope,
    pub config: SimulationConfig,
    pub m: usize,
    pub params: ParameterSet,
    pub mcmc_acceptance: Option<f64>,
}

/// Accepts a bare `{k, eta}` object or a previous truth.json.
#[derive(Deserialize)]
#[serde(untagged)]
enum TruthInput {
    File { params: ParameterSet },
    Bare(ParameterSet),
}

pub fn read_truth(path: &Path) -> CliResult<ParameterSet> {
    Ok(match read_json::<TruthInput>(path)? {
        TruthInput::File { params } => params,
        TruthInput::Bare(p) => p,
    })
}

/// The logistic-normal sampler is exact when `a = b = 0`, `K` is symmetric
/// with `K 1 = 0`, `K` without its last row and column is positive definite
/// and `1ᵀη = −m`.
fn exact_logistic_normal(spec: &ModelSpec, p: &ParameterSet) -> bool {
    let m = p.m();
    let k = &p.k;
    spec.a == 0.0
        && spec.b == 0.0
        && *k == k.transpose()
        && (0..m).all(|r| k.row(r).sum().abs() <= 1e-10)
        && (p.eta.sum() + m as f64).abs() <= 1e-10
        && k.view((0, 0), (m - 1, m - 1)).into_owned().cholesky().is_some()
}

pub fn simulate(args: &SimulateArgs) -> CliResult<Status> {
    let mut spec = args.model.spec()?;
    let (params, source) = if let Some(alpha) = &args.dirichlet_alpha {
        spec = ModelSpec::new(0.0, 0.0, Mode::General)?;
        let m = alpha.len();
        let eta = DVector::from_iterator(m, alpha.iter().map(|a| a - 1.0));
        (ParameterSet::new(DMatrix::zeros(m, m), eta)?, "dirichlet")
    } else if let Some(s) = args.bandwidth {
        let m = args.m.ok_or_else(|| CliError::Validation("--bandwidth needs --m".into()))?;
        let mut p = banded_k(m, s)?;
        if let Some(eta) = &args.eta {
            if eta.len() != m {
                return Err(CliError::Validation(format!("--eta needs {m} values, got {}", eta.len())));
            }
            p.eta = DVector::from_column_slice(eta);
        }
        (p, "banded")
    } else if let Some(path) = &args.truth {
        (read_truth(path)?, "file")
    } else {
        return Err(CliError::Validation(
            "choose a truth: --bandwidth, --dirichlet-alpha or --truth".into(),
        ));
    };
    params.check_mode(spec.mode)?;

    let auto = args.sampler == SamplerArg::Auto;
    let mcmc = McmcOptions {
        burn_in: args.burn_in,
        thin: args.thin,
        step_size: args.step_size,
        seed: args.seed,
    };
    let (data, sampler, acceptance, mcmc_used) = if auto && source == "dirichlet" {
        let alpha: Vec<f64> = params.eta.iter().map(|e| e + 1.0).collect();
        (sample_dirichlet(&alpha, args.n, args.seed)?, "dirichlet", None, None)
    } else if auto && exact_logistic_normal(&spec, &params) {
        (sample_logistic_normal(&params, args.n, args.seed)?, "logistic-normal", None, None)
    } else {
        let report = check_normalizability(&spec, &params);
        if !report.is_proven() {
            return Err(CliError::Validation(format!("truth is not provably normalizable: {}", report.details)));
        }
        let run = run_mcmc(&spec, &params, args.n, &mcmc)?;
        (run.data, "mcmc", Some(run.acceptance), Some(mcmc))
    };

    let config = SimulationConfig {
        spec,
        truth_source: source.into(),
        sampler: sampler.into(),
        n: args.n,
        mcmc: mcmc_used,
        seed: args.seed,
    };
    let fingerprint = sha256_hex(serde_json::to_string(&(&config, &params))?.as_bytes());
    create_dir(&args.out)?;
    write_dataset(&args.out.join("data.csv"), &data)?;
    let truth = TruthFile {
        envelope: Envelope::new(fingerprint),
        config,
        m: params.m(),
        params,
        mcmc_acceptance: acceptance,
    };
    write_json(&args.out.join("truth.json"), &truth)?;
    Ok(Status::Ok)
}

// ---------------------------------------------------------------- estimate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    pub lambda: f64,
    pub converged: bool,
    pub kkt_violation: f64,
    pub sweeps: usize,
    pub objective: f64,
    /// Nonzero off-diagonal entries of `K̂`.
    pub nonzero_off: usize,
    pub params: ParameterSet,
}

impl PathPoint {
    fn from_fit(f: &FitResult) -> Self {
        let k = &f.params.k;
        let m = k.nrows();
        let nonzero_off = (0..m)
            .flat_map(|r| (0..m).map(move |c| (r, c)))
            .filter(|&(r, c)| r != c && k[(r, c)].abs() > ZERO_TOL)
            .count();
        Self {
            lambda: f.lambda_k,
            converged: f.converged,
            kkt_violation: f.kkt_violation,
            sweeps: f.sweeps_used,
            objective: f.objective,
            nonzero_off,
            params: f.params.clone(),
        }
    }

    fn to_fit(&self) -> FitResult {
        FitResult {
            params: self.params.clone(),
            lambda_k: self.lambda,
            lambda_eta: self.lambda,
            sweeps_used: self.sweeps,
            converged: self.converged,
            kkt_violation: self.kkt_violation,
            objective: self.objective,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub folds: usize,
    pub lambda_star: f64,
    pub best_index: usize,
    pub cv_curve: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selected {
    pub lambda: f64,
    pub params: ParameterSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateFile {
    #[serde(flatten)]
    pub envelope: Envelope,
    pub input_sha256: String,
    pub config: RunConfig,
    pub n: usize,
    pub m: usize,
    pub labels: Option<Vec<String>>,
    pub delta: f64,
    pub loss_fingerprint: String,
    pub all_converged: bool,
    pub path: Vec<PathPoint>,
    pub cv: Option<CvSummary>,
    pub selected: Option<Selected>,
}

fn fit_dataset(data: &Dataset, cfg: &RunConfig) -> CliResult<(Vec<FitResult>, String, f64, Option<CvSummary>)> {
    let loss_cfg = cfg.loss_config(data.m());
    let loss = loss_cfg.build(data)?;
    let delta = loss.delta();
    if cfg.folds >= 2 {
        let fit = match &cfg.lambdas {
            Some(l) => cv_fit_at(data, &loss_cfg, &cfg.solver, l, cfg.folds, cfg.seed)?,
            None => cv_fit(data, &loss_cfg, &cfg.solver, &cfg.grid, cfg.folds, cfg.seed)?,
        };
        let cv = CvSummary {
            folds: cfg.folds,
            lambda_star: fit.cv.lambda_star,
            best_index: fit.cv.best_index,
            cv_curve: fit.cv.cv_curve.clone(),
        };
        Ok((fit.path.fits, fit.path.loss_fingerprint, delta, Some(cv)))
    } else {
        let path = match &cfg.lambdas {
            Some(l) => fit_path_at(&loss, &cfg.solver, l)?,
            None => fit_path(&loss, &cfg.solver, &cfg.grid)?,
        };
        Ok((path.fits, path.loss_fingerprint, delta, None))
    }
}

pub fn estimate(args: &EstimateArgs) -> CliResult<Status> {
    let spec = args.fit.model.spec()?;
    let data = read_dataset(&args.data, &spec, args.input.ingest()?)?;
    let cfg = RunConfig::from_args(&args.fit, data.m())?;
    let (fits, loss_fingerprint, delta, cv) = fit_dataset(&data, &cfg)?;
    let all_converged = fits.iter().all(|f| f.converged);
    let selected = cv.as_ref().map(|c| Selected {
        lambda: c.lambda_star,
        params: fits[c.best_index].params.clone(),
    });
    let out = EstimateFile {
        envelope: Envelope::new(cfg.fingerprint()),
        input_sha256: file_sha256(&args.data)?,
        config: cfg,
        n: data.n(),
        m: data.m(),
        labels: data.labels().map(|l| l.to_vec()),
        delta,
        loss_fingerprint,
        all_converged,
        path: fits.iter().map(PathPoint::from_fit).collect(),
        cv,
        selected,
    };
    create_dir(&args.out)?;
    write_json(&args.out.join("estimate.json"), &out)?;
    Ok(if all_converged {
        Status::Ok
    } else {
        Status::NotConverged("some path fits did not converge; flags are in estimate.json".into())
    })
}

// ---------------------------------------------------------------- eval

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocRow {
    pub lambda: f64,
    pub fpr: f64,
    pub tpr: f64,
    pub errors: NormErrors,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateMetrics {
    pub source: String,
    pub estimate_fingerprint: String,
    pub auc: f64,
    pub roc: Vec<RocRow>,
    pub selected_errors: Option<NormErrors>,
    pub selected_errors_normalized: Option<NormErrors>,
}

/// One row of the (π, AUC) table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucRow {
    pub source: String,
    pub pi: Option<f64>,
    pub h_exponent: f64,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    #[serde(flatten)]
    pub envelope: Envelope,
    pub truth_sha256: String,
    pub estimates: Vec<EstimateMetrics>,
    pub auc_table: Vec<AucRow>,
}

pub fn eval(args: &EvalArgs) -> CliResult<Status> {
    let truth = read_truth(&args.truth)?;
    let mut estimates = Vec::new();
    let mut table = Vec::new();
    for given in &args.estimates {
        let path = if given.is_dir() { given.join("estimate.json") } else { given.clone() };
        let est: EstimateFile = read_json(&path)?;
        if est.m != truth.m() {
            return Err(CliError::Validation(format!(
                "mismatched truth: estimate has {} components, truth has {}",
                est.m,
                truth.m()
            )));
        }
        let fits: Vec<FitResult> = est.path.iter().map(PathPoint::to_fit).collect();
        let curve = roc_from_fits(&fits, &truth)?;
        let roc = fits
            .iter()
            .map(|f| {
                let (tpr, fpr) = tpr_fpr(&f.params, &truth, ZERO_TOL)?;
                Ok(RocRow {
                    lambda: f.lambda_k,
                    fpr,
                    tpr,
                    errors: norm_errors(&f.params, &truth, false)?,
                })
            })
            .collect::<CliResult<Vec<_>>>()?;
        let (selected_errors, selected_errors_normalized) = match &est.selected {
            Some(s) => (
                Some(norm_errors(&s.params, &truth, false)?),
                Some(norm_errors(&s.params, &truth, true)?),
            ),
            None => (None, None),
        };
        let source = path.display().to_string();
        table.push(AucRow {
            source: source.clone(),
            pi: match est.config.truncation {
                simplex_score::weights::Truncation::Quantile(p) => Some(p),
                _ => None,
            },
            h_exponent: est.config.h_exponent,
            auc: curve.auc,
        });
        estimates.push(EstimateMetrics {
            source,
            estimate_fingerprint: est.envelope.fingerprint,
            auc: curve.auc,
            roc,
            selected_errors,
            selected_errors_normalized,
        });
    }
    let fingerprint = sha256_hex(
        estimates
            .iter()
            .map(|e| e.estimate_fingerprint.as_str())
            .collect::<Vec<_>>()
            .join(",")
            .as_bytes(),
    );
    let out = MetricsFile {
        envelope: Envelope::new(fingerprint),
        truth_sha256: file_sha256(&args.truth)?,
        estimates,
        auc_table: table,
    };
    create_dir(&args.out)?;
    write_json(&args.out.join("metrics.json"), &out)?;
    Ok(Status::Ok)
}

// ---------------------------------------------------------------- difftest

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub labels: Option<(String, String)>,
    pub p_adjusted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    #[serde(flatten)]
    pub envelope: Envelope,
    pub input_sha256: [String; 2],
    pub config: RunConfig,
    pub replicates: usize,
    pub level: f64,
    pub result: PermTestResult,
    pub differential_edges: Vec<Edge>,
    pub degrees: Vec<usize>,
    /// Nodes with at least 5 differential edges.
    pub hubs: Vec<usize>,
}

pub fn difftest(args: &DifftestArgs) -> CliResult<Status> {
    let spec = args.fit.model.spec()?;
    let ingest = args.input.ingest()?;
    let d1 = read_dataset(&args.group1, &spec, ingest)?;
    let d2 = read_dataset(&args.group2, &spec, ingest)?;
    if d1.m() != d2.m() {
        return Err(CliError::Validation(format!(
            "groups have {} and {} components",
            d1.m(),
            d2.m()
        )));
    }
    if args.replicates == 0 {
        return Err(CliError::Validation("--B must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&args.level) {
        return Err(CliError::Validation("--level must lie in [0, 1]".into()));
    }
    let cfg = RunConfig::from_args(&args.fit, d1.m())?;
    if cfg.lambdas.is_some() {
        return Err(CliError::Validation("difftest chooses penalties by cross validation; drop --lambda".into()));
    }
    if cfg.folds < 2 {
        return Err(CliError::Validation("difftest needs --folds >= 2".into()));
    }
    let test = PermTestConfig {
        loss: cfg.loss_config(d1.m()),
        solver: cfg.solver.clone(),
        grid: cfg.grid,
        folds: cfg.folds,
        replicates: args.replicates,
        seed: cfg.seed,
    };
    let result = permutation_test(&d1, &d2, &test)?;
    let (edges, degrees) = differential_edges(&result, args.level);
    let labels = d1.labels().map(|l| l.to_vec());
    let differential_edges = edges
        .into_iter()
        .map(|(i, j, p)| Edge {
            i,
            j,
            labels: labels.as_ref().map(|l| (l[i].clone(), l[j].clone())),
            p_adjusted: p,
        })
        .collect();
    let hubs = (0..degrees.len()).filter(|&v| degrees[v] >= 5).collect();
    let out = ReportFile {
        envelope: Envelope::new(cfg.fingerprint()),
        input_sha256: [file_sha256(&args.group1)?, file_sha256(&args.group2)?],
        config: cfg,
        replicates: args.replicates,
        level: args.level,
        result,
        differential_edges,
        degrees,
        hubs,
    };
    create_dir(&args.out)?;
    write_json(&args.out.join("report.json"), &out)?;
    Ok(Status::Ok)
}
