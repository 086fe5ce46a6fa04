//! Executes experiment cells and writes traces plus a manifest.

use std::fmt::Write as _;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use obbo_core::hypergrad::exact_hypergradient;
use obbo_core::metrics::{regret_series, variation_report, RegretSetup, SampleGrid, VariationReport};
use obbo_core::optimizers::{
    run_oagd, run_obbo_with_seed, run_single_level, run_sobbo, run_sobow, ResolvedParams, RunTrace, SingleLevelMethod,
};
use obbo_core::problems::{ExactOracle, StochasticInstant};
use obbo_core::Vector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, HarnessConfig, OptimizerSpec, CONFIG_FORMAT};
use crate::streams::{build_stream, BuiltStream};

/// Header comment of every trace file.
pub const TRACE_SCHEMA: &str = "obbo-trace v1";
pub const MANIFEST_NAME: &str = "manifest.json";
pub const MANIFEST_SCHEMA: &str = "obbo-manifest v1";

/// Largest λ dimension written component-wise; larger ones get a norm column.
const MAX_LAMBDA_COLUMNS: usize = 8;

/// Run-time options layered over the configuration file.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Replaces every experiment's seed list.
    pub seeds: Option<Vec<u64>>,
    pub jobs: Option<usize>,
    /// Directory that relative data paths in the config resolve against.
    pub base_dir: PathBuf,
}

/// Aggregate numbers of one finished run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub rounds: usize,
    pub final_lambda: Vec<f64>,
    pub final_grad_norm_sq: Option<f64>,
    pub cumulative_blr: Option<f64>,
    pub cumulative_blr_euclidean: Option<f64>,
    /// Mean outer loss `F_t(λ_t)` over the last tenth of the rounds.
    pub final_loss: f64,
    pub params: ResolvedParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variation: Option<VariationSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariationSummary {
    pub h1: f64,
    pub h2: f64,
    pub v1: f64,
    pub grid_size: usize,
}

impl From<VariationReport> for VariationSummary {
    fn from(r: VariationReport) -> Self {
        Self {
            h1: r.h1,
            h2: r.h2,
            v1: r.v1,
            grid_size: r.grid_size,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Failed,
}

/// One (experiment, seed) cell in the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub experiment: String,
    pub optimizer: String,
    pub seed: u64,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<RunSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub config_format: String,
    pub library_version: String,
    pub trace_schema: String,
    pub config: HarnessConfig,
    pub runs: Vec<RunRecord>,
    pub files: Vec<FileHash>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_NAME);
        let text = fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("malformed manifest {}", path.display()))
    }
}

/// File name of a run's trace.
pub fn trace_file_name(experiment: &str, seed: u64) -> String {
    let safe: String = experiment
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{safe}-s{seed}.csv")
}

fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_float).unwrap_or_default()
}

struct CellOutput {
    csv: String,
    summary: RunSummary,
}

/// Everything a trace row needs beyond the trace itself.
struct StepMetrics {
    blr: Option<(Vec<f64>, Vec<f64>, Vec<f64>)>,
    grads: Vec<Vector>,
    losses: Vec<f64>,
    residuals: Vec<f64>,
}

fn step_metrics<I: ExactOracle>(
    stream: &[I],
    trace: &RunTrace,
    setup: &RegretSetup,
    regret: bool,
) -> Result<StepMetrics> {
    let grads = trace
        .steps
        .iter()
        .zip(stream)
        .map(|(s, inst)| exact_hypergradient(inst, &s.lambda))
        .collect::<obbo_core::Result<Vec<_>>>()?;
    let losses = trace
        .steps
        .iter()
        .zip(stream)
        .map(|(s, inst)| inst.outer_value(&s.lambda))
        .collect::<obbo_core::Result<Vec<_>>>()?;
    let residuals = trace
        .steps
        .iter()
        .zip(stream)
        .map(|(s, inst)| inst.grad_g_beta(&s.lambda, &s.inner_final).norm())
        .collect();
    let blr = if regret {
        let r = regret_series(stream, trace, setup)?;
        Some((r.terms, r.cumulative, r.euclidean_terms))
    } else {
        None
    };
    Ok(StepMetrics {
        blr,
        grads,
        losses,
        residuals,
    })
}

fn render_csv(run_id: &str, trace: &RunTrace, metrics: &StepMetrics, errors: bool, timing: bool) -> String {
    let d1 = trace.final_lambda.len();
    let mut out = String::new();
    let _ = writeln!(out, "# {TRACE_SCHEMA}");
    let mut header = vec!["run_id".to_string(), "t".to_string()];
    if d1 <= MAX_LAMBDA_COLUMNS {
        header.extend((0..d1).map(|i| format!("lambda_{i}")));
    } else {
        header.push("lambda_norm".into());
    }
    header.extend(
        [
            "blr_term",
            "blr_cumulative",
            "blr_euclidean_term",
            "hypergradient_error",
            "inner_residual",
            "outer_loss",
            "smoothed_norm_sq",
            "gen_proj_norm_sq",
            "wall_ms",
        ]
        .map(String::from),
    );
    let _ = writeln!(out, "{}", header.join(","));
    for (i, step) in trace.steps.iter().enumerate() {
        let mut row = vec![run_id.to_string(), step.t.to_string()];
        if d1 <= MAX_LAMBDA_COLUMNS {
            row.extend(step.lambda.iter().map(|x| fmt_float(*x)));
        } else {
            row.push(fmt_float(step.lambda.norm()));
        }
        let (term, cum, eu) = match &metrics.blr {
            Some((t, c, e)) => (Some(t[i]), Some(c[i]), Some(e[i])),
            None => (None, None, None),
        };
        let err = errors.then(|| (&step.estimate - &metrics.grads[i]).norm_squared());
        let wall = if timing { step.elapsed.as_secs_f64() * 1e3 } else { 0.0 };
        row.extend([
            fmt_opt(term),
            fmt_opt(cum),
            fmt_opt(eu),
            fmt_opt(err),
            fmt_float(metrics.residuals[i]),
            fmt_float(metrics.losses[i]),
            fmt_float(step.smoothed.norm_squared()),
            fmt_float(step.gen_proj_norm_sq),
            fmt_float(wall),
        ]);
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

fn run_optimizer<I: StochasticInstant>(stream: &[I], spec: &OptimizerSpec, seed: u64) -> obbo_core::Result<RunTrace> {
    match spec {
        OptimizerSpec::Obbo(c) => run_obbo_with_seed(stream, c, seed),
        OptimizerSpec::Sobbo(c) => run_sobbo(stream, c, seed),
        OptimizerSpec::Oagd(c) => run_oagd(stream, c, seed),
        OptimizerSpec::Sobow(c) => run_sobow(stream, c, seed),
        OptimizerSpec::Adam(c) => run_single_level(stream, SingleLevelMethod::adam(), c, seed),
        OptimizerSpec::Sgdm(c) => run_single_level(stream, SingleLevelMethod::sgdm(), c, seed),
    }
}

fn execute_stream<I: StochasticInstant + ExactOracle>(
    stream: &[I],
    exp: &ExperimentConfig,
    spec: &OptimizerSpec,
    seed: u64,
    run_id: &str,
) -> Result<CellOutput> {
    let trace = run_optimizer(stream, spec, seed)?;
    let cfg = spec.obbo();
    let setup = RegretSetup {
        alpha: trace.params.alpha,
        window: trace.params.window,
        regularizer: cfg.regularizer,
        feasible: cfg.feasible.clone(),
    };
    let metrics = step_metrics(stream, &trace, &setup, exp.metrics.regret)?;
    let variation = if exp.metrics.variation {
        let visited: Vec<Vector> = trace.lambdas().cloned().collect();
        let grid = SampleGrid::for_set(&cfg.feasible, stream[0].lambda_dim(), &visited, exp.metrics.grid_points)?;
        Some(variation_report(stream, &grid.points)?.into())
    } else {
        None
    };
    let csv = render_csv(
        run_id,
        &trace,
        &metrics,
        exp.metrics.hypergradient_error,
        exp.metrics.timing,
    );
    let tail = (trace.len() / 10).max(1);
    let final_loss = metrics.losses[metrics.losses.len() - tail..].iter().sum::<f64>() / tail as f64;
    let summary = RunSummary {
        rounds: trace.len(),
        final_lambda: trace.final_lambda.iter().cloned().collect(),
        final_grad_norm_sq: metrics.grads.last().map(|g| g.norm_squared()),
        cumulative_blr: metrics.blr.as_ref().and_then(|b| b.1.last().copied()),
        cumulative_blr_euclidean: metrics.blr.as_ref().map(|b| b.2.iter().sum()),
        final_loss,
        params: trace.params,
        variation,
    };
    Ok(CellOutput { csv, summary })
}

fn execute_cell(exp: &ExperimentConfig, seed: u64, opts: &RunOptions) -> Result<CellOutput> {
    let run_id = format!("{}-s{seed}", exp.name);
    let mut spec = exp.optimizer.clone();
    match build_stream(&exp.stream, seed, &opts.base_dir)? {
        BuiltStream::Quadratic(s) => execute_stream(&s, exp, &spec, seed, &run_id),
        BuiltStream::MetaToy(s) => execute_stream(&s, exp, &spec, seed, &run_id),
        BuiltStream::Spline(s, domain) => {
            // Roughness weights must stay positive, so an unconstrained
            // config is confined to the task's λ box.
            let cfg = spec.obbo_mut();
            if cfg.feasible.is_full_space() {
                cfg.feasible = domain;
            }
            execute_stream(&s, exp, &spec, seed, &run_id)
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn panic_message(payload: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        s.to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "unknown panic".into()
    }
}

/// Runs every (experiment, seed) cell, writes one CSV per successful run
/// and the manifest, and returns the manifest. Failed cells are recorded
/// without affecting the others.
pub fn run_config(config: &HarnessConfig, opts: &RunOptions) -> Result<Manifest> {
    fs::create_dir_all(&opts.out_dir).with_context(|| format!("cannot create {}", opts.out_dir.display()))?;
    let mut cells = Vec::new();
    for exp in &config.experiment {
        let seeds = opts.seeds.clone().unwrap_or_else(|| exp.seeds.clone());
        for seed in seeds {
            cells.push((exp, seed));
        }
    }
    let jobs = opts.jobs.or(config.jobs).unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| anyhow!("cannot start worker pool: {e}"))?;
    let outcomes: Vec<Result<CellOutput>> = pool.install(|| {
        cells
            .par_iter()
            .map(|(exp, seed)| {
                catch_unwind(AssertUnwindSafe(|| execute_cell(exp, *seed, opts)))
                    .unwrap_or_else(|p| Err(anyhow!("run panicked: {}", panic_message(p))))
            })
            .collect()
    });

    let mut runs = Vec::with_capacity(cells.len());
    let mut files = Vec::new();
    for ((exp, seed), outcome) in cells.iter().zip(outcomes) {
        let mut record = RunRecord {
            experiment: exp.name.clone(),
            optimizer: exp.optimizer.label().into(),
            seed: *seed,
            status: RunStatus::Ok,
            error: None,
            csv: None,
            summary: None,
        };
        let written = outcome.and_then(|cell| {
            let name = trace_file_name(&exp.name, *seed);
            let path = opts.out_dir.join(&name);
            fs::write(&path, cell.csv.as_bytes()).with_context(|| format!("cannot write {}", path.display()))?;
            files.push(FileHash {
                path: name.clone(),
                sha256: sha256_hex(cell.csv.as_bytes()),
            });
            Ok((name, cell.summary))
        });
        match written {
            Ok((name, summary)) => {
                record.csv = Some(name);
                record.summary = Some(summary);
            }
            Err(e) => {
                record.status = RunStatus::Failed;
                record.error = Some(format!("{e:#}"));
            }
        }
        runs.push(record);
    }
    let manifest = Manifest {
        schema: MANIFEST_SCHEMA.into(),
        config_format: CONFIG_FORMAT.into(),
        library_version: env!("CARGO_PKG_VERSION").into(),
        trace_schema: TRACE_SCHEMA.into(),
        config: config.clone(),
        runs,
        files,
    };
    let text = serde_json::to_string_pretty(&manifest)? + "\n";
    fs::write(opts.out_dir.join(MANIFEST_NAME), text)?;
    Ok(manifest)
}
