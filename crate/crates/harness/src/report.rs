//! Aggregates a results directory into plot-ready tables.
//!
//! Reads the manifest and the per-run traces and writes, under
//! `<results>/report/`:
//!
//! - `<experiment>-regret.csv`: median and MAD of the cumulative regret
//!   across seeds at every round, plus a `.dat` copy thinned to every 100th
//!   round for pgfplots;
//! - `runs.csv`: one row per run with its window, final gradient norm,
//!   cumulative regret and final-window loss;
//! - `scatter.csv` / `scatter.dat`: final gradient norms paired by seed,
//!   one column per experiment, for `y = x` comparisons between methods;
//! - `losses.csv`: mean, standard error, median and MAD of the final-window
//!   loss per experiment.
//!
//! Failed or missing runs are reported and skipped.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use crate::run::{Manifest, RunStatus};

pub const REPORT_DIR: &str = "report";
const DAT_STRIDE: usize = 100;

/// Median of a non-empty slice.
pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median absolute deviation from the median (unscaled).
pub fn mad(xs: &[f64]) -> f64 {
    let m = median(xs);
    let dev: Vec<f64> = xs.iter().map(|x| (x - m).abs()).collect();
    median(&dev)
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Reads one column of a trace file by header name.
pub fn read_trace_column(path: &Path, column: &str) -> Result<Vec<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let idx = reader
        .headers()?
        .iter()
        .position(|h| h == column)
        .with_context(|| format!("{} has no column {column}", path.display()))?;
    let mut out = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec?;
        let field = rec.get(idx).unwrap_or("");
        let v = if field.is_empty() {
            f64::NAN
        } else {
            field
                .parse()
                .with_context(|| format!("{}: row {}: bad number {field:?}", path.display(), line + 1))?
        };
        out.push(v);
    }
    Ok(out)
}

/// Outcome of [`write_report`].
#[derive(Clone, Debug, Default)]
pub struct ReportSummary {
    pub files: Vec<PathBuf>,
    /// `experiment-s<seed>` of runs that failed or whose trace is missing.
    pub missing: Vec<String>,
}

struct RunData {
    seed: u64,
    window: usize,
    grad_norm: f64,
    cumulative: Vec<f64>,
    final_loss: f64,
}

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_file(path: PathBuf, text: &str, files: &mut Vec<PathBuf>) -> Result<()> {
    fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
    files.push(path);
    Ok(())
}

/// Builds the report tables for the results directory `dir`.
pub fn write_report(dir: &Path) -> Result<ReportSummary> {
    let manifest = Manifest::load(dir)?;
    let mut summary = ReportSummary::default();
    let mut by_exp: BTreeMap<String, Vec<RunData>> = BTreeMap::new();
    for run in &manifest.runs {
        let id = format!("{}-s{}", run.experiment, run.seed);
        let (Some(csv), Some(s), RunStatus::Ok) = (&run.csv, &run.summary, &run.status) else {
            summary.missing.push(id);
            continue;
        };
        let path = dir.join(csv);
        if !path.exists() {
            summary.missing.push(id);
            continue;
        }
        let cumulative = read_trace_column(&path, "blr_cumulative")?;
        by_exp.entry(run.experiment.clone()).or_default().push(RunData {
            seed: run.seed,
            window: s.params.window,
            grad_norm: s.final_grad_norm_sq.map_or(f64::NAN, f64::sqrt),
            cumulative,
            final_loss: s.final_loss,
        });
    }
    if by_exp.is_empty() && !manifest.runs.is_empty() {
        bail!("no completed runs in {}", dir.display());
    }

    let out = dir.join(REPORT_DIR);
    fs::create_dir_all(&out)?;
    let mut runs_csv = String::from("experiment,seed,window,final_grad_norm,cumulative_blr,final_loss\n");
    let mut pairs: BTreeMap<u64, BTreeMap<&str, f64>> = BTreeMap::new();
    let mut losses = String::from("experiment,runs,mean,se,median,mad\n");
    for (name, runs) in &by_exp {
        let rounds = runs.iter().map(|r| r.cumulative.len()).min().unwrap_or(0);
        let mut csv = String::from("t,median,mad,runs\n");
        let mut dat = String::from("t median mad\n");
        for i in 0..rounds {
            let col: Vec<f64> = runs.iter().map(|r| r.cumulative[i]).filter(|x| x.is_finite()).collect();
            if col.is_empty() {
                continue;
            }
            let (m, d) = (median(&col), mad(&col));
            let t = i + 1;
            let _ = writeln!(csv, "{t},{},{},{}", fmt(m), fmt(d), col.len());
            if t % DAT_STRIDE == 0 || t == rounds {
                let _ = writeln!(dat, "{t} {} {}", fmt(m), fmt(d));
            }
        }
        write_file(out.join(format!("{name}-regret.csv")), &csv, &mut summary.files)?;
        write_file(out.join(format!("{name}-regret.dat")), &dat, &mut summary.files)?;

        for r in runs {
            let last = r.cumulative.last().copied().unwrap_or(f64::NAN);
            let _ = writeln!(
                runs_csv,
                "{name},{},{},{},{},{}",
                r.seed,
                r.window,
                fmt(r.grad_norm),
                fmt(last),
                fmt(r.final_loss)
            );
            pairs.entry(r.seed).or_default().insert(name, r.grad_norm);
        }
        let fl: Vec<f64> = runs.iter().map(|r| r.final_loss).collect();
        let (mean, se) = mean_and_se(&fl);
        let _ = writeln!(
            losses,
            "{name},{},{},{},{},{}",
            fl.len(),
            fmt(mean),
            fmt(se),
            fmt(median(&fl)),
            fmt(mad(&fl))
        );
    }
    let names: Vec<&str> = by_exp.keys().map(String::as_str).collect();
    let mut scatter = format!("seed,{}\n", names.join(","));
    let mut scatter_dat = format!("seed {}\n", names.join(" "));
    for (seed, row) in &pairs {
        let cells: Vec<Option<f64>> = names.iter().map(|n| row.get(n).copied()).collect();
        let csv_cells: Vec<String> = cells.iter().map(|c| c.map(fmt).unwrap_or_default()).collect();
        let dat_cells: Vec<String> = cells.iter().map(|c| c.map_or_else(|| "nan".into(), fmt)).collect();
        let _ = writeln!(scatter, "{seed},{}", csv_cells.join(","));
        let _ = writeln!(scatter_dat, "{seed} {}", dat_cells.join(" "));
    }
    write_file(out.join("runs.csv"), &runs_csv, &mut summary.files)?;
    write_file(out.join("scatter.csv"), &scatter, &mut summary.files)?;
    write_file(out.join("scatter.dat"), &scatter_dat, &mut summary.files)?;
    write_file(out.join("losses.csv"), &losses, &mut summary.files)?;
    if !summary.missing.is_empty() {
        let text = summary.missing.join("\n") + "\n";
        write_file(out.join("missing.txt"), &text, &mut summary.files)?;
    }
    Ok(summary)
}
