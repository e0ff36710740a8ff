//! Subcommand implementations. Each writes its artifacts under the output
//! directory and reports whether a check threshold failed.
//!
//! Multi-run commands train seeds `seed, seed + 1, ...` in parallel and sort
//! their rows by key before writing, so outputs do not depend on the thread
//! count.

use std::path::{Path, PathBuf};

use pfml_core::field::{ChargeEntity, EntityKind, Field, GridBounds};
use pfml_core::kernel::KernelKind;
use pfml_core::metrics::{run_corollary1, run_prop1, w2_alignment};
use pfml_core::oracle::run_gradcheck;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{invalid, AblationAxis, ExperimentConfig};
use crate::io::{charges_csv, labeled_points_csv, read_charges, read_points, write_file, write_json};
use crate::pipeline::{load_dataset, run_once, RunError, RunOutcome};

/// Largest tolerated analytic-vs-finite-difference force error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-6;
/// Largest tolerated deviation of `FullGradient` from twice `ForceSemantics`.
pub const DOUBLE_COUNTING_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct Context {
    pub out_dir: PathBuf,
    /// Zero out wall-clock fields so reruns are byte-identical.
    pub deterministic: bool,
}

impl Context {
    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Ok,
    CheckFailed,
}

fn kernel_name(kind: KernelKind) -> &'static str {
    match kind {
        KernelKind::Pfml => "pfml",
        KernelKind::Cpml => "cpml",
    }
}

fn seeds(cfg: &ExperimentConfig) -> Vec<u64> {
    (0..cfg.bench_seeds as u64).map(|i| cfg.seed.wrapping_add(i)).collect()
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn recall(outcome: &RunOutcome, k: usize) -> f64 {
    outcome.retrieval.at(k).unwrap_or(f64::NAN)
}

/// Writes the clean synthetic (or configured) dataset to `dataset.csv`.
pub fn gen(cfg: &ExperimentConfig, ctx: &Context) -> Result<Status, RunError> {
    let data = load_dataset(cfg, cfg.seed)?;
    let mut out = Vec::new();
    data.write_csv(&mut out).map_err(|e| RunError::io(ctx.path("dataset.csv"), e))?;
    write_file(&ctx.path("dataset.csv"), &out)?;
    Ok(Status::Ok)
}

/// One training run: `report.json`, `train_charges.csv`,
/// `test_embeddings.csv`, `retrieval.json` and, with `metrics.eval_every`,
/// `history.json`.
pub fn train(cfg: &ExperimentConfig, ctx: &Context) -> Result<Status, RunError> {
    let mut outcome = run_once(cfg, cfg.seed)?;
    if ctx.deterministic {
        outcome.report.wall_time_seconds = 0.0;
    }
    write_json(&ctx.path("report.json"), &outcome.report)?;

    let embeddings = outcome.state.encoder.encode_all(&outcome.train.inputs);
    let n = embeddings.len();
    let mut entities: Vec<ChargeEntity> = embeddings
        .into_iter()
        .zip(&outcome.train.labels)
        .enumerate()
        .map(|(i, (x, &c))| ChargeEntity::new(i, c, EntityKind::Sample, x))
        .collect();
    entities.extend(
        outcome
            .state
            .proxies
            .rows()
            .enumerate()
            .map(|(j, (c, p))| ChargeEntity::new(n + j, c, EntityKind::Proxy, p.to_vec())),
    );
    write_file(&ctx.path("train_charges.csv"), &charges_csv(&entities))?;

    let test = outcome.state.encoder.encode_all(&outcome.test.inputs);
    write_file(
        &ctx.path("test_embeddings.csv"),
        &labeled_points_csv(&test, &outcome.test.labels),
    )?;
    write_json(&ctx.path("retrieval.json"), &outcome.retrieval)?;
    if cfg.eval_every > 0 {
        write_json(&ctx.path("history.json"), &outcome.history)?;
    }
    Ok(Status::Ok)
}

#[derive(Clone, Debug, Serialize)]
pub struct NoiseRow {
    pub rate: f64,
    pub kernel: KernelKind,
    pub seed: u64,
    pub r_at_1: f64,
    pub r_at_2: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct NoiseGroup {
    pub rate: f64,
    pub kernel: KernelKind,
    pub mean_r_at_1: f64,
    pub std_r_at_1: f64,
    pub mean_r_at_2: f64,
}

/// Mean R@1 lost relative to the clean runs of the same kernel.
#[derive(Clone, Debug, Serialize)]
pub struct NoiseDrop {
    pub rate: f64,
    pub pfml: f64,
    pub cpml: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct NoiseSummary {
    pub seeds: Vec<u64>,
    pub groups: Vec<NoiseGroup>,
    pub drops: Vec<NoiseDrop>,
}

fn summarize_noise(rows: &[NoiseRow], rates: &[f64], seeds: Vec<u64>) -> NoiseSummary {
    let mut groups = Vec::new();
    for &rate in rates {
        for kernel in [KernelKind::Pfml, KernelKind::Cpml] {
            let sel: Vec<&NoiseRow> = rows.iter().filter(|r| r.rate == rate && r.kernel == kernel).collect();
            let r1: Vec<f64> = sel.iter().map(|r| r.r_at_1).collect();
            let r2: Vec<f64> = sel.iter().map(|r| r.r_at_2).collect();
            let (mean_r_at_1, std_r_at_1) = mean_std(&r1);
            groups.push(NoiseGroup {
                rate,
                kernel,
                mean_r_at_1,
                std_r_at_1,
                mean_r_at_2: mean_std(&r2).0,
            });
        }
    }
    let mean = |rate: f64, kernel| {
        groups
            .iter()
            .find(|g| g.rate == rate && g.kernel == kernel)
            .map(|g| g.mean_r_at_1)
    };
    let drops = if rates.contains(&0.0) {
        rates
            .iter()
            .filter(|&&r| r != 0.0)
            .map(|&rate| NoiseDrop {
                rate,
                pfml: mean(0.0, KernelKind::Pfml).unwrap() - mean(rate, KernelKind::Pfml).unwrap(),
                cpml: mean(0.0, KernelKind::Cpml).unwrap() - mean(rate, KernelKind::Cpml).unwrap(),
            })
            .collect()
    } else {
        Vec::new()
    };
    NoiseSummary { seeds, groups, drops }
}

/// Trains both kernels at every `bench.rates` entry for every seed:
/// `noise_bench.csv` and `summary.json`.
pub fn noise_bench(cfg: &ExperimentConfig, ctx: &Context) -> Result<NoiseSummary, RunError> {
    let mut rates = cfg.bench_rates.clone();
    if rates.is_empty() {
        return Err(invalid("bench.rates", "needs at least one rate").into());
    }
    rates.sort_by(f64::total_cmp);
    rates.dedup();
    let seeds = seeds(cfg);
    let mut jobs = Vec::new();
    for &rate in &rates {
        for kernel in [KernelKind::Pfml, KernelKind::Cpml] {
            for &seed in &seeds {
                let mut c = cfg.clone();
                c.noise_rate = rate;
                c.kernel_kind = kernel;
                c.ks = vec![1, 2];
                c.eval_every = 0;
                c.validate()?;
                jobs.push((c, seed));
            }
        }
    }
    let mut rows = jobs
        .into_par_iter()
        .map(|(c, seed)| {
            let out = run_once(&c, seed)?;
            Ok(NoiseRow {
                rate: c.noise_rate,
                kernel: c.kernel_kind,
                seed,
                r_at_1: recall(&out, 1),
                r_at_2: recall(&out, 2),
            })
        })
        .collect::<Result<Vec<_>, RunError>>()?;
    rows.sort_by(|a, b| {
        a.rate
            .total_cmp(&b.rate)
            .then(kernel_name(a.kernel).cmp(kernel_name(b.kernel)))
            .then(a.seed.cmp(&b.seed))
    });
    let mut csv = String::from("rate,kernel,seed,r_at_1,r_at_2\n");
    for r in &rows {
        csv += &format!("{},{},{},{},{}\n", r.rate, kernel_name(r.kernel), r.seed, r.r_at_1, r.r_at_2);
    }
    write_file(&ctx.path("noise_bench.csv"), csv.as_bytes())?;
    let summary = summarize_noise(&rows, &rates, seeds);
    write_json(&ctx.path("summary.json"), &summary)?;
    Ok(summary)
}

/// `cfg` with the ablated parameter set to `value`; every other setting is
/// kept. Moving `delta` keeps the gap `delta_rep - delta_att`.
pub fn apply_axis(cfg: &ExperimentConfig, axis: AblationAxis, value: f64) -> Result<ExperimentConfig, RunError> {
    let mut c = cfg.clone();
    let bad = |msg: String| RunError::from(invalid("ablate.values", msg));
    match axis {
        AblationAxis::M => {
            if !(value >= 0.0 && value.fract() == 0.0) {
                return Err(bad(format!("M must be a non-negative integer, got {value}")));
            }
            c.proxies_per_class = value as usize;
        }
        AblationAxis::Delta => {
            let gap = cfg.delta_rep() - cfg.delta_att;
            c.delta_att = value;
            c.delta_rep = Some(value + gap);
        }
        AblationAxis::Alpha => c.alpha = value,
        AblationAxis::DeltaGap => {
            if !(value >= 0.0) {
                return Err(bad(format!("delta_gap must be non-negative, got {value}")));
            }
            c.delta_rep = Some(cfg.delta_att + value);
        }
    }
    c.validate()?;
    Ok(c)
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationRow {
    pub value: f64,
    pub seed: u64,
    pub r_at_1: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationGroup {
    pub value: f64,
    pub mean_r_at_1: f64,
    pub std_r_at_1: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationSummary {
    pub axis: String,
    pub seeds: Vec<u64>,
    pub groups: Vec<AblationGroup>,
}

impl AblationSummary {
    pub fn mean_at(&self, value: f64) -> Option<f64> {
        self.groups.iter().find(|g| g.value == value).map(|g| g.mean_r_at_1)
    }
}

/// Sweeps `ablate.axis` over `ablate.values` for every seed:
/// `ablation.csv` and `summary.json`.
pub fn ablate(cfg: &ExperimentConfig, ctx: &Context) -> Result<AblationSummary, RunError> {
    let mut values = cfg.ablate_values.clone();
    if values.is_empty() {
        return Err(invalid("ablate.values", "needs at least one value").into());
    }
    values.sort_by(f64::total_cmp);
    values.dedup();
    let axis = cfg.ablate_axis;
    let seeds = seeds(cfg);
    let mut jobs = Vec::new();
    for &value in &values {
        let c = apply_axis(cfg, axis, value)?;
        for &seed in &seeds {
            jobs.push((c.clone(), value, seed));
        }
    }
    let mut rows = jobs
        .into_par_iter()
        .map(|(mut c, value, seed)| {
            c.ks = vec![1];
            c.eval_every = 0;
            let out = run_once(&c, seed)?;
            Ok(AblationRow {
                value,
                seed,
                r_at_1: recall(&out, 1),
            })
        })
        .collect::<Result<Vec<_>, RunError>>()?;
    rows.sort_by(|a, b| a.value.total_cmp(&b.value).then(a.seed.cmp(&b.seed)));
    let mut csv = String::from("axis,value,seed,r_at_1\n");
    for r in &rows {
        csv += &format!("{axis},{},{},{}\n", r.value, r.seed, r.r_at_1);
    }
    write_file(&ctx.path("ablation.csv"), csv.as_bytes())?;
    let groups = values
        .iter()
        .map(|&value| {
            let r1: Vec<f64> = rows.iter().filter(|r| r.value == value).map(|r| r.r_at_1).collect();
            let (mean_r_at_1, std_r_at_1) = mean_std(&r1);
            AblationGroup {
                value,
                mean_r_at_1,
                std_r_at_1,
            }
        })
        .collect();
    let summary = AblationSummary {
        axis: axis.to_string(),
        seeds,
        groups,
    };
    write_json(&ctx.path("summary.json"), &summary)?;
    Ok(summary)
}

#[derive(Clone, Debug)]
pub struct GridOptions {
    pub charges: PathBuf,
    pub class_id: usize,
    pub resolution: usize,
    /// Defaults to the charges' bounding box, padded.
    pub bounds: Option<GridBounds>,
}

/// Samples the class potential of a planar charge file: `field_grid.csv`.
pub fn field_grid(cfg: &ExperimentConfig, ctx: &Context, opts: &GridOptions) -> Result<Status, RunError> {
    let snapshot = read_charges(&opts.charges)?;
    let kernel = cfg.kernel()?;
    let bounds = match opts.bounds {
        Some(b) => b,
        None => {
            let positions = snapshot.positions();
            let range = |k: usize| {
                positions.iter().map(|p| p.get(k).copied().unwrap_or(0.0)).fold(
                    (f64::INFINITY, f64::NEG_INFINITY),
                    |(lo, hi), v| (lo.min(v), hi.max(v)),
                )
            };
            let ((x0, x1), (y0, y1)) = (range(0), range(1));
            let pad = 0.25 * (x1 - x0).max(y1 - y0) + 2.0 * cfg.delta_rep();
            GridBounds {
                x_min: x0 - pad,
                x_max: x1 + pad,
                y_min: y0 - pad,
                y_max: y1 + pad,
            }
        }
    };
    let grid = Field::new(&snapshot, &kernel)
        .grid(opts.class_id, bounds, opts.resolution)
        .map_err(|e| RunError::input(&opts.charges, 0, e.to_string()))?;
    let mut out = Vec::new();
    grid.write_csv(&mut out)
        .map_err(|e| RunError::io(ctx.path("field_grid.csv"), e))?;
    write_file(&ctx.path("field_grid.csv"), &out)?;
    Ok(Status::Ok)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckKind {
    Prop1,
    Corollary1,
    Gradcheck,
}

impl CheckKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Prop1 => "prop1",
            Self::Corollary1 => "corollary1",
            Self::Gradcheck => "gradcheck",
        }
    }

    /// Instances, trials, or snapshots per (dimension, alpha, kernel) cell.
    pub fn default_count(self) -> usize {
        match self {
            Self::Prop1 | Self::Corollary1 => 50,
            Self::Gradcheck => 6,
        }
    }
}

#[derive(Serialize)]
struct CheckOutput<'a, T: Serialize> {
    check: &'a str,
    seed: u64,
    passed: bool,
    report: T,
}

/// Runs one numerical check and writes `check_<kind>.json`.
pub fn check(cfg: &ExperimentConfig, ctx: &Context, kind: CheckKind, count: Option<usize>) -> Result<Status, RunError> {
    let count = count.unwrap_or(kind.default_count());
    let path = ctx.path(&format!("check_{}.json", kind.name()));
    let seed = cfg.seed;
    let passed = match kind {
        CheckKind::Prop1 => {
            let report = run_prop1(seed, count)?;
            let passed = report.passed;
            write_json(&path, &CheckOutput { check: kind.name(), seed, passed, report })?;
            passed
        }
        CheckKind::Corollary1 => {
            let report = run_corollary1(seed, count)?;
            let passed = report.passed;
            write_json(&path, &CheckOutput { check: kind.name(), seed, passed, report })?;
            passed
        }
        CheckKind::Gradcheck => {
            let report = run_gradcheck(seed, count);
            let passed = report.max_relative_error < GRADCHECK_TOLERANCE
                && report.max_double_counting_error < DOUBLE_COUNTING_TOLERANCE;
            write_json(&path, &CheckOutput { check: kind.name(), seed, passed, report })?;
            passed
        }
    };
    Ok(if passed { Status::Ok } else { Status::CheckFailed })
}

/// Optimal proxy-to-data alignment of two point files: `w2.json`.
pub fn w2(ctx: &Context, proxies: &Path, data: &Path) -> Result<Status, RunError> {
    let p = read_points(proxies)?;
    let d = read_points(data)?;
    let result = w2_alignment(&p, &d)?;
    write_json(&ctx.path("w2.json"), &result)?;
    Ok(Status::Ok)
}
