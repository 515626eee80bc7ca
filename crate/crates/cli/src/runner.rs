//! Executes a configured sweep: one training run per (sweep value, repetition),
//! in a worker pool, followed by aggregation.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use subspace_gd_core::metrics::{test_robustness, MetricsContext, RobustnessRow, SignalModel};
use subspace_gd_core::model::{DeepNet, NetDims};
use subspace_gd_core::numkit::{self, derive_seed, Mat};
use subspace_gd_core::problem::{self, ProblemInstance, UosInstance};
use subspace_gd_core::trainer::{self, HyperParams, RunStatus, TrainTrace};

use crate::config::{Decay, ExperimentConfig, StepSize, SweepAxis};
use crate::csvio::{self, fmt_f64, Table};
use crate::{CliError, Result};

pub const SEED_ENV: &str = "SUBSPACE_GD_SEED";

/// Training data and everything the metrics need, for one run.
pub enum RunData {
    Subspace(ProblemInstance),
    Union(UosInstance),
}

impl RunData {
    pub fn build(cfg: &ExperimentConfig, seed: u64) -> Result<Self> {
        Ok(if cfg.uses_union() {
            RunData::Union(problem::gen_uos(cfg.m, cfg.d, cfg.s, cfg.k, cfg.n, cfg.kappa, seed)?)
        } else {
            RunData::Subspace(problem::generate(cfg.m, cfg.d, cfg.s, cfg.n, cfg.kappa, seed)?)
        })
    }

    pub fn x(&self) -> &Mat {
        match self {
            RunData::Subspace(i) => &i.x,
            RunData::Union(u) => &u.x,
        }
    }

    pub fn a(&self) -> &Mat {
        match self {
            RunData::Subspace(i) => &i.a,
            RunData::Union(u) => &u.a,
        }
    }

    pub fn signal_model(&self) -> SignalModel<'_> {
        match self {
            RunData::Subspace(i) => SignalModel::Subspace(&i.r),
            RunData::Union(u) => SignalModel::Union(&u.bases),
        }
    }
}

/// Step size, weight decay and derived quantities actually used by a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolvedHp {
    pub eta: f64,
    pub lambda: f64,
    pub gamma: Option<f64>,
    pub tau_ub: f64,
}

pub fn resolve_hp(cfg: &ExperimentConfig, x: &Mat) -> Result<ResolvedHp> {
    let st = numkit::spec_stats(x)?;
    let (m, d, l) = (cfg.m as f64, cfg.d as f64, cfg.depth as f64);
    let eta = match cfg.step {
        StepSize::Eta(e) => e,
        StepSize::Prefactor(k) => k * m / (l * st.op_norm.powi(2)),
    };
    let scale = st.sigma_min_nonzero.powi(2) * (m / d).sqrt();
    let (lambda, gamma) = match cfg.decay {
        Decay::Gamma(g) => (g * scale, Some(g)),
        Decay::Lambda(lam) => {
            let g = lam / scale;
            (lam, (g > 0.0 && g <= 1.0).then_some(g))
        }
    };
    let tau_ub = trainer::tau_upper_bound(cfg.m, cfg.depth, eta, lambda, st.sigma_min_nonzero);
    Ok(ResolvedHp { eta, lambda, gamma, tau_ub })
}

/// Result of one training run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub value: f64,
    pub run: usize,
    pub hp: ResolvedHp,
    pub trace: TrainTrace,
    pub robustness: Vec<RobustnessRow>,
    pub csv_path: PathBuf,
}

impl RunOutcome {
    pub fn status(&self) -> RunStatus {
        self.trace.status
    }
}

/// Trains one network for sweep point `cfg` (already specialised with
/// [`ExperimentConfig::at`]) and repetition `run`. Seeds depend only on the
/// master seed and `run`, so every sweep value sees the same data and init.
pub fn run_single(cfg: &ExperimentConfig, run: usize) -> Result<(TrainTrace, ResolvedHp, Vec<RobustnessRow>)> {
    let r = run as u64;
    let data = RunData::build(cfg, derive_seed(cfg.seed, "instance", r))?;
    let hp = resolve_hp(cfg, data.x())?;
    let dims = NetDims::new(cfg.depth, cfg.m, cfg.width, cfg.d)?;
    let mut net = DeepNet::init(dims, cfg.mode, cfg.relu, derive_seed(cfg.seed, "init", r))?;
    let mut params = HyperParams::new(hp.eta, hp.lambda, cfg.iters).with_stride(cfg.log_stride);
    params.c1 = cfg.c1;
    if let Some(g) = hp.gamma {
        params = params.with_gamma(g);
    }
    let trace = match &data {
        RunData::Subspace(inst) => {
            let ctx = MetricsContext::for_instance(inst, cfg.s)?;
            if cfg.relu {
                trainer::train(&mut net, &inst.x, &inst.y, &ctx, &params, &mut [])?
            } else {
                let (x, y) = trainer::reduced_data(inst)?;
                trainer::train(&mut net, &x, &y, &ctx, &params, &mut [])?
            }
        }
        RunData::Union(uos) => {
            let ctx = MetricsContext::for_uos(uos)?;
            trainer::train(&mut net, &uos.x, &uos.y, &ctx, &params, &mut [])?
        }
    };
    let robustness = if cfg.experiment.is_robustness() && trace.status == RunStatus::Completed {
        test_robustness(&net, data.a(), data.signal_model(), &cfg.sigmas, cfg.trials, derive_seed(cfg.seed, "test", r))?
    } else {
        Vec::new()
    };
    Ok((trace, hp, robustness))
}

pub fn fmt_value(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

fn point_dir(root: &Path, axis: SweepAxis, value: f64) -> PathBuf {
    if axis == SweepAxis::None {
        root.join("single")
    } else {
        root.join(format!("{}_{}", axis.as_str(), fmt_value(value)))
    }
}

#[derive(Debug)]
pub struct RunSummary {
    pub config_hash: String,
    pub root: PathBuf,
    pub outcomes: Vec<RunOutcome>,
    pub aggregate_paths: Vec<PathBuf>,
}

impl RunSummary {
    pub fn all_diverged(&self) -> bool {
        !self.outcomes.is_empty() && self.outcomes.iter().all(|o| o.status() == RunStatus::Diverged)
    }

    pub fn for_value(&self, value: f64) -> impl Iterator<Item = &RunOutcome> {
        self.outcomes.iter().filter(move |o| o.value == value || (o.value.is_nan() && value.is_nan()))
    }
}

/// Runs the whole sweep and writes everything under `output_dir/<experiment>/`:
///
/// - `<axis>_<value>/run_<r>.csv` per run and `<axis>_<value>/aggregate.csv` per sweep value
/// - `curves.csv`: all aggregates in long form with a leading `value` column
/// - `summary.csv`: final metrics, detected phase change and its bound per run
/// - `robustness.csv`, `robustness_aggregate.csv` for robustness experiments
/// - `meta.txt`: resolved configuration, its hash and the preset assumptions
///
/// `threads = 0` uses all cores. Diverged runs are recorded, not fatal.
pub fn run(cfg: &ExperimentConfig, threads: usize) -> Result<RunSummary> {
    cfg.validate()?;
    let root = cfg.output_dir.join(cfg.experiment.as_str());
    let points = cfg.sweep_points();
    let jobs: Vec<(f64, usize)> = points.iter().flat_map(|&v| (0..cfg.runs).map(move |r| (v, r))).collect();
    for &v in &points {
        fs::create_dir_all(point_dir(&root, cfg.sweep, v))?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let outcomes = pool.install(|| {
        jobs.par_iter()
            .map(|&(value, run)| {
                let (trace, hp, robustness) = run_single(&cfg.at(value)?, run)?;
                let csv_path = point_dir(&root, cfg.sweep, value).join(format!("run_{run}.csv"));
                csvio::write_trace(&csv_path, &trace)?;
                Ok(RunOutcome { value, run, hp, trace, robustness, csv_path })
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut summary = RunSummary { config_hash: cfg.hash(), root: root.clone(), outcomes, aggregate_paths: Vec::new() };
    let mut curves: Option<Table> = None;
    for &v in &points {
        let paths: Vec<&PathBuf> = summary.for_value(v).map(|o| &o.csv_path).collect();
        let agg = csvio::aggregate_files(&paths)?;
        let path = point_dir(&root, cfg.sweep, v).join("aggregate.csv");
        agg.write(&path)?;
        summary.aggregate_paths.push(path);
        let c = curves.get_or_insert_with(|| Table {
            header: std::iter::once("value".to_string()).chain(agg.header.iter().cloned()).collect(),
            rows: Vec::new(),
        });
        c.rows.extend(agg.rows.into_iter().map(|r| std::iter::once(fmt_value(v)).chain(r).collect()));
    }
    if let Some(c) = curves {
        c.write(&root.join("curves.csv"))?;
    }
    write_summary(&root.join("summary.csv"), &summary)?;
    if cfg.experiment.is_robustness() {
        write_robustness(&root, &summary, &points)?;
    }
    write_meta(&root.join("meta.txt"), cfg, &summary)?;
    Ok(summary)
}

fn write_summary(path: &Path, summary: &RunSummary) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "value",
        "run",
        "status",
        "eta",
        "lambda",
        "final_t",
        "final_loss",
        "final_recon_norm",
        "final_recon_restricted",
        "final_off_sub",
        "final_oracle_dist",
        "tau_detected",
        "tau_ub",
        "wall_time",
    ])?;
    for o in &summary.outcomes {
        let last = o.trace.last();
        let m = &last.metrics;
        w.write_record([
            fmt_value(o.value),
            o.run.to_string(),
            o.status().as_str().to_string(),
            fmt_f64(o.hp.eta),
            fmt_f64(o.hp.lambda),
            m.t.to_string(),
            fmt_f64(last.loss),
            fmt_f64(m.recon_norm),
            fmt_f64(m.recon_restricted),
            fmt_f64(m.off_sub.unwrap_or(f64::NAN)),
            fmt_f64(m.oracle_dist.unwrap_or(f64::NAN)),
            o.trace.tau_detected.map(|t| t.to_string()).unwrap_or_default(),
            fmt_f64(o.hp.tau_ub),
            format!("{:.3}", o.trace.wall_time),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_robustness(root: &Path, summary: &RunSummary, points: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(root.join("robustness.csv"))?;
    w.write_record(["value", "run", "sigma", "mean_error", "std_error", "mean_rel_error"])?;
    for o in &summary.outcomes {
        for r in &o.robustness {
            w.write_record([
                fmt_value(o.value),
                o.run.to_string(),
                fmt_f64(r.sigma),
                fmt_f64(r.mean_error),
                fmt_f64(r.std_error),
                fmt_f64(r.mean_rel_error),
            ])?;
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(root.join("robustness_aggregate.csv"))?;
    w.write_record([
        "value",
        "sigma",
        "mean_error_median",
        "mean_error_std",
        "mean_rel_error_median",
        "mean_rel_error_std",
        "runs",
    ])?;
    for &v in points {
        let runs: Vec<&RunOutcome> = summary.for_value(v).filter(|o| !o.robustness.is_empty()).collect();
        let Some(first) = runs.first() else { continue };
        for (i, row) in first.robustness.iter().enumerate() {
            let err: Vec<f64> = runs.iter().map(|o| o.robustness[i].mean_error).collect();
            let rel: Vec<f64> = runs.iter().map(|o| o.robustness[i].mean_rel_error).collect();
            w.write_record([
                fmt_value(v),
                fmt_f64(row.sigma),
                fmt_f64(csvio::median(&err)),
                fmt_f64(csvio::std_dev(&err)),
                fmt_f64(csvio::median(&rel)),
                fmt_f64(csvio::std_dev(&rel)),
                runs.len().to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_meta(path: &Path, cfg: &ExperimentConfig, summary: &RunSummary) -> Result<()> {
    let mut text = format!("config_hash = {}\n", summary.config_hash);
    text.push_str(&cfg.to_kv());
    for a in &cfg.assumptions {
        text.push_str(&format!("# assumption: {a}\n"));
    }
    let diverged = summary.outcomes.iter().filter(|o| o.status() == RunStatus::Diverged).count();
    text.push_str(&format!("# runs: {} total, {diverged} diverged\n", summary.outcomes.len()));
    fs::write(path, text)?;
    Ok(())
}

/// Applies the master seed override from the environment, if set.
pub fn apply_seed_env(cfg: &mut ExperimentConfig) -> Result<()> {
    if let Ok(v) = std::env::var(SEED_ENV) {
        cfg.seed = v.trim().parse().map_err(|_| CliError::Config(format!("{SEED_ENV}='{v}' is not a u64")))?;
    }
    Ok(())
}
