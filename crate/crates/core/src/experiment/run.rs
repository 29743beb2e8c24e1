//! The `train`, `calibrate`, `sample`, `benchmark` and `validate` commands.
//!
//! Files written under the output directory:
//!
//! | file                              | command    |
//! |-----------------------------------|------------|
//! | `dataset.csv`                     | train      |
//! | `model.ckpt`, `train_loss.csv`    | train      |
//! | `calibration.json`                | calibrate  |
//! | `samples_<task>_<method>_s<seed>.csv`, `traces_..csv` | sample |
//! | `benchmark.csv`, `benchmark.json`, `plot_benchmark.py` | benchmark |

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::{ExperimentConfig, MethodConfig, MethodKind, Overrides};
use crate::constraints::Constraint;
use crate::datasets::{self, split_holdout, DatasetSpec, HOLDOUT_FRACTION};
use crate::denoiser::{train, Checkpoint, DenoiserModel, TrainConfig, TrainingMeta};
use crate::diffusion::{NoiseSchedule, StepGrid};
use crate::error::{Error, Result};
use crate::evaluation::{constraint_violation, diversity, sliced_wasserstein, stack_samples, MetricReport};
use crate::sampler::{calibrate_epsilon_max, ddim_sample, trust_sample, Calibration, ChainRng, SampleTrace, SamplerConfig};
use crate::tasks::{make_task, Task};

pub const BENCHMARK_HEADER: &str = "method,task,seed,n,mean_nfe,violation,sw2,diversity,runtime_s";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const DATASET_FILE: &str = "dataset.csv";
pub const CALIBRATION_FILE: &str = "calibration.json";

/// A loaded config with paths resolved.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    /// Directory relative paths in the config are resolved against.
    pub base_dir: PathBuf,
    pub out_dir: PathBuf,
}

impl Experiment {
    pub fn load(path: impl AsRef<Path>, overrides: &Overrides) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config = ExperimentConfig::from_toml(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::new(config, base, overrides)
    }

    pub fn new(mut config: ExperimentConfig, base_dir: PathBuf, overrides: &Overrides) -> Result<Self> {
        config.apply(overrides);
        config.validate()?;
        let out_dir = match (&overrides.out, &config.out_dir) {
            (Some(o), _) => o.clone(),
            (None, Some(o)) => base_dir.join(o),
            (None, None) => base_dir.join("runs").join(&config.name),
        };
        Ok(Self {
            config,
            base_dir,
            out_dir,
        })
    }

    pub fn out(&self, file: &str) -> PathBuf {
        self.out_dir.join(file)
    }

    fn ensure_out_dir(&self) -> Result<()> {
        fs::create_dir_all(&self.out_dir).map_err(|e| Error::io(&self.out_dir, e))
    }

    pub fn noise_schedule(&self) -> Result<NoiseSchedule> {
        self.config.schedule.build()
    }

    /// The full dataset: read from `dataset.path` when set, generated otherwise.
    pub fn dataset(&self) -> Result<(DatasetSpec, Array2<f64>)> {
        match (&self.config.dataset.path, &self.config.dataset.generate) {
            (Some(p), _) => datasets::load(self.base_dir.join(p)),
            (None, Some(spec)) => Ok((spec.clone(), datasets::generate(spec)?)),
            (None, None) => Err(Error::Config("dataset needs a path or generate settings".into())),
        }
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let path = self.out(CHECKPOINT_FILE);
        if !path.exists() {
            return Err(Error::Config(format!(
                "no checkpoint at {}; run `train` first",
                path.display()
            )));
        }
        let ck = Checkpoint::load(&path)?;
        if ck.schedule != self.config.schedule {
            return Err(Error::Config("checkpoint was trained under a different noise schedule".into()));
        }
        Ok(ck)
    }

    /// Stored calibration if present, else a fresh (deterministic) one.
    pub fn calibration(&self, model: &DenoiserModel) -> Result<Calibration> {
        let path = self.out(CALIBRATION_FILE);
        if path.exists() {
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            return serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())));
        }
        self.run_calibration(model)
    }

    fn run_calibration(&self, model: &DenoiserModel) -> Result<Calibration> {
        let c = &self.config.calibration;
        let s = self.noise_schedule()?;
        let grid = StepGrid::uniform(s.timesteps(), c.steps, 1.0)?;
        calibrate_epsilon_max(model, &s, &grid, c.chains, c.margin, c.seed)
    }

    /// Task realization for `seed`: the held-out reference row is drawn from
    /// a stream no sampling chain uses.
    pub fn task(&self, name: &str, data: &Array2<f64>, seed: u64) -> Result<Task> {
        let spec = self.config.task(name)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::MAX);
        make_task(spec, data.view(), &mut rng)
    }

    /// Declared per-chain budgets, checked against the configured cap.
    pub fn budget_table(&self) -> Result<Vec<BudgetRow>> {
        let cap = self.config.benchmark.nfe_budget;
        let mut rows = Vec::new();
        for m in &self.config.methods {
            let expected = m.expected_nfe();
            let within = cap.is_none_or(|c| expected <= c as f64 + 1e-9);
            rows.push(BudgetRow {
                method: m.name.clone(),
                kind: m.kind_name().into(),
                steps: m.steps,
                expected_nfe: expected,
                max_nfe: m.max_nfe(),
                within_budget: within,
            });
        }
        Ok(rows)
    }

    fn check_budgets(&self) -> Result<()> {
        for row in self.budget_table()? {
            if !row.within_budget {
                return Err(Error::BudgetExceeded {
                    method: row.method,
                    used: row.expected_nfe.ceil() as u64,
                    budget: self.config.benchmark.nfe_budget.unwrap_or(0),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BudgetRow {
    pub method: String,
    pub kind: String,
    pub steps: usize,
    pub expected_nfe: f64,
    pub max_nfe: u64,
    pub within_budget: bool,
}

/// Draws one chain with a configured method.
pub fn run_method(
    method: &MethodConfig,
    model: &DenoiserModel,
    con: &dyn Constraint,
    s: &NoiseSchedule,
    eps_max: Option<f64>,
    rng: &mut ChainRng,
) -> Result<(Vec<f64>, SampleTrace)> {
    let grid = method.grid(s.timesteps())?;
    match &method.kind {
        MethodKind::Ddim => ddim_sample(model, s, &grid, rng),
        MethodKind::Trust {
            schedule,
            w,
            boundary,
            eps_max: fixed,
        } => {
            let bound = if *boundary {
                Some(fixed.or(eps_max).ok_or_else(|| {
                    Error::Config(format!("method {} needs eps_max or a calibration", method.name))
                })?)
            } else {
                None
            };
            let cfg = SamplerConfig {
                grid,
                schedule: *schedule,
                w: *w,
                eps_max: bound,
            };
            trust_sample(model, con, s, &cfg, rng)
        }
        _ => {
            let b = method.baseline(s.timesteps())?.expect("guided baseline");
            b.sample(model, con, s, rng)
        }
    }
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    fs::write(path, content).map_err(|e| Error::io(path, e))
}

/// Result of `validate`.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub name: String,
    pub dataset_dim: usize,
    pub dataset_rows: usize,
    pub tasks: Vec<String>,
    pub budgets: Vec<BudgetRow>,
    pub nfe_budget: Option<u64>,
}

/// Dry run: parses the config, materializes the dataset and every task, and
/// reports method budgets. Writes nothing.
pub fn cmd_validate(exp: &Experiment) -> Result<ValidationReport> {
    let (spec, data) = exp.dataset()?;
    let mut tasks = Vec::new();
    for t in &exp.config.tasks {
        exp.task(&t.name, &data, exp.config.benchmark.seeds[0])?;
        tasks.push(t.name.clone());
    }
    exp.check_budgets()?;
    Ok(ValidationReport {
        name: exp.config.name.clone(),
        dataset_dim: spec.dim(),
        dataset_rows: data.nrows(),
        tasks,
        budgets: exp.budget_table()?,
        nfe_budget: exp.config.benchmark.nfe_budget,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub final_loss: f64,
    pub epochs: usize,
    pub train_rows: usize,
}

/// Trains on the non-held-out rows; writes the dataset, checkpoint and
/// per-epoch loss CSV.
pub fn cmd_train(exp: &Experiment) -> Result<TrainSummary> {
    let (spec, data) = exp.dataset()?;
    let (train_rows, _) = split_holdout(&data, HOLDOUT_FRACTION);
    let train_rows = train_rows.to_owned();
    let s = exp.noise_schedule()?;
    let t = &exp.config.training;
    let cfg = TrainConfig {
        epochs: t.epochs,
        batch_size: t.batch_size,
        learning_rate: t.learning_rate,
        seed: t.seed,
        dataset_id: exp.config.dataset.id.clone(),
    };
    let trained = train(&train_rows, &s, exp.config.model.architecture(spec.dim()), &cfg)?;
    exp.ensure_out_dir()?;
    datasets::save(exp.out(DATASET_FILE), &spec, &data)?;
    let mut csv = String::from("epoch,loss\n");
    for (i, l) in trained.loss_history.iter().enumerate() {
        let _ = writeln!(csv, "{},{:?}", i + 1, l);
    }
    write_file(&exp.out("train_loss.csv"), &csv)?;
    let final_loss = trained.final_loss();
    let ck = Checkpoint {
        schedule: exp.config.schedule,
        model: trained.model,
        training: TrainingMeta::from_config(&cfg, final_loss),
    };
    let path = exp.out(CHECKPOINT_FILE);
    ck.save(&path)?;
    Ok(TrainSummary {
        checkpoint: path,
        final_loss,
        epochs: t.epochs,
        train_rows: train_rows.nrows(),
    })
}

/// Calibrates the noise-norm bound and stores it as `calibration.json`.
pub fn cmd_calibrate(exp: &Experiment) -> Result<Calibration> {
    let ck = exp.checkpoint()?;
    let cal = exp.run_calibration(&ck.model)?;
    exp.ensure_out_dir()?;
    let json = serde_json::to_string_pretty(&cal).map_err(|e| Error::Config(e.to_string()))?;
    write_file(&exp.out(CALIBRATION_FILE), &(json + "\n"))?;
    Ok(cal)
}

#[derive(Debug, Clone, Serialize)]
pub struct SampleSummary {
    pub samples: PathBuf,
    pub traces: PathBuf,
    pub n: usize,
    pub total_nfe: Vec<u64>,
    pub violation: f64,
}

pub fn samples_to_csv(samples: &Array2<f64>) -> String {
    let mut out = String::new();
    let header: Vec<String> = (0..samples.ncols()).map(|j| format!("c{j}")).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in samples.rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

/// One row per (chain, inference step); `eps_norms` is `;`-separated.
pub fn traces_to_csv(traces: &[SampleTrace]) -> String {
    let mut out = String::from(
        "chain,k,t,t_prev,j_limit,j_used,boundary_triggered,loss_before,loss_after,base_eps_norm,nfe,eps_norms\n",
    );
    for (c, tr) in traces.iter().enumerate() {
        for st in &tr.steps {
            let norms: Vec<String> = st.eps_norms.iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(
                out,
                "{c},{},{},{},{},{},{},{},{},{:?},{},{}",
                st.k,
                st.t,
                st.t_prev,
                st.j_limit,
                st.j_used,
                st.boundary_triggered,
                opt(st.loss_before),
                opt(st.loss_after),
                st.base_eps_norm,
                st.nfe,
                norms.join(";")
            );
        }
    }
    out
}

/// Draws `n` chains of `method` on `task` (first of each when unnamed).
pub fn cmd_sample(
    exp: &Experiment,
    task: Option<&str>,
    method: Option<&str>,
    n: Option<usize>,
    seed: u64,
) -> Result<SampleSummary> {
    let cfg = &exp.config;
    let task_name = match task {
        Some(t) => t.to_string(),
        None => cfg.tasks.first().ok_or_else(|| Error::Config("config has no tasks".into()))?.name.clone(),
    };
    let method = match method {
        Some(m) => cfg.method(m)?,
        None => cfg.methods.first().ok_or_else(|| Error::Config("config has no methods".into()))?,
    };
    let n = n.unwrap_or(cfg.benchmark.chains);
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one chain".into()));
    }
    let ck = exp.checkpoint()?;
    let s = exp.noise_schedule()?;
    let (_, data) = exp.dataset()?;
    let task = exp.task(&task_name, &data, seed)?;
    let eps_max = if method.uses_calibration() {
        Some(exp.calibration(&ck.model)?.eps_max)
    } else {
        None
    };
    let mut xs = Vec::with_capacity(n);
    let mut traces = Vec::with_capacity(n);
    for c in 0..n {
        let (x, tr) = run_method(method, &ck.model, task.constraint.as_ref(), &s, eps_max, &mut ChainRng::new(seed, c as u64))?;
        xs.push(x);
        traces.push(tr);
    }
    let samples = stack_samples(&xs)?;
    exp.ensure_out_dir()?;
    let stem = format!("{}_{}_s{seed}", task_name, method.name);
    let sp = exp.out(&format!("samples_{stem}.csv"));
    let tp = exp.out(&format!("traces_{stem}.csv"));
    write_file(&sp, &samples_to_csv(&samples))?;
    write_file(&tp, &traces_to_csv(&traces))?;
    Ok(SampleSummary {
        samples: sp,
        traces: tp,
        n,
        total_nfe: traces.iter().map(|t| t.total_nfe).collect(),
        violation: constraint_violation(samples.view(), task.constraint.as_ref())?,
    })
}

/// Benchmark row with the reference-diversity gap kept alongside.
#[derive(Debug, Clone, Serialize)]
pub struct BenchmarkRow {
    pub seed: u64,
    pub n: usize,
    pub report: MetricReport,
}

impl BenchmarkRow {
    pub fn csv_line(&self) -> String {
        let r = &self.report;
        format!(
            "{},{},{},{},{:?},{:?},{:?},{:?},{:?}",
            r.method, r.task, self.seed, self.n, r.mean_nfe, r.mean_violation, r.sw2, r.diversity, r.runtime_seconds
        )
    }
}

/// Shared state for benchmark cells: model, data, reference statistics.
pub struct BenchContext {
    pub model: DenoiserModel,
    pub schedule: NoiseSchedule,
    pub data: Array2<f64>,
    pub holdout: Array2<f64>,
    pub eps_max: Option<f64>,
}

impl BenchContext {
    pub fn new(exp: &Experiment) -> Result<Self> {
        let ck = exp.checkpoint()?;
        let schedule = exp.noise_schedule()?;
        let (_, data) = exp.dataset()?;
        let (_, hold) = split_holdout(&data, HOLDOUT_FRACTION);
        let holdout = hold.to_owned();
        let eps_max = if exp.config.methods.iter().any(MethodConfig::uses_calibration) {
            Some(exp.calibration(&ck.model)?.eps_max)
        } else {
            None
        };
        Ok(Self {
            model: ck.model,
            schedule,
            data,
            holdout,
            eps_max,
        })
    }
}

/// One (method, task, seed) cell: `chains` samples and their metrics.
pub fn benchmark_cell(
    exp: &Experiment,
    ctx: &BenchContext,
    method: &MethodConfig,
    task: &Task,
    seed: u64,
) -> Result<BenchmarkRow> {
    let b = &exp.config.benchmark;
    let start = Instant::now();
    let mut xs = Vec::with_capacity(b.chains);
    let mut nfe = 0u64;
    let limit = method.max_nfe();
    for c in 0..b.chains {
        let (x, tr) = run_method(
            method,
            &ctx.model,
            task.constraint.as_ref(),
            &ctx.schedule,
            ctx.eps_max,
            &mut ChainRng::new(seed, c as u64),
        )
        .map_err(|e| match e {
            Error::NonFinite(what) => Error::NonFinite(format!(
                "{what} ({} on {}, seed {seed}, chain {c})",
                method.name, task.name
            )),
            e => e,
        })?;
        if tr.total_nfe > limit {
            return Err(Error::BudgetExceeded {
                method: method.name.clone(),
                used: tr.total_nfe,
                budget: limit,
            });
        }
        nfe += tr.total_nfe;
        xs.push(x);
    }
    let runtime = start.elapsed().as_secs_f64();
    let samples = stack_samples(&xs)?;
    let mean_nfe = nfe as f64 / b.chains as f64;
    if let Some(cap) = b.nfe_budget {
        if !method.is_stochastic() && mean_nfe > cap as f64 {
            return Err(Error::BudgetExceeded {
                method: method.name.clone(),
                used: mean_nfe.ceil() as u64,
                budget: cap,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sw2 = sliced_wasserstein(samples.view(), ctx.holdout.view(), b.n_projections, &mut rng)?;
    let div = diversity(samples.view(), b.diversity_pairs, &mut rng)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let div_ref = diversity(ctx.holdout.view(), b.diversity_pairs, &mut rng)?;
    let report = MetricReport {
        method: method.name.clone(),
        task: task.name.clone(),
        seed_count: 1,
        mean_violation: constraint_violation(samples.view(), task.constraint.as_ref())?,
        sw2,
        diversity: div,
        diversity_gap: (div - div_ref).abs(),
        mean_nfe,
        runtime_seconds: if b.record_runtime { runtime } else { 0.0 },
    };
    report.validate()?;
    Ok(BenchmarkRow {
        seed,
        n: b.chains,
        report,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchmarkSummary {
    /// Kept out of `benchmark.json` so reruns elsewhere write identical bytes.
    #[serde(skip)]
    pub csv: PathBuf,
    pub rows: Vec<BenchmarkRow>,
    pub budgets: Vec<BudgetRow>,
    pub eps_max: Option<f64>,
}

/// Every (method, task, seed) cell in config order; writes `benchmark.csv`,
/// `benchmark.json` and `plot_benchmark.py`. Any method declared or observed
/// above the NFE budget fails the run.
pub fn cmd_benchmark(exp: &Experiment) -> Result<BenchmarkSummary> {
    exp.check_budgets()?;
    let ctx = BenchContext::new(exp)?;
    let cfg = &exp.config;
    let mut rows = Vec::new();
    for t in &cfg.tasks {
        for &seed in &cfg.benchmark.seeds {
            let task = exp.task(&t.name, &ctx.data, seed)?;
            for m in &cfg.methods {
                rows.push(benchmark_cell(exp, &ctx, m, &task, seed)?);
            }
        }
    }
    exp.ensure_out_dir()?;
    let mut csv = String::from(BENCHMARK_HEADER);
    csv.push('\n');
    for r in &rows {
        csv.push_str(&r.csv_line());
        csv.push('\n');
    }
    let path = exp.out("benchmark.csv");
    write_file(&path, &csv)?;
    let summary = BenchmarkSummary {
        csv: path,
        rows,
        budgets: exp.budget_table()?,
        eps_max: ctx.eps_max,
    };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::Config(e.to_string()))?;
    write_file(&exp.out("benchmark.json"), &(json + "\n"))?;
    write_file(&exp.out("plot_benchmark.py"), PLOT_SCRIPT)?;
    Ok(summary)
}

pub const PLOT_SCRIPT: &str = r#"#!/usr/bin/env python3
"""Plots benchmark.csv: violation and NFEs per method, one panel row per task."""
import csv
import sys
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

here = Path(__file__).resolve().parent
src = Path(sys.argv[1]) if len(sys.argv) > 1 else here / "benchmark.csv"
rows = list(csv.DictReader(open(src)))
tasks = sorted({r["task"] for r in rows})
metrics = ["violation", "mean_nfe", "sw2", "diversity"]
fig, axes = plt.subplots(len(tasks), len(metrics), figsize=(4 * len(metrics), 3 * len(tasks)), squeeze=False)
for i, task in enumerate(tasks):
    per = defaultdict(lambda: defaultdict(list))
    for r in rows:
        if r["task"] == task:
            for m in metrics:
                per[r["method"]][m].append(float(r[m]))
    methods = list(per)
    for j, m in enumerate(metrics):
        vals = [sum(per[k][m]) / len(per[k][m]) for k in methods]
        axes[i][j].bar(methods, vals)
        axes[i][j].set_title(f"{task}: {m}")
        axes[i][j].tick_params(axis="x", rotation=45)
fig.tight_layout()
out = src.with_suffix(".png")
fig.savefig(out, dpi=120)
print(out)
"#;
