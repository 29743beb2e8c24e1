use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use trust_sampling::experiment::{
    cmd_benchmark, cmd_calibrate, cmd_sample, cmd_train, cmd_validate, Experiment, Overrides,
};
use trust_sampling::Result;

#[derive(Parser)]
#[command(name = "trust-sampling", version, about = "Guided diffusion sampling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long, global = true, default_value = "experiment.toml")]
    config: PathBuf,
    /// Seed override: training seed for `train`, the chain seed for `sample`,
    /// the single benchmark seed for `benchmark`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Per-chain NFE cap override.
    #[arg(long, global = true)]
    nfe_budget: Option<u64>,
    /// Disable early termination for every trust method.
    #[arg(long, global = true)]
    no_boundary: bool,
    /// Run every trust schedule end-to-start.
    #[arg(long, global = true)]
    schedule_reversed: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train the denoiser; writes model.ckpt and train_loss.csv.
    Train(Common),
    /// Estimate eps_max from unguided chains; writes calibration.json.
    Calibrate(Common),
    /// Draw guided samples; writes samples and per-step traces.
    Sample {
        #[command(flatten)]
        common: Common,
        /// Task name (default: first task).
        #[arg(long)]
        task: Option<String>,
        /// Method name (default: first method).
        #[arg(long)]
        method: Option<String>,
        /// Number of chains (default: benchmark.chains).
        #[arg(long)]
        n: Option<usize>,
    },
    /// Run every method on every task and seed; writes benchmark.csv.
    Benchmark(Common),
    /// Check the config, dataset, tasks and budgets without running anything.
    Validate(Common),
}

fn experiment(c: &Common) -> Result<Experiment> {
    let o = Overrides {
        seed: c.seed,
        out: c.out.clone(),
        nfe_budget: c.nfe_budget,
        no_boundary: c.no_boundary,
        schedule_reversed: c.schedule_reversed,
    };
    Experiment::load(&c.config, &o)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(c) => {
            let s = cmd_train(&experiment(&c)?)?;
            println!(
                "trained {} epochs on {} rows, final loss {:.6}; wrote {}",
                s.epochs,
                s.train_rows,
                s.final_loss,
                s.checkpoint.display()
            );
        }
        Command::Calibrate(c) => {
            let cal = cmd_calibrate(&experiment(&c)?)?;
            println!(
                "eps_max = {:.6} (mean {:.6}, std {:.6}, margin {}, {} norms)",
                cal.eps_max, cal.mean, cal.std, cal.margin, cal.count
            );
        }
        Command::Sample {
            common,
            task,
            method,
            n,
        } => {
            let exp = experiment(&common)?;
            let seed = common.seed.unwrap_or(0);
            let s = cmd_sample(&exp, task.as_deref(), method.as_deref(), n, seed)?;
            let mean = s.total_nfe.iter().sum::<u64>() as f64 / s.n as f64;
            println!(
                "{} chains, mean NFE {mean}, violation {:.6}; wrote {} and {}",
                s.n,
                s.violation,
                s.samples.display(),
                s.traces.display()
            );
        }
        Command::Benchmark(c) => {
            let s = cmd_benchmark(&experiment(&c)?)?;
            if let Some(e) = s.eps_max {
                println!("eps_max = {e:.6}");
            }
            println!("{:<14} {:<14} {:>6} {:>10} {:>12} {:>10} {:>10}", "method", "task", "seed", "mean_nfe", "violation", "sw2", "diversity");
            for r in &s.rows {
                let m = &r.report;
                println!(
                    "{:<14} {:<14} {:>6} {:>10.1} {:>12.6} {:>10.4} {:>10.4}",
                    m.method, m.task, r.seed, m.mean_nfe, m.mean_violation, m.sw2, m.diversity
                );
            }
            println!("wrote {}", s.csv.display());
        }
        Command::Validate(c) => {
            let r = cmd_validate(&experiment(&c)?)?;
            println!("{}: dataset {} rows x {} dims, tasks {:?}", r.name, r.dataset_rows, r.dataset_dim, r.tasks);
            match r.nfe_budget {
                Some(b) => println!("NFE budget per chain: {b}"),
                None => println!("NFE budget per chain: none"),
            }
            for b in &r.budgets {
                println!(
                    "  {:<14} {:<7} K={:<5} expected NFE {:>8.1}  max {:>6}  {}",
                    b.method,
                    b.kind,
                    b.steps,
                    b.expected_nfe,
                    b.max_nfe,
                    if b.within_budget { "ok" } else { "OVER BUDGET" }
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
