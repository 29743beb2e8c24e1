// Trust-scheduled guided sampling on the eight-Gaussian ring: pin the first
// coordinate to a held-out value and compare against unguided DDIM.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use trust_sampling::constraints::ConstraintSpec;
use trust_sampling::datasets::{generate, split_holdout, DatasetParams, DatasetSpec};
use trust_sampling::denoiser::{train, Architecture, DenoiserModel, TrainConfig};
use trust_sampling::diffusion::{NoiseSchedule, StepGrid};
use trust_sampling::evaluation::{constraint_violation, stack_samples};
use trust_sampling::sampler::{ddim_sample, trust_sample, ChainRng, SamplerConfig, TrustSchedule};
use trust_sampling::tasks::{make_task, TaskSpec};

fn mixture_model(s: &NoiseSchedule) -> trust_sampling::Result<(DenoiserModel, ndarray::Array2<f64>)> {
    let spec = DatasetSpec {
        params: DatasetParams::GaussianMixture { components: 8, radius: 2.0, std: 0.2 },
        n: 4000,
        seed: 1,
    };
    let data = generate(&spec)?;
    let (rows, _) = split_holdout(&data, 0.1);
    let cfg = TrainConfig { epochs: 30, batch_size: 256, learning_rate: 2e-3, seed: 0, dataset_id: String::new() };
    Ok((train(&rows, s, Architecture::standard(2), &cfg)?.model, data))
}

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let s = NoiseSchedule::linear(1000, 1e-4, 0.02)?;
    let (model, data) = mixture_model(&s)?;
    let task = make_task(
        &TaskSpec { name: "pin_x0".into(), dataset: String::new(), constraint: ConstraintSpec::Mask { indices: vec![0], target: None } },
        data.view(),
        &mut ChaCha8Rng::seed_from_u64(0),
    )?;
    println!("pinned x0 = {:.4} (held-out row {})", task.witness[0], task.reference_row);

    let chains = 16;
    let ddim_grid = StepGrid::uniform(1000, 100, 1.0)?;
    let cfg = SamplerConfig {
        grid: StepGrid::uniform(1000, 100, 1.0)?,
        schedule: TrustSchedule::constant(4),
        w: 0.02,
        eps_max: None,
    };
    cfg.validate()?;
    println!("trust budget: {} network passes per chain", cfg.nfe_budget());

    let mut plain = Vec::new();
    let mut guided = Vec::new();
    let mut nfe = 0;
    for c in 0..chains {
        plain.push(ddim_sample(&model, &s, &ddim_grid, &mut ChainRng::new(0, c))?.0);
        let (x, trace) = trust_sample(&model, task.constraint.as_ref(), &s, &cfg, &mut ChainRng::new(0, c))?;
        nfe += trace.total_nfe;
        guided.push(x);
    }
    let plain = stack_samples(&plain)?;
    let guided = stack_samples(&guided)?;
    println!("ddim   violation {:.4}", constraint_violation(plain.view(), task.constraint.as_ref())?);
    println!(
        "trust  violation {:.4}  mean NFE {:.1}",
        constraint_violation(guided.view(), task.constraint.as_ref())?,
        nfe as f64 / chains as f64
    );
    for row in guided.rows().into_iter().take(4) {
        println!("  sample {:.3?}", row.to_vec());
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
