// DPS, DSG and LGD-MC guidance on the pinned-coordinate task at a shared
// network-pass budget, next to the trust sampler.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use trust_sampling::baselines::{BaselineConfig, BaselineMethod, DsgRadius};
use trust_sampling::constraints::ConstraintSpec;
use trust_sampling::datasets::{generate, split_holdout, DatasetParams, DatasetSpec};
use trust_sampling::denoiser::{train, Architecture, TrainConfig};
use trust_sampling::diffusion::{NoiseSchedule, StepGrid};
use trust_sampling::evaluation::{constraint_violation, stack_samples};
use trust_sampling::sampler::{trust_sample, ChainRng, SamplerConfig, TrustSchedule};
use trust_sampling::tasks::{make_task, TaskSpec};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let s = NoiseSchedule::linear(1000, 1e-4, 0.02)?;
    let spec = DatasetSpec {
        params: DatasetParams::GaussianMixture { components: 8, radius: 2.0, std: 0.2 },
        n: 4000,
        seed: 1,
    };
    let data = generate(&spec)?;
    let (rows, _) = split_holdout(&data, 0.1);
    let cfg = TrainConfig { epochs: 30, batch_size: 256, learning_rate: 2e-3, seed: 0, dataset_id: String::new() };
    let model = train(&rows, &s, Architecture::standard(2), &cfg)?.model;
    let task = make_task(
        &TaskSpec { name: "pin_x0".into(), dataset: String::new(), constraint: ConstraintSpec::Mask { indices: vec![0], target: None } },
        data.view(),
        &mut ChaCha8Rng::seed_from_u64(0),
    )?;
    let con = task.constraint.as_ref();
    let chains = 16;

    // 100 guided steps at 2 passes each versus 50 trust steps at 1 + 3.
    let grid = StepGrid::uniform(1000, 100, 1.0)?;
    let methods = [
        (BaselineMethod::Dps, 0.0175),
        (BaselineMethod::Dsg { radius: DsgRadius::Spherical }, 1.0),
        (BaselineMethod::LgdMc { particles: 10, radius_scale: 0.3 }, 0.02),
    ];
    for (method, scale) in methods {
        let b = BaselineConfig { method, guidance_scale: scale, grid: grid.clone() };
        b.validate()?;
        let mut xs = Vec::new();
        for c in 0..chains {
            xs.push(b.sample(&model, con, &s, &mut ChainRng::new(0, c))?.0);
        }
        let xs = stack_samples(&xs)?;
        println!("{:8} NFE {:4}  violation {:.4}", method.name(), b.nfe(), constraint_violation(xs.view(), con)?);
    }
    let sc = SamplerConfig { grid: StepGrid::uniform(1000, 50, 1.0)?, schedule: TrustSchedule::constant(3), w: 0.05, eps_max: None };
    let mut xs = Vec::new();
    for c in 0..chains {
        xs.push(trust_sample(&model, con, &s, &sc, &mut ChainRng::new(0, c))?.0);
    }
    let xs = stack_samples(&xs)?;
    println!("{:8} NFE {:4}  violation {:.4}", "trust", sc.nfe_budget(), constraint_violation(xs.view(), con)?);
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
