// Calibrate the manifold boundary from unguided noise-prediction norms, then
// let the trust sampler stop inner iterations early when it leaves it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use trust_sampling::constraints::ConstraintSpec;
use trust_sampling::datasets::{generate, split_holdout, DatasetParams, DatasetSpec};
use trust_sampling::denoiser::{train, Architecture, TrainConfig};
use trust_sampling::diffusion::{NoiseSchedule, StepGrid};
use trust_sampling::evaluation::{constraint_violation, stack_samples};
use trust_sampling::sampler::{calibrate_epsilon_max, trust_sample, ChainRng, SamplerConfig, TrustSchedule};
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

    let grid = StepGrid::uniform(1000, 100, 1.0)?;
    for margin in [1.0, 1.5, 3.0] {
        let cal = calibrate_epsilon_max(&model, &s, &grid, 32, margin, 0)?;
        println!(
            "margin {margin:.1}: ||eps|| mean {:.4} std {:.4} over {} steps -> eps_max {:.4}",
            cal.mean, cal.std, cal.count, cal.eps_max
        );
    }
    let eps_max = calibrate_epsilon_max(&model, &s, &grid, 32, 1.5, 0)?.eps_max;

    let task = make_task(
        &TaskSpec { name: "pin_x0".into(), dataset: String::new(), constraint: ConstraintSpec::Mask { indices: vec![0], target: None } },
        data.view(),
        &mut ChaCha8Rng::seed_from_u64(0),
    )?;
    for bound in [None, Some(eps_max)] {
        let sc = SamplerConfig { grid: grid.clone(), schedule: TrustSchedule::constant(4), w: 0.02, eps_max: bound };
        let (mut xs, mut nfe, mut stops) = (Vec::new(), 0, 0);
        for c in 0..16 {
            let (x, tr) = trust_sample(&model, task.constraint.as_ref(), &s, &sc, &mut ChainRng::new(0, c))?;
            nfe += tr.total_nfe;
            stops += tr.steps.iter().filter(|st| st.boundary_triggered).count();
            xs.push(x);
        }
        let xs = stack_samples(&xs)?;
        println!(
            "eps_max {:>8}: violation {:.4}  mean NFE {:.1}  early stops {stops}",
            bound.map_or("off".to_string(), |e| format!("{e:.4}")),
            constraint_violation(xs.view(), task.constraint.as_ref())?,
            nfe as f64 / 16.0
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
