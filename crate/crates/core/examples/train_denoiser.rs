// Train a small noise-prediction MLP on the eight-Gaussian ring and round-trip
// it through the checkpoint format.
//
// `cargo run --release --example train_denoiser -- 100` trains the full-size run.

use trust_sampling::datasets::{generate, split_holdout, DatasetParams, DatasetSpec};
use trust_sampling::denoiser::{train, Architecture, Checkpoint, TrainConfig, TrainingMeta};
use trust_sampling::diffusion::ScheduleParams;

fn epochs_from_args(default: usize) -> usize {
    std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(default)
}

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let spec = DatasetSpec {
        params: DatasetParams::GaussianMixture { components: 8, radius: 2.0, std: 0.2 },
        n: 2000,
        seed: 1,
    };
    let data = generate(&spec)?;
    let (train_rows, holdout) = split_holdout(&data, 0.1);
    println!("{} training rows, {} held out", train_rows.nrows(), holdout.nrows());

    let params = ScheduleParams::default();
    let schedule = params.build()?;
    let cfg = TrainConfig {
        epochs: epochs_from_args(10),
        batch_size: 256,
        learning_rate: 2e-3,
        seed: 0,
        dataset_id: "mixture8".into(),
    };
    let arch = Architecture::standard(2);
    println!("{} parameters, layers {:?}", arch.parameter_count(), arch.layer_dims());
    let trained = train(&train_rows, &schedule, arch, &cfg)?;
    for (e, l) in trained.loss_history.iter().enumerate().step_by(5) {
        println!("epoch {e:3}  loss {l:.4}");
    }

    let ck = Checkpoint {
        schedule: params,
        training: TrainingMeta::from_config(&cfg, trained.final_loss()),
        model: trained.model,
    };
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("model.ckpt");
    ck.save(&path)?;
    let loaded = Checkpoint::load(&path)?;
    assert_eq!(loaded.model.to_flat(), ck.model.to_flat());
    println!("checkpoint header: {:?}", loaded.header());
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
