// Building guidance tasks on the trajectory dataset: targets are read off a
// held-out trajectory and every task comes with a data sample that meets it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use trust_sampling::constraints::ConstraintSpec;
use trust_sampling::datasets::{generate, DatasetParams, DatasetSpec};
use trust_sampling::tasks::{make_task, TaskSpec};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let spec = DatasetSpec { params: DatasetParams::trajectory(), n: 1000, seed: 2 };
    let data = generate(&spec)?;
    println!("{} trajectories of dimension {}", data.nrows(), data.ncols());

    let tasks = [
        ("min_height", ConstraintSpec::MinHeight { dims_per_frame: 2, height_dim: 1, threshold: 1.0 }),
        ("obstacle", ConstraintSpec::Obstacle { dims_per_frame: 2, center: vec![0.0, 0.5], radius: 0.3 }),
        ("average_obs", ConstraintSpec::Average { block: 8, dims_per_frame: Some(2), target: None }),
        ("endpoints", ConstraintSpec::Mask { indices: vec![0, 1, 62, 63], target: None }),
        ("angular_momentum", ConstraintSpec::AngularMomentum { dims_per_frame: 2, pair: (0, 1), target: None }),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for (name, constraint) in tasks {
        let t = make_task(&TaskSpec { name: name.into(), dataset: String::new(), constraint }, data.view(), &mut rng)?;
        let on_data = data
            .rows()
            .into_iter()
            .filter(|r| t.constraint.loss(&r.to_vec()).is_ok_and(|l| l < 1e-6))
            .count();
        println!(
            "{name:17} witness loss {:.2e}  reference row {:4}  rows meeting it {on_data}",
            t.constraint.loss(&t.witness)?,
            t.reference_row
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
