// Building constraints from their serializable description, evaluating
// losses and gradients, and pulling the gradient back through a denoiser.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use trust_sampling::constraints::{guidance_gradient, Constraint, ConstraintSpec};
use trust_sampling::denoiser::{Architecture, DenoiserModel};
use trust_sampling::diffusion::NoiseSchedule;

fn finite_difference(con: &dyn Constraint, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let (mut hi, mut lo) = (x.to_vec(), x.to_vec());
            hi[i] += h;
            lo[i] -= h;
            (con.loss(&hi).unwrap() - con.loss(&lo).unwrap()) / (2.0 * h)
        })
        .collect()
}

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let dim = 8;
    let specs: Vec<(&str, &str)> = vec![
        ("mask", r#"kind = "mask"
indices = [0, 3]
target = [0.5, -1.0]"#),
        ("average", r#"kind = "average"
block = 2
target = [0.0, 0.1, 0.2, 0.3]"#),
        ("min_height", r#"kind = "min_height"
dims_per_frame = 2
height_dim = 1
threshold = 0.8"#),
        ("obstacle", r#"kind = "obstacle"
dims_per_frame = 2
center = [0.0, 0.0]
radius = 0.5"#),
        ("angular_momentum", r#"kind = "angular_momentum"
dims_per_frame = 2
target = 0.25"#),
    ];
    let x: Vec<f64> = (0..dim).map(|i| 0.3 * i as f64 - 1.0).collect();
    for (name, text) in specs {
        let spec: ConstraintSpec = toml::from_str(text)?;
        let con = spec.build(dim)?;
        let (loss, grad) = con.loss_and_grad(&x)?;
        let fd = finite_difference(con.as_ref(), &x, 1e-6);
        let err = grad.iter().zip(&fd).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        println!("{name:17} loss {loss:9.5}  max |grad - fd| {err:.2e}");
    }

    // Same loss, differentiated through x0_hat(x_t) of an untrained network.
    let s = NoiseSchedule::linear(1000, 1e-4, 0.02)?;
    let model = DenoiserModel::init(Architecture::standard(dim), &mut ChaCha8Rng::seed_from_u64(0))?;
    let spec: ConstraintSpec = toml::from_str("kind = \"mask\"\nindices = [0]\ntarget = [1.0]")?;
    let con = spec.build(dim)?;
    for t in [10, 500, 990] {
        let g = guidance_gradient(&model, con.as_ref(), &x, t, &s)?;
        let norm = g.grad.iter().map(|v| v * v).sum::<f64>().sqrt();
        println!("t={t:4}  L(x0_hat)={:10.4}  |grad_x|={norm:10.4}", g.loss);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
