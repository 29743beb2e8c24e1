// Noise schedules, the forward process and one deterministic/stochastic DDIM step.

use trust_sampling::diffusion::{ddim_mean, forward_diffuse, predict_x0, sigma_ddpm, NoiseSchedule, StepGrid};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let s = NoiseSchedule::linear(1000, 1e-4, 0.02)?;
    for t in [1, 250, 500, 750, 1000] {
        println!("t={t:4}  beta={:.5}  alpha_cum={:.6}", s.beta(t)?, s.alpha_cum(t)?);
    }
    let cos = NoiseSchedule::cosine(1000, 0.999)?;
    println!("cosine alpha_cum(500) = {:.6}", cos.alpha_cum(500)?);

    // With the true noise, x0 comes back exactly.
    let x0 = [1.5, -0.5];
    let eps = [0.3, -1.2];
    let xt = forward_diffuse(&x0, 600, &eps, &s)?;
    let back = predict_x0(&xt, &eps, 600, &s)?;
    println!("x_600 = {xt:?}, recovered x0 = {back:?}");
    assert!((back[0] - x0[0]).abs() < 1e-12 && (back[1] - x0[1]).abs() < 1e-12);

    let grid = StepGrid::uniform(1000, 10, 1.0)?;
    println!("10-step grid: {:?}", grid.indices());
    for (t, t_prev) in grid.steps().take(3) {
        let sigma = sigma_ddpm(t, t_prev, &s, grid.eta())?;
        let mean = ddim_mean(&xt, &eps, t, t_prev, sigma, &s)?;
        println!("step {t} -> {t_prev}: sigma={sigma:.4} mean={mean:.4?}");
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
