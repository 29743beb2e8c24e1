// Sample-quality metrics and the Jensen-gap oracle suite.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use trust_sampling::constraints::EqualityObservation;
use trust_sampling::evaluation::{
    constraint_violation, diversity, jensen_gap_oracle, run_standard_jensen_suite, sliced_wasserstein, Posterior,
};

fn gaussian_cloud(n: usize, shift: f64, scale: f64, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nd = Normal::new(0.0, scale).unwrap();
    Array2::from_shape_fn((n, 2), |(_, j)| nd.sample(&mut rng) + if j == 0 { shift } else { 0.0 })
}

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let reference = gaussian_cloud(500, 0.0, 1.0, 1);
    for (shift, scale) in [(0.0, 1.0), (0.5, 1.0), (0.0, 0.5), (2.0, 1.0)] {
        let other = gaussian_cloud(500, shift, scale, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let sw = sliced_wasserstein(other.view(), reference.view(), 100, &mut rng)?;
        let div = diversity(other.view(), 500, &mut rng)?;
        println!("shift {shift:.1} scale {scale:.1}: SW2 {sw:.4}  diversity {div:.4}");
    }
    let pin = EqualityObservation::mask(vec![0], vec![0.0], 2)?;
    println!("violation of pin x0 = 0: {:.4}", constraint_violation(reference.view(), &pin)?);

    // Gap between E[exp(-L)] and exp(-L(E[x])) for a spread posterior.
    let post = Posterior::discretized_gaussian(0.5, 0.7, 41)?;
    let con = EqualityObservation::mask(vec![0], vec![0.0], 1)?;
    let r = jensen_gap_oracle(&con, &post)?;
    println!(
        "jensen gap {:.6} in [{:.6}, {:.6}] (variance {:.4}, a {:.4}, b {:.4})",
        r.gap, r.lower, r.upper, r.variance, r.a, r.b
    );

    let report = run_standard_jensen_suite();
    println!(
        "standard suite: {} cases, {} failures",
        report.cases.len(),
        report.failures().count()
    );
    assert!(report.passed());
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
