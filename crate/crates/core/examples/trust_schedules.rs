// Iteration-limit schedules for the trust sampler and the NFE budgets they imply.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use trust_sampling::sampler::{iteration_limit, nfe_budget_for, nfe_upper_bound, TrustSchedule};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let steps = 200;
    let schedules = [
        ("constant 4", TrustSchedule::constant(4)),
        ("linear 2->6", TrustSchedule::linear(2.0, 6.0)?),
        ("linear 2->6 reversed", TrustSchedule::linear(2.0, 6.0)?.reversed(true)),
        ("stochastic 2->6", TrustSchedule::stochastic_linear(2.0, 6.0)?),
        ("stochastic 0->3", TrustSchedule::stochastic_linear(0.0, 3.0)?),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    println!("{:22} {:>8} {:>8}  first/last limits", "schedule", "budget", "max");
    for (name, sch) in schedules {
        sch.validate_for(steps)?;
        let first: Vec<usize> = (1..=4).map(|k| iteration_limit(&sch, k, steps, &mut rng)).collect::<Result<_, _>>()?;
        let last: Vec<usize> = (steps - 3..=steps)
            .map(|k| iteration_limit(&sch, k, steps, &mut rng))
            .collect::<Result<_, _>>()?;
        println!(
            "{name:22} {:8.1} {:8}  {first:?} .. {last:?}",
            nfe_budget_for(&sch, steps),
            nfe_upper_bound(&sch, steps)
        );
    }

    // Realized totals of a stochastic schedule scatter around the budget.
    let sch = TrustSchedule::stochastic_linear(2.0, 6.0)?;
    let totals: Vec<usize> = (0..20)
        .map(|_| (1..=steps).map(|k| iteration_limit(&sch, k, steps, &mut rng).unwrap()).sum::<usize>() + steps)
        .collect();
    println!("stochastic 2->6 realized NFE over 20 draws: {totals:?}");
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
