// The config-driven pipeline behind the command-line tool, driven from code:
// validate, train, calibrate, sample and benchmark a small experiment.

use trust_sampling::experiment::{
    cmd_benchmark, cmd_calibrate, cmd_sample, cmd_train, cmd_validate, Experiment, ExperimentConfig, Overrides,
};

const CONFIG: &str = r#"
name = "tiny_mixture"

[dataset]
id = "mixture8"
[dataset.generate]
kind = "gaussian_mixture"
components = 8
radius = 2.0
std = 0.2
n = 1000
seed = 1

[model]
hidden = [64, 64, 64]

[training]
epochs = 40

[calibration]
chains = 8
steps = 20
margin = 3.0

[[tasks]]
name = "pin_x0"
constraint = { kind = "mask", indices = [0] }

[[methods]]
name = "ddim"
method = "ddim"
steps = 20

[[methods]]
name = "trust"
method = "trust"
steps = 20
schedule = { kind = "constant", start = 2.0, end = 2.0 }
w = 0.2
boundary = true

[[methods]]
name = "dps"
method = "dps"
steps = 30
guidance_scale = 0.1

[benchmark]
seeds = [0, 1]
chains = 4
nfe_budget = 60
"#;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let config = ExperimentConfig::from_toml(CONFIG)?;
    let overrides = Overrides { out: Some(dir.path().to_path_buf()), ..Default::default() };
    let exp = Experiment::new(config, dir.path().to_path_buf(), &overrides)?;

    let report = cmd_validate(&exp)?;
    for b in &report.budgets {
        println!("{:6} expected NFE {:5.1}  max {:3}  ok {}", b.method, b.expected_nfe, b.max_nfe, b.within_budget);
    }
    let trained = cmd_train(&exp)?;
    println!("trained {} epochs, final loss {:.4}", trained.epochs, trained.final_loss);
    let cal = cmd_calibrate(&exp)?;
    println!("eps_max {:.4}", cal.eps_max);
    let sampled = cmd_sample(&exp, Some("pin_x0"), Some("trust"), Some(3), 7)?;
    println!("sampled {} chains, NFE {:?}, violation {:.4}", sampled.n, sampled.total_nfe, sampled.violation);

    let summary = cmd_benchmark(&exp)?;
    print!("{}", std::fs::read_to_string(&summary.csv)?);
    let mut files: Vec<String> = std::fs::read_dir(dir.path())?
        .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()))
        .collect::<Result<_, _>>()?;
    files.sort();
    println!("outputs: {files:?}");
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
