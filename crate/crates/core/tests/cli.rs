use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use trust_sampling::experiment::BENCHMARK_HEADER;

const BASE: &str = r#"
name = "cli"

[dataset]
id = "mixture8"
[dataset.generate]
kind = "gaussian_mixture"
components = 8
radius = 2.0
std = 0.2
n = 600
seed = 1

[model]
hidden = [32, 32]

[training]
epochs = 4

[calibration]
chains = 4
steps = 10
margin = 0.0

[[tasks]]
name = "pin_x0"
constraint = { kind = "mask", indices = [0] }

[[tasks]]
name = "ring"
constraint = { kind = "obstacle", dims_per_frame = 2, center = [0.0, 0.0], radius = 1.0 }

[[methods]]
name = "ddim"
method = "ddim"
steps = 12

[[methods]]
name = "idle"
method = "trust"
steps = 12
schedule = { kind = "constant", start = 0.0, end = 0.0 }
w = 0.1

[[methods]]
name = "trust"
method = "trust"
steps = 10
schedule = { kind = "constant", start = 4.0, end = 4.0 }
w = 0.1

[[methods]]
name = "trust_boundary"
method = "trust"
steps = 10
schedule = { kind = "constant", start = 4.0, end = 4.0 }
w = 0.1
boundary = true

[[methods]]
name = "dps"
method = "dps"
steps = 25
guidance_scale = 0.05

[[methods]]
name = "dsg"
method = "dsg"
steps = 25
guidance_scale = 0.5

[[methods]]
name = "lgd_mc"
method = "lgd_mc"
steps = 25
guidance_scale = 0.05
particles = 5
radius_scale = 0.3
"#;

const BENCH: &str = r#"
[benchmark]
seeds = [0, 1, 2]
chains = 3
nfe_budget = 50
"#;

struct Env {
    dir: tempfile::TempDir,
}

impl Env {
    fn new(config: &str) -> Env {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("experiment.toml"), config).unwrap();
        Env { dir }
    }

    fn out(&self) -> PathBuf {
        self.dir.path().join("out")
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_trust-sampling"))
            .args(args)
            .arg("--config")
            .arg(self.dir.path().join("experiment.toml"))
            .arg("--out")
            .arg(self.out())
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let o = self.run(args);
        assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8(o.stdout).unwrap()
    }

    fn read(&self, file: &str) -> String {
        fs::read_to_string(self.out().join(file)).unwrap()
    }
}

fn trained(config: &str) -> Env {
    let env = Env::new(config);
    env.ok(&["train"]);
    env
}

#[test]
fn train_is_byte_reproducible() {
    let a = trained(&format!("{BASE}{BENCH}"));
    let b = trained(&format!("{BASE}{BENCH}"));
    for f in ["model.ckpt", "train_loss.csv", "dataset.csv"] {
        assert_eq!(fs::read(a.out().join(f)).unwrap(), fs::read(b.out().join(f)).unwrap(), "{f}");
    }
    let losses = a.read("train_loss.csv");
    assert_eq!(losses.lines().count(), 1 + 4);
}

#[test]
fn point_mass_trains_to_low_loss() {
    let cfg = BASE
        .replace("components = 8", "components = 1")
        .replace("radius = 2.0", "radius = 0.0")
        .replace("std = 0.2", "std = 0.0")
        .replace("hidden = [32, 32]", "hidden = [128, 128, 128, 128]")
        .replace("epochs = 4", "epochs = 200");
    let env = trained(&cfg);
    let last = env.read("train_loss.csv").lines().last().unwrap().to_string();
    let loss: f64 = last.rsplit(',').next().unwrap().parse().unwrap();
    assert!(loss < 0.05, "final loss {loss}");
}

#[test]
fn missing_dataset_file_exits_2() {
    let cfg = BASE.replace(
        "[dataset]\nid = \"mixture8\"\n[dataset.generate]",
        "[dataset]\nid = \"mixture8\"\npath = \"no_such_file.csv\"\n[unused]",
    );
    let env = Env::new(&cfg);
    let o = env.run(&["train"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.starts_with("error:") && err.contains("no_such_file.csv"), "{err}");
}

#[test]
fn unreadable_config_exits_2() {
    let env = Env::new("this is not = = toml");
    assert_eq!(env.run(&["validate"]).status.code(), Some(2));
    let o = Command::new(env!("CARGO_BIN_EXE_trust-sampling"))
        .args(["validate", "--config", "/nonexistent/experiment.toml"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn idle_trust_matches_unguided_file() {
    let env = trained(BASE);
    env.ok(&["sample", "--method", "ddim", "--n", "4", "--seed", "9"]);
    env.ok(&["sample", "--method", "idle", "--n", "4", "--seed", "9"]);
    let plain = env.read("samples_pin_x0_ddim_s9.csv");
    let idle = env.read("samples_pin_x0_idle_s9.csv");
    assert_eq!(plain, idle);
    assert_eq!(plain.lines().next().unwrap(), "c0,c1");
}

#[test]
fn traces_have_one_row_per_chain_step() {
    let env = trained(BASE);
    let out = env.ok(&["sample", "--task", "ring", "--method", "trust", "--n", "5", "--seed", "2"]);
    assert!(out.contains("mean NFE 50"), "{out}");
    let traces = env.read("traces_ring_trust_s2.csv");
    let mut lines = traces.lines();
    assert!(lines.next().unwrap().starts_with("chain,k,t,t_prev,j_limit,j_used"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 5 * 10);
    // Boundary off: every step spends 1 + J passes.
    for r in rows {
        let cells: Vec<&str> = r.split(',').collect();
        assert_eq!(cells[4], "4");
        assert_eq!(cells[10], "5");
    }
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn benchmark_respects_budget_and_boundary_saves_passes() {
    let env = trained(&format!("{BASE}{BENCH}"));
    env.ok(&["validate"]);
    env.ok(&["calibrate"]);
    env.ok(&["benchmark"]);
    let csv = env.read("benchmark.csv");
    assert_eq!(csv.lines().next().unwrap(), BENCHMARK_HEADER);
    assert_eq!(BENCHMARK_HEADER, "method,task,seed,n,mean_nfe,violation,sw2,diversity,runtime_s");
    let rows = csv_rows(&csv);
    assert_eq!(rows.len(), 7 * 2 * 3);
    for r in &rows {
        let nfe: f64 = r[4].parse().unwrap();
        assert!(nfe <= 50.0, "{r:?}");
        assert_eq!(r[8], "0.0");
    }
    let nfe_of = |method: &str| -> f64 {
        rows.iter().filter(|r| r[0] == method).map(|r| r[4].parse::<f64>().unwrap()).sum()
    };
    assert!(nfe_of("trust_boundary") < nfe_of("trust"));
    assert!(env.out().join("plot_benchmark.py").exists());
    let json: serde_json::Value = serde_json::from_str(&env.read("benchmark.json")).unwrap();
    assert_eq!(json["rows"].as_array().unwrap().len(), rows.len());
}

#[test]
fn dropping_a_seed_keeps_other_rows() {
    let full = trained(&format!("{BASE}{BENCH}"));
    full.ok(&["benchmark"]);
    let fewer = trained(&format!("{BASE}{}", BENCH.replace("[0, 1, 2]", "[0, 2]")));
    fewer.ok(&["benchmark"]);
    let all = csv_rows(&full.read("benchmark.csv"));
    let kept: Vec<_> = all.into_iter().filter(|r| r[2] != "1").collect();
    assert_eq!(kept, csv_rows(&fewer.read("benchmark.csv")));
}

#[test]
fn budget_override_fails_the_run() {
    let env = trained(&format!("{BASE}{BENCH}"));
    let o = env.run(&["benchmark", "--nfe-budget", "20"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("exceeding its budget"));
    assert!(!env.out().join("benchmark.csv").exists());
    let o = env.run(&["validate", "--nfe-budget", "20"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn overrides_reach_the_methods() {
    let env = trained(&format!("{BASE}{BENCH}"));
    let out = env.ok(&["sample", "--method", "trust_boundary", "--n", "2", "--no-boundary"]);
    assert!(out.contains("mean NFE 50"), "{out}");
    assert!(!env.out().join(trust_sampling::experiment::CALIBRATION_FILE).exists());
    env.ok(&["sample", "--method", "trust", "--n", "2", "--seed", "4", "--schedule-reversed"]);
    assert!(Path::new(&env.out().join("samples_pin_x0_trust_s4.csv")).exists());
}
