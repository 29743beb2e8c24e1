//! Estimating the predicted-noise norm bound from unguided chains.

use serde::{Deserialize, Serialize};

use super::trust::{ddim_sample, ChainRng, NoisePredictor};
use crate::diffusion::{NoiseSchedule, StepGrid};
use crate::error::{Error, Result};

pub const DEFAULT_MARGIN: f64 = 3.0;

/// Statistics of `||eps_theta(x_t, t)||` over every step of every chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub mean: f64,
    pub std: f64,
    pub margin: f64,
    pub count: usize,
    pub eps_max: f64,
}

/// Runs `n_chains` unguided DDIM chains (chain `i` uses `ChainRng::new(seed, i)`)
/// and returns `mean + margin * std` of the observed noise-prediction norms.
pub fn calibrate_epsilon_max<P: NoisePredictor + ?Sized>(
    predictor: &P,
    s: &NoiseSchedule,
    grid: &StepGrid,
    n_chains: usize,
    margin: f64,
    seed: u64,
) -> Result<Calibration> {
    if n_chains == 0 {
        return Err(Error::InvalidArgument("calibration needs at least one chain".into()));
    }
    if !(margin >= 0.0 && margin.is_finite()) {
        return Err(Error::InvalidArgument(format!("margin must be >= 0, got {margin}")));
    }
    let mut norms = Vec::with_capacity(n_chains * grid.len());
    for chain in 0..n_chains {
        let (_, trace) = ddim_sample(predictor, s, grid, &mut ChainRng::new(seed, chain as u64))?;
        norms.extend(trace.steps.iter().map(|st| st.base_eps_norm));
    }
    let n = norms.len() as f64;
    let mean = norms.iter().sum::<f64>() / n;
    let var = if norms.len() > 1 {
        norms.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let std = var.sqrt();
    Ok(Calibration {
        mean,
        std,
        margin,
        count: norms.len(),
        eps_max: mean + margin * std,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::{Architecture, DenoiserModel};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};
    use std::sync::Mutex;

    /// Ignores its input and returns fresh standard-normal draws.
    struct GaussianOracle {
        dim: usize,
        rng: Mutex<ChaCha8Rng>,
    }

    impl NoisePredictor for GaussianOracle {
        fn data_dim(&self) -> usize {
            self.dim
        }
        fn predict_noise(&self, _: &[f64], _: usize) -> Result<Vec<f64>> {
            let mut rng = self.rng.lock().unwrap();
            Ok((0..self.dim).map(|_| StandardNormal.sample(&mut *rng)).collect())
        }
    }

    #[test]
    fn chi_mean_for_gaussian_oracle() {
        let oracle = GaussianOracle {
            dim: 2,
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(2024)),
        };
        let s = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
        let grid = StepGrid::uniform(1000, 100, 1.0).unwrap();
        let cal = calibrate_epsilon_max(&oracle, &s, &grid, 50, DEFAULT_MARGIN, 0).unwrap();
        let expected = (std::f64::consts::PI / 2.0).sqrt();
        assert_eq!(cal.count, 5000);
        assert!((cal.mean - expected).abs() / expected < 0.02, "mean {}", cal.mean);
        assert!((cal.eps_max - (cal.mean + 3.0 * cal.std)).abs() < 1e-12);
    }

    #[test]
    fn zero_model_gives_zero() {
        let model = DenoiserModel::zeros(Architecture::standard(2)).unwrap();
        let s = NoiseSchedule::linear(100, 1e-4, 0.02).unwrap();
        let grid = StepGrid::uniform(100, 10, 1.0).unwrap();
        let cal = calibrate_epsilon_max(&model, &s, &grid, 3, 3.0, 1).unwrap();
        assert_eq!(cal.mean, 0.0);
        assert_eq!(cal.eps_max, 0.0);
    }

    #[test]
    fn seeded_and_validated() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = DenoiserModel::init(Architecture::standard(2), &mut rng).unwrap();
        let s = NoiseSchedule::linear(100, 1e-4, 0.02).unwrap();
        let grid = StepGrid::uniform(100, 10, 1.0).unwrap();
        let a = calibrate_epsilon_max(&model, &s, &grid, 4, 3.0, 8).unwrap();
        let b = calibrate_epsilon_max(&model, &s, &grid, 4, 3.0, 8).unwrap();
        assert_eq!(a, b);
        assert!(calibrate_epsilon_max(&model, &s, &grid, 0, 3.0, 8).is_err());
        assert!(calibrate_epsilon_max(&model, &s, &grid, 2, -1.0, 8).is_err());
    }
}
