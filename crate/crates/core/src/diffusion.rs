//! DDPM/DDIM arithmetic: noise schedules, the forward process, clean-data
//! prediction and the generalized DDIM reverse step.
//!
//! Timesteps are 1-based (`1..=T`). `alpha_cum(0)` is defined as 1 so that the
//! last reverse step, which lands on clean data, needs no special casing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Family used to generate per-step betas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BetaSchedule {
    #[default]
    Linear,
    Cosine,
}

/// Parameters sufficient to rebuild a [`NoiseSchedule`]; stored in checkpoints
/// and experiment configs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    #[serde(default)]
    pub kind: BetaSchedule,
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            kind: BetaSchedule::Linear,
            timesteps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

impl ScheduleParams {
    pub fn build(&self) -> Result<NoiseSchedule> {
        match self.kind {
            BetaSchedule::Linear => {
                NoiseSchedule::linear(self.timesteps, self.beta_start, self.beta_end)
            }
            BetaSchedule::Cosine => NoiseSchedule::cosine(self.timesteps, self.beta_end),
        }
    }
}

/// Per-timestep betas and their running product `alpha_cum[t] = prod_{s<=t} (1 - beta[s])`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_cum: Vec<f64>,
}

impl NoiseSchedule {
    /// Builds a schedule from explicit betas (`betas[0]` is beta at t = 1).
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::InvalidArgument(
                "noise schedule needs at least one timestep".into(),
            ));
        }
        if let Some((i, b)) = betas
            .iter()
            .enumerate()
            .find(|(_, b)| !(**b > 0.0 && **b < 1.0))
        {
            return Err(Error::InvalidArgument(format!(
                "beta at t={} is {b}, must lie in (0, 1)",
                i + 1
            )));
        }
        let alpha_cum = betas
            .iter()
            .scan(1.0, |acc, b| {
                *acc *= 1.0 - b;
                Some(*acc)
            })
            .collect();
        Ok(Self { betas, alpha_cum })
    }

    /// Linear interpolation of beta from `beta_start` (t = 1) to `beta_end` (t = T).
    pub fn linear(timesteps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if timesteps == 0 {
            return Err(Error::InvalidArgument("T must be at least 1".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
            )));
        }
        let betas = (0..timesteps)
            .map(|i| {
                if timesteps == 1 {
                    beta_start
                } else {
                    let frac = i as f64 / (timesteps - 1) as f64;
                    beta_start + (beta_end - beta_start) * frac
                }
            })
            .collect();
        Self::from_betas(betas)
    }

    /// Cosine schedule of Nichol & Dhariwal with offset 0.008; betas are
    /// clipped to `max_beta`.
    pub fn cosine(timesteps: usize, max_beta: f64) -> Result<Self> {
        if timesteps == 0 {
            return Err(Error::InvalidArgument("T must be at least 1".into()));
        }
        if !(max_beta > 0.0 && max_beta < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "max_beta must lie in (0, 1), got {max_beta}"
            )));
        }
        let f = |t: f64| {
            let s = 0.008;
            ((t / timesteps as f64 + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2)
                .cos()
                .powi(2)
        };
        let betas = (0..timesteps)
            .map(|i| {
                let b = 1.0 - f((i + 1) as f64) / f(i as f64);
                b.clamp(1e-8, max_beta)
            })
            .collect();
        Self::from_betas(betas)
    }

    /// Number of training timesteps `T`.
    pub fn timesteps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        self.check_t(t)?;
        Ok(self.betas[t - 1])
    }

    /// Cumulative product at `t`, with `alpha_cum(0) == 1`.
    pub fn alpha_cum(&self, t: usize) -> Result<f64> {
        if t == 0 {
            return Ok(1.0);
        }
        self.check_t(t)?;
        Ok(self.alpha_cum[t - 1])
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_cums(&self) -> &[f64] {
        &self.alpha_cum
    }

    pub(crate) fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.timesteps() {
            Err(Error::TimestepOutOfRange {
                t,
                max: self.timesteps(),
            })
        } else {
            Ok(())
        }
    }
}

/// The DDIM inference sub-sequence `tau_K > ... > tau_1` plus the noise level `eta`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepGrid {
    indices: Vec<usize>,
    eta: f64,
}

impl StepGrid {
    /// `K` evenly spaced timesteps ending at `T`: `tau_k = ceil(k T / K)`.
    pub fn uniform(timesteps: usize, steps: usize, eta: f64) -> Result<Self> {
        if steps == 0 || steps > timesteps {
            return Err(Error::InvalidArgument(format!(
                "need 1 <= K <= T, got K={steps}, T={timesteps}"
            )));
        }
        let indices = (1..=steps)
            .rev()
            .map(|k| (k * timesteps).div_ceil(steps))
            .collect();
        Self::from_indices(indices, timesteps, eta)
    }

    /// Explicit grid; `indices` must be strictly decreasing within `1..=T`.
    pub fn from_indices(indices: Vec<usize>, timesteps: usize, eta: f64) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidArgument("step grid is empty".into()));
        }
        if !(eta >= 0.0 && eta.is_finite()) {
            return Err(Error::InvalidArgument(format!("eta must be >= 0, got {eta}")));
        }
        if indices.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::InvalidArgument(
                "step grid must be strictly decreasing".into(),
            ));
        }
        if indices[0] > timesteps || *indices.last().unwrap() == 0 {
            return Err(Error::InvalidArgument(format!(
                "step grid must lie in 1..={timesteps}"
            )));
        }
        Ok(Self { indices, eta })
    }

    /// Number of inference steps `K`.
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Timesteps in execution order (noisiest first).
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// `(t, t_prev)` pairs in execution order; the final pair lands on 0.
    pub fn steps(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.indices
            .iter()
            .enumerate()
            .map(|(i, &t)| (t, self.indices.get(i + 1).copied().unwrap_or(0)))
    }
}

/// A latent `x` at timestep `t` (0 is clean data).
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub x: Vec<f64>,
    pub t: usize,
}

fn check_same_len(context: &'static str, a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::dims(context, a.len(), b.len()));
    }
    Ok(())
}

/// `sqrt(alpha_cum[t]) x0 + sqrt(1 - alpha_cum[t]) eps`.
pub fn forward_diffuse(x0: &[f64], t: usize, eps: &[f64], s: &NoiseSchedule) -> Result<Vec<f64>> {
    check_same_len("forward_diffuse", x0, eps)?;
    s.check_t(t)?;
    let a = s.alpha_cum(t)?;
    let (ca, cn) = (a.sqrt(), (1.0 - a).sqrt());
    Ok(x0.iter().zip(eps).map(|(x, e)| ca * x + cn * e).collect())
}

/// One-shot clean-data estimate `(x_t - sqrt(1 - a) eps) / sqrt(a)`.
pub fn predict_x0(x_t: &[f64], eps_pred: &[f64], t: usize, s: &NoiseSchedule) -> Result<Vec<f64>> {
    check_same_len("predict_x0", x_t, eps_pred)?;
    s.check_t(t)?;
    let a = s.alpha_cum(t)?;
    let (ca, cn) = (a.sqrt(), (1.0 - a).sqrt());
    Ok(x_t.iter().zip(eps_pred).map(|(x, e)| (x - cn * e) / ca).collect())
}

/// DDIM noise scale from the two cumulative alphas of a step.
pub fn sigma_from_alphas(alpha_prev: f64, alpha_cur: f64, eta: f64) -> f64 {
    if alpha_prev == alpha_cur {
        return 0.0;
    }
    let ratio = ((1.0 - alpha_prev) / (1.0 - alpha_cur)).max(0.0);
    let jump = (1.0 - alpha_cur / alpha_prev).max(0.0);
    eta * ratio.sqrt() * jump.sqrt()
}

/// `sigma_t` for the step `t -> t_prev`; `eta = 1` gives the DDPM value.
pub fn sigma_ddpm(t: usize, t_prev: usize, s: &NoiseSchedule, eta: f64) -> Result<f64> {
    if t_prev >= t {
        return Err(Error::InvalidArgument(format!(
            "step must go backwards in time, got {t} -> {t_prev}"
        )));
    }
    if !(eta >= 0.0) {
        return Err(Error::InvalidArgument(format!("eta must be >= 0, got {eta}")));
    }
    Ok(sigma_from_alphas(s.alpha_cum(t_prev)?, s.alpha_cum(t)?, eta))
}

/// Mean of the DDIM reverse step:
/// `sqrt(a_prev) x0_hat + sqrt(1 - a_prev - sigma^2) eps_pred`.
pub fn ddim_mean(
    x_t: &[f64],
    eps_pred: &[f64],
    t: usize,
    t_prev: usize,
    sigma: f64,
    s: &NoiseSchedule,
) -> Result<Vec<f64>> {
    let x0 = predict_x0(x_t, eps_pred, t, s)?;
    let a_prev = s.alpha_cum(t_prev)?;
    let mut rem = 1.0 - a_prev - sigma * sigma;
    if rem < 0.0 {
        // rounding when sigma sits exactly on the bound
        if rem > -1e-12 {
            rem = 0.0;
        } else {
            return Err(Error::InvalidArgument(format!(
                "sigma^2 = {} exceeds 1 - alpha_prev = {}",
                sigma * sigma,
                1.0 - a_prev
            )));
        }
    }
    let (cx, ce) = (a_prev.sqrt(), rem.sqrt());
    Ok(x0.iter().zip(eps_pred).map(|(x, e)| cx * x + ce * e).collect())
}
