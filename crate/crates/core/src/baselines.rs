//! Reference guided samplers, simplified: DPS, DSG and LGD-MC.
//!
//! All three share the trust sampler's reverse loop. Each DDIM step spends one
//! base pass on the mean `mu` and one guidance pass at `mu`, then moves `mu`
//! once before noise is added, so every method uses exactly `2K` passes.
//!
//! * DPS: `mu -= zeta * grad` with `zeta = scale / (sqrt(loss) + 1e-8)`.
//! * DSG: a normalized step of length `scale * sqrt(d) * sigma_t`, the radius
//!   of the Gaussian shell at that noise level (or just `scale` with
//!   [`DsgRadius::Unit`]).
//! * LGD-MC: the DPS step on a Monte Carlo surrogate
//!   `-log mean_i exp(-L(x0_hat + r_t xi_i))`, `r_t = c sqrt((1 - a_t) / a_t)`.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::constraints::{guidance_gradient, Constraint};
use crate::denoiser::DenoiserModel;
use crate::diffusion::{NoiseSchedule, StepGrid};
use crate::error::{Error, Result};
use crate::sampler::trust::{l2_norm, normalized_step, run_guided, InnerOutcome};
use crate::sampler::{ChainRng, SampleTrace};

const DPS_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DsgRadius {
    /// `sqrt(d) * sigma_t`.
    #[default]
    Spherical,
    /// Constant 1, which turns the step length into `scale` alone.
    Unit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum BaselineMethod {
    Dps,
    Dsg {
        #[serde(default)]
        radius: DsgRadius,
    },
    LgdMc {
        particles: usize,
        radius_scale: f64,
    },
}

impl BaselineMethod {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Dps => "dps",
            Self::Dsg { .. } => "dsg",
            Self::LgdMc { .. } => "lgd_mc",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineConfig {
    pub method: BaselineMethod,
    pub guidance_scale: f64,
    pub grid: StepGrid,
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.guidance_scale >= 0.0 && self.guidance_scale.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "guidance_scale must be finite and >= 0, got {}",
                self.guidance_scale
            )));
        }
        if let BaselineMethod::LgdMc {
            particles,
            radius_scale,
        } = self.method
        {
            if particles == 0 {
                return Err(Error::InvalidArgument("lgd_mc needs at least one particle".into()));
            }
            if !(radius_scale >= 0.0 && radius_scale.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "lgd_mc radius scale must be >= 0, got {radius_scale}"
                )));
            }
        }
        Ok(())
    }

    /// Network passes per run: `2K`.
    pub fn nfe(&self) -> u64 {
        2 * self.grid.len() as u64
    }

    pub fn sample(
        &self,
        model: &DenoiserModel,
        con: &dyn Constraint,
        s: &NoiseSchedule,
        rng: &mut ChainRng,
    ) -> Result<(Vec<f64>, SampleTrace)> {
        self.validate()?;
        let scale = self.guidance_scale;
        match self.method {
            BaselineMethod::Dps => dps_sample(model, con, s, &self.grid, scale, rng),
            BaselineMethod::Dsg { radius } => dsg_sample(model, con, s, &self.grid, scale, radius, rng),
            BaselineMethod::LgdMc {
                particles,
                radius_scale,
            } => lgd_mc_sample(model, con, s, &self.grid, scale, particles, radius_scale, rng),
        }
    }
}

fn check_dims(model: &DenoiserModel, con: &dyn Constraint) -> Result<()> {
    if con.dim() != model.data_dim() {
        return Err(Error::dims("constraint vs model", model.data_dim(), con.dim()));
    }
    Ok(())
}

fn single_step(loss: f64, eps_norm: f64) -> InnerOutcome {
    InnerOutcome {
        j_limit: 1,
        j_used: 1,
        boundary_triggered: false,
        loss_before: Some(loss),
        loss_after: Some(loss),
        eps_norms: vec![eps_norm],
        passes: 1,
    }
}

fn dps_step(x: &mut [f64], grad: &[f64], loss: f64, scale: f64) {
    let zeta = scale / (loss.max(0.0).sqrt() + DPS_EPS);
    for (xi, gi) in x.iter_mut().zip(grad) {
        *xi -= zeta * gi;
    }
}

pub fn dps_sample(
    model: &DenoiserModel,
    con: &dyn Constraint,
    s: &NoiseSchedule,
    grid: &StepGrid,
    guidance_scale: f64,
    rng: &mut ChainRng,
) -> Result<(Vec<f64>, SampleTrace)> {
    check_dims(model, con)?;
    run_guided(model, s, grid, rng, |ctx, x, _| {
        let eval = guidance_gradient(model, con, x, ctx.t, s)?;
        dps_step(x, &eval.grad, eval.loss, guidance_scale);
        Ok(single_step(eval.loss, l2_norm(&eval.eps_pred)))
    })
}

pub fn dsg_sample(
    model: &DenoiserModel,
    con: &dyn Constraint,
    s: &NoiseSchedule,
    grid: &StepGrid,
    guidance_scale: f64,
    radius: DsgRadius,
    rng: &mut ChainRng,
) -> Result<(Vec<f64>, SampleTrace)> {
    check_dims(model, con)?;
    let sqrt_d = (model.data_dim() as f64).sqrt();
    run_guided(model, s, grid, rng, |ctx, x, _| {
        let eval = guidance_gradient(model, con, x, ctx.t, s)?;
        let step = match radius {
            DsgRadius::Spherical => guidance_scale * sqrt_d * ctx.sigma,
            DsgRadius::Unit => guidance_scale,
        };
        normalized_step(x, &eval.grad, step);
        Ok(single_step(eval.loss, l2_norm(&eval.eps_pred)))
    })
}

/// `-log mean_i exp(-L(x0 + offset_i))` over fixed offsets.
#[derive(Debug)]
pub struct McSurrogate<'a> {
    inner: &'a dyn Constraint,
    offsets: Vec<Vec<f64>>,
}

impl<'a> McSurrogate<'a> {
    pub fn new(inner: &'a dyn Constraint, offsets: Vec<Vec<f64>>) -> Result<Self> {
        if offsets.is_empty() {
            return Err(Error::InvalidArgument("surrogate needs at least one particle".into()));
        }
        if let Some(o) = offsets.iter().find(|o| o.len() != inner.dim()) {
            return Err(Error::dims("surrogate offset", inner.dim(), o.len()));
        }
        Ok(Self { inner, offsets })
    }

    fn particle(&self, x0: &[f64], i: usize) -> Vec<f64> {
        x0.iter().zip(&self.offsets[i]).map(|(a, b)| a + b).collect()
    }

    /// Particle losses and their softmax(-L) weights.
    fn weights(&self, losses: &[f64]) -> (f64, Vec<f64>) {
        let min = losses.iter().copied().fold(f64::INFINITY, f64::min);
        let w: Vec<f64> = losses.iter().map(|l| (-(l - min)).exp()).collect();
        let sum: f64 = w.iter().sum();
        let value = min - (sum / losses.len() as f64).ln();
        (value, w.into_iter().map(|v| v / sum).collect())
    }
}

impl Constraint for McSurrogate<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn loss(&self, x0: &[f64]) -> Result<f64> {
        let losses = (0..self.offsets.len())
            .map(|i| self.inner.loss(&self.particle(x0, i)))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.weights(&losses).0)
    }

    fn grad_x0(&self, x0: &[f64]) -> Result<Vec<f64>> {
        Ok(self.loss_and_grad(x0)?.1)
    }

    fn loss_and_grad(&self, x0: &[f64]) -> Result<(f64, Vec<f64>)> {
        let mut losses = Vec::with_capacity(self.offsets.len());
        let mut grads = Vec::with_capacity(self.offsets.len());
        for i in 0..self.offsets.len() {
            let (l, g) = self.inner.loss_and_grad(&self.particle(x0, i))?;
            losses.push(l);
            grads.push(g);
        }
        let (value, w) = self.weights(&losses);
        let mut grad = vec![0.0; x0.len()];
        for (wi, g) in w.iter().zip(&grads) {
            for (acc, gj) in grad.iter_mut().zip(g) {
                *acc += wi * gj;
            }
        }
        Ok((value, grad))
    }
}

/// Perturbation radius `c sqrt((1 - a_t) / a_t)`.
pub fn lgd_radius(s: &NoiseSchedule, t: usize, radius_scale: f64) -> Result<f64> {
    let a = s.alpha_cum(t)?;
    Ok(radius_scale * ((1.0 - a) / a).sqrt())
}

/// Particle offsets come from the chain's schedule stream, which the other
/// methods leave untouched, so the Gaussian noise sequence matches DPS.
#[allow(clippy::too_many_arguments)]
pub fn lgd_mc_sample(
    model: &DenoiserModel,
    con: &dyn Constraint,
    s: &NoiseSchedule,
    grid: &StepGrid,
    guidance_scale: f64,
    particles: usize,
    radius_scale: f64,
    rng: &mut ChainRng,
) -> Result<(Vec<f64>, SampleTrace)> {
    check_dims(model, con)?;
    if particles == 0 {
        return Err(Error::InvalidArgument("lgd_mc needs at least one particle".into()));
    }
    let d = model.data_dim();
    run_guided(model, s, grid, rng, |ctx, x, rng| {
        let r = lgd_radius(s, ctx.t, radius_scale)?;
        let offsets = (0..particles)
            .map(|_| {
                (0..d)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng.schedule);
                        r * z
                    })
                    .collect()
            })
            .collect();
        let surrogate = McSurrogate::new(con, offsets)?;
        let eval = guidance_gradient(model, &surrogate, x, ctx.t, s)?;
        dps_step(x, &eval.grad, eval.loss, guidance_scale);
        Ok(single_step(eval.loss, l2_norm(&eval.eps_pred)))
    })
}
