//! DDIM sampling with a trust-scheduled inner optimization per step.
//!
//! Each reverse step computes the DDIM mean `mu` from one network pass at
//! `x_t`, then runs up to `J_k` normalized gradient steps of length `w` on
//! `L(x0_hat(x*))` starting from `x* = mu`, and finally adds `sigma_t z`.
//! Before every inner step the predicted-noise norm at the current `x*` is
//! compared against `eps_max`; crossing it ends the step's optimization. The
//! norm comes from the same network pass that produced the gradient, so an
//! inner iteration costs exactly one pass and a boundary stop costs one pass
//! that is not followed by a step.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::schedule::{iteration_limit, TrustSchedule};
use crate::constraints::{guidance_gradient, Constraint};
use crate::denoiser::DenoiserModel;
use crate::diffusion::{ddim_mean, sigma_ddpm, NoiseSchedule, StepGrid};
use crate::error::{Error, Result};

/// Anything that predicts noise for a latent; the unguided sampler and the
/// calibration routine only need this much.
pub trait NoisePredictor: Sync {
    fn data_dim(&self) -> usize;
    fn predict_noise(&self, x_t: &[f64], t: usize) -> Result<Vec<f64>>;
}

impl NoisePredictor for DenoiserModel {
    fn data_dim(&self) -> usize {
        DenoiserModel::data_dim(self)
    }

    fn predict_noise(&self, x_t: &[f64], t: usize) -> Result<Vec<f64>> {
        self.forward(x_t, t)
    }
}

/// Random streams owned by one sampling chain: one for Gaussian draws
/// (initial latent and per-step noise), one for stochastic schedule rounding.
#[derive(Debug, Clone)]
pub struct ChainRng {
    pub noise: ChaCha8Rng,
    pub schedule: ChaCha8Rng,
}

impl ChainRng {
    /// Independent streams for chain `chain` of a run seeded with `seed`.
    pub fn new(seed: u64, chain: u64) -> Self {
        let mut noise = ChaCha8Rng::seed_from_u64(seed);
        noise.set_stream(2 * chain);
        let mut schedule = ChaCha8Rng::seed_from_u64(seed);
        schedule.set_stream(2 * chain + 1);
        Self { noise, schedule }
    }
}

pub(crate) fn standard_normal(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Moves `x` by `step` along `-grad / ||grad||`. Returns false (and leaves
/// `x` alone) when the gradient vanishes.
pub(crate) fn normalized_step(x: &mut [f64], grad: &[f64], step: f64) -> bool {
    let norm = l2_norm(grad);
    if !(norm > 0.0) || !norm.is_finite() {
        return false;
    }
    for (xi, gi) in x.iter_mut().zip(grad) {
        *xi -= step * gi / norm;
    }
    true
}

/// Record of one reverse step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    /// Inference step counted from the noisiest, `1..=K`.
    pub k: usize,
    pub t: usize,
    pub t_prev: usize,
    /// `||eps_theta(x_t, t)||` from the base pass.
    pub base_eps_norm: f64,
    pub j_limit: usize,
    pub j_used: usize,
    pub boundary_triggered: bool,
    /// Loss at the first guidance evaluation of the step (at `mu`).
    pub loss_before: Option<f64>,
    /// Loss at the last guidance evaluation of the step.
    pub loss_after: Option<f64>,
    /// Predicted-noise norms from each guidance pass, in order.
    pub eps_norms: Vec<f64>,
    /// Network passes spent in this step, base pass included.
    pub nfe: u64,
}

/// Per-step records of one chain plus its total network-pass count.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleTrace {
    pub steps: Vec<StepTrace>,
    pub total_nfe: u64,
}

/// What the inner routine of a reverse step reports back.
#[derive(Debug, Clone, Default)]
pub(crate) struct InnerOutcome {
    pub j_limit: usize,
    pub j_used: usize,
    pub boundary_triggered: bool,
    pub loss_before: Option<f64>,
    pub loss_after: Option<f64>,
    pub eps_norms: Vec<f64>,
    pub passes: u64,
}

/// Position of a reverse step within a run.
#[derive(Debug, Clone, Copy)]
pub(crate) struct StepContext {
    pub k: usize,
    pub steps: usize,
    pub t: usize,
    pub sigma: f64,
}

/// The reverse loop shared by every sampler: `x_T ~ N(0, I)`, then per step a
/// base pass, the DDIM mean, an `inner` update of that mean, and noise.
pub(crate) fn run_guided<P, F>(
    predictor: &P,
    s: &NoiseSchedule,
    grid: &StepGrid,
    rng: &mut ChainRng,
    mut inner: F,
) -> Result<(Vec<f64>, SampleTrace)>
where
    P: NoisePredictor + ?Sized,
    F: FnMut(&StepContext, &mut Vec<f64>, &mut ChainRng) -> Result<InnerOutcome>,
{
    if grid.indices()[0] > s.timesteps() {
        return Err(Error::InvalidArgument(format!(
            "step grid starts at {} beyond T = {}",
            grid.indices()[0],
            s.timesteps()
        )));
    }
    let d = predictor.data_dim();
    let steps = grid.len();
    let mut x = standard_normal(&mut rng.noise, d);
    let mut trace = SampleTrace {
        steps: Vec::with_capacity(steps),
        total_nfe: 0,
    };
    for (i, (t, t_prev)) in grid.steps().enumerate() {
        let eps = predictor.predict_noise(&x, t)?;
        let sigma = sigma_ddpm(t, t_prev, s, grid.eta())?;
        let mut mu = ddim_mean(&x, &eps, t, t_prev, sigma, s)?;
        let ctx = StepContext {
            k: i + 1,
            steps,
            t,
            sigma,
        };
        let out = inner(&ctx, &mut mu, rng)?;
        let z = standard_normal(&mut rng.noise, d);
        for (m, zi) in mu.iter_mut().zip(&z) {
            *m += sigma * zi;
        }
        if mu.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "latent after inference step {} (t = {t})",
                i + 1
            )));
        }
        x = mu;
        let nfe = 1 + out.passes;
        trace.total_nfe += nfe;
        trace.steps.push(StepTrace {
            k: i + 1,
            t,
            t_prev,
            base_eps_norm: l2_norm(&eps),
            j_limit: out.j_limit,
            j_used: out.j_used,
            boundary_triggered: out.boundary_triggered,
            loss_before: out.loss_before,
            loss_after: out.loss_after,
            eps_norms: out.eps_norms,
            nfe,
        });
    }
    Ok((x, trace))
}

/// Plain DDIM with the grid's `eta`.
pub fn ddim_sample<P: NoisePredictor + ?Sized>(
    predictor: &P,
    s: &NoiseSchedule,
    grid: &StepGrid,
    rng: &mut ChainRng,
) -> Result<(Vec<f64>, SampleTrace)> {
    run_guided(predictor, s, grid, rng, |_, _, _| Ok(InnerOutcome::default()))
}

/// Settings of a trust sampler run.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub grid: StepGrid,
    pub schedule: TrustSchedule,
    /// Length of every normalized inner gradient step.
    pub w: f64,
    /// Predicted-noise norm bound; `None` disables early termination.
    pub eps_max: Option<f64>,
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.w > 0.0 && self.w.is_finite()) {
            return Err(Error::InvalidArgument(format!("w must be > 0, got {}", self.w)));
        }
        if let Some(e) = self.eps_max {
            if !(e > 0.0) {
                return Err(Error::InvalidArgument(format!("eps_max must be > 0, got {e}")));
            }
        }
        self.schedule.validate_for(self.grid.len())
    }

    /// Expected network passes with boundary checks disabled.
    pub fn nfe_budget(&self) -> f64 {
        super::schedule::nfe_budget_for(&self.schedule, self.grid.len())
    }
}

/// The inner optimization of one reverse step.
pub(crate) fn trust_inner(
    model: &DenoiserModel,
    con: &dyn Constraint,
    s: &NoiseSchedule,
    cfg: &SamplerConfig,
    ctx: &StepContext,
    x: &mut [f64],
    rng: &mut ChainRng,
) -> Result<InnerOutcome> {
    let j_limit = iteration_limit(&cfg.schedule, ctx.k, ctx.steps, &mut rng.schedule)?;
    let mut out = InnerOutcome {
        j_limit,
        ..Default::default()
    };
    while out.j_used < j_limit {
        let eval = guidance_gradient(model, con, x, ctx.t, s)?;
        out.passes += 1;
        let norm = l2_norm(&eval.eps_pred);
        out.eps_norms.push(norm);
        out.loss_before.get_or_insert(eval.loss);
        out.loss_after = Some(eval.loss);
        if cfg.eps_max.is_some_and(|m| norm >= m) {
            out.boundary_triggered = true;
            break;
        }
        // a vanishing gradient still uses up the iteration
        normalized_step(x, &eval.grad, cfg.w);
        out.j_used += 1;
    }
    Ok(out)
}

/// Draws one guided sample.
pub fn trust_sample(
    model: &DenoiserModel,
    con: &dyn Constraint,
    s: &NoiseSchedule,
    cfg: &SamplerConfig,
    rng: &mut ChainRng,
) -> Result<(Vec<f64>, SampleTrace)> {
    cfg.validate()?;
    if con.dim() != model.data_dim() {
        return Err(Error::dims("constraint vs model", model.data_dim(), con.dim()));
    }
    run_guided(model, s, &cfg.grid, rng, |ctx, x, rng| {
        trust_inner(model, con, s, cfg, ctx, x, rng)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::{EqualityObservation, InequalityConstraint, InequalitySet, ScalarFunction};
    use crate::denoiser::Architecture;
    use crate::sampler::schedule::nfe_budget_for;

    fn setup() -> (DenoiserModel, NoiseSchedule) {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = DenoiserModel::init(Architecture::standard(2), &mut rng).unwrap();
        (model, NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap())
    }

    fn cfg(k: usize, schedule: TrustSchedule, eps_max: Option<f64>) -> SamplerConfig {
        SamplerConfig {
            grid: StepGrid::uniform(1000, k, 1.0).unwrap(),
            schedule,
            w: 0.1,
            eps_max,
        }
    }

    #[test]
    fn zero_schedule_equals_unguided() {
        let (model, s) = setup();
        let con = EqualityObservation::mask(vec![0], vec![2.0], 2).unwrap();
        let c = cfg(50, TrustSchedule::constant(0), None);
        let (a, trace) = trust_sample(&model, &con, &s, &c, &mut ChainRng::new(9, 0)).unwrap();
        let (b, _) = ddim_sample(&model, &s, &c.grid, &mut ChainRng::new(9, 0)).unwrap();
        assert_eq!(a, b);
        assert_eq!(trace.total_nfe, 50);
    }

    #[test]
    fn constant_schedule_nfe_is_exact() {
        let (model, s) = setup();
        let con = EqualityObservation::mask(vec![0], vec![2.0], 2).unwrap();
        for c in [0usize, 1, 3] {
            let conf = cfg(40, TrustSchedule::constant(c), None);
            let (_, trace) = trust_sample(&model, &con, &s, &conf, &mut ChainRng::new(1, 0)).unwrap();
            assert_eq!(trace.total_nfe, 40 * (1 + c as u64));
            assert_eq!(trace.total_nfe as f64, nfe_budget_for(&conf.schedule, 40));
            assert!(trace.steps.iter().all(|st| st.j_used == st.j_limit));
        }
    }

    #[test]
    fn inner_steps_have_length_w() {
        let (model, s) = setup();
        let con = EqualityObservation::mask(vec![0, 1], vec![2.0, -1.0], 2).unwrap();
        let conf = cfg(20, TrustSchedule::constant(3), None);
        let ctx = StepContext {
            k: 5,
            steps: 20,
            t: 800,
            sigma: 0.1,
        };
        let mut rng = ChainRng::new(0, 0);
        let mut x = vec![0.3, 0.2];
        let start = x.clone();
        let out = trust_inner(&model, &con, &s, &conf, &ctx, &mut x, &mut rng).unwrap();
        assert_eq!(out.j_used, 3);
        assert_eq!(out.passes, 3);
        let moved = l2_norm(&x.iter().zip(&start).map(|(a, b)| a - b).collect::<Vec<_>>());
        assert!(moved <= 0.3 + 1e-12);

        // a single step moves by exactly w
        let conf1 = cfg(20, TrustSchedule::constant(1), None);
        let mut y = start.clone();
        trust_inner(&model, &con, &s, &conf1, &ctx, &mut y, &mut rng).unwrap();
        let moved = l2_norm(&y.iter().zip(&start).map(|(a, b)| a - b).collect::<Vec<_>>());
        assert!((moved - 0.1).abs() < 1e-12);
    }

    #[test]
    fn boundary_stops_early_and_reports_crossing_norm() {
        let (model, s) = setup();
        let con = EqualityObservation::mask(vec![0], vec![2.0], 2).unwrap();
        // tiny bound: every first check fails
        let conf = cfg(30, TrustSchedule::constant(4), Some(1e-9));
        let (_, trace) = trust_sample(&model, &con, &s, &conf, &mut ChainRng::new(3, 0)).unwrap();
        for st in &trace.steps {
            assert!(st.boundary_triggered);
            assert_eq!(st.j_used, 0);
            assert_eq!(st.nfe, 2);
            assert!(*st.eps_norms.last().unwrap() >= 1e-9);
        }
        assert!(trace.total_nfe as f64 <= nfe_budget_for(&conf.schedule, 30));
        // huge bound: never triggers
        let conf = cfg(30, TrustSchedule::constant(4), Some(1e9));
        let (_, trace) = trust_sample(&model, &con, &s, &conf, &mut ChainRng::new(3, 0)).unwrap();
        assert_eq!(trace.total_nfe, 150);
    }

    #[test]
    fn zero_gradient_consumes_iterations() {
        let (model, s) = setup();
        // always satisfied: zero loss, zero gradient
        let con = InequalitySet::new(
            vec![InequalityConstraint {
                function: ScalarFunction::Coordinate { index: 0 },
                threshold: -1e6,
            }],
            2,
        )
        .unwrap();
        let conf = cfg(10, TrustSchedule::constant(2), None);
        let (x, trace) = trust_sample(&model, &con, &s, &conf, &mut ChainRng::new(4, 0)).unwrap();
        let (y, _) = ddim_sample(&model, &s, &conf.grid, &mut ChainRng::new(4, 0)).unwrap();
        assert_eq!(x, y);
        assert_eq!(trace.total_nfe, 30);
    }

    #[test]
    fn reproducible_per_seed() {
        let (model, s) = setup();
        let con = EqualityObservation::mask(vec![1], vec![-1.0], 2).unwrap();
        let conf = cfg(25, TrustSchedule::stochastic_linear(0.5, 3.5).unwrap(), Some(3.0));
        let run = |seed| trust_sample(&model, &con, &s, &conf, &mut ChainRng::new(seed, 2)).unwrap();
        assert_eq!(run(7), run(7));
        assert_ne!(run(7).0, run(8).0);
    }

    #[test]
    fn rejects_bad_configs() {
        let (model, s) = setup();
        let con = EqualityObservation::mask(vec![0], vec![0.0], 2).unwrap();
        let mut conf = cfg(10, TrustSchedule::constant(1), None);
        conf.w = 0.0;
        assert!(trust_sample(&model, &con, &s, &conf, &mut ChainRng::new(0, 0)).is_err());
        let conf = cfg(10, TrustSchedule::constant(1), Some(-1.0));
        assert!(trust_sample(&model, &con, &s, &conf, &mut ChainRng::new(0, 0)).is_err());
        let wrong = EqualityObservation::mask(vec![0], vec![0.0], 3).unwrap();
        let conf = cfg(10, TrustSchedule::constant(1), None);
        assert!(trust_sample(&model, &wrong, &s, &conf, &mut ChainRng::new(0, 0)).is_err());
    }
}
