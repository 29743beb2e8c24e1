//! Noise-prediction training: minimizes `E ||eps - eps_theta(x_t, t)||^2` with
//! `t ~ U{1..T}`, `eps ~ N(0, I)` and `x_t` drawn from the forward process.

use ndarray::{Array2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::mlp::{Architecture, DenoiserModel, Dense};
use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
/// The learning rate follows a half cosine from its initial value down to
/// this fraction of it.
pub const LR_FLOOR: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    #[serde(default)]
    pub dataset_id: String,
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "epochs and batch_size must be positive".into(),
            ));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Optimizer settings recorded alongside trained weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerInfo {
    pub name: String,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr_floor: f64,
}

impl Default for OptimizerInfo {
    fn default() -> Self {
        Self {
            name: "adam_cosine".into(),
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            lr_floor: LR_FLOOR,
        }
    }
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct Trained {
    pub model: DenoiserModel,
    /// Mean batch loss per epoch.
    pub loss_history: Vec<f64>,
}

impl Trained {
    pub fn final_loss(&self) -> f64 {
        *self.loss_history.last().expect("at least one epoch")
    }
}

struct Adam {
    m: Vec<Dense>,
    v: Vec<Dense>,
    step: i32,
}

impl Adam {
    fn new(model: &DenoiserModel) -> Self {
        let zeros = || {
            model
                .layers
                .iter()
                .map(|l| Dense {
                    w: Array2::zeros(l.w.raw_dim()),
                    b: ndarray::Array1::zeros(l.b.raw_dim()),
                })
                .collect::<Vec<_>>()
        };
        Self {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    fn update(&mut self, model: &mut DenoiserModel, grads: &[Dense], lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.step);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.step);
        let rule = |p: &mut f64, m: &mut f64, v: &mut f64, g: &f64| {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            let mh = *m / bc1;
            let vh = *v / bc2;
            *p -= lr * mh / (vh.sqrt() + ADAM_EPS);
        };
        for (((layer, m), v), g) in model
            .layers
            .iter_mut()
            .zip(&mut self.m)
            .zip(&mut self.v)
            .zip(grads)
        {
            Zip::from(&mut layer.w)
                .and(&mut m.w)
                .and(&mut v.w)
                .and(&g.w)
                .for_each(rule);
            Zip::from(&mut layer.b)
                .and(&mut m.b)
                .and(&mut v.b)
                .and(&g.b)
                .for_each(rule);
        }
    }
}

fn cosine_lr(base: f64, step: usize, total: usize) -> f64 {
    if total <= 1 {
        return base;
    }
    let progress = step as f64 / (total - 1) as f64;
    let cos = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
    base * (LR_FLOOR + (1.0 - LR_FLOOR) * cos)
}

/// Trains a freshly initialized network on the rows of `dataset`.
pub fn train(
    dataset: &Array2<f64>,
    schedule: &NoiseSchedule,
    arch: Architecture,
    cfg: &TrainConfig,
) -> Result<Trained> {
    cfg.validate()?;
    if dataset.nrows() == 0 {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    if dataset.ncols() != arch.data_dim {
        return Err(Error::dims("training data", arch.data_dim, dataset.ncols()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = DenoiserModel::init(arch, &mut rng)?;
    train_from(model, dataset, schedule, cfg, &mut rng)
}

/// Continues training an existing model with the given rng stream.
pub fn train_from(
    mut model: DenoiserModel,
    dataset: &Array2<f64>,
    schedule: &NoiseSchedule,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Trained> {
    cfg.validate()?;
    let n = dataset.nrows();
    let d = model.data_dim();
    if dataset.ncols() != d {
        return Err(Error::dims("training data", d, dataset.ncols()));
    }
    let big_t = schedule.timesteps();
    let batches_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * batches_per_epoch;
    let mut adam = Adam::new(&model);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0;

    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let b = chunk.len();
            let ts: Vec<usize> = (0..b).map(|_| rng.random_range(1..=big_t)).collect();
            let noise = Array2::from_shape_simple_fn((b, d), || rng.sample::<f64, _>(StandardNormal));
            let mut xt = dataset.select(Axis(0), chunk);
            for ((mut row, nrow), &t) in xt.axis_iter_mut(Axis(0)).zip(noise.axis_iter(Axis(0))).zip(&ts) {
                let a = schedule.alpha_cum(t)?;
                let (ca, cn) = (a.sqrt(), (1.0 - a).sqrt());
                row.zip_mut_with(&nrow, |x, e| *x = ca * *x + cn * e);
            }
            let tape = model.forward_batch(model.batch_input(&xt, &ts));
            let diff = &tape.output - &noise;
            let loss = diff.iter().map(|v| v * v).sum::<f64>() / b as f64;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss at epoch {epoch}, batch {bi}"
                )));
            }
            epoch_loss += loss;
            let grads = model.backward_batch(&tape, diff * (2.0 / b as f64));
            adam.update(&mut model, &grads, cosine_lr(cfg.learning_rate, step, total_steps));
            step += 1;
        }
        history.push(epoch_loss / batches_per_epoch as f64);
    }
    Ok(Trained {
        model,
        loss_history: history,
    })
}
