//! Time-conditioned multilayer perceptron predicting the noise of a latent.
//!
//! The input to the first layer is `[x_t, embed(t)]` where `embed` is a fixed
//! sinusoidal embedding of the raw timestep index. Hidden layers apply a smooth
//! activation; the output layer is affine.

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smooth elementwise nonlinearity used by hidden layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Silu,
    Tanh,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Silu => "silu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "silu" => Some(Activation::Silu),
            "tanh" => Some(Activation::Tanh),
            _ => None,
        }
    }

    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Silu => z / (1.0 + (-z).exp()),
            Activation::Tanh => z.tanh(),
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Silu => {
                let sig = 1.0 / (1.0 + (-z).exp());
                sig * (1.0 + z * (1.0 - sig))
            }
            Activation::Tanh => {
                let th = z.tanh();
                1.0 - th * th
            }
        }
    }
}

/// Shape of a denoiser network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub data_dim: usize,
    pub hidden: Vec<usize>,
    pub time_embed_dim: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl Architecture {
    /// Four hidden layers of width 128 and a 32-wide time embedding.
    pub fn standard(data_dim: usize) -> Self {
        Self {
            data_dim,
            hidden: vec![128; 4],
            time_embed_dim: 32,
            activation: Activation::Silu,
        }
    }

    /// Widths of every layer boundary, input first.
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(self.data_dim + self.time_embed_dim);
        dims.extend_from_slice(&self.hidden);
        dims.push(self.data_dim);
        dims
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_dims().windows(2).map(|w| w[1] * (w[0] + 1)).sum()
    }

    fn validate(&self) -> Result<()> {
        if self.data_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::InvalidArgument(
                "layer widths must be positive".into(),
            ));
        }
        if !self.time_embed_dim.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "time embedding width must be even, got {}",
                self.time_embed_dim
            )));
        }
        Ok(())
    }
}

/// Sinusoidal embedding `[sin(t f_0), .., sin(t f_{h-1}), cos(t f_0), ..]` with
/// `f_i = 10000^(-i/h)`.
pub fn time_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        let arg = t as f64 * freq;
        out[i] = arg.sin();
        out[half + i] = arg.cos();
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Dense {
    /// `(out, in)`
    pub(crate) w: Array2<f64>,
    pub(crate) b: Array1<f64>,
}

/// Saved activations of one forward pass, used to pull back cotangents.
pub struct Tape<'m> {
    model: &'m DenoiserModel,
    /// Pre-activations of the hidden layers.
    pre: Vec<Array1<f64>>,
    output: Vec<f64>,
}

impl Tape<'_> {
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    pub fn into_output(self) -> Vec<f64> {
        self.output
    }

    /// `cotangent^T d eps / d x`, restricted to the data part of the input.
    pub fn vjp(&self, cotangent: &[f64]) -> Result<Vec<f64>> {
        let d = self.model.arch.data_dim;
        if cotangent.len() != d {
            return Err(Error::dims("vjp cotangent", d, cotangent.len()));
        }
        let act = self.model.arch.activation;
        let mut g = Array1::from(cotangent.to_vec());
        for (li, layer) in self.model.layers.iter().enumerate().rev() {
            let mut back = layer.w.t().dot(&g);
            if li > 0 {
                let z = &self.pre[li - 1];
                back.zip_mut_with(z, |gi, &zi| *gi *= act.derivative(zi));
            }
            g = back;
        }
        Ok(g.slice(s![..d]).to_vec())
    }
}

/// The noise-prediction network `eps_theta(x_t, t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserModel {
    arch: Architecture,
    pub(crate) layers: Vec<Dense>,
}

impl DenoiserModel {
    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` initialization.
    pub fn init<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let layers = arch
            .layer_dims()
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                let weights = Array2::from_shape_simple_fn((w[1], w[0]), || {
                    rng.random_range(-bound..bound)
                });
                let bias = Array1::from_shape_simple_fn(w[1], || rng.random_range(-bound..bound));
                Dense {
                    w: weights,
                    b: bias,
                }
            })
            .collect();
        Ok(Self { arch, layers })
    }

    /// All weights and biases zero; predicts zero noise everywhere.
    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let layers = arch
            .layer_dims()
            .windows(2)
            .map(|w| Dense {
                w: Array2::zeros((w[1], w[0])),
                b: Array1::zeros(w[1]),
            })
            .collect();
        Ok(Self { arch, layers })
    }

    /// Rebuilds a model from parameters flattened per layer as the
    /// row-major `(out, in)` weight matrix followed by the bias.
    pub fn from_flat(arch: Architecture, params: &[f64]) -> Result<Self> {
        arch.validate()?;
        let expected = arch.parameter_count();
        if params.len() != expected {
            return Err(Error::dims("flattened parameters", expected, params.len()));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("denoiser parameters".into()));
        }
        let mut offset = 0;
        let layers = arch
            .layer_dims()
            .windows(2)
            .map(|w| {
                let (n_in, n_out) = (w[0], w[1]);
                let wlen = n_in * n_out;
                let weights = Array2::from_shape_vec(
                    (n_out, n_in),
                    params[offset..offset + wlen].to_vec(),
                )
                .expect("length checked above");
                offset += wlen;
                let bias = Array1::from(params[offset..offset + n_out].to_vec());
                offset += n_out;
                Dense {
                    w: weights,
                    b: bias,
                }
            })
            .collect();
        Ok(Self { arch, layers })
    }

    /// Parameters in the order accepted by [`DenoiserModel::from_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.arch.parameter_count());
        for layer in &self.layers {
            out.extend(layer.w.iter());
            out.extend(layer.b.iter());
        }
        out
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn data_dim(&self) -> usize {
        self.arch.data_dim
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        self.arch.layer_dims()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().chain(l.b.iter()).all(|v| v.is_finite()))
    }

    fn input(&self, x_t: &[f64], t: usize) -> Result<Array1<f64>> {
        let d = self.arch.data_dim;
        if x_t.len() != d {
            return Err(Error::dims("denoiser input", d, x_t.len()));
        }
        let mut v = Vec::with_capacity(d + self.arch.time_embed_dim);
        v.extend_from_slice(x_t);
        v.extend(time_embedding(t, self.arch.time_embed_dim));
        Ok(Array1::from(v))
    }

    /// Predicted noise for `x_t` at timestep `t`.
    pub fn forward(&self, x_t: &[f64], t: usize) -> Result<Vec<f64>> {
        let act = self.arch.activation;
        let mut h = self.input(x_t, t)?;
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let mut z = layer.w.dot(&h);
            z += &layer.b;
            if li < last {
                z.mapv_inplace(|v| act.apply(v));
            }
            h = z;
        }
        Ok(h.to_vec())
    }

    /// Forward pass that keeps what [`Tape::vjp`] needs.
    pub fn forward_tape(&self, x_t: &[f64], t: usize) -> Result<Tape<'_>> {
        let act = self.arch.activation;
        let mut h = self.input(x_t, t)?;
        let last = self.layers.len() - 1;
        let mut pre = Vec::with_capacity(last);
        for (li, layer) in self.layers.iter().enumerate() {
            let mut z = layer.w.dot(&h);
            z += &layer.b;
            if li < last {
                h = z.mapv(|v| act.apply(v));
                pre.push(z);
            } else {
                h = z;
            }
        }
        Ok(Tape {
            model: self,
            pre,
            output: h.to_vec(),
        })
    }

    /// `cotangent^T d eps(x_t, t) / d x_t`.
    pub fn vjp_input(&self, x_t: &[f64], t: usize, cotangent: &[f64]) -> Result<Vec<f64>> {
        self.forward_tape(x_t, t)?.vjp(cotangent)
    }

    /// Batched forward over the rows of `inputs`, which already carry the time
    /// embedding. Returns the output and, if requested, the hidden
    /// pre-activations and layer inputs needed for backpropagation.
    pub(crate) fn forward_batch(&self, inputs: Array2<f64>) -> BatchTape {
        let act = self.arch.activation;
        let last = self.layers.len() - 1;
        let mut layer_inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(last);
        let mut h = inputs;
        for (li, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.w.t());
            z += &layer.b.view().insert_axis(Axis(0));
            layer_inputs.push(h);
            if li < last {
                h = z.mapv(|v| act.apply(v));
                pre.push(z);
            } else {
                h = z;
            }
        }
        BatchTape {
            layer_inputs,
            pre,
            output: h,
        }
    }

    /// Parameter gradients for a batch given `d loss / d output`.
    pub(crate) fn backward_batch(&self, tape: &BatchTape, grad_out: Array2<f64>) -> Vec<Dense> {
        let act = self.arch.activation;
        let mut grads: Vec<Dense> = Vec::with_capacity(self.layers.len());
        let mut g = grad_out;
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let x = &tape.layer_inputs[li];
            let gw = g.t().dot(x);
            let gb = g.sum_axis(Axis(0));
            if li > 0 {
                let mut back = g.dot(&layer.w);
                back.zip_mut_with(&tape.pre[li - 1], |gi, &zi| *gi *= act.derivative(zi));
                g = back;
            }
            grads.push(Dense { w: gw, b: gb });
        }
        grads.reverse();
        grads
    }

    /// Builds the input matrix `[x_t, embed(t)]` for a batch.
    pub(crate) fn batch_input(&self, xs: &Array2<f64>, ts: &[usize]) -> Array2<f64> {
        let d = self.arch.data_dim;
        let e = self.arch.time_embed_dim;
        let mut out = Array2::zeros((xs.nrows(), d + e));
        out.slice_mut(s![.., ..d]).assign(xs);
        for (mut row, &t) in out.axis_iter_mut(Axis(0)).zip(ts) {
            row.slice_mut(s![d..])
                .assign(&ArrayView1::from(&time_embedding(t, e)));
        }
        out
    }
}

pub(crate) struct BatchTape {
    layer_inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    pub(crate) output: Array2<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn small_arch() -> Architecture {
        Architecture {
            data_dim: 3,
            hidden: vec![16, 16],
            time_embed_dim: 8,
            activation: Activation::Silu,
        }
    }

    fn randn(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
        (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                scale * z
            })
            .collect::<Vec<f64>>()
    }

    #[test]
    fn zero_model_outputs_zero() {
        let m = DenoiserModel::zeros(Architecture::standard(2)).unwrap();
        assert_eq!(m.forward(&[1.0, -2.0], 17).unwrap(), vec![0.0, 0.0]);
        assert_eq!(
            m.vjp_input(&[1.0, -2.0], 17, &[1.0, 1.0]).unwrap(),
            vec![0.0, 0.0]
        );
    }

    #[test]
    fn output_shape_and_dimension_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = DenoiserModel::init(Architecture::standard(5), &mut rng).unwrap();
        assert_eq!(m.forward(&[0.1; 5], 3).unwrap().len(), 5);
        assert!(m.forward(&[0.1; 4], 3).is_err());
        assert!(m.vjp_input(&[0.1; 5], 3, &[1.0; 4]).is_err());
        assert_eq!(m.layer_dims(), vec![37, 128, 128, 128, 128, 5]);
    }

    #[test]
    fn zero_cotangent_pulls_back_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = DenoiserModel::init(small_arch(), &mut rng).unwrap();
        assert_eq!(m.vjp_input(&[0.3, 0.1, -0.2], 9, &[0.0; 3]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn single_linear_layer_vjp_is_weight_transpose() {
        let arch = Architecture {
            data_dim: 2,
            hidden: vec![],
            time_embed_dim: 4,
            activation: Activation::Silu,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = DenoiserModel::init(arch, &mut rng).unwrap();
        let w = &m.layers[0].w;
        let cot = [0.7, -1.1];
        let got = m.vjp_input(&[0.5, 0.5], 40, &cot).unwrap();
        for j in 0..2 {
            let expect = w[[0, j]] * cot[0] + w[[1, j]] * cot[1];
            assert!((got[j] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn vjp_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for arch in [small_arch(), Architecture::standard(2)] {
            let m = DenoiserModel::init(arch, &mut rng).unwrap();
            let d = m.data_dim();
            for trial in 0..20 {
                let x = randn(&mut rng, d, 1.5);
                let cot = randn(&mut rng, d, 1.0);
                let t = 1 + rng.random_range(0..1000);
                let vjp = m.vjp_input(&x, t, &cot).unwrap();
                let h = 1e-5;
                for j in 0..d {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[j] += h;
                    xm[j] -= h;
                    let fp: f64 = m.forward(&xp, t).unwrap().iter().zip(&cot).map(|(a, b)| a * b).sum();
                    let fm: f64 = m.forward(&xm, t).unwrap().iter().zip(&cot).map(|(a, b)| a * b).sum();
                    let fd = (fp - fm) / (2.0 * h);
                    let rel = (fd - vjp[j]).abs() / fd.abs().max(vjp[j].abs()).max(1e-8);
                    assert!(rel < 1e-4, "trial {trial} coord {j}: fd={fd} vjp={}", vjp[j]);
                }
            }
        }
    }

    #[test]
    fn bounded_inputs_give_finite_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = DenoiserModel::init(Architecture::standard(2), &mut rng).unwrap();
        for _ in 0..200 {
            let mut x = randn(&mut rng, 2, 1.0);
            let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let r = rng.random_range(0.0..100.0);
            x.iter_mut().for_each(|v| *v *= r / n);
            let t = 1 + rng.random_range(0..1000);
            assert!(m.forward(&x, t).unwrap().iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn flat_round_trip_and_length_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = DenoiserModel::init(small_arch(), &mut rng).unwrap();
        let flat = m.to_flat();
        assert_eq!(flat.len(), small_arch().parameter_count());
        assert_eq!(DenoiserModel::from_flat(small_arch(), &flat).unwrap(), m);
        assert!(DenoiserModel::from_flat(small_arch(), &flat[1..]).is_err());
    }

    #[test]
    fn batch_forward_matches_single() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = DenoiserModel::init(small_arch(), &mut rng).unwrap();
        let xs = Array2::from_shape_vec((4, 3), randn(&mut rng, 12, 1.0)).unwrap();
        let ts = [1, 50, 300, 999];
        let tape = m.forward_batch(m.batch_input(&xs, &ts));
        for (i, &t) in ts.iter().enumerate() {
            let single = m.forward(xs.row(i).as_slice().unwrap(), t).unwrap();
            for j in 0..3 {
                assert!((tape.output[[i, j]] - single[j]).abs() < 1e-12);
            }
        }
    }
}
