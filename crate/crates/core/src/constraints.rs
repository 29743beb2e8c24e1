//! Guidance losses `L(x0, y)` and the chain-rule gradient of
//! `L(x0_hat(x'), y)` with respect to a noisy latent `x'`.
//!
//! Every loss here is a mean of squared residuals, so `sqrt(loss)` is the RMS
//! violation of a single sample. Equality observations penalize `(A x0 - y)^2`.
//! An inequality `c(x0) > a` contributes the hinge `max(0, a - c(x0))`, and an
//! inequality set averages the squared hinges. At the kink `c(x0) = a` the
//! hinge gradient is taken from the satisfied side, i.e. zero.

use std::fmt::Debug;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::denoiser::DenoiserModel;
use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};

/// A differentiable, nonnegative loss on clean samples.
pub trait Constraint: Debug + Send + Sync {
    /// Dimension of the samples this constraint accepts.
    fn dim(&self) -> usize;

    fn loss(&self, x0: &[f64]) -> Result<f64>;

    fn grad_x0(&self, x0: &[f64]) -> Result<Vec<f64>>;

    fn loss_and_grad(&self, x0: &[f64]) -> Result<(f64, Vec<f64>)> {
        Ok((self.loss(x0)?, self.grad_x0(x0)?))
    }

    /// Density proxy `exp(-L(x0))`.
    fn density_proxy(&self, x0: &[f64]) -> Result<f64> {
        Ok((-self.loss(x0)?).exp())
    }
}

pub(crate) fn check_dim(context: &'static str, expected: usize, x: &[f64]) -> Result<()> {
    if x.len() != expected {
        return Err(Error::dims(context, expected, x.len()));
    }
    Ok(())
}

/// Linear observation operator: either a coordinate selection or a dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum LinearOperator {
    Mask(Vec<usize>),
    Matrix(Array2<f64>),
}

impl LinearOperator {
    pub fn rows(&self) -> usize {
        match self {
            LinearOperator::Mask(idx) => idx.len(),
            LinearOperator::Matrix(m) => m.nrows(),
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        match self {
            LinearOperator::Mask(idx) => idx.iter().map(|&i| x[i]).collect(),
            LinearOperator::Matrix(m) => m
                .rows()
                .into_iter()
                .map(|r| r.iter().zip(x).map(|(a, b)| a * b).sum())
                .collect(),
        }
    }

    fn apply_transpose(&self, r: &[f64], dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim];
        match self {
            LinearOperator::Mask(idx) => {
                for (&i, v) in idx.iter().zip(r) {
                    out[i] += v;
                }
            }
            LinearOperator::Matrix(m) => {
                for (row, v) in m.rows().into_iter().zip(r) {
                    for (o, a) in out.iter_mut().zip(row) {
                        *o += a * v;
                    }
                }
            }
        }
        out
    }
}

/// Observation `A x0 = y` scored by mean squared residual.
#[derive(Debug, Clone, PartialEq)]
pub struct EqualityObservation {
    operator: LinearOperator,
    target: Vec<f64>,
    dim: usize,
}

impl EqualityObservation {
    pub fn new(operator: LinearOperator, target: Vec<f64>, dim: usize) -> Result<Self> {
        if operator.rows() != target.len() {
            return Err(Error::dims("observation target", operator.rows(), target.len()));
        }
        if target.is_empty() {
            return Err(Error::InvalidArgument("observation has no rows".into()));
        }
        match &operator {
            LinearOperator::Mask(idx) => {
                if let Some(&i) = idx.iter().find(|&&i| i >= dim) {
                    return Err(Error::InvalidArgument(format!(
                        "mask index {i} out of range for dimension {dim}"
                    )));
                }
            }
            LinearOperator::Matrix(m) => {
                if m.ncols() != dim {
                    return Err(Error::dims("observation matrix columns", dim, m.ncols()));
                }
            }
        }
        Ok(Self {
            operator,
            target,
            dim,
        })
    }

    pub fn mask(indices: Vec<usize>, target: Vec<f64>, dim: usize) -> Result<Self> {
        Self::new(LinearOperator::Mask(indices), target, dim)
    }

    pub fn matrix(rows: Array2<f64>, target: Vec<f64>) -> Result<Self> {
        let dim = rows.ncols();
        Self::new(LinearOperator::Matrix(rows), target, dim)
    }

    pub fn operator(&self) -> &LinearOperator {
        &self.operator
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    /// `A x0 - y`.
    pub fn residual(&self, x0: &[f64]) -> Result<Vec<f64>> {
        check_dim("equality observation", self.dim, x0)?;
        Ok(self
            .operator
            .apply(x0)
            .iter()
            .zip(&self.target)
            .map(|(a, y)| a - y)
            .collect())
    }
}

impl Constraint for EqualityObservation {
    fn dim(&self) -> usize {
        self.dim
    }

    fn loss(&self, x0: &[f64]) -> Result<f64> {
        let r = self.residual(x0)?;
        Ok(r.iter().map(|v| v * v).sum::<f64>() / r.len() as f64)
    }

    fn grad_x0(&self, x0: &[f64]) -> Result<Vec<f64>> {
        Ok(self.loss_and_grad(x0)?.1)
    }

    fn loss_and_grad(&self, x0: &[f64]) -> Result<(f64, Vec<f64>)> {
        let r = self.residual(x0)?;
        let m = r.len() as f64;
        let loss = r.iter().map(|v| v * v).sum::<f64>() / m;
        let scaled: Vec<f64> = r.iter().map(|v| 2.0 * v / m).collect();
        Ok((loss, self.operator.apply_transpose(&scaled, self.dim)))
    }
}

/// Mean squared residual, free-function form of [`EqualityObservation::loss`].
pub fn equality_loss(x0: &[f64], obs: &EqualityObservation) -> Result<f64> {
    obs.loss(x0)
}

/// Differentiable scalar features of a sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "fn", rename_all = "snake_case")]
pub enum ScalarFunction {
    Coordinate { index: usize },
    Linear { weights: Vec<f64> },
    /// Largest of the selected coordinates; the gradient is one-hot at the
    /// first maximizer.
    MaxOf { indices: Vec<usize> },
    /// Euclidean distance of the selected coordinates from `center`.
    DistanceFrom { indices: Vec<usize>, center: Vec<f64> },
    /// `sum_f v_f x p_f` over a frame-major trajectory, with `p_f` the
    /// `(a, b)` coordinate pair of frame `f` and `v_f = p_{f+1} - p_f`.
    AngularMomentum {
        frames: usize,
        dims_per_frame: usize,
        pair: (usize, usize),
    },
}

impl ScalarFunction {
    fn max_index(&self) -> usize {
        match self {
            ScalarFunction::Coordinate { index } => *index,
            ScalarFunction::Linear { weights } => weights.len().saturating_sub(1),
            ScalarFunction::MaxOf { indices } | ScalarFunction::DistanceFrom { indices, .. } => {
                indices.iter().copied().max().unwrap_or(0)
            }
            ScalarFunction::AngularMomentum {
                frames,
                dims_per_frame,
                ..
            } => frames * dims_per_frame - 1,
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        let ok = match self {
            ScalarFunction::MaxOf { indices } => !indices.is_empty(),
            ScalarFunction::DistanceFrom { indices, center } => {
                !indices.is_empty() && indices.len() == center.len()
            }
            ScalarFunction::Linear { weights } => weights.len() == dim,
            ScalarFunction::AngularMomentum {
                frames,
                dims_per_frame,
                pair,
            } => *frames >= 2 && pair.0 < *dims_per_frame && pair.1 < *dims_per_frame,
            ScalarFunction::Coordinate { .. } => true,
        };
        if !ok || self.max_index() >= dim {
            return Err(Error::InvalidArgument(format!(
                "scalar function {self:?} incompatible with dimension {dim}"
            )));
        }
        Ok(())
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            ScalarFunction::Coordinate { index } => x[*index],
            ScalarFunction::Linear { weights } => weights.iter().zip(x).map(|(w, v)| w * v).sum(),
            ScalarFunction::MaxOf { indices } => {
                indices.iter().map(|&i| x[i]).fold(f64::NEG_INFINITY, f64::max)
            }
            ScalarFunction::DistanceFrom { indices, center } => indices
                .iter()
                .zip(center)
                .map(|(&i, c)| (x[i] - c).powi(2))
                .sum::<f64>()
                .sqrt(),
            ScalarFunction::AngularMomentum {
                frames,
                dims_per_frame,
                pair: (a, b),
            } => {
                let p = |f: usize, j: usize| x[f * dims_per_frame + j];
                (0..frames - 1)
                    .map(|f| {
                        let (va, vb) = (p(f + 1, *a) - p(f, *a), p(f + 1, *b) - p(f, *b));
                        va * p(f, *b) - vb * p(f, *a)
                    })
                    .sum()
            }
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        match self {
            ScalarFunction::Coordinate { index } => g[*index] = 1.0,
            ScalarFunction::Linear { weights } => g.copy_from_slice(weights),
            ScalarFunction::MaxOf { indices } => {
                let mut best = indices[0];
                for &i in indices {
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                g[best] = 1.0;
            }
            ScalarFunction::DistanceFrom { indices, center } => {
                let r = self.value(x);
                if r > 0.0 {
                    for (&i, c) in indices.iter().zip(center) {
                        g[i] = (x[i] - c) / r;
                    }
                }
            }
            ScalarFunction::AngularMomentum {
                frames,
                dims_per_frame,
                pair: (a, b),
            } => {
                let at = |f: usize, j: usize| f * dims_per_frame + j;
                for f in 0..frames - 1 {
                    let (pa, pb) = (x[at(f, *a)], x[at(f, *b)]);
                    let (qa, qb) = (x[at(f + 1, *a)], x[at(f + 1, *b)]);
                    // term = (qa - pa) pb - (qb - pb) pa = qa pb - qb pa
                    g[at(f + 1, *a)] += pb;
                    g[at(f, *b)] += qa;
                    g[at(f + 1, *b)] -= pa;
                    g[at(f, *a)] -= qb;
                }
            }
        }
        g
    }
}

/// Requirement `c(x0) > threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityConstraint {
    pub function: ScalarFunction,
    pub threshold: f64,
}

impl InequalityConstraint {
    /// `max(0, a - c(x0))`.
    pub fn hinge(&self, x0: &[f64]) -> f64 {
        (self.threshold - self.function.value(x0)).max(0.0)
    }
}

/// Mean squared hinge over several inequalities.
#[derive(Debug, Clone, PartialEq)]
pub struct InequalitySet {
    parts: Vec<InequalityConstraint>,
    dim: usize,
}

impl InequalitySet {
    pub fn new(parts: Vec<InequalityConstraint>, dim: usize) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument(
                "inequality constraint needs at least one part".into(),
            ));
        }
        for p in &parts {
            p.function.validate(dim)?;
        }
        Ok(Self { parts, dim })
    }

    pub fn parts(&self) -> &[InequalityConstraint] {
        &self.parts
    }

    /// True iff every part holds (`c_i >= a_i`).
    pub fn is_satisfied(&self, x0: &[f64]) -> bool {
        self.parts.iter().all(|p| p.hinge(x0) == 0.0)
    }
}

impl Constraint for InequalitySet {
    fn dim(&self) -> usize {
        self.dim
    }

    fn loss(&self, x0: &[f64]) -> Result<f64> {
        check_dim("inequality constraint", self.dim, x0)?;
        Ok(self.parts.iter().map(|p| p.hinge(x0).powi(2)).sum::<f64>() / self.parts.len() as f64)
    }

    fn grad_x0(&self, x0: &[f64]) -> Result<Vec<f64>> {
        check_dim("inequality constraint", self.dim, x0)?;
        let n = self.parts.len() as f64;
        let mut g = vec![0.0; self.dim];
        for p in &self.parts {
            let h = p.hinge(x0);
            if h > 0.0 {
                for (gi, ci) in g.iter_mut().zip(p.function.gradient(x0)) {
                    *gi -= 2.0 * h * ci / n;
                }
            }
        }
        Ok(g)
    }
}

/// Mean over `i` of `max(0, a_i - c_i(x0))^2`.
pub fn inequality_loss(x0: &[f64], parts: &[InequalityConstraint]) -> Result<f64> {
    InequalitySet::new(parts.to_vec(), x0.len())?.loss(x0)
}

/// `(c(x0) - target)^2` for a nonlinear scalar feature.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarEquality {
    function: ScalarFunction,
    target: f64,
    dim: usize,
}

impl ScalarEquality {
    pub fn new(function: ScalarFunction, target: f64, dim: usize) -> Result<Self> {
        function.validate(dim)?;
        Ok(Self {
            function,
            target,
            dim,
        })
    }
}

impl Constraint for ScalarEquality {
    fn dim(&self) -> usize {
        self.dim
    }

    fn loss(&self, x0: &[f64]) -> Result<f64> {
        check_dim("scalar equality", self.dim, x0)?;
        Ok((self.function.value(x0) - self.target).powi(2))
    }

    fn grad_x0(&self, x0: &[f64]) -> Result<Vec<f64>> {
        check_dim("scalar equality", self.dim, x0)?;
        let r = self.function.value(x0) - self.target;
        Ok(self
            .function
            .gradient(x0)
            .into_iter()
            .map(|g| 2.0 * r * g)
            .collect())
    }
}

/// Arithmetic mean of several constraints' losses.
#[derive(Debug)]
pub struct CompositeConstraint {
    parts: Vec<Box<dyn Constraint>>,
    dim: usize,
}

impl CompositeConstraint {
    pub fn new(parts: Vec<Box<dyn Constraint>>) -> Result<Self> {
        let dim = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("composite constraint is empty".into()))?
            .dim();
        if let Some(p) = parts.iter().find(|p| p.dim() != dim) {
            return Err(Error::dims("composite part", dim, p.dim()));
        }
        Ok(Self { parts, dim })
    }

    pub fn parts(&self) -> &[Box<dyn Constraint>] {
        &self.parts
    }
}

impl Constraint for CompositeConstraint {
    fn dim(&self) -> usize {
        self.dim
    }

    fn loss(&self, x0: &[f64]) -> Result<f64> {
        let mut sum = 0.0;
        for p in &self.parts {
            sum += p.loss(x0)?;
        }
        Ok(sum / self.parts.len() as f64)
    }

    fn grad_x0(&self, x0: &[f64]) -> Result<Vec<f64>> {
        let n = self.parts.len() as f64;
        let mut g = vec![0.0; self.dim];
        for p in &self.parts {
            for (gi, pi) in g.iter_mut().zip(p.grad_x0(x0)?) {
                *gi += pi / n;
            }
        }
        Ok(g)
    }
}

/// Result of one guidance evaluation at a latent `x'`.
#[derive(Debug, Clone)]
pub struct GuidanceEval {
    /// `d L(x0_hat(x')) / d x'`.
    pub grad: Vec<f64>,
    pub loss: f64,
    /// `eps_theta(x', t)`, reusable for the manifold-boundary check.
    pub eps_pred: Vec<f64>,
    pub x0_hat: Vec<f64>,
}

/// Loss of the predicted clean sample and its gradient with respect to the
/// latent, through `x0_hat = (x' - sqrt(1 - a) eps_theta(x', t)) / sqrt(a)`.
///
/// Costs one network pass (forward plus one vector-Jacobian product).
pub fn guidance_gradient(
    model: &DenoiserModel,
    con: &dyn Constraint,
    x_prime: &[f64],
    t: usize,
    s: &NoiseSchedule,
) -> Result<GuidanceEval> {
    s.check_t(t)?;
    if con.dim() != model.data_dim() {
        return Err(Error::dims("constraint vs model", model.data_dim(), con.dim()));
    }
    let tape = model.forward_tape(x_prime, t)?;
    let a = s.alpha_cum(t)?;
    let (ca, cn) = (a.sqrt(), (1.0 - a).sqrt());
    let x0_hat: Vec<f64> = x_prime
        .iter()
        .zip(tape.output())
        .map(|(x, e)| (x - cn * e) / ca)
        .collect();
    let (loss, g0) = con.loss_and_grad(&x0_hat)?;
    let pulled = tape.vjp(&g0)?;
    let grad = g0
        .iter()
        .zip(&pulled)
        .map(|(g, p)| (g - cn * p) / ca)
        .collect();
    Ok(GuidanceEval {
        grad,
        loss,
        eps_pred: tape.into_output(),
        x0_hat,
    })
}

/// Serializable description of a constraint, as written in experiment configs.
///
/// Targets may be left out; task construction then reads them off a held-out
/// data sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConstraintSpec {
    /// Observe selected coordinates (inpainting analog).
    Mask {
        indices: Vec<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        target: Option<Vec<f64>>,
    },
    /// Arbitrary observation matrix, rows given as nested arrays.
    Matrix {
        rows: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        target: Option<Vec<f64>>,
    },
    /// Averages of consecutive blocks of coordinates (super-resolution
    /// analog). On trajectories blocks are taken per dimension over frames.
    Average {
        block: usize,
        #[serde(default)]
        dims_per_frame: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        target: Option<Vec<f64>>,
    },
    /// Gaussian blur over frames of a trajectory, per dimension (deblur analog).
    Blur {
        dims_per_frame: usize,
        sigma: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        target: Option<Vec<f64>>,
    },
    /// Some frame must reach `threshold` along `height_dim` (jump analog).
    MinHeight {
        dims_per_frame: usize,
        height_dim: usize,
        threshold: f64,
    },
    /// Every frame stays outside a sphere (obstacle analog).
    Obstacle {
        dims_per_frame: usize,
        center: Vec<f64>,
        radius: f64,
    },
    /// Total planar angular momentum `sum v x p` of a trajectory.
    AngularMomentum {
        dims_per_frame: usize,
        #[serde(default = "default_pair")]
        pair: (usize, usize),
        #[serde(default, skip_serializing_if = "Option::is_none")]
        target: Option<f64>,
    },
    /// Generic inequality `c(x) > threshold`.
    Inequality { parts: Vec<InequalityConstraint> },
    Composite { parts: Vec<ConstraintSpec> },
}

fn default_pair() -> (usize, usize) {
    (0, 1)
}

fn frames_of(dim: usize, dims_per_frame: usize) -> Result<usize> {
    if dims_per_frame == 0 || !dim.is_multiple_of(dims_per_frame) {
        return Err(Error::InvalidArgument(format!(
            "dimension {dim} is not a whole number of {dims_per_frame}-wide frames"
        )));
    }
    Ok(dim / dims_per_frame)
}

/// Block-averaging matrix. With `dims_per_frame = Some(k)`, averages each of
/// the `k` channels over consecutive frames.
pub fn averaging_matrix(dim: usize, block: usize, dims_per_frame: Option<usize>) -> Result<Array2<f64>> {
    let k = dims_per_frame.unwrap_or(1);
    let frames = frames_of(dim, k)?;
    if block == 0 || frames % block != 0 {
        return Err(Error::InvalidArgument(format!(
            "block {block} must divide {frames}"
        )));
    }
    let groups = frames / block;
    let mut m = Array2::zeros((groups * k, dim));
    for g in 0..groups {
        for j in 0..k {
            for f in g * block..(g + 1) * block {
                m[[g * k + j, f * k + j]] = 1.0 / block as f64;
            }
        }
    }
    Ok(m)
}

/// Row-normalized Gaussian blur over frames applied channel-wise.
pub fn blur_matrix(dim: usize, dims_per_frame: usize, sigma: f64) -> Result<Array2<f64>> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("blur sigma must be > 0, got {sigma}")));
    }
    let frames = frames_of(dim, dims_per_frame)?;
    let radius = (3.0 * sigma).ceil() as i64;
    let mut m = Array2::zeros((dim, dim));
    for f in 0..frames as i64 {
        let lo = (f - radius).max(0);
        let hi = (f + radius).min(frames as i64 - 1);
        let weights: Vec<f64> = (lo..=hi)
            .map(|g| (-0.5 * ((g - f) as f64 / sigma).powi(2)).exp())
            .collect();
        let total: f64 = weights.iter().sum();
        for j in 0..dims_per_frame {
            for (g, w) in (lo..=hi).zip(&weights) {
                m[[f as usize * dims_per_frame + j, g as usize * dims_per_frame + j]] = w / total;
            }
        }
    }
    Ok(m)
}

impl ConstraintSpec {
    /// True when some target still needs to be filled in.
    pub fn needs_target(&self) -> bool {
        match self {
            ConstraintSpec::Mask { target, .. }
            | ConstraintSpec::Matrix { target, .. }
            | ConstraintSpec::Average { target, .. }
            | ConstraintSpec::Blur { target, .. } => target.is_none(),
            ConstraintSpec::AngularMomentum { target, .. } => target.is_none(),
            ConstraintSpec::Composite { parts } => parts.iter().any(|p| p.needs_target()),
            _ => false,
        }
    }

    /// True when the constraint contains only inequality terms.
    pub fn is_inequality(&self) -> bool {
        match self {
            ConstraintSpec::MinHeight { .. }
            | ConstraintSpec::Obstacle { .. }
            | ConstraintSpec::Inequality { .. } => true,
            ConstraintSpec::Composite { parts } => parts.iter().all(|p| p.is_inequality()),
            _ => false,
        }
    }

    /// Copy with every missing target read off `reference`.
    pub fn with_targets_from(&self, reference: &[f64]) -> Result<Self> {
        let dim = reference.len();
        let observe = |m: &Array2<f64>| LinearOperator::Matrix(m.clone()).apply(reference);
        Ok(match self {
            ConstraintSpec::Mask { indices, target } => ConstraintSpec::Mask {
                indices: indices.clone(),
                target: match target {
                    Some(t) => Some(t.clone()),
                    None => {
                        if let Some(&i) = indices.iter().find(|&&i| i >= dim) {
                            return Err(Error::InvalidArgument(format!(
                                "mask index {i} out of range for dimension {dim}"
                            )));
                        }
                        Some(indices.iter().map(|&i| reference[i]).collect())
                    }
                },
            },
            ConstraintSpec::Matrix { rows, target } => ConstraintSpec::Matrix {
                rows: rows.clone(),
                target: match target {
                    Some(t) => Some(t.clone()),
                    None => Some(observe(&rows_to_matrix(rows, dim)?)),
                },
            },
            ConstraintSpec::Average {
                block,
                dims_per_frame,
                target,
            } => ConstraintSpec::Average {
                block: *block,
                dims_per_frame: *dims_per_frame,
                target: match target {
                    Some(t) => Some(t.clone()),
                    None => Some(observe(&averaging_matrix(dim, *block, *dims_per_frame)?)),
                },
            },
            ConstraintSpec::Blur {
                dims_per_frame,
                sigma,
                target,
            } => ConstraintSpec::Blur {
                dims_per_frame: *dims_per_frame,
                sigma: *sigma,
                target: match target {
                    Some(t) => Some(t.clone()),
                    None => Some(observe(&blur_matrix(dim, *dims_per_frame, *sigma)?)),
                },
            },
            ConstraintSpec::AngularMomentum {
                dims_per_frame,
                pair,
                target,
            } => ConstraintSpec::AngularMomentum {
                dims_per_frame: *dims_per_frame,
                pair: *pair,
                target: match target {
                    Some(t) => Some(*t),
                    None => Some(
                        ScalarFunction::AngularMomentum {
                            frames: frames_of(dim, *dims_per_frame)?,
                            dims_per_frame: *dims_per_frame,
                            pair: *pair,
                        }
                        .value(reference),
                    ),
                },
            },
            ConstraintSpec::Composite { parts } => ConstraintSpec::Composite {
                parts: parts
                    .iter()
                    .map(|p| p.with_targets_from(reference))
                    .collect::<Result<_>>()?,
            },
            other => other.clone(),
        })
    }

    /// Instantiates the constraint for samples of dimension `dim`.
    pub fn build(&self, dim: usize) -> Result<Box<dyn Constraint>> {
        let need = |t: &Option<Vec<f64>>| -> Result<Vec<f64>> {
            t.clone().ok_or_else(|| {
                Error::Config("constraint target missing; build the task first".into())
            })
        };
        Ok(match self {
            ConstraintSpec::Mask { indices, target } => Box::new(EqualityObservation::mask(
                indices.clone(),
                need(target)?,
                dim,
            )?),
            ConstraintSpec::Matrix { rows, target } => Box::new(EqualityObservation::matrix(
                rows_to_matrix(rows, dim)?,
                need(target)?,
            )?),
            ConstraintSpec::Average {
                block,
                dims_per_frame,
                target,
            } => Box::new(EqualityObservation::matrix(
                averaging_matrix(dim, *block, *dims_per_frame)?,
                need(target)?,
            )?),
            ConstraintSpec::Blur {
                dims_per_frame,
                sigma,
                target,
            } => Box::new(EqualityObservation::matrix(
                blur_matrix(dim, *dims_per_frame, *sigma)?,
                need(target)?,
            )?),
            ConstraintSpec::MinHeight {
                dims_per_frame,
                height_dim,
                threshold,
            } => {
                let frames = frames_of(dim, *dims_per_frame)?;
                let indices = (0..frames).map(|f| f * dims_per_frame + height_dim).collect();
                Box::new(InequalitySet::new(
                    vec![InequalityConstraint {
                        function: ScalarFunction::MaxOf { indices },
                        threshold: *threshold,
                    }],
                    dim,
                )?)
            }
            ConstraintSpec::Obstacle {
                dims_per_frame,
                center,
                radius,
            } => {
                let frames = frames_of(dim, *dims_per_frame)?;
                if center.len() != *dims_per_frame {
                    return Err(Error::dims("obstacle center", *dims_per_frame, center.len()));
                }
                let parts = (0..frames)
                    .map(|f| InequalityConstraint {
                        function: ScalarFunction::DistanceFrom {
                            indices: (0..*dims_per_frame).map(|j| f * dims_per_frame + j).collect(),
                            center: center.clone(),
                        },
                        threshold: *radius,
                    })
                    .collect();
                Box::new(InequalitySet::new(parts, dim)?)
            }
            ConstraintSpec::AngularMomentum {
                dims_per_frame,
                pair,
                target,
            } => Box::new(ScalarEquality::new(
                ScalarFunction::AngularMomentum {
                    frames: frames_of(dim, *dims_per_frame)?,
                    dims_per_frame: *dims_per_frame,
                    pair: *pair,
                },
                target.ok_or_else(|| Error::Config("angular momentum target missing".into()))?,
                dim,
            )?),
            ConstraintSpec::Inequality { parts } => Box::new(InequalitySet::new(parts.clone(), dim)?),
            ConstraintSpec::Composite { parts } => Box::new(CompositeConstraint::new(
                parts.iter().map(|p| p.build(dim)).collect::<Result<_>>()?,
            )?),
        })
    }
}

fn rows_to_matrix(rows: &[Vec<f64>], dim: usize) -> Result<Array2<f64>> {
    if let Some(r) = rows.iter().find(|r| r.len() != dim) {
        return Err(Error::dims("observation matrix row", dim, r.len()));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((rows.len(), dim), flat)
        .map_err(|e| Error::InvalidArgument(format!("observation matrix: {e}")))
}
