//! Sample-quality metrics: constraint violation, sliced Wasserstein distance
//! to reference data, and pairwise diversity.

mod jensen;

pub use jensen::{jensen_gap_oracle, run_jensen_suite, run_standard_jensen_suite, suite_losses, suite_posteriors, SUITE_TOLERANCE, JensenCase, JensenReport, JensenResult, Posterior};

use ndarray::{ArrayView2, Axis};
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::constraints::Constraint;
use crate::error::{Error, Result};

/// RMS violation over a sample set: `sqrt(mean_i L(x_i))`. Every loss is a
/// mean of squared residuals (or squared hinges), so this is the RMS of the
/// per-sample RMS violations.
pub fn constraint_violation(samples: ArrayView2<f64>, con: &dyn Constraint) -> Result<f64> {
    if samples.nrows() == 0 {
        return Err(Error::InvalidArgument("constraint violation of an empty sample set".into()));
    }
    let mut total = 0.0;
    for row in samples.rows() {
        let row = row.to_vec();
        total += con.loss(&row)?;
    }
    Ok((total / samples.nrows() as f64).sqrt())
}

/// Per-sample losses, in row order.
pub fn per_sample_losses(samples: ArrayView2<f64>, con: &dyn Constraint) -> Result<Vec<f64>> {
    samples.rows().into_iter().map(|r| con.loss(&r.to_vec())).collect()
}

fn random_direction<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn subsample<R: Rng + ?Sized>(x: ArrayView2<f64>, n: usize, rng: &mut R) -> Vec<usize> {
    if x.nrows() == n {
        (0..n).collect()
    } else {
        let mut idx = sample_indices(rng, x.nrows(), n).into_vec();
        idx.sort_unstable();
        idx
    }
}

fn sorted_projection(x: ArrayView2<f64>, rows: &[usize], dir: &[f64]) -> Vec<f64> {
    let mut p: Vec<f64> = rows
        .iter()
        .map(|&i| x.row(i).iter().zip(dir).map(|(a, b)| a * b).sum())
        .collect();
    p.sort_by(f64::total_cmp);
    p
}

/// Mean over `n_projections` random unit directions of the 1D 2-Wasserstein
/// distance between the projected empirical distributions. The larger set is
/// first subsampled (seeded) to the size of the smaller one.
pub fn sliced_wasserstein<R: Rng + ?Sized>(
    a: ArrayView2<f64>,
    b: ArrayView2<f64>,
    n_projections: usize,
    rng: &mut R,
) -> Result<f64> {
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(Error::InvalidArgument("sliced Wasserstein of an empty set".into()));
    }
    if a.ncols() != b.ncols() {
        return Err(Error::dims("sliced Wasserstein", a.ncols(), b.ncols()));
    }
    if n_projections == 0 {
        return Err(Error::InvalidArgument("need at least one projection".into()));
    }
    let n = a.nrows().min(b.nrows());
    let ra = subsample(a, n, rng);
    let rb = subsample(b, n, rng);
    let mut total = 0.0;
    for _ in 0..n_projections {
        let dir = random_direction(a.ncols(), rng);
        let pa = sorted_projection(a, &ra, &dir);
        let pb = sorted_projection(b, &rb, &dir);
        let ms = pa.iter().zip(&pb).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n as f64;
        total += ms.sqrt();
    }
    Ok(total / n_projections as f64)
}

/// Mean Euclidean distance over `n_pairs` uniformly drawn pairs of distinct rows.
pub fn diversity<R: Rng + ?Sized>(samples: ArrayView2<f64>, n_pairs: usize, rng: &mut R) -> Result<f64> {
    let n = samples.nrows();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("diversity needs >= 2 samples, got {n}")));
    }
    if n_pairs == 0 {
        return Err(Error::InvalidArgument("need at least one pair".into()));
    }
    let mut total = 0.0;
    for _ in 0..n_pairs {
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        let d = &samples.row(i) - &samples.row(j);
        total += d.dot(&d).sqrt();
    }
    Ok(total / n_pairs as f64)
}

/// Row-stacks equally sized vectors.
pub fn stack_samples(rows: &[Vec<f64>]) -> Result<ndarray::Array2<f64>> {
    let d = rows.first().map_or(0, Vec::len);
    let mut out = ndarray::Array2::zeros((rows.len(), d));
    for (mut dst, src) in out.axis_iter_mut(Axis(0)).zip(rows) {
        if src.len() != d {
            return Err(Error::dims("sample row", d, src.len()));
        }
        dst.assign(&ndarray::ArrayView1::from(src.as_slice()));
    }
    Ok(out)
}

/// One row of a benchmark table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub method: String,
    pub task: String,
    pub seed_count: usize,
    pub mean_violation: f64,
    pub sw2: f64,
    pub diversity: f64,
    /// `|diversity - diversity of reference data|`.
    pub diversity_gap: f64,
    pub mean_nfe: f64,
    pub runtime_seconds: f64,
}

impl MetricReport {
    pub fn validate(&self) -> Result<()> {
        if self.seed_count == 0 {
            return Err(Error::InvalidArgument("report with zero seeds".into()));
        }
        let vals = [
            self.mean_violation,
            self.sw2,
            self.diversity,
            self.diversity_gap,
            self.mean_nfe,
            self.runtime_seconds,
        ];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("metrics of {} on {}", self.method, self.task)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::{EqualityObservation, InequalityConstraint, InequalitySet, ScalarFunction};
    use ndarray::{array, Array2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn normal(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, d), |_| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn violation_examples() {
        let con = EqualityObservation::mask(vec![0], vec![1.0], 2).unwrap();
        assert_eq!(constraint_violation(array![[1.0, 5.0], [1.0, -2.0]].view(), &con).unwrap(), 0.0);
        assert_eq!(constraint_violation(array![[3.0, 0.0]].view(), &con).unwrap(), 2.0);
        let v = constraint_violation(array![[1.0, 0.0], [3.0, 0.0]].view(), &con).unwrap();
        assert!((v - 2f64.sqrt()).abs() < 1e-15);
        let ineq = InequalitySet::new(
            vec![InequalityConstraint {
                function: ScalarFunction::Coordinate { index: 1 },
                threshold: 1.0,
            }],
            2,
        )
        .unwrap();
        let v = constraint_violation(array![[0.0, 2.0], [0.0, -1.0]].view(), &ineq).unwrap();
        assert!((v - 2f64.sqrt()).abs() < 1e-15);
        assert!(constraint_violation(Array2::<f64>::zeros((0, 2)).view(), &con).is_err());
    }

    #[test]
    fn violation_is_translation_covariant() {
        let x = normal(50, 3, 1);
        let con = EqualityObservation::mask(vec![0, 2], vec![0.4, -0.2], 3).unwrap();
        let shift = [1.5, -3.0, 0.25];
        let shifted = &x + &ndarray::arr1(&shift);
        let con2 = EqualityObservation::mask(vec![0, 2], vec![0.4 + 1.5, -0.2 + 0.25], 3).unwrap();
        let a = constraint_violation(x.view(), &con).unwrap();
        let b = constraint_violation(shifted.view(), &con2).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn sw_identity_symmetry_and_order() {
        let a = normal(300, 3, 2);
        let b = normal(300, 3, 3);
        let sw = |x: &Array2<f64>, y: &Array2<f64>| {
            sliced_wasserstein(x.view(), y.view(), 32, &mut ChaCha8Rng::seed_from_u64(7)).unwrap()
        };
        assert_eq!(sw(&a, &a), 0.0);
        assert!((sw(&a, &b) - sw(&b, &a)).abs() < 1e-12);
        assert!(sw(&a, &b) > 0.0);
        let mut rev = a.clone();
        rev.invert_axis(Axis(0));
        assert!(sw(&rev, &a).abs() < 1e-12);
        assert!((sw(&rev, &b) - sw(&a, &b)).abs() < 1e-12);
    }

    #[test]
    fn sw_of_shift_approaches_shift() {
        let a = normal(20_000, 1, 4);
        let b = &a + 1.0;
        let v = sliced_wasserstein(a.view(), b.view(), 4, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!((v - 1.0).abs() < 1e-9);
        // independent draws: still close to the shift
        let c = &normal(20_000, 1, 5) + 1.0;
        let v = sliced_wasserstein(a.view(), c.view(), 4, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!((v - 1.0).abs() < 0.03, "{v}");
    }

    #[test]
    fn sw_unequal_sizes_and_errors() {
        let a = normal(100, 2, 6);
        let b = normal(250, 2, 7);
        let r1 = sliced_wasserstein(a.view(), b.view(), 8, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let r2 = sliced_wasserstein(a.view(), b.view(), 8, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(r1, r2);
        assert!(sliced_wasserstein(a.view(), normal(5, 3, 0).view(), 8, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }

    #[test]
    fn diversity_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(diversity(Array2::<f64>::ones((10, 2)).view(), 100, &mut rng).unwrap(), 0.0);
        assert_eq!(diversity(array![[0.0, 0.0], [3.0, 0.0]].view(), 10, &mut rng).unwrap(), 3.0);
        assert!(diversity(array![[0.0, 0.0]].view(), 10, &mut rng).is_err());
        let x = normal(20_000, 2, 9);
        let v = diversity(x.view(), 50_000, &mut rng).unwrap();
        let expected = std::f64::consts::PI.sqrt();
        assert!((v - expected).abs() < 0.02, "{v}");
    }

    #[test]
    fn diversity_rotation_invariant() {
        let x = normal(200, 2, 10);
        let th: f64 = 0.7;
        let rot = array![[th.cos(), -th.sin()], [th.sin(), th.cos()]];
        let y = x.dot(&rot.t());
        let a = diversity(x.view(), 500, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = diversity(y.view(), 500, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn stacking() {
        let m = stack_samples(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(m, array![[1.0, 2.0], [3.0, 4.0]]);
        assert!(stack_samples(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }
}
