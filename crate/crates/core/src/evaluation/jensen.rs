//! Numerical check of the Jensen-gap bracket
//! `(a/2) Var(x) <= E[f(x)] - f(E[x]) <= (b/2) Var(x)` for `f = exp(-L)` on
//! scalar samples, with `a`, `b` the extremes of `f''` over the posterior's
//! support hull (widened by 10%), found by a dense finite-difference scan.

use serde::Serialize;

use crate::constraints::{Constraint, EqualityObservation, InequalityConstraint, InequalitySet, ScalarFunction};
use crate::error::{Error, Result};

const SCAN_POINTS: usize = 20_001;
const HULL_WIDENING: f64 = 0.1;
pub const SUITE_TOLERANCE: f64 = 1e-9;

/// Finite scalar distribution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Posterior {
    pub values: Vec<f64>,
    pub probs: Vec<f64>,
}

impl Posterior {
    pub fn new(values: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.len() != probs.len() {
            return Err(Error::InvalidArgument("posterior needs matching, nonempty values and probs".into()));
        }
        if probs.iter().any(|p| !(*p >= 0.0)) || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("posterior probabilities must be >= 0 and values finite".into()));
        }
        let total: f64 = probs.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidArgument("posterior has zero mass".into()));
        }
        let probs = probs.into_iter().map(|p| p / total).collect();
        Ok(Self { values, probs })
    }

    pub fn point(x: f64) -> Self {
        Self {
            values: vec![x],
            probs: vec![1.0],
        }
    }

    pub fn two_point(x1: f64, x2: f64, p1: f64) -> Result<Self> {
        Self::new(vec![x1, x2], vec![p1, 1.0 - p1])
    }

    /// `N(mean, std^2)` restricted to `points` equally spaced nodes on
    /// `mean +- 4 std`, weights proportional to the density.
    pub fn discretized_gaussian(mean: f64, std: f64, points: usize) -> Result<Self> {
        if points < 2 || !(std > 0.0) {
            return Err(Error::InvalidArgument("discretized Gaussian needs std > 0 and >= 2 points".into()));
        }
        let values: Vec<f64> = (0..points)
            .map(|i| mean - 4.0 * std + 8.0 * std * i as f64 / (points - 1) as f64)
            .collect();
        let probs = values.iter().map(|v| (-0.5 * ((v - mean) / std).powi(2)).exp()).collect();
        Self::new(values, probs)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().zip(&self.probs).map(|(v, p)| v * p).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.values.iter().zip(&self.probs).map(|(v, p)| p * (v - m).powi(2)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JensenResult {
    pub gap: f64,
    pub lower: f64,
    pub upper: f64,
    pub variance: f64,
    /// Smallest and largest `f''` found on the scan.
    pub a: f64,
    pub b: f64,
}

impl JensenResult {
    /// `lower - tol <= gap <= upper + tol`, with `tol` relative to the bracket scale.
    pub fn within(&self, rel_tol: f64) -> bool {
        let scale = self.lower.abs().max(self.upper.abs()).max(self.gap.abs()).max(f64::MIN_POSITIVE);
        let tol = rel_tol * scale;
        self.lower - tol <= self.gap && self.gap <= self.upper + tol
    }
}

fn density(con: &dyn Constraint, x: f64) -> Result<f64> {
    con.density_proxy(&[x])
}

/// Gap of `f = exp(-L)` under `posterior` and its curvature bracket.
pub fn jensen_gap_oracle(con: &dyn Constraint, posterior: &Posterior) -> Result<JensenResult> {
    if con.dim() != 1 {
        return Err(Error::dims("Jensen oracle needs a scalar constraint", 1, con.dim()));
    }
    let mean = posterior.mean();
    let variance = posterior.variance();
    let mut ef = 0.0;
    for (v, p) in posterior.values.iter().zip(&posterior.probs) {
        ef += p * density(con, *v)?;
    }
    let gap = ef - density(con, mean)?;

    let lo = posterior.values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = posterior.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { hi - lo } else { 1.0 };
    let (lo, hi) = (lo - HULL_WIDENING * width / 2.0, hi + HULL_WIDENING * width / 2.0);
    let h = 1e-4 * width.max(1e-2);
    let (mut a, mut b) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..SCAN_POINTS {
        let x = lo + (hi - lo) * i as f64 / (SCAN_POINTS - 1) as f64;
        let f2 = (density(con, x + h)? - 2.0 * density(con, x)? + density(con, x - h)?) / (h * h);
        a = a.min(f2);
        b = b.max(f2);
    }
    Ok(JensenResult {
        gap,
        lower: a / 2.0 * variance,
        upper: b / 2.0 * variance,
        variance,
        a,
        b,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct JensenCase {
    pub posterior: String,
    pub loss: String,
    pub result: JensenResult,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct JensenReport {
    pub tolerance: f64,
    pub cases: Vec<JensenCase>,
}

impl JensenReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &JensenCase> {
        self.cases.iter().filter(|c| !c.passed)
    }
}

/// Posteriors of the standard grid: point masses, two-point laws, and
/// discretized Gaussians of growing width.
pub fn suite_posteriors() -> Vec<(String, Posterior)> {
    let mut out = Vec::new();
    for x in [-1.0, 0.0, 0.7] {
        out.push((format!("point({x})"), Posterior::point(x)));
    }
    for h in [0.1, 0.5, 1.0, 2.0] {
        out.push((format!("two_point(+-{h})"), Posterior::two_point(-h, h, 0.5).unwrap()));
    }
    out.push(("two_point(0.2,1.5;0.3)".into(), Posterior::two_point(0.2, 1.5, 0.3).unwrap()));
    out.push(("two_point(-0.8,0.1;0.9)".into(), Posterior::two_point(-0.8, 0.1, 0.9).unwrap()));
    for m in [0.0, 0.8] {
        for sd in [0.1, 0.3, 0.7, 1.2] {
            out.push((
                format!("gauss({m},{sd})"),
                Posterior::discretized_gaussian(m, sd, 41).unwrap(),
            ));
        }
    }
    out
}

/// Losses of the standard grid: quadratics `(k x - y)^2` and squared hinges of
/// clipped linear functions `max(0, a - w x)^2`.
pub fn suite_losses() -> Vec<(String, Box<dyn Constraint>)> {
    let mut out: Vec<(String, Box<dyn Constraint>)> = Vec::new();
    for (k, y) in [(1.0, 0.0), (1.0, 0.5), (2.0, -0.3), (0.5, 1.0)] {
        let op = ndarray::arr2(&[[k]]);
        out.push((
            format!("quadratic({k}x-{y})"),
            Box::new(EqualityObservation::matrix(op, vec![y]).unwrap()),
        ));
    }
    for (w, a) in [(1.0, 0.0), (1.0, 0.5), (-1.0, 0.2), (2.0, -0.4)] {
        let part = InequalityConstraint {
            function: ScalarFunction::Linear { weights: vec![w] },
            threshold: a,
        };
        out.push((
            format!("clipped({w}x>{a})"),
            Box::new(InequalitySet::new(vec![part], 1).unwrap()),
        ));
    }
    out
}

/// Runs the oracle on every (posterior, loss) pair of the given grids.
pub fn run_jensen_suite(
    posteriors: &[(String, Posterior)],
    losses: &[(String, Box<dyn Constraint>)],
    rel_tol: f64,
) -> JensenReport {
    let mut cases = Vec::new();
    for (pname, post) in posteriors {
        for (lname, con) in losses {
            let (result, passed) = match jensen_gap_oracle(con.as_ref(), post) {
                Ok(r) => (r, r.within(rel_tol)),
                Err(_) => (
                    JensenResult {
                        gap: f64::NAN,
                        lower: f64::NAN,
                        upper: f64::NAN,
                        variance: f64::NAN,
                        a: f64::NAN,
                        b: f64::NAN,
                    },
                    false,
                ),
            };
            cases.push(JensenCase {
                posterior: pname.clone(),
                loss: lname.clone(),
                result,
                passed,
            });
        }
    }
    JensenReport {
        tolerance: rel_tol,
        cases,
    }
}

/// The standard grid at the standard tolerance.
pub fn run_standard_jensen_suite() -> JensenReport {
    run_jensen_suite(&suite_posteriors(), &suite_losses(), SUITE_TOLERANCE)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad(y: f64) -> EqualityObservation {
        EqualityObservation::mask(vec![0], vec![y], 1).unwrap()
    }

    #[test]
    fn point_mass_is_exactly_zero() {
        let r = jensen_gap_oracle(&quad(0.3), &Posterior::point(1.0)).unwrap();
        assert_eq!((r.gap, r.lower, r.upper, r.variance), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn symmetric_two_point_even_f() {
        let h = 0.6;
        let r = jensen_gap_oracle(&quad(0.0), &Posterior::two_point(-h, h, 0.5).unwrap()).unwrap();
        assert!((r.gap - ((-h * h).exp() - 1.0)).abs() < 1e-15);
        assert!(r.within(1e-9));
    }

    #[test]
    fn quadratic_small_variance_matches_curvature() {
        // f = exp(-x^2), f''(x) = (4x^2 - 2) f; at the mean 0.4
        let m: f64 = 0.4;
        let f2 = (4.0 * m * m - 2.0) * (-m * m).exp();
        let d = 1e-3;
        let r = jensen_gap_oracle(&quad(0.0), &Posterior::two_point(m - d, m + d, 0.5).unwrap()).unwrap();
        assert!((r.gap - f2 / 2.0 * d * d).abs() < 1e-4 * (f2 / 2.0 * d * d).abs());
        assert!(r.lower < r.gap && r.gap < r.upper);
    }

    #[test]
    fn scan_recovers_analytic_extremes() {
        // over a wide hull the extremes of (4x^2 - 2) exp(-x^2) are -2 (x = 0)
        // and 4 exp(-3/2) (x^2 = 3/2)
        let r = jensen_gap_oracle(&quad(0.0), &Posterior::two_point(-3.0, 3.0, 0.5).unwrap()).unwrap();
        assert!((r.a + 2.0).abs() < 1e-6);
        assert!((r.b - 4.0 * (-1.5f64).exp()).abs() < 1e-6);
    }

    #[test]
    fn bracket_width_grows_with_variance() {
        let con = quad(0.0);
        let mut last = 0.0;
        for h in [0.01, 0.02, 0.04, 0.08] {
            // fixed hull so a and b stay put
            let p = Posterior::new(vec![-1.0, -h, h, 1.0], vec![1e-300, 0.5, 0.5, 1e-300]).unwrap();
            let r = jensen_gap_oracle(&con, &p).unwrap();
            let width = r.upper - r.lower;
            assert!(width > last);
            last = width;
        }
    }

    #[test]
    fn standard_suite_passes() {
        let report = run_standard_jensen_suite();
        assert_eq!(report.cases.len(), 17 * 8);
        let bad: Vec<_> = report.failures().collect();
        assert!(bad.is_empty(), "{bad:?}");
        for c in report.cases.iter().filter(|c| c.posterior.starts_with("point")) {
            assert_eq!((c.result.gap, c.result.lower, c.result.upper), (0.0, 0.0, 0.0));
        }
        for c in report.cases.iter().filter(|c| c.loss.starts_with("quadratic") && !c.posterior.starts_with("point")) {
            assert!(c.result.lower < c.result.gap && c.result.gap < c.result.upper, "{c:?}");
        }
    }

    #[test]
    fn rejects_vector_constraints() {
        let con = EqualityObservation::mask(vec![0], vec![0.0], 2).unwrap();
        assert!(jensen_gap_oracle(&con, &Posterior::point(0.0)).is_err());
        assert!(Posterior::new(vec![], vec![]).is_err());
        assert!(Posterior::new(vec![1.0], vec![-1.0]).is_err());
    }
}
