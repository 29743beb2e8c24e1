//! Trust schedules: per-step caps on the number of inner gradient iterations.
//!
//! The expected cap at inference step `k` of `K` (counted from the noisiest
//! step) is `start + (end - start) (k - 1) / (K - 1)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant,
    /// Deterministic integer caps following the expected line. When the line
    /// passes through non-integers the caps are the increments of the rounded
    /// running sum, so every cap is within one of its expectation and the
    /// total equals the expected total.
    Linear,
    /// Caps rounded up at random with probability equal to the fractional part.
    StochasticLinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrustSchedule {
    kind: ScheduleKind,
    start: f64,
    end: f64,
    #[serde(default)]
    reversed: bool,
}

impl TrustSchedule {
    pub fn new(kind: ScheduleKind, start: f64, end: f64) -> Result<Self> {
        let s = Self {
            kind,
            start,
            end,
            reversed: false,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn constant(c: usize) -> Self {
        Self {
            kind: ScheduleKind::Constant,
            start: c as f64,
            end: c as f64,
            reversed: false,
        }
    }

    pub fn linear(start: f64, end: f64) -> Result<Self> {
        Self::new(ScheduleKind::Linear, start, end)
    }

    pub fn stochastic_linear(start: f64, end: f64) -> Result<Self> {
        Self::new(ScheduleKind::StochasticLinear, start, end)
    }

    /// Applies `start` at the cleanest step and `end` at the noisiest instead.
    pub fn reversed(mut self, reversed: bool) -> Self {
        self.reversed = reversed;
        self
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    pub fn is_reversed(&self) -> bool {
        self.reversed
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.start >= 0.0 && self.end >= 0.0 && self.start.is_finite() && self.end.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "trust schedule bounds must be finite and >= 0, got {} and {}",
                self.start, self.end
            )));
        }
        match self.kind {
            ScheduleKind::Constant if self.start != self.end => Err(Error::InvalidArgument(
                format!("constant schedule needs start == end, got {} and {}", self.start, self.end),
            )),
            ScheduleKind::Constant if self.start.fract() != 0.0 => Err(Error::InvalidArgument(
                format!("constant schedule needs an integer cap, got {}", self.start),
            )),
            _ => Ok(()),
        }
    }

    /// Checks the schedule against a concrete step count.
    pub fn validate_for(&self, steps: usize) -> Result<()> {
        self.validate()?;
        if steps == 0 {
            return Err(Error::InvalidArgument("schedule needs K >= 1".into()));
        }
        if self.kind == ScheduleKind::Linear {
            let total = self.cumulative(steps, steps);
            if (total - total.round()).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "linear schedule {}->{} over {steps} steps has non-integer total {total}; \
                     use stochastic_linear",
                    self.start, self.end
                )));
            }
        }
        Ok(())
    }

    fn position(&self, k: usize, steps: usize) -> usize {
        if self.reversed {
            steps + 1 - k
        } else {
            k
        }
    }

    /// `E[J_k]` for inference step `k` in `1..=K`.
    pub fn expected(&self, k: usize, steps: usize) -> f64 {
        let k = self.position(k, steps);
        if steps == 1 {
            return self.start;
        }
        self.start + (self.end - self.start) * (k - 1) as f64 / (steps - 1) as f64
    }

    /// `sum_{i <= k} E[J_i]` in schedule orientation.
    fn cumulative(&self, k: usize, steps: usize) -> f64 {
        if steps == 1 {
            return if k >= 1 { self.start } else { 0.0 };
        }
        let k = k as f64;
        k * self.start + (self.end - self.start) * k * (k - 1.0) / (2.0 * (steps - 1) as f64)
    }

    /// `sum_k E[J_k]`.
    pub fn expected_total(&self, steps: usize) -> f64 {
        self.cumulative(steps, steps)
    }
}

/// Cap `J_k` for inference step `k` of `steps`, drawing from `rng` only for
/// stochastic schedules.
pub fn iteration_limit<R: Rng + ?Sized>(
    schedule: &TrustSchedule,
    k: usize,
    steps: usize,
    rng: &mut R,
) -> Result<usize> {
    if k == 0 || k > steps {
        return Err(Error::InvalidArgument(format!(
            "inference step {k} outside 1..={steps}"
        )));
    }
    Ok(match schedule.kind {
        ScheduleKind::Constant => schedule.start as usize,
        ScheduleKind::Linear => {
            let p = schedule.position(k, steps);
            let hi = schedule.cumulative(p, steps).round();
            let lo = schedule.cumulative(p - 1, steps).round();
            (hi - lo).max(0.0) as usize
        }
        ScheduleKind::StochasticLinear => {
            let e = schedule.expected(k, steps);
            let base = e.floor();
            let frac = e - base;
            let up = frac > 0.0 && rng.random::<f64>() < frac;
            base as usize + usize::from(up)
        }
    })
}

/// `K + sum_k E[J_k]`: the network-pass budget of a trust sampler run with
/// boundary checks disabled (an expectation for stochastic schedules).
pub fn nfe_budget_for(schedule: &TrustSchedule, steps: usize) -> f64 {
    steps as f64 + schedule.expected_total(steps)
}

/// Largest number of network passes any single run can use.
pub fn nfe_upper_bound(schedule: &TrustSchedule, steps: usize) -> u64 {
    let inner: u64 = (1..=steps)
        .map(|k| match schedule.kind {
            ScheduleKind::StochasticLinear => schedule.expected(k, steps).ceil() as u64,
            _ => iteration_limit(schedule, k, steps, &mut NoDraws).unwrap_or(0) as u64,
        })
        .sum();
    steps as u64 + inner
}

/// Deterministic schedules never draw; this rng makes that explicit.
struct NoDraws;

impl rand::RngCore for NoDraws {
    fn next_u32(&mut self) -> u32 {
        unreachable!("deterministic schedule drew a random number")
    }
    fn next_u64(&mut self) -> u64 {
        unreachable!("deterministic schedule drew a random number")
    }
    fn fill_bytes(&mut self, _: &mut [u8]) {
        unreachable!("deterministic schedule drew a random number")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn limits(s: &TrustSchedule, steps: usize, seed: u64) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (1..=steps).map(|k| iteration_limit(s, k, steps, &mut rng).unwrap()).collect()
    }

    #[test]
    fn constant_four_every_step() {
        let s = TrustSchedule::constant(4);
        assert!(limits(&s, 200, 0).iter().all(|&j| j == 4));
        assert_eq!(nfe_budget_for(&s, 200), 1000.0);
    }

    #[test]
    fn budget_table_rows() {
        assert_eq!(nfe_budget_for(&TrustSchedule::linear(0.0, 4.0).unwrap(), 200), 600.0);
        assert_eq!(nfe_budget_for(&TrustSchedule::stochastic_linear(2.0, 6.0).unwrap(), 200), 1000.0);
        assert_eq!(nfe_budget_for(&TrustSchedule::stochastic_linear(0.0, 8.0).unwrap(), 200), 1000.0);
        assert_eq!(nfe_budget_for(&TrustSchedule::constant(0), 200), 200.0);
    }

    #[test]
    fn linear_caps_sum_exactly_and_track_expectation() {
        let s = TrustSchedule::linear(0.0, 4.0).unwrap();
        s.validate_for(200).unwrap();
        let j = limits(&s, 200, 0);
        assert_eq!(j.iter().sum::<usize>(), 400);
        for (k, &jk) in j.iter().enumerate() {
            assert!((jk as f64 - s.expected(k + 1, 200)).abs() < 1.0);
        }
        assert_eq!(j[0], 0);
        assert_eq!(*j.last().unwrap(), 4);
    }

    #[test]
    fn integer_linear_is_exact() {
        let s = TrustSchedule::linear(1.0, 5.0).unwrap();
        assert_eq!(limits(&s, 5, 0), vec![1, 2, 3, 4, 5]);
        let r = s.reversed(true);
        assert_eq!(limits(&r, 5, 0), vec![5, 4, 3, 2, 1]);
    }

    #[test]
    fn linear_rejects_fractional_total() {
        let s = TrustSchedule::linear(0.0, 1.0).unwrap();
        assert!(s.validate_for(3).is_err());
        assert!(s.validate_for(4).is_ok());
    }

    #[test]
    fn construction_errors() {
        assert!(TrustSchedule::new(ScheduleKind::Constant, 2.0, 3.0).is_err());
        assert!(TrustSchedule::new(ScheduleKind::Constant, 2.5, 2.5).is_err());
        assert!(TrustSchedule::new(ScheduleKind::StochasticLinear, -1.0, 3.0).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(iteration_limit(&TrustSchedule::constant(1), 0, 5, &mut rng).is_err());
        assert!(iteration_limit(&TrustSchedule::constant(1), 6, 5, &mut rng).is_err());
    }

    #[test]
    fn single_step_uses_start() {
        let s = TrustSchedule::stochastic_linear(3.0, 9.0).unwrap();
        assert_eq!(s.expected(1, 1), 3.0);
        assert_eq!(limits(&s, 1, 0), vec![3]);
    }

    #[test]
    fn stochastic_rounding_mean() {
        // E[J] = 2.5 at every step
        let s = TrustSchedule::stochastic_linear(2.5, 2.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12345);
        let draws: Vec<usize> = (0..10_000).map(|_| iteration_limit(&s, 1, 1, &mut rng).unwrap()).collect();
        assert!(draws.iter().all(|&j| j == 2 || j == 3));
        let mean = draws.iter().sum::<usize>() as f64 / draws.len() as f64;
        assert!((2.475..=2.525).contains(&mean), "mean {mean}");
    }

    #[test]
    fn upper_bounds() {
        assert_eq!(nfe_upper_bound(&TrustSchedule::constant(4), 200), 1000);
        assert_eq!(nfe_upper_bound(&TrustSchedule::linear(0.0, 4.0).unwrap(), 200), 600);
        assert!(nfe_upper_bound(&TrustSchedule::stochastic_linear(2.0, 6.0).unwrap(), 200) >= 1000);
    }
}
