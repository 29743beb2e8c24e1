//! Guided and unguided reverse samplers.

pub mod calibrate;
pub mod schedule;
pub mod trust;

pub use calibrate::{calibrate_epsilon_max, Calibration, DEFAULT_MARGIN};
pub use schedule::{iteration_limit, nfe_budget_for, nfe_upper_bound, ScheduleKind, TrustSchedule};
pub use trust::{ddim_sample, trust_sample, ChainRng, NoisePredictor, SampleTrace, SamplerConfig, StepTrace};
