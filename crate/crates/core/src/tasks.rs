//! Constraint tasks over generated datasets. Missing constraint targets are
//! read off a randomly chosen held-out sample, and every task carries a
//! witness sample that satisfies it.

use ndarray::ArrayView2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::constraints::{Constraint, ConstraintSpec};
use crate::datasets::{split_holdout, HOLDOUT_FRACTION};
use crate::error::{Error, Result};

/// Loss below which an equality task counts as met by a witness.
pub const WITNESS_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    /// Dataset the task is defined on; empty means the experiment's dataset.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub dataset: String,
    pub constraint: ConstraintSpec,
}

#[derive(Debug)]
pub struct Task {
    pub name: String,
    /// The constraint description with all targets filled in.
    pub spec: ConstraintSpec,
    pub constraint: Box<dyn Constraint>,
    /// A dataset sample meeting the constraint.
    pub witness: Vec<f64>,
    /// Row of the held-out split the targets were read from.
    pub reference_row: usize,
}

fn meets(spec: &ConstraintSpec, loss: f64) -> bool {
    if spec.is_inequality() {
        loss == 0.0
    } else {
        loss < WITNESS_TOLERANCE
    }
}

/// Builds the task on `data` (the full generated set; its last
/// `HOLDOUT_FRACTION` rows are the held-out split).
pub fn make_task<R: Rng + ?Sized>(task: &TaskSpec, data: ArrayView2<f64>, rng: &mut R) -> Result<Task> {
    if data.nrows() == 0 {
        return Err(Error::Dataset(format!("task {}: empty dataset", task.name)));
    }
    let owned = data.to_owned();
    let (_, holdout) = split_holdout(&owned, HOLDOUT_FRACTION);
    let reference_row = rng.random_range(0..holdout.nrows());
    let reference = holdout.row(reference_row).to_vec();
    let spec = task.constraint.with_targets_from(&reference)?;
    let constraint = spec.build(data.ncols())?;

    let mut witness = None;
    if meets(&spec, constraint.loss(&reference)?) {
        witness = Some(reference);
    } else {
        for row in data.rows() {
            let row = row.to_vec();
            if meets(&spec, constraint.loss(&row)?) {
                witness = Some(row);
                break;
            }
        }
    }
    let witness = witness.ok_or_else(|| {
        Error::Infeasible(format!(
            "task {}: no dataset sample satisfies the constraint",
            task.name
        ))
    })?;
    Ok(Task {
        name: task.name.clone(),
        spec,
        constraint,
        witness,
        reference_row,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{generate, DatasetParams, DatasetSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn trajectories() -> ndarray::Array2<f64> {
        generate(&DatasetSpec {
            params: DatasetParams::trajectory(),
            n: 500,
            seed: 3,
        })
        .unwrap()
    }

    fn task(constraint: ConstraintSpec) -> TaskSpec {
        TaskSpec {
            name: "t".into(),
            dataset: "d".into(),
            constraint,
        }
    }

    #[test]
    fn pin_target_comes_from_holdout() {
        let data = generate(&DatasetSpec {
            params: DatasetParams::GaussianMixture {
                components: 8,
                radius: 4.0,
                std: 0.1,
            },
            n: 1000,
            seed: 1,
        })
        .unwrap();
        let t = make_task(
            &task(ConstraintSpec::Mask {
                indices: vec![0],
                target: None,
            }),
            data.view(),
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        assert!(t.reference_row < 100);
        let reference = data.row(900 + t.reference_row).to_vec();
        assert_eq!(t.constraint.loss(&reference).unwrap(), 0.0);
        assert_eq!(t.witness, reference);
    }

    #[test]
    fn min_height_feasibility() {
        let data = trajectories();
        let mh = |threshold| {
            task(ConstraintSpec::MinHeight {
                dims_per_frame: 2,
                height_dim: 1,
                threshold,
            })
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = make_task(&mh(0.6), data.view(), &mut rng).unwrap();
        assert_eq!(t.constraint.loss(&t.witness).unwrap(), 0.0);
        let err = make_task(&mh(2.0), data.view(), &mut rng).unwrap_err();
        assert!(matches!(err, Error::Infeasible(_)));
    }

    #[test]
    fn off_manifold_obstacle_is_free() {
        let data = trajectories();
        let t = make_task(
            &task(ConstraintSpec::Obstacle {
                dims_per_frame: 2,
                center: vec![0.0, 50.0],
                radius: 1.0,
            }),
            data.view(),
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        let con = &t.constraint;
        assert!(data.rows().into_iter().all(|r| con.loss(&r.to_vec()).unwrap() == 0.0));
    }

    #[test]
    fn deterministic_per_seed() {
        let data = trajectories();
        let spec = task(ConstraintSpec::Average {
            block: 4,
            dims_per_frame: Some(2),
            target: None,
        });
        let a = make_task(&spec, data.view(), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = make_task(&spec, data.view(), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a.spec, b.spec);
        assert!(a.constraint.loss(&a.witness).unwrap() < WITNESS_TOLERANCE);
    }
}
