use serde::{Deserialize, Serialize};

use super::Trajectory;
use crate::{Error, Result};

pub const VARIANCE_FLOOR: f64 = 1e-8;

/// Per-feature affine map to zero mean and unit variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Features whose variance was raised to [`VARIANCE_FLOOR`].
    pub floored: Vec<bool>,
}

impl NormStats {
    /// Statistics over every snapshot of `dataset`.
    pub fn fit(dataset: &[Trajectory]) -> Result<Self> {
        let first = dataset
            .first()
            .ok_or_else(|| Error::InvalidInput("cannot fit statistics on an empty dataset".into()))?;
        let n_xy = first.n_xy();
        let mut count = 0usize;
        let mut mean = vec![0.0; n_xy];
        for traj in dataset {
            if traj.n_xy() != n_xy {
                return Err(Error::Dimension {
                    context: "normalisation",
                    expected: n_xy,
                    got: traj.n_xy(),
                });
            }
            for snap in traj.snapshots() {
                for (m, v) in mean.iter_mut().zip(snap) {
                    *m += v;
                }
                count += 1;
            }
        }
        for m in &mut mean {
            *m /= count as f64;
        }
        let mut var = vec![0.0; n_xy];
        for snap in dataset.iter().flat_map(Trajectory::snapshots) {
            for ((acc, v), m) in var.iter_mut().zip(snap).zip(&mean) {
                *acc += (v - m) * (v - m);
            }
        }
        let floored: Vec<bool> = var
            .iter_mut()
            .map(|v| {
                *v /= count as f64;
                *v < VARIANCE_FLOOR
            })
            .collect();
        let std = var.iter().map(|v| v.max(VARIANCE_FLOOR).sqrt()).collect();
        Ok(Self { mean, std, floored })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn forward_row(&self, row: &mut [f64]) {
        for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = (*v - m) / s;
        }
    }

    pub fn inverse_row(&self, row: &mut [f64]) {
        for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = *v * s + m;
        }
    }

    /// Applies `f` to every snapshot of a copy of `traj`.
    fn map(&self, traj: &Trajectory, f: impl Fn(&Self, &mut [f64])) -> Result<Trajectory> {
        if traj.n_xy() != self.dim() {
            return Err(Error::Dimension {
                context: "normalisation",
                expected: self.dim(),
                got: traj.n_xy(),
            });
        }
        let mut states = traj.states().to_vec();
        for row in states.chunks_exact_mut(self.dim()) {
            f(self, row);
        }
        Trajectory::new(states, traj.n_xy(), traj.dt, traj.grid.clone(), traj.param.clone())
    }

    pub fn apply(&self, traj: &Trajectory) -> Result<Trajectory> {
        self.map(traj, Self::forward_row)
    }

    pub fn invert(&self, traj: &Trajectory) -> Result<Trajectory> {
        self.map(traj, Self::inverse_row)
    }
}

/// Fits statistics on `dataset` and returns it standardised.
pub fn normalize(dataset: &[Trajectory]) -> Result<(Vec<Trajectory>, NormStats)> {
    let stats = NormStats::fit(dataset)?;
    let out = dataset.iter().map(|t| stats.apply(t)).collect::<Result<_>>()?;
    Ok((out, stats))
}
