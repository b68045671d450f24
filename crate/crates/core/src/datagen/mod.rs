//! Trajectory datasets: the Kuramoto–Sivashinsky benchmark, a Stuart–Landau
//! (Hopf) surrogate for a bifurcating flow, the UPDR file format, the
//! even/odd train/test split and per-feature standardisation.

mod case;
mod hopf;
mod io;
mod ks;
mod normalize;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use case::{Case, Generator};
pub use hopf::{lift_amplitude, mode_shapes, solve_hopf_surrogate, HopfSettings, HopfSolution};
pub use io::{meta_path, read_trajectory, write_trajectory, FORMAT_VERSION, MAGIC};
pub use ks::{ks_initial_profile, solve_ks, KsSettings};
pub use normalize::{normalize, NormStats, VARIANCE_FLOOR};

/// External parameter values ξ, keyed by name.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamPoint(BTreeMap<String, f64>);

impl ParamPoint {
    pub fn new<S: Into<String>>(values: impl IntoIterator<Item = (S, f64)>) -> Self {
        Self(values.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }

    pub fn single(name: &str, value: f64) -> Self {
        Self::new([(name, value)])
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.0.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Entries in ascending name order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn is_finite(&self) -> bool {
        self.0.values().all(|v| v.is_finite())
    }
}

impl fmt::Display for ParamPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (k, v) in self.iter() {
            if !first {
                f.write_str(",")?;
            }
            write!(f, "{k}={v}")?;
            first = false;
        }
        Ok(())
    }
}

/// Declared parameter names with the range used to scale them to `[-1, 1]`
/// before they enter a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamSchema {
    pub names: Vec<String>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ParamSchema {
    pub fn new(entries: &[(&str, f64, f64)]) -> Self {
        Self {
            names: entries.iter().map(|e| e.0.to_string()).collect(),
            lower: entries.iter().map(|e| e.1).collect(),
            upper: entries.iter().map(|e| e.2).collect(),
        }
    }

    /// Names of the first point with bounds spanning every point.
    pub fn spanning(points: &[ParamPoint]) -> Result<Self> {
        let first = points
            .first()
            .ok_or_else(|| Error::InvalidInput("cannot derive a schema from no points".into()))?;
        let names: Vec<String> = first.iter().map(|(k, _)| k.to_string()).collect();
        let mut schema = Self {
            lower: vec![f64::INFINITY; names.len()],
            upper: vec![f64::NEG_INFINITY; names.len()],
            names,
        };
        for p in points {
            for (i, v) in schema.values(p)?.into_iter().enumerate() {
                schema.lower[i] = schema.lower[i].min(v);
                schema.upper[i] = schema.upper[i].max(v);
            }
        }
        Ok(schema)
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    /// Checks that `point` carries exactly the schema's names with finite values.
    pub fn validate(&self, point: &ParamPoint) -> Result<()> {
        if !point.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite parameter in {point}")));
        }
        let names_match = point.len() == self.names.len()
            && self.names.iter().all(|n| point.get(n).is_some());
        if !names_match {
            return Err(Error::Schema(format!(
                "parameter point {point} does not match schema {:?}",
                self.names
            )));
        }
        Ok(())
    }

    /// Values in schema order, affinely mapped so `lower -> -1`, `upper -> 1`.
    pub fn encode(&self, point: &ParamPoint) -> Result<Vec<f64>> {
        self.validate(point)?;
        Ok(self
            .names
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(n, (&lo, &hi))| {
                let v = point.get(n).expect("validated");
                if hi > lo {
                    2.0 * (v - lo) / (hi - lo) - 1.0
                } else {
                    0.0
                }
            })
            .collect())
    }

    /// Raw values in schema order.
    pub fn values(&self, point: &ParamPoint) -> Result<Vec<f64>> {
        self.validate(point)?;
        Ok(self.names.iter().map(|n| point.get(n).expect("validated")).collect())
    }
}

/// Spatial discretisation of a state vector: `channels` fields stacked over a
/// uniform periodic grid of `shape` points spanning `extent`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub shape: Vec<usize>,
    pub extent: Vec<f64>,
    pub channels: usize,
}

impl Grid {
    pub fn line(n: usize, length: f64) -> Self {
        Self {
            shape: vec![n],
            extent: vec![length],
            channels: 1,
        }
    }

    pub fn points(&self) -> usize {
        self.shape.iter().product()
    }

    /// Length of the state vector.
    pub fn size(&self) -> usize {
        self.points() * self.channels
    }

    pub fn spacing(&self) -> Vec<f64> {
        self.extent
            .iter()
            .zip(&self.shape)
            .map(|(e, &n)| e / n as f64)
            .collect()
    }
}

/// Time series of state vectors, stored time-major (`n_t × n_xy`).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    states: Vec<f64>,
    n_t: usize,
    n_xy: usize,
    pub dt: f64,
    pub grid: Grid,
    pub param: ParamPoint,
}

impl Trajectory {
    pub fn new(states: Vec<f64>, n_xy: usize, dt: f64, grid: Grid, param: ParamPoint) -> Result<Self> {
        if n_xy == 0 || states.len() % n_xy != 0 {
            return Err(Error::InvalidInput(format!(
                "state buffer of length {} is not a multiple of n_xy = {n_xy}",
                states.len()
            )));
        }
        let n_t = states.len() / n_xy;
        if n_t < 2 {
            return Err(Error::InvalidInput(format!("trajectory needs n_t >= 2, got {n_t}")));
        }
        if grid.size() != n_xy {
            return Err(Error::Dimension {
                context: "trajectory grid",
                expected: n_xy,
                got: grid.size(),
            });
        }
        if let Some(i) = states.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite state at t = {}, d = {}",
                i / n_xy,
                i % n_xy
            )));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidInput(format!("dt must be positive, got {dt}")));
        }
        Ok(Self {
            states,
            n_t,
            n_xy,
            dt,
            grid,
            param,
        })
    }

    /// Builds a trajectory from snapshots, inheriting metadata from `like`.
    pub fn from_snapshots<'a>(
        snapshots: impl IntoIterator<Item = &'a [f64]>,
        like: &Trajectory,
        dt: f64,
    ) -> Result<Self> {
        let states: Vec<f64> = snapshots.into_iter().flatten().copied().collect();
        Self::new(states, like.n_xy, dt, like.grid.clone(), like.param.clone())
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn n_xy(&self) -> usize {
        self.n_xy
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn snapshot(&self, t: usize) -> &[f64] {
        &self.states[t * self.n_xy..(t + 1) * self.n_xy]
    }

    pub fn snapshots(&self) -> impl Iterator<Item = &[f64]> {
        self.states.chunks_exact(self.n_xy)
    }

    /// Snapshots `start..end` as a new trajectory with the same time step.
    pub fn window(&self, start: usize, end: usize) -> Result<Self> {
        if end > self.n_t || start >= end {
            return Err(Error::InvalidInput(format!(
                "window {start}..{end} out of range for n_t = {}",
                self.n_t
            )));
        }
        Self::new(
            self.states[start * self.n_xy..end * self.n_xy].to_vec(),
            self.n_xy,
            self.dt,
            self.grid.clone(),
            self.param.clone(),
        )
    }

    pub fn max_abs(&self) -> f64 {
        self.states.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Even time indices to `train`, odd to `test`; both step at `2·dt`.
pub fn split_even_odd(traj: &Trajectory) -> Result<(Trajectory, Trajectory)> {
    if traj.n_t() < 4 {
        return Err(Error::InvalidInput(format!(
            "even/odd split needs n_t >= 4, got {}",
            traj.n_t()
        )));
    }
    let pick = |parity: usize| {
        Trajectory::from_snapshots(
            traj.snapshots().skip(parity).step_by(2),
            traj,
            2.0 * traj.dt,
        )
    };
    Ok((pick(0)?, pick(1)?))
}
