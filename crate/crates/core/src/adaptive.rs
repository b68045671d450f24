//! Uncertainty-driven sampling of the parameter grid.
//!
//! Each iteration rolls the current model out at every grid point, measures
//! the ensemble spread `ν_ξ` of each rollout and retrains on new data at the
//! untrained point of highest `ν_ξ`. Validation errors are recorded when
//! available but never influence the choice.

use std::cmp::Ordering;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{split_even_odd, Generator, ParamPoint, Trajectory};
use crate::metrics::{pearson, scaled_mse};
use crate::training::{retrain, ModelCheckpoint};
use crate::uq::{aggregate_param, nu_xi_csv, second_pass, UqConfig};
use crate::{rng, Error, Result};

pub const HISTORY_FILE: &str = "adaptive_history.json";

/// Supplies full-rate trajectories; the loop applies the even/odd split.
pub trait TrajectorySource: Sync {
    fn trajectory(&self, xi: &ParamPoint) -> Result<Trajectory>;
}

impl TrajectorySource for Generator {
    fn trajectory(&self, xi: &ParamPoint) -> Result<Trajectory> {
        self.generate(xi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptiveConfig {
    /// Maximum number of retraining iterations.
    pub budget: usize,
    /// Stop once every untrained `ν_ξ` is below this.
    pub threshold: f64,
    pub replay_fraction: f64,
    /// `None` uses the checkpoint's own retraining default.
    pub retrain_epochs: Option<usize>,
    /// Record scaled MSE against the held-out half at every grid point.
    pub validate: bool,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        Self {
            budget: 5,
            threshold: 0.0,
            replay_fraction: 0.25,
            retrain_epochs: None,
            validate: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointRecord {
    pub param: ParamPoint,
    /// `None` when the rollout diverged; selection treats that as infinite.
    pub nu_xi: Option<f64>,
    pub scaled_mse: Option<f64>,
    pub trained: bool,
    pub chosen: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub points: Vec<PointRecord>,
    pub chosen: Option<ParamPoint>,
    /// `pearson(ν_ξ, scaled MSE)` over the points where both exist.
    pub pearson: Option<f64>,
}

impl IterationRecord {
    pub fn nu_grid(&self) -> Vec<(ParamPoint, f64)> {
        self.points
            .iter()
            .map(|p| (p.param.clone(), p.nu_xi.unwrap_or(f64::INFINITY)))
            .collect()
    }

    pub fn trained(&self) -> Vec<ParamPoint> {
        self.points.iter().filter(|p| p.trained).map(|p| p.param.clone()).collect()
    }

    /// Largest scaled MSE over the grid, if every point was validated.
    pub fn max_scaled_mse(&self) -> Option<f64> {
        self.points
            .iter()
            .map(|p| p.scaled_mse)
            .try_fold(f64::NEG_INFINITY, |m, v| v.map(|v| m.max(v)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveState {
    pub param_grid: Vec<ParamPoint>,
    pub trained_set: Vec<ParamPoint>,
    pub history: Vec<IterationRecord>,
}

impl AdaptiveState {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Name-then-value ordering of parameter points.
pub fn param_order(a: &ParamPoint, b: &ParamPoint) -> Ordering {
    let mut x = a.iter();
    let mut y = b.iter();
    loop {
        match (x.next(), y.next()) {
            (None, None) => return Ordering::Equal,
            (None, Some(_)) => return Ordering::Less,
            (Some(_), None) => return Ordering::Greater,
            (Some((ka, va)), Some((kb, vb))) => {
                let o = ka.cmp(kb).then(va.total_cmp(&vb));
                if o != Ordering::Equal {
                    return o;
                }
            }
        }
    }
}

/// The untrained point with the largest `ν_ξ`; ties go to the smallest point
/// in [`param_order`].
pub fn select_next(nu_grid: &[(ParamPoint, f64)], trained: &[ParamPoint]) -> Result<ParamPoint> {
    nu_grid
        .iter()
        .filter(|(p, _)| !trained.contains(p))
        .min_by(|(pa, a), (pb, b)| b.total_cmp(a).then_with(|| param_order(pa, pb)))
        .map(|(p, _)| p.clone())
        .ok_or_else(|| Error::InvalidInput("no untrained grid point left to select".into()))
}

pub struct LoopSetup<'a> {
    pub grid: &'a [ParamPoint],
    /// Points the initial checkpoint was trained on; must lie on the grid.
    pub trained: &'a [ParamPoint],
    pub config: &'a AdaptiveConfig,
    pub uq: &'a UqConfig,
    pub seed: u64,
    /// History, CSVs and the latest checkpoint are written here.
    pub out_dir: Option<&'a Path>,
}

pub struct LoopOutcome {
    pub state: AdaptiveState,
    pub checkpoint: ModelCheckpoint,
}

struct Evaluation {
    nu_xi: Option<f64>,
    scaled_mse: Option<f64>,
}

/// Rolls out from the first `q` snapshots of `test` over its full length.
fn evaluate(ckpt: &ModelCheckpoint, test: &Trajectory, uq: &UqConfig, validate: bool) -> Result<Evaluation> {
    let q = ckpt.lookback();
    let steps = test.n_t().saturating_sub(q);
    let pred = match ckpt.predict(test, steps) {
        Ok(p) => p,
        Err(Error::Divergence { .. }) => {
            return Ok(Evaluation {
                nu_xi: None,
                scaled_mse: None,
            })
        }
        Err(e) => return Err(e),
    };
    let field = second_pass(&pred, ckpt, uq.ensemble_size, uq.seed)?.field;
    let scaled = if validate {
        Some(scaled_mse(&pred, &test.window(q, test.n_t())?)?.mean)
    } else {
        None
    };
    Ok(Evaluation {
        nu_xi: Some(aggregate_param(&field)),
        scaled_mse: scaled,
    })
}

fn fetch(source: &dyn TrajectorySource, xi: &ParamPoint) -> Result<(Trajectory, Trajectory)> {
    source
        .trajectory(xi)
        .and_then(|t| split_even_odd(&t))
        .map_err(|e| Error::Generator {
            param: xi.to_string(),
            source: Box::new(e),
        })
}

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| Error::io(path, e))
}

fn mse_csv(points: &[PointRecord]) -> String {
    let mut out = String::new();
    if let Some(p) = points.first() {
        for (k, _) in p.param.iter() {
            out.push_str(k);
            out.push(',');
        }
    }
    out.push_str("scaled_mse\n");
    for p in points {
        for (_, x) in p.param.iter() {
            out.push_str(&format!("{x},"));
        }
        match p.scaled_mse {
            Some(v) => out.push_str(&format!("{v}\n")),
            None => out.push_str("nan\n"),
        }
    }
    out
}

fn persist(dir: &Path, state: &AdaptiveState, ckpt: &ModelCheckpoint) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(dir, HISTORY_FILE, &state.to_json()?)?;
    ckpt.save(&dir.join("checkpoint"))
}

/// Runs iteration 0 (the initial model) and up to `budget` retraining
/// iterations, each followed by a fresh evaluation of the whole grid.
pub fn run_loop(initial: ModelCheckpoint, source: &dyn TrajectorySource, setup: &LoopSetup<'_>) -> Result<LoopOutcome> {
    let cfg = setup.config;
    if cfg.budget == 0 {
        return Err(Error::InvalidInput("adaptive budget must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&cfg.replay_fraction) {
        return Err(Error::InvalidInput(format!(
            "replay fraction must be in [0, 1], got {}",
            cfg.replay_fraction
        )));
    }
    if setup.grid.is_empty() {
        return Err(Error::InvalidInput("empty parameter grid".into()));
    }
    if let Some(p) = setup.trained.iter().find(|p| !setup.grid.contains(p)) {
        return Err(Error::InvalidInput(format!("trained point {p} is not on the grid")));
    }
    let splits: Vec<(Trajectory, Trajectory)> = setup
        .grid
        .par_iter()
        .map(|xi| fetch(source, xi))
        .collect::<Result<_>>()?;
    let mut prior: Vec<Trajectory> = setup
        .trained
        .iter()
        .map(|p| splits[setup.grid.iter().position(|g| g == p).expect("checked")].0.clone())
        .collect();
    let mut state = AdaptiveState {
        param_grid: setup.grid.to_vec(),
        trained_set: setup.trained.to_vec(),
        history: Vec::new(),
    };
    let mut ckpt = initial;
    for iteration in 0..=cfg.budget {
        let evals: Vec<Evaluation> = splits
            .par_iter()
            .map(|(_, test)| evaluate(&ckpt, test, setup.uq, cfg.validate))
            .collect::<Result<_>>()?;
        let mut record = IterationRecord {
            iteration,
            points: setup
                .grid
                .iter()
                .zip(&evals)
                .map(|(p, e)| PointRecord {
                    param: p.clone(),
                    nu_xi: e.nu_xi,
                    scaled_mse: e.scaled_mse,
                    trained: state.trained_set.contains(p),
                    chosen: false,
                })
                .collect(),
            chosen: None,
            pearson: None,
        };
        let (nu, err): (Vec<f64>, Vec<f64>) = record
            .points
            .iter()
            .filter_map(|p| Some((p.nu_xi?, p.scaled_mse?)))
            .unzip();
        record.pearson = pearson(&nu, &err).ok();

        let untrained_max = record
            .nu_grid()
            .into_iter()
            .filter(|(p, _)| !state.trained_set.contains(p))
            .map(|(_, v)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        let done = iteration == cfg.budget || untrained_max == f64::NEG_INFINITY || untrained_max < cfg.threshold;
        if !done {
            let next = select_next(&record.nu_grid(), &state.trained_set)?;
            for p in &mut record.points {
                p.chosen = p.param == next;
            }
            record.chosen = Some(next);
        }
        if let Some(dir) = setup.out_dir {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let rows: Vec<(ParamPoint, f64)> = record.nu_grid();
            write(dir, &format!("iter{iteration}_nu.csv"), &nu_xi_csv(&rows))?;
            if cfg.validate {
                write(dir, &format!("iter{iteration}_mse.csv"), &mse_csv(&record.points))?;
            }
        }
        let chosen = record.chosen.clone();
        state.history.push(record);
        let Some(next) = chosen else { break };

        let train_half = match fetch(source, &next) {
            Ok((train, _)) => train,
            Err(e) => {
                if let Some(dir) = setup.out_dir {
                    persist(dir, &state, &ckpt)?;
                }
                return Err(e);
            }
        };
        let epochs = cfg.retrain_epochs.unwrap_or_else(|| ckpt.train_config.retrain_epochs());
        ckpt = retrain(
            &ckpt,
            std::slice::from_ref(&train_half),
            &prior,
            cfg.replay_fraction,
            epochs,
            rng::derive(setup.seed, &[iteration as u64]),
        )?;
        prior.push(train_half);
        state.trained_set.push(next);
    }
    if let Some(dir) = setup.out_dir {
        persist(dir, &state, &ckpt)?;
    }
    Ok(LoopOutcome { state, checkpoint: ckpt })
}
