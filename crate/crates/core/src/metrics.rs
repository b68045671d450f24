//! Evaluation quantities. All functions are pure and operate on flat
//! time-major arrays or [`Trajectory`] values.

use serde::{Deserialize, Serialize};

use crate::datagen::Trajectory;
use crate::{Error, Result};

/// Floor added to the squared temporal range in [`scaled_mse`].
pub const SCALED_MSE_FLOOR: f64 = 1e-8;

fn check_same(pred: &Trajectory, truth: &Trajectory, context: &'static str) -> Result<()> {
    if pred.n_xy() != truth.n_xy() {
        return Err(Error::Dimension {
            context,
            expected: truth.n_xy(),
            got: pred.n_xy(),
        });
    }
    if pred.n_t() != truth.n_t() {
        return Err(Error::Dimension {
            context,
            expected: truth.n_t(),
            got: pred.n_t(),
        });
    }
    Ok(())
}

/// `k_t = Σ_d (u² + v² + …) / (2 n_points)` where the state vector stacks
/// `channels` fields of `n_points` values each; a scalar field has one channel.
pub fn kinetic_energy(traj: &Trajectory) -> Vec<f64> {
    let points = traj.grid.points().max(1) as f64;
    traj.snapshots()
        .map(|s| s.iter().map(|v| v * v).sum::<f64>() / (2.0 * points))
        .collect()
}

/// `Σ(Φ̂ − Φ)² / ΣΦ² × 100`.
pub fn relative_mse(pred: &Trajectory, truth: &Trajectory) -> Result<f64> {
    check_same(pred, truth, "relative mse")?;
    relative_mse_slices(pred.states(), truth.states())
}

pub fn relative_mse_slices(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Dimension {
            context: "relative mse",
            expected: truth.len(),
            got: pred.len(),
        });
    }
    let energy: f64 = truth.iter().map(|v| v * v).sum();
    if energy == 0.0 {
        return Err(Error::ZeroEnergy("relative mse"));
    }
    let err: f64 = pred.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(100.0 * err / energy)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaledMse {
    /// One value per state component.
    pub per_point: Vec<f64>,
    pub mean: f64,
}

/// Per component `d`: `mean_t (Φ̂ − Φ)² / (range_t(Φ_d)² + ε)`.
pub fn scaled_mse(pred: &Trajectory, truth: &Trajectory) -> Result<ScaledMse> {
    check_same(pred, truth, "scaled mse")?;
    let n_xy = truth.n_xy();
    let n_t = truth.n_t() as f64;
    let mut lo = vec![f64::INFINITY; n_xy];
    let mut hi = vec![f64::NEG_INFINITY; n_xy];
    let mut mse = vec![0.0; n_xy];
    for (p, t) in pred.snapshots().zip(truth.snapshots()) {
        for d in 0..n_xy {
            lo[d] = lo[d].min(t[d]);
            hi[d] = hi[d].max(t[d]);
            mse[d] += (p[d] - t[d]) * (p[d] - t[d]) / n_t;
        }
    }
    let per_point: Vec<f64> = (0..n_xy)
        .map(|d| mse[d] / ((hi[d] - lo[d]).powi(2) + SCALED_MSE_FLOOR))
        .collect();
    let mean = per_point.iter().sum::<f64>() / n_xy as f64;
    Ok(ScaledMse { per_point, mean })
}

fn check_ensemble(ensemble: &[&[f64]], truth: &[f64]) -> Result<()> {
    if ensemble.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "CRPS needs at least two members, got {}",
            ensemble.len()
        )));
    }
    if let Some(bad) = ensemble.iter().find(|m| m.len() != truth.len()) {
        return Err(Error::Dimension {
            context: "crps member",
            expected: truth.len(),
            got: bad.len(),
        });
    }
    Ok(())
}

/// Ensemble score with squared differences:
/// `(1/n) Σᵢ (xᵢ − y)² − (1/2n²) Σᵢ Σⱼ (xᵢ − xⱼ)²`, per element, averaged.
///
/// The pair sum is evaluated through `ΣᵢΣⱼ (xᵢ − xⱼ)² = 2n Σᵢ (xᵢ − x̄)²`.
pub fn crps_printed(ensemble: &[&[f64]], truth: &[f64]) -> Result<f64> {
    check_ensemble(ensemble, truth)?;
    let n = ensemble.len() as f64;
    let mut total = 0.0;
    for (e, &y) in truth.iter().enumerate() {
        let mean = ensemble.iter().map(|m| m[e]).sum::<f64>() / n;
        let mut skill = 0.0;
        let mut spread = 0.0;
        for m in ensemble {
            skill += (m[e] - y) * (m[e] - y);
            spread += (m[e] - mean) * (m[e] - mean);
        }
        total += skill / n - spread / n;
    }
    Ok(total / truth.len() as f64)
}

/// Standard ensemble CRPS `(1/n) Σᵢ |xᵢ − y| − (1/2n²) Σᵢ Σⱼ |xᵢ − xⱼ|`,
/// per element, averaged.
pub fn crps_abs(ensemble: &[&[f64]], truth: &[f64]) -> Result<f64> {
    check_ensemble(ensemble, truth)?;
    let n = ensemble.len();
    let nf = n as f64;
    let mut column = vec![0.0; n];
    let mut total = 0.0;
    for (e, &y) in truth.iter().enumerate() {
        for (c, m) in column.iter_mut().zip(ensemble) {
            *c = m[e];
        }
        let skill = column.iter().map(|x| (x - y).abs()).sum::<f64>() / nf;
        column.sort_by(f64::total_cmp);
        // Σᵢ Σⱼ |xᵢ − xⱼ| = 2 Σᵢ (2i − n + 1) x₍ᵢ₎ for sorted values.
        let pairs: f64 = column
            .iter()
            .enumerate()
            .map(|(i, x)| (2.0 * i as f64 - nf + 1.0) * x)
            .sum::<f64>()
            * 2.0;
        total += skill - pairs / (2.0 * nf * nf);
    }
    Ok(total / truth.len() as f64)
}

/// Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Dimension {
            context: "pearson",
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::InvalidInput("pearson needs at least two points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroVariance("pearson"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// One row of `metrics.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub param: crate::datagen::ParamPoint,
    pub relative_mse_percent: f64,
    pub crps_printed: f64,
    pub crps_abs: f64,
    pub scaled_mse_mean: f64,
}

/// CSV with one column per parameter name followed by the metric columns.
pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let names: Vec<&str> = rows
        .first()
        .map(|r| r.param.iter().map(|(k, _)| k).collect())
        .unwrap_or_default();
    let mut out = String::new();
    for n in &names {
        out.push_str(n);
        out.push(',');
    }
    out.push_str("relative_mse_percent,crps_printed,crps_abs,scaled_mse_mean\n");
    for r in rows {
        for (_, v) in r.param.iter() {
            out.push_str(&format!("{v},"));
        }
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.relative_mse_percent, r.crps_printed, r.crps_abs, r.scaled_mse_mean
        ));
    }
    out
}
