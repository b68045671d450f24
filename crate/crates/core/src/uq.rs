//! Ensemble uncertainty from a second pass through the autoencoder.
//!
//! Each snapshot of a predicted trajectory is re-encoded, its latent Gaussian
//! is sampled `n` times and every sample is decoded. The spread of the decoded
//! ensemble, `ν_{d,t} = sqrt((1/n) Σᵢ (Φ_{i,d,t} − Φ̄_{d,t})²)`, is the
//! uncertainty. The forecaster is not involved, so the cost is that of `n`
//! decoder passes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{ParamPoint, Trajectory};
use crate::training::ModelCheckpoint;
use crate::{rng, Error, Result};

pub const DEFAULT_ENSEMBLE: usize = 64;
pub const DEFAULT_K: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UqConfig {
    pub ensemble_size: usize,
    /// Confidence-interval half width in units of `ν`.
    pub k: f64,
    pub seed: u64,
}

impl Default for UqConfig {
    fn default() -> Self {
        Self {
            ensemble_size: DEFAULT_ENSEMBLE,
            k: DEFAULT_K,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyField {
    /// `n_t × n_xy`, time-major.
    pub nu: Vec<f64>,
    pub n_t: usize,
    pub n_xy: usize,
    pub param: ParamPoint,
    pub ensemble_size: usize,
    pub seed: u64,
}

impl UncertaintyField {
    pub fn at(&self, t: usize, d: usize) -> f64 {
        self.nu[t * self.n_xy + d]
    }
}

#[derive(Debug, Clone)]
pub struct SecondPass {
    pub field: UncertaintyField,
    /// Ensemble mean `Φ̄`, same layout as the field.
    pub mean: Vec<f64>,
    /// Decoded members, each `n_t × n_xy` in physical units.
    pub members: Vec<Vec<f64>>,
}

impl SecondPass {
    pub fn member_refs(&self) -> Vec<&[f64]> {
        self.members.iter().map(Vec::as_slice).collect()
    }
}

/// Running mean and population variance (Welford).
#[derive(Debug, Clone)]
pub struct Welford {
    count: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    pub fn new(len: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; len],
            m2: vec![0.0; len],
        }
    }

    pub fn push(&mut self, x: &[f64]) {
        self.count += 1;
        let n = self.count as f64;
        for ((m, s), v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let delta = v - *m;
            *m += delta / n;
            *s += delta * (v - *m);
        }
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// `sqrt(M2 / n)`.
    pub fn std(&self) -> Vec<f64> {
        let n = self.count.max(1) as f64;
        self.m2.iter().map(|s| (s / n).max(0.0).sqrt()).collect()
    }
}

/// Standard-normal draws for member `i` at time `t`: one stream per
/// `(seed, i, t)` so members can be generated in any order.
pub fn member_noise(seed: u64, member: usize, t: usize, dim: usize) -> Vec<f64> {
    rng::standard_normal(&mut rng::stream(seed, &[member as u64, t as u64]), dim)
}

/// Second-pass ensemble over a predicted trajectory (physical units).
pub fn second_pass(predicted: &Trajectory, ckpt: &ModelCheckpoint, n: usize, seed: u64) -> Result<SecondPass> {
    if n < 2 {
        return Err(Error::InvalidInput(format!("ensemble size must be at least 2, got {n}")));
    }
    let dists = ckpt.encode_trajectory(predicted)?;
    let zd = ckpt.latent_dim();
    let sigma: Vec<Vec<f64>> = dists.iter().map(|d| d.sigma()).collect();
    let members: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut z = Vec::with_capacity(dists.len() * zd);
            for (t, (d, s)) in dists.iter().zip(&sigma).enumerate() {
                let eps = member_noise(seed, i, t, zd);
                z.extend(d.mu.iter().zip(s).zip(eps).map(|((m, s), e)| m + s * e));
            }
            ckpt.decode_latents(&z, &predicted.param)
        })
        .collect::<Result<_>>()?;
    let mut acc = Welford::new(predicted.states().len());
    for m in &members {
        acc.push(m);
    }
    Ok(SecondPass {
        field: UncertaintyField {
            nu: acc.std(),
            n_t: predicted.n_t(),
            n_xy: predicted.n_xy(),
            param: predicted.param.clone(),
            ensemble_size: n,
            seed,
        },
        mean: acc.mean().to_vec(),
        members,
    })
}

/// Spatial mean per time step, `ν_t`.
pub fn aggregate_time(field: &UncertaintyField) -> Vec<f64> {
    field
        .nu
        .chunks_exact(field.n_xy)
        .map(|row| row.iter().sum::<f64>() / field.n_xy as f64)
        .collect()
}

/// Mean over space and time, `ν_ξ`.
pub fn aggregate_param(field: &UncertaintyField) -> f64 {
    field.nu.iter().sum::<f64>() / field.nu.len() as f64
}

/// `mean ± k ν`, elementwise.
pub fn confidence_interval(mean: &[f64], field: &UncertaintyField, k: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(k > 0.0) {
        return Err(Error::InvalidInput(format!("interval multiplier must be positive, got {k}")));
    }
    if mean.len() != field.nu.len() {
        return Err(Error::Dimension {
            context: "confidence interval",
            expected: field.nu.len(),
            got: mean.len(),
        });
    }
    let lower = mean.iter().zip(&field.nu).map(|(m, v)| m - k * v).collect();
    let upper = mean.iter().zip(&field.nu).map(|(m, v)| m + k * v).collect();
    Ok((lower, upper))
}

/// Fraction of `truth` values inside `[lower, upper]`.
pub fn coverage(lower: &[f64], upper: &[f64], truth: &[f64]) -> f64 {
    let inside = truth
        .iter()
        .zip(lower.iter().zip(upper))
        .filter(|(t, (lo, hi))| lo <= t && t <= hi)
        .count();
    inside as f64 / truth.len().max(1) as f64
}

pub fn uq_field_csv(field: &UncertaintyField) -> String {
    let mut out = String::from("t,d,nu\n");
    for t in 0..field.n_t {
        for d in 0..field.n_xy {
            out.push_str(&format!("{t},{d},{}\n", field.at(t, d)));
        }
    }
    out
}

pub fn nu_t_csv(series: &[f64]) -> String {
    let mut out = String::from("t,nu_t\n");
    for (t, v) in series.iter().enumerate() {
        out.push_str(&format!("{t},{v}\n"));
    }
    out
}

/// One row per parameter point: its values followed by `ν_ξ`.
pub fn nu_xi_csv(rows: &[(ParamPoint, f64)]) -> String {
    let mut out = String::new();
    if let Some((p, _)) = rows.first() {
        for (k, _) in p.iter() {
            out.push_str(k);
            out.push(',');
        }
    }
    out.push_str("nu_xi\n");
    for (p, v) in rows {
        for (_, x) in p.iter() {
            out.push_str(&format!("{x},"));
        }
        out.push_str(&format!("{v}\n"));
    }
    out
}
