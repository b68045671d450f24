//! Trained model state, inference helpers and the on-disk checkpoint.
//!
//! A checkpoint directory holds `manifest.json` (configs, normalisation,
//! lineage, seed, tensor names and shapes) and `weights.bin`, the
//! concatenated `f64` little-endian values in manifest order, autoencoder first.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, TrainConfig};
use crate::datagen::{NormStats, ParamPoint, ParamSchema, Trajectory};
use crate::nn::ParamSet;
use crate::transformer::{Transformer, TransformerConfig};
use crate::vae::{LatentDistribution, Vae, VaeConfig};
use crate::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

/// One optimisation event in a model's history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineageEntry {
    /// Parameter points of the data trained on, `;`-separated.
    pub dataset: String,
    pub epochs: usize,
    /// Number of training windows per epoch.
    pub windows: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct ModelCheckpoint {
    pub vae: Vae,
    pub transformer: Transformer,
    pub schema: ParamSchema,
    pub stats: NormStats,
    pub train_config: TrainConfig,
    pub seed: u64,
    pub lineage: Vec<LineageEntry>,
    /// Mean loss of every epoch, across all training and retraining calls.
    pub loss_history: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    vae: VaeConfig,
    transformer: TransformerConfig,
    schema: ParamSchema,
    stats: NormStats,
    train_config: TrainConfig,
    seed: u64,
    lineage: Vec<LineageEntry>,
    loss_history: Vec<f64>,
    tensors: Vec<TensorEntry>,
}

fn tensor_entries(params: &ParamSet) -> Vec<TensorEntry> {
    params
        .iter()
        .map(|(name, t)| TensorEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
        })
        .collect()
}

impl ModelCheckpoint {
    pub fn model_config(&self) -> ModelConfig {
        let (v, t) = (&self.vae.config, &self.transformer.config);
        ModelConfig {
            latent_dim: v.latent_dim,
            vae_hidden: v.hidden.clone(),
            param_embed: v.param_embed,
            lookback: t.lookback,
            horizon: t.horizon,
            heads: t.heads,
            blocks: t.blocks,
            width: t.width,
            ff_width: t.ff_width,
        }
    }

    pub fn lookback(&self) -> usize {
        self.transformer.config.lookback
    }

    pub fn latent_dim(&self) -> usize {
        self.vae.config.latent_dim
    }

    pub fn state_dim(&self) -> usize {
        self.vae.config.state_dim
    }

    /// Scaled ξ features fed to the networks.
    pub fn features(&self, xi: &ParamPoint) -> Result<Vec<f64>> {
        self.schema.encode(xi)
    }

    fn check_state_dim(&self, traj: &Trajectory) -> Result<()> {
        if traj.n_xy() != self.state_dim() {
            return Err(Error::Schema(format!(
                "checkpoint expects {} values per snapshot, trajectory has {}",
                self.state_dim(),
                traj.n_xy()
            )));
        }
        Ok(())
    }

    /// Latent distributions of every snapshot of a raw trajectory.
    pub fn encode_trajectory(&self, traj: &Trajectory) -> Result<Vec<LatentDistribution>> {
        self.check_state_dim(traj)?;
        let normed = self.stats.apply(traj)?;
        self.vae.encode_batch(normed.states(), &self.features(&traj.param)?)
    }

    /// Decodes latent rows and maps them back to physical units.
    pub fn decode_latents(&self, latents: &[f64], xi: &ParamPoint) -> Result<Vec<f64>> {
        let mut out = self.vae.decode_batch(latents, &self.features(xi)?)?;
        for row in out.chunks_exact_mut(self.state_dim()) {
            self.stats.inverse_row(row);
        }
        Ok(out)
    }

    /// Encodes the first `q` snapshots of `initial`, rolls the latent state
    /// forward `steps` times and decodes. The result carries `initial`'s
    /// metadata and starts one step after the initial window.
    pub fn predict(&self, initial: &Trajectory, steps: usize) -> Result<Trajectory> {
        let xi = self.features(&initial.param)?;
        self.check_state_dim(initial)?;
        let q = self.lookback();
        if initial.n_t() < q {
            return Err(Error::InvalidInput(format!(
                "initial window needs {q} snapshots, got {}",
                initial.n_t()
            )));
        }
        if steps < 2 {
            return Err(Error::InvalidInput("a predicted trajectory needs at least 2 steps".into()));
        }
        let window = initial.window(0, q)?;
        let dists = self.encode_trajectory(&window)?;
        let latents: Vec<f64> = dists.iter().flat_map(|d| d.mu.iter().copied()).collect();
        let rolled = self.transformer.rollout(&latents, &xi, steps)?;
        let states = self.decode_latents(&rolled, &initial.param)?;
        Trajectory::new(
            states,
            initial.n_xy(),
            initial.dt,
            initial.grid.clone(),
            initial.param.clone(),
        )
    }

    /// Non-overlapping window forecasts over `traj`: every block of `q`
    /// snapshots is encoded and the following `h` are forecast and decoded.
    /// Returns `(predicted, truth)` states of equal length, physical units.
    pub fn window_forecasts(&self, traj: &Trajectory) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_state_dim(traj)?;
        let (q, h) = (self.lookback(), self.transformer.config.horizon);
        let n = traj.n_xy();
        let zd = self.latent_dim();
        let xi = self.features(&traj.param)?;
        let dists = self.encode_trajectory(traj)?;
        let mu: Vec<f64> = dists.iter().flat_map(|d| d.mu.iter().copied()).collect();
        let mut pred = Vec::new();
        let mut truth = Vec::new();
        let mut start = 0;
        while start + q + h <= traj.n_t() {
            let f = self.transformer.forecast(&mu[start * zd..(start + q) * zd], &xi)?;
            pred.extend(self.decode_latents(&f, &traj.param)?);
            truth.extend_from_slice(&traj.states()[(start + q) * n..(start + q + h) * n]);
            start += h;
        }
        if pred.is_empty() {
            return Err(Error::InvalidInput(format!(
                "trajectory of {} snapshots is shorter than lookback + horizon",
                traj.n_t()
            )));
        }
        Ok((pred, truth))
    }

    fn manifest(&self) -> Manifest {
        let mut tensors = tensor_entries(&self.vae.params);
        tensors.extend(tensor_entries(&self.transformer.params));
        Manifest {
            format_version: CHECKPOINT_VERSION,
            vae: self.vae.config.clone(),
            transformer: self.transformer.config.clone(),
            schema: self.schema.clone(),
            stats: self.stats.clone(),
            train_config: self.train_config.clone(),
            seed: self.seed,
            lineage: self.lineage.clone(),
            loss_history: self.loss_history.clone(),
            tensors,
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = serde_json::to_string_pretty(&self.manifest())? + "\n";
        let mpath = dir.join("manifest.json");
        fs::write(&mpath, manifest).map_err(|e| Error::io(&mpath, e))?;
        let mut bytes = Vec::with_capacity(8 * (self.vae.params.num_values() + self.transformer.params.num_values()));
        for v in self.vae.params.to_flat().into_iter().chain(self.transformer.params.to_flat()) {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let wpath = dir.join("weights.bin");
        fs::write(&wpath, bytes).map_err(|e| Error::io(&wpath, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mpath = dir.join("manifest.json");
        let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::format(&mpath, e.to_string()))?;
        if m.format_version != CHECKPOINT_VERSION {
            return Err(Error::format(
                &mpath,
                format!("unsupported checkpoint version {}", m.format_version),
            ));
        }
        let mut vae = Vae::new(m.vae, 0)?;
        let mut transformer = Transformer::new(m.transformer, 0)?;
        let mut expected = tensor_entries(&vae.params);
        expected.extend(tensor_entries(&transformer.params));
        let same = expected.len() == m.tensors.len()
            && expected
                .iter()
                .zip(&m.tensors)
                .all(|(a, b)| a.name == b.name && a.shape == b.shape);
        if !same {
            return Err(Error::format(&mpath, "tensor list does not match the declared configs"));
        }
        let wpath = dir.join("weights.bin");
        let bytes = fs::read(&wpath).map_err(|e| Error::io(&wpath, e))?;
        let nv = vae.params.num_values();
        let total = nv + transformer.params.num_values();
        if bytes.len() != total * 8 {
            return Err(Error::format(
                &wpath,
                format!("expected {} bytes, found {}", total * 8, bytes.len()),
            ));
        }
        let flat: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        vae.params.load_flat(&flat[..nv])?;
        transformer.params.load_flat(&flat[nv..])?;
        if m.stats.dim() != vae.config.state_dim {
            return Err(Error::format(&mpath, "normalisation size does not match the model"));
        }
        Ok(Self {
            vae,
            transformer,
            schema: m.schema,
            stats: m.stats,
            train_config: m.train_config,
            seed: m.seed,
            lineage: m.lineage,
            loss_history: m.loss_history,
        })
    }
}
