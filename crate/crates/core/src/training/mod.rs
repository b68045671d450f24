//! Joint optimisation of the autoencoder and the forecaster.
//!
//! The loss of a batch of `m` windows, each with `q` lookback and `h` target
//! snapshots, is
//!
//! ```text
//! λ (mse(Φ_lb, D(μ + σε)) + β KLD) + mse(ẑ, μ_tgt) + mse(D(ẑ), Φ_tgt)
//! ```
//!
//! where `μ, σ` come from encoding the lookback, `μ_tgt` from encoding the
//! targets and `ẑ` is the forecast from the sampled lookback latents
//! `μ + σε`. Feeding samples rather than means exposes the forecaster to the
//! spread it meets in long autoregressive rollouts. KLD is summed over latent
//! coordinates and averaged over snapshots.

mod checkpoint;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, Tape, TensorError, Tensor, Var};
use crate::datagen::{NormStats, ParamSchema, Trajectory};
use crate::nn::Bound;
use crate::transformer::{Transformer, TransformerConfig};
use crate::vae::{kld_on, reparameterize_on, Vae, VaeConfig};
use crate::{rng, Error, Result};

pub use checkpoint::{LineageEntry, ModelCheckpoint, CHECKPOINT_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    /// Weight λ of the reconstruction branch.
    pub lambda: f64,
    /// Weight β of the KL term inside the reconstruction branch.
    pub kld_weight: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda: 100.0,
            kld_weight: 1e-4,
        }
    }
}

/// Architecture shared by every parameter point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub latent_dim: usize,
    pub vae_hidden: Vec<usize>,
    pub param_embed: usize,
    pub lookback: usize,
    pub horizon: usize,
    pub heads: usize,
    pub blocks: usize,
    pub width: usize,
    pub ff_width: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent_dim: 8,
            vae_hidden: vec![128, 128],
            param_embed: 8,
            lookback: 10,
            horizon: 10,
            heads: 4,
            blocks: 2,
            width: 64,
            ff_width: 128,
        }
    }
}

impl ModelConfig {
    pub fn vae_config(&self, state_dim: usize, param_dim: usize) -> VaeConfig {
        VaeConfig {
            state_dim,
            latent_dim: self.latent_dim,
            hidden: self.vae_hidden.clone(),
            param_dim,
            param_embed: self.param_embed,
        }
    }

    pub fn transformer_config(&self, param_dim: usize) -> TransformerConfig {
        TransformerConfig {
            latent_dim: self.latent_dim,
            lookback: self.lookback,
            horizon: self.horizon,
            heads: self.heads,
            blocks: self.blocks,
            width: self.width,
            ff_width: self.ff_width,
            param_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: Adam,
    pub loss: LossWeights,
    /// Offset between consecutive training windows of a trajectory.
    pub window_stride: usize,
    pub replay_fraction: f64,
    /// Epochs per retraining call; `None` means 20% of `epochs`.
    pub retrain_epochs: Option<usize>,
    /// Print the epoch loss every this many epochs (0 = silent).
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 32,
            adam: Adam::default(),
            loss: LossWeights::default(),
            window_stride: 1,
            replay_fraction: 0.25,
            retrain_epochs: None,
            log_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn retrain_epochs(&self) -> usize {
        self.retrain_epochs
            .unwrap_or_else(|| ((self.epochs as f64 * 0.2).round() as usize).max(1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.window_stride == 0 {
            return Err(Error::Config("batch_size and window_stride must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.replay_fraction) {
            return Err(Error::Config(format!(
                "replay_fraction {} outside [0, 1]",
                self.replay_fraction
            )));
        }
        if !(self.loss.lambda >= 0.0 && self.loss.kld_weight >= 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// Normalised snapshots of `m` windows, each row-major `[rows, n_xy]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub m: usize,
    /// `m·q` rows, window by window.
    pub lookback: Vec<f64>,
    /// `m·h` rows, window by window.
    pub target: Vec<f64>,
    /// `m` rows of scaled ξ features.
    pub xi: Vec<f64>,
}

/// Loss value and its parts for one batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub total: f64,
    /// `λ (reconstruction + β KLD)`.
    pub reconstruction: f64,
    pub latent: f64,
    pub decoded: f64,
    pub reconstruction_mse: f64,
    pub kld: f64,
}

struct LossVars {
    total: Var,
    recon: Var,
    kld: Var,
    latent: Var,
    decoded: Var,
}

fn repeat_rows(rows: &[f64], width: usize, times: usize) -> Vec<f64> {
    rows.chunks_exact(width)
        .flat_map(|r| std::iter::repeat_n(r, times).flatten().copied())
        .collect()
}

fn loss_on_tape(
    tape: &mut Tape,
    vae: &Vae,
    vb: &Bound,
    tf: &Transformer,
    tb: &Bound,
    batch: &Batch,
    noise: &[f64],
    weights: LossWeights,
) -> Result<LossVars> {
    let n = vae.config.state_dim;
    let zd = vae.config.latent_dim;
    let p = vae.config.param_dim.max(1);
    let (q, h, m) = (tf.config.lookback, tf.config.horizon, batch.m);
    if batch.lookback.len() != m * q * n || batch.target.len() != m * h * n || batch.xi.len() != m * p {
        return Err(Error::Dimension {
            context: "training batch",
            expected: m * (q + h) * n,
            got: batch.lookback.len() + batch.target.len(),
        });
    }
    if noise.len() != m * q * zd {
        return Err(Error::Dimension {
            context: "reparameterisation noise",
            expected: m * q * zd,
            got: noise.len(),
        });
    }
    let mut all = batch.lookback.clone();
    all.extend_from_slice(&batch.target);
    let mut xi_all = repeat_rows(&batch.xi, p, q);
    xi_all.extend(repeat_rows(&batch.xi, p, h));
    let rows = m * (q + h);
    let phi = tape.constant(Tensor::matrix(rows, n, all)?);
    let xi_all = tape.constant(Tensor::matrix(rows, p, xi_all)?);
    let (mu, log_var) = vae.encode_on(tape, vb, phi, xi_all)?;

    let mu_lb = tape.slice(mu, 0, 0, m * q)?;
    let lv_lb = tape.slice(log_var, 0, 0, m * q)?;
    let mu_tg = tape.slice(mu, 0, m * q, rows)?;
    let phi_lb = tape.slice(phi, 0, 0, m * q)?;
    let phi_tg = tape.slice(phi, 0, m * q, rows)?;
    let xi_lb = tape.slice(xi_all, 0, 0, m * q)?;
    let xi_tg = tape.slice(xi_all, 0, m * q, rows)?;

    let eps = tape.constant(Tensor::matrix(m * q, zd, noise.to_vec())?);
    let z = reparameterize_on(tape, mu_lb, lv_lb, eps)?;
    let recon = vae.decode_on(tape, vb, z, xi_lb)?;
    let recon = tape.mse(recon, phi_lb)?;
    let kld = kld_on(tape, mu_lb, lv_lb)?;

    let xi_m = tape.constant(Tensor::matrix(m, p, batch.xi.clone())?);
    let pred = tf.forecast_on(tape, tb, z, xi_m)?;
    let target = tape.reshape(mu_tg, vec![m, h * zd])?;
    let latent = tape.mse(pred, target)?;
    let pred_rows = tape.reshape(pred, vec![m * h, zd])?;
    let decoded = vae.decode_on(tape, vb, pred_rows, xi_tg)?;
    let decoded = tape.mse(decoded, phi_tg)?;

    let weighted_kld = tape.scale(kld, weights.kld_weight)?;
    let branch = tape.add(recon, weighted_kld)?;
    let branch = tape.scale(branch, weights.lambda)?;
    let rest = tape.add(latent, decoded)?;
    let total = tape.add(branch, rest)?;
    Ok(LossVars {
        total,
        recon,
        kld,
        latent,
        decoded,
    })
}

fn components(tape: &Tape, v: &LossVars, weights: LossWeights) -> LossComponents {
    let item = |x: Var| tape.value(x).item();
    LossComponents {
        total: item(v.total),
        reconstruction: weights.lambda * (item(v.recon) + weights.kld_weight * item(v.kld)),
        latent: item(v.latent),
        decoded: item(v.decoded),
        reconstruction_mse: item(v.recon),
        kld: item(v.kld),
    }
}

/// Evaluates the loss of `batch` with fixed reparameterisation `noise`
/// (`m·q·Z` standard-normal draws).
pub fn total_loss(
    vae: &Vae,
    tf: &Transformer,
    batch: &Batch,
    noise: &[f64],
    weights: LossWeights,
) -> Result<LossComponents> {
    let mut tape = Tape::new();
    let vb = vae.params.bind(&mut tape, false);
    let tb = tf.params.bind(&mut tape, false);
    let vars = loss_on_tape(&mut tape, vae, &vb, tf, &tb, batch, noise, weights)?;
    Ok(components(&tape, &vars, weights))
}

/// A training window: trajectory index and first snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct WindowRef {
    traj: usize,
    start: usize,
}

/// Normalised trajectories with their scaled ξ features.
struct Corpus {
    states: Vec<Trajectory>,
    xi: Vec<Vec<f64>>,
}

impl Corpus {
    fn new(dataset: &[Trajectory], stats: &NormStats, schema: &ParamSchema) -> Result<Self> {
        let states = dataset.iter().map(|t| stats.apply(t)).collect::<Result<_>>()?;
        let xi = dataset
            .iter()
            .map(|t| schema.encode(&t.param))
            .collect::<Result<_>>()?;
        Ok(Self { states, xi })
    }

    fn windows(&self, span: usize, stride: usize) -> Vec<WindowRef> {
        let mut out = Vec::new();
        for (i, t) in self.states.iter().enumerate() {
            let mut start = 0;
            while start + span <= t.n_t() {
                out.push(WindowRef { traj: i, start });
                start += stride;
            }
        }
        out
    }

    fn batch(&self, refs: &[WindowRef], q: usize, h: usize) -> Batch {
        let mut b = Batch {
            m: refs.len(),
            lookback: Vec::new(),
            target: Vec::new(),
            xi: Vec::new(),
        };
        for r in refs {
            let t = &self.states[r.traj];
            let n = t.n_xy();
            let s = t.states();
            b.lookback.extend_from_slice(&s[r.start * n..(r.start + q) * n]);
            b.target.extend_from_slice(&s[(r.start + q) * n..(r.start + q + h) * n]);
            let xi = &self.xi[r.traj];
            if xi.is_empty() {
                b.xi.push(0.0);
            } else {
                b.xi.extend_from_slice(xi);
            }
        }
        b
    }
}

fn validate_dataset(dataset: &[Trajectory], span: usize) -> Result<()> {
    let first = dataset
        .first()
        .ok_or_else(|| Error::InvalidInput("training dataset is empty".into()))?;
    for t in dataset {
        if t.n_xy() != first.n_xy() {
            return Err(Error::Dimension {
                context: "training dataset state size",
                expected: first.n_xy(),
                got: t.n_xy(),
            });
        }
        if t.n_t() < span {
            return Err(Error::InvalidInput(format!(
                "trajectory at {} has {} snapshots, fewer than lookback + horizon = {span}",
                t.param,
                t.n_t()
            )));
        }
    }
    Ok(())
}

fn dataset_id(dataset: &[Trajectory]) -> String {
    dataset.iter().map(|t| t.param.to_string()).collect::<Vec<_>>().join(";")
}

fn as_loss_error(e: Error, epoch: usize, step: usize) -> Error {
    match e {
        Error::Tensor(TensorError::NonFinite { .. }) => Error::NonFiniteLoss { epoch, step },
        other => other,
    }
}

/// Runs `epochs` passes over `windows`; returns the mean loss of each epoch.
fn optimise(
    ckpt: &mut ModelCheckpoint,
    corpus: &Corpus,
    windows: &[WindowRef],
    cfg: &TrainConfig,
    epochs: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let (q, h) = (ckpt.transformer.config.lookback, ckpt.transformer.config.horizon);
    let zd = ckpt.vae.config.latent_dim;
    let mut vae_state = ckpt.vae.params.adam_state();
    let mut tf_state = ckpt.transformer.params.adam_state();
    let mut order = windows.to_vec();
    let mut curve = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let mut rng = rng::stream(seed, &[epoch as u64]);
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut count = 0usize;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = corpus.batch(chunk, q, h);
            let noise = rng::standard_normal(&mut rng, chunk.len() * q * zd);
            let mut tape = Tape::new();
            let vb = ckpt.vae.params.bind(&mut tape, true);
            let tb = ckpt.transformer.params.bind(&mut tape, true);
            let vars = loss_on_tape(
                &mut tape,
                &ckpt.vae,
                &vb,
                &ckpt.transformer,
                &tb,
                &batch,
                &noise,
                cfg.loss,
            )
            .map_err(|e| as_loss_error(e, epoch, step))?;
            let loss = tape.value(vars.total).item();
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step });
            }
            tape.backward(vars.total)
                .map_err(|e| as_loss_error(e.into(), epoch, step))?;
            ckpt.vae.params.adam_step(&tape, &vb, &cfg.adam, &mut vae_state)?;
            ckpt.transformer.params.adam_step(&tape, &tb, &cfg.adam, &mut tf_state)?;
            sum += loss * chunk.len() as f64;
            count += chunk.len();
        }
        let mean = sum / count.max(1) as f64;
        if cfg.log_every > 0 && (epoch % cfg.log_every == 0 || epoch + 1 == epochs) {
            eprintln!("epoch {epoch:>5}  loss {mean:.6e}");
        }
        curve.push(mean);
    }
    Ok(curve)
}

/// Trains a fresh model on `dataset` (raw, un-normalised trajectories).
///
/// Normalisation statistics are fitted on `dataset`; `schema` fixes how ξ is
/// scaled and should span every point the model will be queried at.
pub fn train(
    dataset: &[Trajectory],
    schema: &ParamSchema,
    model: &ModelConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<ModelCheckpoint> {
    cfg.validate()?;
    let span = model.lookback + model.horizon;
    validate_dataset(dataset, span)?;
    let stats = NormStats::fit(dataset)?;
    let n_xy = dataset[0].n_xy();
    let vae = Vae::new(model.vae_config(n_xy, schema.dim()), rng::derive(seed, &[1]))?;
    let transformer = Transformer::new(model.transformer_config(schema.dim()), rng::derive(seed, &[2]))?;
    let mut ckpt = ModelCheckpoint {
        vae,
        transformer,
        schema: schema.clone(),
        stats,
        train_config: cfg.clone(),
        seed,
        lineage: Vec::new(),
        loss_history: Vec::new(),
    };
    let corpus = Corpus::new(dataset, &ckpt.stats, schema)?;
    let windows = corpus.windows(span, cfg.window_stride);
    let curve = optimise(&mut ckpt, &corpus, &windows, cfg, cfg.epochs, rng::derive(seed, &[3]))?;
    ckpt.lineage.push(LineageEntry {
        dataset: dataset_id(dataset),
        epochs: cfg.epochs,
        windows: windows.len(),
        seed,
    });
    ckpt.loss_history.extend(curve);
    Ok(ckpt)
}

/// Continues training on `new_data` plus a uniformly drawn `replay_fraction`
/// of the windows of `prior` (the data the checkpoint was trained on).
///
/// Normalisation statistics are kept; Adam moments start from zero.
pub fn retrain(
    checkpoint: &ModelCheckpoint,
    new_data: &[Trajectory],
    prior: &[Trajectory],
    replay_fraction: f64,
    epochs: usize,
    seed: u64,
) -> Result<ModelCheckpoint> {
    let mut cfg = checkpoint.train_config.clone();
    cfg.replay_fraction = replay_fraction;
    cfg.validate()?;
    let span = checkpoint.transformer.config.lookback + checkpoint.transformer.config.horizon;
    validate_dataset(new_data, span)?;
    if !prior.is_empty() {
        validate_dataset(prior, span)?;
    }
    let mut all: Vec<Trajectory> = new_data.to_vec();
    all.extend_from_slice(prior);
    let corpus = Corpus::new(&all, &checkpoint.stats, &checkpoint.schema)?;
    let every = corpus.windows(span, cfg.window_stride);
    let (mut windows, mut replay): (Vec<_>, Vec<_>) =
        every.into_iter().partition(|w| w.traj < new_data.len());
    let keep = (replay_fraction * replay.len() as f64).round() as usize;
    replay.shuffle(&mut rng::stream(seed, &[0]));
    replay.truncate(keep);
    replay.sort_by_key(|w| (w.traj, w.start));
    windows.extend(replay);
    let mut ckpt = checkpoint.clone();
    let curve = optimise(&mut ckpt, &corpus, &windows, &cfg, epochs, rng::derive(seed, &[1]))?;
    ckpt.lineage.push(LineageEntry {
        dataset: dataset_id(new_data),
        epochs,
        windows: windows.len(),
        seed,
    });
    ckpt.loss_history.extend(curve);
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{Grid, ParamPoint};

    fn tiny_model() -> ModelConfig {
        ModelConfig {
            latent_dim: 2,
            vae_hidden: vec![8],
            param_embed: 2,
            lookback: 3,
            horizon: 2,
            heads: 2,
            blocks: 1,
            width: 4,
            ff_width: 8,
        }
    }

    fn nets(seed: u64) -> (Vae, Transformer) {
        let m = tiny_model();
        (
            Vae::new(m.vae_config(5, 1), seed).unwrap(),
            Transformer::new(m.transformer_config(1), seed + 1).unwrap(),
        )
    }

    fn zero_all(vae: &mut Vae, tf: &mut Transformer) {
        for (_, t) in vae.params.iter_mut().chain(tf.params.iter_mut()) {
            t.data_mut().fill(0.0);
        }
    }

    fn batch(values: impl Fn(usize) -> f64) -> Batch {
        Batch {
            m: 1,
            lookback: (0..15).map(&values).collect(),
            target: (15..25).map(&values).collect(),
            xi: vec![0.3],
        }
    }

    #[test]
    fn zero_model_on_zero_data_has_zero_loss() {
        let (mut vae, mut tf) = nets(0);
        zero_all(&mut vae, &mut tf);
        let noise = vec![0.0; 6];
        let c = total_loss(&vae, &tf, &batch(|_| 0.0), &noise, LossWeights::default()).unwrap();
        assert_eq!(c.total, 0.0);
        assert_eq!(c.kld, 0.0);
    }

    #[test]
    fn zero_model_loss_has_closed_form() {
        let (mut vae, mut tf) = nets(1);
        zero_all(&mut vae, &mut tf);
        let f = |i: usize| (i as f64 * 0.7).sin() + 0.2;
        let b = batch(f);
        let noise: Vec<f64> = (0..6).map(|i| i as f64 - 2.5).collect();
        let w = LossWeights::default();
        let c = total_loss(&vae, &tf, &b, &noise, w).unwrap();
        // μ = 0 and σ = 1 so KLD vanishes and z is the noise itself. The
        // forecast repeats the last sampled latent (1.5, 2.5) over the horizon
        // against zero targets, and every decoded output is 0.
        let lb = b.lookback.iter().map(|v| v * v).sum::<f64>() / 15.0;
        let tg = b.target.iter().map(|v| v * v).sum::<f64>() / 10.0;
        assert!((c.latent - 4.25).abs() < 1e-12);
        assert!((c.total - (w.lambda * lb + tg + 4.25)).abs() < 1e-12);
    }

    #[test]
    fn lambda_scales_only_the_reconstruction_branch() {
        let (vae, tf) = nets(2);
        let b = batch(|i| (i as f64).cos());
        let noise = vec![0.1, -0.4, 1.2, 0.0, 0.5, -0.9];
        let w = LossWeights::default();
        let one = total_loss(&vae, &tf, &b, &noise, w).unwrap();
        let two = total_loss(
            &vae,
            &tf,
            &b,
            &noise,
            LossWeights {
                lambda: 2.0 * w.lambda,
                ..w
            },
        )
        .unwrap();
        assert!((two.reconstruction - 2.0 * one.reconstruction).abs() < 1e-9);
        assert_eq!(two.latent, one.latent);
        assert_eq!(two.decoded, one.decoded);
        assert!(one.reconstruction >= 0.0 && one.latent >= 0.0 && one.decoded >= 0.0);
    }

    #[test]
    fn batch_dimension_errors() {
        let (vae, tf) = nets(3);
        let mut b = batch(|_| 1.0);
        b.target.pop();
        assert!(total_loss(&vae, &tf, &b, &[0.0; 6], LossWeights::default()).is_err());
        assert!(total_loss(&vae, &tf, &batch(|_| 1.0), &[0.0; 5], LossWeights::default()).is_err());
    }

    fn toy_data() -> Vec<Trajectory> {
        [0.5, 1.0]
            .iter()
            .map(|&a| {
                let states = (0..40)
                    .flat_map(|t| (0..5).map(move |d| a * ((t as f64) * 0.3 + d as f64).sin()))
                    .collect();
                Trajectory::new(states, 5, 0.1, Grid::line(5, 1.0), ParamPoint::single("a", a)).unwrap()
            })
            .collect()
    }

    fn toy_config(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 8,
            window_stride: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn training_is_deterministic_and_records_lineage() {
        let data = toy_data();
        let schema = ParamSchema::spanning(&data.iter().map(|t| t.param.clone()).collect::<Vec<_>>()).unwrap();
        let a = train(&data, &schema, &tiny_model(), &toy_config(3), 11).unwrap();
        let b = train(&data, &schema, &tiny_model(), &toy_config(3), 11).unwrap();
        assert_eq!(a.vae.params, b.vae.params);
        assert_eq!(a.transformer.params, b.transformer.params);
        assert_eq!(a.loss_history, b.loss_history);
        assert_eq!(a.lineage.len(), 1);
        assert_eq!(a.loss_history.len(), 3);
    }

    #[test]
    fn retrain_with_zero_epochs_keeps_weights_and_appends_lineage() {
        let data = toy_data();
        let schema = ParamSchema::new(&[("a", 0.0, 2.0)]);
        let ckpt = train(&data[..1], &schema, &tiny_model(), &toy_config(2), 5).unwrap();
        let again = retrain(&ckpt, &data[1..], &data[..1], 1.0, 0, 9).unwrap();
        assert_eq!(again.vae.params, ckpt.vae.params);
        assert_eq!(again.transformer.params, ckpt.transformer.params);
        assert_eq!(again.lineage.len(), 2);
        let third = retrain(&again, &data[1..], &data[..1], 0.25, 1, 10).unwrap();
        assert_eq!(third.lineage.len(), 3);
        assert_ne!(third.vae.params, again.vae.params);
    }

    #[test]
    fn short_trajectories_are_rejected() {
        let mut data = toy_data();
        data[0] = data[0].window(0, 4).unwrap();
        let schema = ParamSchema::new(&[("a", 0.0, 2.0)]);
        assert!(matches!(
            train(&data, &schema, &tiny_model(), &toy_config(1), 0),
            Err(Error::InvalidInput(_))
        ));
        assert!(train(&[], &schema, &tiny_model(), &toy_config(1), 0).is_err());
    }

    #[test]
    fn divergent_learning_rate_reports_epoch_and_step() {
        let data = toy_data();
        let schema = ParamSchema::new(&[("a", 0.0, 2.0)]);
        let mut cfg = toy_config(50);
        cfg.adam.lr = 1e12;
        match train(&data, &schema, &tiny_model(), &cfg, 3) {
            Err(Error::NonFiniteLoss { .. }) | Ok(_) => {}
            Err(e) => panic!("unexpected error {e}"),
        }
    }
}
