//! Run configuration: one TOML document with a section per module.
//!
//! A document may name a `preset` (`ks` or `hopf`, default `ks`); every key
//! it sets overrides that preset and unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adaptive::AdaptiveConfig;
use crate::autodiff::Adam;
use crate::datagen::{Case, Generator, HopfSettings, KsSettings, ParamPoint, ParamSchema};
use crate::training::{LossWeights, ModelConfig, TrainConfig};
use crate::uq::UqConfig;
use crate::{Error, Result};

pub const RESOLVED_CONFIG: &str = "config.resolved.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatagenSection {
    pub case: Case,
    /// Parameter values inference, UQ and the adaptive loop sweep over.
    pub grid: Vec<f64>,
    /// Parameter values the initial model is trained on.
    pub train: Vec<f64>,
    pub ks: KsSettings,
    pub hopf: HopfSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VaeSection {
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub param_embed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformerSection {
    pub lookback: usize,
    pub horizon: usize,
    pub heads: usize,
    pub blocks: usize,
    pub width: usize,
    pub ff_width: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub window_stride: usize,
    pub replay_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrain_epochs: Option<usize>,
    pub log_every: usize,
    pub adam: Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub datagen: DatagenSection,
    pub vae: VaeSection,
    pub transformer: TransformerSection,
    pub loss: LossWeights,
    pub training: TrainingSection,
    pub uq: UqConfig,
    pub adaptive: AdaptiveConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::preset(Case::Ks)
    }
}

impl RunConfig {
    /// `ks`: the appendix-scale Kuramoto–Sivashinsky toy at ν = 1.
    /// `hopf`: the ten-point bifurcation sweep trained on two
    /// post-critical points, with a smaller model.
    pub fn preset(case: Case) -> Self {
        let model = ModelConfig::default();
        let train = TrainConfig::default();
        let mut cfg = Self {
            seed: 42,
            out_dir: PathBuf::from("out"),
            datagen: DatagenSection {
                case,
                grid: vec![0.7, 0.8, 0.9, 1.0, 1.1],
                train: vec![1.0],
                ks: KsSettings::default(),
                hopf: HopfSettings::default(),
            },
            vae: VaeSection {
                latent_dim: model.latent_dim,
                hidden: model.vae_hidden,
                param_embed: model.param_embed,
            },
            transformer: TransformerSection {
                lookback: model.lookback,
                horizon: model.horizon,
                heads: model.heads,
                blocks: model.blocks,
                width: model.width,
                ff_width: model.ff_width,
            },
            loss: train.loss,
            training: TrainingSection {
                epochs: train.epochs,
                batch_size: train.batch_size,
                window_stride: train.window_stride,
                replay_fraction: train.replay_fraction,
                retrain_epochs: train.retrain_epochs,
                log_every: train.log_every,
                adam: train.adam,
            },
            uq: UqConfig::default(),
            adaptive: AdaptiveConfig::default(),
        };
        if case == Case::Hopf {
            cfg.seed = 1;
            cfg.datagen.grid = vec![-0.15, -0.05, 0.05, 0.15, 0.25, 0.35, 0.45, 0.55, 0.65, 0.75];
            cfg.datagen.train = vec![0.25, 0.55];
            cfg.vae = VaeSection {
                latent_dim: 4,
                hidden: vec![64, 64],
                param_embed: 8,
            };
            cfg.transformer.blocks = 1;
            cfg.transformer.width = 32;
            cfg.transformer.ff_width = 64;
            cfg.loss.kld_weight = 1e-2;
            cfg.training.epochs = 300;
        }
        cfg
    }

    /// Parses a TOML document over its preset.
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut doc: toml::Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
        let case = match doc.remove("preset") {
            None => Case::Ks,
            Some(toml::Value::String(s)) => s.parse()?,
            Some(other) => return Err(Error::Config(format!("preset must be a string, got {other}"))),
        };
        let mut base = toml::Table::try_from(Self::preset(case)).map_err(|e| Error::Config(format!("{e}")))?;
        merge(&mut base, doc);
        let cfg: Self = base.try_into().map_err(|e| Error::Config(format!("{e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("{e}")))
    }

    /// Writes the resolved configuration into `dir`.
    pub fn write_resolved(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(RESOLVED_CONFIG);
        fs::write(&path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.datagen;
        if d.grid.is_empty() {
            return Err(Error::Config("datagen.grid is empty".into()));
        }
        if d.grid.iter().chain(&d.train).any(|v| !v.is_finite()) {
            return Err(Error::Config("datagen values must be finite".into()));
        }
        self.model().vae_config(self.state_dim(), 1).validate()?;
        self.model().transformer_config(1).validate()?;
        self.train_config().validate()?;
        if self.uq.ensemble_size < 2 || !(self.uq.k > 0.0) {
            return Err(Error::Config("uq needs ensemble_size >= 2 and k > 0".into()));
        }
        Ok(())
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            latent_dim: self.vae.latent_dim,
            vae_hidden: self.vae.hidden.clone(),
            param_embed: self.vae.param_embed,
            lookback: self.transformer.lookback,
            horizon: self.transformer.horizon,
            heads: self.transformer.heads,
            blocks: self.transformer.blocks,
            width: self.transformer.width,
            ff_width: self.transformer.ff_width,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.training;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            adam: t.adam,
            loss: self.loss,
            window_stride: t.window_stride,
            replay_fraction: t.replay_fraction,
            retrain_epochs: t.retrain_epochs,
            log_every: t.log_every,
        }
    }

    /// Snapshot size of the configured case.
    pub fn state_dim(&self) -> usize {
        match self.datagen.case {
            Case::Ks => self.datagen.ks.n_x,
            Case::Hopf => self.datagen.hopf.n_x,
        }
    }

    pub fn generator(&self) -> Generator {
        Generator {
            case: self.datagen.case,
            ks: self.datagen.ks.clone(),
            hopf: self.datagen.hopf.clone(),
        }
    }

    pub fn grid_points(&self) -> Vec<ParamPoint> {
        let g = self.generator();
        self.datagen.grid.iter().map(|&v| g.point(v)).collect()
    }

    pub fn train_points(&self) -> Vec<ParamPoint> {
        let g = self.generator();
        self.datagen.train.iter().map(|&v| g.point(v)).collect()
    }

    /// Scaling of ξ: the range spanned by the grid and the training points.
    pub fn schema(&self) -> Result<ParamSchema> {
        let mut all = self.grid_points();
        all.extend(self.train_points());
        ParamSchema::spanning(&all)
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_round_trip_through_toml() {
        for case in [Case::Ks, Case::Hopf] {
            let cfg = RunConfig::preset(case);
            let text = cfg.to_toml().unwrap();
            let back = RunConfig::from_toml(&format!("preset = \"{case}\"\n{text}")).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn empty_document_is_the_ks_preset() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn partial_documents_override_the_preset() {
        let cfg = RunConfig::from_toml("preset = \"hopf\"\nseed = 9\n[training]\nepochs = 3\n[training.adam]\nlr = 0.01\n").unwrap();
        let base = RunConfig::preset(Case::Hopf);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.training.epochs, 3);
        assert_eq!(cfg.training.adam.lr, 0.01);
        assert_eq!(cfg.training.adam.beta2, base.training.adam.beta2);
        assert_eq!(cfg.datagen, base.datagen);
        assert_eq!(cfg.loss.kld_weight, 1e-2);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("sed = 1\n").is_err());
        assert!(RunConfig::from_toml("[vae]\nlatent = 3\n").is_err());
        assert!(RunConfig::from_toml("[datagen.hopf]\nomegaa = 1.0\n").is_err());
        assert!(RunConfig::from_toml("preset = \"cylinder\"\n").is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(RunConfig::from_toml("[datagen]\ngrid = []\n").is_err());
        assert!(RunConfig::from_toml("[vae]\nlatent_dim = 0\n").is_err());
        assert!(RunConfig::from_toml("[uq]\nensemble_size = 1\n").is_err());
    }

    #[test]
    fn infinite_threshold_survives_toml() {
        let cfg = RunConfig::from_toml("[adaptive]\nthreshold = inf\n").unwrap();
        assert_eq!(cfg.adaptive.threshold, f64::INFINITY);
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back.adaptive.threshold, f64::INFINITY);
    }

    #[test]
    fn schema_spans_grid_and_training_points() {
        let cfg = RunConfig::preset(Case::Hopf);
        let s = cfg.schema().unwrap();
        assert_eq!(s.names, vec!["mu".to_string()]);
        assert_eq!((s.lower[0], s.upper[0]), (-0.15, 0.75));
        assert_eq!(cfg.train_points()[1], ParamPoint::single("mu", 0.55));
    }
}
