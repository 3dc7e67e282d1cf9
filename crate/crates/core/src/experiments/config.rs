use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Backbone, ExperimentKind};
use crate::error::{Error, Result};
use crate::heads::{HeadKind, TrainConfig};
use crate::optim::EarlyStopConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Approach {
    Proposed,
    Baseline,
    #[default]
    Both,
}

impl Approach {
    pub fn heads(self) -> &'static [HeadKind] {
        match self {
            Self::Proposed => &[HeadKind::Proposed],
            Self::Baseline => &[HeadKind::Baseline],
            Self::Both => &[HeadKind::Baseline, HeadKind::Proposed],
        }
    }
}

impl std::str::FromStr for Approach {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "proposed" => Ok(Self::Proposed),
            "baseline" => Ok(Self::Baseline),
            "both" => Ok(Self::Both),
            other => Err(Error::Config(format!("unknown approach {other:?}"))),
        }
    }
}

/// Training fractions to sweep at a fixed `J`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitGrid {
    pub f: Vec<f64>,
    #[serde(default = "default_j")]
    pub j: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_j() -> usize {
    500
}

/// Partial [`TrainConfig`]; unset fields keep each head's defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_lr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub momentum: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub early_stop: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patience: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_delta: Option<f64>,
}

impl TrainOverrides {
    pub fn apply(&self, mut cfg: TrainConfig) -> TrainConfig {
        if let Some(v) = self.base_lr {
            cfg.sgd.base_lr = v;
        }
        if let Some(v) = self.momentum {
            cfg.sgd.momentum = v;
        }
        if let Some(v) = self.step_size {
            cfg.sgd.step_size = v;
        }
        if let Some(v) = self.gamma {
            cfg.sgd.gamma = v;
        }
        if let Some(v) = self.max_epochs {
            cfg.max_epochs = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if self.early_stop == Some(false) {
            cfg.early_stop = None;
        } else if self.early_stop == Some(true) || self.patience.is_some() || self.min_delta.is_some() {
            let mut es = cfg.early_stop.unwrap_or_default();
            if let Some(p) = self.patience {
                es.patience = p;
            }
            if let Some(d) = self.min_delta {
                es.min_delta = d;
            }
            cfg.early_stop = Some(EarlyStopConfig { ..es });
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub backbone: Backbone,
    #[serde(default)]
    pub approach: Approach,
    /// Class selections to run; each is one grid axis entry.
    #[serde(alias = "kinds")]
    pub kind: Vec<ExperimentKind>,
    pub split: SplitGrid,
    /// Applied on top of each head's default configuration.
    #[serde(default)]
    pub train: TrainOverrides,
    /// Hyperparameter candidates for cross-validation; empty skips it.
    #[serde(default)]
    pub candidates: Vec<TrainOverrides>,
    #[serde(default = "one")]
    pub repeats: usize,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub threads: usize,
    /// Run grid cells concurrently. Off by default so training times are
    /// measured without competing work.
    #[serde(default)]
    pub parallel_cells: bool,
}

fn one() -> usize {
    1
}

fn default_folds() -> usize {
    5
}

impl ExperimentConfig {
    pub fn new(backbone: Backbone, kind: Vec<ExperimentKind>, f: Vec<f64>) -> Self {
        Self {
            backbone,
            approach: Approach::Both,
            kind,
            split: SplitGrid { f, j: default_j(), seed: 0 },
            train: TrainOverrides::default(),
            candidates: Vec::new(),
            repeats: 1,
            folds: default_folds(),
            seed: 0,
            threads: 1,
            parallel_cells: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        if !(1..=30).contains(&self.folds) {
            return Err(Error::Config(format!("folds must be in 1..=30, got {}", self.folds)));
        }
        if self.kind.is_empty() || self.split.f.is_empty() {
            return Err(Error::Config("experiment grid is empty".into()));
        }
        if self.threads == 0 {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        Ok(())
    }

    /// The training configuration a head of `kind` runs with, before any
    /// cross-validation.
    pub fn train_config(&self, kind: HeadKind, seed: u64) -> TrainConfig {
        let mut cfg = self.train.apply(TrainConfig::default_for(kind));
        cfg.seed = seed;
        cfg.threads = self.threads;
        cfg
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let cfg: Self = serde_json::from_slice(&bytes).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_json() {
        let cfg: ExperimentConfig = serde_json::from_str(
            r#"{"backbone":"resnet18","kind":[{"type":"a_type","species":"Bird","n":3}],"split":{"f":[0.1]}}"#,
        )
        .unwrap();
        assert_eq!(cfg.approach, Approach::Both);
        assert_eq!(cfg.split.j, 500);
        assert_eq!((cfg.repeats, cfg.folds, cfg.threads), (1, 5, 1));
        cfg.validate().unwrap();
    }

    #[test]
    fn rejects_bad_grid() {
        let mut cfg = ExperimentConfig::new(Backbone::Vgg19, vec![ExperimentKind::BType { per_species: 3 }], vec![0.1]);
        cfg.folds = 31;
        assert!(cfg.validate().is_err());
        cfg.folds = 30;
        cfg.repeats = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn overrides_apply() {
        let o = TrainOverrides {
            base_lr: Some(0.5),
            early_stop: Some(false),
            ..Default::default()
        };
        let cfg = o.apply(TrainConfig::baseline());
        assert_eq!(cfg.sgd.base_lr, 0.5);
        assert_eq!(cfg.sgd.momentum, 0.9);
        assert!(cfg.early_stop.is_none());
        let o = TrainOverrides { patience: Some(1), ..Default::default() };
        assert_eq!(o.apply(TrainConfig::proposed()).early_stop.unwrap().patience, 1);
    }
}
