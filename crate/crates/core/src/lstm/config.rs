use std::fmt;

use serde::{Deserialize, Serialize};

use super::schedule::LrSchedule;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// Visual and language input both enter the single LSTM layer.
    OneLayer,
    /// Layer 1 as in `OneLayer`; layer 2 reads layer 1's output.
    TwoLayerUnfactored,
    /// Layer 1 reads only language; layer 2 reads layer 1's output and the
    /// visual input.
    TwoLayerFactored,
}

impl Architecture {
    pub const ALL: [Architecture; 3] = [
        Architecture::OneLayer,
        Architecture::TwoLayerUnfactored,
        Architecture::TwoLayerFactored,
    ];

    pub fn num_layers(self) -> usize {
        match self {
            Architecture::OneLayer => 1,
            _ => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropoutSite {
    None,
    /// On the word embedding.
    LangDrop,
    /// On the visual score vector.
    VisDrop,
    /// On both inputs.
    ConcatDrop,
    /// On the top LSTM output, before the prediction layer.
    LstmDrop,
}

impl DropoutSite {
    pub const SITES: [DropoutSite; 4] = [
        DropoutSite::LangDrop,
        DropoutSite::VisDrop,
        DropoutSite::ConcatDrop,
        DropoutSite::LstmDrop,
    ];

    pub fn drops_lang(self) -> bool {
        matches!(self, DropoutSite::LangDrop | DropoutSite::ConcatDrop)
    }

    pub fn drops_vis(self) -> bool {
        matches!(self, DropoutSite::VisDrop | DropoutSite::ConcatDrop)
    }

    pub fn drops_output(self) -> bool {
        self == DropoutSite::LstmDrop
    }
}

impl fmt::Display for DropoutSite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DropoutSite::None => "none",
            DropoutSite::LangDrop => "lang-drop",
            DropoutSite::VisDrop => "vis-drop",
            DropoutSite::ConcatDrop => "concat-drop",
            DropoutSite::LstmDrop => "lstm-drop",
        })
    }
}

/// Architecture, regularization and optimization settings of one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub architecture: Architecture,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub visual_dim: usize,
    pub dropout_site: DropoutSite,
    pub dropout_ratio: f64,
    pub schedule: LrSchedule,
    pub max_iters: usize,
    pub batch_size: usize,
    /// Rescale the gradient when its global L2 norm exceeds this.
    pub clip_norm: Option<f64>,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            architecture: Architecture::OneLayer,
            hidden_dim: 500,
            embed_dim: 500,
            visual_dim: 263,
            dropout_site: DropoutSite::LstmDrop,
            dropout_ratio: 0.5,
            schedule: LrSchedule::Step {
                base_lr: 0.01,
                step_size: 4000,
            },
            max_iters: 15_000,
            batch_size: 16,
            clip_norm: Some(10.0),
            init_scale: 0.08,
            seed: 0,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: usize, name: &str| {
            if v == 0 {
                Err(Error::InvalidInput(format!(
                    "network.{name} must be positive"
                )))
            } else {
                Ok(())
            }
        };
        positive(self.hidden_dim, "hidden_dim")?;
        positive(self.embed_dim, "embed_dim")?;
        positive(self.visual_dim, "visual_dim")?;
        positive(self.max_iters, "max_iters")?;
        positive(self.batch_size, "batch_size")?;
        if !(0.0..1.0).contains(&self.dropout_ratio) {
            return Err(Error::InvalidInput(
                "network.dropout_ratio must be in [0,1)".into(),
            ));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::InvalidInput(
                "network.init_scale must be nonnegative".into(),
            ));
        }
        if let Some(c) = self.clip_norm {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::InvalidInput(
                    "network.clip_norm must be positive".into(),
                ));
            }
        }
        self.schedule.validate()
    }

    /// Ratio actually applied in training (zero when no site is selected).
    pub fn effective_ratio(&self) -> f64 {
        if self.dropout_site == DropoutSite::None {
            0.0
        } else {
            self.dropout_ratio
        }
    }

    /// Short human-readable tag for grid summaries.
    pub fn describe(&self) -> String {
        let sched = match self.schedule {
            LrSchedule::Step { base_lr, step_size } => {
                format!("step(lr={base_lr},step={step_size})")
            }
            LrSchedule::Poly {
                base_lr,
                power,
                max_iter,
            } => {
                format!("poly(lr={base_lr},pow={power},maxiter={max_iter})")
            }
        };
        format!(
            "{:?}/{}/r={}/{}/iters={}/h={}/seed={}",
            self.architecture,
            self.dropout_site,
            self.dropout_ratio,
            sched,
            self.max_iters,
            self.hidden_dim,
            self.seed
        )
    }
}
