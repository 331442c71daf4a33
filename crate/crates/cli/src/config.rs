//! Flat run configuration shared by every subcommand.
//!
//! One JSON object holds every tunable. Keys the generator and the model
//! must agree on (image sizes, seed) appear exactly once, so a config file
//! cannot put the two halves of the pipeline out of sync.

use std::fs;
use std::path::Path;

use afgeo_core::data::SynthConfig;
use afgeo_core::train::TrainConfig;
use afgeo_core::{HeadConfig, ModelConfig};
use anyhow::Context;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    /// Master seed: drives data generation, parameter init, and the
    /// training shuffle.
    pub seed: u64,
    pub reference_size: (usize, usize),
    pub query_size: (usize, usize),
    pub num_shapes: (usize, usize),
    pub target_size: (f64, f64),
    pub jitter: f64,
    pub click_noise: f64,
    pub flip_prob: f64,
    pub backbone_channels: Vec<usize>,
    pub backbone_strides: Vec<usize>,
    pub head_strides: Vec<usize>,
    pub scale_breaks: Vec<f64>,
    pub radius_rho: f64,
    pub sigma_floor: f64,
    pub use_cvoam: bool,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub decay_every: usize,
    pub decay_factor: f64,
    /// Samples generated by `gen-data` and trained on by `train`
    /// (indices 0..train_samples).
    pub train_samples: usize,
    /// Held-out samples scored by `eval`/`infer`.
    pub eval_samples: usize,
    /// First held-out index; keeps train and eval sets disjoint.
    pub eval_offset: u64,
}

impl Default for CliConfig {
    fn default() -> Self {
        let synth = SynthConfig::default();
        let model = ModelConfig::compact();
        let train = TrainConfig::default();
        Self {
            seed: synth.seed,
            reference_size: synth.reference_size,
            query_size: synth.query_size,
            num_shapes: synth.num_shapes,
            target_size: synth.target_size,
            jitter: synth.jitter,
            click_noise: synth.click_noise,
            flip_prob: synth.flip_prob,
            backbone_channels: model.backbone_channels,
            backbone_strides: model.backbone_strides,
            head_strides: model.head.strides,
            scale_breaks: model.head.scale_breaks,
            radius_rho: model.head.radius_rho,
            sigma_floor: model.sigma_floor,
            use_cvoam: model.use_cvoam,
            learning_rate: train.learning_rate,
            momentum: train.momentum,
            epochs: train.epochs,
            batch_size: train.batch_size,
            decay_every: train.decay_every,
            decay_factor: train.decay_factor,
            train_samples: 2000,
            eval_samples: 200,
            eval_offset: 10_000,
        }
    }
}

impl CliConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Echo the effective configuration; every run directory gets one.
    pub fn save(&self, path: &Path) -> anyhow::Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            seed: self.seed,
            reference_size: self.reference_size,
            query_size: self.query_size,
            num_shapes: self.num_shapes,
            target_size: self.target_size,
            jitter: self.jitter,
            click_noise: self.click_noise,
            flip_prob: self.flip_prob,
        }
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            backbone_channels: self.backbone_channels.clone(),
            backbone_strides: self.backbone_strides.clone(),
            query_size: self.query_size,
            reference_size: self.reference_size,
            head: HeadConfig {
                strides: self.head_strides.clone(),
                scale_breaks: self.scale_breaks.clone(),
                radius_rho: self.radius_rho,
            },
            sigma_floor: self.sigma_floor,
            use_cvoam: self.use_cvoam,
            seed: self.seed,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            epochs: self.epochs,
            batch_size: self.batch_size,
            decay_every: self.decay_every,
            decay_factor: self.decay_factor,
            seed: self.seed,
        }
    }
}
