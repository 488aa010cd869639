//! The three training stages (VAE1, VAE2 with a frozen decoder, position
//! CNN), the raw-image baseline, and inference.

mod recipe;
mod train;

pub use recipe::{Recipe, TrainingData};
pub use train::{infer, infer_batch, run_pipeline, train_baseline, train_cnn, train_vae1, train_vae2};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::models::{architecture_fingerprint, CnnRegressor, NetKind, VaeArch, VaeNet};
use crate::ndtensor::{AdamConfig, LayerParams};
use crate::scenegen::{GridSpec, Manifest, Workspace};

/// Which image the CNN is trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CnnInput {
    /// `decode(mu)`: the deterministic VAE1 reconstruction.
    Mean,
    /// `decode(mu + sigma * eps)` with one fixed draw per image.
    Sampled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Epochs {
    pub vae1: usize,
    pub vae2: usize,
    pub cnn: usize,
    pub baseline: usize,
}

impl Default for Epochs {
    fn default() -> Self {
        Self {
            vae1: 50,
            vae2: 400,
            cnn: 30,
            baseline: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: Epochs,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Encoder learning rate while the decoder is frozen.
    pub vae2_learning_rate: f64,
    pub beta: f64,
    pub latent_dim: usize,
    pub seed: u64,
    /// `(width, height)` in pixels.
    pub resolution: (usize, usize),
    pub placement_region_mm: (f64, f64),
    pub grid_spacing_large_mm: f64,
    pub grid_spacing_small_mm: f64,
    /// Keep the KL term while adapting the VAE2 encoder.
    pub vae2_kl: bool,
    pub cnn_input: CnnInput,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: Epochs::default(),
            batch_size: 32,
            learning_rate: 1e-3,
            vae2_learning_rate: 3e-4,
            beta: 1e-6,
            latent_dim: 32,
            seed: 0,
            resolution: (32, 32),
            placement_region_mm: (400.0, 250.0),
            grid_spacing_large_mm: 50.0,
            grid_spacing_small_mm: 5.0,
            vae2_kl: true,
            cnn_input: CnnInput::Mean,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size as f64),
            ("learning_rate", self.learning_rate),
            ("vae2_learning_rate", self.vae2_learning_rate),
            ("beta", self.beta),
            ("latent_dim", self.latent_dim as f64),
            ("resolution width", self.resolution.0 as f64),
            ("resolution height", self.resolution.1 as f64),
            ("placement region width", self.placement_region_mm.0),
            ("placement region height", self.placement_region_mm.1),
            ("grid_spacing_large_mm", self.grid_spacing_large_mm),
            ("grid_spacing_small_mm", self.grid_spacing_small_mm),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        self.vae_arch().hypers()?;
        Ok(())
    }

    pub fn vae_arch(&self) -> VaeArch {
        VaeArch::new(self.resolution, self.latent_dim)
    }

    /// The placement region centred on a board with a 25 mm margin.
    pub fn workspace(&self) -> Workspace {
        let (w, h) = self.placement_region_mm;
        Workspace {
            board_mm: (w + 50.0, h + 50.0),
            region_mm: (w, h),
            ..Workspace::default()
        }
    }

    pub fn small_grid(&self) -> GridSpec {
        GridSpec::new(self.placement_region_mm, self.grid_spacing_small_mm)
    }

    pub fn large_grid(&self) -> GridSpec {
        GridSpec::new(self.placement_region_mm, self.grid_spacing_large_mm)
    }

    /// Held-out positions: the small grid shifted by half its spacing, so no
    /// test position lies on either training grid.
    pub fn test_grid(&self, spacing_mm: f64) -> GridSpec {
        let off = self.grid_spacing_small_mm / 2.0;
        GridSpec::new(self.placement_region_mm, spacing_mm).with_offset((off, off))
    }

    fn adam(&self, lr: f64) -> AdamConfig {
        AdamConfig {
            lr,
            ..AdamConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Vae1,
    Vae2,
    Cnn,
    Baseline,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Vae1 => "vae1",
            Stage::Vae2 => "vae2",
            Stage::Cnn => "cnn",
            Stage::Baseline => "baseline",
        }
    }

    pub fn kind(self) -> NetKind {
        match self {
            Stage::Vae1 | Stage::Vae2 => NetKind::Vae,
            Stage::Cnn | Stage::Baseline => NetKind::Cnn,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Stage::Vae1, Stage::Vae2, Stage::Cnn, Stage::Baseline]
            .into_iter()
            .find(|st| st.as_str() == s)
    }
}

/// Trained parameters of one stage together with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub stage: Stage,
    pub seed: u64,
    pub layers: Vec<LayerParams>,
    /// Mean training loss per epoch.
    pub losses: Vec<f64>,
}

impl Checkpoint {
    pub fn kind(&self) -> NetKind {
        self.stage.kind()
    }

    pub fn fingerprint(&self) -> [u8; 32] {
        let hypers: Vec<_> = self.layers.iter().map(|l| l.hyper).collect();
        architecture_fingerprint(self.kind(), &hypers)
    }

    /// SHA-256 of every parameter byte, in layer order.
    pub fn params_sha256(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for l in &self.layers {
            h.update(l.to_le_bytes());
        }
        h.finalize().into()
    }

    pub fn vae(&self, arch: VaeArch) -> Result<VaeNet> {
        self.expect_kind(NetKind::Vae)?;
        VaeNet::from_layers(arch, self.layers.clone())
    }

    pub fn cnn(&self, resolution: (usize, usize)) -> Result<CnnRegressor> {
        self.expect_kind(NetKind::Cnn)?;
        CnnRegressor::from_layers(resolution, self.layers.clone())
    }

    fn expect_kind(&self, kind: NetKind) -> Result<()> {
        if self.kind() != kind {
            return Err(Error::InvalidArgument(format!(
                "expected a {} checkpoint, got stage {}",
                kind.as_str(),
                self.stage.as_str()
            )));
        }
        Ok(())
    }

    /// SHA-256 of the decoder parameter bytes of a VAE checkpoint.
    pub fn decoder_sha256(&self) -> Result<[u8; 32]> {
        self.expect_kind(NetKind::Vae)?;
        let mut h = Sha256::new();
        for l in &self.layers[VaeNet::DECODER_SLOTS] {
            h.update(l.to_le_bytes());
        }
        Ok(h.finalize().into())
    }
}

/// Everything one pipeline run produced, in stage order.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineRun {
    pub config: TrainConfig,
    pub vae1: Checkpoint,
    pub vae2: Checkpoint,
    pub cnn: Checkpoint,
    pub manifests: Vec<Manifest>,
}

impl PipelineRun {
    pub fn loss_curves(&self) -> [(Stage, &[f64]); 3] {
        [
            (Stage::Vae1, &self.vae1.losses),
            (Stage::Vae2, &self.vae2.losses),
            (Stage::Cnn, &self.cnn.losses),
        ]
    }
}
