use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::scenegen::{
    derive_seed, generate_dataset_with, lookup, paired_dataset_with, DomainPolicy, LabeledDataset,
    ObjectSpec, PairedDataset, ScenePolicy,
};

/// What one pipeline is trained on: the real target, the canonical proxy
/// rendered in its place, and the real-proxy capture conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recipe {
    pub name: String,
    pub target: ObjectSpec,
    pub proxy: ObjectSpec,
    pub real_domain: DomainPolicy,
    pub real_scene: ScenePolicy,
}

/// Training inputs of one pipeline run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingData {
    /// Canonical proxy images on the small grid.
    pub synthetic: LabeledDataset,
    /// Real-proxy and canonical images on the large grid.
    pub pairs: PairedDataset,
}

fn object(name: &str) -> Result<ObjectSpec> {
    lookup(name).ok_or_else(|| Error::InvalidArgument(format!("unknown object `{name}`")))
}

impl Recipe {
    /// A flat-coloured object that is its own canonical proxy, captured
    /// alone on a white board under the room light.
    pub fn simple(object_name: &str) -> Result<Self> {
        let target = object(object_name)?;
        Ok(Self {
            name: object_name.to_string(),
            proxy: target.clone(),
            target,
            real_domain: DomainPolicy::real_proxy(),
            real_scene: ScenePolicy::room(),
        })
    }

    /// The textured household target among two other household objects,
    /// with a flat orange cylinder as its canonical proxy.
    pub fn textured() -> Result<Self> {
        Ok(Self {
            name: "household-target".into(),
            target: object("household-target")?,
            proxy: object("orange-cylinder")?,
            real_domain: DomainPolicy::real_proxy(),
            real_scene: ScenePolicy {
                distractors: vec![object("household-box")?, object("household-can")?],
                ..ScenePolicy::room()
            },
        })
    }

    pub fn names() -> [&'static str; 5] {
        ["red-cube", "green-cube", "black-cylinder", "blue-prism", "household-target"]
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "household-target" => Self::textured(),
            n if Self::names().contains(&n) => Self::simple(n),
            n => Err(Error::InvalidArgument(format!(
                "unknown recipe `{n}`; expected one of {}",
                Self::names().join(", ")
            ))),
        }
    }

    pub fn training_data(&self, cfg: &TrainConfig) -> Result<TrainingData> {
        let ws = cfg.workspace();
        let synthetic = generate_dataset_with(
            &self.proxy,
            &cfg.small_grid(),
            DomainPolicy::Canonical,
            &ScenePolicy::clean(),
            cfg.resolution,
            derive_seed(cfg.seed, 1, 0),
            &ws,
        )?;
        let pairs = paired_dataset_with(
            &self.target,
            &self.proxy,
            &cfg.large_grid(),
            self.real_domain,
            &self.real_scene,
            cfg.resolution,
            derive_seed(cfg.seed, 2, 0),
            &ws,
        )?;
        Ok(TrainingData { synthetic, pairs })
    }
}
