//! The experiment matrix, error reports, selectivity checks and CSV output.

mod matrix;
mod report;
mod selectivity;

pub use matrix::{simple_matrix, textured_matrix, MatrixKind};
pub use report::{emit_report, summary_row, ErrorSummary, MseStats, PositionError, Provenance};
pub use selectivity::{selectivity_check, selectivity_suite, SelectivityResult, SelectivitySuite};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::models::{batch_tensor, VaeNet};
use crate::pipeline::{infer_batch, Checkpoint, TrainConfig};
use crate::scenegen::{
    render_item, DomainPolicy, GridSpec, ImageRGBD, ObjectSpec, ScenePolicy, Workspace,
};

/// Which trained detector an experiment evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelChoice {
    /// VAE2 followed by the CNN.
    Method,
    /// The CNN trained directly on real-proxy images.
    Baseline,
}

/// Where an experiment places the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestPositions {
    Grid(GridSpec),
    List { positions: Vec<(f64, f64)> },
}

impl TestPositions {
    pub fn resolve(&self) -> Result<Vec<(f64, f64)>> {
        match self {
            TestPositions::Grid(g) => g.positions(),
            TestPositions::List { positions } => Ok(positions.clone()),
        }
    }
}

/// One re-runnable experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub id: String,
    pub description: String,
    /// Name of the trained pipeline whose checkpoints are used.
    pub recipe: String,
    pub target: ObjectSpec,
    /// Canonical stand-in for the target, used for image-MSE statistics.
    pub proxy: ObjectSpec,
    pub scene: ScenePolicy,
    pub domain: DomainPolicy,
    pub model: ModelChoice,
    pub positions: TestPositions,
    pub seed: u64,
    /// Experiment whose mean error bounds this one.
    pub nominal: Option<String>,
    /// Baseline experiment this method run must beat.
    pub baseline: Option<String>,
}

impl ExperimentSpec {
    pub fn sha256_hex(&self) -> String {
        let json = serde_json::to_vec(self).expect("specs serialize");
        hex::encode(Sha256::digest(json))
    }
}

/// Checkpoints of one trained pipeline. Any may be absent.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainedModels {
    pub vae2: Option<Checkpoint>,
    pub cnn: Option<Checkpoint>,
    pub baseline: Option<Checkpoint>,
}

/// Trained pipelines keyed by recipe name, with their shared config.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBank {
    pub config: TrainConfig,
    pub pipelines: BTreeMap<String, TrainedModels>,
}

impl ModelBank {
    pub fn new(config: TrainConfig) -> Self {
        Self {
            config,
            pipelines: BTreeMap::new(),
        }
    }

    fn checkpoint(&self, recipe: &str, which: &str) -> Result<&Checkpoint> {
        let models = self.pipelines.get(recipe);
        let ck = models.and_then(|m| match which {
            "vae2" => m.vae2.as_ref(),
            "cnn" => m.cnn.as_ref(),
            _ => m.baseline.as_ref(),
        });
        ck.ok_or_else(|| Error::MissingCheckpoint(format!("{recipe}/{which}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub spec: ExperimentSpec,
    pub rows: Vec<PositionError>,
    pub summary: ErrorSummary,
    /// MSE between each detector input after VAE2 and the canonical render
    /// of the target alone; method experiments only.
    pub image_mse: Option<MseStats>,
    pub provenance: Provenance,
}

/// Mean squared difference over every channel and pixel.
pub fn image_mse(a: &ImageRGBD, b: &ImageRGBD) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape("image_mse", &a.shape(), &b.shape()));
    }
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| {
            let d = *x as f64 - *y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.data.len() as f64)
}

fn reconstruct_all(vae: &VaeNet, images: &[ImageRGBD], depth_scale_mm: f64) -> Result<Vec<ImageRGBD>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(128) {
        let x = batch_tensor(&chunk.iter().collect::<Vec<_>>())?;
        out.extend(crate::models::tensor_images(&vae.reconstruct(&x)?, depth_scale_mm)?);
    }
    Ok(out)
}

/// Renders each test position under the spec's scene, runs the chosen
/// detector and aggregates the position errors.
pub fn run_experiment(spec: &ExperimentSpec, bank: &ModelBank) -> Result<ExperimentReport> {
    let cfg = &bank.config;
    let ws = cfg.workspace();
    let (vae, cnn_ck) = match spec.model {
        ModelChoice::Method => {
            let vae2 = bank.checkpoint(&spec.recipe, "vae2")?;
            (Some(vae2), bank.checkpoint(&spec.recipe, "cnn")?)
        }
        ModelChoice::Baseline => (None, bank.checkpoint(&spec.recipe, "baseline")?),
    };
    let mut provenance = Provenance {
        spec_sha256: spec.sha256_hex(),
        seed: spec.seed,
        checkpoints: Vec::new(),
    };
    for ck in vae.iter().copied().chain([cnn_ck]) {
        provenance
            .checkpoints
            .push((ck.stage.as_str().to_string(), hex::encode(ck.params_sha256())));
    }

    let positions = spec.positions.resolve()?;
    if positions.is_empty() {
        return Ok(ExperimentReport {
            spec: spec.clone(),
            rows: Vec::new(),
            summary: ErrorSummary::from_rows(&[]),
            image_mse: spec.model.eq(&ModelChoice::Method).then(|| MseStats::from_values(&[])),
            provenance,
        });
    }
    let images = render_positions(&spec.target, &positions, spec.domain, &spec.scene, cfg.resolution, spec.seed, &ws)?;
    let vae = vae.map(|c| c.vae(cfg.vae_arch())).transpose()?;
    let cnn = cnn_ck.cnn(cfg.resolution)?;
    let preds = infer_batch(vae.as_ref(), &cnn, &images, cfg.placement_region_mm)?;
    let rows: Vec<PositionError> = positions
        .iter()
        .zip(&preds)
        .map(|(&(x, y), &(px, py))| PositionError::new(x, y, px, py))
        .collect();

    let image_mse = match &vae {
        Some(v) => {
            let outputs = reconstruct_all(v, &images, ws.depth_scale_mm)?;
            let clean = render_positions(
                &spec.proxy,
                &positions,
                DomainPolicy::Canonical,
                &ScenePolicy::clean(),
                cfg.resolution,
                spec.seed,
                &ws,
            )?;
            let values = outputs
                .iter()
                .zip(&clean)
                .map(|(a, b)| image_mse(a, b))
                .collect::<Result<Vec<_>>>()?;
            Some(MseStats::from_values(&values))
        }
        None => None,
    };
    Ok(ExperimentReport {
        spec: spec.clone(),
        summary: ErrorSummary::from_rows(&rows),
        rows,
        image_mse,
        provenance,
    })
}

fn render_positions(
    object: &ObjectSpec,
    positions: &[(f64, f64)],
    domain: DomainPolicy,
    scene: &ScenePolicy,
    resolution: (usize, usize),
    seed: u64,
    ws: &Workspace,
) -> Result<Vec<ImageRGBD>> {
    positions
        .iter()
        .enumerate()
        .map(|(i, &p)| render_item(object, p, i, domain, scene, resolution, seed, ws).map(|(img, _)| img))
        .collect()
}

/// One pass/fail acceptance gate over a set of reports.
#[derive(Debug, Clone, PartialEq)]
pub struct Gate {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Largest allowed ratio of a robustness experiment's mean error to its
/// nominal counterpart's.
pub const ROBUSTNESS_FACTOR: f64 = 2.0;
/// Largest allowed ratio of the method's mean error to the baseline's.
pub const BASELINE_FACTOR: f64 = 0.5;
/// Largest allowed method mean error as a fraction of the region width.
pub const REGION_WIDTH_FRACTION: f64 = 0.02;

/// Gates implied by the `nominal` and `baseline` links between reports.
/// Links to experiments absent from `reports` are skipped.
pub fn acceptance_gates(reports: &[ExperimentReport], region_width_mm: f64) -> Vec<Gate> {
    let by_id: BTreeMap<&str, &ExperimentReport> =
        reports.iter().map(|r| (r.spec.id.as_str(), r)).collect();
    let mut gates = Vec::new();
    for r in reports {
        let mean = r.summary.mean_mm;
        if let Some(nominal) = r.spec.nominal.as_deref().and_then(|id| by_id.get(id)) {
            let bound = ROBUSTNESS_FACTOR * nominal.summary.mean_mm;
            gates.push(Gate {
                name: format!("({}) within {ROBUSTNESS_FACTOR}x of ({})", r.spec.id, nominal.spec.id),
                passed: mean <= bound,
                detail: format!("{mean:.2} mm vs bound {bound:.2} mm"),
            });
        }
        if let Some(base) = r.spec.baseline.as_deref().and_then(|id| by_id.get(id)) {
            let bound = BASELINE_FACTOR * base.summary.mean_mm;
            gates.push(Gate {
                name: format!("({}) at most {BASELINE_FACTOR}x baseline ({})", r.spec.id, base.spec.id),
                passed: mean <= bound,
                detail: format!("{mean:.2} mm vs bound {bound:.2} mm"),
            });
            let limit = REGION_WIDTH_FRACTION * region_width_mm;
            gates.push(Gate {
                name: format!("({}) mean error within {}% of region width", r.spec.id, REGION_WIDTH_FRACTION * 100.0),
                passed: mean <= limit,
                detail: format!("{mean:.2} mm vs limit {limit:.2} mm"),
            });
        }
    }
    gates
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_mse_closed_forms() {
        let zeros = ImageRGBD::new(4, 4, vec![0.0; 64], 100.0).unwrap();
        let ones = ImageRGBD::new(4, 4, vec![1.0; 64], 100.0).unwrap();
        assert_eq!(image_mse(&zeros, &zeros).unwrap(), 0.0);
        assert_eq!(image_mse(&zeros, &ones).unwrap(), 1.0);
        let other = ImageRGBD::new(2, 8, vec![0.0; 64], 100.0).unwrap();
        assert!(image_mse(&zeros, &other).is_err());
    }

    #[test]
    fn missing_checkpoint_is_rejected() {
        let cfg = TrainConfig::default();
        let spec = simple_matrix(&cfg).unwrap().remove(1);
        let err = run_experiment(&spec, &ModelBank::new(cfg)).unwrap_err();
        assert!(matches!(err, Error::MissingCheckpoint(ref s) if s == "red-cube/vae2"), "{err}");
    }
}
