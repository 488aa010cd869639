use serde::{Deserialize, Serialize};

use super::{ExperimentSpec, ModelChoice, TestPositions};
use crate::error::{Error, Result};
use crate::pipeline::{Recipe, TrainConfig};
use crate::scenegen::{derive_seed, lookup, Background, Lighting, ObjectSpec, ScenePolicy};

/// Spacing of the held-out test grid.
pub const TEST_SPACING_MM: f64 = 25.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixKind {
    /// Flat-coloured objects, experiments (a) to (g).
    Simple,
    /// The textured household target, experiments (h) to (n).
    Textured,
}

fn object(name: &str) -> Result<ObjectSpec> {
    lookup(name).ok_or_else(|| Error::InvalidArgument(format!("unknown object `{name}`")))
}

struct Row<'a> {
    id: &'a str,
    description: &'a str,
    recipe: &'a Recipe,
    scene: ScenePolicy,
    model: ModelChoice,
    nominal: Option<&'a str>,
    baseline: Option<&'a str>,
}

fn build(cfg: &TrainConfig, rows: Vec<Row<'_>>) -> Vec<ExperimentSpec> {
    rows.into_iter()
        .map(|r| ExperimentSpec {
            id: r.id.into(),
            description: r.description.into(),
            recipe: r.recipe.name.clone(),
            target: r.recipe.target.clone(),
            proxy: r.recipe.proxy.clone(),
            scene: r.scene,
            domain: r.recipe.real_domain,
            model: r.model,
            positions: TestPositions::Grid(cfg.test_grid(TEST_SPACING_MM)),
            seed: derive_seed(cfg.seed, 100, r.id.as_bytes()[0] as u64),
            nominal: r.nominal.map(Into::into),
            baseline: r.baseline.map(Into::into),
        })
        .collect()
}

/// Experiments (a) to (g): the baseline and the method on the red cube, the
/// method on three more shapes, then the green cube under the table light
/// and among three other objects.
pub fn simple_matrix(cfg: &TrainConfig) -> Result<Vec<ExperimentSpec>> {
    let red = Recipe::simple("red-cube")?;
    let green = Recipe::simple("green-cube")?;
    let cylinder = Recipe::simple("black-cylinder")?;
    let prism = Recipe::simple("blue-prism")?;
    let room = ScenePolicy::room;
    let rows = vec![
        Row {
            id: "a",
            description: "baseline CNN on red cube",
            recipe: &red,
            scene: room(),
            model: ModelChoice::Baseline,
            nominal: None,
            baseline: None,
        },
        Row {
            id: "b",
            description: "red cube",
            recipe: &red,
            scene: room(),
            model: ModelChoice::Method,
            nominal: None,
            baseline: Some("a"),
        },
        Row {
            id: "c",
            description: "green cube",
            recipe: &green,
            scene: room(),
            model: ModelChoice::Method,
            nominal: None,
            baseline: None,
        },
        Row {
            id: "d",
            description: "black cylinder",
            recipe: &cylinder,
            scene: room(),
            model: ModelChoice::Method,
            nominal: None,
            baseline: None,
        },
        Row {
            id: "e",
            description: "blue triangular prism",
            recipe: &prism,
            scene: room(),
            model: ModelChoice::Method,
            nominal: None,
            baseline: None,
        },
        Row {
            id: "f",
            description: "green cube under the table light",
            recipe: &green,
            scene: ScenePolicy {
                lighting: Lighting::table_light(),
                ..room()
            },
            model: ModelChoice::Method,
            nominal: Some("c"),
            baseline: None,
        },
        Row {
            id: "g",
            description: "green cube with three other objects",
            recipe: &green,
            scene: ScenePolicy {
                distractors: vec![object("red-cube-small")?, object("black-cylinder")?, object("blue-prism")?],
                ..room()
            },
            model: ModelChoice::Method,
            nominal: None,
            baseline: None,
        },
    ];
    Ok(build(cfg, rows))
}

/// Experiments (h) to (n): the textured target among household objects on
/// the white, black and checkered boards, with the training distractors or
/// an unseen pair, and alone.
pub fn textured_matrix(cfg: &TrainConfig) -> Result<Vec<ExperimentSpec>> {
    let recipe = Recipe::textured()?;
    let seen = recipe.real_scene.distractors.clone();
    let unseen = vec![object("household-wedge")?, object("household-block")?];
    let scene = |background: Background, distractors: &[ObjectSpec]| ScenePolicy {
        background,
        distractors: distractors.to_vec(),
        ..ScenePolicy::room()
    };
    let checker = Background::colorful_checker;
    let rows = vec![
        Row {
            id: "h",
            description: "baseline CNN, target with two household objects on white",
            recipe: &recipe,
            scene: scene(Background::White, &seen),
            model: ModelChoice::Baseline,
            nominal: None,
            baseline: None,
        },
        Row {
            id: "i",
            description: "target with two household objects on white",
            recipe: &recipe,
            scene: scene(Background::White, &seen),
            model: ModelChoice::Method,
            nominal: None,
            baseline: None,
        },
        Row {
            id: "j",
            description: "target with two household objects on black",
            recipe: &recipe,
            scene: scene(Background::Black, &seen),
            model: ModelChoice::Method,
            nominal: Some("i"),
            baseline: None,
        },
        Row {
            id: "k",
            description: "target with two household objects on checkered",
            recipe: &recipe,
            scene: scene(checker(), &seen),
            model: ModelChoice::Method,
            nominal: Some("i"),
            baseline: None,
        },
        Row {
            id: "l",
            description: "target with two unseen objects on black",
            recipe: &recipe,
            scene: scene(Background::Black, &unseen),
            model: ModelChoice::Method,
            nominal: Some("i"),
            baseline: None,
        },
        Row {
            id: "m",
            description: "target with two unseen objects on checkered",
            recipe: &recipe,
            scene: scene(checker(), &unseen),
            model: ModelChoice::Method,
            nominal: Some("i"),
            baseline: None,
        },
        Row {
            id: "n",
            description: "target alone on checkered",
            recipe: &recipe,
            scene: scene(checker(), &[]),
            model: ModelChoice::Method,
            nominal: Some("i"),
            baseline: None,
        },
    ];
    Ok(build(cfg, rows))
}

impl MatrixKind {
    pub fn specs(self, cfg: &TrainConfig) -> Result<Vec<ExperimentSpec>> {
        match self {
            MatrixKind::Simple => simple_matrix(cfg),
            MatrixKind::Textured => textured_matrix(cfg),
        }
    }
}
