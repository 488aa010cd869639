//! Trains VAE1, VAE2, the CNN and the baseline for one recipe, saves the
//! checkpoints, then evaluates the recipe's experiments and a selectivity
//! suite.
//!
//! cargo run --release --example full_pipeline -- [recipe] [--full] [--out DIR]
//!
//! Without `--full` the run uses 16x16 images and short schedules; with it,
//! the default configuration.

use std::path::PathBuf;

use sim2real::cli::{save_checkpoint, write_atomic};
use sim2real::eval::{
    acceptance_gates, emit_report, run_experiment, selectivity_suite, ModelBank, MatrixKind,
    SelectivitySuite, TrainedModels,
};
use sim2real::pipeline::{run_pipeline, train_baseline, Epochs, Recipe, TrainConfig};
use sim2real::scenegen::lookup;

fn main() -> sim2real::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let full = args.iter().any(|a| a == "--full");
    let out = args
        .iter()
        .position(|a| a == "--out")
        .and_then(|i| args.get(i + 1))
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("sim2real-full-pipeline"));
    let name = args.first().filter(|a| !a.starts_with("--")).map_or("red-cube", String::as_str);
    let recipe = Recipe::by_name(name)?;
    let cfg = if full {
        TrainConfig::default()
    } else {
        TrainConfig {
            resolution: (16, 16),
            grid_spacing_small_mm: 10.0,
            latent_dim: 16,
            epochs: Epochs { vae1: 15, vae2: 100, cnn: 15, baseline: 100 },
            ..TrainConfig::default()
        }
    };

    let t = std::time::Instant::now();
    let data = recipe.training_data(&cfg)?;
    let run = run_pipeline(&cfg, &data.synthetic, &data.pairs)?;
    let baseline = train_baseline(&data.pairs.real, &cfg)?;
    println!("trained {} in {:.0} s", recipe.name, t.elapsed().as_secs_f64());
    for (stage, losses) in run.loss_curves() {
        println!("  {:<8} final loss {:.5}", stage.as_str(), losses.last().unwrap_or(&f64::NAN));
    }

    let dir = out.join(&recipe.name);
    for ck in [&run.vae1, &run.vae2, &run.cnn, &baseline] {
        save_checkpoint(&dir.join(format!("{}.s2pc", ck.stage.as_str())), ck)?;
    }
    write_atomic(&out.join("config.json"), &serde_json::to_vec_pretty(&cfg)?)?;

    let mut bank = ModelBank::new(cfg.clone());
    bank.pipelines.insert(
        recipe.name.clone(),
        TrainedModels { vae2: Some(run.vae2.clone()), cnn: Some(run.cnn.clone()), baseline: Some(baseline) },
    );
    let matrix = if recipe.name == "household-target" { MatrixKind::Textured } else { MatrixKind::Simple };
    let specs: Vec<_> = matrix.specs(&cfg)?.into_iter().filter(|s| s.recipe == recipe.name).collect();
    let reports = specs.iter().map(|s| run_experiment(s, &bank)).collect::<sim2real::Result<Vec<_>>>()?;
    for r in &reports {
        println!("({}) {:<50} mean {:6.2} mm, max {:6.2} mm", r.spec.id, r.spec.description, r.summary.mean_mm, r.summary.max_mm);
    }
    for g in acceptance_gates(&reports, cfg.placement_region_mm.0) {
        println!("{} {}: {}", if g.passed { "PASS" } else { "FAIL" }, g.name, g.detail);
    }
    emit_report(&reports, &out.join("reports"))?;

    let suite = SelectivitySuite {
        target: recipe.target.clone(),
        proxy: recipe.proxy.clone(),
        distractors: ["household-wedge", "blue-prism"].iter().filter_map(|n| lookup(n)).collect(),
        background: recipe.real_scene.background.clone(),
        lighting: recipe.real_scene.lighting,
        domain: recipe.real_domain,
        scenes: 20,
        seed: cfg.seed,
    };
    let vae2 = run.vae2.vae(cfg.vae_arch())?;
    let results = selectivity_suite(&suite, &vae2, cfg.resolution, &cfg.workspace())?;
    let held = results.iter().filter(|r| r.holds()).count();
    println!("selectivity holds in {held}/{} cluttered scenes", results.len());
    println!("checkpoints and reports in {}", out.display());
    Ok(())
}
