//! Lists the fourteen experiments and, given a checkpoint directory laid out
//! as `<recipe>/{vae2,cnn,baseline}.s2pc`, runs every experiment whose
//! checkpoints are present.
//!
//! cargo run --release --example experiment_matrix -- [checkpoint_dir] [config.json]

use std::path::Path;

use sim2real::cli::load_trained;
use sim2real::eval::{acceptance_gates, run_experiment, summary_row, MatrixKind, ModelBank, ModelChoice};
use sim2real::pipeline::TrainConfig;

fn main() -> sim2real::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let cfg: TrainConfig = match args.get(1) {
        Some(p) => serde_json::from_slice(&std::fs::read(p).expect("readable config"))?,
        None => TrainConfig::default(),
    };
    let mut specs = MatrixKind::Simple.specs(&cfg)?;
    specs.extend(MatrixKind::Textured.specs(&cfg)?);
    for s in &specs {
        let model = match s.model {
            ModelChoice::Method => "method",
            ModelChoice::Baseline => "baseline",
        };
        let link = match (&s.nominal, &s.baseline) {
            (Some(n), _) => format!("robustness vs ({n})"),
            (_, Some(b)) => format!("beats baseline ({b})"),
            _ => String::new(),
        };
        println!("({}) {:<9} {:<17} {:<58} {link}", s.id, model, s.recipe, s.description);
    }

    let Some(dir) = args.first().map(Path::new) else {
        return Ok(());
    };
    let mut bank = ModelBank::new(cfg.clone());
    for s in &specs {
        if !bank.pipelines.contains_key(&s.recipe) {
            bank.pipelines.insert(s.recipe.clone(), load_trained(&dir.join(&s.recipe), &cfg)?);
        }
    }
    let mut reports = Vec::new();
    for s in &specs {
        match run_experiment(s, &bank) {
            Ok(r) => {
                println!("{}", summary_row(&r)?);
                reports.push(r);
            }
            Err(e) => println!("({}) skipped: {e}", s.id),
        }
    }
    for g in acceptance_gates(&reports, cfg.placement_region_mm.0) {
        println!("{} {}: {}", if g.passed { "PASS" } else { "FAIL" }, g.name, g.detail);
    }
    Ok(())
}
