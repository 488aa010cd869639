//! Writes a dataset and a checkpoint to disk, reads them back bit-exactly,
//! and shows how corrupted or mismatched files are rejected.
//!
//! cargo run --example dataset_io -- [dir]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sim2real::cli::{load_checkpoint, load_dataset, save_checkpoint, save_dataset};
use sim2real::models::CnnRegressor;
use sim2real::pipeline::{Checkpoint, Stage, TrainConfig};
use sim2real::scenegen::{generate_dataset, lookup, DomainPolicy, GridSpec, ScenePolicy};

fn main() -> sim2real::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("sim2real-dataset-io"));
    let cfg = TrainConfig { resolution: (16, 16), ..TrainConfig::default() };

    let ds = generate_dataset(
        &lookup("black-cylinder").expect("catalog object"),
        &GridSpec::new(cfg.placement_region_mm, 100.0),
        DomainPolicy::real_proxy(),
        &ScenePolicy::room(),
        cfg.resolution,
        cfg.seed,
    )?;
    let data_path = dir.join("cylinder.s2pd");
    save_dataset(&data_path, &ds)?;
    let back = load_dataset(&data_path)?;
    println!("{} images round-tripped, identical: {}", back.len(), back == ds);

    let mut bytes = std::fs::read(&data_path).expect("just written");
    bytes[10] = 3;
    std::fs::write(&data_path, &bytes).expect("writable");
    println!("bad channel count: {}", load_dataset(&data_path).unwrap_err());

    let cnn = CnnRegressor::new(cfg.resolution, &mut ChaCha8Rng::seed_from_u64(1))?;
    let ck = Checkpoint { stage: Stage::Baseline, seed: 1, layers: cnn.into_layers(), losses: vec![] };
    let ck_path = dir.join("baseline.s2pc");
    save_checkpoint(&ck_path, &ck)?;
    let loaded = load_checkpoint(&ck_path, Stage::Baseline, &cfg)?;
    println!("checkpoint parameters identical: {}", loaded.params_sha256() == ck.params_sha256());

    let other = TrainConfig { resolution: (32, 32), ..cfg.clone() };
    println!("other resolution: {}", load_checkpoint(&ck_path, Stage::Baseline, &other).unwrap_err());
    let mut bytes = std::fs::read(&ck_path).expect("just written");
    let mid = bytes.len() / 2;
    bytes[mid] ^= 1;
    std::fs::write(&ck_path, &bytes).expect("writable");
    println!("flipped bit: {}", load_checkpoint(&ck_path, Stage::Baseline, &cfg).unwrap_err());
    Ok(())
}
