//! Trains VAE1 on canonical renders, adapts VAE2 to real-proxy images with
//! the decoder frozen, and checks that both share decoder bytes.
//!
//! cargo run --release --example train_vae -- [object] [vae1_epochs] [vae2_epochs]

use sim2real::eval::image_mse;
use sim2real::models::{batch_tensor, tensor_images};
use sim2real::pipeline::{train_vae1, train_vae2, Epochs, Recipe, TrainConfig};

fn main() -> sim2real::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let recipe = Recipe::by_name(args.first().map_or("green-cube", String::as_str))?;
    let arg = |i: usize, default: usize| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(default);
    let cfg = TrainConfig {
        resolution: (16, 16),
        grid_spacing_small_mm: 10.0,
        latent_dim: 8,
        epochs: Epochs { vae1: arg(1, 15), vae2: arg(2, 100), ..Epochs::default() },
        ..TrainConfig::default()
    };
    let data = recipe.training_data(&cfg)?;
    println!(
        "{}: {} synthetic images, {} pairs at {:?}",
        recipe.name,
        data.synthetic.len(),
        data.pairs.real.len(),
        cfg.resolution
    );

    let vae1 = train_vae1(&data.synthetic, &cfg)?;
    for (e, l) in vae1.losses.iter().enumerate().step_by(5) {
        println!("vae1 epoch {e:>3}: loss {l:.5}");
    }
    let vae2 = train_vae2(&data.pairs, &vae1, &cfg)?;
    println!("vae2 final loss {:.5}", vae2.losses.last().unwrap_or(&f64::NAN));
    println!("decoder bytes identical: {}", vae1.decoder_sha256()? == vae2.decoder_sha256()?);

    let (v1, v2) = (vae1.vae(cfg.vae_arch())?, vae2.vae(cfg.vae_arch())?);
    let real: Vec<_> = data.pairs.real.images.iter().collect();
    let canon: Vec<_> = data.pairs.canonical.images.iter().collect();
    let depth = data.synthetic.manifest.workspace.depth_scale_mm;
    let out1 = tensor_images(&v1.reconstruct(&batch_tensor(&canon)?)?, depth)?;
    let out2 = tensor_images(&v2.reconstruct(&batch_tensor(&real)?)?, depth)?;
    let mean = |pairs: Vec<sim2real::Result<f64>>| -> sim2real::Result<f64> {
        let n = pairs.len() as f64;
        Ok(pairs.into_iter().sum::<sim2real::Result<f64>>()? / n)
    };
    let input_gap = mean(real.iter().zip(&canon).map(|(a, b)| image_mse(a, b)).collect())?;
    let output_gap = mean(out2.iter().zip(&out1).map(|(a, b)| image_mse(a, b)).collect())?;
    println!("input MSE real vs canonical:     {input_gap:.6}");
    println!("output MSE VAE2(real) vs VAE1(canonical): {output_gap:.6} ({:.1}x smaller)", input_gap / output_gap);
    Ok(())
}
