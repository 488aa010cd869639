mod common;

use common::tiny_config;
use sim2real::error::Error;
use sim2real::models::batch_tensor;
use sim2real::pipeline::{
    infer, run_pipeline, train_baseline, train_cnn, train_vae1, train_vae2, CnnInput, Recipe, Stage,
    TrainConfig,
};
use sim2real::scenegen::{ImageRGBD, PairedDataset};

fn data(cfg: &TrainConfig) -> sim2real::pipeline::TrainingData {
    Recipe::by_name("green-cube").unwrap().training_data(cfg).unwrap()
}

#[test]
fn vae1_loss_decreases_and_checkpoint_is_stamped() {
    let mut cfg = tiny_config();
    cfg.epochs.vae1 = 8;
    let d = data(&cfg);
    let ck = train_vae1(&d.synthetic, &cfg).unwrap();
    assert_eq!(ck.stage, Stage::Vae1);
    assert_eq!(ck.losses.len(), 8);
    assert!(ck.losses.last().unwrap() < &ck.losses[0], "{:?}", ck.losses);
    assert!(ck.layers.iter().all(|l| !l.is_frozen()));
}

#[test]
fn stages_reject_the_wrong_domain_or_checkpoint() {
    let cfg = tiny_config();
    let d = data(&cfg);
    assert!(train_vae1(&d.pairs.real, &cfg).is_err());
    assert!(train_baseline(&d.synthetic, &cfg).is_err());
    let vae1 = train_vae1(&d.synthetic, &cfg).unwrap();
    let vae2 = train_vae2(&d.pairs, &vae1, &cfg).unwrap();
    assert!(train_vae2(&d.pairs, &vae2, &cfg).is_err());
    assert!(train_cnn(&vae2, &d.synthetic, &cfg).is_err());
}

#[test]
fn vae2_keeps_decoder_bytes_and_is_reproducible() {
    let cfg = tiny_config();
    let d = data(&cfg);
    let vae1 = train_vae1(&d.synthetic, &cfg).unwrap();
    let a = train_vae2(&d.pairs, &vae1, &cfg).unwrap();
    let b = train_vae2(&d.pairs, &vae1, &cfg).unwrap();
    assert_eq!(a.decoder_sha256().unwrap(), vae1.decoder_sha256().unwrap());
    assert_eq!(a.params_sha256(), b.params_sha256());
    assert_eq!(a.losses, b.losses);
    assert_ne!(a.params_sha256(), vae1.params_sha256());

    let no_kl = TrainConfig { vae2_kl: false, ..cfg.clone() };
    let c = train_vae2(&d.pairs, &vae1, &no_kl).unwrap();
    assert_eq!(c.decoder_sha256().unwrap(), vae1.decoder_sha256().unwrap());
    assert_ne!(c.params_sha256(), a.params_sha256());
}

fn mean_mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / a.len() as f64
}

#[test]
fn identical_pairs_keep_vae2_outputs_near_vae1() {
    let mut cfg = tiny_config();
    cfg.epochs.vae1 = 20;
    let d = data(&cfg);
    let vae1 = train_vae1(&d.synthetic, &cfg).unwrap();
    let same = PairedDataset::new(d.pairs.canonical.clone(), d.pairs.canonical.clone()).unwrap();
    let none = train_vae2(&same, &vae1, &cfg).unwrap();
    let real: Vec<_> = d.pairs.real.images.iter().collect();
    let canon: Vec<_> = d.pairs.canonical.images.iter().collect();
    let (xr, xc) = (batch_tensor(&real).unwrap(), batch_tensor(&canon).unwrap());
    let arch = cfg.vae_arch();
    let before = vae1.vae(arch).unwrap().reconstruct(&xc).unwrap();
    let after = none.vae(arch).unwrap().reconstruct(&xc).unwrap();
    let drift = mean_mse(before.data(), after.data());
    let gap = mean_mse(xr.data(), xc.data());
    assert!(drift < gap / 10.0, "drift {drift} vs input gap {gap}");
}

#[test]
fn cnn_learns_from_vae1_outputs_in_both_input_modes() {
    let mut cfg = tiny_config();
    cfg.epochs.cnn = 6;
    let d = data(&cfg);
    let vae1 = train_vae1(&d.synthetic, &cfg).unwrap();
    let mean = train_cnn(&vae1, &d.synthetic, &cfg).unwrap();
    assert!(mean.losses.last().unwrap() < &mean.losses[0], "{:?}", mean.losses);
    let sampled_cfg = TrainConfig { cnn_input: CnnInput::Sampled, ..cfg.clone() };
    let sampled = train_cnn(&vae1, &d.synthetic, &sampled_cfg).unwrap();
    assert_ne!(sampled.params_sha256(), mean.params_sha256());
}

#[test]
fn full_run_is_deterministic_and_infers_inside_the_board() {
    let cfg = tiny_config();
    let d = data(&cfg);
    let a = run_pipeline(&cfg, &d.synthetic, &d.pairs).unwrap();
    let b = run_pipeline(&cfg, &d.synthetic, &d.pairs).unwrap();
    for (x, y) in [(&a.vae1, &b.vae1), (&a.vae2, &b.vae2), (&a.cnn, &b.cnn)] {
        assert_eq!(x.params_sha256(), y.params_sha256());
    }
    assert_eq!(a.manifests, b.manifests);

    let vae2 = a.vae2.vae(cfg.vae_arch()).unwrap();
    let cnn = a.cnn.cnn(cfg.resolution).unwrap();
    let (x, y) = infer(&vae2, &cnn, &d.pairs.real.images[0], cfg.placement_region_mm).unwrap();
    assert!(x.is_finite() && y.is_finite());
    assert!((-100.0..500.0).contains(&x) && (-100.0..350.0).contains(&y), "({x}, {y})");
}

#[test]
fn infer_rejects_the_wrong_resolution() {
    let cfg = tiny_config();
    let d = data(&cfg);
    let run = run_pipeline(&cfg, &d.synthetic, &d.pairs).unwrap();
    let vae2 = run.vae2.vae(cfg.vae_arch()).unwrap();
    let cnn = run.cnn.cnn(cfg.resolution).unwrap();
    let big = ImageRGBD::new(32, 32, vec![0.5; 4 * 32 * 32], 100.0).unwrap();
    let err = infer(&vae2, &cnn, &big, cfg.placement_region_mm).unwrap_err();
    assert!(matches!(err, Error::ShapeMismatch { .. }), "{err}");
    assert!(batch_tensor(&[&big, &d.pairs.real.images[0]]).is_err());
}

#[test]
fn runaway_learning_rate_reports_divergence() {
    let cfg = TrainConfig { learning_rate: 1e6, ..tiny_config() };
    let d = data(&cfg);
    let err = train_vae1(&d.synthetic, &cfg).map(|ck| ck.losses).unwrap_err();
    assert!(matches!(err, Error::Diverged { stage: "vae1", .. }), "{err}");
}
