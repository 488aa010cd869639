use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Checkpoint, CnnInput, PipelineRun, Stage, TrainConfig};
use crate::error::{Error, Result};
use crate::models::{elbo_loss, CnnRegressor, VaeNet};
use crate::ndtensor::{adam_step, AdamState, LayerParams, Tape, Tensor};
use crate::scenegen::{derive_seed, DomainTag, ImageRGBD, LabeledDataset, PairedDataset};

/// Images per forward pass when no gradients are needed.
const EVAL_CHUNK: usize = 128;

/// Images flattened into one `f64` buffer, `[N, 4, H, W]`.
pub(crate) struct Flat {
    data: Vec<f64>,
    shape: [usize; 3],
}

impl Flat {
    pub(crate) fn from_images(images: &[ImageRGBD]) -> Self {
        let shape = images.first().map_or([4, 1, 1], ImageRGBD::shape);
        let data = images.iter().flat_map(|i| i.data.iter().map(|&v| v as f64)).collect();
        Self { data, shape }
    }

    fn from_tensors(parts: Vec<Tensor>) -> Self {
        let shape = [parts[0].shape()[1], parts[0].shape()[2], parts[0].shape()[3]];
        let data = parts.into_iter().flat_map(Tensor::into_data).collect();
        Self { data, shape }
    }

    fn per(&self) -> usize {
        self.shape.iter().product()
    }

    fn len(&self) -> usize {
        self.data.len() / self.per()
    }

    fn gather(&self, idx: &[usize]) -> (Vec<usize>, Vec<f64>) {
        let per = self.per();
        let mut out = Vec::with_capacity(idx.len() * per);
        for &i in idx {
            out.extend_from_slice(&self.data[i * per..(i + 1) * per]);
        }
        (vec![idx.len(), self.shape[0], self.shape[1], self.shape[2]], out)
    }

    fn chunks(&self, size: usize) -> impl Iterator<Item = Tensor> + '_ {
        let per = self.per();
        self.data.chunks(size * per).map(move |c| {
            Tensor::new(vec![c.len() / per, self.shape[0], self.shape[1], self.shape[2]], c.to_vec())
                .expect("image data is finite")
        })
    }
}

/// Seed streams for each stage; stream index 0 initializes weights and
/// index `e + 1` drives epoch `e`.
fn stream(stage: Stage) -> u64 {
    match stage {
        Stage::Vae1 => 10,
        Stage::Vae2 => 11,
        Stage::Cnn => 12,
        Stage::Baseline => 13,
    }
}

fn init_rng(cfg: &TrainConfig, stage: Stage) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, stream(stage), 0))
}

fn epoch_rng(cfg: &TrainConfig, stage: Stage, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, stream(stage), epoch as u64 + 1))
}

fn diverged(stage: Stage, epoch: usize, loss: f64) -> Error {
    Error::Diverged {
        stage: stage.as_str(),
        epoch,
        loss,
    }
}

fn make_checkpoint(stage: Stage, cfg: &TrainConfig, layers: Vec<LayerParams>, losses: Vec<f64>) -> Checkpoint {
    let layers = layers
        .into_iter()
        .map(|mut l| {
            l.zero_grad();
            l.set_frozen(false);
            l
        })
        .collect();
    Checkpoint {
        stage,
        seed: cfg.seed,
        layers,
        losses,
    }
}

fn check_resolution(data: &LabeledDataset, cfg: &TrainConfig) -> Result<()> {
    data.validate()?;
    if data.resolution() != cfg.resolution {
        return Err(Error::InvalidArgument(format!(
            "dataset resolution {:?} does not match configured {:?}",
            data.resolution(),
            cfg.resolution
        )));
    }
    if data.is_empty() {
        return Err(Error::InvalidArgument("cannot train on an empty dataset".into()));
    }
    Ok(())
}

struct VaeFit<'a> {
    inputs: &'a Flat,
    targets: &'a Flat,
    epochs: usize,
    lr: f64,
    beta: f64,
    stage: Stage,
}

fn fit_vae(net: &mut VaeNet, fit: VaeFit<'_>, cfg: &TrainConfig) -> Result<Vec<f64>> {
    let mut adam = AdamState::for_layers(net.layers(), cfg.adam(fit.lr));
    let n = fit.inputs.len();
    let latent = net.latent_dim();
    let mut order: Vec<usize> = (0..n).collect();
    let mut losses = Vec::with_capacity(fit.epochs);
    for epoch in 0..fit.epochs {
        let mut rng = epoch_rng(cfg, fit.stage, epoch);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let eps: Vec<f64> = (0..idx.len() * latent).map(|_| StandardNormal.sample(&mut rng)).collect();
            let mut step = || -> Result<f64> {
                let mut tape = Tape::new();
                let (shape, x) = fit.inputs.gather(idx);
                let x = tape.constant(shape.clone(), x)?;
                let (_, t) = fit.targets.gather(idx);
                let t = tape.constant(shape, t)?;
                let f = net.forward_on(&mut tape, x, &eps)?;
                let terms = elbo_loss(&mut tape, f.reconstruction, t, f.mu, f.logvar, fit.beta)?;
                tape.backward(terms.loss)?;
                net.accumulate_grads(&tape)?;
                Ok(tape.scalar(terms.loss))
            };
            let loss = match step() {
                Ok(l) if l.is_finite() => l,
                Ok(l) => return Err(diverged(fit.stage, epoch, l)),
                Err(Error::NonFinite { .. }) => return Err(diverged(fit.stage, epoch, f64::NAN)),
                Err(e) => return Err(e),
            };
            adam_step(net.layers_mut(), &mut adam)?;
            total += loss * idx.len() as f64;
        }
        losses.push(total / n as f64);
    }
    Ok(losses)
}

fn fit_cnn(
    net: &mut CnnRegressor,
    inputs: &Flat,
    labels: &[[f64; 2]],
    epochs: usize,
    stage: Stage,
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    let mut adam = AdamState::for_layers(net.layers(), cfg.adam(cfg.learning_rate));
    let n = inputs.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut losses = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let mut rng = epoch_rng(cfg, stage, epoch);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let mut step = || -> Result<f64> {
                let mut tape = Tape::new();
                let (shape, x) = inputs.gather(idx);
                let x = tape.constant(shape, x)?;
                let y: Vec<f64> = idx.iter().flat_map(|&i| labels[i]).collect();
                let y = tape.constant(vec![idx.len(), 2], y)?;
                let pred = net.forward_on(&mut tape, x)?;
                let loss = tape.mse(pred, y)?;
                tape.backward(loss)?;
                net.accumulate_grads(&tape)?;
                Ok(tape.scalar(loss))
            };
            let loss = match step() {
                Ok(l) if l.is_finite() => l,
                Ok(l) => return Err(diverged(stage, epoch, l)),
                Err(Error::NonFinite { .. }) => return Err(diverged(stage, epoch, f64::NAN)),
                Err(e) => return Err(e),
            };
            adam_step(net.layers_mut(), &mut adam)?;
            total += loss * idx.len() as f64;
        }
        losses.push(total / n as f64);
    }
    Ok(losses)
}

fn normalized_labels(data: &LabeledDataset, cfg: &TrainConfig) -> Vec<[f64; 2]> {
    let (w, h) = cfg.placement_region_mm;
    data.labels
        .iter()
        .map(|l| [l[0] as f64 / w, l[1] as f64 / h])
        .collect()
}

/// Stage A-1: trains VAE1 to reconstruct canonical images.
pub fn train_vae1(synthetic: &LabeledDataset, cfg: &TrainConfig) -> Result<Checkpoint> {
    cfg.validate()?;
    if synthetic.domain_tag != DomainTag::Canonical {
        return Err(Error::InvalidArgument("VAE1 trains on canonical images only".into()));
    }
    check_resolution(synthetic, cfg)?;
    let mut net = VaeNet::new(cfg.vae_arch(), &mut init_rng(cfg, Stage::Vae1))?;
    let flat = Flat::from_images(&synthetic.images);
    let fit = VaeFit {
        inputs: &flat,
        targets: &flat,
        epochs: cfg.epochs.vae1,
        lr: cfg.learning_rate,
        beta: cfg.beta,
        stage: Stage::Vae1,
    };
    let losses = fit_vae(&mut net, fit, cfg)?;
    Ok(make_checkpoint(Stage::Vae1, cfg, net.into_layers(), losses))
}

/// Stage A-2: copies VAE1, freezes its decoder and adapts the encoder so
/// that real-proxy inputs reconstruct their canonical partners.
pub fn train_vae2(pairs: &PairedDataset, vae1: &Checkpoint, cfg: &TrainConfig) -> Result<Checkpoint> {
    cfg.validate()?;
    if vae1.stage != Stage::Vae1 {
        return Err(Error::InvalidArgument(format!(
            "VAE2 starts from a vae1 checkpoint, got {}",
            vae1.stage.as_str()
        )));
    }
    check_resolution(&pairs.real, cfg)?;
    let base = vae1.vae(cfg.vae_arch())?;
    let mut net = VaeNet::adapted_from(&base);
    let inputs = Flat::from_images(&pairs.real.images);
    let targets = Flat::from_images(&pairs.canonical.images);
    let fit = VaeFit {
        inputs: &inputs,
        targets: &targets,
        epochs: cfg.epochs.vae2,
        lr: cfg.vae2_learning_rate,
        beta: if cfg.vae2_kl { cfg.beta } else { 0.0 },
        stage: Stage::Vae2,
    };
    let losses = fit_vae(&mut net, fit, cfg)?;
    for (i, (a, b)) in base.decoder_layers().iter().zip(net.decoder_layers()).enumerate() {
        if a.to_le_bytes() != b.to_le_bytes() {
            return Err(Error::FreezeViolation {
                layer: VaeNet::DECODER_SLOTS.start + i,
            });
        }
    }
    Ok(make_checkpoint(Stage::Vae2, cfg, net.into_layers(), losses))
}

/// VAE1 outputs for every image, as CNN training inputs.
fn vae_outputs(vae: &VaeNet, images: &[ImageRGBD], cfg: &TrainConfig) -> Result<Flat> {
    let flat = Flat::from_images(images);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, stream(Stage::Cnn), u64::MAX));
    let mut parts = Vec::new();
    for x in flat.chunks(EVAL_CHUNK) {
        let (mu, logvar) = vae.encode(&x)?;
        let z = match cfg.cnn_input {
            CnnInput::Mean => mu,
            CnnInput::Sampled => {
                let data = mu
                    .data()
                    .iter()
                    .zip(logvar.data())
                    .map(|(m, lv)| {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        m + (0.5 * lv).exp() * e
                    })
                    .collect();
                Tensor::new(mu.shape().to_vec(), data)?
            }
        };
        parts.push(vae.decode(&z)?);
    }
    Ok(Flat::from_tensors(parts))
}

/// Stage B: trains the position regressor on VAE1 reconstructions of the
/// canonical dataset.
pub fn train_cnn(vae1: &Checkpoint, synthetic: &LabeledDataset, cfg: &TrainConfig) -> Result<Checkpoint> {
    cfg.validate()?;
    if vae1.stage != Stage::Vae1 {
        return Err(Error::InvalidArgument(format!(
            "the CNN trains on vae1 outputs, got a {} checkpoint",
            vae1.stage.as_str()
        )));
    }
    if synthetic.domain_tag != DomainTag::Canonical {
        return Err(Error::InvalidArgument("the CNN trains on canonical images only".into()));
    }
    check_resolution(synthetic, cfg)?;
    let vae = vae1.vae(cfg.vae_arch())?;
    let inputs = vae_outputs(&vae, &synthetic.images, cfg)?;
    let labels = normalized_labels(synthetic, cfg);
    let mut net = CnnRegressor::new(cfg.resolution, &mut init_rng(cfg, Stage::Cnn))?;
    let losses = fit_cnn(&mut net, &inputs, &labels, cfg.epochs.cnn, Stage::Cnn, cfg)?;
    Ok(make_checkpoint(Stage::Cnn, cfg, net.into_layers(), losses))
}

/// The naive baseline: a regressor trained directly on the small real-proxy
/// set.
pub fn train_baseline(real_small: &LabeledDataset, cfg: &TrainConfig) -> Result<Checkpoint> {
    cfg.validate()?;
    if real_small.domain_tag != DomainTag::RealProxy {
        return Err(Error::InvalidArgument("the baseline trains on real-proxy images".into()));
    }
    check_resolution(real_small, cfg)?;
    let inputs = Flat::from_images(&real_small.images);
    let labels = normalized_labels(real_small, cfg);
    let mut net = CnnRegressor::new(cfg.resolution, &mut init_rng(cfg, Stage::Baseline))?;
    let losses = fit_cnn(&mut net, &inputs, &labels, cfg.epochs.baseline, Stage::Baseline, cfg)?;
    Ok(make_checkpoint(Stage::Baseline, cfg, net.into_layers(), losses))
}

/// Positions in millimetres for a batch of images. With `vae` the images
/// pass through `decode(mu)` first; without it the regressor sees them raw.
pub fn infer_batch(
    vae: Option<&VaeNet>,
    cnn: &CnnRegressor,
    images: &[ImageRGBD],
    region_mm: (f64, f64),
) -> Result<Vec<(f64, f64)>> {
    if images.is_empty() {
        return Ok(Vec::new());
    }
    let flat = Flat::from_images(images);
    let mut out = Vec::with_capacity(images.len());
    for x in flat.chunks(EVAL_CHUNK) {
        let x = match vae {
            Some(v) => v.reconstruct(&x)?,
            None => x,
        };
        let pred = cnn.predict(&x)?;
        out.extend(pred.data().chunks(2).map(|p| (p[0] * region_mm.0, p[1] * region_mm.1)));
    }
    Ok(out)
}

/// Stage C: position of the target in one image, in placement-region mm.
pub fn infer(vae2: &VaeNet, cnn: &CnnRegressor, image: &ImageRGBD, region_mm: (f64, f64)) -> Result<(f64, f64)> {
    let want = vae2.arch.input_shape();
    if image.shape() != want {
        return Err(Error::shape("infer", &want, &image.shape()));
    }
    Ok(infer_batch(Some(vae2), cnn, std::slice::from_ref(image), region_mm)?[0])
}

/// Runs A-1, A-2 and B in order.
pub fn run_pipeline(cfg: &TrainConfig, synthetic: &LabeledDataset, pairs: &PairedDataset) -> Result<PipelineRun> {
    let vae1 = train_vae1(synthetic, cfg)?;
    let vae2 = train_vae2(pairs, &vae1, cfg)?;
    let cnn = train_cnn(&vae1, synthetic, cfg)?;
    Ok(PipelineRun {
        config: cfg.clone(),
        vae1,
        vae2,
        cnn,
        manifests: vec![
            synthetic.manifest.clone(),
            pairs.real.manifest.clone(),
            pairs.canonical.manifest.clone(),
        ],
    })
}
