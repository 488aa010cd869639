//! The VAE used for both domains, the ELBO objective and the position
//! regressor.

mod cnn;
mod loss;
mod vae;

pub use cnn::{predict_position, CnnRegressor};
pub use loss::{elbo_loss, kl_divergence, reparameterize, ElboTerms, LatentSample};
pub use vae::{VaeArch, VaeForward, VaeNet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ndtensor::{LayerHyper, LayerParams, Tensor};
use crate::scenegen::ImageRGBD;

/// Channel widths of the three stride-2 convolutions shared by the encoder,
/// the regressor, and (mirrored) the decoder.
pub const CONV_WIDTHS: [usize; 3] = [16, 32, 64];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetKind {
    Vae,
    Cnn,
}

impl NetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NetKind::Vae => "vae",
            NetKind::Cnn => "cnn",
        }
    }
}

/// SHA-256 over the network kind and the serialized layer hyper records.
pub fn architecture_fingerprint(kind: NetKind, hypers: &[LayerHyper]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(kind.as_str().as_bytes());
    h.update(serde_json::to_vec(hypers).expect("hyper records serialize"));
    h.finalize().into()
}

/// Stacks images into an `[N, 4, H, W]` tensor.
pub fn batch_tensor(images: &[&ImageRGBD]) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidArgument("cannot batch zero images".into()))?;
    let shape = first.shape();
    let mut data = Vec::with_capacity(images.len() * first.data.len());
    for img in images {
        if img.shape() != shape {
            return Err(Error::shape("batch_tensor", &shape, &img.shape()));
        }
        data.extend(img.data.iter().map(|&v| v as f64));
    }
    Tensor::new(vec![images.len(), shape[0], shape[1], shape[2]], data)
}

/// Splits an `[N, 4, H, W]` tensor with values in `[0, 1]` back into images.
pub fn tensor_images(t: &Tensor, depth_scale_mm: f64) -> Result<Vec<ImageRGBD>> {
    let &[n, c, h, w] = t.shape() else {
        return Err(Error::shape("tensor_images", &[0, 4, 0, 0], t.shape()));
    };
    if c != ImageRGBD::CHANNELS {
        return Err(Error::shape("tensor_images", &[n, 4, h, w], t.shape()));
    }
    t.data()
        .chunks(c * h * w)
        .map(|chunk| {
            let data = chunk.iter().map(|&v| v.clamp(0.0, 1.0) as f32).collect();
            ImageRGBD::new(w, h, data, depth_scale_mm)
        })
        .collect()
}

/// Checks a loaded layer list against the expected hyper records.
pub(crate) fn check_layers(expected: &[LayerHyper], layers: &[LayerParams]) -> Result<()> {
    if expected.len() != layers.len() || expected.iter().zip(layers).any(|(h, l)| *h != l.hyper) {
        return Err(Error::Fingerprint);
    }
    Ok(())
}

/// Spatial size after the three stride-2 convolutions, or an error when the
/// input does not divide evenly.
pub(crate) fn feature_size(height: usize, width: usize) -> Result<(usize, usize)> {
    if height < 8 || width < 8 || height % 8 != 0 || width % 8 != 0 {
        return Err(Error::InvalidArgument(format!(
            "input resolution must be a positive multiple of 8, got {width}x{height}"
        )));
    }
    Ok((height / 8, width / 8))
}

pub(crate) fn conv_hypers() -> Vec<LayerHyper> {
    let mut in_ch = ImageRGBD::CHANNELS;
    CONV_WIDTHS
        .iter()
        .map(|&out| {
            let h = LayerHyper::Conv2d {
                in_channels: in_ch,
                out_channels: out,
                kernel: 3,
                stride: 2,
                padding: 1,
            };
            in_ch = out;
            h
        })
        .collect()
}
