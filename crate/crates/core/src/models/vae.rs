use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_layers, conv_hypers, feature_size, loss::reparameterize, CONV_WIDTHS};
use crate::error::{Error, Result};
use crate::ndtensor::{LayerHyper, LayerParams, Tape, Tensor, Var};
use crate::scenegen::ImageRGBD;

/// Shape parameters of a [`VaeNet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VaeArch {
    pub height: usize,
    pub width: usize,
    pub latent_dim: usize,
    /// Width of the dense layer between the convolutions and the heads.
    pub hidden: usize,
}

impl VaeArch {
    pub fn new(resolution: (usize, usize), latent_dim: usize) -> Self {
        Self {
            width: resolution.0,
            height: resolution.1,
            latent_dim,
            hidden: 256,
        }
    }

    /// Layer records in slot order: three convolutions, the hidden dense
    /// layer, the mu and logvar heads, then the decoder's dense layer and
    /// three transposed convolutions.
    pub fn hypers(&self) -> Result<Vec<LayerHyper>> {
        let (fh, fw) = feature_size(self.height, self.width)?;
        if self.latent_dim == 0 || self.hidden == 0 {
            return Err(Error::InvalidArgument("latent_dim and hidden must be positive".into()));
        }
        let feat = CONV_WIDTHS[2] * fh * fw;
        let mut h = conv_hypers();
        h.push(LayerHyper::Dense {
            fan_in: feat,
            fan_out: self.hidden,
        });
        for _ in 0..2 {
            h.push(LayerHyper::Dense {
                fan_in: self.hidden,
                fan_out: self.latent_dim,
            });
        }
        h.push(LayerHyper::Dense {
            fan_in: self.latent_dim,
            fan_out: feat,
        });
        let chans = [CONV_WIDTHS[2], CONV_WIDTHS[1], CONV_WIDTHS[0], ImageRGBD::CHANNELS];
        for pair in chans.windows(2) {
            h.push(LayerHyper::Deconv2d {
                in_channels: pair[0],
                out_channels: pair[1],
                kernel: 4,
                stride: 2,
                padding: 1,
            });
        }
        Ok(h)
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [ImageRGBD::CHANNELS, self.height, self.width]
    }
}

/// Tape handles produced by one training forward pass.
#[derive(Debug, Clone, Copy)]
pub struct VaeForward {
    pub mu: Var,
    pub logvar: Var,
    pub z: Var,
    pub reconstruction: Var,
}

/// Encoder and decoder of one VAE. Slots `0..6` are the encoder
/// (three convs, hidden dense, mu head, logvar head); slots `6..10` are the
/// decoder (dense, three transposed convs).
#[derive(Debug, Clone, PartialEq)]
pub struct VaeNet {
    pub arch: VaeArch,
    layers: Vec<LayerParams>,
}

const MU: usize = 4;
const LOGVAR: usize = 5;
const DECODER_START: usize = 6;

impl VaeNet {
    pub const ENCODER_SLOTS: std::ops::Range<usize> = 0..DECODER_START;
    pub const DECODER_SLOTS: std::ops::Range<usize> = DECODER_START..10;

    pub fn new<R: Rng + ?Sized>(arch: VaeArch, rng: &mut R) -> Result<Self> {
        let layers = arch
            .hypers()?
            .into_iter()
            .map(|h| LayerParams::init(h, rng))
            .collect();
        Ok(Self { arch, layers })
    }

    pub fn from_layers(arch: VaeArch, layers: Vec<LayerParams>) -> Result<Self> {
        check_layers(&arch.hypers()?, &layers)?;
        Ok(Self { arch, layers })
    }

    /// A copy of `vae1` whose decoder is frozen, ready for encoder
    /// adaptation.
    pub fn adapted_from(vae1: &VaeNet) -> Self {
        let mut net = vae1.clone();
        net.set_decoder_frozen(true);
        for l in &mut net.layers[Self::ENCODER_SLOTS] {
            l.set_frozen(false);
        }
        net
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerParams] {
        &mut self.layers
    }

    pub fn into_layers(self) -> Vec<LayerParams> {
        self.layers
    }

    pub fn decoder_layers(&self) -> &[LayerParams] {
        &self.layers[Self::DECODER_SLOTS]
    }

    pub fn set_decoder_frozen(&mut self, frozen: bool) {
        for l in &mut self.layers[Self::DECODER_SLOTS] {
            l.set_frozen(frozen);
        }
    }

    pub fn decoder_frozen(&self) -> bool {
        self.decoder_layers().iter().all(LayerParams::is_frozen)
    }

    /// Raw little-endian bytes of every decoder parameter, in slot order.
    pub fn decoder_bytes(&self) -> Vec<u8> {
        self.decoder_layers().iter().flat_map(|l| l.to_le_bytes()).collect()
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let want = self.arch.input_shape();
        if shape.len() != 4 || shape[1..] != want {
            return Err(Error::shape(
                "VaeNet input",
                &[shape.first().copied().unwrap_or(0), want[0], want[1], want[2]],
                shape,
            ));
        }
        Ok(())
    }

    /// Records the encoder; returns `(mu, logvar)`, each `[N, latent_dim]`.
    pub fn encode_on(&self, tape: &mut Tape, x: Var) -> Result<(Var, Var)> {
        self.check_input(tape.shape(x))?;
        let n = tape.shape(x)[0];
        let mut h = x;
        for slot in 0..3 {
            h = self.layers[slot].forward(tape, slot, h)?;
            h = tape.relu(h)?;
        }
        let feat = tape.value(h).len() / n;
        h = tape.reshape(h, vec![n, feat])?;
        h = self.layers[3].forward(tape, 3, h)?;
        h = tape.relu(h)?;
        let mu = self.layers[MU].forward(tape, MU, h)?;
        let logvar = self.layers[LOGVAR].forward(tape, LOGVAR, h)?;
        Ok((mu, logvar))
    }

    /// Records the decoder on `z: [N, latent_dim]`; returns `[N, 4, H, W]`
    /// in `(0, 1)`.
    pub fn decode_on(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        let shape = tape.shape(z).to_vec();
        if shape.len() != 2 || shape[1] != self.arch.latent_dim {
            return Err(Error::shape(
                "VaeNet decode",
                &[shape.first().copied().unwrap_or(0), self.arch.latent_dim],
                &shape,
            ));
        }
        let n = shape[0];
        let (fh, fw) = feature_size(self.arch.height, self.arch.width)?;
        let mut h = self.layers[DECODER_START].forward(tape, DECODER_START, z)?;
        h = tape.relu(h)?;
        h = tape.reshape(h, vec![n, CONV_WIDTHS[2], fh, fw])?;
        for slot in DECODER_START + 1..10 {
            h = self.layers[slot].forward(tape, slot, h)?;
            h = if slot < 9 { tape.relu(h)? } else { tape.sigmoid(h)? };
        }
        Ok(h)
    }

    /// Full training pass with externally drawn `eps` (`[N, latent_dim]`
    /// flattened).
    pub fn forward_on(&self, tape: &mut Tape, x: Var, eps: &[f64]) -> Result<VaeForward> {
        let (mu, logvar) = self.encode_on(tape, x)?;
        if eps.len() != tape.value(mu).len() {
            return Err(Error::shape("VaeNet eps", tape.shape(mu), &[eps.len()]));
        }
        let z = reparameterize(tape, mu, logvar, eps)?;
        let reconstruction = self.decode_on(tape, z)?;
        Ok(VaeForward {
            mu,
            logvar,
            z,
            reconstruction,
        })
    }

    pub fn encode(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let x = tape.constant(x.shape().to_vec(), x.data().to_vec())?;
        let (mu, logvar) = self.encode_on(&mut tape, x)?;
        Ok((tape.tensor(mu), tape.tensor(logvar)))
    }

    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let z = tape.constant(z.shape().to_vec(), z.data().to_vec())?;
        let out = self.decode_on(&mut tape, z)?;
        Ok(tape.tensor(out))
    }

    /// Deterministic reconstruction `decode(mu(x))`.
    pub fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        let (mu, _) = self.encode(x)?;
        self.decode(&mu)
    }

    /// Moves gradients for every trainable layer off the tape.
    pub fn accumulate_grads(&mut self, tape: &Tape) -> Result<()> {
        for (slot, l) in self.layers.iter_mut().enumerate() {
            if !l.is_frozen() {
                l.accumulate_from(tape, slot)?;
            }
        }
        Ok(())
    }
}
