use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv2d,
    Deconv2d,
    Dense,
}

/// Kind-specific shape record of a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerHyper {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Deconv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Dense {
        fan_in: usize,
        fan_out: usize,
    },
}

impl LayerHyper {
    pub fn kind(&self) -> LayerKind {
        match self {
            LayerHyper::Conv2d { .. } => LayerKind::Conv2d,
            LayerHyper::Deconv2d { .. } => LayerKind::Deconv2d,
            LayerHyper::Dense { .. } => LayerKind::Dense,
        }
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        match *self {
            LayerHyper::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => vec![out_channels, in_channels, kernel, kernel],
            LayerHyper::Deconv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => vec![in_channels, out_channels, kernel, kernel],
            LayerHyper::Dense { fan_in, fan_out } => vec![fan_in, fan_out],
        }
    }

    pub fn bias_len(&self) -> usize {
        match *self {
            LayerHyper::Conv2d { out_channels, .. } | LayerHyper::Deconv2d { out_channels, .. } => {
                out_channels
            }
            LayerHyper::Dense { fan_out, .. } => fan_out,
        }
    }

    /// Fan-in and fan-out used by the Glorot bound.
    pub fn fans(&self) -> (usize, usize) {
        match *self {
            LayerHyper::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            }
            | LayerHyper::Deconv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => (in_channels * kernel * kernel, out_channels * kernel * kernel),
            LayerHyper::Dense { fan_in, fan_out } => (fan_in, fan_out),
        }
    }
}

/// Weights, bias and shape record of one layer.
///
/// A frozen layer never participates in gradient computation: its tensors
/// carry `requires_grad = false` and reject accumulation.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weights: Tensor,
    pub bias: Tensor,
    pub hyper: LayerHyper,
}

impl LayerParams {
    /// Glorot-uniform weights, zero bias, trainable.
    pub fn init<R: Rng + ?Sized>(hyper: LayerHyper, rng: &mut R) -> Self {
        let (fan_in, fan_out) = hyper.fans();
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let shape = hyper.weight_shape();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        let mut weights = Tensor::new(shape, data).expect("glorot init is finite");
        let mut bias = Tensor::zeros(&[hyper.bias_len()]);
        weights.set_requires_grad(true);
        bias.set_requires_grad(true);
        Self {
            weights,
            bias,
            hyper,
        }
    }

    pub fn from_parts(hyper: LayerHyper, weights: Tensor, bias: Tensor) -> Result<Self> {
        if weights.shape() != hyper.weight_shape().as_slice() {
            return Err(Error::shape(
                "layer weights",
                &hyper.weight_shape(),
                weights.shape(),
            ));
        }
        if bias.shape() != [hyper.bias_len()] {
            return Err(Error::shape("layer bias", &[hyper.bias_len()], bias.shape()));
        }
        let mut layer = Self {
            weights,
            bias,
            hyper,
        };
        layer.set_frozen(false);
        Ok(layer)
    }

    pub fn kind(&self) -> LayerKind {
        self.hyper.kind()
    }

    pub fn is_frozen(&self) -> bool {
        !self.weights.requires_grad()
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        self.weights.set_requires_grad(!frozen);
        self.bias.set_requires_grad(!frozen);
    }

    pub fn param_count(&self) -> usize {
        self.weights.numel() + self.bias.numel()
    }

    /// Records this layer on `tape` and applies it to `x`.
    pub fn forward(&self, tape: &mut Tape, slot: usize, x: Var) -> Result<Var> {
        let (w, b) = tape.bind_layer(slot, self);
        match self.hyper {
            LayerHyper::Conv2d {
                stride, padding, ..
            } => tape.conv2d(x, w, b, stride, padding),
            LayerHyper::Deconv2d {
                stride, padding, ..
            } => tape.deconv2d(x, w, b, stride, padding),
            LayerHyper::Dense { .. } => tape.dense(x, w, b),
        }
    }

    /// Pulls this layer's gradients for `slot` off a tape after backward.
    pub fn accumulate_from(&mut self, tape: &Tape, slot: usize) -> Result<()> {
        if let Some((gw, gb)) = tape.layer_grads(slot) {
            self.weights.accumulate_grad(&gw)?;
            self.bias.accumulate_grad(&gb)?;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.weights.zero_grad();
        self.bias.zero_grad();
    }

    /// Weight bytes followed by bias bytes, little-endian f64.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = self.weights.to_le_bytes();
        out.extend(self.bias.to_le_bytes());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn glorot_bound_respected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let hyper = LayerHyper::Dense {
            fan_in: 10,
            fan_out: 14,
        };
        let layer = LayerParams::init(hyper, &mut rng);
        let bound = (6.0f64 / 24.0).sqrt();
        assert!(layer.weights.data().iter().all(|w| w.abs() < bound));
        assert!(layer.bias.data().iter().all(|&b| b == 0.0));
        assert_eq!(layer.weights.shape(), &[10, 14]);
    }

    #[test]
    fn frozen_layer_gets_no_tape_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut layer = LayerParams::init(
            LayerHyper::Dense {
                fan_in: 3,
                fan_out: 2,
            },
            &mut rng,
        );
        layer.set_frozen(true);
        let mut tape = Tape::new();
        let mut xt = Tensor::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        xt.set_requires_grad(true);
        let x = tape.leaf(&xt);
        let y = layer.forward(&mut tape, 0, x).unwrap();
        let s = tape.sum(y).unwrap();
        tape.backward(s).unwrap();
        assert!(tape.layer_grads(0).is_none());
        assert!(tape.grad(x).is_some());
        assert!(matches!(
            layer.weights.accumulate_grad(&[0.0; 6]),
            Err(Error::Frozen)
        ));
    }

    #[test]
    fn from_parts_checks_shapes() {
        let hyper = LayerHyper::Conv2d {
            in_channels: 2,
            out_channels: 3,
            kernel: 3,
            stride: 1,
            padding: 1,
        };
        let ok = LayerParams::from_parts(hyper, Tensor::zeros(&[3, 2, 3, 3]), Tensor::zeros(&[3]));
        assert!(ok.is_ok());
        let bad = LayerParams::from_parts(hyper, Tensor::zeros(&[2, 3, 3, 3]), Tensor::zeros(&[3]));
        assert!(bad.is_err());
    }
}
