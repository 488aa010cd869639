use rand::Rng;

use super::{check_layers, conv_hypers, feature_size, CONV_WIDTHS};
use crate::error::{Error, Result};
use crate::ndtensor::{LayerHyper, LayerParams, Tape, Tensor, Var};
use crate::scenegen::ImageRGBD;

/// Width of the hidden dense layer.
pub const CNN_HIDDEN: usize = 128;

/// Position regressor: three stride-2 convolutions, a hidden dense layer
/// and a linear 2-unit output giving `(x, y)` normalized to the placement
/// region.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnRegressor {
    pub resolution: (usize, usize),
    layers: Vec<LayerParams>,
}

impl CnnRegressor {
    pub fn hypers(resolution: (usize, usize)) -> Result<Vec<LayerHyper>> {
        let (fh, fw) = feature_size(resolution.1, resolution.0)?;
        let mut h = conv_hypers();
        h.push(LayerHyper::Dense {
            fan_in: CONV_WIDTHS[2] * fh * fw,
            fan_out: CNN_HIDDEN,
        });
        h.push(LayerHyper::Dense {
            fan_in: CNN_HIDDEN,
            fan_out: 2,
        });
        Ok(h)
    }

    pub fn new<R: Rng + ?Sized>(resolution: (usize, usize), rng: &mut R) -> Result<Self> {
        let layers = Self::hypers(resolution)?
            .into_iter()
            .map(|h| LayerParams::init(h, rng))
            .collect();
        Ok(Self { resolution, layers })
    }

    pub fn from_layers(resolution: (usize, usize), layers: Vec<LayerParams>) -> Result<Self> {
        check_layers(&Self::hypers(resolution)?, &layers)?;
        Ok(Self { resolution, layers })
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

    /// Records the network on `x: [N, 4, H, W]`; returns `[N, 2]`.
    pub fn forward_on(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        let want = [ImageRGBD::CHANNELS, self.resolution.1, self.resolution.0];
        if shape.len() != 4 || shape[1..] != want {
            return Err(Error::shape(
                "CnnRegressor input",
                &[shape.first().copied().unwrap_or(0), want[0], want[1], want[2]],
                &shape,
            ));
        }
        let n = shape[0];
        let mut h = x;
        for slot in 0..3 {
            h = self.layers[slot].forward(tape, slot, h)?;
            h = tape.relu(h)?;
        }
        let feat = tape.value(h).len() / n;
        h = tape.reshape(h, vec![n, feat])?;
        h = self.layers[3].forward(tape, 3, h)?;
        h = tape.relu(h)?;
        self.layers[4].forward(tape, 4, h)
    }

    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.constant(x.shape().to_vec(), x.data().to_vec())?;
        let out = self.forward_on(&mut tape, x)?;
        Ok(tape.tensor(out))
    }

    pub fn accumulate_grads(&mut self, tape: &Tape) -> Result<()> {
        for (slot, l) in self.layers.iter_mut().enumerate() {
            if !l.is_frozen() {
                l.accumulate_from(tape, slot)?;
            }
        }
        Ok(())
    }
}

/// Normalized `(x, y)` per image of an `[N, 4, H, W]` batch. Mapping back to
/// millimetres is the caller's job.
pub fn predict_position(cnn: &CnnRegressor, images: &Tensor) -> Result<Vec<[f64; 2]>> {
    let out = cnn.predict(images)?;
    Ok(out.data().chunks(2).map(|p| [p[0], p[1]]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn output_is_two_per_image() {
        let cnn = CnnRegressor::new((16, 8), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let x = Tensor::new(vec![3, 4, 8, 16], vec![0.5; 3 * 4 * 128]).unwrap();
        let p = predict_position(&cnn, &x).unwrap();
        assert_eq!(p.len(), 3);
        assert_eq!(p[0], p[2]);
        assert_eq!(predict_position(&cnn, &x).unwrap(), p);
    }

    #[test]
    fn input_shape_is_checked() {
        let cnn = CnnRegressor::new((16, 16), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let x = Tensor::zeros(&[1, 4, 8, 16]);
        assert!(matches!(cnn.predict(&x), Err(Error::ShapeMismatch { .. })));
        assert!(CnnRegressor::new((12, 16), &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }

    #[test]
    fn layer_stack_layout() {
        let h = CnnRegressor::hypers((32, 32)).unwrap();
        assert_eq!(h.len(), 5);
        assert_eq!(
            h[3],
            LayerHyper::Dense {
                fan_in: 1024,
                fan_out: 128
            }
        );
        assert_eq!(h[4], LayerHyper::Dense { fan_in: 128, fan_out: 2 });
    }
}
