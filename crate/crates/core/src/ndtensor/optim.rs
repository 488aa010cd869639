use serde::{Deserialize, Serialize};

use super::layers::LayerParams;
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment estimates for a fixed set of trainable parameters, flattened in
/// layer order (weights then bias per layer).
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(param_count: usize, config: AdamConfig) -> Self {
        Self {
            step: 0,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            config,
        }
    }

    /// State sized for the trainable (non-frozen) subset of `layers`.
    pub fn for_layers<'a>(
        layers: impl IntoIterator<Item = &'a LayerParams>,
        config: AdamConfig,
    ) -> Self {
        let count = layers
            .into_iter()
            .filter(|l| !l.is_frozen())
            .map(LayerParams::param_count)
            .sum();
        Self::new(count, config)
    }
}

/// One bias-corrected Adam update over every trainable layer. Gradients are
/// cleared afterwards; frozen layers are skipped and left untouched.
pub fn adam_step<'a>(
    layers: impl IntoIterator<Item = &'a mut LayerParams>,
    state: &mut AdamState,
) -> Result<()> {
    let mut trainable: Vec<&mut LayerParams> =
        layers.into_iter().filter(|l| !l.is_frozen()).collect();
    let count: usize = trainable.iter().map(|l| l.param_count()).sum();
    if count != state.m.len() || count != state.v.len() {
        return Err(Error::InvalidArgument(format!(
            "optimizer tracks {} parameters but {count} are trainable",
            state.m.len()
        )));
    }
    for (i, layer) in trainable.iter().enumerate() {
        if layer.weights.grad().is_none() || layer.bias.grad().is_none() {
            return Err(Error::MissingGrad(format!("layer {i}")));
        }
    }

    state.step += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);

    let mut offset = 0;
    let mut update = |tensor: &mut Tensor| {
        let grad = tensor.grad().expect("checked above").to_vec();
        let n = grad.len();
        let m = &mut state.m[offset..offset + n];
        let v = &mut state.v[offset..offset + n];
        for (((p, g), m), v) in tensor.data_mut().iter_mut().zip(&grad).zip(m).zip(v) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + epsilon);
        }
        tensor.zero_grad();
        offset += n;
    };
    for layer in trainable.iter_mut() {
        update(&mut layer.weights);
        update(&mut layer.bias);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndtensor::LayerHyper;

    fn scalar_layer(p: f64) -> LayerParams {
        LayerParams::from_parts(
            LayerHyper::Dense {
                fan_in: 1,
                fan_out: 1,
            },
            Tensor::new(vec![1, 1], vec![p]).unwrap(),
            Tensor::zeros(&[1]),
        )
        .unwrap()
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut layer = scalar_layer(0.0);
        let mut state = AdamState::for_layers([&layer], AdamConfig {
            lr: 0.1,
            ..Default::default()
        });
        layer.weights.accumulate_grad(&[1.0]).unwrap();
        layer.bias.accumulate_grad(&[0.0]).unwrap();
        adam_step([&mut layer], &mut state).unwrap();
        assert!((layer.weights.data()[0] + 0.1).abs() < 1e-6);
        assert_eq!(state.step, 1);
        assert!(layer.weights.grad().is_none());
    }

    #[test]
    fn frozen_layers_are_bit_identical_after_step() {
        let mut live = scalar_layer(0.5);
        let mut frozen = scalar_layer(0.25);
        frozen.set_frozen(true);
        let before = frozen.to_le_bytes();
        let mut state = AdamState::for_layers([&live, &frozen], AdamConfig::default());
        assert_eq!(state.m.len(), 2);
        live.weights.accumulate_grad(&[0.3]).unwrap();
        live.bias.accumulate_grad(&[0.3]).unwrap();
        adam_step([&mut live, &mut frozen], &mut state).unwrap();
        assert_eq!(frozen.to_le_bytes(), before);
    }

    #[test]
    fn missing_grad_rejected() {
        let mut layer = scalar_layer(0.0);
        let mut state = AdamState::for_layers([&layer], AdamConfig::default());
        assert!(matches!(
            adam_step([&mut layer], &mut state),
            Err(Error::MissingGrad(_))
        ));
        assert_eq!(state.step, 0);
    }

    #[test]
    fn quadratic_best_so_far_decreases() {
        // f(p) = (p - 3)^2 from p = 0
        let mut layer = scalar_layer(0.0);
        let mut state = AdamState::for_layers([&layer], AdamConfig {
            lr: 0.1,
            ..Default::default()
        });
        let f = |p: f64| (p - 3.0).powi(2);
        let mut best = f(layer.weights.data()[0]);
        for _ in 0..10 {
            let p = layer.weights.data()[0];
            layer.weights.accumulate_grad(&[2.0 * (p - 3.0)]).unwrap();
            layer.bias.accumulate_grad(&[0.0]).unwrap();
            adam_step([&mut layer], &mut state).unwrap();
            let now = f(layer.weights.data()[0]);
            assert!(now < best, "{now} !< {best}");
            best = now;
        }
        assert_eq!(state.step, 10);
    }
}
