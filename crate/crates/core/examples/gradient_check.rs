//! Compares reverse-mode gradients of a small conv, deconv and dense stack
//! against central finite differences.
//!
//! cargo run --example gradient_check -- [seed]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sim2real::ndtensor::{LayerHyper, LayerParams, Tape, Tensor};

fn loss(layers: &[LayerParams], x: &Tensor, tape: &mut Tape) -> sim2real::Result<sim2real::ndtensor::Var> {
    let mut v = tape.leaf(x);
    for (slot, layer) in layers.iter().enumerate() {
        if let LayerHyper::Dense { fan_in, .. } = layer.hyper {
            v = tape.reshape(v, vec![1, fan_in])?;
        }
        v = layer.forward(tape, slot, v)?;
        v = tape.sigmoid(v)?;
    }
    let sq = tape.mul(v, v)?;
    tape.sum(sq)
}

fn main() -> sim2real::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hypers = [
        LayerHyper::Conv2d { in_channels: 2, out_channels: 3, kernel: 3, stride: 2, padding: 1 },
        LayerHyper::Deconv2d { in_channels: 3, out_channels: 2, kernel: 4, stride: 2, padding: 1 },
        LayerHyper::Dense { fan_in: 2 * 6 * 6, fan_out: 4 },
    ];
    let mut layers: Vec<LayerParams> = hypers.iter().map(|&h| LayerParams::init(h, &mut rng)).collect();
    let x = Tensor::new(vec![1, 2, 6, 6], (0..72).map(|_| rng.random_range(-1.0..1.0)).collect())?;

    let mut tape = Tape::new();
    let l = loss(&layers, &x, &mut tape)?;
    tape.backward(l)?;
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for slot in 0..layers.len() {
        let (gw, _) = tape.layer_grads(slot).expect("every layer is trainable");
        for i in (0..gw.len()).step_by(7) {
            let mut probe = |delta: f64| -> sim2real::Result<f64> {
                layers[slot].weights.data_mut()[i] += delta;
                let mut t = Tape::new();
                let v = loss(&layers, &x, &mut t)?;
                layers[slot].weights.data_mut()[i] -= delta;
                Ok(t.scalar(v))
            };
            let fd = (probe(h)? - probe(-h)?) / (2.0 * h);
            let rel = (fd - gw[i]).abs() / fd.abs().max(gw[i].abs()).max(1e-8);
            worst = worst.max(rel);
        }
        println!("layer {slot} ({:?}): checked", layers[slot].kind());
    }
    println!("worst relative error: {worst:.2e}");
    if worst > 1e-4 {
        std::process::exit(1);
    }
    Ok(())
}
