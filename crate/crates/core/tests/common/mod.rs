//! Independent oracles shared by the integration suites. Nothing in here
//! calls the im2col/GEMM path it is used to check.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sim2real::ndtensor::{Tape, Tensor, Var};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), random_vec(rng, n)).unwrap()
}

/// Direct six-loop cross-correlation. `x: [N,C,H,W]`, `w: [K,C,k,k]`.
#[allow(clippy::too_many_arguments)]
pub fn naive_conv2d(
    x: &[f64],
    xs: [usize; 4],
    w: &[f64],
    ws: [usize; 4],
    b: &[f64],
    stride: usize,
    pad: usize,
) -> (Vec<f64>, [usize; 4]) {
    let [n, c, h, wd] = xs;
    let [k_out, _, k, _] = ws;
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (wd + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; n * k_out * ho * wo];
    for ni in 0..n {
        for ko in 0..k_out {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b[ko];
                    for ci in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xv = x[((ni * c + ci) * h + iy as usize) * wd + ix as usize];
                                let wv = w[((ko * c + ci) * k + ky) * k + kx];
                                acc += xv * wv;
                            }
                        }
                    }
                    out[((ni * k_out + ko) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    (out, [n, k_out, ho, wo])
}

/// Direct scatter form of the transposed convolution.
/// `x: [N,Cin,H,W]`, `w: [Cin,Cout,k,k]`.
#[allow(clippy::too_many_arguments)]
pub fn naive_deconv2d(
    x: &[f64],
    xs: [usize; 4],
    w: &[f64],
    ws: [usize; 4],
    b: &[f64],
    stride: usize,
    pad: usize,
) -> (Vec<f64>, [usize; 4]) {
    let [n, cin, h, wd] = xs;
    let [_, cout, k, _] = ws;
    let ho = (h - 1) * stride + k - 2 * pad;
    let wo = (wd - 1) * stride + k - 2 * pad;
    let mut out = vec![0.0; n * cout * ho * wo];
    for ni in 0..n {
        for co in 0..cout {
            for i in 0..ho * wo {
                out[(ni * cout + co) * ho * wo + i] = b[co];
            }
        }
        for ci in 0..cin {
            for iy in 0..h {
                for ix in 0..wd {
                    let xv = x[((ni * cin + ci) * h + iy) * wd + ix];
                    for co in 0..cout {
                        for ky in 0..k {
                            for kx in 0..k {
                                let oy = (iy * stride + ky) as isize - pad as isize;
                                let ox = (ix * stride + kx) as isize - pad as isize;
                                if oy < 0 || ox < 0 || oy >= ho as isize || ox >= wo as isize {
                                    continue;
                                }
                                let wv = w[((ci * cout + co) * k + ky) * k + kx];
                                out[((ni * cout + co) * ho + oy as usize) * wo + ox as usize] +=
                                    xv * wv;
                            }
                        }
                    }
                }
            }
        }
    }
    (out, [n, cout, ho, wo])
}

/// Double-loop `x·w + b`.
pub fn naive_dense(x: &[f64], n: usize, f: usize, w: &[f64], g: usize, b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n * g];
    for i in 0..n {
        for j in 0..g {
            let mut acc = b[j];
            for k in 0..f {
                acc += x[i * f + k] * w[k * g + j];
            }
            out[i * g + j] = acc;
        }
    }
    out
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Builds a scalar from tape inputs; used by [`finite_difference_check`].
pub type Build<'a> = &'a dyn Fn(&mut Tape, &[Var]) -> Var;

/// Compares tape gradients against central differences with step `h`.
/// Returns the worst relative error over every input element, where the
/// relative error is `|a - n| / max(|a|, |n|, 1e-3)`.
pub fn finite_difference_check(inputs: &[Tensor], build: Build<'_>, h: f64) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| {
            let mut t = t.clone();
            t.set_requires_grad(true);
            tape.leaf(&t)
        })
        .collect();
    let out = build(&mut tape, &vars);
    tape.backward(out).unwrap();
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|v| tape.grad(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; tape.value(*v).len()]))
        .collect();

    let eval = |perturbed: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| tape.leaf(t)).collect();
        let out = build(&mut tape, &vars);
        tape.scalar(out)
    };

    let mut worst: f64 = 0.0;
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += h;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let a = analytic[i][j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
            worst = worst.max(rel);
        }
    }
    worst
}

/// Contracts an arbitrary-shaped output with fixed random weights so that
/// every output element contributes to the scalar being differentiated.
pub fn contract(tape: &mut Tape, y: Var, seed: u64) -> Var {
    let n = tape.value(y).len();
    let shape = tape.shape(y).to_vec();
    let weights = random_vec(&mut rng(seed), n);
    let r = tape.constant(shape, weights).unwrap();
    let prod = tape.mul(y, r).unwrap();
    tape.sum(prod).unwrap()
}

/// Random conv problem: `(input shape, weight shape, stride, padding)`,
/// with both tensors at most 64 elements when `small` is set.
pub fn random_conv_case(rng: &mut impl Rng, small: bool) -> ([usize; 4], [usize; 4], usize, usize) {
    loop {
        let n = rng.random_range(1..=2);
        let c = rng.random_range(1..=3);
        let h = rng.random_range(2..=if small { 5 } else { 9 });
        let w = rng.random_range(2..=if small { 5 } else { 9 });
        let k_out = rng.random_range(1..=3);
        let k = rng.random_range(1..=3);
        let stride = rng.random_range(1..=2);
        let pad = rng.random_range(0..=1);
        if h + 2 * pad < k || w + 2 * pad < k {
            continue;
        }
        if small && (n * c * h * w > 64 || k_out * c * k * k > 64) {
            continue;
        }
        return ([n, c, h, w], [k_out, c, k, k], stride, pad);
    }
}

/// Random transposed-conv problem with a positive output size.
pub fn random_deconv_case(rng: &mut impl Rng, small: bool) -> ([usize; 4], [usize; 4], usize, usize) {
    loop {
        let n = rng.random_range(1..=2);
        let cin = rng.random_range(1..=3);
        let h = rng.random_range(1..=if small { 4 } else { 6 });
        let w = rng.random_range(1..=if small { 4 } else { 6 });
        let cout = rng.random_range(1..=3);
        let k = rng.random_range(1..=4);
        let stride = rng.random_range(1..=2);
        let pad = rng.random_range(0..=1);
        if (h - 1) * stride + k <= 2 * pad || (w - 1) * stride + k <= 2 * pad {
            continue;
        }
        if small && (n * cin * h * w > 64 || cin * cout * k * k > 64) {
            continue;
        }
        return ([n, cin, h, w], [cin, cout, k, k], stride, pad);
    }
}

/// 16x16 images, coarse grids and short schedules: a full pipeline in
/// seconds.
pub fn tiny_config() -> sim2real::pipeline::TrainConfig {
    use sim2real::pipeline::{Epochs, TrainConfig};
    TrainConfig {
        resolution: (16, 16),
        latent_dim: 8,
        grid_spacing_small_mm: 25.0,
        grid_spacing_large_mm: 100.0,
        batch_size: 16,
        epochs: Epochs {
            vae1: 4,
            vae2: 6,
            cnn: 4,
            baseline: 6,
        },
        ..TrainConfig::default()
    }
}
