//! Reverse-mode automatic differentiation over a linear Wengert tape.
//!
//! A [`Tape`] records every operation of one forward pass. Values are stored
//! by node; [`Tape::backward`] walks the nodes in reverse and accumulates
//! adjoints only along paths that reach a leaf with `requires_grad` set.

use super::kernels::{
    batch_major_to_channel_major, channel_major_to_batch_major, col2im, gemm, im2col, ConvGeom,
    MatRef,
};
use super::layers::LayerParams;
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
        batch: usize,
        out_ch: usize,
        cols: Option<Vec<f64>>,
    },
    Deconv2d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
        batch: usize,
        in_ch: usize,
        x_cm: Option<Vec<f64>>,
    },
    Dense {
        x: Var,
        w: Var,
        b: Var,
    },
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    needs_grad: bool,
    op: Op,
}

#[derive(Debug, Clone, Copy)]
struct Binding {
    slot: usize,
    weights: Var,
    bias: Var,
}

/// Recording of one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    bindings: Vec<Binding>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(
        &mut self,
        op_name: &'static str,
        shape: Vec<usize>,
        value: Vec<f64>,
        needs_grad: bool,
        op: Op,
    ) -> Result<Var> {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: op_name });
        }
        self.nodes.push(Node {
            shape,
            value,
            needs_grad,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    /// Records a tensor as a leaf. Gradients flow to it only when the
    /// tensor itself has `requires_grad` set.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.nodes.push(Node {
            shape: t.shape().to_vec(),
            value: t.data().to_vec(),
            needs_grad: t.requires_grad(),
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a non-differentiable input of the given shape.
    pub fn constant(&mut self, shape: Vec<usize>, value: Vec<f64>) -> Result<Var> {
        if shape.iter().product::<usize>() != value.len() {
            return Err(Error::shape("constant", &shape, &[value.len()]));
        }
        self.push("constant", shape, value, false, Op::Leaf)
    }

    /// Registers a layer's parameters under `slot`, so that
    /// [`Tape::layer_grads`] can hand the gradients back after `backward`.
    pub fn bind_layer(&mut self, slot: usize, layer: &LayerParams) -> (Var, Var) {
        let weights = self.leaf(&layer.weights);
        let bias = self.leaf(&layer.bias);
        self.bindings.push(Binding {
            slot,
            weights,
            bias,
        });
        (weights, bias)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::new(n.shape.clone(), n.value.clone()).expect("tape values are finite")
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.node(v).value[0]
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Summed gradients of every binding registered under `slot`.
    pub fn layer_grads(&self, slot: usize) -> Option<(Vec<f64>, Vec<f64>)> {
        let mut acc: Option<(Vec<f64>, Vec<f64>)> = None;
        for b in self.bindings.iter().filter(|b| b.slot == slot) {
            let (Some(gw), Some(gb)) = (self.grad(b.weights), self.grad(b.bias)) else {
                continue;
            };
            match &mut acc {
                None => acc = Some((gw.to_vec(), gb.to_vec())),
                Some((aw, ab)) => {
                    aw.iter_mut().zip(gw).for_each(|(a, g)| *a += g);
                    ab.iter_mut().zip(gb).for_each(|(a, g)| *a += g);
                }
            }
        }
        acc
    }

    // ---- layers ---------------------------------------------------------

    /// 2-D cross-correlation with zero padding.
    /// `x: [N, C, H, W]`, `w: [K, C, k, k]`, `b: [K]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let bs = self.shape(b).to_vec();
        if xs.len() != 4 || ws.len() != 4 || ws[2] != ws[3] || ws[1] != xs[1] {
            return Err(Error::shape("conv2d", &ws, &xs));
        }
        if bs != [ws[0]] {
            return Err(Error::shape("conv2d bias", &[ws[0]], &bs));
        }
        let (batch, out_ch) = (xs[0], ws[0]);
        let geom = ConvGeom::new(xs[1], xs[2], xs[3], ws[2], stride, padding)
            .ok_or_else(|| Error::shape("conv2d window", &ws, &xs))?;
        let p = geom.out_pixels();
        let cols = im2col(self.value(x), batch, &geom);
        let mut tmp = vec![0.0; out_ch * batch * p];
        gemm(
            1.0,
            MatRef::row_major(self.value(w), out_ch, geom.patch_len()),
            MatRef::row_major(&cols, geom.patch_len(), batch * p),
            0.0,
            &mut tmp,
        );
        let mut out = channel_major_to_batch_major(&tmp, batch, out_ch, p);
        let bias = self.value(b);
        for (chunk, i) in out.chunks_mut(p).zip(0..) {
            let bk = bias[i % out_ch];
            chunk.iter_mut().for_each(|v| *v += bk);
        }
        let needs = self.node(x).needs_grad || self.node(w).needs_grad || self.node(b).needs_grad;
        let keep_cols = self.node(w).needs_grad;
        self.push(
            "conv2d",
            vec![batch, out_ch, geom.out_h, geom.out_w],
            out,
            needs,
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                batch,
                out_ch,
                cols: keep_cols.then_some(cols),
            },
        )
    }

    /// Transposed convolution (the input-gradient of [`Tape::conv2d`]).
    /// `x: [N, Cin, H, W]`, `w: [Cin, Cout, k, k]`, `b: [Cout]`; output
    /// spatial size is `(H - 1) * stride - 2 * padding + k`.
    pub fn deconv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let bs = self.shape(b).to_vec();
        if xs.len() != 4 || ws.len() != 4 || ws[2] != ws[3] || ws[0] != xs[1] || stride == 0 {
            return Err(Error::shape("deconv2d", &ws, &xs));
        }
        if bs != [ws[1]] {
            return Err(Error::shape("deconv2d bias", &[ws[1]], &bs));
        }
        let (batch, in_ch, out_ch, k) = (xs[0], xs[1], ws[1], ws[2]);
        let span = |d: usize| ((d - 1) * stride + k).checked_sub(2 * padding).filter(|&v| v > 0);
        let (Some(out_h), Some(out_w)) = (span(xs[2]), span(xs[3])) else {
            return Err(Error::shape("deconv2d window", &ws, &xs));
        };
        let geom = ConvGeom::new(out_ch, out_h, out_w, k, stride, padding)
            .filter(|g| g.out_h == xs[2] && g.out_w == xs[3])
            .ok_or_else(|| Error::shape("deconv2d window", &ws, &xs))?;
        let p = xs[2] * xs[3];
        let x_cm = batch_major_to_channel_major(self.value(x), batch, in_ch, p);
        let mut cols = vec![0.0; geom.patch_len() * batch * p];
        gemm(
            1.0,
            MatRef::row_major(self.value(w), in_ch, geom.patch_len()).t(),
            MatRef::row_major(&x_cm, in_ch, batch * p),
            0.0,
            &mut cols,
        );
        let mut out = col2im(&cols, batch, &geom);
        let plane = out_h * out_w;
        let bias = self.value(b);
        for (chunk, i) in out.chunks_mut(plane).zip(0..) {
            let bc = bias[i % out_ch];
            chunk.iter_mut().for_each(|v| *v += bc);
        }
        let needs = self.node(x).needs_grad || self.node(w).needs_grad || self.node(b).needs_grad;
        let keep = self.node(w).needs_grad;
        self.push(
            "deconv2d",
            vec![batch, out_ch, out_h, out_w],
            out,
            needs,
            Op::Deconv2d {
                x,
                w,
                b,
                geom,
                batch,
                in_ch,
                x_cm: keep.then_some(x_cm),
            },
        )
    }

    /// `x: [N, F]`, `w: [F, G]`, `b: [G]` -> `x·w + b`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let bs = self.shape(b).to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] {
            return Err(Error::shape("dense", &ws, &xs));
        }
        if bs != [ws[1]] {
            return Err(Error::shape("dense bias", &[ws[1]], &bs));
        }
        let (n, f, g) = (xs[0], ws[0], ws[1]);
        let mut out: Vec<f64> = (0..n).flat_map(|_| self.value(b).iter().copied()).collect();
        gemm(
            1.0,
            MatRef::row_major(self.value(x), n, f),
            MatRef::row_major(self.value(w), f, g),
            1.0,
            &mut out,
        );
        let needs = self.node(x).needs_grad || self.node(w).needs_grad || self.node(b).needs_grad;
        self.push("dense", vec![n, g], out, needs, Op::Dense { x, w, b })
    }

    // ---- elementwise ----------------------------------------------------

    fn unary(&mut self, name: &'static str, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let value = self.value(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        let needs = self.node(x).needs_grad;
        self.push(name, shape, value, needs, op)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(name, self.shape(a), self.shape(b)));
        }
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        let needs = self.node(a).needs_grad || self.node(b).needs_grad;
        self.push(name, shape, value, needs, op)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary("relu", x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary("sigmoid", x, sigmoid, Op::Sigmoid(x))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary("exp", x, f64::exp, Op::Exp(x))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        self.unary("scale", x, |v| v * s, Op::Scale(x, s))
    }

    pub fn offset(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary("offset", x, |v| v + c, Op::Offset(x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).iter().sum();
        let needs = self.node(x).needs_grad;
        self.push("sum", vec![1], vec![s], needs, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let needs = self.node(x).needs_grad;
        self.push("mean", vec![1], vec![m], needs, Op::Mean(x))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(x).len() {
            return Err(Error::shape("reshape", self.shape(x), &shape));
        }
        let value = self.value(x).to_vec();
        let needs = self.node(x).needs_grad;
        self.push("reshape", shape, value, needs, Op::Reshape(x))
    }

    /// Mean squared difference over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let sq = self.mul(d, d)?;
        self.mean(sq)
    }

    // ---- backward -------------------------------------------------------

    /// Populates gradients of `loss` with respect to every node on a path
    /// to a differentiable leaf.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.shape(loss);
        if shape.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarLoss(shape.to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                grads[idx] = Some(g);
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        // Drop adjoints of nodes that cannot reach a differentiable leaf.
        for (g, n) in grads.iter_mut().zip(&self.nodes) {
            if !n.needs_grad {
                *g = None;
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let needs = |v: Var| self.nodes[v.0].needs_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                batch,
                out_ch,
                cols,
            } => {
                let (batch, out_ch) = (*batch, *out_ch);
                let p = geom.out_pixels();
                let g_cm = batch_major_to_channel_major(g, batch, out_ch, p);
                let dout = MatRef::row_major(&g_cm, out_ch, batch * p);
                if needs(*b) {
                    let db: Vec<f64> = g_cm.chunks(batch * p).map(|c| c.iter().sum()).collect();
                    accumulate(grads, *b, db);
                }
                if needs(*w) {
                    let cols = cols.as_ref().expect("columns retained for weight grad");
                    let mut dw = vec![0.0; out_ch * geom.patch_len()];
                    gemm(
                        1.0,
                        dout,
                        MatRef::row_major(cols, geom.patch_len(), batch * p).t(),
                        0.0,
                        &mut dw,
                    );
                    accumulate(grads, *w, dw);
                }
                if needs(*x) {
                    let mut dcols = vec![0.0; geom.patch_len() * batch * p];
                    gemm(
                        1.0,
                        MatRef::row_major(self.value(*w), out_ch, geom.patch_len()).t(),
                        dout,
                        0.0,
                        &mut dcols,
                    );
                    accumulate(grads, *x, col2im(&dcols, batch, geom));
                }
            }
            Op::Deconv2d {
                x,
                w,
                b,
                geom,
                batch,
                in_ch,
                x_cm,
            } => {
                let (batch, in_ch) = (*batch, *in_ch);
                let p = geom.out_pixels();
                let plane = geom.height * geom.width;
                if needs(*b) {
                    let mut db = vec![0.0; geom.channels];
                    for (chunk, i) in g.chunks(plane).zip(0..) {
                        db[i % geom.channels] += chunk.iter().sum::<f64>();
                    }
                    accumulate(grads, *b, db);
                }
                if !needs(*w) && !needs(*x) {
                    return;
                }
                let dcols = im2col(g, batch, geom);
                let dcols_m = MatRef::row_major(&dcols, geom.patch_len(), batch * p);
                if needs(*w) {
                    let x_cm = x_cm.as_ref().expect("input retained for weight grad");
                    let mut dw = vec![0.0; in_ch * geom.patch_len()];
                    gemm(
                        1.0,
                        MatRef::row_major(x_cm, in_ch, batch * p),
                        dcols_m.t(),
                        0.0,
                        &mut dw,
                    );
                    accumulate(grads, *w, dw);
                }
                if needs(*x) {
                    let mut dx = vec![0.0; in_ch * batch * p];
                    gemm(
                        1.0,
                        MatRef::row_major(self.value(*w), in_ch, geom.patch_len()),
                        dcols_m,
                        0.0,
                        &mut dx,
                    );
                    accumulate(grads, *x, channel_major_to_batch_major(&dx, batch, in_ch, p));
                }
            }
            Op::Dense { x, w, b } => {
                let xs = &self.nodes[x.0].shape;
                let (n, f) = (xs[0], xs[1]);
                let gdim = self.nodes[w.0].shape[1];
                let dy = MatRef::row_major(g, n, gdim);
                if needs(*b) {
                    let mut db = vec![0.0; gdim];
                    for row in g.chunks(gdim) {
                        db.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                    }
                    accumulate(grads, *b, db);
                }
                if needs(*w) {
                    let mut dw = vec![0.0; f * gdim];
                    gemm(1.0, MatRef::row_major(self.value(*x), n, f).t(), dy, 0.0, &mut dw);
                    accumulate(grads, *w, dw);
                }
                if needs(*x) {
                    let mut dx = vec![0.0; n * f];
                    gemm(1.0, dy, MatRef::row_major(self.value(*w), f, gdim).t(), 0.0, &mut dx);
                    accumulate(grads, *x, dx);
                }
            }
            Op::Relu(x) => {
                let d = self
                    .value(*x)
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 })
                    .collect();
                accumulate(grads, *x, d);
            }
            Op::Sigmoid(x) => {
                let d = node
                    .value
                    .iter()
                    .zip(g)
                    .map(|(&s, &gv)| gv * s * (1.0 - s))
                    .collect();
                accumulate(grads, *x, d);
            }
            Op::Exp(x) => {
                let d = node.value.iter().zip(g).map(|(&e, &gv)| gv * e).collect();
                accumulate(grads, *x, d);
            }
            Op::Add(a, b) => {
                if needs(*a) {
                    accumulate(grads, *a, g.to_vec());
                }
                if needs(*b) {
                    accumulate(grads, *b, g.to_vec());
                }
            }
            Op::Sub(a, b) => {
                if needs(*a) {
                    accumulate(grads, *a, g.to_vec());
                }
                if needs(*b) {
                    accumulate(grads, *b, g.iter().map(|v| -v).collect());
                }
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    let d = g.iter().zip(self.value(*b)).map(|(gv, bv)| gv * bv).collect();
                    accumulate(grads, *a, d);
                }
                if needs(*b) {
                    let d = g.iter().zip(self.value(*a)).map(|(gv, av)| gv * av).collect();
                    accumulate(grads, *b, d);
                }
            }
            Op::Scale(x, s) => accumulate(grads, *x, g.iter().map(|v| v * s).collect()),
            Op::Offset(x) | Op::Reshape(x) => accumulate(grads, *x, g.to_vec()),
            Op::Sum(x) => {
                let n = self.value(*x).len();
                accumulate(grads, *x, vec![g[0]; n]);
            }
            Op::Mean(x) => {
                let n = self.value(*x).len();
                accumulate(grads, *x, vec![g[0] / n as f64; n]);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, contribution: Vec<f64>) {
    match &mut grads[v.0] {
        Some(buf) => buf.iter_mut().zip(&contribution).for_each(|(a, c)| *a += c),
        slot @ None => *slot = Some(contribution),
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
