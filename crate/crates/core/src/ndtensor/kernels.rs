//! Low-level numeric kernels: strided GEMM, im2col/col2im and layout shuffles.

/// Read-only strided matrix view.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub rs: isize,
    pub cs: isize,
}

impl<'a> MatRef<'a> {
    pub fn row_major(data: &'a [f64], rows: usize, cols: usize) -> Self {
        assert!(data.len() >= rows * cols);
        Self {
            data,
            rows,
            cols,
            rs: cols as isize,
            cs: 1,
        }
    }

    pub fn t(self) -> Self {
        Self {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }
}

/// `c = alpha * a * b + beta * c` with `c` row-major `a.rows × b.cols`.
pub(crate) fn gemm(alpha: f64, a: MatRef<'_>, b: MatRef<'_>, beta: f64, c: &mut [f64]) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v *= beta);
        return;
    }
    // SAFETY: both views were bounds-checked at construction and the
    // strides describe a sub-rectangle of their backing slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs,
            a.cs,
            b.data.as_ptr(),
            b.rs,
            b.cs,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a 2-D convolution window sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    /// Returns `None` when the kernel does not fit the padded input.
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Option<Self> {
        let ph = height + 2 * padding;
        let pw = width + 2 * padding;
        if kernel == 0 || stride == 0 || ph < kernel || pw < kernel {
            return None;
        }
        Some(Self {
            channels,
            height,
            width,
            kernel,
            stride,
            padding,
            out_h: (ph - kernel) / stride + 1,
            out_w: (pw - kernel) / stride + 1,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn out_pixels(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn in_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// Maps output coordinate plus kernel tap to an input coordinate, or
    /// `None` when it lands in the zero padding.
    #[inline]
    fn source(&self, out: usize, tap: usize, limit: usize) -> Option<usize> {
        let pos = (out * self.stride + tap) as isize - self.padding as isize;
        if pos >= 0 && (pos as usize) < limit {
            Some(pos as usize)
        } else {
            None
        }
    }
}

/// Unfolds a `[batch, C, H, W]` input into a `[C*k*k, batch*Ho*Wo]` matrix.
pub(crate) fn im2col(input: &[f64], batch: usize, g: &ConvGeom) -> Vec<f64> {
    let p = g.out_pixels();
    let ncols = batch * p;
    let mut cols = vec![0.0; g.patch_len() * ncols];
    for n in 0..batch {
        let img = &input[n * g.in_len()..(n + 1) * g.in_len()];
        for c in 0..g.channels {
            let plane = &img[c * g.height * g.width..(c + 1) * g.height * g.width];
            for ki in 0..g.kernel {
                for kj in 0..g.kernel {
                    let row = (c * g.kernel + ki) * g.kernel + kj;
                    let dst = &mut cols[row * ncols + n * p..row * ncols + (n + 1) * p];
                    for oy in 0..g.out_h {
                        let Some(iy) = g.source(oy, ki, g.height) else {
                            continue;
                        };
                        let src_row = &plane[iy * g.width..(iy + 1) * g.width];
                        for ox in 0..g.out_w {
                            if let Some(ix) = g.source(ox, kj, g.width) {
                                dst[oy * g.out_w + ox] = src_row[ix];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: folds a column matrix back, summing overlaps.
pub(crate) fn col2im(cols: &[f64], batch: usize, g: &ConvGeom) -> Vec<f64> {
    let p = g.out_pixels();
    let ncols = batch * p;
    let mut out = vec![0.0; batch * g.in_len()];
    for n in 0..batch {
        let img = &mut out[n * g.in_len()..(n + 1) * g.in_len()];
        for c in 0..g.channels {
            let plane = &mut img[c * g.height * g.width..(c + 1) * g.height * g.width];
            for ki in 0..g.kernel {
                for kj in 0..g.kernel {
                    let row = (c * g.kernel + ki) * g.kernel + kj;
                    let src = &cols[row * ncols + n * p..row * ncols + (n + 1) * p];
                    for oy in 0..g.out_h {
                        let Some(iy) = g.source(oy, ki, g.height) else {
                            continue;
                        };
                        let dst_row = &mut plane[iy * g.width..(iy + 1) * g.width];
                        for ox in 0..g.out_w {
                            if let Some(ix) = g.source(ox, kj, g.width) {
                                dst_row[ix] += src[oy * g.out_w + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// `[batch, K, P]` -> `[K, batch*P]`.
pub(crate) fn batch_major_to_channel_major(x: &[f64], batch: usize, k: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for n in 0..batch {
        for c in 0..k {
            let src = &x[(n * k + c) * p..(n * k + c + 1) * p];
            out[c * batch * p + n * p..c * batch * p + (n + 1) * p].copy_from_slice(src);
        }
    }
    out
}

/// `[K, batch*P]` -> `[batch, K, P]`.
pub(crate) fn channel_major_to_batch_major(x: &[f64], batch: usize, k: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for n in 0..batch {
        for c in 0..k {
            let src = &x[c * batch * p + n * p..c * batch * p + (n + 1) * p];
            out[(n * k + c) * p..(n * k + c + 1) * p].copy_from_slice(src);
        }
    }
    out
}
