//! Layer kernels with exact forward and backward passes.
//!
//! Images and feature maps are stored `[H, W, C]`, convolution kernels
//! `[k, k, C_in, C_out]` and dense weights `[in, out]`, all row-major. The
//! convolution lowers to an im2col matrix product so that the parameter
//! gradient, the input gradient and the forward pass share one layout.

use crate::tensor::{Tensor, TensorError};

/// `C = A·B + beta·C` for row-major operands, with arbitrary strides so that
/// transposed views need no copy.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_rs: usize,
    a_cs: usize,
    b: &[f32],
    b_rs: usize,
    b_cs: usize,
    beta: f32,
    c: &mut [f32],
) {
    if m == 0 || n == 0 {
        return;
    }
    if k > 0 {
        assert!(a.len() > (m - 1) * a_rs + (k - 1) * a_cs, "gemm: A too short");
        assert!(b.len() > (k - 1) * b_rs + (n - 1) * b_cs, "gemm: B too short");
    }
    assert!(c.len() >= m * n, "gemm: C too short");
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_rs as isize,
            a_cs as isize,
            b.as_ptr(),
            b_rs as isize,
            b_cs as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Shape bookkeeping for one 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub height: usize,
    pub width: usize,
    pub in_channels: usize,
    pub kernel: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl ConvGeometry {
    pub fn new(input: &[usize], kernel: &[usize], stride: usize, padding: usize) -> Result<Self, TensorError> {
        let [height, width, in_channels] = *input else {
            return Err(TensorError::Geometry(format!("conv input must be [H,W,C], got {input:?}")));
        };
        let [kh, kw, kin, out_channels] = *kernel else {
            return Err(TensorError::Geometry(format!(
                "conv kernel must be [k,k,Cin,Cout], got {kernel:?}"
            )));
        };
        if kh != kw {
            return Err(TensorError::Geometry(format!("non-square kernel {kh}x{kw}")));
        }
        if kin != in_channels {
            return Err(TensorError::ShapeMismatch {
                expected: vec![kh, kw, in_channels, out_channels],
                actual: kernel.to_vec(),
            });
        }
        if stride == 0 {
            return Err(TensorError::Geometry("stride must be positive".into()));
        }
        if kh > height + 2 * padding || kw > width + 2 * padding {
            return Err(TensorError::Geometry(format!(
                "kernel {kh} larger than padded input {height}x{width} (+{padding})"
            )));
        }
        Ok(Self {
            height,
            width,
            in_channels,
            kernel: kh,
            out_channels,
            stride,
            padding,
            out_height: (height + 2 * padding - kh) / stride + 1,
            out_width: (width + 2 * padding - kw) / stride + 1,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.kernel * self.kernel * self.in_channels
    }

    pub fn out_pixels(&self) -> usize {
        self.out_height * self.out_width
    }

    pub fn out_dims(&self) -> [usize; 3] {
        [self.out_height, self.out_width, self.out_channels]
    }

    fn source(&self, oy: usize, ox: usize, dy: usize, dx: usize) -> Option<(usize, usize)> {
        let y = (oy * self.stride + dy).checked_sub(self.padding)?;
        let x = (ox * self.stride + dx).checked_sub(self.padding)?;
        (y < self.height && x < self.width).then_some((y, x))
    }
}

/// Unfolds every receptive field into a row: `[out_pixels, k*k*C_in]`.
pub(crate) fn im2col(input: &[f32], g: &ConvGeometry) -> Vec<f32> {
    let patch = g.patch_len();
    let c = g.in_channels;
    let mut cols = vec![0.0f32; g.out_pixels() * patch];
    for oy in 0..g.out_height {
        for ox in 0..g.out_width {
            let row = &mut cols[(oy * g.out_width + ox) * patch..][..patch];
            for dy in 0..g.kernel {
                for dx in 0..g.kernel {
                    if let Some((y, x)) = g.source(oy, ox, dy, dx) {
                        let dst = (dy * g.kernel + dx) * c;
                        let src = (y * g.width + x) * c;
                        row[dst..dst + c].copy_from_slice(&input[src..src + c]);
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input grid.
pub(crate) fn col2im(cols: &[f32], g: &ConvGeometry) -> Vec<f32> {
    let patch = g.patch_len();
    let c = g.in_channels;
    let mut out = vec![0.0f32; g.height * g.width * c];
    for oy in 0..g.out_height {
        for ox in 0..g.out_width {
            let row = &cols[(oy * g.out_width + ox) * patch..][..patch];
            for dy in 0..g.kernel {
                for dx in 0..g.kernel {
                    if let Some((y, x)) = g.source(oy, ox, dy, dx) {
                        let src = (dy * g.kernel + dx) * c;
                        let dst = (y * g.width + x) * c;
                        for (o, v) in out[dst..dst + c].iter_mut().zip(&row[src..src + c]) {
                            *o += v;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Convolution on an already unfolded input; returns `[out_pixels, C_out]`.
pub(crate) fn conv_from_cols(cols: &[f32], kernel: &[f32], bias: &[f32], g: &ConvGeometry) -> Vec<f32> {
    let p = g.out_pixels();
    let n = g.out_channels;
    let mut out = Vec::with_capacity(p * n);
    for _ in 0..p {
        out.extend_from_slice(bias);
    }
    gemm(p, g.patch_len(), n, cols, g.patch_len(), 1, kernel, n, 1, 1.0, &mut out);
    out
}

/// Cross-correlation of `input [H,W,C_in]` with `kernel [k,k,C_in,C_out]`.
pub fn conv2d_forward(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor, TensorError> {
    let g = ConvGeometry::new(input.dims(), kernel.dims(), stride, padding)?;
    bias.expect_dims(&[g.out_channels])?;
    let cols = im2col(input.data(), &g);
    let out = conv_from_cols(&cols, kernel.data(), bias.data(), &g);
    Tensor::new(g.out_dims().to_vec(), out)
}

/// Gradients of a convolution with respect to its three operands.
#[derive(Debug, Clone)]
pub struct Conv2dGrads {
    pub input: Tensor,
    pub kernel: Tensor,
    pub bias: Tensor,
}

/// Accumulates `dK += colsᵀ·dY` and `db += Σ dY` into the provided buffers.
pub(crate) fn conv_param_grads(cols: &[f32], grad_out: &[f32], g: &ConvGeometry, dkernel: &mut [f32], dbias: &mut [f32]) {
    let p = g.out_pixels();
    let n = g.out_channels;
    // colsᵀ is [patch, p] viewed through swapped strides.
    gemm(g.patch_len(), p, n, cols, 1, g.patch_len(), grad_out, n, 1, 1.0, dkernel);
    for row in grad_out.chunks_exact(n) {
        for (d, v) in dbias.iter_mut().zip(row) {
            *d += v;
        }
    }
}

/// `dX = col2im(dY·Kᵀ)`.
pub(crate) fn conv_input_grad(kernel: &[f32], grad_out: &[f32], g: &ConvGeometry) -> Vec<f32> {
    let p = g.out_pixels();
    let patch = g.patch_len();
    let n = g.out_channels;
    let mut dcols = vec![0.0f32; p * patch];
    gemm(p, n, patch, grad_out, n, 1, kernel, 1, n, 0.0, &mut dcols);
    col2im(&dcols, g)
}

pub fn conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    stride: usize,
    padding: usize,
    grad_out: &Tensor,
) -> Result<Conv2dGrads, TensorError> {
    let g = ConvGeometry::new(input.dims(), kernel.dims(), stride, padding)?;
    grad_out.expect_dims(&g.out_dims())?;
    let cols = im2col(input.data(), &g);
    let mut dk = vec![0.0f32; kernel.len()];
    let mut db = vec![0.0f32; g.out_channels];
    conv_param_grads(&cols, grad_out.data(), &g, &mut dk, &mut db);
    let dx = conv_input_grad(kernel.data(), grad_out.data(), &g);
    Ok(Conv2dGrads {
        input: Tensor::new(input.dims().to_vec(), dx)?,
        kernel: Tensor::new(kernel.dims().to_vec(), dk)?,
        bias: Tensor::new(vec![g.out_channels], db)?,
    })
}

pub fn relu_forward(x: &mut [f32]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Masks `grad` in place where the forward output was not positive.
pub fn relu_backward(output: &[f32], grad: &mut [f32]) {
    for (g, &o) in grad.iter_mut().zip(output) {
        if o <= 0.0 {
            *g = 0.0;
        }
    }
}

/// 2×2 max-pooling with stride 2 over `[H,W,C]`; odd trailing rows/columns
/// are dropped. Returns the pooled map and the flat source index of each
/// maximum (first maximum wins on ties).
pub fn max_pool2_forward(input: &[f32], dims: [usize; 3]) -> (Vec<f32>, Vec<u32>, [usize; 3]) {
    let [h, w, c] = dims;
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0f32; oh * ow * c];
    let mut arg = vec![0u32; oh * ow * c];
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let mut best_idx = ((2 * oy) * w + 2 * ox) * c + ch;
                let mut best = input[best_idx];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = ((2 * oy + dy) * w + 2 * ox + dx) * c + ch;
                    if input[idx] > best {
                        best = input[idx];
                        best_idx = idx;
                    }
                }
                let o = (oy * ow + ox) * c + ch;
                out[o] = best;
                arg[o] = best_idx as u32;
            }
        }
    }
    (out, arg, [oh, ow, c])
}

pub fn max_pool2_backward(grad_out: &[f32], argmax: &[u32], input_len: usize) -> Vec<f32> {
    let mut grad = vec![0.0f32; input_len];
    for (g, &i) in grad_out.iter().zip(argmax) {
        grad[i as usize] += g;
    }
    grad
}

/// `y = x·W + b` for `W: [in, out]`.
pub fn dense_forward(x: &[f32], weight: &[f32], bias: &[f32]) -> Vec<f32> {
    let n = bias.len();
    let mut out = bias.to_vec();
    gemm(1, x.len(), n, x, x.len(), 1, weight, n, 1, 1.0, &mut out);
    out
}

/// Accumulates `dW += xᵀ·dy`, `db += dy`.
pub fn dense_param_grads(x: &[f32], grad_out: &[f32], dweight: &mut [f32], dbias: &mut [f32]) {
    let n = grad_out.len();
    gemm(x.len(), 1, n, x, 1, 1, grad_out, n, 1, 1.0, dweight);
    for (d, g) in dbias.iter_mut().zip(grad_out) {
        *d += g;
    }
}

/// `dx = W·dy`.
pub fn dense_input_grad(weight: &[f32], grad_out: &[f32], in_len: usize) -> Vec<f32> {
    let n = grad_out.len();
    let mut dx = vec![0.0f32; in_len];
    gemm(in_len, n, 1, weight, n, 1, grad_out, 1, 1, 0.0, &mut dx);
    dx
}

/// Softmax with the maximum subtracted first.
pub fn softmax(logits: &[f32]) -> Vec<f32> {
    let m = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f64> = logits.iter().map(|&z| f64::from(z - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| (e / sum) as f32).collect()
}

pub fn log_softmax(logits: &[f32]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let lse = logits
        .iter()
        .map(|&z| f64::from(z - m).exp())
        .sum::<f64>()
        .ln()
        + f64::from(m);
    logits.iter().map(|&z| f64::from(z) - lse).collect()
}

/// Cross-entropy of `softmax(logits)` against `label` and its gradient with
/// respect to the logits (`softmax − onehot`).
pub fn cross_entropy(logits: &[f32], label: usize) -> (f64, Vec<f32>) {
    let loss = -log_softmax(logits)[label];
    let mut grad = softmax(logits);
    grad[label] -= 1.0;
    (loss, grad)
}
