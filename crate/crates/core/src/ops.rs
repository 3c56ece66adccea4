//! Forward and backward implementations for every primitive the trunk needs.
//!
//! Convolution follows the cross-correlation convention (no kernel flip),
//! as is usual for learned filters; the band-pass sinc kernel is symmetric
//! so the distinction only matters for the deeper conv layers, and it is
//! fixed here once for all of them.
//!
//! Every function is pure. Parallel loops only ever split across
//! independent output elements and each element is reduced sequentially in
//! a fixed order, so results are bitwise identical regardless of thread
//! count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::ShapeMismatch { op, detail }
}

// ── 1-D convolution ───────────────────────────────────────────────

/// Output length of a valid (no-padding) convolution.
pub fn conv1d_out_len(in_len: usize, kernel_len: usize, stride: usize) -> usize {
    (in_len - kernel_len) / stride + 1
}

/// Single-input-channel convolution.
///
/// `input`: `[batch, in_len]`, `kernels`: `[num_filters, kernel_len]` →
/// `[batch, num_filters, out_len]` with
/// `y[b,f,i] = Σ_j input[b, i·stride + j] · kernels[f, j]`.
pub fn conv1d(input: &Tensor, kernels: &Tensor, stride: usize) -> Result<Tensor> {
    check_conv_shapes("conv1d", input, 2, kernels, 2, stride)?;
    let (batch, in_len) = (input.dim(0), input.dim(1));
    let (filters, kernel_len) = (kernels.dim(0), kernels.dim(1));
    let x = input.clone().reshape(vec![batch, 1, in_len])?;
    let k = kernels.clone().reshape(vec![filters, 1, kernel_len])?;
    conv1d_mc(&x, &k, stride)
}

/// Gradients of [`conv1d`] w.r.t. input and kernels given `grad_out` of
/// shape `[batch, num_filters, out_len]`.
pub fn conv1d_backward(
    input: &Tensor,
    kernels: &Tensor,
    stride: usize,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let (batch, in_len) = (input.dim(0), input.dim(1));
    let (filters, kernel_len) = (kernels.dim(0), kernels.dim(1));
    let x = input.clone().reshape(vec![batch, 1, in_len])?;
    let k = kernels.clone().reshape(vec![filters, 1, kernel_len])?;
    let (dx, dk) = conv1d_mc_backward(&x, &k, stride, grad_out)?;
    Ok((
        dx.reshape(vec![batch, in_len])?,
        dk.reshape(vec![filters, kernel_len])?,
    ))
}

/// Multi-channel convolution.
///
/// `input`: `[batch, in_ch, in_len]`, `kernels`: `[filters, in_ch, kernel_len]`
/// → `[batch, filters, out_len]` with
/// `y[b,f,i] = Σ_c Σ_j input[b,c,i·stride+j] · kernels[f,c,j]`.
pub fn conv1d_mc(input: &Tensor, kernels: &Tensor, stride: usize) -> Result<Tensor> {
    check_conv_shapes("conv1d", input, 3, kernels, 3, stride)?;
    let (batch, in_ch, in_len) = (input.dim(0), input.dim(1), input.dim(2));
    let (filters, k_ch, kernel_len) = (kernels.dim(0), kernels.dim(1), kernels.dim(2));
    if in_ch != k_ch {
        return Err(shape_err(
            "conv1d",
            format!("input has {in_ch} channels, kernels expect {k_ch}"),
        ));
    }
    let out_len = conv1d_out_len(in_len, kernel_len, stride);
    let xd = input.data();
    let kd = kernels.data();

    let mut out = vec![0.0; batch * filters * out_len];
    out.par_chunks_mut(filters * out_len)
        .enumerate()
        .for_each(|(b, out_b)| {
            let x_b = &xd[b * in_ch * in_len..(b + 1) * in_ch * in_len];
            for f in 0..filters {
                let k_f = &kd[f * in_ch * kernel_len..(f + 1) * in_ch * kernel_len];
                let out_f = &mut out_b[f * out_len..(f + 1) * out_len];
                for (i, o) in out_f.iter_mut().enumerate() {
                    let start = i * stride;
                    let mut acc = 0.0;
                    for c in 0..in_ch {
                        let xs = &x_b[c * in_len + start..c * in_len + start + kernel_len];
                        let ks = &k_f[c * kernel_len..(c + 1) * kernel_len];
                        for (xv, kv) in xs.iter().zip(ks) {
                            acc += xv * kv;
                        }
                    }
                    *o = acc;
                }
            }
        });
    Ok(Tensor::raw(vec![batch, filters, out_len], out))
}

/// Gradients of [`conv1d_mc`] w.r.t. input and kernels.
pub fn conv1d_mc_backward(
    input: &Tensor,
    kernels: &Tensor,
    stride: usize,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let (batch, in_ch, in_len) = (input.dim(0), input.dim(1), input.dim(2));
    let (filters, _, kernel_len) = (kernels.dim(0), kernels.dim(1), kernels.dim(2));
    let out_len = conv1d_out_len(in_len, kernel_len, stride);
    if grad_out.shape() != [batch, filters, out_len] {
        return Err(shape_err(
            "conv1d_backward",
            format!(
                "grad_out {:?}, expected [{batch}, {filters}, {out_len}]",
                grad_out.shape()
            ),
        ));
    }
    let xd = input.data();
    let kd = kernels.data();
    let gd = grad_out.data();

    // d_input[b,c,n] = Σ_f Σ_{i,j : i·stride+j = n} g[b,f,i] k[f,c,j]
    let mut d_input = vec![0.0; xd.len()];
    d_input
        .par_chunks_mut(in_ch * in_len)
        .enumerate()
        .for_each(|(b, dx_b)| {
            let g_b = &gd[b * filters * out_len..(b + 1) * filters * out_len];
            for f in 0..filters {
                let g_f = &g_b[f * out_len..(f + 1) * out_len];
                let k_f = &kd[f * in_ch * kernel_len..(f + 1) * in_ch * kernel_len];
                for (i, g) in g_f.iter().enumerate() {
                    if *g == 0.0 {
                        continue;
                    }
                    let start = i * stride;
                    for c in 0..in_ch {
                        let dst = &mut dx_b[c * in_len + start..c * in_len + start + kernel_len];
                        let ks = &k_f[c * kernel_len..(c + 1) * kernel_len];
                        for (d, kv) in dst.iter_mut().zip(ks) {
                            *d += g * kv;
                        }
                    }
                }
            }
        });

    // d_kernels[f,c,j] = Σ_b Σ_i g[b,f,i] x[b,c,i·stride+j]
    let mut d_kernels = vec![0.0; kd.len()];
    d_kernels
        .par_chunks_mut(in_ch * kernel_len)
        .enumerate()
        .for_each(|(f, dk_f)| {
            for b in 0..batch {
                let x_b = &xd[b * in_ch * in_len..(b + 1) * in_ch * in_len];
                let g_f = &gd[(b * filters + f) * out_len..(b * filters + f + 1) * out_len];
                for (i, g) in g_f.iter().enumerate() {
                    if *g == 0.0 {
                        continue;
                    }
                    let start = i * stride;
                    for c in 0..in_ch {
                        let xs = &x_b[c * in_len + start..c * in_len + start + kernel_len];
                        let dst = &mut dk_f[c * kernel_len..(c + 1) * kernel_len];
                        for (d, xv) in dst.iter_mut().zip(xs) {
                            *d += g * xv;
                        }
                    }
                }
            }
        });

    Ok((
        Tensor::raw(vec![batch, in_ch, in_len], d_input),
        Tensor::raw(vec![filters, in_ch, kernel_len], d_kernels),
    ))
}

fn check_conv_shapes(
    op: &'static str,
    input: &Tensor,
    in_rank: usize,
    kernels: &Tensor,
    k_rank: usize,
    stride: usize,
) -> Result<()> {
    if input.rank() != in_rank || kernels.rank() != k_rank {
        return Err(shape_err(
            op,
            format!(
                "input rank {} (want {in_rank}), kernels rank {} (want {k_rank})",
                input.rank(),
                kernels.rank()
            ),
        ));
    }
    if input.is_empty() || input.dim(in_rank - 1) == 0 {
        return Err(Error::EmptyInput { op });
    }
    if stride == 0 {
        return Err(Error::InvalidConfig {
            detail: "stride must be >= 1".into(),
        });
    }
    let in_len = input.dim(in_rank - 1);
    let kernel_len = kernels.dim(k_rank - 1);
    if kernel_len == 0 || kernel_len > in_len {
        return Err(shape_err(
            op,
            format!("kernel length {kernel_len} does not fit input length {in_len}"),
        ));
    }
    Ok(())
}

// ── Max pooling ───────────────────────────────────────────────────

/// Non-overlapping max pooling over the last axis of `[batch, ch, len]`.
/// Trailing samples that do not fill a window are dropped. Returns the
/// pooled tensor and the flat input index of each selected maximum
/// (ties go to the earliest position).
pub fn maxpool1d(input: &Tensor, pool: usize) -> Result<(Tensor, Vec<usize>)> {
    if input.rank() != 3 {
        return Err(shape_err(
            "maxpool1d",
            format!("expected rank 3, got {:?}", input.shape()),
        ));
    }
    if pool == 0 || input.dim(2) < pool {
        return Err(Error::InvalidConfig {
            detail: format!("pool length {pool} invalid for input length {}", input.dim(2)),
        });
    }
    let (batch, ch, len) = (input.dim(0), input.dim(1), input.dim(2));
    let out_len = len / pool;
    let xd = input.data();
    let mut out = vec![0.0; batch * ch * out_len];
    let mut idx = vec![0usize; batch * ch * out_len];
    for bc in 0..batch * ch {
        let row = &xd[bc * len..(bc + 1) * len];
        for i in 0..out_len {
            let start = i * pool;
            let mut best = row[start];
            let mut best_j = start;
            for (j, v) in row[start..start + pool].iter().enumerate().skip(1) {
                if *v > best {
                    best = *v;
                    best_j = start + j;
                }
            }
            out[bc * out_len + i] = best;
            idx[bc * out_len + i] = bc * len + best_j;
        }
    }
    Ok((Tensor::raw(vec![batch, ch, out_len], out), idx))
}

/// Scatter `grad_out` back to the positions recorded by [`maxpool1d`].
pub fn maxpool1d_backward(
    input_shape: &[usize],
    indices: &[usize],
    grad_out: &Tensor,
) -> Tensor {
    let mut dx = vec![0.0; input_shape.iter().product()];
    for (g, &i) in grad_out.data().iter().zip(indices) {
        dx[i] += g;
    }
    Tensor::raw(input_shape.to_vec(), dx)
}

// ── Layer normalization ───────────────────────────────────────────

/// Per-row zero-mean unit-variance normalization of `[batch, features]`,
/// scaled by `gain` and shifted by `bias`.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    let features = check_layer_norm_shapes(x, gain, bias)?;
    let (batch, gd, bd) = (x.dim(0), gain.data(), bias.data());
    let xd = x.data();
    let mut out = vec![0.0; xd.len()];
    for b in 0..batch {
        let row = &xd[b * features..(b + 1) * features];
        let (mean, var) = row_mean_var(row);
        let inv = 1.0 / (var + eps).sqrt();
        let dst = &mut out[b * features..(b + 1) * features];
        for f in 0..features {
            dst[f] = (row[f] - mean) * inv * gd[f] + bd[f];
        }
    }
    Ok(Tensor::raw(vec![batch, features], out))
}

/// Gradients of [`layer_norm`] w.r.t. x, gain, and bias.
pub fn layer_norm_backward(
    x: &Tensor,
    gain: &Tensor,
    eps: f64,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let features = x.dim(1);
    let batch = x.dim(0);
    if grad_out.shape() != x.shape() {
        return Err(shape_err(
            "layer_norm_backward",
            format!("grad {:?} vs x {:?}", grad_out.shape(), x.shape()),
        ));
    }
    let (xd, gd, od) = (x.data(), gain.data(), grad_out.data());
    let nf = features as f64;
    let mut dx = vec![0.0; xd.len()];
    let mut dgain = vec![0.0; features];
    let mut dbias = vec![0.0; features];
    for b in 0..batch {
        let row = &xd[b * features..(b + 1) * features];
        let g_row = &od[b * features..(b + 1) * features];
        let (mean, var) = row_mean_var(row);
        let inv = 1.0 / (var + eps).sqrt();
        // dL/dx̂, then the two reduction terms of the layer-norm backward
        let mut sum_dxhat = 0.0;
        let mut sum_dxhat_xhat = 0.0;
        for f in 0..features {
            let xhat = (row[f] - mean) * inv;
            let dxhat = g_row[f] * gd[f];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xhat;
            dgain[f] += g_row[f] * xhat;
            dbias[f] += g_row[f];
        }
        let dst = &mut dx[b * features..(b + 1) * features];
        for f in 0..features {
            let xhat = (row[f] - mean) * inv;
            let dxhat = g_row[f] * gd[f];
            dst[f] = inv * (dxhat - sum_dxhat / nf - xhat * sum_dxhat_xhat / nf);
        }
    }
    Ok((
        Tensor::raw(vec![batch, features], dx),
        Tensor::raw(vec![features], dgain),
        Tensor::raw(vec![features], dbias),
    ))
}

fn check_layer_norm_shapes(x: &Tensor, gain: &Tensor, bias: &Tensor) -> Result<usize> {
    if x.rank() != 2 {
        return Err(shape_err(
            "layer_norm",
            format!("expected [batch, features], got {:?}", x.shape()),
        ));
    }
    let features = x.dim(1);
    if features == 0 {
        return Err(Error::EmptyInput { op: "layer_norm" });
    }
    if gain.shape() != [features] || bias.shape() != [features] {
        return Err(shape_err(
            "layer_norm",
            format!(
                "gain {:?} / bias {:?} do not match {features} features",
                gain.shape(),
                bias.shape()
            ),
        ));
    }
    Ok(features)
}

fn row_mean_var(row: &[f64]) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

// ── Leaky ReLU ────────────────────────────────────────────────────

/// Element-wise `max(x, slope·x)`.
pub fn leaky_relu(x: &Tensor, slope: f64) -> Tensor {
    let data = x
        .data()
        .iter()
        .map(|&v| if v > 0.0 { v } else { slope * v })
        .collect();
    Tensor::raw(x.shape().to_vec(), data)
}

/// Backward of [`leaky_relu`]: passes 1 for x > 0, `slope` otherwise
/// (the subgradient at exactly 0 is the negative-side slope).
pub fn leaky_relu_backward(x: &Tensor, slope: f64, grad_out: &Tensor) -> Tensor {
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if v > 0.0 { g } else { slope * g })
        .collect();
    Tensor::raw(x.shape().to_vec(), data)
}

// ── Fully connected ──────────────────────────────────────────────

/// Affine map `y = x·Wᵀ + b` with `x: [batch, in]`, `w: [out, in]`.
pub fn linear(x: &Tensor, w: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    if x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(1) {
        return Err(shape_err(
            "linear",
            format!("x {:?} vs w {:?}", x.shape(), w.shape()),
        ));
    }
    let (batch, in_dim, out_dim) = (x.dim(0), x.dim(1), w.dim(0));
    if let Some(b) = bias {
        if b.shape() != [out_dim] {
            return Err(shape_err(
                "linear",
                format!("bias {:?} vs out dim {out_dim}", b.shape()),
            ));
        }
    }
    let (xd, wd) = (x.data(), w.data());
    let mut out = vec![0.0; batch * out_dim];
    out.par_chunks_mut(out_dim).enumerate().for_each(|(b, row)| {
        let x_b = &xd[b * in_dim..(b + 1) * in_dim];
        for (o, dst) in row.iter_mut().enumerate() {
            let w_o = &wd[o * in_dim..(o + 1) * in_dim];
            let mut acc = 0.0;
            for (xv, wv) in x_b.iter().zip(w_o) {
                acc += xv * wv;
            }
            if let Some(bias) = bias {
                acc += bias.data()[o];
            }
            *dst = acc;
        }
    });
    Ok(Tensor::raw(vec![batch, out_dim], out))
}

/// Gradients of [`linear`] w.r.t. x, w, and bias.
pub fn linear_backward(
    x: &Tensor,
    w: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (batch, in_dim, out_dim) = (x.dim(0), x.dim(1), w.dim(0));
    if grad_out.shape() != [batch, out_dim] {
        return Err(shape_err(
            "linear_backward",
            format!("grad {:?}, expected [{batch}, {out_dim}]", grad_out.shape()),
        ));
    }
    let (xd, wd, gd) = (x.data(), w.data(), grad_out.data());
    let mut dx = vec![0.0; batch * in_dim];
    dx.par_chunks_mut(in_dim).enumerate().for_each(|(b, row)| {
        let g_b = &gd[b * out_dim..(b + 1) * out_dim];
        for (o, g) in g_b.iter().enumerate() {
            let w_o = &wd[o * in_dim..(o + 1) * in_dim];
            for (d, wv) in row.iter_mut().zip(w_o) {
                *d += g * wv;
            }
        }
    });
    let mut dw = vec![0.0; out_dim * in_dim];
    dw.par_chunks_mut(in_dim).enumerate().for_each(|(o, row)| {
        for b in 0..batch {
            let g = gd[b * out_dim + o];
            if g == 0.0 {
                continue;
            }
            let x_b = &xd[b * in_dim..(b + 1) * in_dim];
            for (d, xv) in row.iter_mut().zip(x_b) {
                *d += g * xv;
            }
        }
    });
    let mut db = vec![0.0; out_dim];
    for b in 0..batch {
        for o in 0..out_dim {
            db[o] += gd[b * out_dim + o];
        }
    }
    Ok((
        Tensor::raw(vec![batch, in_dim], dx),
        Tensor::raw(vec![out_dim, in_dim], dw),
        Tensor::raw(vec![out_dim], db),
    ))
}

// ── Vector geometry ──────────────────────────────────────────────

/// `v / max(‖v‖, eps)`. Output norm is in (0, 1], and equals 1 whenever
/// `‖v‖ ≥ eps`; the zero vector maps to zero.
pub fn l2_normalize(v: &Tensor, eps: f64) -> Tensor {
    let norm = v.norm();
    let denom = norm.max(eps);
    let data = v.data().iter().map(|x| x / denom).collect();
    Tensor::raw(v.shape().to_vec(), data)
}

/// Backward of [`l2_normalize`]. Below the eps floor the map is linear.
pub fn l2_normalize_backward(v: &Tensor, eps: f64, grad_out: &Tensor) -> Tensor {
    let norm = v.norm();
    if norm < eps {
        let data = grad_out.data().iter().map(|g| g / eps).collect();
        return Tensor::raw(v.shape().to_vec(), data);
    }
    let y: Vec<f64> = v.data().iter().map(|x| x / norm).collect();
    let g_dot_y: f64 = grad_out.data().iter().zip(&y).map(|(g, yi)| g * yi).sum();
    let data = grad_out
        .data()
        .iter()
        .zip(&y)
        .map(|(g, yi)| (g - g_dot_y * yi) / norm)
        .collect();
    Tensor::raw(v.shape().to_vec(), data)
}

/// Cosine of the angle between two vectors, clamped to [−1, 1] against
/// round-off. Zero-norm inputs are an error.
pub fn cosine_similarity(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() || a.rank() != 1 {
        return Err(shape_err(
            "cosine_similarity",
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm {
            op: "cosine_similarity",
        });
    }
    let dot: f64 = a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}
