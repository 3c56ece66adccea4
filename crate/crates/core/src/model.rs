//! The embedding trunk: sinc filterbank front end, pooled conv layers,
//! fully connected layers, ending at the pre-classification embedding.
//!
//! The classification layer itself lives in the loss heads; `embed`
//! returns the raw (not yet L2-normalized) representation the heads and
//! the evaluators consume. Every chunk is scaled to unit maximum absolute
//! amplitude before the trunk so recording gain cannot leak into the
//! embedding.
//!
//! The forward pass records a trace of the per-stage activations; the
//! backward pass walks it in reverse and produces gradients for every
//! weight group with names matching the checkpoint layout.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::ops;
use crate::sinc::{self, SincFilterParams};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct SincLayerConfig {
    pub count: usize,
    pub kernel_len: usize,
    pub f_min_hz: f64,
    pub f_max_hz: f64,
    pub window: bool,
    pub stride: usize,
    pub pool_len: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayerConfig {
    pub filters: usize,
    pub kernel_len: usize,
    pub pool_len: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub sample_rate: f64,
    /// Samples per input chunk (200 ms at the configured rate by default).
    pub chunk_len: usize,
    pub sinc: SincLayerConfig,
    pub conv_layers: Vec<ConvLayerConfig>,
    /// Hidden fully connected widths; each is followed by layer norm and
    /// the nonlinearity. A final bare linear layer maps to the embedding.
    pub fc_layers: Vec<usize>,
    pub embedding_dim: usize,
    pub leaky_slope: f64,
    pub layer_norm_eps: f64,
}

impl ModelConfig {
    /// The inherited full-scale defaults (80 × 251 filterbank, two conv
    /// layers, three 2048-wide linear layers, 200 ms chunks).
    pub fn default_for(sample_rate: f64) -> Self {
        ModelConfig {
            sample_rate,
            chunk_len: (0.2 * sample_rate).round() as usize,
            sinc: SincLayerConfig {
                count: 80,
                kernel_len: 251,
                f_min_hz: 30.0,
                f_max_hz: sample_rate / 2.0,
                window: true,
                stride: 1,
                pool_len: 3,
            },
            conv_layers: vec![
                ConvLayerConfig { filters: 60, kernel_len: 5, pool_len: 3 },
                ConvLayerConfig { filters: 60, kernel_len: 5, pool_len: 3 },
            ],
            fc_layers: vec![2048, 2048],
            embedding_dim: 2048,
            leaky_slope: 0.2,
            layer_norm_eps: 1e-5,
        }
    }

    /// Shape of every stage output as `(channels, length)`, starting with
    /// the sinc stage. Errors if any stage collapses to zero length.
    pub fn stage_dims(&self) -> Result<Vec<(usize, usize)>> {
        let mut dims = Vec::new();
        if self.chunk_len < self.sinc.kernel_len {
            return Err(Error::InvalidConfig {
                detail: format!(
                    "chunk_len {} shorter than sinc kernel_len {}",
                    self.chunk_len, self.sinc.kernel_len
                ),
            });
        }
        let mut len = ops::conv1d_out_len(self.chunk_len, self.sinc.kernel_len, self.sinc.stride);
        if len < self.sinc.pool_len {
            return Err(Error::InvalidConfig {
                detail: "sinc stage output shorter than its pool length".into(),
            });
        }
        len /= self.sinc.pool_len;
        let mut ch = self.sinc.count;
        dims.push((ch, len));
        for (i, conv) in self.conv_layers.iter().enumerate() {
            if len < conv.kernel_len {
                return Err(Error::InvalidConfig {
                    detail: format!("conv layer {i}: kernel {} exceeds input length {len}", conv.kernel_len),
                });
            }
            let mut out = ops::conv1d_out_len(len, conv.kernel_len, 1);
            if out < conv.pool_len {
                return Err(Error::InvalidConfig {
                    detail: format!("conv layer {i}: pool {} exceeds output length {out}", conv.pool_len),
                });
            }
            out /= conv.pool_len;
            ch = conv.filters;
            len = out;
            dims.push((ch, len));
        }
        Ok(dims)
    }

    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim < 2 {
            return Err(Error::InvalidConfig {
                detail: format!("embedding_dim must be >= 2, got {}", self.embedding_dim),
            });
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::InvalidConfig {
                detail: format!("leaky_slope must be in (0, 1), got {}", self.leaky_slope),
            });
        }
        if self.sinc.stride == 0 || self.sinc.pool_len == 0 {
            return Err(Error::InvalidConfig {
                detail: "sinc stride and pool_len must be >= 1".into(),
            });
        }
        if self.conv_layers.iter().any(|c| c.pool_len == 0 || c.filters == 0) {
            return Err(Error::InvalidConfig {
                detail: "conv layers need filters >= 1 and pool_len >= 1".into(),
            });
        }
        if self.fc_layers.iter().any(|&w| w == 0) {
            return Err(Error::InvalidConfig {
                detail: "fc widths must be >= 1".into(),
            });
        }
        self.stage_dims()?;
        Ok(())
    }

    /// Flattened width entering the first fully connected layer.
    pub fn flat_dim(&self) -> Result<usize> {
        let dims = self.stage_dims()?;
        let (ch, len) = *dims.last().expect("stage_dims is non-empty");
        Ok(ch * len)
    }
}

#[derive(Clone, Debug)]
pub struct LinearParams {
    pub w: Tensor,
    pub b: Tensor,
}

#[derive(Clone, Debug)]
pub struct NormParams {
    pub gain: Tensor,
    pub bias: Tensor,
}

/// All trainable state of the model, including the loss-head weight
/// matrix `W` (one row per training class).
#[derive(Clone, Debug)]
pub struct ModelWeights {
    pub config: ModelConfig,
    pub class_count: usize,
    pub sinc: SincFilterParams,
    /// One kernel tensor `[filters, in_ch, kernel_len]` per conv layer.
    pub conv: Vec<Tensor>,
    /// One norm per conv stage (sinc included) plus one per hidden fc.
    pub norms: Vec<NormParams>,
    /// Hidden fc layers followed by the final embedding layer.
    pub fc: Vec<LinearParams>,
    pub head_w: Tensor,
}

/// Gradients mirroring [`ModelWeights`], produced by one backward pass.
#[derive(Clone, Debug)]
pub struct ModelGrads {
    pub sinc_f_low: Vec<f64>,
    pub sinc_band: Vec<f64>,
    pub conv: Vec<Tensor>,
    pub norms: Vec<(Tensor, Tensor)>,
    pub fc: Vec<(Tensor, Tensor)>,
    pub head_w: Tensor,
}

/// Deterministic initialization: mel-spaced sinc cutoffs, fan-in-scaled
/// uniform conv/fc weights, unit norm gains, and i.i.d. normal head rows
/// L2-normalized. Identical `(config, class_count, seed)` produce
/// bit-identical weights.
pub fn init_model(config: &ModelConfig, class_count: usize, seed: u64) -> Result<ModelWeights> {
    config.validate()?;
    if class_count == 0 {
        return Err(Error::InvalidConfig {
            detail: "class_count must be >= 1".into(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let sinc = sinc::mel_init(
        config.sinc.count,
        config.sample_rate,
        config.sinc.f_min_hz,
        config.sinc.f_max_hz,
        config.sinc.kernel_len,
        config.sinc.window,
    )?;

    let mut uniform_fan_in = |shape: Vec<usize>, fan_in: usize| -> Tensor {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        Tensor::raw(shape, data)
    };

    let dims = config.stage_dims()?;
    let mut conv = Vec::new();
    let mut in_ch = config.sinc.count;
    for layer in &config.conv_layers {
        conv.push(uniform_fan_in(
            vec![layer.filters, in_ch, layer.kernel_len],
            in_ch * layer.kernel_len,
        ));
        in_ch = layer.filters;
    }

    let mut fc = Vec::new();
    let mut width = config.flat_dim()?;
    for &out in config.fc_layers.iter().chain(std::iter::once(&config.embedding_dim)) {
        fc.push(LinearParams {
            w: uniform_fan_in(vec![out, width], width),
            b: Tensor::zeros(vec![out]),
        });
        width = out;
    }

    let mut norms = Vec::new();
    for (ch, len) in &dims {
        norms.push(NormParams {
            gain: Tensor::filled(vec![ch * len], 1.0),
            bias: Tensor::zeros(vec![ch * len]),
        });
    }
    for &w in &config.fc_layers {
        norms.push(NormParams {
            gain: Tensor::filled(vec![w], 1.0),
            bias: Tensor::zeros(vec![w]),
        });
    }

    let dim = config.embedding_dim;
    let mut head = vec![0.0; class_count * dim];
    for row in head.chunks_mut(dim) {
        let mut norm_sq = 0.0;
        for v in row.iter_mut() {
            *v = rng.sample::<f64, _>(StandardNormal);
            norm_sq += *v * *v;
        }
        let norm = norm_sq.sqrt();
        for v in row.iter_mut() {
            *v /= norm;
        }
    }

    Ok(ModelWeights {
        config: config.clone(),
        class_count,
        sinc,
        conv,
        norms,
        fc,
        head_w: Tensor::raw(vec![class_count, dim], head),
    })
}

/// Scale each chunk to unit maximum absolute amplitude. All-zero chunks
/// pass through unchanged. Idempotent.
pub fn amplitude_normalize(chunks: &Tensor) -> Tensor {
    let (batch, len) = (chunks.dim(0), chunks.dim(1));
    let mut data = chunks.data().to_vec();
    for b in 0..batch {
        let row = &mut data[b * len..(b + 1) * len];
        let peak = row.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if peak > 0.0 {
            for v in row.iter_mut() {
                *v /= peak;
            }
        }
    }
    Tensor::raw(vec![batch, len], data)
}

struct ConvStageTrace {
    conv_input: Tensor,
    conv_out: Tensor,
    pool_idx: Vec<usize>,
    pool_out_flat: Tensor,
    ln_out: Tensor,
    out_shape: Vec<usize>,
}

struct FcStageTrace {
    input: Tensor,
    lin_out: Tensor,
    ln_out: Tensor,
}

/// Saved activations from one forward pass, consumed by [`embed_backward`].
pub struct ForwardTrace {
    conv_stages: Vec<ConvStageTrace>,
    fc_stages: Vec<FcStageTrace>,
    final_input: Tensor,
    /// The trunk output, `[batch, embedding_dim]`.
    pub embedding: Tensor,
}

impl ForwardTrace {
    /// All intermediate activations, for finiteness checks.
    pub fn activations(&self) -> Vec<&Tensor> {
        let mut v = Vec::new();
        for s in &self.conv_stages {
            v.extend([&s.conv_out, &s.pool_out_flat, &s.ln_out]);
        }
        for s in &self.fc_stages {
            v.extend([&s.lin_out, &s.ln_out]);
        }
        v.push(&self.embedding);
        v
    }

    /// Distance of this forward pass from the nearest piecewise boundary:
    /// the smallest max-pool window margin (winner minus runner-up) and the
    /// smallest pre-activation magnitude entering a leaky ReLU. Gradient
    /// checks resample inputs whose margin is too small for the
    /// finite-difference step.
    pub fn kink_margin(&self, cfg: &ModelConfig) -> f64 {
        let mut margin = f64::INFINITY;
        let pools: Vec<usize> = std::iter::once(cfg.sinc.pool_len)
            .chain(cfg.conv_layers.iter().map(|c| c.pool_len))
            .collect();
        for (stage, pool) in self.conv_stages.iter().zip(pools) {
            if pool > 1 {
                let len = stage.conv_out.dim(2);
                let rows = stage.conv_out.dim(0) * stage.conv_out.dim(1);
                for r in 0..rows {
                    let row = &stage.conv_out.data()[r * len..(r + 1) * len];
                    for w in row.chunks_exact(pool) {
                        let mut best = f64::NEG_INFINITY;
                        let mut second = f64::NEG_INFINITY;
                        for &v in w {
                            if v > best {
                                second = best;
                                best = v;
                            } else if v > second {
                                second = v;
                            }
                        }
                        margin = margin.min(best - second);
                    }
                }
            }
            for &v in stage.ln_out.data() {
                margin = margin.min(v.abs());
            }
        }
        for stage in &self.fc_stages {
            for &v in stage.ln_out.data() {
                margin = margin.min(v.abs());
            }
        }
        margin
    }
}

/// Forward pass with trace. `chunks: [batch, chunk_len]` →
/// embedding `[batch, embedding_dim]`.
pub fn embed_forward(weights: &ModelWeights, chunks: &Tensor) -> Result<ForwardTrace> {
    let cfg = &weights.config;
    if chunks.rank() != 2 || chunks.dim(1) != cfg.chunk_len {
        return Err(Error::ShapeMismatch {
            op: "embed",
            detail: format!(
                "chunks {:?}, expected [batch, {}]",
                chunks.shape(),
                cfg.chunk_len
            ),
        });
    }
    let batch = chunks.dim(0);
    if batch == 0 {
        return Err(Error::EmptyInput { op: "embed" });
    }
    let slope = cfg.leaky_slope;
    let eps = cfg.layer_norm_eps;

    let mut conv_stages = Vec::new();
    let normalized = amplitude_normalize(chunks);
    let mut x = normalized.reshape(vec![batch, 1, cfg.chunk_len])?;

    let n_conv_stages = cfg.conv_layers.len() + 1;
    for stage in 0..n_conv_stages {
        let conv_input = x;
        let (conv_out, pool_len) = if stage == 0 {
            let wave = conv_input.clone().reshape(vec![batch, cfg.chunk_len])?;
            (
                sinc::sinc_forward(&weights.sinc, &wave, cfg.sinc.stride)?,
                cfg.sinc.pool_len,
            )
        } else {
            let layer = &cfg.conv_layers[stage - 1];
            (
                ops::conv1d_mc(&conv_input, &weights.conv[stage - 1], 1)?,
                layer.pool_len,
            )
        };
        let (pooled, pool_idx) = ops::maxpool1d(&conv_out, pool_len)?;
        let (ch, len) = (pooled.dim(1), pooled.dim(2));
        let pool_out_flat = pooled.reshape(vec![batch, ch * len])?;
        let norm = &weights.norms[stage];
        let ln_out = ops::layer_norm(&pool_out_flat, &norm.gain, &norm.bias, eps)?;
        let act = ops::leaky_relu(&ln_out, slope);
        x = act.reshape(vec![batch, ch, len])?;
        conv_stages.push(ConvStageTrace {
            conv_input,
            conv_out,
            pool_idx,
            pool_out_flat,
            ln_out,
            out_shape: vec![batch, ch, len],
        });
    }

    let flat = x.reshape(vec![batch, cfg.flat_dim()?])?;
    let mut fc_stages = Vec::new();
    let mut h = flat;
    for (j, _width) in cfg.fc_layers.iter().enumerate() {
        let input = h;
        let lp = &weights.fc[j];
        let lin_out = ops::linear(&input, &lp.w, Some(&lp.b))?;
        let norm = &weights.norms[n_conv_stages + j];
        let ln_out = ops::layer_norm(&lin_out, &norm.gain, &norm.bias, eps)?;
        h = ops::leaky_relu(&ln_out, slope);
        fc_stages.push(FcStageTrace {
            input,
            lin_out,
            ln_out,
        });
    }

    let last = weights.fc.last().expect("fc always has the embedding layer");
    let embedding = ops::linear(&h, &last.w, Some(&last.b))?;
    Ok(ForwardTrace {
        conv_stages,
        fc_stages,
        final_input: h,
        embedding,
    })
}

/// Inference-only embedding.
pub fn embed(weights: &ModelWeights, chunks: &Tensor) -> Result<Tensor> {
    Ok(embed_forward(weights, chunks)?.embedding)
}

/// Backward pass through the trace: gradients for every weight group.
/// The head-W slot is zero-filled here; the loss head owns it.
pub fn embed_backward(
    weights: &ModelWeights,
    trace: &ForwardTrace,
    grad_embedding: &Tensor,
) -> Result<ModelGrads> {
    let cfg = &weights.config;
    let slope = cfg.leaky_slope;
    let eps = cfg.layer_norm_eps;
    let n_conv_stages = cfg.conv_layers.len() + 1;

    let mut fc_grads: Vec<(Tensor, Tensor)> = vec![];
    let mut norm_grads: Vec<(Tensor, Tensor)> =
        vec![(Tensor::zeros(vec![0]), Tensor::zeros(vec![0])); weights.norms.len()];

    // Final embedding layer.
    let last = weights.fc.last().unwrap();
    let (mut grad_h, d_w, d_b) = ops::linear_backward(&trace.final_input, &last.w, grad_embedding)?;
    fc_grads.push((d_w, d_b));

    // Hidden fc stages in reverse.
    for (j, stage) in trace.fc_stages.iter().enumerate().rev() {
        let d_act = ops::leaky_relu_backward(&stage.ln_out, slope, &grad_h);
        let norm = &weights.norms[n_conv_stages + j];
        let (d_lin, d_gain, d_bias) = ops::layer_norm_backward(&stage.lin_out, &norm.gain, eps, &d_act)?;
        norm_grads[n_conv_stages + j] = (d_gain, d_bias);
        let lp = &weights.fc[j];
        let (d_input, d_w, d_b) = ops::linear_backward(&stage.input, &lp.w, &d_lin)?;
        fc_grads.push((d_w, d_b));
        grad_h = d_input;
    }
    fc_grads.reverse();

    // Conv stages in reverse.
    let mut conv_grads: Vec<Tensor> = vec![Tensor::zeros(vec![0]); cfg.conv_layers.len()];
    let mut sinc_f_low = vec![0.0; weights.sinc.count()];
    let mut sinc_band = vec![0.0; weights.sinc.count()];
    let mut grad_stage_out = grad_h; // flat [batch, ch·len] of the last conv stage
    for (stage, tr) in trace.conv_stages.iter().enumerate().rev() {
        let batch = tr.out_shape[0];
        let flat = tr.out_shape[1] * tr.out_shape[2];
        let d_act_flat = grad_stage_out.reshape(vec![batch, flat])?;
        let d_act = ops::leaky_relu_backward(&tr.ln_out, slope, &d_act_flat);
        let norm = &weights.norms[stage];
        let (d_ln_in, d_gain, d_bias) = ops::layer_norm_backward(&tr.pool_out_flat, &norm.gain, eps, &d_act)?;
        norm_grads[stage] = (d_gain, d_bias);
        let d_pool_out = d_ln_in.reshape(tr.out_shape.clone())?;
        let d_conv_out = ops::maxpool1d_backward(tr.conv_out.shape(), &tr.pool_idx, &d_pool_out);
        if stage == 0 {
            let wave = tr.conv_input.clone().reshape(vec![batch, cfg.chunk_len])?;
            let (_d_wave, d_low, d_band) =
                sinc::sinc_backward(&weights.sinc, &wave, cfg.sinc.stride, &d_conv_out)?;
            sinc_f_low = d_low;
            sinc_band = d_band;
            grad_stage_out = Tensor::zeros(vec![0]); // input gradient not needed
        } else {
            let (d_input, d_k) =
                ops::conv1d_mc_backward(&tr.conv_input, &weights.conv[stage - 1], 1, &d_conv_out)?;
            conv_grads[stage - 1] = d_k;
            grad_stage_out = d_input.reshape(vec![
                batch,
                tr.conv_input.dim(1) * tr.conv_input.dim(2),
            ])?;
        }
    }

    Ok(ModelGrads {
        sinc_f_low,
        sinc_band,
        conv: conv_grads,
        norms: norm_grads,
        fc: fc_grads,
        head_w: Tensor::zeros(weights.head_w.shape().to_vec()),
    })
}

impl ModelWeights {
    /// Parameter groups in the fixed checkpoint/optimizer order.
    pub fn group_names(&self) -> Vec<String> {
        let mut names = vec!["sinc.f_low".to_string(), "sinc.band".to_string()];
        for i in 0..self.conv.len() {
            names.push(format!("conv{i}.kernels"));
        }
        for i in 0..self.norms.len() {
            names.push(format!("norm{i}.gain"));
            names.push(format!("norm{i}.bias"));
        }
        for i in 0..self.fc.len() {
            names.push(format!("fc{i}.w"));
            names.push(format!("fc{i}.b"));
        }
        names.push("head.w".to_string());
        names
    }

    /// Read-only views of every parameter group, in [`Self::group_names`]
    /// order.
    pub fn param_groups(&self) -> Vec<&[f64]> {
        let mut groups: Vec<&[f64]> = vec![&self.sinc.f_low, &self.sinc.band];
        for k in &self.conv {
            groups.push(k.data());
        }
        for n in &self.norms {
            groups.push(n.gain.data());
            groups.push(n.bias.data());
        }
        for l in &self.fc {
            groups.push(l.w.data());
            groups.push(l.b.data());
        }
        groups.push(self.head_w.data());
        groups
    }

    /// Mutable views of every parameter group, same order.
    pub fn param_groups_mut(&mut self) -> Vec<&mut [f64]> {
        let mut groups: Vec<&mut [f64]> = vec![&mut self.sinc.f_low, &mut self.sinc.band];
        for k in &mut self.conv {
            groups.push(k.data_mut());
        }
        for n in &mut self.norms {
            groups.push(n.gain.data_mut());
            groups.push(n.bias.data_mut());
        }
        for l in &mut self.fc {
            groups.push(l.w.data_mut());
            groups.push(l.b.data_mut());
        }
        groups.push(self.head_w.data_mut());
        groups
    }
}

impl ModelGrads {
    /// Gradient views aligned with [`ModelWeights::param_groups`].
    pub fn groups(&self) -> Vec<&[f64]> {
        let mut groups: Vec<&[f64]> = vec![&self.sinc_f_low, &self.sinc_band];
        for k in &self.conv {
            groups.push(k.data());
        }
        for (g, b) in &self.norms {
            groups.push(g.data());
            groups.push(b.data());
        }
        for (w, b) in &self.fc {
            groups.push(w.data());
            groups.push(b.data());
        }
        groups.push(self.head_w.data());
        groups
    }

    /// Euclidean norm over all gradient groups.
    pub fn global_norm(&self) -> f64 {
        self.groups()
            .iter()
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

/// A small configuration used by gradient checks and fast tests:
/// 2 sinc filters with 17-tap kernels on 64-sample chunks.
pub fn miniature_config() -> ModelConfig {
    ModelConfig {
        sample_rate: 16000.0,
        chunk_len: 64,
        sinc: SincLayerConfig {
            count: 2,
            kernel_len: 17,
            f_min_hz: 200.0,
            f_max_hz: 7000.0,
            window: true,
            stride: 1,
            pool_len: 3,
        },
        conv_layers: vec![ConvLayerConfig {
            filters: 3,
            kernel_len: 5,
            pool_len: 2,
        }],
        fc_layers: vec![8],
        embedding_dim: 4,
        leaky_slope: 0.2,
        layer_norm_eps: 1e-5,
    }
}
