//! Classification heads: plain softmax, normalized softmax, additive
//! angular margin, additive cosine margin, and the curricular head that
//! modulates non-target logits by sample difficulty.
//!
//! All cosine heads operate on `CosineLogits`, the cosines between
//! L2-normalized features and L2-normalized weight rows, and return the
//! loss together with analytic gradients. Cross-entropies are computed in
//! max-subtracted log-sum-exp form throughout, so scales up to s = 64 and
//! thousands of classes stay comfortably inside f64 range.

use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::Tensor;

/// Which classification head to train with.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    Softmax,
    NormSoftmax,
    ArcFace,
    AmSoftmax,
    Curricular,
}

impl LossKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            LossKind::Softmax => "softmax",
            LossKind::NormSoftmax => "norm_softmax",
            LossKind::ArcFace => "arcface",
            LossKind::AmSoftmax => "am_softmax",
            LossKind::Curricular => "curricular",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "softmax" => Ok(LossKind::Softmax),
            "norm_softmax" => Ok(LossKind::NormSoftmax),
            "arcface" => Ok(LossKind::ArcFace),
            "am_softmax" => Ok(LossKind::AmSoftmax),
            "curricular" => Ok(LossKind::Curricular),
            other => Err(Error::InvalidConfig {
                detail: format!(
                    "unknown loss kind {other:?} (expected softmax, norm_softmax, arcface, am_softmax, or curricular)"
                ),
            }),
        }
    }
}

/// Which statistic of the positive cosines feeds the t update.
/// The displayed update uses a sum; the prose calls it an average. `Mean`
/// is the default since a sum grows with batch size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RStatistic {
    Mean,
    Sum,
}

/// Convention for the t update. `Fast` applies the momentum weight to the
/// fresh batch statistic, `t ← α·r + (1−α)·t`, so t tracks r within a few
/// batches at α = 0.99. `Ema` is the conventional exponential moving
/// average, `t ← (1−α)·r + α·t`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TUpdate {
    Fast,
    Ema,
}

#[derive(Clone, Debug)]
pub struct LossConfig {
    pub kind: LossKind,
    /// Margin: angular (radians) for arcface/curricular, additive-cosine
    /// for am_softmax. Ignored by softmax and norm_softmax.
    pub m: f64,
    /// Logit scale.
    pub s: f64,
    /// Momentum parameter of the t update.
    pub alpha: f64,
    pub r_statistic: RStatistic,
    pub t_update: TUpdate,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            kind: LossKind::Curricular,
            m: 0.5,
            s: 64.0,
            alpha: 0.99,
            r_statistic: RStatistic::Mean,
            t_update: TUpdate::Fast,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.s > 0.0) {
            return Err(Error::InvalidConfig {
                detail: format!("scale s must be > 0, got {}", self.s),
            });
        }
        match self.kind {
            LossKind::ArcFace | LossKind::Curricular => {
                if !(0.0..std::f64::consts::FRAC_PI_2).contains(&self.m) {
                    return Err(Error::InvalidConfig {
                        detail: format!("angular margin m must be in [0, π/2), got {}", self.m),
                    });
                }
            }
            LossKind::AmSoftmax => {
                if !(0.0..1.0).contains(&self.m) {
                    return Err(Error::InvalidConfig {
                        detail: format!("cosine margin m must be in [0, 1), got {}", self.m),
                    });
                }
            }
            _ => {}
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig {
                detail: format!("alpha must be in (0, 1), got {}", self.alpha),
            });
        }
        Ok(())
    }
}

/// The evolving curriculum parameter. `t` is zero before the first update
/// and is revised once per batch, after that batch's forward pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurriculumState {
    pub t: f64,
    pub batch_index: u64,
}

impl Default for CurriculumState {
    fn default() -> Self {
        CurriculumState {
            t: 0.0,
            batch_index: 0,
        }
    }
}

impl CurriculumState {
    /// Apply one t update with batch statistic `r`.
    pub fn updated(&self, r: f64, cfg: &LossConfig) -> CurriculumState {
        let t = match cfg.t_update {
            TUpdate::Fast => cfg.alpha * r + (1.0 - cfg.alpha) * self.t,
            TUpdate::Ema => (1.0 - cfg.alpha) * r + cfg.alpha * self.t,
        };
        CurriculumState {
            t,
            batch_index: self.batch_index + 1,
        }
    }
}

/// Cosines between normalized features and normalized weight rows, with
/// the per-sample target class indices.
#[derive(Clone, Debug)]
pub struct CosineLogits {
    /// `[batch, classes]`, every entry in [−1, 1] up to round-off.
    pub cos_theta: Tensor,
    pub labels: Vec<usize>,
}

/// Cached normalization state needed to push cosine gradients back to the
/// raw features and weight rows.
#[derive(Clone, Debug)]
pub struct CosineTrace {
    f_hat: Tensor,
    w_hat: Tensor,
    f_norms: Vec<f64>,
    w_norms: Vec<f64>,
}

/// `cos_theta[i, c] = ⟨f̂_i, ŵ_c⟩` with both sides L2-normalized.
/// Zero-norm features or weight rows are an error.
pub fn cosine_logits(
    features: &Tensor,
    w: &Tensor,
    labels: &[usize],
) -> Result<(CosineLogits, CosineTrace)> {
    if features.rank() != 2 || w.rank() != 2 || features.dim(1) != w.dim(1) {
        return Err(Error::ShapeMismatch {
            op: "cosine_logits",
            detail: format!("features {:?} vs W {:?}", features.shape(), w.shape()),
        });
    }
    let (batch, dim, classes) = (features.dim(0), features.dim(1), w.dim(0));
    if labels.len() != batch {
        return Err(Error::ShapeMismatch {
            op: "cosine_logits",
            detail: format!("{} labels for batch {batch}", labels.len()),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::InvalidConfig {
            detail: format!("label {bad} out of range for {classes} classes"),
        });
    }

    let normalize_rows = |t: &Tensor, what: &str| -> Result<(Tensor, Vec<f64>)> {
        let rows = t.dim(0);
        let mut out = vec![0.0; t.len()];
        let mut norms = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &t.data()[r * dim..(r + 1) * dim];
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::ZeroNorm {
                    op: if what == "features" {
                        "cosine_logits(features)"
                    } else {
                        "cosine_logits(weights)"
                    },
                });
            }
            for (o, v) in out[r * dim..(r + 1) * dim].iter_mut().zip(row) {
                *o = v / norm;
            }
            norms.push(norm);
        }
        Ok((Tensor::raw(vec![rows, dim], out), norms))
    };

    let (f_hat, f_norms) = normalize_rows(features, "features")?;
    let (w_hat, w_norms) = normalize_rows(w, "weights")?;

    let mut cos = vec![0.0; batch * classes];
    for i in 0..batch {
        let f_row = &f_hat.data()[i * dim..(i + 1) * dim];
        for c in 0..classes {
            let w_row = &w_hat.data()[c * dim..(c + 1) * dim];
            let dot: f64 = f_row.iter().zip(w_row).map(|(a, b)| a * b).sum();
            cos[i * classes + c] = dot;
        }
    }

    Ok((
        CosineLogits {
            cos_theta: Tensor::raw(vec![batch, classes], cos),
            labels: labels.to_vec(),
        },
        CosineTrace {
            f_hat,
            w_hat,
            f_norms,
            w_norms,
        },
    ))
}

/// Push `grad_cos` (shape `[batch, classes]`) through both normalizations:
/// returns gradients on the raw features and weight matrix.
pub fn cosine_logits_backward(trace: &CosineTrace, grad_cos: &Tensor) -> (Tensor, Tensor) {
    let batch = trace.f_hat.dim(0);
    let dim = trace.f_hat.dim(1);
    let classes = trace.w_hat.dim(0);
    let (fh, wh, g) = (trace.f_hat.data(), trace.w_hat.data(), grad_cos.data());

    // d f_i = (Σ_c g_ic ŵ_c − (Σ_c g_ic cos_ic) f̂_i) / ‖f_i‖
    let mut d_f = vec![0.0; batch * dim];
    for i in 0..batch {
        let f_row = &fh[i * dim..(i + 1) * dim];
        let dst = &mut d_f[i * dim..(i + 1) * dim];
        let mut g_dot_cos = 0.0;
        for c in 0..classes {
            let gc = g[i * classes + c];
            if gc == 0.0 {
                continue;
            }
            let w_row = &wh[c * dim..(c + 1) * dim];
            let mut cos_ic = 0.0;
            for (d, (wv, fv)) in dst.iter_mut().zip(w_row.iter().zip(f_row)) {
                *d += gc * wv;
                cos_ic += wv * fv;
            }
            g_dot_cos += gc * cos_ic;
        }
        for (d, fv) in dst.iter_mut().zip(f_row) {
            *d = (*d - g_dot_cos * fv) / trace.f_norms[i];
        }
    }

    // d w_c = (Σ_i g_ic f̂_i − (Σ_i g_ic cos_ic) ŵ_c) / ‖w_c‖
    let mut d_w = vec![0.0; classes * dim];
    for c in 0..classes {
        let w_row = &wh[c * dim..(c + 1) * dim];
        let dst = &mut d_w[c * dim..(c + 1) * dim];
        let mut g_dot_cos = 0.0;
        for i in 0..batch {
            let gc = g[i * classes + c];
            if gc == 0.0 {
                continue;
            }
            let f_row = &fh[i * dim..(i + 1) * dim];
            let mut cos_ic = 0.0;
            for (d, (fv, wv)) in dst.iter_mut().zip(f_row.iter().zip(w_row)) {
                *d += gc * fv;
                cos_ic += fv * wv;
            }
            g_dot_cos += gc * cos_ic;
        }
        for (d, wv) in dst.iter_mut().zip(w_row) {
            *d = (*d - g_dot_cos * wv) / trace.w_norms[c];
        }
    }

    (
        Tensor::raw(vec![batch, dim], d_f),
        Tensor::raw(vec![classes, dim], d_w),
    )
}

// ── Shared cross-entropy machinery ────────────────────────────────

/// Row-wise softmax in max-subtracted form.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let (batch, classes) = (logits.dim(0), logits.dim(1));
    let mut out = vec![0.0; batch * classes];
    for b in 0..batch {
        let row = &logits.data()[b * classes..(b + 1) * classes];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let dst = &mut out[b * classes..(b + 1) * classes];
        let mut sum = 0.0;
        for (d, &z) in dst.iter_mut().zip(row) {
            *d = (z - max).exp();
            sum += *d;
        }
        for d in dst.iter_mut() {
            *d /= sum;
        }
    }
    Tensor::raw(vec![batch, classes], out)
}

/// Mean negative log-softmax of the target logits, with the gradient
/// `(softmax − onehot) / batch` w.r.t. the logits.
fn cross_entropy(logits: &Tensor, labels: &[usize]) -> (f64, Tensor) {
    let (batch, classes) = (logits.dim(0), logits.dim(1));
    let probs = softmax_rows(logits);
    let mut loss = 0.0;
    for b in 0..batch {
        let row = &logits.data()[b * classes..(b + 1) * classes];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
        loss += lse - row[labels[b]];
    }
    loss /= batch as f64;
    let mut grad = probs.into_data();
    let inv_b = 1.0 / batch as f64;
    for b in 0..batch {
        grad[b * classes + labels[b]] -= 1.0;
        for g in &mut grad[b * classes..(b + 1) * classes] {
            *g *= inv_b;
        }
    }
    (loss, Tensor::raw(vec![batch, classes], grad))
}

fn check_cl(cl: &CosineLogits) -> Result<()> {
    let (batch, classes) = (cl.cos_theta.dim(0), cl.cos_theta.dim(1));
    if batch == 0 || classes == 0 {
        return Err(Error::EmptyInput { op: "loss" });
    }
    if cl.labels.len() != batch {
        return Err(Error::ShapeMismatch {
            op: "loss",
            detail: format!("{} labels for batch {batch}", cl.labels.len()),
        });
    }
    Ok(())
}

/// Target-logit transform of the angular-margin heads:
/// `φ(x) = cos(acos(x̄) + m) = x̄·cos m − √(1−x̄²)·sin m` with x clamped to
/// [−1, 1] before the implicit acos. Returns (value, dφ/dx).
fn angular_margin(x: f64, m: f64) -> (f64, f64) {
    let xc = x.clamp(-1.0, 1.0);
    let sin_theta_sq = (1.0 - xc * xc).max(1e-24);
    let sin_theta = sin_theta_sq.sqrt();
    let value = xc * m.cos() - sin_theta * m.sin();
    let deriv = m.cos() + m.sin() * xc / sin_theta;
    (value, deriv)
}

// ── Heads ─────────────────────────────────────────────────────────

/// Plain softmax cross-entropy on raw (affine) logits.
pub fn softmax_loss(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    if logits.rank() != 2 || logits.dim(0) != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "softmax_loss",
            detail: format!("logits {:?} vs {} labels", logits.shape(), labels.len()),
        });
    }
    if logits.is_empty() {
        return Err(Error::EmptyInput { op: "softmax_loss" });
    }
    Ok(cross_entropy(logits, labels))
}

/// Cross-entropy over rescaled cosines `s·cos θ`. Gradient is w.r.t. the
/// cosines.
pub fn norm_softmax_loss(cl: &CosineLogits, s: f64) -> Result<(f64, Tensor)> {
    check_cl(cl)?;
    let scaled = Tensor::raw(
        cl.cos_theta.shape().to_vec(),
        cl.cos_theta.data().iter().map(|&c| s * c).collect(),
    );
    let (loss, grad_logits) = cross_entropy(&scaled, &cl.labels);
    let grad_cos = Tensor::raw(
        grad_logits.shape().to_vec(),
        grad_logits.data().iter().map(|&g| s * g).collect(),
    );
    Ok((loss, grad_cos))
}

/// Additive angular margin: the target logit becomes `s·cos(θ_k + m)`,
/// non-targets stay `s·cos θ_c`.
pub fn arcface_loss(cl: &CosineLogits, m: f64, s: f64) -> Result<(f64, Tensor)> {
    check_cl(cl)?;
    let (batch, classes) = (cl.cos_theta.dim(0), cl.cos_theta.dim(1));
    let mut logits = cl.cos_theta.data().to_vec();
    let mut target_deriv = vec![0.0; batch];
    for b in 0..batch {
        let k = cl.labels[b];
        let (phi, dphi) = angular_margin(logits[b * classes + k], m);
        logits[b * classes + k] = phi;
        target_deriv[b] = dphi;
    }
    for z in &mut logits {
        *z *= s;
    }
    let (loss, grad_logits) = cross_entropy(&Tensor::raw(vec![batch, classes], logits), &cl.labels);
    let mut grad_cos = grad_logits.into_data();
    for b in 0..batch {
        for c in 0..classes {
            let factor = if c == cl.labels[b] { target_deriv[b] } else { 1.0 };
            grad_cos[b * classes + c] *= s * factor;
        }
    }
    Ok((loss, Tensor::raw(vec![batch, classes], grad_cos)))
}

/// Additive cosine margin: target logit `s·(cos θ_k − m)`.
pub fn am_softmax_loss(cl: &CosineLogits, m: f64, s: f64) -> Result<(f64, Tensor)> {
    check_cl(cl)?;
    let (batch, classes) = (cl.cos_theta.dim(0), cl.cos_theta.dim(1));
    let mut logits = cl.cos_theta.data().to_vec();
    for b in 0..batch {
        logits[b * classes + cl.labels[b]] -= m;
    }
    for z in &mut logits {
        *z *= s;
    }
    let (loss, grad_logits) = cross_entropy(&Tensor::raw(vec![batch, classes], logits), &cl.labels);
    let grad_cos = Tensor::raw(
        grad_logits.shape().to_vec(),
        grad_logits.data().iter().map(|&g| s * g).collect(),
    );
    Ok((loss, grad_cos))
}

/// The modulation coefficient for one non-target cosine: an easy sample
/// (margin-adjusted target still beats this class) keeps `cos θ_j`; a hard
/// one is re-weighted to `cos θ_j · (t + cos θ_j)`.
pub fn modulation(t: f64, cos_j: f64, cos_target_plus_m: f64) -> f64 {
    if cos_target_plus_m > cos_j {
        cos_j
    } else {
        cos_j * (t + cos_j)
    }
}

/// Everything the curricular head produces for one batch.
#[derive(Clone, Debug)]
pub struct CurricularOutput {
    pub loss: f64,
    pub grad_cos: Tensor,
    /// State after this batch's t update.
    pub state: CurriculumState,
    /// The batch statistic fed to the update.
    pub r: f64,
    /// Fraction of (sample, non-target class) pairs on the easy branch.
    pub easy_fraction: f64,
}

/// Curricular loss: target logit `s·cos(θ_k + m)`, each non-target logit
/// `s·N(t, cos θ_j)` with the state's t (the value before this batch's
/// update). The modulation branch is chosen per (sample, class) and
/// treated as locally fixed for gradients; t itself receives no gradient.
/// Afterwards t is updated once from this batch's positive-cosine
/// statistic.
pub fn curricular_loss(
    cl: &CosineLogits,
    state: &CurriculumState,
    cfg: &LossConfig,
) -> Result<CurricularOutput> {
    check_cl(cl)?;
    let (batch, classes) = (cl.cos_theta.dim(0), cl.cos_theta.dim(1));
    let (m, s, t) = (cfg.m, cfg.s, state.t);
    let cos = cl.cos_theta.data();

    let mut logits = vec![0.0; batch * classes];
    let mut dfactor = vec![0.0; batch * classes];
    let mut easy_pairs = 0usize;
    let mut r_acc = 0.0;
    for b in 0..batch {
        let k = cl.labels[b];
        let (phi, dphi) = angular_margin(cos[b * classes + k], m);
        r_acc += cos[b * classes + k];
        for c in 0..classes {
            let idx = b * classes + c;
            if c == k {
                logits[idx] = s * phi;
                dfactor[idx] = s * dphi;
            } else {
                let cj = cos[idx];
                if phi > cj {
                    easy_pairs += 1;
                    logits[idx] = s * cj;
                    dfactor[idx] = s;
                } else {
                    logits[idx] = s * cj * (t + cj);
                    dfactor[idx] = s * (t + 2.0 * cj);
                }
            }
        }
    }

    let (loss, grad_logits) = cross_entropy(&Tensor::raw(vec![batch, classes], logits), &cl.labels);
    let grad_cos: Vec<f64> = grad_logits
        .data()
        .iter()
        .zip(&dfactor)
        .map(|(g, d)| g * d)
        .collect();

    let r = match cfg.r_statistic {
        RStatistic::Mean => r_acc / batch as f64,
        RStatistic::Sum => r_acc,
    };
    let non_target_pairs = batch * (classes - 1);
    let easy_fraction = if non_target_pairs == 0 {
        1.0
    } else {
        easy_pairs as f64 / non_target_pairs as f64
    };

    Ok(CurricularOutput {
        loss,
        grad_cos: Tensor::raw(vec![batch, classes], grad_cos),
        state: state.updated(r, cfg),
        r,
        easy_fraction,
    })
}

// ── Unified head for the trainer and evaluator ────────────────────

/// Per-batch result of running the configured head on raw features.
#[derive(Clone, Debug)]
pub struct HeadEval {
    pub loss: f64,
    pub grad_features: Tensor,
    pub grad_w: Tensor,
    pub state: CurriculumState,
    pub r: f64,
    pub easy_fraction: f64,
}

/// Run the configured head: normalization (where the head calls for it),
/// loss, and gradients w.r.t. the raw features and the weight matrix.
pub fn head_forward_backward(
    features: &Tensor,
    w: &Tensor,
    labels: &[usize],
    cfg: &LossConfig,
    state: &CurriculumState,
) -> Result<HeadEval> {
    cfg.validate()?;
    if let LossKind::Softmax = cfg.kind {
        // Plain affine logits, bias-free in the trained head.
        let logits = ops::linear(features, w, None)?;
        let (loss, grad_logits) = softmax_loss(&logits, labels)?;
        let (grad_features, grad_w, _db) = ops::linear_backward(features, w, &grad_logits)?;
        return Ok(HeadEval {
            loss,
            grad_features,
            grad_w,
            state: *state,
            r: 0.0,
            easy_fraction: 0.0,
        });
    }

    let (cl, trace) = cosine_logits(features, w, labels)?;
    let (loss, grad_cos, new_state, r, easy_fraction) = match cfg.kind {
        LossKind::NormSoftmax => {
            let (l, g) = norm_softmax_loss(&cl, cfg.s)?;
            (l, g, *state, 0.0, 0.0)
        }
        LossKind::ArcFace => {
            let (l, g) = arcface_loss(&cl, cfg.m, cfg.s)?;
            (l, g, *state, 0.0, 0.0)
        }
        LossKind::AmSoftmax => {
            let (l, g) = am_softmax_loss(&cl, cfg.m, cfg.s)?;
            (l, g, *state, 0.0, 0.0)
        }
        LossKind::Curricular => {
            let out = curricular_loss(&cl, state, cfg)?;
            (out.loss, out.grad_cos, out.state, out.r, out.easy_fraction)
        }
        LossKind::Softmax => unreachable!(),
    };
    let (grad_features, grad_w) = cosine_logits_backward(&trace, &grad_cos);
    Ok(HeadEval {
        loss,
        grad_features,
        grad_w,
        state: new_state,
        r,
        easy_fraction,
    })
}

/// Posterior definition at evaluation time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalLogits {
    /// Softmax over `s·cos θ` (or raw affine logits for the softmax head);
    /// margins shape training geometry only.
    Plain,
    /// Apply the head's target-logit transform to the true class, which
    /// must be known (closed-set evaluation).
    Margin,
}

/// Class posteriors for evaluation. `labels` is only consulted in
/// [`EvalLogits::Margin`] mode.
pub fn posteriors(
    features: &Tensor,
    w: &Tensor,
    cfg: &LossConfig,
    labels: Option<&[usize]>,
    mode: EvalLogits,
) -> Result<Tensor> {
    if let LossKind::Softmax = cfg.kind {
        let logits = ops::linear(features, w, None)?;
        return Ok(softmax_rows(&logits));
    }
    let batch = features.dim(0);
    let dummy: Vec<usize> = vec![0; batch];
    let (cl, _) = cosine_logits(features, w, labels.unwrap_or(&dummy))?;
    let (b, classes) = (cl.cos_theta.dim(0), cl.cos_theta.dim(1));
    let mut logits = cl.cos_theta.data().to_vec();
    if mode == EvalLogits::Margin {
        if let Some(labels) = labels {
            for i in 0..b {
                let idx = i * classes + labels[i];
                logits[idx] = match cfg.kind {
                    LossKind::AmSoftmax => logits[idx] - cfg.m,
                    LossKind::ArcFace | LossKind::Curricular => angular_margin(logits[idx], cfg.m).0,
                    _ => logits[idx],
                };
            }
        }
    }
    for z in &mut logits {
        *z *= cfg.s;
    }
    Ok(softmax_rows(&Tensor::raw(vec![b, classes], logits)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cl_of(rows: &[&[f64]], labels: &[usize]) -> CosineLogits {
        let batch = rows.len();
        let classes = rows[0].len();
        let data: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        CosineLogits {
            cos_theta: Tensor::raw(vec![batch, classes], data),
            labels: labels.to_vec(),
        }
    }

    #[test]
    fn softmax_uniform_logits_is_log_c() {
        let logits = Tensor::raw(vec![1, 10], vec![0.7; 10]);
        let (loss, _) = softmax_loss(&logits, &[3]).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn softmax_dominant_target_drives_loss_to_zero() {
        let logits = Tensor::raw(vec![1, 2], vec![1000.0, 0.0]);
        let (loss, _) = softmax_loss(&logits, &[0]).unwrap();
        assert!(loss >= 0.0 && loss < 1e-12);
    }

    #[test]
    fn softmax_two_class_scalar_example() {
        // logits [2, 0], label 0 → −ln(e²/(e²+1)) ≈ 0.126928
        let logits = Tensor::raw(vec![1, 2], vec![2.0, 0.0]);
        let (loss, grad) = softmax_loss(&logits, &[0]).unwrap();
        let expected = ((-2.0f64).exp()).ln_1p();
        assert!((loss - expected).abs() < 1e-12);
        assert!((loss - 0.126928).abs() < 1e-6);
        // gradient rows sum to zero: softmax mass minus one-hot
        assert!((grad.data()[0] + grad.data()[1]).abs() < 1e-12);
    }

    #[test]
    fn norm_softmax_scalar_example() {
        // cosθ = [1, 0], s = 1 → −ln(e/(e+1)) ≈ 0.313262
        let cl = cl_of(&[&[1.0, 0.0]], &[0]);
        let (loss, _) = norm_softmax_loss(&cl, 1.0).unwrap();
        assert!((loss - ((-1.0f64).exp()).ln_1p()).abs() < 1e-12);
        assert!((loss - 0.313262).abs() < 1e-6);
    }

    #[test]
    fn norm_softmax_identical_cosines_is_log_c_for_any_scale() {
        for &s in &[1.0, 8.0, 64.0] {
            let cl = cl_of(&[&[0.4, 0.4, 0.4, 0.4, 0.4]], &[2]);
            let (loss, _) = norm_softmax_loss(&cl, s).unwrap();
            assert!((loss - 5f64.ln()).abs() < 1e-12, "s = {s}");
        }
    }

    #[test]
    fn norm_softmax_large_scale_with_clear_target_vanishes() {
        let cl = cl_of(&[&[0.9, 0.1]], &[0]);
        let (loss, _) = norm_softmax_loss(&cl, 1000.0).unwrap();
        assert!(loss < 1e-12);
    }

    #[test]
    fn arcface_zero_margin_reduces_to_norm_softmax() {
        let cl = cl_of(&[&[0.7, -0.2, 0.1], &[0.3, 0.5, -0.9]], &[0, 1]);
        let (l_arc, g_arc) = arcface_loss(&cl, 0.0, 64.0).unwrap();
        let (l_ns, g_ns) = norm_softmax_loss(&cl, 64.0).unwrap();
        assert!((l_arc - l_ns).abs() < 1e-9);
        for (a, b) in g_arc.data().iter().zip(g_ns.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn arcface_worked_example_matches_independent_evaluation() {
        // cosθ = [cos 0.3, 0.5], label 0, m = 0.5, s = 64:
        // target logit 64·cos(0.8), other 32.
        let cl = cl_of(&[&[(0.3f64).cos(), 0.5]], &[0]);
        let (loss, _) = arcface_loss(&cl, 0.5, 64.0).unwrap();
        let z_t = 64.0 * (0.8f64).cos();
        let z_o = 32.0;
        let expected = ((z_o - z_t) as f64).exp().ln_1p();
        assert!(
            (loss - expected).abs() <= 1e-6 * expected.abs().max(1e-12),
            "loss {loss} vs expected {expected}"
        );
    }

    #[test]
    fn arcface_loss_non_decreasing_in_margin() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let rows: Vec<Vec<f64>> = (0..4)
                .map(|_| (0..6).map(|_| rng.random_range(-0.95..0.95)).collect())
                .collect();
            let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
            let labels: Vec<usize> = (0..4).map(|_| rng.random_range(0..6)).collect();
            let cl = cl_of(&refs, &labels);
            let mut prev = f64::NEG_INFINITY;
            for i in 0..=5 {
                let m = 0.1 * i as f64;
                let (loss, _) = arcface_loss(&cl, m, 64.0).unwrap();
                assert!(loss >= prev - 1e-12, "m {m}: {loss} < {prev}");
                prev = loss;
            }
        }
    }

    #[test]
    fn modulation_scalar_examples() {
        assert_eq!(modulation(0.0, 0.3, 0.7648), 0.3); // easy branch
        assert!((modulation(0.0, 0.9, 0.5) - 0.81).abs() < 1e-15);
        assert!((modulation(0.5, 0.9, 0.5) - 1.26).abs() < 1e-15);
    }

    #[test]
    fn am_softmax_zero_margin_reduces_to_norm_softmax() {
        let cl = cl_of(&[&[0.7, -0.2, 0.1]], &[0]);
        let (l_am, g_am) = am_softmax_loss(&cl, 0.0, 30.0).unwrap();
        let (l_ns, g_ns) = norm_softmax_loss(&cl, 30.0).unwrap();
        assert!((l_am - l_ns).abs() < 1e-9);
        for (a, b) in g_am.data().iter().zip(g_ns.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn am_softmax_scalar_example() {
        // cosθ=[0.8, 0.1], m=0.35, s=30 → logits [13.5, 3] → ln(1+e^{−10.5})
        let cl = cl_of(&[&[0.8, 0.1]], &[0]);
        let (loss, _) = am_softmax_loss(&cl, 0.35, 30.0).unwrap();
        let expected = ((-10.5f64).exp()).ln_1p();
        assert!((loss - expected).abs() < 1e-12);
        assert!((loss - 2.75e-5).abs() < 1e-7);
    }

    #[test]
    fn curricular_all_easy_equals_arcface() {
        // Target cosine close to 1 → cos(θ+m) still beats every non-target.
        let cl = cl_of(&[&[0.95, -0.5, 0.0], &[-0.3, 0.9, 0.1]], &[0, 1]);
        let cfg = LossConfig::default();
        for &t in &[0.0, 0.3, 1.2] {
            let state = CurriculumState { t, batch_index: 7 };
            let out = curricular_loss(&cl, &state, &cfg).unwrap();
            assert!((out.easy_fraction - 1.0).abs() < 1e-15);
            let (l_arc, g_arc) = arcface_loss(&cl, cfg.m, cfg.s).unwrap();
            assert!((out.loss - l_arc).abs() < 1e-9, "t = {t}");
            for (a, b) in out.grad_cos.data().iter().zip(g_arc.data()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn r_statistic_sum_uses_the_raw_sum_of_target_cosines() {
        let cl = cl_of(&[&[0.5, -0.7], &[0.3, -0.1]], &[0, 0]);
        let mean_cfg = LossConfig::default();
        let sum_cfg = LossConfig {
            r_statistic: RStatistic::Sum,
            ..LossConfig::default()
        };
        let state = CurriculumState::default();
        let mean_out = curricular_loss(&cl, &state, &mean_cfg).unwrap();
        let sum_out = curricular_loss(&cl, &state, &sum_cfg).unwrap();
        assert!((mean_out.r - 0.4).abs() < 1e-15);
        assert!((sum_out.r - 0.8).abs() < 1e-15);
        assert_eq!(mean_out.loss, sum_out.loss); // the statistic only feeds t
    }

    #[test]
    fn margin_posteriors_penalize_the_known_target() {
        let f = Tensor::raw(vec![1, 3], vec![0.6, 0.3, 0.2]);
        let w = Tensor::raw(
            vec![2, 3],
            vec![0.5, 0.4, 0.1, -0.3, 0.8, 0.2],
        );
        let cfg = LossConfig::default();
        let labels = [0usize];
        let plain = posteriors(&f, &w, &cfg, Some(&labels), EvalLogits::Plain).unwrap();
        let margin = posteriors(&f, &w, &cfg, Some(&labels), EvalLogits::Margin).unwrap();
        for p in [&plain, &margin] {
            let sum: f64 = p.data().iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
        assert!(
            margin.data()[0] < plain.data()[0],
            "margin mode should shrink the target posterior: {} vs {}",
            margin.data()[0],
            plain.data()[0]
        );
    }

    #[test]
    fn curricular_t_update_scalar_example() {
        // t0=0, α=0.99, batch r=0.5 → t = 0.99·0.5 + 0.01·0 = 0.495
        let cl = cl_of(&[&[0.5, -0.7]], &[0]);
        let cfg = LossConfig::default();
        let out = curricular_loss(&cl, &CurriculumState::default(), &cfg).unwrap();
        assert!((out.r - 0.5).abs() < 1e-15);
        assert!((out.state.t - 0.495).abs() < 1e-15);
        assert_eq!(out.state.batch_index, 1);
    }

    #[test]
    fn curricular_hard_sample_worked_example() {
        // cosθ=[cos 0.2, 0.9], m=0.5, s=64, t=0: cos(0.7) < 0.9 → hard;
        // logits [64·cos(0.7), 64·0.81] → loss ≈ 2.944
        let cl = cl_of(&[&[(0.2f64).cos(), 0.9]], &[0]);
        let cfg = LossConfig::default();
        let out = curricular_loss(&cl, &CurriculumState::default(), &cfg).unwrap();
        let z_t = 64.0 * (0.7f64).cos();
        let z_h = 64.0 * (0.9 * 0.9);
        let expected = (z_h - z_t) + ((-(z_h - z_t)) as f64).exp().ln_1p();
        assert!((out.loss - expected).abs() <= 1e-6 * expected);
        assert!((out.loss - 2.944).abs() < 1e-3);
        assert_eq!(out.easy_fraction, 0.0);
    }

    #[test]
    fn t_closed_form_for_both_conventions() {
        let mut cfg = LossConfig::default();
        let r = 0.5;
        let mut state = CurriculumState::default();
        for k in 1..=50 {
            state = state.updated(r, &cfg);
            let expected = r * (1.0 - (1.0 - cfg.alpha).powi(k));
            assert!((state.t - expected).abs() < 1e-12, "fast k={k}");
        }
        cfg.t_update = TUpdate::Ema;
        let mut state = CurriculumState::default();
        for k in 1..=50 {
            state = state.updated(r, &cfg);
            let expected = r * (1.0 - cfg.alpha.powi(k));
            assert!((state.t - expected).abs() < 1e-12, "ema k={k}");
        }
    }

    #[test]
    fn t_stays_non_negative_for_non_negative_r() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for &t_update in &[TUpdate::Fast, TUpdate::Ema] {
            let cfg = LossConfig {
                t_update,
                ..LossConfig::default()
            };
            let mut state = CurriculumState::default();
            for _ in 0..1000 {
                let r = rng.random_range(0.0..1.0);
                state = state.updated(r, &cfg);
                assert!(state.t >= 0.0);
            }
        }
    }

    #[test]
    fn cosine_logits_geometry() {
        let f = Tensor::raw(vec![1, 2], vec![2.0, 0.0]);
        let w = Tensor::raw(vec![2, 2], vec![3.0, 0.0, 0.0, -1.0]);
        let (cl, _) = cosine_logits(&f, &w, &[0]).unwrap();
        assert!((cl.cos_theta.data()[0] - 1.0).abs() < 1e-12); // aligned
        assert!(cl.cos_theta.data()[1].abs() < 1e-12); // orthogonal

        // scale invariance: cosine_logits(2f, 3W) == cosine_logits(f, W)
        let f2 = Tensor::raw(vec![1, 2], vec![4.0, 0.0]);
        let w3 = Tensor::raw(vec![2, 2], vec![9.0, 0.0, 0.0, -3.0]);
        let (cl2, _) = cosine_logits(&f2, &w3, &[0]).unwrap();
        for (a, b) in cl.cos_theta.data().iter().zip(cl2.cos_theta.data()) {
            assert!((a - b).abs() < 1e-12);
        }

        let w_zero = Tensor::raw(vec![2, 2], vec![1.0, 0.0, 0.0, 0.0]);
        assert!(cosine_logits(&f, &w_zero, &[0]).is_err());
    }

    #[test]
    fn adversarial_cosines_stay_finite_at_scale() {
        // s = 64, C = 10⁴, cosines pinned to ±1.
        let classes = 10_000;
        let mut row = vec![-1.0; classes];
        row[0] = 1.0;
        row[1] = 1.0; // non-target at +1 too
        let cl = CosineLogits {
            cos_theta: Tensor::raw(vec![1, classes], row),
            labels: vec![0],
        };
        let cfg = LossConfig::default();
        let (l, g) = norm_softmax_loss(&cl, 64.0).unwrap();
        assert!(l.is_finite() && g.data().iter().all(|v| v.is_finite()));
        let (l, g) = arcface_loss(&cl, 0.5, 64.0).unwrap();
        assert!(l.is_finite() && g.data().iter().all(|v| v.is_finite()));
        let (l, g) = am_softmax_loss(&cl, 0.35, 64.0).unwrap();
        assert!(l.is_finite() && g.data().iter().all(|v| v.is_finite()));
        let out = curricular_loss(&cl, &CurriculumState::default(), &cfg).unwrap();
        assert!(out.loss.is_finite());
        assert!(out.grad_cos.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn config_validation_bounds() {
        let mut cfg = LossConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.m = 1.6; // ≥ π/2
        assert!(cfg.validate().is_err());
        cfg.m = 0.5;
        cfg.s = 0.0;
        assert!(cfg.validate().is_err());
        cfg.s = 64.0;
        cfg.alpha = 1.0;
        assert!(cfg.validate().is_err());
        cfg.alpha = 0.99;
        cfg.kind = LossKind::AmSoftmax;
        cfg.m = 1.0;
        assert!(cfg.validate().is_err());
    }
}
