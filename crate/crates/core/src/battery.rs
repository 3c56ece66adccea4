//! The full gradient-check battery: every weight group of the miniature
//! model against finite differences, through each of the five loss heads.
//!
//! Each draw resamples its batch until the forward pass sits safely away
//! from every piecewise boundary (pool ties, activation zero crossings,
//! modulation branch flips, acos endpoints), so the central-difference
//! probe never straddles a kink.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::gradcheck::{finite_diff_grad, max_rel_err, FD_FLOOR, FD_STEP, FD_TOL};
use crate::loss::{cosine_logits, head_forward_backward, CurriculumState, LossConfig, LossKind};
use crate::model::{embed_backward, embed_forward, init_model, miniature_config, ModelWeights};
use crate::tensor::Tensor;

pub const HEADS: [LossKind; 5] = [
    LossKind::Softmax,
    LossKind::NormSoftmax,
    LossKind::ArcFace,
    LossKind::AmSoftmax,
    LossKind::Curricular,
];

#[derive(Clone, Debug)]
pub struct BatteryRow {
    pub head: &'static str,
    pub group: String,
    pub max_rel_err: f64,
}

impl BatteryRow {
    pub fn passed(&self) -> bool {
        self.max_rel_err < FD_TOL
    }
}

#[derive(Clone, Debug)]
pub struct BatteryReport {
    pub rows: Vec<BatteryRow>,
    pub seeds: usize,
    pub tolerance: f64,
}

impl BatteryReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed())
    }

    pub fn failing(&self) -> Vec<&BatteryRow> {
        self.rows.iter().filter(|r| !r.passed()).collect()
    }

    pub fn worst(&self) -> f64 {
        self.rows.iter().map(|r| r.max_rel_err).fold(0.0, f64::max)
    }

    /// Fixed-width table, one row per (head, weight group).
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "gradient check: {} seeds, tolerance {:.1e}\n",
            self.seeds, self.tolerance
        ));
        out.push_str(&format!("{:<14}{:<16}{:<14}status\n", "head", "group", "max_rel_err"));
        for row in &self.rows {
            out.push_str(&format!(
                "{:<14}{:<16}{:<14.3e}{}\n",
                row.head,
                row.group,
                row.max_rel_err,
                if row.passed() { "ok" } else { "FAIL" }
            ));
        }
        out.push_str(&format!(
            "worst {:.3e} — {}\n",
            self.worst(),
            if self.passed() { "PASS" } else { "FAIL" }
        ));
        out
    }
}

/// Test-fixture fault injection: lets the detection contract be exercised
/// without shipping a broken backward.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FaultInjection {
    /// Flip the sign of the analytic sinc cutoff gradients.
    FlipSincSign,
}

fn loss_cfg(kind: LossKind) -> LossConfig {
    LossConfig {
        kind,
        m: if kind == LossKind::AmSoftmax { 0.35 } else { 0.5 },
        ..LossConfig::default()
    }
}

/// Draw a batch whose forward pass and cosine geometry are clear of every
/// branch boundary for this head.
fn safe_batch(
    weights: &ModelWeights,
    kind: LossKind,
    seed: u64,
) -> Result<(Tensor, Vec<usize>)> {
    let cfg = &weights.config;
    let classes = weights.class_count;
    for attempt in 0..200 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(131).wrapping_add(attempt));
        let data: Vec<f64> = (0..2 * cfg.chunk_len)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let chunks = Tensor::raw(vec![2, cfg.chunk_len], data);
        let labels: Vec<usize> = (0..2).map(|_| rng.random_range(0..classes)).collect();
        let trace = embed_forward(weights, &chunks)?;
        if trace.kink_margin(cfg) <= 1e-3 {
            continue;
        }
        if matches!(kind, LossKind::ArcFace | LossKind::AmSoftmax | LossKind::Curricular) {
            let (cl, _) = cosine_logits(&trace.embedding, &weights.head_w, &labels)?;
            let cos = cl.cos_theta.data();
            let mut ok = true;
            for b in 0..2 {
                let target = cos[b * classes + labels[b]];
                if target.abs() > 1.0 - 1e-3 {
                    ok = false;
                }
                let phi = (target.clamp(-1.0, 1.0).acos() + loss_cfg(kind).m).cos();
                for c in 0..classes {
                    if c != labels[b] && (phi - cos[b * classes + c]).abs() < 1e-3 {
                        ok = false;
                    }
                }
            }
            if !ok {
                continue;
            }
        }
        return Ok((chunks, labels));
    }
    Err(crate::error::Error::InvalidConfig {
        detail: "could not draw a branch-safe batch in 200 attempts".into(),
    })
}

/// Run the battery: miniature model, `seeds` independent draws per head,
/// finite differences over every weight group.
pub fn run_battery(seeds: usize) -> Result<BatteryReport> {
    run_battery_with(seeds, None)
}

pub fn run_battery_with(seeds: usize, inject: Option<FaultInjection>) -> Result<BatteryReport> {
    let model_cfg = miniature_config();
    let state = CurriculumState {
        t: 0.3,
        batch_index: 5,
    };
    let mut rows: Vec<BatteryRow> = Vec::new();

    for &kind in &HEADS {
        let cfg = loss_cfg(kind);
        let mut per_group: Vec<(String, f64)> = Vec::new();
        for seed in 0..seeds as u64 {
            let weights = init_model(&model_cfg, 3, 7_000 + seed)?;
            let (chunks, labels) = safe_batch(&weights, kind, seed)?;

            let trace = embed_forward(&weights, &chunks)?;
            let head = head_forward_backward(&trace.embedding, &weights.head_w, &labels, &cfg, &state)?;
            let mut grads = embed_backward(&weights, &trace, &head.grad_features)?;
            grads.head_w = head.grad_w;
            if inject == Some(FaultInjection::FlipSincSign) {
                for v in grads.sinc_f_low.iter_mut().chain(grads.sinc_band.iter_mut()) {
                    *v = -*v;
                }
            }

            let names = weights.group_names();
            if per_group.is_empty() {
                per_group = names.iter().map(|n| (n.clone(), 0.0)).collect();
            }
            let analytic = grads.groups();
            for (gi, name) in names.iter().enumerate() {
                let base = Tensor::raw(vec![analytic[gi].len()], weights.param_groups()[gi].to_vec());
                let numeric = finite_diff_grad(
                    |p| {
                        let mut probe = weights.clone();
                        probe.param_groups_mut()[gi].copy_from_slice(p.data());
                        let t = embed_forward(&probe, &chunks)?;
                        Ok(
                            head_forward_backward(&t.embedding, &probe.head_w, &labels, &cfg, &state)?
                                .loss,
                        )
                    },
                    &base,
                    FD_STEP,
                )?;
                let analytic_t = Tensor::raw(vec![analytic[gi].len()], analytic[gi].to_vec());
                let err = max_rel_err(&analytic_t, &numeric, FD_FLOOR);
                let slot = &mut per_group[gi].1;
                *slot = slot.max(err);
                let _ = name;
            }
        }
        for (group, err) in per_group {
            rows.push(BatteryRow {
                head: kind.as_str(),
                group,
                max_rel_err: err,
            });
        }
    }

    Ok(BatteryReport {
        rows,
        seeds,
        tolerance: FD_TOL,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_battery_passes() {
        let report = run_battery(2).unwrap();
        assert!(report.passed(), "{}", report.render());
        // 5 heads × (2 sinc + 1 conv + 2·3 norms + 2·2 fc + 1 head) groups
        assert_eq!(report.rows.len(), 5 * 14);
    }

    #[test]
    fn injected_sinc_sign_bug_is_detected_and_named() {
        let report = run_battery_with(1, Some(FaultInjection::FlipSincSign)).unwrap();
        assert!(!report.passed());
        let failing = report.failing();
        assert!(failing.iter().any(|r| r.group.starts_with("sinc.")));
        assert!(report.render().contains("FAIL"));
    }
}
