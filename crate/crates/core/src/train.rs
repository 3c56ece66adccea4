//! The training loop: sample a batch, embed, run the loss head, step the
//! optimizer, and update the curriculum state once per batch, after that
//! batch's forward pass.

use crate::data::manifest::{DatasetManifest, Split};
use crate::data::sampler::{BatchSpec, TrainSampler};
use crate::error::{Error, Result};
use crate::loss::{head_forward_backward, CurriculumState, LossConfig};
use crate::model::{embed_backward, embed_forward, init_model, ModelConfig, ModelWeights};
use crate::optim::{OptimConfig, Optimizer};

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub loss: LossConfig,
    pub batch: BatchSpec,
    pub optim: OptimConfig,
    pub epochs: usize,
    pub batches_per_epoch: usize,
    /// Seeds model initialization (batch sampling is seeded by
    /// `batch.seed`).
    pub seed: u64,
    /// Epoch interval for the `on_epoch_end` callback.
    pub checkpoint_every: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.optim.validate()?;
        if self.epochs == 0 || self.batches_per_epoch == 0 {
            return Err(Error::InvalidConfig {
                detail: "epochs and batches_per_epoch must be >= 1".into(),
            });
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Clone, Copy, Debug)]
pub struct TrainLogRow {
    pub batch: u64,
    pub loss: f64,
    pub t: f64,
    pub r: f64,
    pub easy_fraction: f64,
    pub grad_norm: f64,
}

impl TrainLogRow {
    pub const CSV_HEADER: &'static str = "batch,loss,t,r,easy_fraction,grad_norm";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.batch, self.loss, self.t, self.r, self.easy_fraction, self.grad_norm
        )
    }
}

/// Hooks the driver can attach to a run. Both default to no-ops.
pub struct TrainHooks<'a> {
    /// Called once per batch with the fresh log row.
    pub on_row: Box<dyn FnMut(&TrainLogRow) + 'a>,
    /// Called after each `checkpoint_every`-th epoch and after the final
    /// one.
    pub on_epoch_end: Box<dyn FnMut(usize, &ModelWeights, &CurriculumState) -> Result<()> + 'a>,
}

impl<'a> Default for TrainHooks<'a> {
    fn default() -> Self {
        TrainHooks {
            on_row: Box::new(|_| {}),
            on_epoch_end: Box::new(|_, _, _| Ok(())),
        }
    }
}

/// Train a fresh model on the manifest's train split. The class count is
/// the manifest speaker count. Deterministic for fixed config and corpus.
pub fn train(
    manifest: &DatasetManifest,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    hooks: &mut TrainHooks,
) -> Result<(ModelWeights, CurriculumState)> {
    cfg.validate()?;
    if (manifest.sample_rate as f64 - model_cfg.sample_rate).abs() > 1e-9 {
        return Err(Error::InvalidConfig {
            detail: format!(
                "manifest sample rate {} does not match model sample rate {}",
                manifest.sample_rate, model_cfg.sample_rate
            ),
        });
    }
    if cfg.batch.chunk_len != model_cfg.chunk_len {
        return Err(Error::InvalidConfig {
            detail: format!(
                "batch chunk_len {} does not match model chunk_len {}",
                cfg.batch.chunk_len, model_cfg.chunk_len
            ),
        });
    }
    if manifest.records_in(Split::Train).is_empty() {
        return Err(Error::EmptySplit { split: "train" });
    }

    let class_count = manifest.class_count();
    let mut weights = init_model(model_cfg, class_count, cfg.seed)?;
    let sampler = TrainSampler::new(manifest, cfg.batch)?;
    let mut optimizer = Optimizer::new(
        cfg.optim,
        &weights
            .param_groups()
            .iter()
            .map(|g| g.len())
            .collect::<Vec<_>>(),
    )?;
    let mut state = CurriculumState::default();
    run_epochs(cfg, &sampler, &mut weights, &mut optimizer, &mut state, hooks)?;
    Ok((weights, state))
}

fn run_epochs(
    cfg: &TrainConfig,
    sampler: &TrainSampler,
    weights: &mut ModelWeights,
    optimizer: &mut Optimizer,
    state: &mut CurriculumState,
    hooks: &mut TrainHooks,
) -> Result<()> {
    let mut batch_index: u64 = 0;
    for epoch in 0..cfg.epochs {
        for _ in 0..cfg.batches_per_epoch {
            let row = train_one_batch(cfg, sampler, weights, optimizer, state, batch_index)?;
            (hooks.on_row)(&row);
            batch_index += 1;
        }
        let last = epoch + 1 == cfg.epochs;
        if last || (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0) {
            (hooks.on_epoch_end)(epoch, weights, state)?;
        }
    }
    Ok(())
}

/// One optimization step. Exposed so callers can drive custom schedules
/// (early stopping on evaluation metrics, for instance).
pub fn train_one_batch(
    cfg: &TrainConfig,
    sampler: &TrainSampler,
    weights: &mut ModelWeights,
    optimizer: &mut Optimizer,
    state: &mut CurriculumState,
    batch_index: u64,
) -> Result<TrainLogRow> {
    let (chunks, labels) = sampler.batch(batch_index);
    let trace = embed_forward(weights, &chunks)?;
    let head = head_forward_backward(&trace.embedding, &weights.head_w, &labels, &cfg.loss, state)?;
    if !head.loss.is_finite() {
        return Err(Error::NumericFailure {
            batch: batch_index,
            array: "loss".into(),
        });
    }
    let mut grads = embed_backward(weights, &trace, &head.grad_features)?;
    grads.head_w = head.grad_w;

    let names = weights.group_names();
    for (name, group) in names.iter().zip(grads.groups()) {
        if group.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericFailure {
                batch: batch_index,
                array: name.clone(),
            });
        }
    }
    let grad_norm = grads.global_norm();

    let grad_groups = grads.groups();
    let mut param_groups = weights.param_groups_mut();
    optimizer.step(&mut param_groups, &grad_groups);
    *state = head.state;

    Ok(TrainLogRow {
        batch: batch_index,
        loss: head.loss,
        t: state.t,
        r: head.r,
        easy_fraction: head.easy_fraction,
        grad_norm,
    })
}

/// Bundle of everything a caller needs to run batches manually.
pub struct TrainSession {
    pub weights: ModelWeights,
    pub sampler: TrainSampler,
    pub optimizer: Optimizer,
    pub state: CurriculumState,
    pub cfg: TrainConfig,
}

impl TrainSession {
    pub fn new(manifest: &DatasetManifest, model_cfg: &ModelConfig, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if manifest.records_in(Split::Train).is_empty() {
            return Err(Error::EmptySplit { split: "train" });
        }
        if cfg.batch.chunk_len != model_cfg.chunk_len {
            return Err(Error::InvalidConfig {
                detail: "batch chunk_len must match model chunk_len".into(),
            });
        }
        let weights = init_model(model_cfg, manifest.class_count(), cfg.seed)?;
        let sampler = TrainSampler::new(manifest, cfg.batch)?;
        let optimizer = Optimizer::new(
            cfg.optim,
            &weights
                .param_groups()
                .iter()
                .map(|g| g.len())
                .collect::<Vec<_>>(),
        )?;
        Ok(TrainSession {
            weights,
            sampler,
            optimizer,
            state: CurriculumState::default(),
            cfg,
        })
    }

    pub fn step(&mut self, batch_index: u64) -> Result<TrainLogRow> {
        train_one_batch(
            &self.cfg,
            &self.sampler,
            &mut self.weights,
            &mut self.optimizer,
            &mut self.state,
            batch_index,
        )
    }
}
