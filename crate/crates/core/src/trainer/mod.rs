//! Mini-batch Adam training with per-epoch triplet resampling, a relative
//! loss-plateau stopping rule and model selection on validation HR@10.

use log::{debug, info};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{sample_triplets, LabeledTriplet, SplitDataset};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalConfig, EvalReport, Target, DEFAULT_K, DEFAULT_NEGATIVES};
use crate::models::{backward_into, fuse_pretrained, DncrParams, FusionConfig, Gradients, NbprParams, NeuprParams, TowerShape, Trainable};
use crate::numerics::{adam_step, AdamConfig, AdamState, RngSeed};
use crate::ranking::{Recommender, Tournament};

/// Seed keys. Epoch `e` samples its triplets from `seed.derive(e)`, so
/// these sit far above any epoch count.
const VALIDATION_KEY: u64 = 1 << 40;
const NBPR_INIT_KEY: u64 = (1 << 40) + 1;
const DNCR_INIT_KEY: u64 = (1 << 40) + 2;

/// Instances per gradient chunk in multi-threaded mode.
const PARALLEL_CHUNK: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Negatives sampled per observed interaction.
    pub ratio: usize,
    pub max_epochs: usize,
    pub seed: RngSeed,
    /// Stop once the epoch loss improves by less than this fraction.
    pub plateau: f64,
    /// Epochs that always run before the plateau rule is checked.
    pub min_epochs: usize,
    /// 1 is the deterministic reference mode. Larger values split each
    /// batch into fixed chunks whose gradients are summed in order.
    pub threads: usize,
    /// Negatives per user in the per-epoch validation ranking.
    pub eval_negatives: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            batch_size: 256,
            ratio: 1,
            max_epochs: 100,
            seed: RngSeed(0),
            plateau: 0.001,
            min_epochs: 0,
            threads: 1,
            eval_negatives: DEFAULT_NEGATIVES,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch size must be >= 1".into());
        }
        if self.ratio == 0 {
            return bad("negative ratio must be >= 1".into());
        }
        if !(self.plateau > 0.0 && self.plateau < 1.0) {
            return bad(format!("plateau threshold must lie in (0, 1), got {}", self.plateau));
        }
        Ok(())
    }

    /// Evaluation settings used for validation during training. The sampled
    /// negatives depend only on the training seed.
    pub fn validation_eval(&self) -> EvalConfig {
        EvalConfig {
            k: DEFAULT_K,
            negatives: self.eval_negatives,
            seed: self.seed.derive(VALIDATION_KEY),
            threads: self.threads,
        }
    }
}

/// Per-epoch record of a training run. All vectors have one entry per
/// completed epoch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Mean per-instance loss.
    pub epoch_loss: Vec<f64>,
    pub val_hr: Vec<f64>,
    pub val_ndcg: Vec<f64>,
    /// Index of the epoch whose parameters were returned.
    pub best_epoch: Option<usize>,
    /// Validation metrics of the parameters before any update.
    pub initial_val_hr: Option<f64>,
    pub initial_val_ndcg: Option<f64>,
    /// Instances seen per epoch.
    pub instances: Vec<usize>,
    /// Summed (not averaged) loss of every mini-batch, per epoch.
    pub batch_loss_sums: Vec<Vec<f64>>,
}

impl TrainHistory {
    pub fn epochs(&self) -> usize {
        self.epoch_loss.len()
    }

    pub(crate) fn record(&mut self, loss: f64, instances: usize, batches: Vec<f64>, val: &EvalReport) {
        self.epoch_loss.push(loss);
        self.instances.push(instances);
        self.batch_loss_sums.push(batches);
        self.val_hr.push(val.hr);
        self.val_ndcg.push(val.ndcg);
    }

    /// True when the latest epoch improved the loss by less than `plateau`
    /// relative to the one before it.
    pub(crate) fn plateaued(&self, plateau: f64) -> bool {
        match self.epoch_loss[..] {
            [.., prev, cur] => (prev - cur) / prev < plateau,
            _ => false,
        }
    }
}

pub(crate) fn check_dimensions(users: usize, items: usize, split: &SplitDataset) -> Result<()> {
    if users != split.num_users() || items != split.num_items() {
        return Err(Error::DatasetMismatch {
            model: format!("{users} users x {items} items"),
            split: format!("{} users x {} items", split.num_users(), split.num_items()),
        });
    }
    Ok(())
}

/// Trains `model` on `split.train` and returns the parameters of the epoch
/// with the best validation HR@10 (earliest on ties).
pub fn train<M: Trainable>(model: M, split: &SplitDataset, cfg: &TrainConfig) -> Result<(M, TrainHistory)> {
    cfg.validate()?;
    check_dimensions(model.num_users(), model.num_items(), split)?;
    let mut history = TrainHistory::default();
    if cfg.max_epochs == 0 {
        return Ok((model, history));
    }
    let val_cfg = cfg.validation_eval();
    let initial = validate_model(&model, split, &val_cfg)?;
    history.initial_val_hr = Some(initial.hr);
    history.initial_val_ndcg = Some(initial.ndcg);

    let adam = AdamConfig::with_learning_rate(cfg.learning_rate);
    let mut model = model;
    let mut states: Vec<AdamState> = model.tensors().iter().map(|t| AdamState::for_params(t, adam)).collect();
    let mut grads = Gradients::zeros_like(&model);
    let mut best: Option<(f64, M)> = None;

    for epoch in 0..cfg.max_epochs {
        let triplets = sample_triplets(&split.train, cfg.ratio, cfg.seed.derive(epoch as u64));
        let mut batch_sums = Vec::with_capacity(triplets.len().div_ceil(cfg.batch_size));
        for (b, batch) in triplets.chunks(cfg.batch_size).enumerate() {
            let loss = if cfg.threads == 1 {
                backward_into(&model, batch, &mut grads)?
            } else {
                parallel_backward(&model, batch, &mut grads)?
            };
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch: epoch + 1,
                    batch: b + 1,
                    loss,
                });
            }
            for ((p, g), s) in model.tensors_mut().into_iter().zip(grads.tensors()).zip(&mut states) {
                adam_step(p, g, s)?;
            }
            batch_sums.push(loss);
        }
        if let Some(t) = model.tensors().iter().position(|t| !t.is_finite()) {
            return Err(Error::NonFinite(format!(
                "tensor {} after epoch {}",
                model.tensor_names()[t],
                epoch + 1
            )));
        }
        let mean = batch_sums.iter().sum::<f64>() / triplets.len() as f64;
        let val = validate_model(&model, split, &val_cfg)?;
        info!(
            "{} epoch {}: loss {mean:.6}, val HR@10 {:.4}, NDCG@10 {:.4}",
            model.kind(),
            epoch + 1,
            val.hr,
            val.ndcg
        );
        history.record(mean, triplets.len(), batch_sums, &val);
        if best.as_ref().is_none_or(|(hr, _)| val.hr > *hr) {
            best = Some((val.hr, model.clone()));
            history.best_epoch = Some(epoch);
        }
        if epoch + 1 >= cfg.min_epochs && history.plateaued(cfg.plateau) {
            debug!("loss plateau reached after epoch {}", epoch + 1);
            break;
        }
    }
    let (_, best) = best.expect("at least one epoch ran");
    Ok((best, history))
}

fn validate_model<M: Trainable>(model: &M, split: &SplitDataset, cfg: &EvalConfig) -> Result<EvalReport> {
    evaluate(&Tournament(model), split, Target::Validation, cfg)
}

/// Data-parallel gradient of the mean batch loss: fixed chunks, reduced in
/// chunk order.
fn parallel_backward<M: Trainable>(model: &M, batch: &[LabeledTriplet], grads: &mut Gradients) -> Result<f64> {
    let scale = 1.0 / batch.len() as f64;
    let parts: Vec<(Gradients, f64)> = batch
        .par_chunks(PARALLEL_CHUNK)
        .map(|chunk| {
            let mut g = Gradients::zeros_like(model);
            let mut loss = 0.0;
            for t in chunk {
                loss += model.accumulate_gradient(t, scale, &mut g)?;
            }
            Ok((g, loss))
        })
        .collect::<Result<_>>()?;
    grads.clear();
    let mut loss = 0.0;
    for (g, l) in parts {
        for (acc, part) in grads.0.iter_mut().zip(g.tensors()) {
            acc.as_mut_slice().iter_mut().zip(part.as_slice()).for_each(|(a, b)| *a += b);
        }
        loss += l;
    }
    Ok(loss)
}

/// Settings for the two-stage NeuPR pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    /// Used for both NBPR and DNCR.
    pub donors: TrainConfig,
    pub neupr: TrainConfig,
    pub fusion: FusionConfig,
}

impl PretrainConfig {
    pub fn uniform(cfg: TrainConfig, fusion: FusionConfig) -> Self {
        PretrainConfig {
            donors: cfg,
            neupr: cfg,
            fusion,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub model: NeuprParams,
    pub nbpr_history: TrainHistory,
    pub dncr_history: TrainHistory,
    pub neupr_history: TrainHistory,
}

/// Random donor initialisations used by [`pretrain_pipeline`].
pub fn donor_inits(split: &SplitDataset, factors: usize, layers: usize, seed: RngSeed) -> Result<(NbprParams, DncrParams)> {
    let (m, n) = (split.num_users(), split.num_items());
    let nbpr = NbprParams::random(m, n, factors, seed.derive(NBPR_INIT_KEY))?;
    let shape = TowerShape::for_factors(factors, layers)?;
    let dncr = DncrParams::random(m, n, &shape, seed.derive(DNCR_INIT_KEY))?;
    Ok((nbpr, dncr))
}

/// Trains NBPR and DNCR from random starts, fuses them into a NeuPR model
/// and returns the fused parameters before any NeuPR update.
pub fn pretrain_and_fuse(
    split: &SplitDataset,
    factors: usize,
    layers: usize,
    cfg: &PretrainConfig,
) -> Result<(NeuprParams, TrainHistory, TrainHistory)> {
    let (nbpr, dncr) = donor_inits(split, factors, layers, cfg.donors.seed)?;
    info!("pre-training NBPR");
    let (nbpr, nbpr_history) = train(nbpr, split, &cfg.donors)?;
    info!("pre-training DNCR");
    let (dncr, dncr_history) = train(dncr, split, &cfg.donors)?;
    let fused = fuse_pretrained(&nbpr, &dncr, cfg.fusion)?;
    Ok((fused, nbpr_history, dncr_history))
}

/// [`pretrain_and_fuse`] followed by NeuPR training from the fused start.
pub fn pretrain_pipeline(split: &SplitDataset, factors: usize, layers: usize, cfg: &PretrainConfig) -> Result<PretrainOutcome> {
    let (fused, nbpr_history, dncr_history) = pretrain_and_fuse(split, factors, layers, cfg)?;
    info!("training fused NeuPR");
    let (model, neupr_history) = train(fused, split, &cfg.neupr)?;
    Ok(PretrainOutcome {
        model,
        nbpr_history,
        dncr_history,
        neupr_history,
    })
}

/// Validation metrics of a recommender under a training config's protocol.
pub fn validation_metrics<R: Recommender + ?Sized>(rec: &R, split: &SplitDataset, cfg: &TrainConfig) -> Result<EvalReport> {
    evaluate(rec, split, Target::Validation, &cfg.validation_eval())
}
