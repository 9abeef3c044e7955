//! Reference rankers: item popularity and BPR matrix factorisation.

use log::{debug, info};
use serde::{Deserialize, Serialize};

use crate::data::{sample_triplets, InteractionSet, SplitDataset};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport, Target, DEFAULT_NEGATIVES};
use crate::models::PairwiseModel;
use crate::numerics::{dot, gaussian_init, sigmoid, softplus, DenseMatrix, RngSeed};
use crate::ranking::{sorted_candidates, RankedList, Recommender};
use crate::trainer::{check_dimensions, TrainConfig, TrainHistory};
use crate::{ItemId, UserId};

/// Training interaction count per item.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PopularityTable {
    pub counts: Vec<usize>,
}

impl PopularityTable {
    pub fn from_train(train: &InteractionSet) -> Self {
        PopularityTable {
            counts: train.item_counts(),
        }
    }

    pub fn num_items(&self) -> usize {
        self.counts.len()
    }
}

/// Candidates by descending training count, ties by ascending id.
pub fn itempop_rank(table: &PopularityTable, user: UserId, candidates: &[ItemId], k: usize) -> Result<RankedList> {
    let mut items = sorted_candidates(candidates, k)?;
    if let Some(&bad) = items.iter().find(|&&i| i >= table.num_items()) {
        return Err(Error::Index {
            kind: "item",
            index: bad,
            size: table.num_items(),
        });
    }
    items.sort_by(|&a, &b| table.counts[b].cmp(&table.counts[a]).then(a.cmp(&b)));
    items.truncate(k);
    Ok(RankedList { user, items })
}

impl Recommender for PopularityTable {
    fn recommend(&self, user: UserId, candidates: &[ItemId], k: usize) -> Result<RankedList> {
        itempop_rank(self, user, candidates, k)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BprConfig {
    pub learning_rate: f64,
    /// λ, applied to the three embedding rows a triplet touches.
    pub regularization: f64,
    pub max_epochs: usize,
    pub seed: RngSeed,
    pub plateau: f64,
    pub min_epochs: usize,
    pub eval_negatives: usize,
}

impl Default for BprConfig {
    fn default() -> Self {
        BprConfig {
            learning_rate: 0.1,
            regularization: 0.01,
            max_epochs: 100,
            seed: RngSeed(0),
            plateau: 0.001,
            min_epochs: 0,
            eval_negatives: DEFAULT_NEGATIVES,
        }
    }
}

impl BprConfig {
    fn as_train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            max_epochs: self.max_epochs,
            seed: self.seed,
            plateau: self.plateau,
            min_epochs: self.min_epochs,
            eval_negatives: self.eval_negatives,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.regularization >= 0.0 && self.regularization.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "regularization must be >= 0, got {}",
                self.regularization
            )));
        }
        self.as_train_config().validate()
    }
}

/// Matrix-factorisation parameters, one embedding row per user and item.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BprParams {
    pub user_emb: DenseMatrix,
    pub item_emb: DenseMatrix,
    pub learning_rate: f64,
    pub regularization: f64,
}

impl BprParams {
    pub fn random(num_users: usize, num_items: usize, k: usize, cfg: &BprConfig) -> Result<Self> {
        Ok(BprParams {
            user_emb: gaussian_init(num_users, k, cfg.seed.derive(0))?,
            item_emb: gaussian_init(num_items, k, cfg.seed.derive(1))?,
            learning_rate: cfg.learning_rate,
            regularization: cfg.regularization,
        })
    }

    pub fn factors(&self) -> usize {
        self.user_emb.cols()
    }

    pub fn score(&self, user: UserId, item: ItemId) -> Result<f64> {
        Ok(dot(
            self.user_emb.checked_row("user", user)?,
            self.item_emb.checked_row("item", item)?,
        ))
    }
}

/// `x̂_uij = U_u·V_i − U_u·V_j`.
pub fn bpr_score(params: &BprParams, user: UserId, i: ItemId, j: ItemId) -> Result<f64> {
    Ok(params.score(user, i)? - params.score(user, j)?)
}

impl PairwiseModel for BprParams {
    fn num_users(&self) -> usize {
        self.user_emb.rows()
    }

    fn num_items(&self) -> usize {
        self.item_emb.rows()
    }

    fn predict(&self, user: UserId, i: ItemId, j: ItemId) -> Result<f64> {
        Ok(sigmoid(bpr_score(self, user, i, j)?))
    }
}

/// Per-triplet objective `−ln σ(x̂) + λ(‖U_u‖² + ‖V_i‖² + ‖V_j‖²)`.
pub fn bpr_triplet_loss(params: &BprParams, user: UserId, i: ItemId, j: ItemId, lambda: f64) -> Result<f64> {
    let x = bpr_score(params, user, i, j)?;
    let norms: f64 = [params.user_emb.row(user), params.item_emb.row(i), params.item_emb.row(j)]
        .iter()
        .map(|r| dot(r, r))
        .sum();
    Ok(softplus(-x) + lambda * norms)
}

/// Gradients of [`bpr_triplet_loss`] with respect to `U_u`, `V_i`, `V_j`.
pub fn bpr_triplet_gradient(
    params: &BprParams,
    user: UserId,
    i: ItemId,
    j: ItemId,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    if i == j {
        return Err(Error::InvalidArgument(format!("triplet with i == j == {i}")));
    }
    let x = bpr_score(params, user, i, j)?;
    let g = -sigmoid(-x);
    let (uu, vi, vj) = (params.user_emb.row(user), params.item_emb.row(i), params.item_emb.row(j));
    let gu = (0..uu.len()).map(|c| g * (vi[c] - vj[c]) + 2.0 * lambda * uu[c]).collect();
    let gi = (0..uu.len()).map(|c| g * uu[c] + 2.0 * lambda * vi[c]).collect();
    let gj = (0..uu.len()).map(|c| -g * uu[c] + 2.0 * lambda * vj[c]).collect();
    Ok((gu, gi, gj))
}

/// One SGD step on a single triplet; returns the pre-step objective.
pub fn bpr_sgd_step(params: &mut BprParams, user: UserId, i: ItemId, j: ItemId) -> Result<f64> {
    let (lr, lambda) = (params.learning_rate, params.regularization);
    let loss = bpr_triplet_loss(params, user, i, j, lambda)?;
    let (gu, gi, gj) = bpr_triplet_gradient(params, user, i, j, lambda)?;
    let step = |row: &mut [f64], g: &[f64]| row.iter_mut().zip(g).for_each(|(p, g)| *p -= lr * g);
    step(params.user_emb.row_mut(user), &gu);
    step(params.item_emb.row_mut(i), &gi);
    step(params.item_emb.row_mut(j), &gj);
    Ok(loss)
}

/// SGD on the BPR objective. Each epoch visits every training interaction
/// once, in shuffled order, with a fresh unobserved item. Stopping and
/// model selection follow the main trainer.
pub fn bpr_train(split: &SplitDataset, k: usize, cfg: &BprConfig) -> Result<(BprParams, TrainHistory)> {
    cfg.validate()?;
    let params = BprParams::random(split.num_users(), split.num_items(), k, cfg)?;
    bpr_train_from(params, split, cfg)
}

/// [`bpr_train`] from given parameters.
pub fn bpr_train_from(mut params: BprParams, split: &SplitDataset, cfg: &BprConfig) -> Result<(BprParams, TrainHistory)> {
    cfg.validate()?;
    check_dimensions(params.num_users(), params.num_items(), split)?;
    params.learning_rate = cfg.learning_rate;
    params.regularization = cfg.regularization;
    let tcfg = cfg.as_train_config();
    let mut history = TrainHistory::default();
    if cfg.max_epochs == 0 {
        return Ok((params, history));
    }
    let val_cfg = tcfg.validation_eval();
    let initial = evaluate(&params, split, Target::Validation, &val_cfg)?;
    history.initial_val_hr = Some(initial.hr);
    history.initial_val_ndcg = Some(initial.ndcg);
    let mut best: Option<(f64, BprParams)> = None;

    for epoch in 0..cfg.max_epochs {
        let triplets: Vec<_> = sample_triplets(&split.train, 1, cfg.seed.derive(epoch as u64))
            .into_iter()
            .filter(|t| t.label == 1)
            .collect();
        let mut total = 0.0;
        for (b, t) in triplets.iter().enumerate() {
            let loss = bpr_sgd_step(&mut params, t.user, t.i, t.j)?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch: epoch + 1,
                    batch: b + 1,
                    loss,
                });
            }
            total += loss;
        }
        let mean = total / triplets.len() as f64;
        let val: EvalReport = evaluate(&params, split, Target::Validation, &val_cfg)?;
        info!("bpr epoch {}: loss {mean:.6}, val HR@10 {:.4}", epoch + 1, val.hr);
        history.record(mean, triplets.len(), vec![total], &val);
        if best.as_ref().is_none_or(|(hr, _)| val.hr > *hr) {
            best = Some((val.hr, params.clone()));
            history.best_epoch = Some(epoch);
        }
        if epoch + 1 >= cfg.min_epochs && history.plateaued(cfg.plateau) {
            debug!("loss plateau reached after epoch {}", epoch + 1);
            break;
        }
    }
    Ok((best.expect("at least one epoch ran").1, history))
}

/// Candidates by descending `U_u·V_i`, ties by ascending id.
pub fn mf_topk(params: &BprParams, user: UserId, candidates: &[ItemId], k: usize) -> Result<RankedList> {
    let items = sorted_candidates(candidates, k)?;
    let mut scored = items
        .into_iter()
        .map(|i| Ok((params.score(user, i)?, i)))
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(RankedList {
        user,
        items: scored.into_iter().take(k).map(|(_, i)| i).collect(),
    })
}

impl Recommender for BprParams {
    fn recommend(&self, user: UserId, candidates: &[ItemId], k: usize) -> Result<RankedList> {
        mf_topk(self, user, candidates, k)
    }
}
