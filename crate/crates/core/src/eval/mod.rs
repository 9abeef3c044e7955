//! Leave-one-out evaluation with sampled negatives: HR@K and NDCG@K.
//!
//! For each user the held-out item is ranked against `negatives` sampled
//! items the user never interacted with. Only the top K positions are
//! computed; ranks beyond K are reported as absent.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{sample_eval_negatives, HeldOut, SplitDataset};
use crate::error::{Error, Result};
use crate::numerics::RngSeed;
use crate::ranking::{RankedList, Recommender};
use crate::{ItemId, UserId};

pub const DEFAULT_K: usize = 10;
pub const DEFAULT_NEGATIVES: usize = 100;

/// 1 if `target` is among the first `k` items of `ranked`.
pub fn hit_ratio(ranked: &RankedList, target: ItemId, k: usize) -> f64 {
    match ranked.rank_of(target) {
        Some(r) if r <= k => 1.0,
        _ => 0.0,
    }
}

/// `1 / log2(rank + 1)` if `target` sits at 1-based `rank <= k`, else 0.
pub fn ndcg_at_k(ranked: &RankedList, target: ItemId, k: usize) -> f64 {
    match ranked.rank_of(target) {
        Some(r) if r <= k => ndcg_for_rank(r),
        _ => 0.0,
    }
}

fn ndcg_for_rank(rank: usize) -> f64 {
    1.0 / ((rank + 1) as f64).log2()
}

/// Which held-out item to rank.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Validation,
    Test,
}

impl Target {
    fn held_out(self, split: &SplitDataset) -> &[HeldOut] {
        match self {
            Target::Validation => &split.validation,
            Target::Test => &split.test,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub k: usize,
    pub negatives: usize,
    pub seed: RngSeed,
    /// Worker threads; 0 uses rayon's default pool, 1 runs inline.
    pub threads: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            k: DEFAULT_K,
            negatives: DEFAULT_NEGATIVES,
            seed: RngSeed(0),
            threads: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserRank {
    pub user: UserId,
    /// 1-based rank of the held-out item, absent when beyond K.
    pub rank: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub k: usize,
    pub seed: RngSeed,
    pub hr: f64,
    pub ndcg: f64,
    pub per_user: Vec<UserRank>,
}

impl EvalReport {
    pub fn from_ranks(k: usize, seed: RngSeed, per_user: Vec<UserRank>) -> Self {
        let (mut hits, mut gain) = (0.0, 0.0);
        for r in per_user.iter().filter_map(|u| u.rank).filter(|&r| r <= k) {
            hits += 1.0;
            gain += ndcg_for_rank(r);
        }
        let users = per_user.len().max(1) as f64;
        EvalReport {
            k,
            seed,
            hr: hits / users,
            ndcg: gain / users,
            per_user,
        }
    }

    /// The same evaluation cut at a smaller K. Tournament and sort-based
    /// rankings are prefix-stable, so this equals evaluating at `k` directly.
    pub fn truncated(&self, k: usize) -> Result<EvalReport> {
        if k == 0 || k > self.k {
            return Err(Error::InvalidArgument(format!("cannot truncate K={} report to K={k}", self.k)));
        }
        let per_user = self
            .per_user
            .iter()
            .map(|u| UserRank {
                user: u.user,
                rank: u.rank.filter(|&r| r <= k),
            })
            .collect();
        Ok(EvalReport::from_ranks(k, self.seed, per_user))
    }
}

/// One row of the sweep CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub model: String,
    pub factors: usize,
    pub ratio: usize,
    pub k: usize,
    pub hr: f64,
    pub ndcg: f64,
}

impl SummaryRow {
    pub const CSV_HEADER: &'static str = "model,factors,ratio,k,hr,ndcg";

    pub fn to_csv(&self) -> String {
        format!("{},{},{},{},{:.6},{:.6}", self.model, self.factors, self.ratio, self.k, self.hr, self.ndcg)
    }
}

/// Ranks each user's held-out item among `cfg.negatives` sampled items.
pub fn evaluate<R: Recommender + ?Sized>(
    recommender: &R,
    split: &SplitDataset,
    target: Target,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    if cfg.k == 0 {
        return Err(Error::InvalidArgument("K must be >= 1".into()));
    }
    let held_out = target.held_out(split);
    let rank_user = |user: UserId| -> Result<UserRank> {
        let item = held_out[user].item;
        let mut candidates = sample_eval_negatives(split, user, cfg.negatives, cfg.seed);
        candidates.push(item);
        let ranked = recommender.recommend(user, &candidates, cfg.k)?;
        Ok(UserRank {
            user,
            rank: ranked.rank_of(item),
        })
    };
    let users = 0..split.num_users();
    let per_user: Vec<UserRank> = match cfg.threads {
        1 => users.map(rank_user).collect::<Result<_>>()?,
        0 => users.into_par_iter().map(rank_user).collect::<Result<_>>()?,
        n => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?
            .install(|| users.into_par_iter().map(rank_user).collect::<Result<_>>())?,
    };
    Ok(EvalReport::from_ranks(cfg.k, cfg.seed, per_user))
}
