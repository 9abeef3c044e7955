//! The pairwise predictive rule and tournament top-K selection.
//!
//! A pairwise model cannot be ranked by sorting one score per item, so
//! `i` beats `j` for user `u` when `ŷ_uij > ŷ_uji`. [`top_k`] runs K passes
//! over the remaining candidates, each keeping a running winner under that
//! rule. Candidates are scanned in ascending item-id order, which fixes the
//! result even when a model's preferences are not transitive.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::PairwiseModel;
use crate::numerics::RngSeed;
use crate::{ItemId, UserId};

/// Items for one user, most preferred first.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedList {
    pub user: UserId,
    pub items: Vec<ItemId>,
}

impl RankedList {
    /// 1-based rank of `item`, if present.
    pub fn rank_of(&self, item: ItemId) -> Option<usize> {
        self.items.iter().position(|&x| x == item).map(|p| p + 1)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// One JSON line, `{"user":…,"items":[…]}`.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("plain struct serialises")
    }
}

/// Anything that can produce a top-K list from a candidate set.
pub trait Recommender: Sync {
    fn recommend(&self, user: UserId, candidates: &[ItemId], k: usize) -> Result<RankedList>;
}

/// Adapts a [`PairwiseModel`] to [`Recommender`] through [`top_k`].
pub struct Tournament<M>(pub M);

impl<M: PairwiseModel> Recommender for Tournament<M> {
    fn recommend(&self, user: UserId, candidates: &[ItemId], k: usize) -> Result<RankedList> {
        top_k(&self.0, user, candidates, k)
    }
}

/// True iff `u` prefers `i` to `j`: `ŷ_uij > ŷ_uji`, exact ties going to
/// the smaller item id.
pub fn prefer<M: PairwiseModel + ?Sized>(model: &M, user: UserId, i: ItemId, j: ItemId) -> Result<bool> {
    if i == j {
        return Err(Error::InvalidArgument(format!("cannot compare item {i} with itself")));
    }
    let forward = model.predict(user, i, j)?;
    let backward = model.predict(user, j, i)?;
    Ok(if forward == backward { i < j } else { forward > backward })
}

/// Validates a candidate list and returns it sorted ascending.
pub(crate) fn sorted_candidates(candidates: &[ItemId], k: usize) -> Result<Vec<ItemId>> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("empty candidate set".into()));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("K must be >= 1".into()));
    }
    let mut sorted = candidates.to_vec();
    sorted.sort_unstable();
    if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::InvalidArgument(format!("duplicate candidate {}", w[0])));
    }
    if k > sorted.len() {
        warn!("K = {k} exceeds the {} candidates; ranking all of them", sorted.len());
    }
    Ok(sorted)
}

/// Tournament top-K: each of the `min(K, |candidates|)` passes scans the
/// not-yet-selected candidates in ascending id order, replacing the running
/// winner `w` by `j` whenever `ŷ_ujw > ŷ_uwj`.
pub fn top_k<M: PairwiseModel + ?Sized>(model: &M, user: UserId, candidates: &[ItemId], k: usize) -> Result<RankedList> {
    let pool = sorted_candidates(candidates, k)?;
    let passes = k.min(pool.len());
    let mut taken = vec![false; pool.len()];
    let mut items = Vec::with_capacity(passes);
    for _ in 0..passes {
        let mut remaining = (0..pool.len()).filter(|&p| !taken[p]);
        let mut best = remaining.next().expect("a candidate remains");
        for p in remaining {
            let challenger = pool[p];
            let holder = pool[best];
            if model.predict(user, challenger, holder)? > model.predict(user, holder, challenger)? {
                best = p;
            }
        }
        taken[best] = true;
        items.push(pool[best]);
    }
    Ok(RankedList { user, items })
}

/// Counts ordered triples `(i, j, k)` of distinct items from `items` with
/// `i > j`, `j > k` but not `i > k`, over `sample_count` uniform draws.
pub fn transitivity_audit<M: PairwiseModel + ?Sized>(
    model: &M,
    user: UserId,
    items: &[ItemId],
    sample_count: usize,
    seed: RngSeed,
) -> Result<usize> {
    check_audit_pool(items)?;
    let mut rng = seed.rng();
    let n = items.len();
    let mut violations = 0;
    for _ in 0..sample_count {
        let a = rng.below(n);
        let b = (a + 1 + rng.below(n - 1)) % n;
        let c = loop {
            let c = rng.below(n);
            if c != a && c != b {
                break c;
            }
        };
        let (i, j, k) = (items[a], items[b], items[c]);
        if prefer(model, user, i, j)? && prefer(model, user, j, k)? && !prefer(model, user, i, k)? {
            violations += 1;
        }
    }
    Ok(violations)
}

/// Exhaustive variant of [`transitivity_audit`] over every ordered triple of
/// distinct items.
pub fn transitivity_audit_exhaustive<M: PairwiseModel + ?Sized>(model: &M, user: UserId, items: &[ItemId]) -> Result<usize> {
    check_audit_pool(items)?;
    let n = items.len();
    let mut wins = vec![false; n * n];
    for a in 0..n {
        for b in 0..n {
            if a != b {
                wins[a * n + b] = prefer(model, user, items[a], items[b])?;
            }
        }
    }
    let mut violations = 0;
    for a in 0..n {
        for b in 0..n {
            if a == b || !wins[a * n + b] {
                continue;
            }
            for c in 0..n {
                if c != a && c != b && wins[b * n + c] && !wins[a * n + c] {
                    violations += 1;
                }
            }
        }
    }
    Ok(violations)
}

fn check_audit_pool(items: &[ItemId]) -> Result<()> {
    if items.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "transitivity audit needs at least 3 items, got {}",
            items.len()
        )));
    }
    let mut sorted = items.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidArgument("duplicate items in audit pool".into()));
    }
    Ok(())
}
