//! Training-triplet and evaluation-negative samplers.
//!
//! The positive preference set `D_S` and its mirror are never materialised;
//! each epoch draws from them uniformly through [`sample_triplets`].

use log::warn;
use serde::{Deserialize, Serialize};

use super::{InteractionSet, SplitDataset};
use crate::numerics::{Rng, RngSeed};
use crate::{ItemId, UserId};

/// A labelled `(u, i, j)` triplet. `label == 1` means `i` is the observed
/// item; `label == 0` is the mirrored orientation with `j` observed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LabeledTriplet {
    pub user: UserId,
    pub i: ItemId,
    pub j: ItemId,
    pub label: u8,
}

impl LabeledTriplet {
    pub fn positive(user: UserId, observed: ItemId, unobserved: ItemId) -> Self {
        LabeledTriplet {
            user,
            i: observed,
            j: unobserved,
            label: 1,
        }
    }

    /// The `(i, j)`-swapped triplet with the opposite label.
    pub fn mirrored(self) -> Self {
        LabeledTriplet {
            user: self.user,
            i: self.j,
            j: self.i,
            label: 1 - self.label,
        }
    }

    pub fn target(&self) -> f64 {
        f64::from(self.label)
    }
}

/// Uniform draw from `0..n` excluding the sorted `excluded` ids.
/// Requires `excluded.len() < n`.
pub(crate) fn sample_outside(rng: &mut Rng, n: usize, excluded: &[ItemId]) -> ItemId {
    debug_assert!(excluded.len() < n);
    if excluded.len() * 2 <= n {
        loop {
            let j = rng.below(n);
            if excluded.binary_search(&j).is_err() {
                return j;
            }
        }
    }
    // dense user: pick the k-th free id directly
    let mut k = rng.below(n - excluded.len());
    let mut candidate = 0;
    for &e in excluded {
        if candidate + k < e {
            break;
        }
        k -= e - candidate;
        candidate = e + 1;
    }
    candidate + k
}

/// One epoch of labelled triplets.
///
/// For every observed `(u, i)` in `train` and each of `ratio` draws, an item
/// `j` is sampled uniformly from the items `u` has not interacted with in
/// `train`; the epoch contains `(u, i, j, 1)` and its mirror `(u, j, i, 0)`.
/// The result is shuffled. Users who interacted with every item are skipped.
pub fn sample_triplets(train: &InteractionSet, ratio: usize, seed: RngSeed) -> Vec<LabeledTriplet> {
    let n = train.num_items();
    let mut rng = seed.rng();
    let mut out = Vec::with_capacity(2 * ratio * train.num_interactions());
    for u in 0..train.num_users() {
        let positives = train.items_of(u);
        if positives.is_empty() {
            continue;
        }
        if positives.len() >= n {
            warn!("user {u} interacted with every item; no triplets sampled");
            continue;
        }
        for x in train.timeline(u) {
            for _ in 0..ratio {
                let j = sample_outside(&mut rng, n, positives);
                let t = LabeledTriplet::positive(u, x.item, j);
                out.push(t);
                out.push(t.mirrored());
            }
        }
    }
    rng.shuffle(&mut out);
    out
}

/// `count` distinct items the user never interacted with (train, validation
/// or test), deterministic in `(seed, user)`.
///
/// If fewer than `count` such items exist, all of them are returned in
/// ascending order.
pub fn sample_eval_negatives(data: &SplitDataset, user: UserId, count: usize, seed: RngSeed) -> Vec<ItemId> {
    let n = data.num_items();
    let mut excluded: Vec<ItemId> = data.train.items_of(user).to_vec();
    excluded.push(data.validation[user].item);
    excluded.push(data.test[user].item);
    excluded.sort_unstable();
    excluded.dedup();
    let available = n - excluded.len();
    if available <= count {
        if available < count {
            warn!("user {user}: only {available} candidate negatives, wanted {count}");
        }
        return (0..n).filter(|i| excluded.binary_search(i).is_err()).collect();
    }
    let mut rng = seed.derive(user as u64).rng();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let j = sample_outside(&mut rng, n, &excluded);
        let pos = excluded.binary_search(&j).unwrap_err();
        excluded.insert(pos, j);
        out.push(j);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::{planted_blocks, PlantedBlocks};
    use crate::data::{filter_and_remap, leave_one_out_split, RawInteraction};
    use std::collections::HashMap;

    fn fixture() -> SplitDataset {
        planted_blocks(&PlantedBlocks::default()).unwrap()
    }

    #[test]
    fn sample_outside_covers_complement_uniformly() {
        let excluded = vec![0, 2, 3, 5, 6, 7];
        let mut rng = RngSeed(1).rng();
        let mut hits = HashMap::new();
        for _ in 0..4000 {
            *hits.entry(sample_outside(&mut rng, 10, &excluded)).or_insert(0usize) += 1;
        }
        let mut keys: Vec<_> = hits.keys().copied().collect();
        keys.sort();
        assert_eq!(keys, vec![1, 4, 8, 9]);
        assert!(hits.values().all(|&c| c > 850 && c < 1150), "{hits:?}");
    }

    #[test]
    fn epoch_size_and_balance() {
        let split = fixture();
        let train = &split.train;
        for ratio in [1, 4] {
            let epoch = sample_triplets(train, ratio, RngSeed(3));
            assert_eq!(epoch.len(), 2 * ratio * train.num_interactions());
            let pos = epoch.iter().filter(|t| t.label == 1).count();
            assert_eq!(pos * 2, epoch.len());
            for t in &epoch {
                let (obs, unobs) = if t.label == 1 { (t.i, t.j) } else { (t.j, t.i) };
                assert!(train.contains(t.user, obs));
                assert!(!train.contains(t.user, unobs));
            }
        }
    }

    #[test]
    fn ratio_four_on_thousand_interactions() {
        let mut raw = Vec::new();
        for u in 0..100 {
            for k in 0..10 {
                raw.push(RawInteraction::new(u.to_string(), ((u + k * 7) % 60).to_string(), k as u64));
            }
        }
        let set = filter_and_remap(&raw, 1).unwrap();
        assert_eq!(set.num_interactions(), 1000);
        assert_eq!(sample_triplets(&set, 4, RngSeed(0)).len(), 8000);
    }

    #[test]
    fn negatives_are_mirrors_of_positives() {
        let split = fixture();
        let epoch = sample_triplets(&split.train, 2, RngSeed(8));
        let mut pos: Vec<_> = epoch.iter().filter(|t| t.label == 1).copied().collect();
        let mut neg: Vec<_> = epoch.iter().filter(|t| t.label == 0).map(|t| t.mirrored()).collect();
        pos.sort();
        neg.sort();
        assert_eq!(pos, neg);
    }

    #[test]
    fn saturated_user_is_skipped() {
        let raw = vec![
            RawInteraction::new("a", "x", 1),
            RawInteraction::new("a", "y", 2),
            RawInteraction::new("b", "x", 1),
        ];
        let set = filter_and_remap(&raw, 1).unwrap();
        let epoch = sample_triplets(&set, 3, RngSeed(1));
        assert_eq!(epoch.len(), 6);
        assert!(epoch.iter().all(|t| t.user == 1));
    }

    #[test]
    fn eval_negatives_contract() {
        let mut raw = Vec::new();
        for u in 0..3 {
            for k in 0..12 {
                raw.push(RawInteraction::new(u.to_string(), (u * 5 + k * 3).to_string(), k as u64));
            }
            for k in 0..200 {
                // filler users so that the item universe is large
                raw.push(RawInteraction::new(format!("f{k}"), k.to_string(), 0));
                raw.push(RawInteraction::new(format!("f{k}"), (k + 1).to_string(), 1));
                raw.push(RawInteraction::new(format!("f{k}"), (k + 2).to_string(), 2));
            }
        }
        let split = leave_one_out_split(filter_and_remap(&raw, 1).unwrap()).unwrap();
        for u in 0..split.num_users() {
            let neg = sample_eval_negatives(&split, u, 100, RngSeed(5));
            assert_eq!(neg.len(), 100);
            let mut sorted = neg.clone();
            sorted.sort();
            sorted.dedup();
            assert_eq!(sorted.len(), 100);
            assert!(neg.iter().all(|&i| !split.is_known(u, i)));
            assert_eq!(neg, sample_eval_negatives(&split, u, 100, RngSeed(5)));
        }
        assert_ne!(
            sample_eval_negatives(&split, 0, 100, RngSeed(5)),
            sample_eval_negatives(&split, 0, 100, RngSeed(6))
        );
    }

    #[test]
    fn eval_negatives_short_pool_returns_everything() {
        let split = fixture();
        let neg = sample_eval_negatives(&split, 0, 100, RngSeed(1));
        let expected = split.num_items() - split.train.items_of(0).len() - 2;
        assert_eq!(neg.len(), expected);
        assert!(neg.windows(2).all(|w| w[0] < w[1]));
    }
}
