//! Deterministic synthetic datasets for tests and smoke runs.

use super::{filter_and_remap, leave_one_out_split, RawInteraction, SplitDataset};
use crate::error::Result;
use crate::numerics::RngSeed;

/// Two user groups, each with its own block of items, plus a shared pool of
/// background items.
///
/// Users in the first half belong to block 0 (items `0..block_size`), the rest
/// to block 1 (items `block_size..2 * block_size`). Every user has
/// `block_interactions` distinct items from their own block and
/// `background_interactions` items from the background pool (ids from
/// `2 * block_size` on), assigned round-robin so background popularity is
/// flat. Background interactions carry the earliest timestamps, so the
/// held-out validation and test items always come from the user's block.
#[derive(Clone, Debug)]
pub struct PlantedBlocks {
    pub users: usize,
    pub block_size: usize,
    pub background_items: usize,
    pub block_interactions: usize,
    pub background_interactions: usize,
    pub seed: RngSeed,
}

impl Default for PlantedBlocks {
    /// 200 users, 100 items, 20 interactions per user.
    fn default() -> Self {
        PlantedBlocks {
            users: 200,
            block_size: 25,
            background_items: 50,
            block_interactions: 17,
            background_interactions: 3,
            seed: RngSeed(20180101),
        }
    }
}

impl PlantedBlocks {
    /// 10 users, 10 items in two blocks of five; every user has their whole
    /// block, so observed and unobserved items are perfectly separable.
    pub fn tiny() -> Self {
        PlantedBlocks {
            users: 10,
            block_size: 5,
            background_items: 0,
            block_interactions: 5,
            background_interactions: 0,
            seed: RngSeed(7),
        }
    }

    pub fn block_of_user(&self, user: usize) -> usize {
        usize::from(user >= self.users / 2)
    }

    pub fn raw(&self) -> Vec<RawInteraction> {
        assert!(self.block_interactions <= self.block_size);
        assert!(self.background_interactions <= self.background_items);
        let mut rng = self.seed.rng();
        let mut out = Vec::new();
        for u in 0..self.users {
            let mut ts = 0u64;
            for t in 0..self.background_interactions {
                let item = 2 * self.block_size + (u * self.background_interactions + t) % self.background_items;
                out.push(RawInteraction::new(u.to_string(), item.to_string(), ts));
                ts += 1;
            }
            let base = self.block_of_user(u) * self.block_size;
            let mut block: Vec<usize> = (base..base + self.block_size).collect();
            rng.shuffle(&mut block);
            for &item in &block[..self.block_interactions] {
                out.push(RawInteraction::new(u.to_string(), item.to_string(), ts));
                ts += 1;
            }
        }
        out
    }
}

pub fn planted_blocks(cfg: &PlantedBlocks) -> Result<SplitDataset> {
    leave_one_out_split(filter_and_remap(&cfg.raw(), 1)?)
}

/// Users with `per_user` distinct uniformly random items and random order.
pub fn random_split(users: usize, items: usize, per_user: usize, seed: RngSeed) -> Result<SplitDataset> {
    let mut rng = seed.rng();
    let mut raw = Vec::with_capacity(users * per_user);
    let mut pool: Vec<usize> = (0..items).collect();
    for u in 0..users {
        for k in 0..per_user {
            let pick = k + rng.below(items - k);
            pool.swap(k, pick);
            raw.push(RawInteraction::new(u.to_string(), pool[k].to_string(), k as u64));
        }
    }
    leave_one_out_split(filter_and_remap(&raw, 1)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_fixture_shape() {
        let cfg = PlantedBlocks::default();
        let split = planted_blocks(&cfg).unwrap();
        assert_eq!(split.num_users(), 200);
        assert_eq!(split.num_items(), 100);
        assert_eq!(split.num_interactions(), 200 * 20);
        for u in 0..200 {
            let lo = cfg.block_of_user(u) * cfg.block_size;
            let own = lo..lo + cfg.block_size;
            assert!(own.contains(&split.test[u].item));
            assert!(own.contains(&split.validation[u].item));
        }
        assert!(split.train.item_counts()[50..].iter().all(|&c| c == 12));
    }

    #[test]
    fn tiny_fixture_shape() {
        let split = planted_blocks(&PlantedBlocks::tiny()).unwrap();
        assert_eq!((split.num_users(), split.num_items()), (10, 10));
        assert_eq!(split.train.num_interactions(), 30);
    }

    #[test]
    fn random_split_is_deterministic() {
        let a = random_split(50, 40, 6, RngSeed(2)).unwrap();
        let b = random_split(50, 40, 6, RngSeed(2)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.train.num_interactions(), 50 * 4);
    }
}
