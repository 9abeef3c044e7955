use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Interaction, InteractionSet};
use crate::error::{Error, Result};
use crate::{ItemId, UserId};

/// A held-out interaction (validation or test) for one user.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeldOut {
    pub item: ItemId,
    pub timestamp: u64,
}

/// Leave-one-out split: per user, the latest interaction is the test item,
/// the second latest the validation item, and the rest is training data.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitDataset {
    pub train: InteractionSet,
    /// Indexed by user.
    pub validation: Vec<HeldOut>,
    /// Indexed by user.
    pub test: Vec<HeldOut>,
}

impl SplitDataset {
    pub fn new(train: InteractionSet, validation: Vec<HeldOut>, test: Vec<HeldOut>) -> Result<Self> {
        let m = train.num_users();
        if validation.len() != m || test.len() != m {
            return Err(Error::Data(format!(
                "held-out sets cover {} / {} users, train has {m}",
                validation.len(),
                test.len()
            )));
        }
        for u in 0..m {
            let (v, t) = (validation[u].item, test[u].item);
            if v == t || train.contains(u, v) || train.contains(u, t) {
                return Err(Error::Data(format!("held-out items of user {u} overlap")));
            }
        }
        Ok(SplitDataset {
            train,
            validation,
            test,
        })
    }

    pub fn num_users(&self) -> usize {
        self.train.num_users()
    }

    pub fn num_items(&self) -> usize {
        self.train.num_items()
    }

    /// True if the user interacted with the item anywhere in the split.
    pub fn is_known(&self, user: UserId, item: ItemId) -> bool {
        self.train.contains(user, item) || self.validation[user].item == item || self.test[user].item == item
    }

    /// Total interactions across train, validation and test.
    pub fn num_interactions(&self) -> usize {
        self.train.num_interactions() + 2 * self.num_users()
    }

    /// Short content hash identifying the split, stored in model headers.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.num_users() as u64).to_le_bytes());
        h.update((self.num_items() as u64).to_le_bytes());
        for (u, x) in self.train.iter() {
            h.update((u as u64).to_le_bytes());
            h.update((x.item as u64).to_le_bytes());
        }
        for held in [&self.validation, &self.test] {
            for x in held.iter() {
                h.update((x.item as u64).to_le_bytes());
            }
        }
        h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Splits every user's timeline (ascending timestamp, ties by ascending item
/// id) into train / validation / test.
pub fn leave_one_out_split(data: InteractionSet) -> Result<SplitDataset> {
    let m = data.num_users();
    let mut validation = Vec::with_capacity(m);
    let mut test = Vec::with_capacity(m);
    let mut timelines = Vec::with_capacity(m);
    for u in 0..m {
        let timeline = data.timeline(u);
        if timeline.len() < 3 {
            return Err(Error::Data(format!(
                "user {} has {} interactions; leave-one-out needs at least 3",
                data.user_ids()[u],
                timeline.len()
            )));
        }
        let k = timeline.len();
        let hold = |x: &Interaction| HeldOut {
            item: x.item,
            timestamp: x.timestamp,
        };
        test.push(hold(&timeline[k - 1]));
        validation.push(hold(&timeline[k - 2]));
        timelines.push(timeline[..k - 2].to_vec());
    }
    let train = InteractionSet::from_timelines(data.user_ids().to_vec(), data.item_ids().to_vec(), timelines)?;
    SplitDataset::new(train, validation, test)
}
