//! Rating-log ingestion, filtering, leave-one-out splitting and sampling.

mod io;
mod sampling;
mod split;
pub mod synthetic;

pub use io::{load_interactions, load_interactions_from_path, load_split, save_split, Format};
pub use sampling::{sample_eval_negatives, sample_triplets, LabeledTriplet};
pub use split::{leave_one_out_split, HeldOut, SplitDataset};

use std::cmp::Ordering;
use std::collections::HashMap;

use log::debug;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{ItemId, UserId};

/// Default minimum number of interactions per user and per item.
pub const DEFAULT_MIN_COUNT: usize = 10;

/// One line of a rating log. The rating value itself is dropped on load.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RawInteraction {
    pub user: String,
    pub item: String,
    pub timestamp: u64,
}

impl RawInteraction {
    pub fn new(user: impl Into<String>, item: impl Into<String>, timestamp: u64) -> Self {
        RawInteraction {
            user: user.into(),
            item: item.into(),
            timestamp,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub item: ItemId,
    pub timestamp: u64,
}

/// Deduplicated implicit-feedback matrix with dense internal ids.
///
/// Each user's interactions are kept in timeline order: ascending timestamp,
/// ties broken by ascending internal item id.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionSet {
    user_ids: Vec<String>,
    item_ids: Vec<String>,
    timelines: Vec<Vec<Interaction>>,
    // per-user item ids sorted ascending, for membership tests
    members: Vec<Vec<ItemId>>,
}

impl InteractionSet {
    /// Builds a set from per-user timelines over an existing id universe.
    pub fn from_timelines(
        user_ids: Vec<String>,
        item_ids: Vec<String>,
        mut timelines: Vec<Vec<Interaction>>,
    ) -> Result<Self> {
        if timelines.len() != user_ids.len() {
            return Err(Error::Data(format!(
                "{} timelines for {} users",
                timelines.len(),
                user_ids.len()
            )));
        }
        let n = item_ids.len();
        let mut members = Vec::with_capacity(timelines.len());
        for (u, timeline) in timelines.iter_mut().enumerate() {
            timeline.sort_by(timeline_order);
            let mut items: Vec<ItemId> = timeline.iter().map(|x| x.item).collect();
            items.sort_unstable();
            if let Some(&last) = items.last() {
                if last >= n {
                    return Err(Error::Index {
                        kind: "item",
                        index: last,
                        size: n,
                    });
                }
            }
            if items.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::Data(format!("duplicate interaction for user {u}")));
            }
            members.push(items);
        }
        Ok(InteractionSet {
            user_ids,
            item_ids,
            timelines,
            members,
        })
    }

    pub fn num_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn num_interactions(&self) -> usize {
        self.timelines.iter().map(Vec::len).sum()
    }

    /// Fraction of the user-item matrix that is observed.
    pub fn density(&self) -> f64 {
        let cells = self.num_users() as f64 * self.num_items() as f64;
        if cells == 0.0 {
            0.0
        } else {
            self.num_interactions() as f64 / cells
        }
    }

    /// The user's interactions in timeline order.
    pub fn timeline(&self, user: UserId) -> &[Interaction] {
        &self.timelines[user]
    }

    /// `I_u^+` as item ids sorted ascending.
    pub fn items_of(&self, user: UserId) -> &[ItemId] {
        &self.members[user]
    }

    pub fn contains(&self, user: UserId, item: ItemId) -> bool {
        self.members[user].binary_search(&item).is_ok()
    }

    pub fn user_ids(&self) -> &[String] {
        &self.user_ids
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn user_index(&self, external: &str) -> Option<UserId> {
        self.user_ids.iter().position(|u| u == external)
    }

    /// Iterates `(user, interaction)` pairs, user-major, timeline order.
    pub fn iter(&self) -> impl Iterator<Item = (UserId, Interaction)> + '_ {
        self.timelines
            .iter()
            .enumerate()
            .flat_map(|(u, t)| t.iter().map(move |x| (u, *x)))
    }

    /// Number of interactions per item.
    pub fn item_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_items()];
        for (_, x) in self.iter() {
            counts[x.item] += 1;
        }
        counts
    }

    /// Re-expresses the set as raw interactions with external ids.
    pub fn to_raw(&self) -> Vec<RawInteraction> {
        self.iter()
            .map(|(u, x)| RawInteraction {
                user: self.user_ids[u].clone(),
                item: self.item_ids[x.item].clone(),
                timestamp: x.timestamp,
            })
            .collect()
    }
}

fn timeline_order(a: &Interaction, b: &Interaction) -> Ordering {
    a.timestamp.cmp(&b.timestamp).then(a.item.cmp(&b.item))
}

/// Sort key for external ids: numeric ids in numeric order, then the rest
/// lexicographically.
#[derive(PartialEq, Eq, PartialOrd, Ord)]
enum IdKey<'a> {
    Numeric(u64, &'a str),
    Text(&'a str),
}

fn id_key(id: &str) -> IdKey<'_> {
    match id.parse::<u64>() {
        Ok(v) => IdKey::Numeric(v, id),
        Err(_) => IdKey::Text(id),
    }
}

/// Collapses duplicates, drops users and items with fewer than `min_count`
/// interactions until no more can be dropped, and assigns dense ids.
///
/// Duplicate `(user, item)` pairs keep their earliest timestamp. Surviving
/// external ids are numbered in natural order (numeric ids numerically).
pub fn filter_and_remap(raw: &[RawInteraction], min_count: usize) -> Result<InteractionSet> {
    if min_count == 0 {
        return Err(Error::InvalidArgument("min_count must be >= 1".into()));
    }

    let mut users: HashMap<&str, usize> = HashMap::new();
    let mut items: HashMap<&str, usize> = HashMap::new();
    let mut user_names: Vec<&str> = Vec::new();
    let mut item_names: Vec<&str> = Vec::new();
    let mut first_seen: HashMap<(usize, usize), u64> = HashMap::with_capacity(raw.len());
    for r in raw {
        let u = *users.entry(r.user.as_str()).or_insert_with(|| {
            user_names.push(r.user.as_str());
            user_names.len() - 1
        });
        let i = *items.entry(r.item.as_str()).or_insert_with(|| {
            item_names.push(r.item.as_str());
            item_names.len() - 1
        });
        first_seen
            .entry((u, i))
            .and_modify(|ts| *ts = (*ts).min(r.timestamp))
            .or_insert(r.timestamp);
    }
    let mut edges: Vec<(usize, usize, u64)> =
        first_seen.into_iter().map(|((u, i), ts)| (u, i, ts)).collect();
    edges.sort_unstable();

    let mut rounds = 0;
    loop {
        let mut user_count = vec![0usize; user_names.len()];
        let mut item_count = vec![0usize; item_names.len()];
        for &(u, i, _) in &edges {
            user_count[u] += 1;
            item_count[i] += 1;
        }
        let before = edges.len();
        edges.retain(|&(u, i, _)| user_count[u] >= min_count && item_count[i] >= min_count);
        rounds += 1;
        if edges.len() == before {
            break;
        }
    }
    debug!("filtering reached a fixed point after {rounds} rounds");
    if edges.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let mut live_users: Vec<usize> = edges.iter().map(|e| e.0).collect();
    live_users.sort_unstable();
    live_users.dedup();
    let mut live_items: Vec<usize> = edges.iter().map(|e| e.1).collect();
    live_items.sort_unstable();
    live_items.dedup();
    live_users.sort_by(|&a, &b| id_key(user_names[a]).cmp(&id_key(user_names[b])));
    live_items.sort_by(|&a, &b| id_key(item_names[a]).cmp(&id_key(item_names[b])));

    let mut user_map = vec![usize::MAX; user_names.len()];
    for (dense, &tmp) in live_users.iter().enumerate() {
        user_map[tmp] = dense;
    }
    let mut item_map = vec![usize::MAX; item_names.len()];
    for (dense, &tmp) in live_items.iter().enumerate() {
        item_map[tmp] = dense;
    }

    let mut timelines = vec![Vec::new(); live_users.len()];
    for (u, i, ts) in edges {
        timelines[user_map[u]].push(Interaction {
            item: item_map[i],
            timestamp: ts,
        });
    }
    InteractionSet::from_timelines(
        live_users.iter().map(|&u| user_names[u].to_string()).collect(),
        live_items.iter().map(|&i| item_names[i].to_string()).collect(),
        timelines,
    )
}
