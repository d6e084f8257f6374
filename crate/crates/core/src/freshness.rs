//! Freshness of a served list against recent history, and the
//! threshold-driven re-ranking loop built on it.
//!
//! Freshness is the fraction of a served list that does not appear in the
//! history: `|R \ A| / t`. Two histories are supported. [`RecWindow`] keeps
//! the sets served in the last `k` calls. [`MetricHistory`] accumulates every
//! served product and is cleared every `max_decay_count` calls.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ProductId, RecWindow, RecommendationList, UserId};

/// Anything that can answer "was this product served recently?".
pub trait History {
    fn contains_product(&self, id: &ProductId) -> bool;
}

impl History for BTreeSet<ProductId> {
    fn contains_product(&self, id: &ProductId) -> bool {
        self.contains(id)
    }
}

impl History for HashSet<ProductId> {
    fn contains_product(&self, id: &ProductId) -> bool {
        self.contains(id)
    }
}

impl History for RecWindow {
    fn contains_product(&self, id: &ProductId) -> bool {
        self.contains(id)
    }
}

impl History for MetricHistory {
    fn contains_product(&self, id: &ProductId) -> bool {
        self.seen.contains(id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricConfig {
    /// Calls retained by the sliding window.
    pub window_capacity: usize,
    pub freshness_threshold: f64,
    /// Calls after which the accumulated history is cleared.
    pub max_decay_count: u32,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            window_capacity: 5,
            freshness_threshold: 0.5,
            max_decay_count: 10,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_capacity < 1 {
            return Err(Error::InvalidWindowCapacity(self.window_capacity));
        }
        if !(0.0..=1.0).contains(&self.freshness_threshold) {
            return Err(Error::InvalidConfig(format!(
                "freshness_threshold must be in [0, 1], got {}",
                self.freshness_threshold
            )));
        }
        if self.max_decay_count < 1 {
            return Err(Error::InvalidConfig("max_decay_count must be >= 1".into()));
        }
        Ok(())
    }
}

/// Accumulated served set plus the number of calls folded into it.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricHistory {
    pub seen: BTreeSet<ProductId>,
    pub count: u32,
}

impl MetricHistory {
    /// Folds a served set in, or clears everything once `max_decay_count`
    /// calls have accumulated. The served set is dropped on the clearing call.
    pub fn record<'a>(&mut self, served: impl IntoIterator<Item = &'a ProductId>, max_decay_count: u32) {
        if self.count < max_decay_count {
            self.seen.extend(served.into_iter().cloned());
            self.count += 1;
        } else {
            self.seen.clear();
            self.count = 0;
        }
    }
}

fn unseen_count(items: &[ProductId], history: &(impl History + ?Sized)) -> usize {
    items.iter().filter(|id| !history.contains_product(id)).count()
}

/// `|items \ history| / len(items)`.
pub fn compute_freshness(items: &[ProductId], history: &(impl History + ?Sized)) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::EmptyList);
    }
    Ok(unseen_count(items, history) as f64 / items.len() as f64)
}

/// Appends a served set, evicting the oldest beyond capacity.
pub fn push_window(window: &mut RecWindow, served: BTreeSet<ProductId>) {
    window.push(served);
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricOutcome {
    pub list: RecommendationList,
    /// Freshness of `list` against the history before this call.
    pub freshness: f64,
    pub replacements: usize,
    /// The threshold was not reached because no unseen candidates remained.
    pub exhausted: bool,
}

/// Serves the top `t` of `ranked`, then while freshness is below the
/// threshold swaps the lowest-ranked already-seen member for the next unseen
/// candidate. The result keeps candidate order. Afterwards the served set is
/// folded into `history`.
pub fn metric_feedback_recommend(
    ranked: &RecommendationList,
    history: &mut MetricHistory,
    config: &MetricConfig,
    t: usize,
) -> Result<MetricOutcome> {
    if t < 1 {
        return Err(Error::InvalidConfig("t must be >= 1".into()));
    }
    if ranked.is_empty() {
        return Err(Error::EmptyList);
    }
    let items = ranked.items();
    let stale = |i: usize| history.seen.contains(&items[i]);

    let mut chosen: Vec<usize> = (0..t.min(items.len())).collect();
    let mut fresh = chosen.iter().filter(|&&i| !stale(i)).count();
    let mut next = chosen.len();
    let mut replacements = 0;
    let mut exhausted = false;
    let len = chosen.len() as f64;

    while (fresh as f64 / len) < config.freshness_threshold {
        let Some(incoming) = (next..items.len()).find(|&i| !stale(i)) else {
            exhausted = true;
            break;
        };
        let slot = chosen
            .iter()
            .rposition(|&i| stale(i))
            .expect("freshness below 1 implies a stale member");
        chosen[slot] = incoming;
        chosen.sort_unstable();
        fresh += 1;
        replacements += 1;
        next = incoming + 1;
    }

    let list_items: Vec<ProductId> = chosen.iter().map(|&i| items[i].clone()).collect();
    let scores = chosen.iter().map(|&i| ranked.scores()[i]).collect();
    let mut list = RecommendationList::from_parts_unchecked(list_items, scores);
    list.truncated = chosen.len() < t;
    let freshness = fresh as f64 / len;

    history.record(list.items(), config.max_decay_count);
    Ok(MetricOutcome {
        list,
        freshness,
        replacements,
        exhausted,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WindowMode {
    /// Flat accumulated set with count-based reset.
    #[serde(rename = "alg3_set")]
    AccumulatedSet,
    /// Union of the last `k` served sets.
    #[serde(rename = "sliding_k")]
    SlidingK,
}

/// One line of the per-call metric report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreshnessRecord {
    pub user_id: UserId,
    pub call_index: u64,
    pub freshness: f64,
    pub window_mode: WindowMode,
    pub replacements_made: usize,
    pub exhausted: bool,
}
