//! Negative-feedback serving loop: relevance minus per-user negative weights,
//! top-t serving, dwell-driven penalties and the four weight decay policies.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    EventKind, EventRecord, Inventory, ProductId, RecommendationList, ScoreKind, ScoreVector,
    UserSessionState, BASELINE_WEIGHT,
};

pub const SECONDS_PER_DAY: i64 = 86_400;

/// Rule that puts negative weights back at the baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "DecayPolicyRepr", into = "DecayPolicyRepr")]
pub enum DecayPolicy {
    /// Reset a single weight once it is older than `max_age_days`.
    PerNodeAge { max_age_days: u32 },
    /// Reset a single weight once it has suppressed its product more than
    /// `suppression_limit` times.
    PerNodeSuppression { suppression_limit: u32 },
    /// Reset every weight after `reset_after_serves` serves.
    FullResetByServes { reset_after_serves: u64 },
    /// Reset every weight once the oldest non-baseline weight is older than
    /// `max_age_days`.
    FullResetByAge { max_age_days: u32 },
}

impl DecayPolicy {
    pub fn validate(&self) -> Result<()> {
        let parameter = DecayPolicyRepr::from(*self).parameter;
        if parameter < 1 {
            return Err(Error::InvalidConfig(format!(
                "decay parameter must be >= 1, got {parameter}"
            )));
        }
        Ok(())
    }
}

impl Default for DecayPolicy {
    fn default() -> Self {
        DecayPolicy::PerNodeAge { max_age_days: 7 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
enum DecayVariant {
    PerNodeAge,
    PerNodeSuppression,
    FullResetByServes,
    FullResetByAge,
}

/// Wire form: `{ variant = "...", parameter = n }`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DecayPolicyRepr {
    variant: DecayVariant,
    parameter: u64,
}

impl From<DecayPolicy> for DecayPolicyRepr {
    fn from(policy: DecayPolicy) -> Self {
        let (variant, parameter) = match policy {
            DecayPolicy::PerNodeAge { max_age_days } => {
                (DecayVariant::PerNodeAge, u64::from(max_age_days))
            }
            DecayPolicy::PerNodeSuppression { suppression_limit } => {
                (DecayVariant::PerNodeSuppression, u64::from(suppression_limit))
            }
            DecayPolicy::FullResetByServes { reset_after_serves } => {
                (DecayVariant::FullResetByServes, reset_after_serves)
            }
            DecayPolicy::FullResetByAge { max_age_days } => {
                (DecayVariant::FullResetByAge, u64::from(max_age_days))
            }
        };
        Self { variant, parameter }
    }
}

impl TryFrom<DecayPolicyRepr> for DecayPolicy {
    type Error = Error;

    fn try_from(repr: DecayPolicyRepr) -> Result<Self> {
        let small = || {
            u32::try_from(repr.parameter).map_err(|_| {
                Error::InvalidConfig(format!("decay parameter {} too large", repr.parameter))
            })
        };
        let policy = match repr.variant {
            DecayVariant::PerNodeAge => DecayPolicy::PerNodeAge {
                max_age_days: small()?,
            },
            DecayVariant::PerNodeSuppression => DecayPolicy::PerNodeSuppression {
                suppression_limit: small()?,
            },
            DecayVariant::FullResetByServes => DecayPolicy::FullResetByServes {
                reset_after_serves: repr.parameter,
            },
            DecayVariant::FullResetByAge => DecayPolicy::FullResetByAge {
                max_age_days: small()?,
            },
        };
        policy.validate()?;
        Ok(policy)
    }
}

/// Linear dwell penalty `f(x) = dwell_coefficient * x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PenaltyConfig {
    pub dwell_coefficient: f64,
    /// Only penalise products that were clicked and not added.
    pub require_click_without_add: bool,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self {
            dwell_coefficient: 0.01,
            require_click_without_add: true,
        }
    }
}

impl PenaltyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dwell_coefficient.is_finite() && self.dwell_coefficient > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "dwell_coefficient must be > 0, got {}",
                self.dwell_coefficient
            )));
        }
        Ok(())
    }
}

/// Everything one feedback serve cycle needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeedbackConfig {
    pub t: usize,
    pub penalty: PenaltyConfig,
    pub decay: DecayPolicy,
    pub exclude_prioritized: bool,
}

impl Default for FeedbackConfig {
    fn default() -> Self {
        Self {
            t: 10,
            penalty: PenaltyConfig::default(),
            decay: DecayPolicy::default(),
            exclude_prioritized: true,
        }
    }
}

impl FeedbackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t < 1 {
            return Err(Error::InvalidConfig("t must be >= 1".into()));
        }
        self.penalty.validate()?;
        self.decay.validate()
    }
}

/// Dwell seconds per inventory position that count as disinterest.
#[derive(Debug, Clone, PartialEq)]
pub struct DwellArray(Vec<f64>);

impl DwellArray {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if let Some((position, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
        {
            return Err(Error::InvalidScore { position, value });
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Elementwise `relevance - negative_weights`. Negative results are kept.
pub fn combine_scores(relevance: &ScoreVector, negative_weights: &ScoreVector) -> Result<ScoreVector> {
    relevance.expect_kind(ScoreKind::Relevance)?;
    negative_weights.expect_kind(ScoreKind::NegativeWeights)?;
    negative_weights.expect_len(relevance.len())?;
    let values = relevance
        .values()
        .iter()
        .zip(negative_weights.values())
        .map(|(r, w)| r - w)
        .collect();
    Ok(ScoreVector::from_parts_unchecked(ScoreKind::Final, values))
}

/// Positions ordered by descending score, ties by ascending product id.
/// Only the first `t` are guaranteed to be in order.
fn ranked_positions(
    scores: &[f64],
    t: usize,
    excluded: &BTreeSet<ProductId>,
    inventory: &Inventory,
) -> Vec<usize> {
    let mut candidates: Vec<usize> = (0..scores.len())
        .filter(|&i| excluded.is_empty() || !excluded.contains(inventory.id(i)))
        .collect();
    let cmp = |&a: &usize, &b: &usize| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| inventory.id(a).cmp(inventory.id(b)))
    };
    if t < candidates.len() {
        candidates.select_nth_unstable_by(t, cmp);
        candidates.truncate(t);
    }
    candidates.sort_unstable_by(cmp);
    candidates
}

fn list_from_positions(positions: &[usize], scores: &[f64], inventory: &Inventory, t: usize) -> RecommendationList {
    let items = positions.iter().map(|&i| inventory.id(i).clone()).collect();
    let values = positions.iter().map(|&i| scores[i]).collect();
    let mut list = RecommendationList::from_parts_unchecked(items, values);
    list.truncated = positions.len() < t;
    list
}

/// The `t` highest-scoring products not in `excluded`, best first. Returns a
/// shorter list flagged `truncated` when fewer candidates exist.
pub fn serve_top_t(
    scores: &ScoreVector,
    t: usize,
    excluded: &BTreeSet<ProductId>,
    inventory: &Inventory,
) -> Result<RecommendationList> {
    if t < 1 {
        return Err(Error::InvalidConfig("t must be >= 1".into()));
    }
    scores.expect_len(inventory.len())?;
    let positions = ranked_positions(scores.values(), t, excluded, inventory);
    Ok(list_from_positions(&positions, scores.values(), inventory, t))
}

/// Every non-excluded product in descending score order.
pub fn rank_all(
    scores: &ScoreVector,
    excluded: &BTreeSet<ProductId>,
    inventory: &Inventory,
) -> Result<RecommendationList> {
    let mut list = serve_top_t(scores, inventory.len().max(1), excluded, inventory)?;
    list.truncated = false;
    Ok(list)
}

/// Sums dwell seconds per product for the products the batch marks as
/// uninteresting (clicked and, by default, not added).
pub fn build_dwell_array(
    events: &[EventRecord],
    state: &UserSessionState,
    inventory: &Inventory,
    config: &PenaltyConfig,
) -> Result<DwellArray> {
    let mut clicked = vec![false; inventory.len()];
    let mut added = vec![false; inventory.len()];
    let mut dwell = vec![0.0; inventory.len()];
    for event in events {
        if event.user_id != state.user_id {
            return Err(Error::ForeignUserEvent {
                expected: state.user_id.clone(),
                found: event.user_id.clone(),
            });
        }
        event.validate()?;
        let Some(id) = &event.product_id else {
            continue;
        };
        let pos = inventory.require_position(id)?;
        match event.event_kind {
            EventKind::Clicked => clicked[pos] = true,
            EventKind::AddedToPriorityList => added[pos] = true,
            EventKind::Dwell => dwell[pos] += event.dwell_seconds.unwrap_or(0.0),
            EventKind::Served | EventKind::Viewed | EventKind::Purchased => {}
        }
    }
    for pos in 0..dwell.len() {
        let counts = clicked[pos] && !(config.require_click_without_add && added[pos]);
        if !counts {
            dwell[pos] = 0.0;
        }
    }
    Ok(DwellArray(dwell))
}

/// `negative_weights += dwell_coefficient * dwell_array`.
pub fn apply_penalty(
    state: &mut UserSessionState,
    dwell_array: &DwellArray,
    config: &PenaltyConfig,
    now: i64,
) -> Result<()> {
    state.negative_weights.expect_len(dwell_array.len())?;
    let weights = state.negative_weights.values_mut();
    for (pos, &dwell) in dwell_array.values().iter().enumerate() {
        if dwell > 0.0 {
            weights[pos] += config.dwell_coefficient * dwell;
            state.weight_set_at[pos] = Some(now);
        }
    }
    Ok(())
}

/// Applies one decay policy at time `now`.
pub fn apply_decay(state: &mut UserSessionState, policy: &DecayPolicy, now: i64) {
    match *policy {
        DecayPolicy::PerNodeAge { max_age_days } => {
            let max_age = i64::from(max_age_days) * SECONDS_PER_DAY;
            for pos in 0..state.len() {
                if matches!(state.weight_set_at[pos], Some(at) if now - at > max_age) {
                    state.reset_position(pos);
                }
            }
        }
        DecayPolicy::PerNodeSuppression { suppression_limit } => {
            for pos in 0..state.len() {
                if state.suppression_count[pos] > suppression_limit {
                    state.reset_position(pos);
                    state.suppression_count[pos] = 0;
                }
            }
        }
        DecayPolicy::FullResetByServes { reset_after_serves } => {
            if state.serve_count >= reset_after_serves {
                state.reset_all_weights();
                state.serve_count = 0;
            }
        }
        DecayPolicy::FullResetByAge { max_age_days } => {
            let max_age = i64::from(max_age_days) * SECONDS_PER_DAY;
            let oldest = state.weight_set_at.iter().flatten().min();
            if matches!(oldest, Some(&at) if now - at > max_age) {
                state.reset_all_weights();
            }
        }
    }
}

/// Counts a suppression for every product the relevance-only ranking would
/// have served but the weighted ranking did not.
pub fn record_suppressions(
    state: &mut UserSessionState,
    would_serve_without_weights: &RecommendationList,
    actually_served: &RecommendationList,
    inventory: &Inventory,
) -> Result<()> {
    let served: BTreeSet<&ProductId> = actually_served.items().iter().collect();
    for id in would_serve_without_weights.items() {
        if !served.contains(id) {
            let pos = inventory.require_position(id)?;
            state.suppression_count[pos] += 1;
        }
    }
    Ok(())
}

/// Result of one [`feedback_serve_cycle`].
#[derive(Debug, Clone, PartialEq)]
pub struct ServeOutcome {
    pub list: RecommendationList,
    /// Products pushed out of the list by their negative weights.
    pub suppressed: Vec<ProductId>,
}

/// One full serve: lazy decay at `now`, combine, serve top-t, book
/// suppressions, then push the served set into the window and bump the
/// serve counters. Penalties are not applied here; see [`ingest_feedback`].
pub fn feedback_serve_cycle(
    state: &mut UserSessionState,
    inventory: &Inventory,
    relevance: &ScoreVector,
    config: &FeedbackConfig,
    now: i64,
) -> Result<ServeOutcome> {
    relevance.expect_len(inventory.len())?;
    state.check_against(inventory)?;
    apply_decay(state, &config.decay, now);

    let final_scores = combine_scores(relevance, &state.negative_weights)?;
    let excluded = if config.exclude_prioritized {
        state.prioritized.clone()
    } else {
        BTreeSet::new()
    };
    let list = serve_top_t(&final_scores, config.t, &excluded, inventory)?;
    let would = serve_top_t(relevance, config.t, &excluded, inventory)?;
    record_suppressions(state, &would, &list, inventory)?;
    let served: BTreeSet<&ProductId> = list.items().iter().collect();
    let suppressed = would
        .items()
        .iter()
        .filter(|id| !served.contains(id))
        .cloned()
        .collect();

    state.window.push(list.item_set());
    state.serve_count += 1;
    state.calls_total += 1;
    Ok(ServeOutcome { list, suppressed })
}

/// Feeds one batch of interaction events back into the state: dwell
/// penalties, plus added or purchased products into the prioritized set.
pub fn ingest_feedback(
    state: &mut UserSessionState,
    events: &[EventRecord],
    inventory: &Inventory,
    config: &PenaltyConfig,
    now: i64,
) -> Result<()> {
    let dwell = build_dwell_array(events, state, inventory, config)?;
    apply_penalty(state, &dwell, config, now)?;
    update_prioritized(state, events);
    Ok(())
}

/// Adds every added or purchased product in `events` to the prioritized set.
pub fn update_prioritized(state: &mut UserSessionState, events: &[EventRecord]) {
    for event in events {
        if matches!(
            event.event_kind,
            EventKind::AddedToPriorityList | EventKind::Purchased
        ) {
            if let Some(id) = &event.product_id {
                state.prioritized.insert(id.clone());
            }
        }
    }
}

/// Rank of `id` (0 = best) in the full weighted ranking, or `None` if excluded.
pub fn weighted_rank(
    state: &UserSessionState,
    relevance: &ScoreVector,
    inventory: &Inventory,
    id: &ProductId,
) -> Result<Option<usize>> {
    let final_scores = combine_scores(relevance, &state.negative_weights)?;
    let ranked = rank_all(&final_scores, &BTreeSet::new(), inventory)?;
    Ok(ranked.items().iter().position(|x| x == id))
}

/// Map of product id to current weight, for reporting.
pub fn weights_by_id(state: &UserSessionState, inventory: &Inventory) -> HashMap<ProductId, f64> {
    state
        .negative_weights
        .values()
        .iter()
        .enumerate()
        .filter(|(_, &w)| w != BASELINE_WEIGHT)
        .map(|(i, &w)| (inventory.id(i).clone(), w))
        .collect()
}
