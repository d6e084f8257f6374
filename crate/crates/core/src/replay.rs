//! Replays a recorded event log through the feedback loop.
//!
//! Each user's events are read in order. A contiguous run of `Served` events
//! is one serve call; everything between two serve calls is the interaction
//! batch fed back before the next one.

use std::collections::BTreeMap;

use crate::config::EngineConfig;
use crate::error::{Error, Result};
use crate::feedback::{apply_decay, ingest_feedback};
use crate::freshness::{compute_freshness, FreshnessRecord, WindowMode};
use crate::model::{EventKind, EventRecord, Inventory, ProductId, RecWindow, UserId, UserSessionState};
use crate::par::{self, Execution};

/// Items of one serve call in log order, without duplicates.
#[derive(Debug, Clone, PartialEq)]
pub struct ServedCall {
    pub timestamp: i64,
    pub items: Vec<ProductId>,
}

enum Step<'a> {
    Serve(ServedCall),
    Batch(&'a [EventRecord]),
}

/// Splits one user's events into alternating serve calls and interaction
/// batches.
fn steps(events: &[EventRecord]) -> Vec<Step<'_>> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < events.len() {
        let served = events[i].event_kind == EventKind::Served;
        let end = events[i..]
            .iter()
            .position(|e| (e.event_kind == EventKind::Served) != served)
            .map_or(events.len(), |p| i + p);
        if served {
            let mut items: Vec<ProductId> = Vec::new();
            for e in &events[i..end] {
                if let Some(id) = &e.product_id {
                    if !items.contains(id) {
                        items.push(id.clone());
                    }
                }
            }
            out.push(Step::Serve(ServedCall {
                timestamp: events[i].timestamp,
                items,
            }));
        } else {
            out.push(Step::Batch(&events[i..end]));
        }
        i = end;
    }
    out
}

/// Fails on the first timestamp that goes backwards.
pub fn check_order(events: &[EventRecord]) -> Result<()> {
    for pair in events.windows(2) {
        if pair[1].timestamp < pair[0].timestamp {
            return Err(Error::OutOfOrderEvents {
                previous: pair[0].timestamp,
                found: pair[1].timestamp,
            });
        }
    }
    Ok(())
}

fn by_user(events: &[EventRecord]) -> Vec<(UserId, Vec<EventRecord>)> {
    let mut grouped: BTreeMap<UserId, Vec<EventRecord>> = BTreeMap::new();
    for e in events {
        grouped.entry(e.user_id.clone()).or_default().push(e.clone());
    }
    grouped.into_iter().collect()
}

/// The serve calls in a log, per user, in log order.
pub fn served_calls(events: &[EventRecord]) -> Vec<(UserId, Vec<ServedCall>)> {
    by_user(events)
        .into_iter()
        .map(|(user, evs)| {
            let calls = steps(&evs)
                .into_iter()
                .filter_map(|s| match s {
                    Step::Serve(call) => Some(call),
                    Step::Batch(_) => None,
                })
                .collect();
            (user, calls)
        })
        .collect()
}

fn replay_user(
    state: &mut UserSessionState,
    events: &[EventRecord],
    inventory: &Inventory,
    config: &EngineConfig,
) -> Result<Vec<FreshnessRecord>> {
    state.check_against(inventory)?;
    let mut records = Vec::new();
    for step in steps(events) {
        match step {
            Step::Batch(batch) => {
                let now = batch.last().map_or(0, |e| e.timestamp);
                ingest_feedback(state, batch, inventory, &config.penalty, now)?;
            }
            Step::Serve(call) => {
                for id in &call.items {
                    inventory.require_position(id)?;
                }
                apply_decay(state, &config.decay, call.timestamp);
                let call_index = state.calls_total;
                if !call.items.is_empty() {
                    let record = |mode, freshness| FreshnessRecord {
                        user_id: state.user_id.clone(),
                        call_index,
                        freshness,
                        window_mode: mode,
                        replacements_made: 0,
                        exhausted: false,
                    };
                    records.push(record(
                        WindowMode::SlidingK,
                        compute_freshness(&call.items, &state.window)?,
                    ));
                    records.push(record(
                        WindowMode::AccumulatedSet,
                        compute_freshness(&call.items, &state.metric_history)?,
                    ));
                }
                state.window.push(call.items.iter().cloned().collect());
                state
                    .metric_history
                    .record(call.items.iter(), config.metric.max_decay_count);
                state.serve_count += 1;
                state.calls_total += 1;
            }
        }
    }
    Ok(records)
}

/// Outcome of [`replay`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayOutput {
    pub states: BTreeMap<UserId, UserSessionState>,
    /// Two records per non-empty serve call (sliding and accumulated
    /// history), ordered by user then call.
    pub report: Vec<FreshnessRecord>,
}

/// Replays `events` on top of `states`. Users without a state start fresh.
pub fn replay(
    events: &[EventRecord],
    mut states: BTreeMap<UserId, UserSessionState>,
    inventory: &Inventory,
    config: &EngineConfig,
    exec: Execution,
) -> Result<ReplayOutput> {
    config.validate()?;
    check_order(events)?;
    for e in events {
        e.validate()?;
    }
    let mut work = Vec::new();
    for (user, evs) in by_user(events) {
        let state = match states.remove(&user) {
            Some(s) => s,
            None => UserSessionState::new(user.clone(), inventory, config.metric.window_capacity)?,
        };
        work.push((state, evs));
    }
    let results = par::try_map(&work, exec, |(state, evs)| {
        let mut state = state.clone();
        let records = replay_user(&mut state, evs, inventory, config)?;
        Ok::<_, Error>((state, records))
    })?;
    let mut report = Vec::new();
    for (state, records) in results {
        report.extend(records);
        states.insert(state.user_id.clone(), state);
    }
    Ok(ReplayOutput { states, report })
}

/// Sliding-window freshness of every serve call in a log, without any
/// feedback state.
pub fn log_metrics(events: &[EventRecord], window_capacity: usize) -> Result<Vec<FreshnessRecord>> {
    check_order(events)?;
    let mut records = Vec::new();
    for (user, calls) in served_calls(events) {
        let mut window = RecWindow::new(window_capacity)?;
        for (call_index, call) in calls.into_iter().enumerate() {
            if !call.items.is_empty() {
                records.push(FreshnessRecord {
                    user_id: user.clone(),
                    call_index: call_index as u64,
                    freshness: compute_freshness(&call.items, &window)?,
                    window_mode: WindowMode::SlidingK,
                    replacements_made: 0,
                    exhausted: false,
                });
            }
            window.push(call.items.into_iter().collect());
        }
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Product;

    fn inventory() -> Inventory {
        Inventory::new(vec![Product::new("a", "X"), Product::new("b", "Y"), Product::new("c", "Z")]).unwrap()
    }

    fn served(u: &str, id: &str, ts: i64) -> EventRecord {
        EventRecord::product(u, id, EventKind::Served, ts)
    }

    fn click_dwell(u: &str, id: &str, secs: f64, ts: i64) -> [EventRecord; 2] {
        [
            EventRecord::product(u, id, EventKind::Clicked, ts),
            EventRecord::dwell(u, id, secs, ts),
        ]
    }

    #[test]
    fn empty_log_is_identity() {
        let inv = inventory();
        let mut states = BTreeMap::new();
        states.insert(UserId::from("u"), UserSessionState::new("u", &inv, 2).unwrap());
        let out = replay(&[], states.clone(), &inv, &EngineConfig::default(), Execution::Sequential).unwrap();
        assert_eq!(out.states, states);
        assert!(out.report.is_empty());
    }

    #[test]
    fn single_click_dwell_penalty() {
        let inv = inventory();
        let mut log = vec![served("u", "a", 10), served("u", "b", 10)];
        log.extend(click_dwell("u", "a", 30.0, 11));
        let out = replay(&log, BTreeMap::new(), &inv, &EngineConfig::default(), Execution::Sequential).unwrap();
        let state = &out.states[&UserId::from("u")];
        assert!((state.negative_weights.values()[0] - 1.3).abs() < 1e-12);
        assert_eq!(state.negative_weights.values()[1], 1.0);
        assert_eq!(state.serve_count, 1);
        assert_eq!(out.report.len(), 2);
        assert!(out.report.iter().all(|r| r.freshness == 1.0));
    }

    #[test]
    fn out_of_order_is_rejected() {
        let inv = inventory();
        let log = vec![served("u", "a", 10), served("u", "b", 9)];
        assert!(matches!(
            replay(&log, BTreeMap::new(), &inv, &EngineConfig::default(), Execution::Sequential),
            Err(Error::OutOfOrderEvents { previous: 10, found: 9 })
        ));
    }

    #[test]
    fn metrics_follow_the_window() {
        let log = vec![
            served("u", "a", 1),
            served("u", "b", 1),
            EventRecord::product("u", "a", EventKind::Viewed, 2),
            served("u", "b", 3),
            served("u", "c", 3),
            EventRecord::product("u", "b", EventKind::Viewed, 4),
            served("u", "a", 5),
        ];
        let recs = log_metrics(&log, 1).unwrap();
        let f: Vec<f64> = recs.iter().map(|r| r.freshness).collect();
        assert_eq!(f, vec![1.0, 0.5, 1.0]);
        let recs = log_metrics(&log, 2).unwrap();
        let f: Vec<f64> = recs.iter().map(|r| r.freshness).collect();
        assert_eq!(f, vec![1.0, 0.5, 0.0]);
    }

    #[test]
    fn interleaved_users_are_separated() {
        let log = vec![served("u", "a", 1), served("v", "a", 1), served("u", "b", 1)];
        let calls = served_calls(&log);
        assert_eq!(calls.len(), 2);
        assert_eq!(calls[0].1[0].items, vec![ProductId::from("a"), ProductId::from("b")]);
    }
}
