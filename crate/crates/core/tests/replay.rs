use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use freshrec::config::EngineConfig;
use freshrec::feedback::{feedback_serve_cycle, ingest_feedback, weighted_rank, DecayPolicy, FeedbackConfig, SECONDS_PER_DAY};
use freshrec::io::snapshot_to_json;
use freshrec::replay::replay;
use freshrec::{EventKind, EventRecord, Execution, Inventory, Product, ProductId, ScoreVector, UserSessionState};

fn inventory() -> Inventory {
    Inventory::new((0..15).map(|i| Product::new(format!("p{i:02}"), format!("b{}", i % 3))).collect()).unwrap()
}

/// A log in rounds; each round is one serve run or one interaction batch
/// per user, so round boundaries are safe places to split. Users alternate
/// strictly: two adjacent serve runs would read as a single call.
fn segmented_log(seed: u64) -> (Vec<EventRecord>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let users = ["ana", "bo", "cy"];
    let mut log = Vec::new();
    let mut boundaries = Vec::new();
    let mut ts = 1_000;
    for round in 0..12 {
        for user in users {
            let pick = |rng: &mut ChaCha8Rng| format!("p{:02}", rng.random_range(0..15));
            if round % 2 == 0 {
                for _ in 0..rng.random_range(1..5) {
                    log.push(EventRecord::product(user, pick(&mut rng), EventKind::Served, ts));
                }
            } else {
                for _ in 0..rng.random_range(1..4) {
                    let id = pick(&mut rng);
                    log.push(EventRecord::product(user, id.clone(), EventKind::Viewed, ts));
                    log.push(EventRecord::product(user, id.clone(), EventKind::Clicked, ts + 1));
                    log.push(EventRecord::dwell(user, id.clone(), rng.random_range(0.0..200.0), ts + 2));
                    if rng.random_bool(0.2) {
                        log.push(EventRecord::product(user, id, EventKind::AddedToPriorityList, ts + 3));
                    }
                    ts += 4;
                }
            }
            ts += 3 * SECONDS_PER_DAY;
        }
        boundaries.push(log.len());
    }
    (log, boundaries)
}

fn config() -> EngineConfig {
    let mut cfg = EngineConfig {
        decay: DecayPolicy::PerNodeAge { max_age_days: 5 },
        ..EngineConfig::default()
    };
    cfg.metric.window_capacity = 2;
    cfg.metric.max_decay_count = 3;
    cfg
}

fn snapshots(states: &BTreeMap<freshrec::UserId, UserSessionState>) -> Vec<String> {
    states.values().map(|s| snapshot_to_json(s).unwrap()).collect()
}

#[test]
fn split_replay_matches_whole_replay() {
    let inv = inventory();
    let cfg = config();
    for seed in 0..10 {
        let (log, boundaries) = segmented_log(seed);
        let whole = replay(&log, BTreeMap::new(), &inv, &cfg, Execution::Sequential).unwrap();
        for &cut in &boundaries {
            let first = replay(&log[..cut], BTreeMap::new(), &inv, &cfg, Execution::Sequential).unwrap();
            let second = replay(&log[cut..], first.states, &inv, &cfg, Execution::Parallel).unwrap();
            assert_eq!(snapshots(&second.states), snapshots(&whole.states), "seed {seed} cut {cut}");

            let mut report = first.report;
            report.extend(second.report);
            report.sort_by(|a, b| (&a.user_id, a.call_index).cmp(&(&b.user_id, b.call_index)));
            assert_eq!(report, whole.report, "seed {seed} cut {cut}");
        }
    }
}

#[test]
fn replay_is_byte_identical_across_runs_and_modes() {
    let inv = inventory();
    let (log, _) = segmented_log(42);
    let a = replay(&log, BTreeMap::new(), &inv, &config(), Execution::Sequential).unwrap();
    let b = replay(&log, BTreeMap::new(), &inv, &config(), Execution::Parallel).unwrap();
    assert_eq!(snapshots(&a.states), snapshots(&b.states));
    assert_eq!(a.report, b.report);
}

#[test]
fn penalised_product_drops_then_returns() {
    let inv = inventory();
    let target = ProductId::from("p00");
    let relevance = ScoreVector::relevance((0..15).map(|i| 1.0 - i as f64 * 0.01).collect()).unwrap();
    let cfg = FeedbackConfig {
        t: 3,
        decay: DecayPolicy::PerNodeAge { max_age_days: 7 },
        ..FeedbackConfig::default()
    };
    let mut state = UserSessionState::new("u", &inv, 3).unwrap();

    let first = feedback_serve_cycle(&mut state, &inv, &relevance, &cfg, 0).unwrap();
    assert_eq!(first.list.items()[0], target);
    let rank_before = weighted_rank(&state, &relevance, &inv, &target).unwrap().unwrap();

    let batch = [
        EventRecord::product("u", "p00", EventKind::Clicked, 10),
        EventRecord::dwell("u", "p00", 90.0, 20),
    ];
    ingest_feedback(&mut state, &batch, &inv, &cfg.penalty, 20).unwrap();
    let rank_after = weighted_rank(&state, &relevance, &inv, &target).unwrap().unwrap();
    assert!(rank_after > rank_before);

    let second = feedback_serve_cycle(&mut state, &inv, &relevance, &cfg, SECONDS_PER_DAY).unwrap();
    assert!(!second.list.items().contains(&target));
    assert_eq!(second.suppressed, vec![target.clone()]);

    let later = feedback_serve_cycle(&mut state, &inv, &relevance, &cfg, 8 * SECONDS_PER_DAY).unwrap();
    assert_eq!(later.list.items()[0], target);
}
