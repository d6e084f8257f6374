//! Synthetic users and an offline A/B harness.
//!
//! Every variant sees the same user population and the same per-user
//! relevance noise stream (common random numbers), so differences between
//! variants come from the serving policy alone. Users are independent and
//! are simulated in parallel; aggregation happens afterwards in user order,
//! which keeps reports byte-identical across runs and execution modes.
//!
//! Behaviour model: a user clicks a viewed item with probability equal to
//! their true preference and adds it to the priority list iff the preference
//! clears `add_threshold`. Dwell is exponential with mean
//! `patience * preference` for added items and `patience * (1 - preference)`
//! otherwise, so long dwell without an add signals low interest.

use std::collections::BTreeSet;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::config::EngineConfig;
use crate::error::{Error, Result};
use crate::feedback::{
    apply_decay, combine_scores, feedback_serve_cycle, ingest_feedback, rank_all, serve_top_t,
    update_prioritized,
};
use crate::freshness::{compute_freshness, metric_feedback_recommend};
use crate::model::{
    EventKind, EventRecord, Inventory, Product, ProductId, RecommendationList, ScoreVector,
    UserId, UserSessionState,
};
use crate::par::{self, Execution};
use crate::shuffle::{self, ShuffleConfig, RNG_ALGORITHM};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticUser {
    pub user_id: UserId,
    /// Ground-truth interest per inventory position, in `[0, 1]`.
    pub preference: Vec<f64>,
    /// Dwell time scale in seconds.
    pub patience: f64,
    pub add_threshold: f64,
}

impl SyntheticUser {
    pub fn new(
        user_id: impl Into<UserId>,
        preference: Vec<f64>,
        patience: f64,
        add_threshold: f64,
    ) -> Result<Self> {
        if let Some(p) = preference.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidConfig(format!("preference {p} outside [0, 1]")));
        }
        if !(patience.is_finite() && patience > 0.0) {
            return Err(Error::InvalidConfig(format!("patience must be > 0, got {patience}")));
        }
        if !(0.0..=1.0).contains(&add_threshold) {
            return Err(Error::InvalidConfig(format!(
                "add_threshold must be in [0, 1], got {add_threshold}"
            )));
        }
        Ok(Self {
            user_id: user_id.into(),
            preference,
            patience,
            add_threshold,
        })
    }
}

/// Serving policy under test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Top-t by relevance.
    Baseline,
    /// Relevance minus negative weights, fed by dwell events.
    FeedbackLoop,
    /// Top-t by relevance, then brand-aware shuffle.
    Shuffle,
    /// Top-t by relevance, re-ranked to meet the freshness threshold.
    MetricFeedback,
    /// Negative weights first, then the freshness re-rank.
    FeedbackThenMetric,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Baseline,
        Variant::FeedbackLoop,
        Variant::Shuffle,
        Variant::MetricFeedback,
        Variant::FeedbackThenMetric,
    ];

    fn uses_penalties(self) -> bool {
        matches!(self, Variant::FeedbackLoop | Variant::FeedbackThenMetric)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub variants: Vec<Variant>,
    pub sessions: usize,
    pub users: usize,
    pub rng_seed: u64,
    pub inventory_size: usize,
    pub brands: usize,
    /// Standard deviation of the per-session relevance noise.
    pub noise_sd: f64,
    pub patience: f64,
    pub add_threshold: f64,
    /// View probability at position `p` is `1 / (1 + view_decay * p)`.
    pub view_decay: f64,
    pub start_timestamp: i64,
    pub session_interval_secs: i64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            variants: Variant::ALL.to_vec(),
            sessions: 30,
            users: 50,
            rng_seed: 0,
            inventory_size: 200,
            brands: 10,
            noise_sd: 0.05,
            patience: 60.0,
            add_threshold: 0.8,
            view_decay: 1.0,
            start_timestamp: 1_700_000_000,
            session_interval_secs: 86_400,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if self.sessions < 1 || self.users < 1 {
            return fail("sessions and users must be >= 1");
        }
        if self.variants.is_empty() {
            return fail("at least one variant is required");
        }
        if self.inventory_size < 1 || self.brands < 1 {
            return fail("inventory_size and brands must be >= 1");
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return fail("noise_sd must be >= 0");
        }
        if !(self.patience.is_finite() && self.patience > 0.0) {
            return fail("patience must be > 0");
        }
        if !(0.0..=1.0).contains(&self.add_threshold) {
            return fail("add_threshold must be in [0, 1]");
        }
        if !(self.view_decay.is_finite() && self.view_decay >= 0.0) {
            return fail("view_decay must be >= 0");
        }
        if self.session_interval_secs < 0 {
            return fail("session_interval_secs must be >= 0");
        }
        Ok(())
    }
}

/// Products `p0000..` with brands assigned round-robin over `brands` labels.
pub fn synth_inventory(size: usize, brands: usize) -> Result<Inventory> {
    let brands = brands.max(1);
    Inventory::new(
        (0..size)
            .map(|i| Product::new(format!("p{i:04}"), format!("brand{:02}", i % brands)))
            .collect(),
    )
}

/// Users with skewed preferences: most products are of little interest,
/// a few are liked a lot.
pub fn synth_population(
    config: &ExperimentConfig,
    inventory: &Inventory,
    rng: &mut impl Rng,
) -> Result<Vec<SyntheticUser>> {
    (0..config.users)
        .map(|u| {
            let preference = (0..inventory.len())
                .map(|_| {
                    let x: f64 = rng.random();
                    x * x
                })
                .collect();
            SyntheticUser::new(
                format!("u{u:04}"),
                preference,
                config.patience,
                config.add_threshold,
            )
        })
        .collect()
}

/// `clamp(preference + N(0, noise_sd), 0, 1)` per product.
pub fn synth_relevance(user: &SyntheticUser, noise_sd: f64, rng: &mut impl Rng) -> Result<ScoreVector> {
    if !(noise_sd.is_finite() && noise_sd >= 0.0) {
        return Err(Error::InvalidConfig(format!("noise_sd must be >= 0, got {noise_sd}")));
    }
    if noise_sd == 0.0 {
        return ScoreVector::relevance(user.preference.clone());
    }
    let noise = Normal::new(0.0, noise_sd).expect("valid normal");
    ScoreVector::relevance(
        user.preference
            .iter()
            .map(|p| (p + noise.sample(rng)).clamp(0.0, 1.0))
            .collect(),
    )
}

fn view_probability(position: usize, view_decay: f64) -> f64 {
    1.0 / (1.0 + view_decay * position as f64)
}

/// Events for one served list, all stamped `now`.
pub fn simulate_interaction(
    user: &SyntheticUser,
    inventory: &Inventory,
    served: &RecommendationList,
    view_decay: f64,
    now: i64,
    rng: &mut impl Rng,
) -> Result<Vec<EventRecord>> {
    let uid = &user.user_id;
    let mut events: Vec<EventRecord> = served
        .items()
        .iter()
        .map(|id| EventRecord::new(uid.clone(), Some(id.clone()), EventKind::Served, now))
        .collect();
    for (position, id) in served.items().iter().enumerate() {
        let preference = user.preference[inventory.require_position(id)?];
        if rng.random::<f64>() >= view_probability(position, view_decay) {
            continue;
        }
        events.push(EventRecord::new(uid.clone(), Some(id.clone()), EventKind::Viewed, now));
        if rng.random::<f64>() >= preference {
            continue;
        }
        events.push(EventRecord::new(uid.clone(), Some(id.clone()), EventKind::Clicked, now));
        let added = preference >= user.add_threshold;
        let mean = user.patience * if added { preference } else { 1.0 - preference };
        let dwell = if mean > 0.0 {
            Exp::new(1.0 / mean).expect("positive rate").sample(rng)
        } else {
            0.0
        };
        events.push(EventRecord::dwell(uid.clone(), id.clone(), dwell, now));
        if added {
            events.push(EventRecord::new(
                uid.clone(),
                Some(id.clone()),
                EventKind::AddedToPriorityList,
                now,
            ));
        }
    }
    Ok(events)
}

/// One user, one session, one variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRow {
    pub call_index: usize,
    pub variant: Variant,
    pub user_id: UserId,
    pub freshness_sliding: f64,
    pub freshness_alg3: f64,
    pub clicks: usize,
    pub adds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub variant: Variant,
    pub mean_freshness_sliding: f64,
    pub mean_freshness_alg3: f64,
    pub mean_clicks_per_session: f64,
    pub mean_adds_per_session: f64,
    pub mean_unique_products_per_user: f64,
    /// Mean across users, one entry per session.
    pub freshness_series_sliding: Vec<f64>,
    pub freshness_series_alg3: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportHeader {
    pub rng_algorithm: String,
    pub rng_seed: u64,
    pub config: EngineConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub header: ReportHeader,
    pub variants: Vec<VariantReport>,
    /// Per-session detail, written to CSV rather than the JSON report.
    #[serde(skip)]
    pub rows: Vec<SessionRow>,
}

impl ExperimentReport {
    pub fn variant(&self, variant: Variant) -> Option<&VariantReport> {
        self.variants.iter().find(|v| v.variant == variant)
    }
}

struct UserRun {
    rows: Vec<SessionRow>,
    unique_products: usize,
}

const STREAM_RELEVANCE: u64 = 1;
const STREAM_INTERACTION: u64 = 2;

fn stream_rng(seed: u64, user_index: usize, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((user_index as u64) << 2 | purpose);
    rng
}

fn shuffle_seed(base: u64, user_index: usize, session: usize) -> u64 {
    // splitmix64 finaliser over the triple
    let mut z = base
        ^ (user_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (session as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn run_user(
    config: &EngineConfig,
    inventory: &Inventory,
    brands: &shuffle::BrandMap,
    user: &SyntheticUser,
    user_index: usize,
    variant: Variant,
) -> Result<UserRun> {
    let exp = &config.experiment;
    let feedback = config.feedback();
    let mut relevance_rng = stream_rng(exp.rng_seed, user_index, STREAM_RELEVANCE);
    let mut interaction_rng = stream_rng(exp.rng_seed, user_index, STREAM_INTERACTION);
    let mut state = UserSessionState::new(user.user_id.clone(), inventory, config.metric.window_capacity)?;
    let mut served_ever: BTreeSet<ProductId> = BTreeSet::new();
    let mut rows = Vec::with_capacity(exp.sessions);

    for session in 0..exp.sessions {
        let now = exp.start_timestamp + session as i64 * exp.session_interval_secs;
        let relevance = synth_relevance(user, exp.noise_sd, &mut relevance_rng)?;
        let excluded = if config.exclude_prioritized {
            state.prioritized.clone()
        } else {
            BTreeSet::new()
        };
        let window_before = state.window.clone();
        let history_before = state.metric_history.clone();

        let list = match variant {
            Variant::FeedbackLoop => {
                feedback_serve_cycle(&mut state, inventory, &relevance, &feedback, now)?.list
            }
            Variant::Baseline | Variant::Shuffle | Variant::MetricFeedback | Variant::FeedbackThenMetric => {
                let list = match variant {
                    Variant::Baseline => serve_top_t(&relevance, config.t, &excluded, inventory)?,
                    Variant::Shuffle => {
                        let top = serve_top_t(&relevance, config.t, &excluded, inventory)?;
                        let cfg = ShuffleConfig {
                            rng_seed: shuffle_seed(config.shuffle.rng_seed ^ exp.rng_seed, user_index, session),
                            ..config.shuffle
                        };
                        shuffle::shuffle(&top, &cfg, brands)?
                    }
                    Variant::MetricFeedback => {
                        let ranked = rank_all(&relevance, &excluded, inventory)?;
                        metric_feedback_recommend(&ranked, &mut state.metric_history, &config.metric, config.t)?.list
                    }
                    _ => {
                        apply_decay(&mut state, &config.decay, now);
                        let scores = combine_scores(&relevance, &state.negative_weights)?;
                        let ranked = rank_all(&scores, &excluded, inventory)?;
                        metric_feedback_recommend(&ranked, &mut state.metric_history, &config.metric, config.t)?.list
                    }
                };
                state.window.push(list.item_set());
                state.serve_count += 1;
                state.calls_total += 1;
                list
            }
        };
        if !matches!(variant, Variant::MetricFeedback | Variant::FeedbackThenMetric) {
            state.metric_history.record(list.items(), config.metric.max_decay_count);
        }

        let freshness_sliding = compute_freshness(list.items(), &window_before)?;
        let freshness_alg3 = compute_freshness(list.items(), &history_before)?;
        served_ever.extend(list.items().iter().cloned());

        let events = simulate_interaction(user, inventory, &list, exp.view_decay, now, &mut interaction_rng)?;
        if variant.uses_penalties() {
            ingest_feedback(&mut state, &events, inventory, &config.penalty, now)?;
        } else {
            update_prioritized(&mut state, &events);
        }
        let count = |kind| events.iter().filter(|e| e.event_kind == kind).count();
        rows.push(SessionRow {
            call_index: session,
            variant,
            user_id: user.user_id.clone(),
            freshness_sliding,
            freshness_alg3,
            clicks: count(EventKind::Clicked),
            adds: count(EventKind::AddedToPriorityList),
        });
    }
    Ok(UserRun {
        rows,
        unique_products: served_ever.len(),
    })
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 { 0.0 } else { sum / n as f64 }
}

fn aggregate(variant: Variant, runs: &[&UserRun], sessions: usize) -> VariantReport {
    let rows = || runs.iter().flat_map(|r| r.rows.iter());
    let series = |pick: fn(&SessionRow) -> f64| -> Vec<f64> {
        (0..sessions)
            .map(|s| mean(runs.iter().map(|r| pick(&r.rows[s]))))
            .collect()
    };
    VariantReport {
        variant,
        mean_freshness_sliding: mean(rows().map(|r| r.freshness_sliding)),
        mean_freshness_alg3: mean(rows().map(|r| r.freshness_alg3)),
        mean_clicks_per_session: mean(rows().map(|r| r.clicks as f64)),
        mean_adds_per_session: mean(rows().map(|r| r.adds as f64)),
        mean_unique_products_per_user: mean(runs.iter().map(|r| r.unique_products as f64)),
        freshness_series_sliding: series(|r| r.freshness_sliding),
        freshness_series_alg3: series(|r| r.freshness_alg3),
    }
}

/// Runs every configured variant over the same synthetic population.
pub fn run_experiment(
    config: &EngineConfig,
    inventory: &Inventory,
    exec: Execution,
) -> Result<ExperimentReport> {
    config.validate()?;
    let exp = &config.experiment;
    let mut population_rng = ChaCha8Rng::seed_from_u64(exp.rng_seed);
    let users = synth_population(exp, inventory, &mut population_rng)?;
    let brands = inventory.brand_map();
    let indexed: Vec<(usize, &SyntheticUser)> = users.iter().enumerate().collect();

    let per_user: Vec<Vec<UserRun>> = par::try_map(&indexed, exec, |&(index, user)| {
        exp.variants
            .iter()
            .map(|&variant| run_user(config, inventory, &brands, user, index, variant))
            .collect::<Result<Vec<_>>>()
    })?;

    let mut variants = Vec::with_capacity(exp.variants.len());
    let mut rows = Vec::new();
    for (v, &variant) in exp.variants.iter().enumerate() {
        let runs: Vec<&UserRun> = per_user.iter().map(|u| &u[v]).collect();
        variants.push(aggregate(variant, &runs, exp.sessions));
        rows.extend(runs.iter().flat_map(|r| r.rows.iter().cloned()));
    }
    Ok(ExperimentReport {
        header: ReportHeader {
            rng_algorithm: RNG_ALGORITHM.to_owned(),
            rng_seed: exp.rng_seed,
            config: config.clone(),
        },
        variants,
        rows,
    })
}

/// Convenience wrapper building the synthetic inventory from the config.
pub fn run_synthetic(config: &EngineConfig, exec: Execution) -> Result<ExperimentReport> {
    let inventory = synth_inventory(config.experiment.inventory_size, config.experiment.brands)?;
    run_experiment(config, &inventory, exec)
}

/// One-sided paired sign test of `treatment > control`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SignTest {
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    /// `P(X >= wins)` for `X ~ Binomial(wins + losses, 1/2)`.
    pub p_value: f64,
}

pub fn paired_sign_test(treatment: &[f64], control: &[f64]) -> SignTest {
    assert_eq!(treatment.len(), control.len(), "paired samples");
    let mut wins = 0;
    let mut losses = 0;
    let mut ties = 0;
    for (a, b) in treatment.iter().zip(control) {
        match a.partial_cmp(b) {
            Some(std::cmp::Ordering::Greater) => wins += 1,
            Some(std::cmp::Ordering::Less) => losses += 1,
            _ => ties += 1,
        }
    }
    let n = wins + losses;
    // sum_{k >= wins} C(n, k) / 2^n, computed in log space
    let ln_choose = |n: usize, k: usize| -> f64 {
        let ln_fact = |m: usize| (1..=m).map(|i| (i as f64).ln()).sum::<f64>();
        ln_fact(n) - ln_fact(k) - ln_fact(n - k)
    };
    let p_value = (wins..=n)
        .map(|k| (ln_choose(n, k) - n as f64 * std::f64::consts::LN_2).exp())
        .sum::<f64>()
        .min(1.0);
    SignTest {
        wins,
        losses,
        ties,
        p_value,
    }
}
