//! Freshness post-processing for recommender output.
//!
//! The crate takes per-product relevance scores from some base recommender
//! and makes the served lists change over time:
//!
//! - [`feedback`]: per-user negative weights fed by click and dwell events,
//!   subtracted from relevance before serving, with four decay policies.
//! - [`shuffle`]: brand-aware block shuffling of a served list.
//! - [`freshness`]: the share of a served list missing from recent history,
//!   and a re-ranker that swaps in unseen products until a threshold is met.
//! - [`sim`]: synthetic users and an offline A/B harness over all variants.
//! - [`io`], [`replay`] and [`config`]: event logs, state snapshots, reports
//!   and the configuration file used by the `freshrec` binary.

pub mod config;
pub mod error;
pub mod feedback;
pub mod freshness;
pub mod io;
pub mod model;
pub mod par;
pub mod replay;
pub mod shuffle;
pub mod sim;

pub use error::{Error, Result};
pub use model::{
    build_inventory, new_user_state, EventKind, EventRecord, Inventory, Product, ProductId,
    RecWindow, RecommendationList, ScoreKind, ScoreVector, UserId, UserSessionState,
    BASELINE_WEIGHT,
};
pub use par::Execution;
