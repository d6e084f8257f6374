//! Shared domain vocabulary: products, inventory, score arrays, events and
//! per-user session state.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::freshness::MetricHistory;

/// Value every negative weight starts from and decays back to.
pub const BASELINE_WEIGHT: f64 = 1.0;

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }
    };
}

string_id!(
    /// Opaque product identifier, unique within an [`Inventory`].
    ProductId
);
string_id!(
    /// Opaque user identifier.
    UserId
);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Product {
    pub product_id: ProductId,
    pub brand: String,
    /// Free-form attributes; only the simulator looks at these.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attributes: BTreeMap<String, String>,
}

impl Product {
    pub fn new(product_id: impl Into<ProductId>, brand: impl Into<String>) -> Self {
        Self {
            product_id: product_id.into(),
            brand: brand.into(),
            attributes: BTreeMap::new(),
        }
    }
}

/// Ordered product catalogue. Score vectors are indexed by position in this
/// order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Product>", into = "Vec<Product>")]
pub struct Inventory {
    products: Vec<Product>,
    index: HashMap<ProductId, usize>,
}

impl Inventory {
    /// Builds an inventory, preserving input order.
    pub fn new(products: Vec<Product>) -> Result<Self> {
        if products.is_empty() {
            return Err(Error::EmptyInventory);
        }
        let mut index = HashMap::with_capacity(products.len());
        for (pos, product) in products.iter().enumerate() {
            if product.brand.is_empty() {
                return Err(Error::EmptyBrand(product.product_id.clone()));
            }
            if index.insert(product.product_id.clone(), pos).is_some() {
                return Err(Error::DuplicateProductId(product.product_id.clone()));
            }
        }
        Ok(Self { products, index })
    }

    pub fn len(&self) -> usize {
        self.products.len()
    }

    pub fn is_empty(&self) -> bool {
        self.products.is_empty()
    }

    pub fn products(&self) -> &[Product] {
        &self.products
    }

    pub fn product(&self, position: usize) -> &Product {
        &self.products[position]
    }

    pub fn id(&self, position: usize) -> &ProductId {
        &self.products[position].product_id
    }

    pub fn position(&self, id: &ProductId) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn require_position(&self, id: &ProductId) -> Result<usize> {
        self.position(id)
            .ok_or_else(|| Error::UnknownProduct(id.clone()))
    }

    pub fn brand_of(&self, id: &ProductId) -> Option<&str> {
        self.position(id).map(|p| self.products[p].brand.as_str())
    }

    /// Product id to brand lookup table, as consumed by the shuffler.
    pub fn brand_map(&self) -> HashMap<ProductId, String> {
        self.products
            .iter()
            .map(|p| (p.product_id.clone(), p.brand.clone()))
            .collect()
    }
}

impl TryFrom<Vec<Product>> for Inventory {
    type Error = Error;

    fn try_from(products: Vec<Product>) -> Result<Self> {
        Inventory::new(products)
    }
}

impl From<Inventory> for Vec<Product> {
    fn from(inventory: Inventory) -> Self {
        inventory.products
    }
}

/// Shorthand for [`Inventory::new`].
pub fn build_inventory(products: Vec<Product>) -> Result<Inventory> {
    Inventory::new(products)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScoreKind {
    Relevance,
    NegativeWeights,
    Final,
}

impl ScoreKind {
    pub fn name(self) -> &'static str {
        match self {
            ScoreKind::Relevance => "Relevance",
            ScoreKind::NegativeWeights => "NegativeWeights",
            ScoreKind::Final => "Final",
        }
    }
}

/// One dimensionless score per inventory position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    values: Vec<f64>,
    kind: ScoreKind,
}

impl ScoreVector {
    pub fn new(kind: ScoreKind, values: Vec<f64>) -> Result<Self> {
        for (position, &value) in values.iter().enumerate() {
            let ok = match kind {
                ScoreKind::NegativeWeights => value.is_finite() && value >= 0.0,
                ScoreKind::Relevance | ScoreKind::Final => value.is_finite(),
            };
            if !ok {
                return Err(Error::InvalidScore { position, value });
            }
        }
        Ok(Self { values, kind })
    }

    pub fn relevance(values: Vec<f64>) -> Result<Self> {
        Self::new(ScoreKind::Relevance, values)
    }

    pub fn negative_weights(values: Vec<f64>) -> Result<Self> {
        Self::new(ScoreKind::NegativeWeights, values)
    }

    pub fn baseline_weights(len: usize) -> Self {
        Self {
            values: vec![BASELINE_WEIGHT; len],
            kind: ScoreKind::NegativeWeights,
        }
    }

    pub(crate) fn from_parts_unchecked(kind: ScoreKind, values: Vec<f64>) -> Self {
        Self { values, kind }
    }

    pub fn kind(&self) -> ScoreKind {
        self.kind
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub(crate) fn expect_kind(&self, kind: ScoreKind) -> Result<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(Error::WrongScoreKind {
                expected: kind.name(),
                actual: self.kind.name(),
            })
        }
    }

    pub(crate) fn expect_len(&self, len: usize) -> Result<()> {
        if self.values.len() == len {
            Ok(())
        } else {
            Err(Error::LengthMismatch {
                expected: len,
                actual: self.values.len(),
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EventKind {
    Served,
    Viewed,
    Clicked,
    AddedToPriorityList,
    Purchased,
    Dwell,
}

/// One instrumented interaction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub user_id: UserId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub product_id: Option<ProductId>,
    pub event_kind: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dwell_seconds: Option<f64>,
    pub timestamp: i64,
}

impl EventRecord {
    pub fn new(
        user_id: impl Into<UserId>,
        product_id: Option<ProductId>,
        event_kind: EventKind,
        timestamp: i64,
    ) -> Self {
        Self {
            user_id: user_id.into(),
            product_id,
            event_kind,
            dwell_seconds: None,
            timestamp,
        }
    }

    pub fn product(
        user_id: impl Into<UserId>,
        product_id: impl Into<ProductId>,
        event_kind: EventKind,
        timestamp: i64,
    ) -> Self {
        Self::new(user_id, Some(product_id.into()), event_kind, timestamp)
    }

    pub fn dwell(
        user_id: impl Into<UserId>,
        product_id: impl Into<ProductId>,
        seconds: f64,
        timestamp: i64,
    ) -> Self {
        Self {
            dwell_seconds: Some(seconds),
            ..Self::product(user_id, product_id, EventKind::Dwell, timestamp)
        }
    }

    /// Checks the field combinations the log format allows.
    pub fn validate(&self) -> Result<()> {
        match (self.event_kind, self.dwell_seconds) {
            (EventKind::Dwell, None) => {
                return Err(Error::InvalidEvent("Dwell event without dwell_seconds".into()))
            }
            (EventKind::Dwell, Some(s)) if !(s.is_finite() && s >= 0.0) => {
                return Err(Error::InvalidEvent(format!("dwell_seconds must be >= 0, got {s}")))
            }
            (kind, Some(_)) if kind != EventKind::Dwell => {
                return Err(Error::InvalidEvent(format!(
                    "{kind:?} event must not carry dwell_seconds"
                )))
            }
            _ => {}
        }
        if self.event_kind != EventKind::Served && self.product_id.is_none() {
            return Err(Error::InvalidEvent(format!(
                "{:?} event requires a product_id",
                self.event_kind
            )));
        }
        Ok(())
    }
}

/// The last `capacity` served sets, most recent last. Their union is the
/// sliding history the freshness metric compares against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecWindow {
    served_sets: VecDeque<BTreeSet<ProductId>>,
    capacity: usize,
}

impl RecWindow {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity < 1 {
            return Err(Error::InvalidWindowCapacity(capacity));
        }
        Ok(Self {
            served_sets: VecDeque::with_capacity(capacity),
            capacity,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.served_sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.served_sets.is_empty()
    }

    pub fn served_sets(&self) -> impl Iterator<Item = &BTreeSet<ProductId>> {
        self.served_sets.iter()
    }

    pub fn push(&mut self, served: BTreeSet<ProductId>) {
        self.served_sets.push_back(served);
        while self.served_sets.len() > self.capacity {
            self.served_sets.pop_front();
        }
    }

    pub fn contains(&self, id: &ProductId) -> bool {
        self.served_sets.iter().any(|s| s.contains(id))
    }

    pub fn union(&self) -> BTreeSet<ProductId> {
        self.served_sets.iter().flatten().cloned().collect()
    }
}

/// Ordered output of one serve call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationList {
    items: Vec<ProductId>,
    scores: Vec<f64>,
    /// Set when fewer candidates than requested were available.
    #[serde(default)]
    pub truncated: bool,
}

impl RecommendationList {
    pub fn new(items: Vec<ProductId>, scores: Vec<f64>) -> Result<Self> {
        if items.len() != scores.len() {
            return Err(Error::LengthMismatch {
                expected: items.len(),
                actual: scores.len(),
            });
        }
        let mut seen = BTreeSet::new();
        for id in &items {
            if !seen.insert(id) {
                return Err(Error::DuplicateProductId(id.clone()));
            }
        }
        Ok(Self {
            items,
            scores,
            truncated: false,
        })
    }

    /// List without meaningful scores (all zero), e.g. read from a log.
    pub fn from_ids(items: Vec<ProductId>) -> Result<Self> {
        let scores = vec![0.0; items.len()];
        Self::new(items, scores)
    }

    pub fn empty() -> Self {
        Self {
            items: Vec::new(),
            scores: Vec::new(),
            truncated: false,
        }
    }

    pub(crate) fn from_parts_unchecked(items: Vec<ProductId>, scores: Vec<f64>) -> Self {
        debug_assert_eq!(items.len(), scores.len());
        Self {
            items,
            scores,
            truncated: false,
        }
    }

    pub fn items(&self) -> &[ProductId] {
        &self.items
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn item_set(&self) -> BTreeSet<ProductId> {
        self.items.iter().cloned().collect()
    }

    pub fn into_parts(self) -> (Vec<ProductId>, Vec<f64>) {
        (self.items, self.scores)
    }
}

/// Mutable per-user state threaded through every serve and feedback call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserSessionState {
    pub user_id: UserId,
    pub negative_weights: ScoreVector,
    /// When each weight last moved off the baseline; `None` means never.
    pub weight_set_at: Vec<Option<i64>>,
    /// Times each product was chosen by relevance but pushed out by its weight.
    pub suppression_count: Vec<u32>,
    /// Serves since the last full reset.
    pub serve_count: u64,
    /// Serves over the lifetime of the state; never reset.
    #[serde(default)]
    pub calls_total: u64,
    pub window: RecWindow,
    pub prioritized: BTreeSet<ProductId>,
    /// Flat accumulated history with count-based reset.
    #[serde(default)]
    pub metric_history: MetricHistory,
}

impl UserSessionState {
    pub fn new(
        user_id: impl Into<UserId>,
        inventory: &Inventory,
        window_capacity: usize,
    ) -> Result<Self> {
        let n = inventory.len();
        Ok(Self {
            user_id: user_id.into(),
            negative_weights: ScoreVector::baseline_weights(n),
            weight_set_at: vec![None; n],
            suppression_count: vec![0; n],
            serve_count: 0,
            calls_total: 0,
            window: RecWindow::new(window_capacity)?,
            prioritized: BTreeSet::new(),
            metric_history: MetricHistory::default(),
        })
    }

    pub fn len(&self) -> usize {
        self.negative_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.negative_weights.is_empty()
    }

    /// Puts one position back at the baseline weight.
    pub(crate) fn reset_position(&mut self, position: usize) {
        self.negative_weights.values_mut()[position] = BASELINE_WEIGHT;
        self.weight_set_at[position] = None;
    }

    pub(crate) fn reset_all_weights(&mut self) {
        for v in self.negative_weights.values_mut() {
            *v = BASELINE_WEIGHT;
        }
        self.weight_set_at.iter_mut().for_each(|t| *t = None);
    }

    /// Checks internal lengths agree with an inventory.
    pub fn check_against(&self, inventory: &Inventory) -> Result<()> {
        let n = inventory.len();
        self.negative_weights.expect_kind(ScoreKind::NegativeWeights)?;
        self.negative_weights.expect_len(n)?;
        for len in [self.weight_set_at.len(), self.suppression_count.len()] {
            if len != n {
                return Err(Error::LengthMismatch {
                    expected: n,
                    actual: len,
                });
            }
        }
        Ok(())
    }
}

/// Shorthand for [`UserSessionState::new`].
pub fn new_user_state(
    user_id: impl Into<UserId>,
    inventory: &Inventory,
    window_capacity: usize,
) -> Result<UserSessionState> {
    UserSessionState::new(user_id, inventory, window_capacity)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inv(ids: &[(&str, &str)]) -> Result<Inventory> {
        Inventory::new(ids.iter().map(|(i, b)| Product::new(*i, *b)).collect())
    }

    #[test]
    fn inventory_preserves_order_and_indexes() {
        let inventory = inv(&[("a", "X"), ("b", "Y")]).unwrap();
        assert_eq!(inventory.len(), 2);
        assert_eq!(inventory.position(&"a".into()), Some(0));
        assert_eq!(inventory.position(&"b".into()), Some(1));
        assert_eq!(inventory.brand_of(&"b".into()), Some("Y"));
    }

    #[test]
    fn inventory_rejects_empty_and_duplicates() {
        assert!(matches!(inv(&[]), Err(Error::EmptyInventory)));
        assert!(matches!(
            inv(&[("a", "X"), ("a", "Y")]),
            Err(Error::DuplicateProductId(id)) if id.as_str() == "a"
        ));
        assert!(matches!(inv(&[("a", "")]), Err(Error::EmptyBrand(_))));
    }

    #[test]
    fn fresh_state_is_at_baseline() {
        let inventory = inv(&[("a", "X"), ("b", "Y"), ("c", "Z")]).unwrap();
        let state = new_user_state("u", &inventory, 2).unwrap();
        assert_eq!(state.negative_weights.values(), &[1.0, 1.0, 1.0]);
        assert_eq!(state.serve_count, 0);
        assert!(state.window.is_empty());
        assert!(state.prioritized.is_empty());

        let single = inv(&[("a", "X")]).unwrap();
        let state = new_user_state("u", &single, 5).unwrap();
        assert!(state.window.is_empty());
        assert_eq!(state.serve_count, 0);
    }

    #[test]
    fn zero_window_capacity_is_rejected() {
        let inventory = inv(&[("a", "X")]).unwrap();
        assert!(matches!(
            new_user_state("u", &inventory, 0),
            Err(Error::InvalidWindowCapacity(0))
        ));
    }

    #[test]
    fn dwell_field_must_match_kind() {
        assert!(EventRecord::dwell("u", "a", 3.0, 0).validate().is_ok());
        let mut missing = EventRecord::product("u", "a", EventKind::Dwell, 0);
        assert!(missing.validate().is_err());
        missing.dwell_seconds = Some(-1.0);
        assert!(missing.validate().is_err());
        let mut click = EventRecord::product("u", "a", EventKind::Clicked, 0);
        assert!(click.validate().is_ok());
        click.dwell_seconds = Some(1.0);
        assert!(click.validate().is_err());
        assert!(EventRecord::new("u", None, EventKind::Served, 0).validate().is_ok());
        assert!(EventRecord::new("u", None, EventKind::Clicked, 0).validate().is_err());
    }

    #[test]
    fn window_evicts_oldest() {
        let mut w = RecWindow::new(2).unwrap();
        for id in ["a", "b", "c"] {
            w.push(BTreeSet::from([ProductId::from(id)]));
        }
        assert_eq!(w.len(), 2);
        assert_eq!(w.union(), BTreeSet::from(["b".into(), "c".into()]));
    }

    #[test]
    fn recommendation_list_rejects_duplicates() {
        let ids = vec![ProductId::from("a"), ProductId::from("a")];
        assert!(RecommendationList::from_ids(ids).is_err());
        assert!(RecommendationList::new(vec!["a".into()], vec![]).is_err());
    }

    #[test]
    fn negative_weights_must_be_nonnegative() {
        assert!(ScoreVector::negative_weights(vec![0.0, 2.0]).is_ok());
        assert!(ScoreVector::negative_weights(vec![-0.1]).is_err());
        assert!(ScoreVector::relevance(vec![f64::NAN]).is_err());
    }
}
