//! Brand-aware shuffling of a served list.
//!
//! The list is cut into contiguous blocks, each block is arranged so that no
//! two products of the same brand sit next to each other when that is
//! possible, and then products are swapped with same-brand products from
//! other blocks chosen at random. Same-brand swaps leave the brand sequence
//! untouched, so the per-block adjacency guarantee survives the swap step.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ProductId, RecommendationList};

/// Generator behind every seeded shuffle and simulation; recorded in reports.
pub const RNG_ALGORITHM: &str = "rand_chacha::ChaCha8Rng/seed_from_u64";

pub type BrandMap = HashMap<ProductId, String>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShuffleConfig {
    pub partition_length: usize,
    pub rng_seed: u64,
}

impl Default for ShuffleConfig {
    fn default() -> Self {
        Self {
            partition_length: 5,
            rng_seed: 0,
        }
    }
}

impl ShuffleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.partition_length < 1 {
            return Err(Error::InvalidConfig("partition_length must be >= 1".into()));
        }
        Ok(())
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.rng_seed)
    }
}

fn brand<'a>(brands: &'a BrandMap, id: &ProductId) -> Result<&'a str> {
    brands
        .get(id)
        .map(String::as_str)
        .ok_or_else(|| Error::UnknownProduct(id.clone()))
}

/// Contiguous blocks of length `p`; the last one may be shorter.
pub fn partition<T: Clone>(items: &[T], p: usize) -> Vec<Vec<T>> {
    assert!(p >= 1, "partition length must be >= 1");
    items.chunks(p).map(<[T]>::to_vec).collect()
}

/// Number of neighbouring pairs that share a brand.
pub fn same_brand_adjacencies(items: &[ProductId], brands: &BrandMap) -> Result<usize> {
    let mut count = 0;
    for pair in items.windows(2) {
        if brand(brands, &pair[0])? == brand(brands, &pair[1])? {
            count += 1;
        }
    }
    Ok(count)
}

/// Smallest achievable number of same-brand adjacencies for these brand
/// counts: `max(0, 2 * largest - len - 1)`.
pub fn min_adjacencies(block: &[ProductId], brands: &BrandMap) -> Result<usize> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for id in block {
        *counts.entry(brand(brands, id)?).or_default() += 1;
    }
    let largest = counts.values().copied().max().unwrap_or(0);
    Ok((2 * largest).saturating_sub(block.len() + 1))
}

/// Reorders `block` so that same-brand products are not adjacent wherever
/// possible. Greedy: always place the brand with the most remaining products
/// that differs from the previous one (ties by brand, products by id).
pub fn arrange_no_adjacent_brands(block: &[ProductId], brands: &BrandMap) -> Result<Vec<ProductId>> {
    let mut by_brand: BTreeMap<&str, Vec<ProductId>> = BTreeMap::new();
    for id in block {
        by_brand.entry(brand(brands, id)?).or_default().push(id.clone());
    }
    let mut queues: Vec<(&str, VecDeque<ProductId>)> = by_brand
        .into_iter()
        .map(|(b, mut ids)| {
            ids.sort();
            (b, VecDeque::from(ids))
        })
        .collect();

    let mut out = Vec::with_capacity(block.len());
    let mut last: Option<usize> = None;
    for _ in 0..block.len() {
        let mut pick: Option<usize> = None;
        for (i, (_, q)) in queues.iter().enumerate() {
            if q.is_empty() || Some(i) == last {
                continue;
            }
            // queues are in ascending brand order, so strict > keeps the first tie
            if pick.is_none_or(|p| q.len() > queues[p].1.len()) {
                pick = Some(i);
            }
        }
        let i = pick.or(last).expect("remaining products");
        out.push(queues[i].1.pop_front().expect("non-empty queue"));
        last = Some(i);
    }
    Ok(out)
}

/// For each block (in order) and each brand present in it (ascending), swap
/// the first not-yet-moved product of that brand with a uniformly chosen
/// not-yet-moved product of the same brand from another block. Each product
/// takes part in at most one swap.
pub fn cross_partition_brand_swap<R: Rng + ?Sized>(
    blocks: &mut [Vec<ProductId>],
    brands: &BrandMap,
    rng: &mut R,
) -> Result<()> {
    let mut moved: HashSet<ProductId> = HashSet::new();
    for i in 0..blocks.len() {
        let present: BTreeSet<String> = blocks[i]
            .iter()
            .map(|id| brand(brands, id).map(str::to_owned))
            .collect::<Result<_>>()?;
        for b in &present {
            let Some(j) = blocks[i]
                .iter()
                .position(|id| !moved.contains(id) && brands[id] == *b)
            else {
                continue;
            };
            let candidates: Vec<(usize, usize)> = blocks
                .iter()
                .enumerate()
                .filter(|&(k, _)| k != i)
                .flat_map(|(k, other)| {
                    other
                        .iter()
                        .enumerate()
                        .filter(|(_, id)| !moved.contains(*id) && brands[*id] == *b)
                        .map(move |(l, _)| (k, l))
                })
                .collect();
            if candidates.is_empty() {
                continue;
            }
            let (k, l) = candidates[rng.random_range(0..candidates.len())];
            let theirs = blocks[k][l].clone();
            let ours = std::mem::replace(&mut blocks[i][j], theirs.clone());
            moved.insert(theirs);
            moved.insert(ours.clone());
            blocks[k][l] = ours;
        }
    }
    Ok(())
}

/// Partition, arrange each block, swap across blocks, flatten. Scores travel
/// with their products.
pub fn shuffle(
    rec_list: &RecommendationList,
    config: &ShuffleConfig,
    brands: &BrandMap,
) -> Result<RecommendationList> {
    config.validate()?;
    let mut blocks = partition(rec_list.items(), config.partition_length)
        .iter()
        .map(|block| arrange_no_adjacent_brands(block, brands))
        .collect::<Result<Vec<_>>>()?;
    cross_partition_brand_swap(&mut blocks, brands, &mut config.rng())?;

    let score_of: HashMap<&ProductId, f64> = rec_list
        .items()
        .iter()
        .zip(rec_list.scores())
        .map(|(id, &s)| (id, s))
        .collect();
    let items: Vec<ProductId> = blocks.into_iter().flatten().collect();
    let scores = items.iter().map(|id| score_of[id]).collect();
    let mut out = RecommendationList::from_parts_unchecked(items, scores);
    out.truncated = rec_list.truncated;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShuffleMode {
    /// Shuffle the whole list: `n!` orders.
    Whole,
    /// Shuffle in blocks of `h`: `(n/h)! * h` orders.
    Batched,
}

fn factorial(n: u64) -> Result<u128> {
    (1..=u128::from(n)).try_fold(1u128, |acc, k| acc.checked_mul(k).ok_or(Error::Overflow(n)))
}

/// Number of orders each shuffling approach can produce.
pub fn shuffle_space_size(n: u64, h: u64, mode: ShuffleMode) -> Result<u128> {
    match mode {
        ShuffleMode::Whole => factorial(n),
        ShuffleMode::Batched => {
            if h == 0 || !n.is_multiple_of(h) {
                return Err(Error::IndivisibleBatch { n, h });
            }
            factorial(n / h)?
                .checked_mul(u128::from(h))
                .ok_or(Error::Overflow(n))
        }
    }
}

/// Formula value versus the number of distinct orders obtained by
/// shuffling each block of `h` independently, counted by enumeration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BatchedSpaceCheck {
    pub n: u64,
    pub h: u64,
    pub formula: u128,
    pub enumerated: u128,
    pub note: Option<String>,
}

/// Enumerates every permutation of `0..n` and counts those that keep each
/// element inside its block of `h`. Exponential; meant for `n <= 8`.
pub fn enumerate_batched_orders(n: usize, h: usize) -> u128 {
    fn walk(pos: usize, n: usize, h: usize, used: &mut [bool]) -> u128 {
        if pos == n {
            return 1;
        }
        let mut total = 0;
        for e in 0..n {
            if !used[e] && e / h == pos / h {
                used[e] = true;
                total += walk(pos + 1, n, h, used);
                used[e] = false;
            }
        }
        total
    }
    assert!(h >= 1);
    walk(0, n, h, &mut vec![false; n])
}

pub fn batched_space_check(n: u64, h: u64) -> Result<BatchedSpaceCheck> {
    let formula = shuffle_space_size(n, h, ShuffleMode::Batched)?;
    let enumerated = enumerate_batched_orders(n as usize, h as usize);
    let note = (formula != enumerated).then(|| {
        format!(
            "n={n}, h={h}: (n/h)!*h gives {formula}, but shuffling each block of {h} \
             independently yields {enumerated} distinct orders ((h!)^(n/h)); \
             the formula is reported as stated"
        )
    });
    Ok(BatchedSpaceCheck {
        n,
        h,
        formula,
        enumerated,
        note,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(xs: &[&str]) -> Vec<ProductId> {
        xs.iter().map(|s| ProductId::from(*s)).collect()
    }

    fn brands(pairs: &[(&str, &str)]) -> BrandMap {
        pairs
            .iter()
            .map(|(i, b)| (ProductId::from(*i), b.to_string()))
            .collect()
    }

    fn permutations(items: &[ProductId]) -> Vec<Vec<ProductId>> {
        if items.len() <= 1 {
            return vec![items.to_vec()];
        }
        let mut out = Vec::new();
        for i in 0..items.len() {
            let mut rest = items.to_vec();
            let head = rest.remove(i);
            for mut tail in permutations(&rest) {
                tail.insert(0, head.clone());
                out.push(tail);
            }
        }
        out
    }

    #[test]
    fn partition_chunks_in_order() {
        let items = ids(&["a", "b", "c", "d", "e"]);
        assert_eq!(
            partition(&items, 2),
            vec![ids(&["a", "b"]), ids(&["c", "d"]), ids(&["e"])]
        );
        assert_eq!(partition(&items[..4], 4).len(), 1);
        assert!(partition::<ProductId>(&[], 3).is_empty());
    }

    #[test]
    fn arrange_separates_two_of_three() {
        let b = brands(&[("x1", "X"), ("x2", "X"), ("y1", "Y")]);
        let block = ids(&["x1", "x2", "y1"]);
        // brute force: exactly two of the six orders avoid X next to X
        let valid: Vec<_> = permutations(&block)
            .into_iter()
            .filter(|p| same_brand_adjacencies(p, &b).unwrap() == 0)
            .collect();
        assert_eq!(valid.len(), 2);
        let out = arrange_no_adjacent_brands(&block, &b).unwrap();
        assert_eq!(out, ids(&["x1", "y1", "x2"]));
        assert!(valid.contains(&out));
    }

    #[test]
    fn arrange_distinct_and_forced_cases() {
        let b = brands(&[("a", "A"), ("b", "B"), ("c", "C"), ("d", "D")]);
        let out = arrange_no_adjacent_brands(&ids(&["d", "b", "a", "c"]), &b).unwrap();
        assert_eq!(same_brand_adjacencies(&out, &b).unwrap(), 0);

        let b = brands(&[("x1", "X"), ("x2", "X"), ("x3", "X")]);
        let out = arrange_no_adjacent_brands(&ids(&["x3", "x1", "x2"]), &b).unwrap();
        assert_eq!(same_brand_adjacencies(&out, &b).unwrap(), 2);
    }

    #[test]
    fn arrange_matches_brute_force_minimum() {
        // every brand pattern over 3 brands up to length 7
        for len in 1..=7usize {
            for code in 0..3usize.pow(len as u32) {
                let mut c = code;
                let mut pairs = Vec::new();
                for i in 0..len {
                    pairs.push((format!("p{i}"), ["A", "B", "C"][c % 3].to_string()));
                    c /= 3;
                }
                let b: BrandMap = pairs.iter().map(|(i, b)| (ProductId::from(i.as_str()), b.clone())).collect();
                let block: Vec<ProductId> = pairs.iter().map(|(i, _)| ProductId::from(i.as_str())).collect();
                let out = arrange_no_adjacent_brands(&block, &b).unwrap();
                let got = same_brand_adjacencies(&out, &b).unwrap();
                let expected = min_adjacencies(&block, &b).unwrap();
                assert_eq!(got, expected, "{pairs:?}");
                if len <= 5 {
                    let best = permutations(&block)
                        .iter()
                        .map(|p| same_brand_adjacencies(p, &b).unwrap())
                        .min()
                        .unwrap();
                    assert_eq!(best, expected);
                }
            }
        }
    }

    #[test]
    fn swap_without_counterpart_is_noop() {
        let b = brands(&[("x1", "X"), ("y1", "Y"), ("z1", "Z")]);
        let mut blocks = vec![ids(&["x1", "y1"]), ids(&["z1"])];
        let before = blocks.clone();
        cross_partition_brand_swap(&mut blocks, &b, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(blocks, before);
    }

    #[test]
    fn swap_single_candidate() {
        let b = brands(&[("x1", "X"), ("x2", "X")]);
        let mut blocks = vec![ids(&["x1"]), ids(&["x2"])];
        cross_partition_brand_swap(&mut blocks, &b, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(blocks, vec![ids(&["x2"]), ids(&["x1"])]);
    }

    fn six() -> (RecommendationList, BrandMap) {
        let b = brands(&[
            ("a1", "A"),
            ("a2", "A"),
            ("b1", "B"),
            ("b2", "B"),
            ("c1", "C"),
            ("c2", "C"),
        ]);
        let list = RecommendationList::new(
            ids(&["a1", "a2", "b1", "b2", "c1", "c2"]),
            vec![6.0, 5.0, 4.0, 3.0, 2.0, 1.0],
        )
        .unwrap();
        (list, b)
    }

    #[test]
    fn shuffle_is_seeded_permutation() {
        let (list, b) = six();
        let cfg = ShuffleConfig { partition_length: 3, rng_seed: 11 };
        let first = shuffle(&list, &cfg, &b).unwrap();
        let second = shuffle(&list, &cfg, &b).unwrap();
        assert_eq!(first, second);
        let mut sorted = first.items().to_vec();
        sorted.sort();
        assert_eq!(sorted, list.items());
        for (id, s) in first.items().iter().zip(first.scores()) {
            let i = list.items().iter().position(|x| x == id).unwrap();
            assert_eq!(*s, list.scores()[i]);
        }
        for block in partition(first.items(), 3) {
            assert_eq!(same_brand_adjacencies(&block, &b).unwrap(), 0);
        }
    }

    #[test]
    fn shuffle_varies_with_seed() {
        let pairs: Vec<(String, &str)> = (0..12)
            .map(|i| (format!("p{i:02}"), if i % 3 == 0 { "A" } else { "B" }))
            .collect();
        let b: BrandMap = pairs.iter().map(|(i, b)| (ProductId::from(i.as_str()), b.to_string())).collect();
        let list = RecommendationList::from_ids(pairs.iter().map(|(i, _)| ProductId::from(i.as_str())).collect()).unwrap();
        let outputs: HashSet<Vec<ProductId>> = (0..50)
            .map(|seed| {
                let cfg = ShuffleConfig { partition_length: 4, rng_seed: seed };
                shuffle(&list, &cfg, &b).unwrap().items().to_vec()
            })
            .collect();
        assert!(outputs.len() >= 2);
    }

    #[test]
    fn shuffle_degenerate_inputs() {
        let b = brands(&[("a", "A")]);
        let one = RecommendationList::from_ids(ids(&["a"])).unwrap();
        assert_eq!(shuffle(&one, &ShuffleConfig::default(), &b).unwrap(), one);

        let b = brands(&[("x1", "X"), ("x2", "X"), ("x3", "X"), ("x4", "X")]);
        let list = RecommendationList::from_ids(ids(&["x1", "x2", "x3", "x4"])).unwrap();
        let cfg = ShuffleConfig { partition_length: 4, rng_seed: 1 };
        let out = shuffle(&list, &cfg, &b).unwrap();
        assert_eq!(same_brand_adjacencies(out.items(), &b).unwrap(), 3);
    }

    #[test]
    fn unknown_brand_is_an_error() {
        let b = brands(&[("a", "A")]);
        let list = RecommendationList::from_ids(ids(&["a", "z"])).unwrap();
        assert!(matches!(
            shuffle(&list, &ShuffleConfig::default(), &b),
            Err(Error::UnknownProduct(_))
        ));
    }

    #[test]
    fn space_sizes() {
        assert_eq!(shuffle_space_size(4, 1, ShuffleMode::Whole).unwrap(), 24);
        assert_eq!(shuffle_space_size(4, 2, ShuffleMode::Batched).unwrap(), 4);
        assert_eq!(shuffle_space_size(0, 1, ShuffleMode::Whole).unwrap(), 1);
        assert_eq!(shuffle_space_size(5, 5, ShuffleMode::Batched).unwrap(), 5);
        assert!(matches!(
            shuffle_space_size(5, 2, ShuffleMode::Batched),
            Err(Error::IndivisibleBatch { n: 5, h: 2 })
        ));
        assert!(matches!(
            shuffle_space_size(40, 1, ShuffleMode::Whole),
            Err(Error::Overflow(40))
        ));
    }

    #[test]
    fn batched_enumeration() {
        assert_eq!(enumerate_batched_orders(4, 2), 4);
        assert_eq!(enumerate_batched_orders(6, 3), 36);
        assert!(batched_space_check(4, 2).unwrap().note.is_none());
        let check = batched_space_check(6, 3).unwrap();
        assert_eq!((check.formula, check.enumerated), (6, 36));
        assert!(check.note.is_some());
    }
}
