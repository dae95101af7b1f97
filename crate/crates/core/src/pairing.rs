//! Two-alternative product pairs.
//!
//! Two products of the same category form a valid pair when their rating gap
//! (in points) and their relative price gap (difference over the lower price)
//! are both within the regime's thresholds. The original regime pairs
//! price-adjacent products; the matched-ratings regime takes a maximum set of
//! disjoint equal-rating pairs among near neighbours in price order.

use std::collections::{HashMap, HashSet};
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Catalog, Product};
use crate::digest::{derive_seed, short_id};

/// Largest neighbourhood supported by the matched-regime search.
pub const MAX_NEIGHBORHOOD: usize = 63;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PairingError {
    #[error("relative price gap undefined for non-positive price ({0} vs {1})")]
    NonPositivePrice(String, String),
    #[error("invalid constraints: {0}")]
    InvalidConstraints(String),
    #[error("coverage sampling needs at least 2 bins, got {0}")]
    TooFewBins(usize),
}

/// Pair validity thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairConstraints {
    /// Maximum absolute rating gap, in rating points.
    pub delta_r: u8,
    /// Maximum relative price gap, as a fraction of the lower price.
    pub delta_p: f64,
    /// Partner search neighbourhood in price order (matched regime).
    pub k: usize,
}

impl PairConstraints {
    pub fn new(delta_r: u8, delta_p: f64, k: usize) -> Result<Self, PairingError> {
        if delta_p.is_nan() || delta_p < 0.0 {
            return Err(PairingError::InvalidConstraints(format!("delta_p must be >= 0, got {delta_p}")));
        }
        if k == 0 || k > MAX_NEIGHBORHOOD {
            return Err(PairingError::InvalidConstraints(format!(
                "k must be in 1..={MAX_NEIGHBORHOOD}, got {k}"
            )));
        }
        Ok(PairConstraints { delta_r, delta_p, k })
    }

    /// Unmatched trials: 10 rating points, 50% relative price gap.
    pub const fn original() -> Self {
        PairConstraints { delta_r: 10, delta_p: 0.50, k: 10 }
    }

    /// Matched-rating trials: equal ratings, 50% relative price gap, k = 10.
    pub const fn matched() -> Self {
        PairConstraints { delta_r: 0, delta_p: 0.50, k: 10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairRegime {
    Original,
    MatchedRatings,
    /// Coverage sample varying price with ratings held within tolerance.
    PriceSweep,
    /// Coverage sample varying rating with prices held within tolerance.
    RatingSweep,
}

impl fmt::Display for PairRegime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PairRegime::Original => "original",
            PairRegime::MatchedRatings => "matched_ratings",
            PairRegime::PriceSweep => "price_sweep",
            PairRegime::RatingSweep => "rating_sweep",
        };
        f.write_str(s)
    }
}

/// An ordered 2AFC instance. `slot_a` is shown in tab 0 and viewed first.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ProductPair {
    pub pair_id: String,
    pub slot_a: String,
    pub slot_b: String,
    pub category: String,
    pub regime: PairRegime,
    pub order_seed: u64,
}

impl ProductPair {
    /// Builds a pair; the pair id does not depend on argument order and the
    /// slot assignment depends only on `order_seed`.
    pub fn new(regime: PairRegime, first: &Product, second: &Product, order_seed: u64) -> Self {
        let (lo, hi) = if first.id <= second.id { (first, second) } else { (second, first) };
        let pair_id = format!(
            "{}-{}",
            regime_tag(regime),
            short_id(&[&regime.to_string(), &lo.category, &lo.id, &hi.id], 12)
        );
        let mut pair = ProductPair {
            pair_id,
            slot_a: lo.id.clone(),
            slot_b: hi.id.clone(),
            category: lo.category.clone(),
            regime,
            order_seed: 0,
        };
        pair.reorder(order_seed);
        pair
    }

    /// Re-derives the slot assignment from a new order seed: odd seeds put
    /// the lexicographically larger id in slot a.
    pub fn reorder(&mut self, order_seed: u64) {
        let (lo, hi) = if self.slot_a <= self.slot_b {
            (self.slot_a.clone(), self.slot_b.clone())
        } else {
            (self.slot_b.clone(), self.slot_a.clone())
        };
        if order_seed.is_multiple_of(2) {
            self.slot_a = lo;
            self.slot_b = hi;
        } else {
            self.slot_a = hi;
            self.slot_b = lo;
        }
        self.order_seed = order_seed;
    }

    pub fn contains(&self, product_id: &str) -> bool {
        self.slot_a == product_id || self.slot_b == product_id
    }
}

fn regime_tag(regime: PairRegime) -> &'static str {
    match regime {
        PairRegime::Original => "o",
        PairRegime::MatchedRatings => "m",
        PairRegime::PriceSweep => "ps",
        PairRegime::RatingSweep => "rs",
    }
}

/// Relative price gap `|p1 - p2| / min(p1, p2)`.
pub fn relative_price_gap(p1: &Product, p2: &Product) -> Result<f64, PairingError> {
    let (a, b) = (p1.price.cents(), p2.price.cents());
    let lo = a.min(b);
    if lo == 0 {
        return Err(PairingError::NonPositivePrice(p1.id.clone(), p2.id.clone()));
    }
    Ok(a.abs_diff(b) as f64 / lo as f64)
}

/// Pair validity: rating gap within `delta_r` points and relative price gap
/// within `delta_p`.
pub fn is_valid_pair(p1: &Product, p2: &Product, c: &PairConstraints) -> Result<bool, PairingError> {
    let gap = relative_price_gap(p1, p2)?;
    let rating_ok = p1.rating.abs_diff(p2.rating) <= c.delta_r;
    // Prices are exact cents; the slack only absorbs division rounding.
    Ok(rating_ok && gap <= c.delta_p + 1e-12)
}

fn valid_or_false(p1: &Product, p2: &Product, c: &PairConstraints) -> bool {
    is_valid_pair(p1, p2, c).unwrap_or(false)
}

/// Consecutive pairing over a price-sorted list: emits `(i, i+1)` when valid
/// and then continues from `i + 2`, so each product joins at most one pair.
pub fn pair_original(products: &[&Product], c: &PairConstraints) -> Vec<ProductPair> {
    let mut out = Vec::new();
    let mut i = 0;
    while i + 1 < products.len() {
        if valid_or_false(products[i], products[i + 1], c) {
            out.push(ProductPair::new(PairRegime::Original, products[i], products[i + 1], 0));
            i += 2;
        } else {
            i += 1;
        }
    }
    out
}

/// Maximum-cardinality set of disjoint valid pairs whose partners are at
/// most `c.k` positions apart in the price-sorted list. Among maximum sets,
/// the lexicographically smallest list of index pairs is returned.
pub fn pair_matched(products: &[&Product], c: &PairConstraints) -> Vec<ProductPair> {
    let k = c.k.min(MAX_NEIGHBORHOOD);
    banded_max_matching(products.len(), k, |i, j| valid_or_false(products[i], products[j], c))
        .into_iter()
        .map(|(i, j)| ProductPair::new(PairRegime::MatchedRatings, products[i], products[j], 0))
        .collect()
}

/// Exact maximum matching on a graph whose edges join positions at most `k`
/// apart. Dynamic program over positions; the state is the bitmask of the
/// next `k` positions already taken by earlier partners.
pub(crate) fn banded_max_matching(
    n: usize,
    k: usize,
    edge: impl Fn(usize, usize) -> bool,
) -> Vec<(usize, usize)> {
    assert!(k <= MAX_NEIGHBORHOOD);
    if n < 2 {
        return Vec::new();
    }
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, partners) in adj.iter_mut().enumerate() {
        for t in 1..=k {
            let j = i + t;
            if j >= n {
                break;
            }
            if edge(i, j) {
                partners.push(t);
            }
        }
    }

    // Forward pass: reachable masks per position.
    let mut layers: Vec<HashSet<u64>> = vec![HashSet::new(); n + 1];
    layers[0].insert(0);
    for i in 0..n {
        let current: Vec<u64> = layers[i].iter().copied().collect();
        for mask in current {
            for next in successors(mask, &adj[i]) {
                layers[i + 1].insert(next.1);
            }
        }
    }

    // Backward pass: best number of further pairs from (i, mask).
    let mut best: Vec<HashMap<u64, u32>> = vec![HashMap::new(); n + 1];
    for &mask in &layers[n] {
        best[n].insert(mask, 0);
    }
    for i in (0..n).rev() {
        let masks: Vec<u64> = layers[i].iter().copied().collect();
        for mask in masks {
            let value = successors(mask, &adj[i])
                .map(|(partner, next)| best[i + 1][&next] + u32::from(partner.is_some()))
                .max()
                .unwrap_or(0);
            best[i].insert(mask, value);
        }
    }

    // Reconstruction: successors are listed nearest partner first with the
    // skip last, which yields the lexicographically smallest optimum.
    let mut pairs = Vec::new();
    let mut mask = 0u64;
    for i in 0..n {
        let target = best[i][&mask];
        let (partner, next) = successors(mask, &adj[i])
            .find(|(partner, next)| best[i + 1][next] + u32::from(partner.is_some()) == target)
            .expect("optimal successor exists");
        if let Some(t) = partner {
            pairs.push((i, i + t));
        }
        mask = next;
    }
    pairs
}

/// Transitions out of position `i`: `(Some(offset), mask)` for matching with
/// the partner at `i + offset`, `(None, mask)` for leaving `i` unmatched.
fn successors<'a>(mask: u64, partners: &'a [usize]) -> Box<dyn Iterator<Item = (Option<usize>, u64)> + 'a> {
    if mask & 1 == 1 {
        return Box::new(std::iter::once((None, mask >> 1)));
    }
    Box::new(
        partners
            .iter()
            .filter(move |&&t| mask & (1u64 << t) == 0)
            .map(move |&t| (Some(t), (mask | (1u64 << t)) >> 1))
            .chain(std::iter::once((None, mask >> 1))),
    )
}

/// Uniform subsample of at most `n` pairs, deterministic in `seed`. Every
/// returned pair gets an order seed derived from `(seed, pair_id)`.
pub fn subsample_pairs(pairs: &[ProductPair], n: usize, seed: u64) -> Vec<ProductPair> {
    let chosen: Vec<usize> = if pairs.len() <= n {
        (0..pairs.len()).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = rand::seq::index::sample(&mut rng, pairs.len(), n).into_vec();
        idx.sort_unstable();
        idx
    };
    chosen
        .into_iter()
        .map(|i| {
            let mut pair = pairs[i].clone();
            pair.reorder(derive_seed(seed, &pair.pair_id));
            pair
        })
        .collect()
}

/// Builds pairs for every category of `catalog` under one regime.
pub fn pair_catalog(catalog: &Catalog, regime: PairRegime, c: &PairConstraints) -> Vec<ProductPair> {
    catalog
        .categories()
        .flat_map(|cat| {
            let products = catalog.category_products(cat);
            match regime {
                PairRegime::MatchedRatings => pair_matched(&products, c),
                _ => pair_original(&products, c),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverageMode {
    Price,
    Rating,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageTolerances {
    /// Allowed rating gap (points) when sweeping price.
    pub rating_tol: u8,
    /// Allowed relative price gap when sweeping rating.
    pub price_tol: f64,
}

impl CoverageTolerances {
    /// Constraints that every pair emitted in `mode` satisfies.
    pub fn constraints(&self, mode: CoverageMode) -> PairConstraints {
        match mode {
            CoverageMode::Price => PairConstraints { delta_r: self.rating_tol, delta_p: f64::INFINITY, k: 1 },
            CoverageMode::Rating => PairConstraints { delta_r: 100, delta_p: self.price_tol, k: 1 },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapStratum {
    Small,
    Moderate,
    Large,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoveragePair {
    pub pair: ProductPair,
    /// Relative price gap (price mode) or rating gap in points (rating mode).
    pub gap: f64,
    pub stratum: GapStratum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryCoverage {
    pub category: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CoverageSample {
    pub pairs: Vec<CoveragePair>,
    /// Categories spanning at least two bins, best coverage first.
    pub ranking: Vec<CategoryCoverage>,
    pub diagnostic: Option<String>,
}

fn mode_value(p: &Product, mode: CoverageMode) -> f64 {
    match mode {
        CoverageMode::Price => p.price.cents() as f64,
        CoverageMode::Rating => f64::from(p.rating),
    }
}

/// Equal-width bin index of every product over the products' own range.
fn bin_indices(products: &[&Product], mode: CoverageMode, bins: usize) -> Vec<usize> {
    let values: Vec<f64> = products.iter().map(|p| mode_value(p, mode)).collect();
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    values
        .iter()
        .map(|&v| {
            if hi <= lo {
                0
            } else {
                (((v - lo) / (hi - lo)) * bins as f64).floor().min((bins - 1) as f64) as usize
            }
        })
        .collect()
}

/// Fraction of the `bins` equal-width bins (over the products' range of the
/// mode attribute) that contain at least one product.
pub fn coverage_score(products: &[&Product], mode: CoverageMode, bins: usize) -> f64 {
    if products.is_empty() || bins == 0 {
        return 0.0;
    }
    let occupied: HashSet<usize> = bin_indices(products, mode, bins).into_iter().collect();
    occupied.len() as f64 / bins as f64
}

/// Coverage-based pair sampling for price or rating sensitivity analyses.
///
/// Categories are ranked by coverage score; within each, up to
/// `max_per_category` products are picked round-robin across bins, and
/// disjoint pairs that vary in the mode attribute (other attribute within
/// tolerance) are drawn in rotation across small/moderate/large gap terciles.
pub fn coverage_sample(
    catalog: &Catalog,
    mode: CoverageMode,
    tolerances: CoverageTolerances,
    bins: usize,
    max_per_category: usize,
) -> Result<CoverageSample, PairingError> {
    if bins < 2 {
        return Err(PairingError::TooFewBins(bins));
    }
    let mut ranking: Vec<CategoryCoverage> = catalog
        .categories()
        .filter_map(|cat| {
            let products = catalog.category_products(cat);
            let score = coverage_score(&products, mode, bins);
            (score * bins as f64 >= 2.0 - 1e-9).then(|| CategoryCoverage { category: cat.to_string(), score })
        })
        .collect();
    ranking.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.category.cmp(&b.category)));
    if ranking.is_empty() {
        return Ok(CoverageSample {
            diagnostic: Some(format!("no category spans at least 2 of {bins} {mode:?} bins")),
            ..Default::default()
        });
    }

    let constraints = tolerances.constraints(mode);
    let regime = match mode {
        CoverageMode::Price => PairRegime::PriceSweep,
        CoverageMode::Rating => PairRegime::RatingSweep,
    };
    let mut pairs = Vec::new();
    for entry in &ranking {
        let mut products = catalog.category_products(&entry.category);
        products.sort_by(|a, b| mode_value(a, mode).total_cmp(&mode_value(b, mode)).then_with(|| a.id.cmp(&b.id)));
        let selected = select_for_coverage(&products, mode, bins, max_per_category);
        pairs.extend(stratified_pairs(&selected, mode, &constraints, regime));
    }
    let diagnostic = pairs
        .is_empty()
        .then(|| "no product pair satisfies the tolerance on the held attribute".to_string());
    Ok(CoverageSample { pairs, ranking, diagnostic })
}

fn select_for_coverage<'a>(
    products: &[&'a Product],
    mode: CoverageMode,
    bins: usize,
    max_per_category: usize,
) -> Vec<&'a Product> {
    let idx = bin_indices(products, mode, bins);
    let mut by_bin: Vec<Vec<&Product>> = vec![Vec::new(); bins];
    for (p, b) in products.iter().zip(idx) {
        by_bin[b].push(p);
    }
    let mut cursors = vec![0usize; bins];
    let mut selected = Vec::new();
    loop {
        let mut progressed = false;
        for b in 0..bins {
            if selected.len() >= max_per_category {
                return selected;
            }
            if let Some(p) = by_bin[b].get(cursors[b]) {
                selected.push(*p);
                cursors[b] += 1;
                progressed = true;
            }
        }
        if !progressed {
            return selected;
        }
    }
}

fn stratified_pairs(
    selected: &[&Product],
    mode: CoverageMode,
    constraints: &PairConstraints,
    regime: PairRegime,
) -> Vec<CoveragePair> {
    let mut candidates: Vec<(f64, &Product, &Product)> = Vec::new();
    for (i, a) in selected.iter().enumerate() {
        for b in &selected[i + 1..] {
            if !valid_or_false(a, b, constraints) {
                continue;
            }
            let gap = match mode {
                CoverageMode::Price => relative_price_gap(a, b).unwrap_or(0.0),
                CoverageMode::Rating => f64::from(a.rating.abs_diff(b.rating)),
            };
            if gap > 0.0 {
                candidates.push((gap, a, b));
            }
        }
    }
    if candidates.is_empty() {
        return Vec::new();
    }
    candidates.sort_by(|x, y| x.0.total_cmp(&y.0).then_with(|| (&x.1.id, &x.2.id).cmp(&(&y.1.id, &y.2.id))));
    let m = candidates.len();
    let t1 = candidates[m.div_ceil(3) - 1].0;
    let t2 = candidates[(2 * m).div_ceil(3) - 1].0;
    let stratum_of = |g: f64| {
        if g <= t1 {
            GapStratum::Small
        } else if g <= t2 {
            GapStratum::Moderate
        } else {
            GapStratum::Large
        }
    };
    let mut strata: [Vec<(f64, &Product, &Product)>; 3] = Default::default();
    for c in candidates {
        strata[stratum_of(c.0) as usize].push(c);
    }

    let mut used: HashSet<&str> = HashSet::new();
    let mut cursors = [0usize; 3];
    let mut out = Vec::new();
    loop {
        let mut progressed = false;
        for s in 0..3 {
            while let Some(&(gap, a, b)) = strata[s].get(cursors[s]) {
                cursors[s] += 1;
                if used.contains(a.id.as_str()) || used.contains(b.id.as_str()) {
                    continue;
                }
                used.insert(&a.id);
                used.insert(&b.id);
                out.push(CoveragePair {
                    pair: ProductPair::new(regime, a, b, 0),
                    gap,
                    stratum: stratum_of(gap),
                });
                progressed = true;
                break;
            }
        }
        if !progressed {
            return out;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::Price;

    fn prod(id: &str, cents: u64, rating: u8) -> Product {
        Product {
            id: id.into(),
            title: id.into(),
            category: "cat".into(),
            price: Price::from_cents(cents),
            rating,
            options_count: 0,
        }
    }

    #[test]
    fn validity_examples() {
        let a = prod("a", 10000, 88);
        let b = prod("b", 14000, 95);
        assert!(is_valid_pair(&a, &b, &PairConstraints::original()).unwrap());
        let c = prod("c", 16000, 88);
        assert!(!is_valid_pair(&a, &c, &PairConstraints::original()).unwrap());
        for cons in [PairConstraints::original(), PairConstraints::matched()] {
            assert!(is_valid_pair(&a, &a, &cons).unwrap());
        }
        // 50% exactly is on the boundary and allowed.
        let d = prod("d", 15000, 88);
        assert!(is_valid_pair(&a, &d, &PairConstraints::original()).unwrap());
        let free = prod("free", 0, 88);
        assert!(matches!(
            is_valid_pair(&a, &free, &PairConstraints::original()),
            Err(PairingError::NonPositivePrice(..))
        ));
    }

    #[test]
    fn constraint_defaults_and_validation() {
        let o = PairConstraints::original();
        assert_eq!((o.delta_r, o.delta_p, o.k), (10, 0.5, 10));
        let m = PairConstraints::matched();
        assert_eq!((m.delta_r, m.delta_p, m.k), (0, 0.5, 10));
        assert!(PairConstraints::new(0, 0.5, 0).is_err());
        assert!(PairConstraints::new(0, -0.1, 3).is_err());
        assert!(PairConstraints::new(0, 0.5, 64).is_err());
    }

    #[test]
    fn original_pairing_walk() {
        let one = [prod("a", 100, 50)];
        assert!(pair_original(&one.iter().collect::<Vec<_>>(), &PairConstraints::original()).is_empty());

        let four = [prod("a", 100, 50), prod("b", 110, 52), prod("c", 120, 54), prod("d", 130, 56)];
        let refs: Vec<_> = four.iter().collect();
        let pairs = pair_original(&refs, &PairConstraints::original());
        assert_eq!(pairs.len(), 2);
        assert!(pairs[0].contains("a") && pairs[0].contains("b"));
        assert!(pairs[1].contains("c") && pairs[1].contains("d"));

        // (0,1) invalid because of the rating gap, (1,2) valid.
        let three = [prod("a", 100, 10), prod("b", 110, 60), prod("c", 120, 62)];
        let refs: Vec<_> = three.iter().collect();
        let pairs = pair_original(&refs, &PairConstraints::original());
        assert_eq!(pairs.len(), 1);
        assert!(pairs[0].contains("b") && pairs[0].contains("c"));
    }

    #[test]
    fn matched_pairing_examples() {
        let two = [prod("a", 100, 90), prod("b", 120, 90)];
        let refs: Vec<_> = two.iter().collect();
        assert_eq!(pair_matched(&refs, &PairConstraints::matched()).len(), 1);

        let three = [prod("a", 1000, 90), prod("b", 1100, 90), prod("c", 1200, 90)];
        let refs: Vec<_> = three.iter().collect();
        let pairs = pair_matched(&refs, &PairConstraints::matched());
        assert_eq!(pairs.len(), 1);
        assert!(pairs[0].contains("a") && pairs[0].contains("b"));

        let three = [prod("a", 1000, 90), prod("b", 1100, 91), prod("c", 1200, 90)];
        let refs: Vec<_> = three.iter().collect();
        let pairs = pair_matched(&refs, &PairConstraints::matched());
        assert_eq!(pairs.len(), 1);
        assert!(pairs[0].contains("a") && pairs[0].contains("c"));
        let narrow = PairConstraints::new(0, 0.5, 1).unwrap();
        assert!(pair_matched(&refs, &narrow).is_empty());
    }

    #[test]
    fn banded_matching_prefers_lexicographically_smallest() {
        // Path 0-1-2-3: optimum {(0,1),(2,3)}.
        let m = banded_max_matching(4, 1, |_, _| true);
        assert_eq!(m, vec![(0, 1), (2, 3)]);
        // Complete graph on 5 with k = 4.
        let m = banded_max_matching(5, 4, |_, _| true);
        assert_eq!(m, vec![(0, 1), (2, 3)]);
        // Greedy nearest partner would be suboptimal here: 0-1, 1-2 blocked.
        let edges = [(0, 1), (0, 2), (1, 3)];
        let m = banded_max_matching(4, 3, |i, j| edges.contains(&(i, j)));
        assert_eq!(m, vec![(0, 2), (1, 3)]);
    }

    #[test]
    fn subsample_sizes_and_determinism() {
        let products: Vec<Product> = (0..120).map(|i| prod(&format!("p{i:03}"), 100 + i, 50)).collect();
        let refs: Vec<_> = products.iter().collect();
        let pairs = pair_original(&refs, &PairConstraints::original());
        assert_eq!(pairs.len(), 60);
        let s1 = subsample_pairs(&pairs, 50, 11);
        assert_eq!(s1.len(), 50);
        assert_eq!(s1, subsample_pairs(&pairs, 50, 11));
        assert!(subsample_pairs(&pairs, 0, 11).is_empty());
        let all = subsample_pairs(&pairs, 100, 3);
        assert_eq!(all.len(), 60);
        // Orientation really varies.
        let swapped = all.iter().filter(|p| p.slot_a > p.slot_b).count();
        assert!(swapped > 10 && swapped < 50, "{swapped}");
    }

    #[test]
    fn reorder_is_a_function_of_seed() {
        let (a, b) = (prod("a", 1, 1), prod("b", 1, 1));
        let p = ProductPair::new(PairRegime::Original, &b, &a, 3);
        let q = ProductPair::new(PairRegime::Original, &a, &b, 3);
        assert_eq!(p, q);
        assert_eq!(p.slot_a, "b");
        let r = ProductPair::new(PairRegime::Original, &a, &b, 4);
        assert_eq!(r.slot_a, "a");
        assert_eq!(p.pair_id, r.pair_id);
    }

    #[test]
    fn coverage_score_counts_occupied_bins() {
        // Range 0..100 in 5 bins of width 20: bins 0, 2, 4.
        let ps = [prod("a", 0, 50), prod("b", 5000, 50), prod("c", 10000, 50), prod("d", 4500, 50)];
        let refs: Vec<_> = ps.iter().collect();
        assert!((coverage_score(&refs, CoverageMode::Price, 5) - 0.6).abs() < 1e-12);
    }

    #[test]
    fn coverage_rating_mode_with_equal_prices() {
        let ps: Vec<Product> = (0..8).map(|i| prod(&format!("p{i}"), 2000, 40 + 7 * i as u8)).collect();
        let cat = Catalog::from_products(ps).unwrap();
        let tol = CoverageTolerances { rating_tol: 0, price_tol: 0.0 };
        let sample = coverage_sample(&cat, CoverageMode::Rating, tol, 5, 8).unwrap();
        assert!(!sample.pairs.is_empty());
        let mut seen = HashSet::new();
        for cp in &sample.pairs {
            let (a, b) = (cat.get(&cp.pair.slot_a).unwrap(), cat.get(&cp.pair.slot_b).unwrap());
            assert!(is_valid_pair(a, b, &tol.constraints(CoverageMode::Rating)).unwrap());
            assert!(seen.insert(a.id.clone()) && seen.insert(b.id.clone()));
            assert_eq!(cp.gap, f64::from(a.rating.abs_diff(b.rating)));
        }
        let strata: HashSet<_> = sample.pairs.iter().map(|p| p.stratum).collect();
        assert!(strata.len() >= 2);
    }

    #[test]
    fn coverage_price_mode_unsatisfiable_tolerance() {
        let ps: Vec<Product> = (0..6).map(|i| prod(&format!("p{i}"), 1000 + 400 * i, 50 + i as u8)).collect();
        let cat = Catalog::from_products(ps).unwrap();
        let tol = CoverageTolerances { rating_tol: 0, price_tol: 0.1 };
        let sample = coverage_sample(&cat, CoverageMode::Price, tol, 5, 6).unwrap();
        assert!(sample.pairs.is_empty());
        assert!(sample.diagnostic.is_some());
    }

    #[test]
    fn coverage_requires_spread() {
        let ps: Vec<Product> = (0..3).map(|i| prod(&format!("p{i}"), 1000, 50 + i as u8)).collect();
        let cat = Catalog::from_products(ps).unwrap();
        let tol = CoverageTolerances { rating_tol: 5, price_tol: 0.1 };
        let sample = coverage_sample(&cat, CoverageMode::Price, tol, 5, 6).unwrap();
        assert!(sample.pairs.is_empty() && sample.ranking.is_empty());
        assert!(sample.diagnostic.unwrap().contains("no category"));
        assert!(matches!(
            coverage_sample(&cat, CoverageMode::Price, tol, 1, 6),
            Err(PairingError::TooFewBins(1))
        ));
    }
}
