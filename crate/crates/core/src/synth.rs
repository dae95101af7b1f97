//! Seeded synthetic catalogs for tests, demos and the acceptance suite.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use std::collections::BTreeMap;

use crate::catalog::{Catalog, Price, Product};
use crate::grid::{generate_grid, ExperimentConfig, ExperimentRegime, GridError, GridSpec};
use crate::interventions::{builtin_nudges, SubstitutionTable};
use crate::pairing::{pair_catalog, subsample_pairs, PairConstraints, PairRegime, ProductPair};
use crate::policy::UserProfile;

const CATEGORIES: &[(&str, f64, f64)] = &[
    ("Headphones", 15.0, 250.0),
    ("Coffee Makers", 25.0, 400.0),
    ("Desk Lamps", 12.0, 120.0),
    ("Backpacks", 20.0, 180.0),
    ("Running Shoes", 40.0, 200.0),
    ("Phone Cases", 8.0, 60.0),
    ("Yoga Mats", 15.0, 110.0),
    ("Water Bottles", 8.0, 55.0),
    ("Keyboards", 20.0, 220.0),
    ("Blenders", 30.0, 350.0),
    ("Sunglasses", 12.0, 190.0),
    ("Office Chairs", 80.0, 600.0),
];

const ADJECTIVES: &[&str] = &[
    "Compact", "Classic", "Ultra", "Pro", "Everyday", "Premium", "Lightweight", "Durable", "Modern", "Essential",
];

/// Average-star ratings expressed as percentages, as a store shows them.
const RATINGS: &[u8] = &[40, 50, 60, 67, 70, 73, 75, 80, 80, 83, 85, 87, 87, 90, 93, 95, 100];

/// `n_products` products spread over up to twelve categories. Category
/// sizes vary; prices are log-uniform within each category's band.
pub fn synthetic_catalog(n_products: usize, seed: u64) -> Catalog {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_categories = CATEGORIES.len().min(n_products.max(1));
    let weights: Vec<f64> = (0..n_categories).map(|_| rng.random_range(0.3..1.0)).collect();
    let total: f64 = weights.iter().sum();
    let mut sizes: Vec<usize> = weights.iter().map(|w| (w / total * n_products as f64).floor() as usize).collect();
    let mut assigned: usize = sizes.iter().sum();
    let mut i = 0;
    while assigned < n_products {
        sizes[i % n_categories] += 1;
        assigned += 1;
        i += 1;
    }
    let mut products = Vec::with_capacity(n_products);
    for (c, &size) in sizes.iter().enumerate() {
        let (name, lo, hi) = CATEGORIES[c];
        let noun = name.trim_end_matches('s');
        for k in 0..size {
            let price = (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp();
            let adjective = ADJECTIVES.choose(&mut rng).expect("non-empty");
            products.push(Product {
                id: format!("S{c:02}{k:05}"),
                title: format!("{adjective} {noun} Model {}", rng.random_range(100..1000)),
                category: name.to_string(),
                price: Price::from_cents((price * 100.0).round() as u64),
                rating: *RATINGS.choose(&mut rng).expect("non-empty"),
                options_count: 0,
            });
        }
    }
    Catalog::from_products(products).expect("synthetic ids are unique")
}

/// Splits categories so that none has more than `max_size` products; used
/// to build instances small enough for brute-force checks.
pub fn cap_category_sizes(catalog: &Catalog, max_size: usize) -> Catalog {
    let mut products = Vec::new();
    for category in catalog.categories() {
        for (i, p) in catalog.category_products(category).into_iter().enumerate() {
            let mut p = p.clone();
            p.category = format!("{category} #{}", i / max_size.max(1));
            products.push(p);
        }
    }
    Catalog::from_products(products).expect("ids unchanged")
}

/// A ready-to-run experiment over a synthetic catalog.
#[derive(Debug, Clone)]
pub struct Study {
    pub catalog: Catalog,
    pub pairs: Vec<ProductPair>,
    pub configs: Vec<ExperimentConfig>,
}

impl Study {
    pub fn pair_map(&self) -> BTreeMap<String, ProductPair> {
        self.pairs.iter().map(|p| (p.pair_id.clone(), p.clone())).collect()
    }
}

/// 500 synthetic products, up to `n_pairs` pairs of the regime's kind, the
/// ten built-in nudges and the built-in substitution table.
pub fn synthetic_study(
    seed: u64,
    n_pairs: usize,
    regime: ExperimentRegime,
    models: &[String],
    profiles: &[UserProfile],
) -> Result<Study, GridError> {
    let catalog = synthetic_catalog(500, seed);
    let (pair_regime, constraints) = match regime {
        ExperimentRegime::Original => (PairRegime::Original, PairConstraints::original()),
        _ => (PairRegime::MatchedRatings, PairConstraints::matched()),
    };
    let pairs = subsample_pairs(&pair_catalog(&catalog, pair_regime, &constraints), n_pairs, seed);
    let table = SubstitutionTable::builtin();
    let configs = generate_grid(&GridSpec {
        pairs: &pairs,
        catalog: &catalog,
        nudges: &builtin_nudges(),
        regime,
        models,
        profiles,
        substitutions: &BTreeMap::new(),
        substituter: &table,
        seed,
    })?;
    Ok(Study { catalog, pairs, configs })
}
