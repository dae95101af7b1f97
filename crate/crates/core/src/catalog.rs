//! Product catalog ingestion and preprocessing.
//!
//! Catalog files are line-delimited JSON, one product per line, with the
//! fields `id`, `title`, `category`, `price`, `rating` and `options_count`.
//! Prices are decimal strings with at most two fractional digits.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;
use std::sync::Arc;

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// A non-negative amount in currency units, stored as integer cents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Price(u64);

impl Price {
    pub const fn from_cents(cents: u64) -> Self {
        Price(cents)
    }

    pub const fn cents(self) -> u64 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / 100.0
    }

    /// Display form with a currency symbol, e.g. `$38.99`.
    pub fn display_usd(self) -> String {
        format!("${self}")
    }
}

impl fmt::Display for Price {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:02}", self.0 / 100, self.0 % 100)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PriceParseError {
    #[error("empty price")]
    Empty,
    #[error("negative price `{0}`")]
    Negative(String),
    #[error("invalid price `{0}`")]
    Invalid(String),
    #[error("price `{0}` has more than two fractional digits")]
    TooPrecise(String),
}

impl FromStr for Price {
    type Err = PriceParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let s = s.strip_prefix('$').unwrap_or(s);
        if s.is_empty() {
            return Err(PriceParseError::Empty);
        }
        if s.starts_with('-') {
            return Err(PriceParseError::Negative(s.to_string()));
        }
        let (whole, frac) = match s.split_once('.') {
            Some((w, f)) => (w, f),
            None => (s, ""),
        };
        let digits = |part: &str| part.bytes().all(|b| b.is_ascii_digit());
        if whole.is_empty() || !digits(whole) || !digits(frac) {
            return Err(PriceParseError::Invalid(s.to_string()));
        }
        if frac.len() > 2 {
            return Err(PriceParseError::TooPrecise(s.to_string()));
        }
        let whole: u64 = whole
            .parse()
            .map_err(|_| PriceParseError::Invalid(s.to_string()))?;
        let mut frac_cents: u64 = if frac.is_empty() { 0 } else { frac.parse().unwrap_or(0) };
        if frac.len() == 1 {
            frac_cents *= 10;
        }
        whole
            .checked_mul(100)
            .and_then(|c| c.checked_add(frac_cents))
            .map(Price)
            .ok_or_else(|| PriceParseError::Invalid(s.to_string()))
    }
}

impl Serialize for Price {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Price {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Text(String),
            Number(serde_json::Number),
        }
        let text = match Raw::deserialize(deserializer)? {
            Raw::Text(s) => s,
            Raw::Number(n) => n.to_string(),
        };
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// One catalog item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Product {
    pub id: String,
    pub title: String,
    pub category: String,
    pub price: Price,
    /// Integer percent in `[0, 100]`.
    pub rating: u8,
    /// Number of sub-option dimensions (size, color, ...) on the product page.
    pub options_count: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct RecordError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("duplicate product ids: {}", .0.join(", "))]
    DuplicateIds(Vec<String>),
    #[error("catalog i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("catalog serialization: {0}")]
    Json(#[from] serde_json::Error),
}

/// Products grouped by category; each bucket is sorted by ascending price
/// with ties broken by id.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Catalog {
    products: BTreeMap<String, Product>,
    categories: BTreeMap<String, Vec<String>>,
}

impl Catalog {
    pub fn from_products(products: impl IntoIterator<Item = Product>) -> Result<Self, CatalogError> {
        let mut map = BTreeMap::new();
        let mut dups = BTreeSet::new();
        for p in products {
            if map.contains_key(&p.id) {
                dups.insert(p.id.clone());
                continue;
            }
            map.insert(p.id.clone(), p);
        }
        if !dups.is_empty() {
            return Err(CatalogError::DuplicateIds(dups.into_iter().collect()));
        }
        Ok(Self::index(map))
    }

    fn index(products: BTreeMap<String, Product>) -> Self {
        let mut categories: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for p in products.values() {
            categories.entry(p.category.clone()).or_default().push(p.id.clone());
        }
        for ids in categories.values_mut() {
            ids.sort_by(|a, b| {
                let (pa, pb) = (&products[a], &products[b]);
                pa.price.cmp(&pb.price).then_with(|| pa.id.cmp(&pb.id))
            });
        }
        Catalog { products, categories }
    }

    pub fn len(&self) -> usize {
        self.products.len()
    }

    pub fn is_empty(&self) -> bool {
        self.products.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Product> {
        self.products.get(id)
    }

    /// Products in id order.
    pub fn products(&self) -> impl Iterator<Item = &Product> {
        self.products.values()
    }

    pub fn categories(&self) -> impl Iterator<Item = &str> {
        self.categories.keys().map(String::as_str)
    }

    pub fn category_count(&self) -> usize {
        self.categories.len()
    }

    pub fn category_ids(&self, category: &str) -> &[String] {
        self.categories.get(category).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Products of one category in canonical (price, id) order.
    pub fn category_products(&self, category: &str) -> Vec<&Product> {
        self.category_ids(category).iter().map(|id| &self.products[id]).collect()
    }

    /// Writes the catalog as line-delimited records in canonical order.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), CatalogError> {
        for ids in self.categories.values() {
            for id in ids {
                serde_json::to_writer(&mut out, &self.products[id])?;
                out.write_all(b"\n")?;
            }
        }
        Ok(())
    }
}

/// Result of a catalog load: the catalog plus per-record errors for lines
/// that could not be parsed.
#[derive(Debug)]
pub struct LoadedCatalog {
    pub catalog: Catalog,
    pub errors: Vec<RecordError>,
}

/// Reads line-delimited product records. Malformed lines are reported and
/// skipped; duplicate ids fail the whole load.
pub fn load_catalog<R: BufRead>(source: R) -> Result<LoadedCatalog, CatalogError> {
    let mut products = Vec::new();
    let mut errors = Vec::new();
    for (idx, line) in source.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        match parse_record(&line) {
            Ok(p) => products.push(p),
            Err(message) => errors.push(RecordError { line: line_no, message }),
        }
    }
    let catalog = Catalog::from_products(products)?;
    Ok(LoadedCatalog { catalog, errors })
}

fn parse_record(line: &str) -> Result<Product, String> {
    let product: Product = serde_json::from_str(line).map_err(|e| e.to_string())?;
    if product.id.is_empty() {
        return Err("empty id".into());
    }
    if product.rating > 100 {
        return Err(format!("rating {} outside [0, 100]", product.rating));
    }
    Ok(product)
}

/// Optional external title classifier (for instance an LLM call whose
/// answers are cached). Returns `true` for titles that should be removed.
pub trait TitleClassifier: Send + Sync {
    fn flags(&self, title: &str) -> bool;
}

/// Deterministic title filter: case-insensitive phrases plus regular
/// expressions for pack/bundle/quantity wording.
#[derive(Debug, Clone)]
pub struct TitleFilter {
    pub version: String,
    phrases: Vec<String>,
    patterns: Vec<Regex>,
}

/// Phrases that read as built-in promotion.
const DEFAULT_PHRASES: &[&str] = &[
    "top-rated",
    "top rated",
    "best seller",
    "best-seller",
    "bestseller",
    "best selling",
    "best-selling",
    "great for",
    "perfect for",
    "ideal for",
    "great gift",
    "perfect gift",
    "#1",
    "number one",
    "highly recommended",
    "recommended by",
    "award-winning",
    "award winning",
    "limited edition",
    "must-have",
    "must have",
    "free shipping",
    "buy 1 get 1",
    "bogo",
];

/// Multi-pack, bundle and explicit quantity wording.
const DEFAULT_PATTERNS: &[&str] = &[
    r"\bpack\s+of\s+\d+",
    r"\b\d+\s*-?\s*packs?\b",
    r"\b\d+\s*-?\s*(count|ct|pcs|pieces|piece|pc|units)\b",
    r"\bcount\b",
    r"\bset\s+of\s+\d+",
    r"\bbundle",
    r"\bmulti-?packs?\b",
    r"\bvalue\s+pack\b",
    r"\b(twin|double|triple)\s+pack\b",
    r"\b\d+\s*x\s*\d+\s*(oz|ml|g|count|pack)\b",
];

impl TitleFilter {
    pub const DEFAULT_VERSION: &'static str = "titles-v1";

    pub fn new(version: impl Into<String>, phrases: &[&str], patterns: &[&str]) -> Result<Self, regex::Error> {
        let patterns = patterns
            .iter()
            .map(|p| RegexBuilder::new(p).case_insensitive(true).build())
            .collect::<Result<Vec<_>, _>>()?;
        Ok(TitleFilter {
            version: version.into(),
            phrases: phrases.iter().map(|p| p.to_lowercase()).collect(),
            patterns,
        })
    }

    pub fn matches(&self, title: &str) -> bool {
        let lower = title.to_lowercase();
        self.phrases.iter().any(|p| lower.contains(p.as_str()))
            || self.patterns.iter().any(|re| re.is_match(title))
    }
}

impl Default for TitleFilter {
    fn default() -> Self {
        TitleFilter::new(Self::DEFAULT_VERSION, DEFAULT_PHRASES, DEFAULT_PATTERNS)
            .expect("built-in title patterns compile")
    }
}

/// Eligibility rules applied by [`preprocess`].
#[derive(Clone, Default)]
pub struct FilterRules {
    pub title_filter: Option<TitleFilter>,
    pub classifier: Option<Arc<dyn TitleClassifier>>,
}

impl fmt::Debug for FilterRules {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FilterRules")
            .field("title_filter", &self.title_filter.as_ref().map(|t| &t.version))
            .field("classifier", &self.classifier.is_some())
            .finish()
    }
}

impl FilterRules {
    /// Nonzero rating, no sub-options, and the default title filter.
    pub fn standard() -> Self {
        FilterRules {
            title_filter: Some(TitleFilter::default()),
            classifier: None,
        }
    }

    pub fn with_classifier(mut self, classifier: Arc<dyn TitleClassifier>) -> Self {
        self.classifier = Some(classifier);
        self
    }

    pub fn is_eligible(&self, p: &Product) -> bool {
        if p.rating == 0 || p.options_count != 0 {
            return false;
        }
        if self.title_filter.as_ref().is_some_and(|f| f.matches(&p.title)) {
            return false;
        }
        if self.classifier.as_ref().is_some_and(|c| c.flags(&p.title)) {
            return false;
        }
        true
    }
}

/// Keeps the experiment-eligible products. Never adds or modifies products.
pub fn preprocess(catalog: &Catalog, rules: &FilterRules) -> Catalog {
    let kept = catalog
        .products
        .iter()
        .filter(|(_, p)| rules.is_eligible(p))
        .map(|(id, p)| (id.clone(), p.clone()))
        .collect();
    Catalog::index(kept)
}
