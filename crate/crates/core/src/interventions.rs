//! Nudge catalog and observation rewrites.
//!
//! An [`Intervention`] maps the rendered product pages of a session to new
//! pages before the agent sees them: injecting a nudge line right after a
//! product title, or displaying a different price. Interventions compose,
//! and the empty composition is the identity.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::Price;
use crate::page::{Element, Page, Role};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Slot {
    A,
    B,
}

impl Slot {
    pub const BOTH: [Slot; 2] = [Slot::A, Slot::B];

    pub fn index(self) -> usize {
        match self {
            Slot::A => 0,
            Slot::B => 1,
        }
    }

    pub fn other(self) -> Slot {
        match self {
            Slot::A => Slot::B,
            Slot::B => Slot::A,
        }
    }

    pub fn from_index(i: usize) -> Option<Slot> {
        match i {
            0 => Some(Slot::A),
            1 => Some(Slot::B),
            _ => None,
        }
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Slot::A => "a",
            Slot::B => "b",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Influence {
    Authority,
    SocialProof,
    Scarcity,
    NegativeFraming,
    Incentives,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Valence {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Nudge {
    pub nudge_id: String,
    pub category_of_influence: Influence,
    /// Text, possibly with `${expertise}` / `${category}` variables.
    pub template: String,
    pub valence: Valence,
}

impl Nudge {
    fn new(id: &str, influence: Influence, template: &str) -> Self {
        let valence = if influence == Influence::NegativeFraming {
            Valence::Negative
        } else {
            Valence::Positive
        };
        Nudge {
            nudge_id: id.into(),
            category_of_influence: influence,
            template: template.into(),
            valence,
        }
    }
}

/// The ten built-in nudges, two per category of influence.
pub fn builtin_nudges() -> Vec<Nudge> {
    use Influence::*;
    vec![
        Nudge::new("authority_experts", Authority, "This product is highly recommended by leading ${expertise}"),
        Nudge::new(
            "authority_wirecutter",
            Authority,
            "This product is Wirecutter's top pick in the ${category} category",
        ),
        Nudge::new("social_proof_best_seller", SocialProof, "This product is a best seller!"),
        Nudge::new("social_proof_customers", SocialProof, "This product has been purchased by 50,000+ customers"),
        Nudge::new("scarcity_next_hour", Scarcity, "This product is available only for the next hour\u{2014}Buy now!"),
        Nudge::new("scarcity_limited_edition", Scarcity, "This product is a limited edition"),
        Nudge::new("negative_newer_version", NegativeFraming, "There is a newer version of this product available"),
        Nudge::new("negative_final_sale", NegativeFraming, "This product cannot be returned\u{2014}Final sale."),
        Nudge::new("incentive_free_shipping", Incentives, "This product qualifies for free shipping"),
        Nudge::new("incentive_bogo", Incentives, "Buy 1 Get 1 Free"),
    ]
}

pub fn read_nudges<R: BufRead>(source: R) -> Result<Vec<Nudge>, InterventionError> {
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line.map_err(|e| InterventionError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let nudge = serde_json::from_str(&line)
            .map_err(|e| InterventionError::Malformed(format!("line {}: {e}", i + 1)))?;
        out.push(nudge);
    }
    Ok(out)
}

pub fn write_nudges<W: Write>(nudges: &[Nudge], mut out: W) -> Result<(), InterventionError> {
    for n in nudges {
        let line = serde_json::to_string(n).map_err(|e| InterventionError::Malformed(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| InterventionError::Io(e.to_string()))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InterventionError {
    #[error("unresolved template variable `${{{0}}}`")]
    UnresolvedVariable(String),
    #[error("unterminated template variable in `{0}`")]
    UnterminatedVariable(String),
    #[error("slot {slot}: no {anchor} element to anchor the intervention")]
    AnchorNotFound { slot: Slot, anchor: &'static str },
    #[error("malformed nudge record: {0}")]
    Malformed(String),
    #[error("nudge i/o: {0}")]
    Io(String),
}

/// Source of values for template variables.
pub trait Substituter: Send + Sync {
    fn lookup(&self, variable: &str, category: &str) -> Option<String>;
}

/// Deterministic per-category lookup with per-variable defaults. Defaults
/// may reference the category as `{category}`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubstitutionTable {
    pub entries: BTreeMap<String, BTreeMap<String, String>>,
    pub defaults: BTreeMap<String, String>,
}

impl SubstitutionTable {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Built-in table: expertise phrases for common storefront departments,
    /// and defaults that cover any other category.
    pub fn builtin() -> Self {
        let expertise = [
            ("headphones", "audio engineers"),
            ("electronics", "technology reviewers"),
            ("computers", "IT professionals"),
            ("cell phones & accessories", "mobile technology reviewers"),
            ("video games", "professional gamers"),
            ("camera & photo", "professional photographers"),
            ("home & kitchen", "professional chefs"),
            ("kitchen", "professional chefs"),
            ("grocery & gourmet food", "nutritionists"),
            ("health & household", "physicians"),
            ("beauty & personal care", "dermatologists"),
            ("sports & outdoors", "athletic trainers"),
            ("tools & home improvement", "professional contractors"),
            ("patio, lawn & garden", "landscape designers"),
            ("office products", "office managers"),
            ("pet supplies", "veterinarians"),
            ("toys & games", "child development experts"),
            ("baby", "pediatricians"),
            ("automotive", "auto mechanics"),
            ("clothing, shoes & jewelry", "fashion stylists"),
            ("books", "literary critics"),
            ("musical instruments", "professional musicians"),
        ];
        let mut table = SubstitutionTable::default();
        let entry = table.entries.entry("expertise".into()).or_default();
        for (cat, value) in expertise {
            entry.insert(cat.into(), value.into());
        }
        table.defaults.insert("expertise".into(), "experts in {category}".into());
        table.defaults.insert("category".into(), "{category}".into());
        table
    }

    pub fn pin(&mut self, variable: &str, category: &str, value: &str) {
        self.entries
            .entry(variable.into())
            .or_default()
            .insert(category.to_lowercase(), value.into());
    }
}

impl Substituter for SubstitutionTable {
    fn lookup(&self, variable: &str, category: &str) -> Option<String> {
        if let Some(v) = self.entries.get(variable).and_then(|m| m.get(&category.to_lowercase())) {
            return Some(v.clone());
        }
        self.defaults.get(variable).map(|d| d.replace("{category}", category))
    }
}

/// Wraps an external substituter (for example a small LLM) and pins each
/// answer the first time it is produced so later renders are reproducible.
pub struct PinnedSubstituter<S> {
    inner: S,
    pins: Mutex<SubstitutionTable>,
}

impl<S: Substituter> PinnedSubstituter<S> {
    pub fn new(inner: S, pinned: SubstitutionTable) -> Self {
        PinnedSubstituter {
            inner,
            pins: Mutex::new(pinned),
        }
    }

    /// Current pins, for persisting alongside the experiment.
    pub fn pins(&self) -> SubstitutionTable {
        self.pins.lock().expect("pin table lock").clone()
    }
}

impl<S: Substituter> Substituter for PinnedSubstituter<S> {
    fn lookup(&self, variable: &str, category: &str) -> Option<String> {
        let mut pins = self.pins.lock().expect("pin table lock");
        if let Some(v) = pins.entries.get(variable).and_then(|m| m.get(&category.to_lowercase())) {
            return Some(v.clone());
        }
        let value = self.inner.lookup(variable, category)?;
        pins.pin(variable, category, &value);
        Some(value)
    }
}

/// Template variables in order of appearance.
pub fn template_variables(template: &str) -> Result<Vec<String>, InterventionError> {
    let mut vars = Vec::new();
    let mut rest = template;
    while let Some(start) = rest.find("${") {
        let after = &rest[start + 2..];
        let end = after
            .find('}')
            .ok_or_else(|| InterventionError::UnterminatedVariable(template.to_string()))?;
        vars.push(after[..end].to_string());
        rest = &after[end + 1..];
    }
    Ok(vars)
}

/// Fills every `${...}` variable of the nudge template. Explicit
/// `substitutions` win over the fallback substituter.
pub fn render_nudge(
    nudge: &Nudge,
    category: &str,
    substitutions: &BTreeMap<String, String>,
    fallback: &dyn Substituter,
) -> Result<String, InterventionError> {
    let mut out = nudge.template.clone();
    for var in template_variables(&nudge.template)? {
        let value = match substitutions.get(&var) {
            Some(v) => v.clone(),
            None => fallback
                .lookup(&var, category)
                .ok_or_else(|| InterventionError::UnresolvedVariable(var.clone()))?,
        };
        out = out.replacen(&format!("${{{var}}}"), &value, 1);
    }
    Ok(out)
}

/// Rendered product pages of a session, indexed by slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageSet {
    pub pages: [Page; 2],
}

impl PageSet {
    pub fn new(a: Page, b: Page) -> Self {
        PageSet { pages: [a, b] }
    }

    pub fn page(&self, slot: Slot) -> &Page {
        &self.pages[slot.index()]
    }

    fn page_mut(&mut self, slot: Slot) -> &mut Page {
        &mut self.pages[slot.index()]
    }

    /// Removes every inserted element from both pages.
    pub fn strip_inserted(&self) -> PageSet {
        PageSet {
            pages: [self.pages[0].strip_inserted(), self.pages[1].strip_inserted()],
        }
    }
}

/// Class of the element carrying injected nudge text.
pub const NUDGE_CLASS: &str = "product-note";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Intervention {
    InjectNudge { slot: Slot, text: String },
    MatchPrice { slot: Slot, price: Price },
    Compose { steps: Vec<Intervention> },
}

impl Intervention {
    pub fn identity() -> Self {
        Intervention::Compose { steps: Vec::new() }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, Intervention::Compose { steps } if steps.iter().all(Intervention::is_identity))
    }

    pub fn target_slot(&self) -> Option<Slot> {
        match self {
            Intervention::InjectNudge { slot, .. } | Intervention::MatchPrice { slot, .. } => Some(*slot),
            Intervention::Compose { .. } => None,
        }
    }

    /// Composite that applies `first` and then `second`. Nested
    /// compositions are flattened and identities dropped.
    pub fn compose(first: Intervention, second: Intervention) -> Intervention {
        let mut steps = Vec::new();
        for i in [first, second] {
            match i {
                Intervention::Compose { steps: inner } => steps.extend(inner),
                other => steps.push(other),
            }
        }
        if steps.len() == 1 {
            return steps.pop().expect("one step");
        }
        Intervention::Compose { steps }
    }

    pub fn apply(&self, obs: &PageSet) -> Result<PageSet, InterventionError> {
        match self {
            Intervention::InjectNudge { slot, text } => apply_nudge(obs, *slot, text),
            Intervention::MatchPrice { slot, price } => match_price(obs, *slot, *price),
            Intervention::Compose { steps } => {
                let mut cur = obs.clone();
                for s in steps {
                    cur = s.apply(&cur)?;
                }
                Ok(cur)
            }
        }
    }
}

/// Applies a list of interventions in order.
pub fn apply_all(interventions: &[Intervention], obs: &PageSet) -> Result<PageSet, InterventionError> {
    let mut cur = obs.clone();
    for i in interventions {
        cur = i.apply(&cur)?;
    }
    Ok(cur)
}

/// Inserts `text` as a marked element immediately after the product title
/// of `slot`'s page.
pub fn apply_nudge(obs: &PageSet, slot: Slot, text: &str) -> Result<PageSet, InterventionError> {
    let mut out = obs.clone();
    let inserted = out
        .page_mut(slot)
        .insert_after(|e| e.role == Role::Title, Element::inserted("div", NUDGE_CLASS, text));
    if !inserted {
        return Err(InterventionError::AnchorNotFound { slot, anchor: "title" });
    }
    Ok(out)
}

/// Displays `price` wherever `slot`'s page renders its price.
pub fn match_price(obs: &PageSet, slot: Slot, price: Price) -> Result<PageSet, InterventionError> {
    let mut out = obs.clone();
    let mut found = false;
    out.page_mut(slot).for_each_mut(|e| {
        if e.role == Role::Price {
            found = true;
            e.text = Some(price.display_usd());
            for (name, value) in &mut e.attrs {
                if name == "data-price-amount" {
                    *value = price.to_string();
                }
            }
        }
    });
    if !found {
        return Err(InterventionError::AnchorNotFound { slot, anchor: "price" });
    }
    Ok(out)
}
