//! Experiment grid: every combination of nudge, pair, condition, model and
//! (optionally) user profile, with the interventions each trial applies.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::Catalog;
use crate::digest::{derive_seed, short_id};
use crate::interventions::{render_nudge, Intervention, InterventionError, Nudge, Slot, Substituter, Valence};
use crate::pairing::{PairRegime, ProductPair};
use crate::policy::UserProfile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    None,
    NudgeA,
    NudgeB,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::None, Condition::NudgeA, Condition::NudgeB];

    pub fn nudged_slot(self) -> Option<Slot> {
        match self {
            Condition::None => None,
            Condition::NudgeA => Some(Slot::A),
            Condition::NudgeB => Some(Slot::B),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::None => "none",
            Condition::NudgeA => "nudge_a",
            Condition::NudgeB => "nudge_b",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which product attributes are held equal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ExperimentRegime {
    #[serde(rename = "original")]
    Original,
    /// Matched ratings.
    #[serde(rename = "mr")]
    Mr,
    /// Matched ratings and prices.
    #[serde(rename = "mrap")]
    Mrap,
}

impl ExperimentRegime {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentRegime::Original => "original",
            ExperimentRegime::Mr => "mr",
            ExperimentRegime::Mrap => "mrap",
        }
    }

    pub fn ratings_matched(self) -> bool {
        self != ExperimentRegime::Original
    }
}

impl fmt::Display for ExperimentRegime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentRegime {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "original" => Ok(ExperimentRegime::Original),
            "mr" => Ok(ExperimentRegime::Mr),
            "mrap" => Ok(ExperimentRegime::Mrap),
            other => Err(format!("unknown regime `{other}` (expected original, mr or mrap)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub config_id: String,
    pub pair_id: String,
    pub nudge_id: String,
    /// Nudge text after variable substitution for the pair's category.
    pub nudge_text: String,
    pub valence: Valence,
    pub condition: Condition,
    pub regime: ExperimentRegime,
    #[serde(default)]
    pub profile: Option<UserProfile>,
    pub model: String,
    pub seed: u64,
    pub interventions: Vec<Intervention>,
}

#[derive(Debug, Error)]
pub enum GridError {
    #[error("grid input `{0}` is empty")]
    EmptyInput(&'static str),
    #[error("pair {pair_id} references unknown product {product_id}")]
    UnknownProduct { pair_id: String, product_id: String },
    #[error("regime {regime} needs rating-matched pairs, pair {pair_id} is {pair_regime:?}")]
    RegimeMismatch {
        regime: ExperimentRegime,
        pair_id: String,
        pair_regime: PairRegime,
    },
    #[error("duplicate config id {0}")]
    DuplicateId(String),
    #[error(transparent)]
    Intervention(#[from] InterventionError),
}

/// Inputs to [`generate_grid`].
pub struct GridSpec<'a> {
    pub pairs: &'a [ProductPair],
    pub catalog: &'a Catalog,
    pub nudges: &'a [Nudge],
    pub regime: ExperimentRegime,
    pub models: &'a [String],
    /// Empty means no profile.
    pub profiles: &'a [UserProfile],
    pub substitutions: &'a BTreeMap<String, String>,
    pub substituter: &'a dyn Substituter,
    pub seed: u64,
}

/// Full Cartesian product in the order models, profiles, pairs, nudges,
/// conditions.
pub fn generate_grid(spec: &GridSpec<'_>) -> Result<Vec<ExperimentConfig>, GridError> {
    if spec.pairs.is_empty() {
        return Err(GridError::EmptyInput("pairs"));
    }
    if spec.nudges.is_empty() {
        return Err(GridError::EmptyInput("nudges"));
    }
    if spec.models.is_empty() {
        return Err(GridError::EmptyInput("models"));
    }
    let profiles: Vec<Option<&UserProfile>> = if spec.profiles.is_empty() {
        vec![None]
    } else {
        spec.profiles.iter().map(Some).collect()
    };
    let mut configs = Vec::new();
    let mut ids = std::collections::HashSet::new();
    for model in spec.models {
        for profile in &profiles {
            for pair in spec.pairs {
                if spec.regime.ratings_matched() && pair.regime != PairRegime::MatchedRatings {
                    return Err(GridError::RegimeMismatch {
                        regime: spec.regime,
                        pair_id: pair.pair_id.clone(),
                        pair_regime: pair.regime,
                    });
                }
                let lookup = |id: &str| {
                    spec.catalog.get(id).ok_or_else(|| GridError::UnknownProduct {
                        pair_id: pair.pair_id.clone(),
                        product_id: id.to_string(),
                    })
                };
                let (a, b) = (lookup(&pair.slot_a)?, lookup(&pair.slot_b)?);
                let base: Vec<Intervention> = if spec.regime == ExperimentRegime::Mrap {
                    let price = a.price.min(b.price);
                    vec![
                        Intervention::MatchPrice { slot: Slot::A, price },
                        Intervention::MatchPrice { slot: Slot::B, price },
                    ]
                } else {
                    Vec::new()
                };
                for nudge in spec.nudges {
                    let text = render_nudge(nudge, &pair.category, spec.substitutions, spec.substituter)?;
                    for condition in Condition::ALL {
                        let mut interventions = base.clone();
                        if let Some(slot) = condition.nudged_slot() {
                            interventions.push(Intervention::InjectNudge { slot, text: text.clone() });
                        }
                        let profile_label = profile.map(|p| p.label()).unwrap_or_else(|| "-".into());
                        let config_id = short_id(
                            &[
                                spec.regime.as_str(),
                                model,
                                &profile_label,
                                &pair.pair_id,
                                &nudge.nudge_id,
                                condition.as_str(),
                            ],
                            16,
                        );
                        if !ids.insert(config_id.clone()) {
                            return Err(GridError::DuplicateId(config_id));
                        }
                        configs.push(ExperimentConfig {
                            seed: derive_seed(spec.seed, &config_id),
                            config_id,
                            pair_id: pair.pair_id.clone(),
                            nudge_id: nudge.nudge_id.clone(),
                            nudge_text: text.clone(),
                            valence: nudge.valence,
                            condition,
                            regime: spec.regime,
                            profile: profile.cloned(),
                            model: model.clone(),
                            interventions,
                        });
                    }
                }
            }
        }
    }
    Ok(configs)
}

/// Assigns grid configs to human participants so that participant `i`
/// sees each pair once and `n` participants cover all configs of a pair
/// when `n` equals the configs per pair.
#[derive(Debug, Clone)]
pub struct HumanPlan {
    by_pair: BTreeMap<String, Vec<ExperimentConfig>>,
}

impl HumanPlan {
    /// Uses the configs of the first model and profile in `configs`.
    pub fn new(configs: &[ExperimentConfig]) -> Self {
        let mut by_pair: BTreeMap<String, Vec<ExperimentConfig>> = BTreeMap::new();
        if let Some(first) = configs.first() {
            for c in configs.iter().filter(|c| c.model == first.model && c.profile == first.profile) {
                by_pair.entry(c.pair_id.clone()).or_default().push(c.clone());
            }
        }
        HumanPlan { by_pair }
    }

    pub fn pair_ids(&self) -> impl Iterator<Item = &str> {
        self.by_pair.keys().map(String::as_str)
    }

    pub fn pair_count(&self) -> usize {
        self.by_pair.len()
    }

    /// Configs per pair; the number of participants that completes the grid.
    pub fn cycle_length(&self) -> usize {
        self.by_pair.values().map(Vec::len).max().unwrap_or(0)
    }

    pub fn assign(&self, participant_index: u64, pair_id: &str) -> Option<&ExperimentConfig> {
        let options = self.by_pair.get(pair_id)?;
        let offset = derive_seed(0, pair_id) % options.len() as u64;
        let k = (participant_index % options.len() as u64 + offset) % options.len() as u64;
        options.get(k as usize)
    }
}
