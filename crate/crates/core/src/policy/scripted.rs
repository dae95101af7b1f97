use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AgentTurn, AttributeFocus, Direction, Policy, PolicyError, PolicyReply, TurnContext, Usage, UserProfile};
use crate::catalog::Price;
use crate::interventions::{builtin_nudges, Valence};
use crate::shopsim::Action;

/// Utility weights over the four slot features.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ScriptedWeights {
    pub first: f64,
    pub cheaper: f64,
    pub higher_rated: f64,
    pub nudged: f64,
}

/// Weight given to the preferred attribute under an Increased profile.
pub const DOMINANT_WEIGHT: f64 = 8.0;
/// Multiplier on the remaining weights under an Increased profile.
pub const SUPPRESSED_SCALE: f64 = 0.1;

impl ScriptedWeights {
    pub fn dot(&self, f: &SlotFeatures) -> f64 {
        let b = |x: bool| if x { 1.0 } else { 0.0 };
        self.first * b(f.first) + self.cheaper * b(f.cheaper) + self.higher_rated * b(f.higher_rated) + self.nudged * b(f.nudged)
    }

    /// Weights after a stated preference. Increased makes the focus
    /// attribute dominant and damps the rest; Decreased zeroes the focus.
    pub fn conditioned(&self, profile: &UserProfile) -> ScriptedWeights {
        let (rating, price, nudge) = match profile.attribute_focus {
            AttributeFocus::Rating => (true, false, false),
            AttributeFocus::Price => (false, true, false),
            AttributeFocus::AuthorityNudge => (false, false, true),
            AttributeFocus::RatingAndPrice => (true, true, false),
        };
        let mut w = *self;
        match profile.direction {
            Direction::Increased => {
                let adjust = |v: f64, focus: bool| if focus { v.max(DOMINANT_WEIGHT) } else { v * SUPPRESSED_SCALE };
                w.first = adjust(w.first, false);
                w.higher_rated = adjust(w.higher_rated, rating);
                w.cheaper = adjust(w.cheaper, price);
                w.nudged = adjust(w.nudged, nudge);
            }
            Direction::Decreased => {
                if rating {
                    w.higher_rated = 0.0;
                }
                if price {
                    w.cheaper = 0.0;
                }
                if nudge {
                    w.nudged = 0.0;
                }
            }
        }
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    /// Highest utility wins, ties go to slot a.
    None,
    /// Standard logistic noise with the given scale on the utility gap.
    Logistic { scale: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedSpec {
    pub weights: ScriptedWeights,
    pub noise: NoiseModel,
    #[serde(default)]
    pub noise_seed: u64,
    /// Inserted texts that count against the product they are shown on.
    #[serde(default = "default_negative_texts")]
    pub negative_texts: Vec<String>,
}

fn default_negative_texts() -> Vec<String> {
    builtin_nudges()
        .into_iter()
        .filter(|n| n.valence == Valence::Negative)
        .map(|n| n.template)
        .collect()
}

impl ScriptedSpec {
    pub fn new(weights: ScriptedWeights, noise: NoiseModel) -> Self {
        ScriptedSpec {
            weights,
            noise,
            noise_seed: 0,
            negative_texts: default_negative_texts(),
        }
    }

    /// Picks slot a on every trial.
    pub fn always_first() -> Self {
        ScriptedSpec::new(
            ScriptedWeights {
                first: 1.0,
                ..Default::default()
            },
            NoiseModel::None,
        )
    }

    pub fn conditioned(&self, profile: Option<&UserProfile>) -> ScriptedSpec {
        let mut spec = self.clone();
        if let Some(p) = profile {
            spec.weights = self.weights.conditioned(p);
        }
        spec
    }

    /// Closed-form probability of choosing the first feature set.
    pub fn choice_probability(&self, a: &SlotFeatures, b: &SlotFeatures) -> f64 {
        let gap = self.weights.dot(a) - self.weights.dot(b);
        match self.noise {
            NoiseModel::None => {
                if gap >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            NoiseModel::Logistic { scale } => 1.0 / (1.0 + (-gap / scale).exp()),
        }
    }
}

/// Binary features of one slot relative to the other.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SlotFeatures {
    pub first: bool,
    pub cheaper: bool,
    pub higher_rated: bool,
    /// Effective nudge: a positive note on this slot or a negative note on the other.
    pub nudged: bool,
}

#[derive(Debug, Clone, PartialEq)]
struct Seen {
    title: String,
    price: Price,
    rating: Option<u8>,
    notes: Vec<String>,
}

/// Visits both tabs, reads price, rating and notes, then adds the slot with
/// the higher noisy utility to the cart.
#[derive(Debug, Clone)]
pub struct ScriptedPolicy {
    spec: ScriptedSpec,
    rng: ChaCha8Rng,
    first_tab: Option<usize>,
    seen: [Option<Seen>; 2],
    decision: Option<usize>,
}

impl ScriptedPolicy {
    pub fn new(spec: ScriptedSpec, seed: u64) -> Self {
        ScriptedPolicy {
            rng: ChaCha8Rng::seed_from_u64(seed ^ spec.noise_seed),
            spec,
            first_tab: None,
            seen: [None, None],
            decision: None,
        }
    }

    fn features(&self, tab: usize) -> SlotFeatures {
        let me = self.seen[tab].as_ref().expect("both tabs seen");
        let other = self.seen[1 - tab].as_ref().expect("both tabs seen");
        let negative = |s: &Seen| s.notes.iter().any(|n| self.spec.negative_texts.iter().any(|t| t == n));
        let positive = |s: &Seen| s.notes.iter().any(|n| !self.spec.negative_texts.iter().any(|t| t == n));
        SlotFeatures {
            first: self.first_tab == Some(tab),
            cheaper: me.price < other.price,
            higher_rated: matches!((me.rating, other.rating), (Some(x), Some(y)) if x > y),
            nudged: positive(me) || negative(other),
        }
    }

    fn decide(&mut self) -> usize {
        let (fa, fb) = (self.features(0), self.features(1));
        let gap = self.spec.weights.dot(&fa) - self.spec.weights.dot(&fb);
        match self.spec.noise {
            NoiseModel::None => {
                if gap >= 0.0 {
                    0
                } else {
                    1
                }
            }
            NoiseModel::Logistic { scale } => {
                let u: f64 = self.rng.random();
                let u = u.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
                let noise = scale * (u / (1.0 - u)).ln();
                if gap + noise > 0.0 {
                    0
                } else {
                    1
                }
            }
        }
    }

    fn memory(&self) -> String {
        let mut lines = Vec::new();
        for (tab, seen) in self.seen.iter().enumerate() {
            if let Some(s) = seen {
                let rating = s.rating.map(|r| r.to_string()).unwrap_or_else(|| "n/a".into());
                let mut line = format!("Tab {tab}: {} | price {} | rating {rating}", s.title, s.price.display_usd());
                for note in &s.notes {
                    line.push_str(&format!(" | note: {note}"));
                }
                lines.push(line);
            }
        }
        lines.join("\n")
    }
}

impl Policy for ScriptedPolicy {
    fn act(&mut self, ctx: &TurnContext<'_>) -> Result<PolicyReply, PolicyError> {
        let obs = ctx.observation;
        let tab = obs.active_tab;
        if tab > 1 {
            return Err(PolicyError::Other(format!("unexpected active tab {tab}")));
        }
        self.first_tab.get_or_insert(tab);
        let view = &obs.view;
        if let (Some(title), Some(price)) = (&view.title, view.price) {
            if self.seen[tab].is_none() {
                self.seen[tab] = Some(Seen {
                    title: title.clone(),
                    price,
                    rating: view.rating,
                    notes: view.inserted_texts.clone(),
                });
            }
        }
        let (think, action) = if let Some(unseen) = (0..2).find(|t| self.seen[*t].is_none()) {
            if unseen == tab {
                ("Product details are out of view.".to_string(), Action::KeyboardPress { key: "Home".into() })
            } else {
                (format!("Tab {unseen} not visited yet."), Action::TabFocus { index: unseen as i64 })
            }
        } else {
            let chosen = match self.decision {
                Some(c) => c,
                None => {
                    let c = self.decide();
                    self.decision = Some(c);
                    c
                }
            };
            if chosen != tab {
                (format!("Tab {chosen} is the better choice."), Action::TabFocus { index: chosen as i64 })
            } else if let Some(bid) = &view.add_to_cart_bid {
                (format!("Adding the product in tab {chosen} to the cart."), Action::click(bid.clone()))
            } else {
                ("Add to Cart is out of view.".to_string(), Action::KeyboardPress { key: "Home".into() })
            }
        };
        Ok(PolicyReply {
            turn: AgentTurn {
                think,
                memory: self.memory(),
                action,
            },
            usage: Usage::default(),
        })
    }
}
