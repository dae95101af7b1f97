use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AgentTurn, Policy, PolicyError, PolicyReply, TurnContext, Usage};
use crate::page::product_url;
use crate::shopsim::{Action, MouseButton};

const KEYS: &[&str] = &["PageDown", "PageUp", "Space", "ArrowDown", "ArrowUp", "End", "Home", "Enter"];

/// Uniformly random actions, valid and invalid alike. Used to exercise the
/// environment rather than to make choices.
pub struct RandomPolicy {
    rng: ChaCha8Rng,
    /// Product ids reachable by `goto`; other urls are drawn as well.
    urls: Vec<String>,
}

impl RandomPolicy {
    pub fn new(seed: u64, product_ids: &[&str]) -> Self {
        RandomPolicy {
            rng: ChaCha8Rng::seed_from_u64(seed),
            urls: product_ids.iter().map(|id| product_url(id)).collect(),
        }
    }

    pub fn next_action(&mut self) -> Action {
        let rng = &mut self.rng;
        let bid = |rng: &mut ChaCha8Rng| rng.random_range(0..70u32).to_string();
        match rng.random_range(0..10u8) {
            0 | 1 => Action::Click {
                bid: bid(rng),
                button: if rng.random_bool(0.8) { MouseButton::Left } else { MouseButton::Right },
                modifiers: Vec::new(),
            },
            2 => Action::Fill {
                bid: bid(rng),
                value: format!("q{}", rng.random_range(0..100u32)),
            },
            3 => {
                let url = if !self.urls.is_empty() && rng.random_bool(0.7) {
                    self.urls[rng.random_range(0..self.urls.len())].clone()
                } else {
                    "http://example.com/".to_string()
                };
                Action::Goto { url }
            }
            4 => Action::Scroll {
                delta_x: 0.0,
                delta_y: rng.random_range(-1500.0..1500.0f64).round(),
            },
            5 => Action::SelectOption {
                bid: bid(rng),
                options: vec![["Most Recent", "Most Helpful", "Oldest"][rng.random_range(0..3)].to_string()],
            },
            6 => Action::KeyboardPress {
                key: KEYS[rng.random_range(0..KEYS.len())].to_string(),
            },
            7 => Action::TabFocus {
                index: rng.random_range(-1..3i64),
            },
            8 => Action::GoBack,
            _ => Action::GoForward,
        }
    }
}

impl Policy for RandomPolicy {
    fn act(&mut self, _ctx: &TurnContext<'_>) -> Result<PolicyReply, PolicyError> {
        Ok(PolicyReply {
            turn: AgentTurn {
                think: String::new(),
                memory: String::new(),
                action: self.next_action(),
            },
            usage: Usage::default(),
        })
    }
}
