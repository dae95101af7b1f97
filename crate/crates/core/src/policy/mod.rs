//! Agent policies: prompt construction, response parsing, user profiles and
//! the scripted reference policy. The remote model client lives in
//! `choicebench-remote` and implements [`Policy`] as well.

mod parse;
mod prompt;
mod random;
mod scripted;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::shopsim::{Action, Observation};

pub use parse::{parse_action, parse_response, ParseError};
pub use prompt::{build_prompt, ChatMessage, PromptContext, TASK_INTENT};
pub use random::RandomPolicy;
pub use scripted::{NoiseModel, ScriptedPolicy, ScriptedSpec, ScriptedWeights, SlotFeatures};

/// One agent turn: free-text reasoning, running memory and one action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTurn {
    pub think: String,
    pub memory: String,
    pub action: Action,
}

impl AgentTurn {
    /// The tagged answer format the parser accepts.
    pub fn to_response(&self) -> String {
        format!(
            "<think>\n{}\n</think>\n\n<memory>\n{}\n</memory>\n\n<action>\n{}\n</action>\n",
            self.think, self.memory, self.action
        )
    }
}

/// Request accounting for one policy call or a whole episode.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub requests: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub reprompts: u64,
    pub latency_ms: u64,
}

impl Usage {
    pub fn tokens(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }

    pub fn add(&mut self, other: &Usage) {
        self.requests += other.requests;
        self.prompt_tokens += other.prompt_tokens;
        self.completion_tokens += other.completion_tokens;
        self.reprompts += other.reprompts;
        self.latency_ms += other.latency_ms;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyReply {
    pub turn: AgentTurn,
    pub usage: Usage,
}

/// Everything a policy sees at one step.
#[derive(Debug, Clone, Copy)]
pub struct TurnContext<'a> {
    pub intent: &'a str,
    pub profile: Option<&'a UserProfile>,
    pub observation: &'a Observation,
    pub history: &'a [AgentTurn],
    pub step: u32,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("model response could not be parsed: {0}")]
    Parse(#[from] ParseError),
    #[error("request failed after {attempts} attempts: {message}")]
    Exhausted { attempts: u32, message: String },
    #[error("no recorded response for request {key}")]
    MissingRecording { key: String },
    #[error("{0}")]
    Other(String),
}

pub trait Policy: Send {
    fn act(&mut self, ctx: &TurnContext<'_>) -> Result<PolicyReply, PolicyError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeFocus {
    Rating,
    Price,
    AuthorityNudge,
    RatingAndPrice,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Decreased,
    Increased,
}

/// A stated user preference appended to the goal.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct UserProfile {
    pub attribute_focus: AttributeFocus,
    pub direction: Direction,
    pub statement: String,
}

impl UserProfile {
    /// Stable short label, e.g. `price-increased`.
    pub fn label(&self) -> String {
        let focus = match self.attribute_focus {
            AttributeFocus::Rating => "rating",
            AttributeFocus::Price => "price",
            AttributeFocus::AuthorityNudge => "authority",
            AttributeFocus::RatingAndPrice => "rating-price",
        };
        let dir = match self.direction {
            Direction::Decreased => "decreased",
            Direction::Increased => "increased",
        };
        format!("{focus}-{dir}")
    }

    pub fn builtin(focus: AttributeFocus, direction: Direction) -> UserProfile {
        builtin_profiles()
            .into_iter()
            .find(|p| p.attribute_focus == focus && p.direction == direction)
            .expect("every focus/direction has a profile")
    }
}

impl fmt::Display for UserProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// The eight preference statements, one per focus and direction.
pub fn builtin_profiles() -> Vec<UserProfile> {
    use AttributeFocus::*;
    use Direction::*;
    let p = |attribute_focus, direction, statement: &str| UserProfile {
        attribute_focus,
        direction,
        statement: statement.to_string(),
    };
    vec![
        p(Rating, Decreased, "The user doesn't put much stock in what other customers think."),
        p(Rating, Increased, "The user values highly-rated products."),
        p(Price, Decreased, "The user is willing to pay more for a better product."),
        p(Price, Increased, "The user is on a tight budget."),
        p(AuthorityNudge, Decreased, "The user doesn\u{2019}t trust recommendations from experts."),
        p(AuthorityNudge, Increased, "The user highly values recommendations from experts."),
        p(
            RatingAndPrice,
            Decreased,
            "The user is willing to pay more for a better product, and doesn\u{2019}t put much stock in what other customers think.",
        ),
        p(RatingAndPrice, Increased, "The user is on a tight budget, and values highly-rated products."),
    ]
}

pub const DEFAULT_TEMPERATURE: f64 = 0.1;
pub const REASONING_TEMPERATURE: f64 = 1.0;

/// Connection settings for a hosted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteSpec {
    pub endpoint: String,
    pub model: String,
    #[serde(default)]
    pub temperature: Option<f64>,
    /// Reasoning models only accept temperature 1.
    #[serde(default)]
    pub reasoning: bool,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    /// Name of the environment variable holding the API key.
    #[serde(default)]
    pub api_key_env: Option<String>,
}

fn default_retries() -> u32 {
    4
}

fn default_timeout() -> u64 {
    120
}

impl RemoteSpec {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        RemoteSpec {
            endpoint: endpoint.into(),
            model: model.into(),
            temperature: None,
            reasoning: false,
            max_retries: default_retries(),
            timeout_secs: default_timeout(),
            api_key_env: None,
        }
    }

    pub fn effective_temperature(&self) -> f64 {
        if self.reasoning {
            REASONING_TEMPERATURE
        } else {
            self.temperature.unwrap_or(DEFAULT_TEMPERATURE)
        }
    }
}

/// How a named model in the roster is backed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicySpec {
    Scripted(ScriptedSpec),
    Remote(RemoteSpec),
}
