//! Runs one choice episode: observe, ask the policy, step, until the
//! environment is terminal or the policy fails.

use serde::{Deserialize, Serialize};

use crate::policy::{AgentTurn, Policy, TurnContext, Usage, UserProfile};
use crate::records::Outcome;
use crate::shopsim::{EnvState, Terminal, TraceEntry};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub outcome: Outcome,
    pub steps: u32,
    pub chosen_product_id: Option<String>,
    pub trace: Vec<TraceEntry>,
    pub turns: Vec<AgentTurn>,
    pub usage: Usage,
    pub failure: Option<String>,
}

pub fn run_episode(
    start: EnvState,
    policy: &mut dyn Policy,
    intent: &str,
    profile: Option<&UserProfile>,
) -> EpisodeResult {
    let mut state = start;
    let mut trace = Vec::new();
    let mut turns: Vec<AgentTurn> = Vec::new();
    let mut usage = Usage::default();
    let finish = |state: &EnvState, outcome, trace, turns, usage, failure| EpisodeResult {
        outcome,
        steps: state.step_count,
        chosen_product_id: match outcome {
            Outcome::Chosen { slot } => Some(state.product(slot).id.clone()),
            _ => None,
        },
        trace,
        turns,
        usage,
        failure,
    };
    loop {
        match state.is_terminal() {
            Terminal::Chosen { slot, .. } => return finish(&state, Outcome::Chosen { slot }, trace, turns, usage, None),
            Terminal::Timeout { .. } => return finish(&state, Outcome::Timeout, trace, turns, usage, None),
            Terminal::NotTerminal => {}
        }
        let observation = state.observe();
        let ctx = TurnContext {
            intent,
            profile,
            observation: &observation,
            history: &turns,
            step: state.step_count,
        };
        let reply = match policy.act(&ctx) {
            Ok(r) => r,
            Err(e) => return finish(&state, Outcome::Failed, trace, turns, usage, Some(e.to_string())),
        };
        usage.add(&reply.usage);
        let next = match state.step(&reply.turn.action) {
            Ok(s) => s,
            Err(e) => return finish(&state, Outcome::Failed, trace, turns, usage, Some(e.to_string())),
        };
        trace.push(TraceEntry {
            step: state.step_count,
            action: reply.turn.action.to_string(),
            valid: next.last_action_valid.unwrap_or(false),
            active_tab: observation.active_tab,
            observation_digest: observation.digest(),
        });
        turns.push(reply.turn);
        state = next;
    }
}
