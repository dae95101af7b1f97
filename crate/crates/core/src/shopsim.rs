//! Deterministic two-tab shopping environment.
//!
//! A session opens the two products of a pair in tabs 0 and 1 (slot a in
//! tab 0, active at start). Observations are the active tab's page after the
//! session's interventions, pruned to the viewport. The episode ends when a
//! product is added to the cart or the step budget is spent.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Catalog, Product};
use crate::digest::sha256_hex;
use crate::grid::Condition;
use crate::interventions::{apply_all, Intervention, InterventionError, PageSet, Slot};
use crate::page::{product_url, render_element, render_product_page, Page, PageView, Role};
use crate::pairing::ProductPair;

pub const DEFAULT_VIEWPORT: u32 = 1024;
pub const DEFAULT_MAX_STEPS: u32 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub viewport: u32,
    pub max_steps: u32,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            viewport: DEFAULT_VIEWPORT,
            max_steps: DEFAULT_MAX_STEPS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("unknown product id `{0}`")]
    UnknownProduct(String),
    #[error("interventions inconsistent with condition {condition}: {detail}")]
    InconsistentCondition { condition: Condition, detail: String },
    #[error(transparent)]
    Intervention(#[from] InterventionError),
    #[error("episode already ended")]
    EpisodeOver,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MouseButton {
    Left,
    Middle,
    Right,
}

/// The nine agent actions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Action {
    Click {
        bid: String,
        button: MouseButton,
        modifiers: Vec<String>,
    },
    Fill {
        bid: String,
        value: String,
    },
    Goto {
        url: String,
    },
    Scroll {
        delta_x: f64,
        delta_y: f64,
    },
    SelectOption {
        bid: String,
        options: Vec<String>,
    },
    KeyboardPress {
        key: String,
    },
    TabFocus {
        index: i64,
    },
    GoBack,
    GoForward,
}

impl Action {
    pub fn click(bid: impl Into<String>) -> Self {
        Action::Click {
            bid: bid.into(),
            button: MouseButton::Left,
            modifiers: Vec::new(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Action::Click { .. } => "click",
            Action::Fill { .. } => "fill",
            Action::Goto { .. } => "goto",
            Action::Scroll { .. } => "scroll",
            Action::SelectOption { .. } => "select_option",
            Action::KeyboardPress { .. } => "keyboard_press",
            Action::TabFocus { .. } => "tab_focus",
            Action::GoBack => "go_back",
            Action::GoForward => "go_forward",
        }
    }
}

pub(crate) fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('\'');
    for ch in s.chars() {
        match ch {
            '\\' => out.push_str("\\\\"),
            '\'' => out.push_str("\\'"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out.push('\'');
    out
}

fn number(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x}")
    }
}

/// Call syntax understood by the response parser, e.g. `click('1451')`.
impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Click { bid, button, modifiers } => {
                write!(f, "click({}", quote(bid))?;
                match button {
                    MouseButton::Left => {}
                    MouseButton::Middle => write!(f, ", button='middle'")?,
                    MouseButton::Right => write!(f, ", button='right'")?,
                }
                if !modifiers.is_empty() {
                    let list: Vec<String> = modifiers.iter().map(|m| quote(m)).collect();
                    write!(f, ", modifiers=[{}]", list.join(", "))?;
                }
                write!(f, ")")
            }
            Action::Fill { bid, value } => write!(f, "fill({}, {})", quote(bid), quote(value)),
            Action::Goto { url } => write!(f, "goto({})", quote(url)),
            Action::Scroll { delta_x, delta_y } => write!(f, "scroll({}, {})", number(*delta_x), number(*delta_y)),
            Action::SelectOption { bid, options } => {
                if options.len() == 1 {
                    write!(f, "select_option({}, {})", quote(bid), quote(&options[0]))
                } else {
                    let list: Vec<String> = options.iter().map(|o| quote(o)).collect();
                    write!(f, "select_option({}, [{}])", quote(bid), list.join(", "))
                }
            }
            Action::KeyboardPress { key } => write!(f, "keyboard_press({})", quote(key)),
            Action::TabFocus { index } => write!(f, "tab_focus({index})"),
            Action::GoBack => write!(f, "go_back()"),
            Action::GoForward => write!(f, "go_forward()"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TabInfo {
    pub title: String,
    pub url: String,
}

/// What the agent receives at one step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub open_tabs: Vec<TabInfo>,
    pub active_tab: usize,
    /// Pruned markup of the active tab's viewport.
    pub html: String,
    /// Structured reading of the same pruned region, for scripted policies.
    pub view: PageView,
}

impl Observation {
    /// Tab listing in the prompt layout.
    pub fn tabs_text(&self) -> String {
        let mut out = String::new();
        for (i, tab) in self.open_tabs.iter().enumerate() {
            if i == self.active_tab {
                out.push_str(&format!("Tab {i} (active tab):\n"));
            } else {
                out.push_str(&format!("Tab {i}:\n"));
            }
            out.push_str(&format!("    Title: {}\n    URL: {}\n", tab.title, tab.url));
            if i + 1 < self.open_tabs.len() {
                out.push('\n');
            }
        }
        out
    }

    /// Digest over the agent-visible content (tabs, active tab, html).
    pub fn digest(&self) -> String {
        let visible = serde_json::json!({
            "open_tabs": self.open_tabs,
            "active_tab": self.active_tab,
            "html": self.html,
        });
        sha256_hex(visible.to_string().as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TabState {
    /// Navigation history as slots whose product page was shown.
    pub history: Vec<Slot>,
    pub cursor: usize,
    pub scroll_y: u32,
    pub form: Vec<(String, String)>,
}

impl TabState {
    fn new(slot: Slot) -> Self {
        TabState {
            history: vec![slot],
            cursor: 0,
            scroll_y: 0,
            form: Vec::new(),
        }
    }

    pub fn current(&self) -> Slot {
        self.history[self.cursor]
    }

    fn navigate(&mut self, slot: Slot) {
        self.history.truncate(self.cursor + 1);
        self.history.push(slot);
        self.cursor += 1;
        self.scroll_y = 0;
    }

    fn set_form(&mut self, bid: &str, value: String) {
        match self.form.iter_mut().find(|(b, _)| b == bid) {
            Some(entry) => entry.1 = value,
            None => self.form.push((bid.to_string(), value)),
        }
    }
}

/// Outcome of [`EnvState::is_terminal`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Terminal {
    Chosen { slot: Slot, steps: u32 },
    Timeout { steps: u32 },
    NotTerminal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub pair: ProductPair,
    pub condition: Condition,
    pub interventions: Vec<Intervention>,
    pub active_tab: usize,
    pub tabs: [TabState; 2],
    pub cart: Vec<String>,
    pub step_count: u32,
    pub rng_seed: u64,
    /// Validity of the most recent action, `None` before the first step.
    pub last_action_valid: Option<bool>,
    pub config: EnvConfig,
    products: Arc<[Product; 2]>,
    pages: Arc<PageSet>,
}

/// Product page markup; pure in the product.
pub fn render_page(product: &Product) -> Page {
    render_product_page(product)
}

fn check_condition(condition: Condition, interventions: &[Intervention]) -> Result<(), EnvError> {
    fn nudged_slots(i: &Intervention, out: &mut Vec<Slot>) {
        match i {
            Intervention::InjectNudge { slot, .. } => out.push(*slot),
            Intervention::MatchPrice { .. } => {}
            Intervention::Compose { steps } => steps.iter().for_each(|s| nudged_slots(s, out)),
        }
    }
    let mut slots = Vec::new();
    interventions.iter().for_each(|i| nudged_slots(i, &mut slots));
    let ok = match condition.nudged_slot() {
        None => slots.is_empty(),
        Some(s) => !slots.is_empty() && slots.iter().all(|x| *x == s),
    };
    if ok {
        Ok(())
    } else {
        Err(EnvError::InconsistentCondition {
            condition,
            detail: format!("nudge interventions target {slots:?}"),
        })
    }
}

/// Opens a session on `pair`: slot a in tab 0 (active), slot b in tab 1.
pub fn new_session(
    pair: &ProductPair,
    catalog: &Catalog,
    condition: Condition,
    interventions: &[Intervention],
    seed: u64,
    config: EnvConfig,
) -> Result<EnvState, EnvError> {
    let get = |id: &str| catalog.get(id).cloned().ok_or_else(|| EnvError::UnknownProduct(id.to_string()));
    let products = [get(&pair.slot_a)?, get(&pair.slot_b)?];
    check_condition(condition, interventions)?;
    let raw = PageSet::new(render_page(&products[0]), render_page(&products[1]));
    let pages = apply_all(interventions, &raw)?;
    Ok(EnvState {
        pair: pair.clone(),
        condition,
        interventions: interventions.to_vec(),
        active_tab: 0,
        tabs: [TabState::new(Slot::A), TabState::new(Slot::B)],
        cart: Vec::new(),
        step_count: 0,
        rng_seed: seed,
        last_action_valid: None,
        config,
        products: Arc::new(products),
        pages: Arc::new(pages),
    })
}

impl EnvState {
    pub fn product(&self, slot: Slot) -> &Product {
        &self.products[slot.index()]
    }

    /// Session pages after interventions, before pruning.
    pub fn pages(&self) -> &PageSet {
        &self.pages
    }

    fn tab_page(&self, tab: usize) -> &Page {
        self.pages.page(self.tabs[tab].current())
    }

    fn max_scroll(&self, tab: usize) -> u32 {
        self.tab_page(tab).height().saturating_sub(self.config.viewport)
    }

    pub fn observe(&self) -> Observation {
        let open_tabs = (0..2)
            .map(|t| {
                let page = self.tab_page(t);
                TabInfo {
                    title: page.title.clone(),
                    url: page.url.clone(),
                }
            })
            .collect();
        let page = self.tab_page(self.active_tab);
        let pruned = page.prune(self.tabs[self.active_tab].scroll_y, self.config.viewport);
        let html = pruned.as_ref().map(render_element).unwrap_or_default();
        let view = PageView::extract(&page.url, pruned.as_ref());
        Observation {
            open_tabs,
            active_tab: self.active_tab,
            html,
            view,
        }
    }

    pub fn is_terminal(&self) -> Terminal {
        if let Some(id) = self.cart.first() {
            let slot = if *id == self.products[0].id { Slot::A } else { Slot::B };
            return Terminal::Chosen {
                slot,
                steps: self.step_count,
            };
        }
        if self.step_count >= self.config.max_steps {
            return Terminal::Timeout { steps: self.step_count };
        }
        Terminal::NotTerminal
    }

    fn slot_for_url(&self, url: &str) -> Option<Slot> {
        Slot::BOTH.into_iter().find(|s| product_url(&self.products[s.index()].id) == url)
    }

    /// Applies one action. Invalid actions leave the page state unchanged
    /// but still consume a step.
    pub fn step(&self, action: &Action) -> Result<EnvState, EnvError> {
        if self.is_terminal() != Terminal::NotTerminal {
            return Err(EnvError::EpisodeOver);
        }
        let mut next = self.clone();
        let valid = next.apply(action);
        next.step_count += 1;
        next.last_action_valid = Some(valid);
        Ok(next)
    }

    fn scroll_to(&mut self, y: i64) {
        let tab = self.active_tab;
        let max = i64::from(self.max_scroll(tab));
        self.tabs[tab].scroll_y = y.clamp(0, max) as u32;
    }

    fn apply(&mut self, action: &Action) -> bool {
        let tab = self.active_tab;
        let viewport = i64::from(self.config.viewport);
        let scroll = i64::from(self.tabs[tab].scroll_y);
        match action {
            Action::TabFocus { index } => match usize::try_from(*index) {
                Ok(i) if i < 2 => {
                    self.active_tab = i;
                    true
                }
                _ => false,
            },
            Action::Scroll { delta_x, delta_y } => {
                if !delta_x.is_finite() || !delta_y.is_finite() {
                    return false;
                }
                self.scroll_to(scroll + delta_y.round() as i64);
                true
            }
            Action::KeyboardPress { key } => {
                let target = match key.as_str() {
                    "" => return false,
                    "PageDown" | " " | "Space" => Some(scroll + viewport),
                    "PageUp" => Some(scroll - viewport),
                    "ArrowDown" => Some(scroll + 40),
                    "ArrowUp" => Some(scroll - 40),
                    "End" => Some(i64::MAX / 2),
                    "Home" => Some(0),
                    _ => None,
                };
                if let Some(y) = target {
                    self.scroll_to(y);
                }
                true
            }
            Action::Goto { url } => match self.slot_for_url(url) {
                Some(slot) => {
                    self.tabs[tab].navigate(slot);
                    true
                }
                None => false,
            },
            Action::GoBack => {
                let t = &mut self.tabs[tab];
                if t.cursor == 0 {
                    return false;
                }
                t.cursor -= 1;
                t.scroll_y = 0;
                true
            }
            Action::GoForward => {
                let t = &mut self.tabs[tab];
                if t.cursor + 1 >= t.history.len() {
                    return false;
                }
                t.cursor += 1;
                t.scroll_y = 0;
                true
            }
            Action::Click { bid, .. } => {
                let Some(element) = self.tab_page(tab).find_bid(bid) else {
                    return false;
                };
                match element.role.clone() {
                    Role::AddToCart => {
                        let slot = self.tabs[tab].current();
                        self.cart.push(self.products[slot.index()].id.clone());
                        true
                    }
                    Role::Link { href } => match self.slot_for_url(&href) {
                        Some(slot) => {
                            self.tabs[tab].navigate(slot);
                            true
                        }
                        None => false,
                    },
                    _ => true,
                }
            }
            Action::Fill { bid, value } => match self.tab_page(tab).find_bid(bid) {
                Some(e) if e.role == Role::Input => {
                    self.tabs[tab].set_form(bid, value.clone());
                    true
                }
                _ => false,
            },
            Action::SelectOption { bid, options } => {
                let Some(e) = self.tab_page(tab).find_bid(bid) else {
                    return false;
                };
                if e.role != Role::Select || options.is_empty() {
                    return false;
                }
                let allowed: Vec<&str> = e.attr("options").unwrap_or("").split('|').collect();
                if !options.iter().all(|o| allowed.contains(&o.as_str())) {
                    return false;
                }
                self.tabs[tab].set_form(bid, options.join("|"));
                true
            }
        }
    }
}

/// One line of an episode trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub step: u32,
    /// Action in call syntax.
    pub action: String,
    pub valid: bool,
    /// Active tab when the action was chosen.
    pub active_tab: usize,
    /// Digest of the observation the action was chosen from.
    pub observation_digest: String,
}

/// Digest over a whole trace, used as the trial's trace fingerprint.
pub fn trace_digest(trace: &[TraceEntry]) -> String {
    let mut text = String::new();
    for e in trace {
        text.push_str(&serde_json::to_string(e).expect("trace entries serialize"));
        text.push('\n');
    }
    sha256_hex(text.as_bytes())
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReplayError {
    #[error("step {step}: observation digest mismatch")]
    DigestMismatch { step: u32 },
    #[error("step {step}: validity mismatch")]
    ValidityMismatch { step: u32 },
    #[error("step {step}: cannot parse action `{action}`: {message}")]
    BadAction { step: u32, action: String, message: String },
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// Replays recorded actions from `start` and checks every observation
/// digest. Returns the final state.
pub fn replay(start: &EnvState, trace: &[TraceEntry]) -> Result<EnvState, ReplayError> {
    let mut state = start.clone();
    for entry in trace {
        let obs = state.observe();
        if obs.digest() != entry.observation_digest {
            return Err(ReplayError::DigestMismatch { step: entry.step });
        }
        let action = crate::policy::parse_action(&entry.action).map_err(|e| ReplayError::BadAction {
            step: entry.step,
            action: entry.action.clone(),
            message: e.to_string(),
        })?;
        state = state.step(&action)?;
        if state.last_action_valid != Some(entry.valid) {
            return Err(ReplayError::ValidityMismatch { step: entry.step });
        }
    }
    Ok(state)
}
