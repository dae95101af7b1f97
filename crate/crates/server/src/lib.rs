//! HTTP API behind the human-baseline interface.
//!
//! Participants get pairs in a private random order; the condition shown
//! for each pair comes from the same grid the agents run, assigned with
//! [`HumanPlan`]. Choices are stored as human [`TrialRecord`]s.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use choicebench_core::catalog::Catalog;
use choicebench_core::grid::{ExperimentConfig, HumanPlan};
use choicebench_core::interventions::{apply_all, PageSet};
use choicebench_core::page::{format_rating, render_product_page, PageView};
use choicebench_core::pairing::ProductPair;
use choicebench_core::records::{now_ms, Outcome, RecordStore, Source, StoreError, TrialRecord};
use choicebench_core::Slot;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PARTICIPANTS_FILE: &str = "participants.txt";

#[derive(Debug, Error)]
pub enum ServerError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("no configs to serve")]
    Empty,
    #[error("config {config_id} references unknown pair {pair_id}")]
    UnknownPair { config_id: String, pair_id: String },
    #[error("config {config_id} cannot be shown: {message}")]
    Unrenderable { config_id: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub participant_id: String,
    pub quota: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceCard {
    pub slot: Slot,
    pub title: String,
    pub price: String,
    pub rating: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nudge: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum NextPair {
    Pair {
        pair_id: String,
        position: usize,
        quota: usize,
        cards: Vec<ChoiceCard>,
    },
    Exhausted {
        answered: usize,
        quota: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceSubmission {
    pub participant: String,
    pub pair_id: String,
    pub chosen_slot: Slot,
    #[serde(default)]
    pub rationale: Option<String>,
    pub response_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub participant_id: String,
    pub answered: usize,
    pub quota: usize,
    pub complete: bool,
}

#[derive(Debug, Deserialize)]
pub struct ParticipantQuery {
    pub participant: String,
}

struct Participants {
    ids: Vec<String>,
    path: PathBuf,
}

/// Shared server state.
pub struct BaselineState {
    plan: HumanPlan,
    pair_ids: Vec<String>,
    pairs: BTreeMap<String, ProductPair>,
    catalog: Catalog,
    order_seed: u64,
    store: Mutex<RecordStore>,
    participants: Mutex<Participants>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ServerError + '_ {
    move |source| ServerError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl BaselineState {
    /// `configs` is the agent grid; records and the participant list are
    /// kept in `store_dir`.
    pub fn new(
        configs: &[ExperimentConfig],
        pairs: BTreeMap<String, ProductPair>,
        catalog: Catalog,
        store_dir: &Path,
        order_seed: u64,
    ) -> Result<Self, ServerError> {
        let plan = HumanPlan::new(configs);
        if plan.pair_count() == 0 {
            return Err(ServerError::Empty);
        }
        for c in configs {
            let pair = pairs.get(&c.pair_id).ok_or_else(|| ServerError::UnknownPair {
                config_id: c.config_id.clone(),
                pair_id: c.pair_id.clone(),
            })?;
            let unrenderable = |message: String| ServerError::Unrenderable {
                config_id: c.config_id.clone(),
                message,
            };
            let page = |id: &str| {
                catalog
                    .get(id)
                    .map(render_product_page)
                    .ok_or_else(|| unrenderable(format!("unknown product {id}")))
            };
            let base = PageSet::new(page(&pair.slot_a)?, page(&pair.slot_b)?);
            apply_all(&c.interventions, &base).map_err(|e| unrenderable(e.to_string()))?;
        }
        let store = RecordStore::open(store_dir)?;
        let path = store_dir.join(PARTICIPANTS_FILE);
        let ids = match fs::read_to_string(&path) {
            Ok(text) => text.lines().filter(|l| !l.is_empty()).map(String::from).collect(),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(io_err(&path)(e)),
        };
        Ok(BaselineState {
            pair_ids: plan.pair_ids().map(String::from).collect(),
            plan,
            pairs,
            catalog,
            order_seed,
            store: Mutex::new(store),
            participants: Mutex::new(Participants { ids, path }),
        })
    }

    pub fn quota(&self) -> usize {
        self.pair_ids.len()
    }

    pub fn new_participant(&self) -> Result<SessionInfo, ServerError> {
        let mut p = self.participants.lock().expect("participants lock");
        let id = format!("p{:05}", p.ids.len() + 1);
        let mut f = OpenOptions::new().create(true).append(true).open(&p.path).map_err(io_err(&p.path))?;
        writeln!(f, "{id}").map_err(io_err(&p.path))?;
        p.ids.push(id.clone());
        Ok(SessionInfo {
            participant_id: id,
            quota: self.quota(),
        })
    }

    fn participant_index(&self, id: &str) -> Option<u64> {
        let p = self.participants.lock().expect("participants lock");
        p.ids.iter().position(|x| x == id).map(|i| i as u64)
    }

    /// Pair order for one participant.
    fn sequence(&self, index: u64) -> Vec<&str> {
        let mut ids: Vec<&str> = self.pair_ids.iter().map(String::as_str).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.order_seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        ids.shuffle(&mut rng);
        ids
    }

    fn config(&self, index: u64, pair_id: &str) -> Option<&ExperimentConfig> {
        self.plan.assign(index, pair_id)
    }

    fn answered(&self, participant: &str, index: u64) -> usize {
        let store = self.store.lock().expect("store lock");
        self.pair_ids
            .iter()
            .filter_map(|p| self.config(index, p))
            .filter(|c| store.is_completed(&format!("{}#{participant}", c.config_id)))
            .count()
    }

    fn cards(&self, config: &ExperimentConfig) -> Vec<ChoiceCard> {
        let pair = &self.pairs[&config.pair_id];
        let page = |id: &str| render_product_page(self.catalog.get(id).expect("validated at startup"));
        let base = PageSet::new(page(&pair.slot_a), page(&pair.slot_b));
        let shown = apply_all(&config.interventions, &base).expect("validated at startup");
        Slot::BOTH
            .iter()
            .map(|slot| {
                let page = shown.page(*slot);
                let view = PageView::extract(&page.url, Some(&page.root));
                ChoiceCard {
                    slot: *slot,
                    title: view.title.unwrap_or_default(),
                    price: view.price.map(|p| p.display_usd()).unwrap_or_default(),
                    rating: view.rating.map(format_rating).unwrap_or_default(),
                    nudge: view.inserted_texts.into_iter().next(),
                }
            })
            .collect()
    }

    pub fn next_pair(&self, participant: &str) -> Result<NextPair, ApiError> {
        let index = self.participant_index(participant).ok_or(ApiError::UnknownParticipant)?;
        let store = self.store.lock().expect("store lock");
        let mut answered = 0;
        for pair_id in self.sequence(index) {
            let config = self.config(index, pair_id).ok_or(ApiError::UnknownPair)?;
            if store.is_completed(&format!("{}#{participant}", config.config_id)) {
                answered += 1;
                continue;
            }
            drop(store);
            return Ok(NextPair::Pair {
                pair_id: pair_id.to_string(),
                position: answered + 1,
                quota: self.quota(),
                cards: self.cards(config),
            });
        }
        Ok(NextPair::Exhausted {
            answered,
            quota: self.quota(),
        })
    }

    pub fn submit(&self, choice: &ChoiceSubmission) -> Result<Progress, ApiError> {
        let index = self.participant_index(&choice.participant).ok_or(ApiError::UnknownParticipant)?;
        if choice.response_ms == 0 {
            return Err(ApiError::Invalid("response_ms must be positive".into()));
        }
        let config = self.config(index, &choice.pair_id).ok_or(ApiError::UnknownPair)?;
        let pair = &self.pairs[&config.pair_id];
        let chosen = match choice.chosen_slot {
            Slot::A => &pair.slot_a,
            Slot::B => &pair.slot_b,
        };
        let now = now_ms();
        let record = TrialRecord {
            config_id: config.config_id.clone(),
            source: Source::Human,
            outcome: Outcome::Chosen { slot: choice.chosen_slot },
            steps: None,
            chosen_product_id: Some(chosen.clone()),
            trace_digest: None,
            usage: None,
            failure: None,
            participant_id: Some(choice.participant.clone()),
            rationale: choice.rationale.as_ref().map(|r| r.trim().to_string()).filter(|r| !r.is_empty()),
            response_ms: Some(choice.response_ms),
            started_at_ms: now.saturating_sub(choice.response_ms),
            finished_at_ms: now,
        };
        match self.store.lock().expect("store lock").append(&record) {
            Ok(()) => {}
            Err(StoreError::Duplicate(_)) => return Err(ApiError::Duplicate),
            Err(e) => return Err(ApiError::Internal(e.to_string())),
        }
        self.progress(&choice.participant)
    }

    pub fn progress(&self, participant: &str) -> Result<Progress, ApiError> {
        let index = self.participant_index(participant).ok_or(ApiError::UnknownParticipant)?;
        let answered = self.answered(participant, index);
        Ok(Progress {
            participant_id: participant.to_string(),
            answered,
            quota: self.quota(),
            complete: answered >= self.quota(),
        })
    }

    pub fn records(&self) -> Result<Vec<TrialRecord>, StoreError> {
        self.store.lock().expect("store lock").read_all()
    }
}

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("unknown participant")]
    UnknownParticipant,
    #[error("unknown pair")]
    UnknownPair,
    #[error("choice already recorded for this pair")]
    Duplicate,
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Internal(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match self {
            ApiError::UnknownParticipant | ApiError::UnknownPair => StatusCode::NOT_FOUND,
            ApiError::Duplicate => StatusCode::CONFLICT,
            ApiError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(serde_json::json!({ "error": self.to_string() }))).into_response()
    }
}

async fn session(State(state): State<Arc<BaselineState>>) -> Result<Json<SessionInfo>, ApiError> {
    state
        .new_participant()
        .map(Json)
        .map_err(|e| ApiError::Internal(e.to_string()))
}

async fn next_pair(
    State(state): State<Arc<BaselineState>>,
    Query(q): Query<ParticipantQuery>,
) -> Result<Json<NextPair>, ApiError> {
    state.next_pair(&q.participant).map(Json)
}

async fn choice(
    State(state): State<Arc<BaselineState>>,
    Json(body): Json<ChoiceSubmission>,
) -> Result<(StatusCode, Json<Progress>), ApiError> {
    state.submit(&body).map(|p| (StatusCode::CREATED, Json(p)))
}

async fn progress(
    State(state): State<Arc<BaselineState>>,
    Query(q): Query<ParticipantQuery>,
) -> Result<Json<Progress>, ApiError> {
    state.progress(&q.participant).map(Json)
}

/// API routes, plus the built interface from `static_dir` when given.
pub fn router(state: Arc<BaselineState>, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/session", get(session))
        .route("/api/pairs/next", get(next_pair))
        .route("/api/choice", post(choice))
        .route("/api/progress", get(progress))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api,
    }
}

/// Serves until ctrl-c.
pub async fn serve(addr: SocketAddr, app: Router) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, "baseline server listening");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
