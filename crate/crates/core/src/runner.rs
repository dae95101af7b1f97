//! Batch execution of experiment configs with a worker pool and a single
//! writer that appends records to the store.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;

use crossbeam_channel::unbounded;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::Catalog;
use crate::episode::run_episode;
use crate::grid::ExperimentConfig;
use crate::interventions::Slot;
use crate::pairing::ProductPair;
use crate::policy::{Policy, ScriptedPolicy, ScriptedSpec};
use crate::records::{now_ms, Outcome, RecordStore, Source, StoreError, TrialRecord};
use crate::shopsim::{new_session, trace_digest, EnvConfig};

/// Builds a fresh policy for each episode.
pub trait PolicyFactory: Send + Sync {
    fn create(&self, config: &ExperimentConfig) -> Box<dyn Policy>;
}

pub struct ScriptedFactory {
    pub spec: ScriptedSpec,
}

impl PolicyFactory for ScriptedFactory {
    fn create(&self, config: &ExperimentConfig) -> Box<dyn Policy> {
        let spec = self.spec.conditioned(config.profile.as_ref());
        Box::new(ScriptedPolicy::new(spec, config.seed))
    }
}

#[derive(Default, Clone)]
pub struct PolicyRegistry {
    factories: BTreeMap<String, Arc<dyn PolicyFactory>>,
}

impl PolicyRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, model: impl Into<String>, factory: Arc<dyn PolicyFactory>) {
        self.factories.insert(model.into(), factory);
    }

    pub fn get(&self, model: &str) -> Option<&Arc<dyn PolicyFactory>> {
        self.factories.get(model)
    }

    pub fn models(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }
}

pub struct BatchContext<'a> {
    pub catalog: &'a Catalog,
    pub pairs: &'a BTreeMap<String, ProductPair>,
    pub registry: &'a PolicyRegistry,
    pub env: EnvConfig,
    pub intent: &'a str,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetLimits {
    pub max_requests: Option<u64>,
    pub max_tokens: Option<u64>,
    pub max_episodes: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchOptions {
    pub parallelism: usize,
    pub resume: bool,
    pub limits: BudgetLimits,
}

impl Default for BatchOptions {
    fn default() -> Self {
        BatchOptions {
            parallelism: 1,
            resume: false,
            limits: BudgetLimits::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub chosen_a: u64,
    pub chosen_b: u64,
    pub timeout: u64,
    pub failed: u64,
}

impl OutcomeCounts {
    pub fn add(&mut self, outcome: &Outcome) {
        match outcome {
            Outcome::Chosen { slot: Slot::A } => self.chosen_a += 1,
            Outcome::Chosen { slot: Slot::B } => self.chosen_b += 1,
            Outcome::Timeout => self.timeout += 1,
            Outcome::Failed => self.failed += 1,
        }
    }

    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a TrialRecord>) -> Self {
        let mut c = OutcomeCounts::default();
        records.into_iter().for_each(|r| c.add(&r.outcome));
        c
    }

    pub fn total(&self) -> u64 {
        self.chosen_a + self.chosen_b + self.timeout + self.failed
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunReport {
    pub planned: u64,
    pub skipped: u64,
    pub executed: u64,
    pub counts: OutcomeCounts,
    pub requests: u64,
    pub tokens: u64,
    pub budget_exhausted: bool,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("parallelism must be at least 1")]
    InvalidParallelism,
    #[error("{0} configs already have records; pass resume to continue the batch")]
    NotResumable(usize),
    #[error("no policy registered for model `{0}`")]
    UnknownModel(String),
    #[error("config {config_id} references unknown pair {pair_id}")]
    UnknownPair { config_id: String, pair_id: String },
    #[error("persistence failed, batch aborted (rerun with resume): {0}")]
    Store(#[from] StoreError),
}

/// Runs one config to a record. Environment setup errors become failed
/// records.
pub fn run_config(config: &ExperimentConfig, ctx: &BatchContext<'_>) -> Result<TrialRecord, RunError> {
    let factory = ctx
        .registry
        .get(&config.model)
        .ok_or_else(|| RunError::UnknownModel(config.model.clone()))?;
    let pair = ctx.pairs.get(&config.pair_id).ok_or_else(|| RunError::UnknownPair {
        config_id: config.config_id.clone(),
        pair_id: config.pair_id.clone(),
    })?;
    let started_at_ms = now_ms();
    let mut record = TrialRecord {
        config_id: config.config_id.clone(),
        source: Source::Agent,
        outcome: Outcome::Failed,
        steps: Some(0),
        chosen_product_id: None,
        trace_digest: None,
        usage: None,
        failure: None,
        participant_id: None,
        rationale: None,
        response_ms: None,
        started_at_ms,
        finished_at_ms: started_at_ms,
    };
    match new_session(pair, ctx.catalog, config.condition, &config.interventions, config.seed, ctx.env) {
        Err(e) => record.failure = Some(e.to_string()),
        Ok(state) => {
            let mut policy = factory.create(config);
            let result = run_episode(state, policy.as_mut(), ctx.intent, config.profile.as_ref());
            record.outcome = result.outcome;
            record.steps = Some(result.steps);
            record.chosen_product_id = result.chosen_product_id;
            record.trace_digest = Some(trace_digest(&result.trace));
            record.usage = Some(result.usage);
            record.failure = result.failure;
        }
    }
    record.finished_at_ms = now_ms();
    Ok(record)
}

/// Executes every config without a persisted record, at most
/// `parallelism` at a time. Records are appended by one writer as they
/// complete. Budget caps stop new episodes from starting.
pub fn run_batch(
    configs: &[ExperimentConfig],
    ctx: &BatchContext<'_>,
    options: BatchOptions,
    store: &mut RecordStore,
) -> Result<RunReport, RunError> {
    if options.parallelism == 0 {
        return Err(RunError::InvalidParallelism);
    }
    for c in configs {
        if ctx.registry.get(&c.model).is_none() {
            return Err(RunError::UnknownModel(c.model.clone()));
        }
        if !ctx.pairs.contains_key(&c.pair_id) {
            return Err(RunError::UnknownPair {
                config_id: c.config_id.clone(),
                pair_id: c.pair_id.clone(),
            });
        }
    }
    let pending: Vec<&ExperimentConfig> = configs.iter().filter(|c| !store.is_completed(&c.config_id)).collect();
    let skipped = configs.len() - pending.len();
    if skipped > 0 && !options.resume {
        return Err(RunError::NotResumable(skipped));
    }
    tracing::info!(planned = configs.len(), skipped, parallelism = options.parallelism, "starting batch");
    let mut report = RunReport {
        planned: configs.len() as u64,
        skipped: skipped as u64,
        ..Default::default()
    };

    let (job_tx, job_rx) = unbounded::<&ExperimentConfig>();
    pending.iter().for_each(|c| job_tx.send(c).expect("receiver alive"));
    drop(job_tx);
    let (res_tx, res_rx) = unbounded::<Result<TrialRecord, RunError>>();
    let stop = AtomicBool::new(false);
    let exhausted = AtomicBool::new(false);
    let requests = AtomicU64::new(0);
    let tokens = AtomicU64::new(0);
    let started = AtomicU64::new(0);
    let limits = options.limits;
    let over_budget = || {
        limits.max_requests.is_some_and(|m| requests.load(Ordering::SeqCst) >= m)
            || limits.max_tokens.is_some_and(|m| tokens.load(Ordering::SeqCst) >= m)
    };
    let mut failure: Option<RunError> = None;

    std::thread::scope(|scope| {
        for _ in 0..options.parallelism.min(pending.len().max(1)) {
            let job_rx = job_rx.clone();
            let res_tx = res_tx.clone();
            let (stop, exhausted, requests, tokens, started, over_budget) =
                (&stop, &exhausted, &requests, &tokens, &started, &over_budget);
            scope.spawn(move || {
                while let Ok(config) = job_rx.recv() {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    if over_budget() {
                        exhausted.store(true, Ordering::SeqCst);
                        break;
                    }
                    if let Some(max) = limits.max_episodes {
                        if started.fetch_add(1, Ordering::SeqCst) >= max {
                            exhausted.store(true, Ordering::SeqCst);
                            break;
                        }
                    }
                    let result = run_config(config, ctx);
                    if let Ok(record) = &result {
                        if let Some(u) = &record.usage {
                            requests.fetch_add(u.requests, Ordering::SeqCst);
                            tokens.fetch_add(u.tokens(), Ordering::SeqCst);
                        }
                    }
                    if res_tx.send(result).is_err() {
                        break;
                    }
                }
            });
        }
        drop(res_tx);
        for result in res_rx.iter() {
            if failure.is_some() {
                continue;
            }
            let appended = result.and_then(|record| {
                store.append(&record)?;
                Ok(record)
            });
            match appended {
                Ok(record) => {
                    report.executed += 1;
                    report.counts.add(&record.outcome);
                }
                Err(e) => {
                    tracing::error!(error = %e, "batch aborted");
                    stop.store(true, Ordering::SeqCst);
                    failure = Some(e);
                }
            }
        }
    });

    if let Some(e) = failure {
        return Err(e);
    }
    report.requests = requests.load(Ordering::SeqCst);
    report.tokens = tokens.load(Ordering::SeqCst);
    report.budget_exhausted = exhausted.load(Ordering::SeqCst);
    if report.budget_exhausted {
        tracing::warn!(executed = report.executed, requests = report.requests, tokens = report.tokens, "budget exhausted");
    }
    Ok(report)
}
