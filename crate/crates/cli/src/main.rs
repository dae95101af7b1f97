//! `choicebench`: build pairs and grids, run agents, serve the human
//! baseline and analyze the resulting records.

mod io;
mod roster;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use choicebench_core::catalog::{preprocess, FilterRules};
use choicebench_core::grid::{generate_grid, GridSpec};
use choicebench_core::interventions::{builtin_nudges, read_nudges, SubstitutionTable};
use choicebench_core::pairing::{
    pair_catalog, subsample_pairs, CoverageMode, CoverageTolerances, PairConstraints, PairRegime,
};
use choicebench_core::policy::{builtin_profiles, TASK_INTENT};
use choicebench_core::records::{RecordStore, Source, TrialRecord};
use choicebench_core::runner::{run_batch, BatchContext, BatchOptions, BudgetLimits, OutcomeCounts};
use choicebench_core::shopsim::EnvConfig;
use choicebench_core::synth::synthetic_catalog;
use choicebench_core::{Catalog, ExperimentConfig, ExperimentRegime, ProductPair};
use choicebench_remote::Recording;
use choicebench_server::{router, serve, BaselineState};
use choicebench_stats::{analyze, price_advantage_curve, reshape_trials, AnalysisSpec, ProductRow, SmallSample};
use tracing_subscriber::filter::LevelFilter;

use roster::Roster;

#[derive(Parser)]
#[command(name = "choicebench", version, about = "Controlled product-choice experiments for web agents")]
struct Cli {
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded synthetic catalog.
    SynthCatalog {
        #[arg(long, default_value_t = 500)]
        n_products: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build product pairs and subsample them.
    Pairs(PairsArgs),
    /// Expand pairs into experiment configs.
    Grid(GridArgs),
    /// Run configs against the models in a roster.
    Run(RunArgs),
    /// Serve the human-baseline choice API.
    ServeBaseline(ServeArgs),
    /// Fit the choice models and print the effects table.
    Analyze(AnalyzeArgs),
    /// Summarize outcomes and fit the price-advantage curve.
    Report(ReportArgs),
}

#[derive(Args)]
struct Inputs {
    #[arg(long)]
    catalog: PathBuf,
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    configs: PathBuf,
}

impl Inputs {
    fn load(&self) -> Result<(Catalog, BTreeMap<String, ProductPair>, Vec<ExperimentConfig>)> {
        Ok((io::read_catalog(&self.catalog)?, io::read_pairs(&self.pairs)?, io::read_configs(&self.configs)?))
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Coverage {
    Price,
    Rating,
}

#[derive(Args)]
struct PairsArgs {
    #[arg(long)]
    catalog: PathBuf,
    /// `original` pairs on rating and price gaps; `mr` and `mrap` need
    /// rating-matched pairs.
    #[arg(long, default_value = "original")]
    regime: ExperimentRegime,
    #[arg(long)]
    delta_r: Option<u8>,
    #[arg(long)]
    delta_p: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 50)]
    n_pairs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Coverage-based sampling for sensitivity curves instead.
    #[arg(long, value_enum)]
    coverage: Option<Coverage>,
    #[arg(long, default_value_t = 5)]
    bins: usize,
    /// Keep products the title filter would drop.
    #[arg(long)]
    no_filter: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long)]
    catalog: PathBuf,
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long, default_value = "original")]
    regime: ExperimentRegime,
    /// Model names from the roster; repeatable.
    #[arg(long = "model", required = true)]
    models: Vec<String>,
    /// Cross the grid with the eight built-in user profiles.
    #[arg(long)]
    profiles: bool,
    /// Nudge catalog (JSON lines); the ten built-ins by default.
    #[arg(long)]
    nudges: Option<PathBuf>,
    /// JSON object of fixed variable values, e.g. {"expertise": "audio engineers"}.
    #[arg(long)]
    substitutions: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long)]
    roster: Option<PathBuf>,
    #[arg(long)]
    store: PathBuf,
    /// Only run configs for this model.
    #[arg(long)]
    model: Option<String>,
    /// Send every hosted model to this endpoint.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long, default_value_t = 1)]
    parallelism: usize,
    #[arg(long)]
    resume: bool,
    #[arg(long)]
    max_requests: Option<u64>,
    #[arg(long)]
    max_tokens: Option<u64>,
    #[arg(long)]
    max_episodes: Option<u64>,
    /// Append every hosted exchange to this file.
    #[arg(long, conflicts_with = "replay")]
    record: Option<PathBuf>,
    /// Answer hosted requests from a recording.
    #[arg(long)]
    replay: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long)]
    store: PathBuf,
    /// Grid model whose configs are mirrored; the first one by default.
    #[arg(long)]
    model: Option<String>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Built interface to serve next to the API.
    #[arg(long)]
    static_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// Record stores; repeatable.
    #[arg(long = "store", required = true)]
    stores: Vec<PathBuf>,
    /// M1 interaction order; saturated when omitted.
    #[arg(long)]
    order: Option<usize>,
    #[arg(long)]
    pooled_only: bool,
    /// Clustering variables; repeatable.
    #[arg(long = "cluster")]
    cluster: Vec<String>,
    /// Skip the finite-cluster adjustment.
    #[arg(long)]
    no_small_sample: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long = "store", required = true)]
    stores: Vec<PathBuf>,
    #[arg(long, default_value_t = 9)]
    curve_points: usize,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => LevelFilter::WARN,
        1 => LevelFilter::INFO,
        2 => LevelFilter::DEBUG,
        _ => LevelFilter::TRACE,
    };
    tracing_subscriber::fmt().with_max_level(level).with_writer(std::io::stderr).init();
    match cli.command {
        Command::SynthCatalog { n_products, seed, out } => {
            let catalog = synthetic_catalog(n_products, seed);
            io::write_catalog(&catalog, &out)?;
            println!("{} products in {} categories", catalog.len(), catalog.category_count());
            Ok(())
        }
        Command::Pairs(a) => pairs(a),
        Command::Grid(a) => grid(a),
        Command::Run(a) => run(a),
        Command::ServeBaseline(a) => serve_baseline(a),
        Command::Analyze(a) => analyze_cmd(a),
        Command::Report(a) => report(a),
    }
}

fn pairs(a: PairsArgs) -> Result<()> {
    let raw = io::read_catalog(&a.catalog)?;
    let catalog = if a.no_filter { raw.clone() } else { preprocess(&raw, &FilterRules::standard()) };
    println!("{} of {} products eligible", catalog.len(), raw.len());
    let pairs: Vec<ProductPair> = if let Some(mode) = a.coverage {
        let mode = match mode {
            Coverage::Price => CoverageMode::Price,
            Coverage::Rating => CoverageMode::Rating,
        };
        let tolerances = CoverageTolerances {
            rating_tol: a.delta_r.unwrap_or(5),
            price_tol: a.delta_p.unwrap_or(0.10),
        };
        let sample = choicebench_core::pairing::coverage_sample(&catalog, mode, tolerances, a.bins, a.k.unwrap_or(12))?;
        if let Some(d) = &sample.diagnostic {
            eprintln!("{d}");
        }
        sample.pairs.into_iter().map(|p| p.pair).collect()
    } else {
        let (regime, defaults) = match a.regime {
            ExperimentRegime::Original => (PairRegime::Original, PairConstraints::original()),
            _ => (PairRegime::MatchedRatings, PairConstraints::matched()),
        };
        let constraints = PairConstraints::new(
            a.delta_r.unwrap_or(defaults.delta_r),
            a.delta_p.unwrap_or(defaults.delta_p),
            a.k.unwrap_or(defaults.k),
        )?;
        let all = pair_catalog(&catalog, regime, &constraints);
        println!("{} candidate pairs", all.len());
        subsample_pairs(&all, a.n_pairs, a.seed)
    };
    if pairs.is_empty() {
        bail!("no pair satisfies the constraints");
    }
    io::write_jsonl(&pairs, &a.out)?;
    println!("wrote {} pairs to {}", pairs.len(), a.out.display());
    Ok(())
}

fn grid(a: GridArgs) -> Result<()> {
    let catalog = io::read_catalog(&a.catalog)?;
    let pairs: Vec<ProductPair> = io::read_jsonl(&a.pairs)?;
    let nudges = match &a.nudges {
        Some(p) => read_nudges(std::io::BufReader::new(std::fs::File::open(p)?))?,
        None => builtin_nudges(),
    };
    let substitutions: BTreeMap<String, String> = match &a.substitutions {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?).context("substitutions must be a JSON object")?,
        None => BTreeMap::new(),
    };
    let profiles = if a.profiles { builtin_profiles() } else { Vec::new() };
    let table = SubstitutionTable::builtin();
    let configs = generate_grid(&GridSpec {
        pairs: &pairs,
        catalog: &catalog,
        nudges: &nudges,
        regime: a.regime,
        models: &a.models,
        profiles: &profiles,
        substitutions: &substitutions,
        substituter: &table,
        seed: a.seed,
    })?;
    io::write_jsonl(&configs, &a.out)?;
    println!(
        "wrote {} configs ({} pairs x {} nudges x 3 conditions x {} models x {} profiles)",
        configs.len(),
        pairs.len(),
        nudges.len(),
        a.models.len(),
        profiles.len().max(1)
    );
    Ok(())
}

fn run(a: RunArgs) -> Result<()> {
    let (catalog, pairs, mut configs) = a.inputs.load()?;
    if let Some(m) = &a.model {
        configs.retain(|c| &c.model == m);
        if configs.is_empty() {
            bail!("no config uses model `{m}`");
        }
    }
    let mut roster = match &a.roster {
        Some(p) => Roster::load(p)?,
        None => Roster::default(),
    };
    if let Some(e) = &a.endpoint {
        roster.override_endpoint(e, a.model.as_deref());
    }
    let recording = match (&a.record, &a.replay) {
        (Some(p), _) => Recording::record(p)?,
        (_, Some(p)) => Recording::replay(p)?,
        _ => Recording::Off,
    };
    let registry = roster.registry(recording)?;
    let ctx = BatchContext {
        catalog: &catalog,
        pairs: &pairs,
        registry: &registry,
        env: EnvConfig::default(),
        intent: TASK_INTENT,
    };
    let options = BatchOptions {
        parallelism: a.parallelism,
        resume: a.resume,
        limits: BudgetLimits {
            max_requests: a.max_requests,
            max_tokens: a.max_tokens,
            max_episodes: a.max_episodes,
        },
    };
    let mut store = RecordStore::open(&a.store)?;
    let report = run_batch(&configs, &ctx, options, &mut store)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    if report.budget_exhausted {
        eprintln!("budget exhausted; rerun with --resume to continue");
    }
    Ok(())
}

fn serve_baseline(a: ServeArgs) -> Result<()> {
    let (catalog, pairs, configs) = a.inputs.load()?;
    let model = a.model.clone().unwrap_or_else(|| configs[0].model.clone());
    let mirrored: Vec<ExperimentConfig> = configs.into_iter().filter(|c| c.model == model).collect();
    if mirrored.is_empty() {
        bail!("no config uses model `{model}`");
    }
    let state = BaselineState::new(&mirrored, pairs, catalog, &a.store, a.seed)?;
    println!("serving {} configs of `{model}` on http://{}", mirrored.len(), a.addr);
    let app = router(Arc::new(state), a.static_dir.as_deref());
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(serve(a.addr, app))?;
    Ok(())
}

fn read_stores(stores: &[PathBuf]) -> Result<Vec<TrialRecord>> {
    let mut records = Vec::new();
    for dir in stores {
        let store = RecordStore::open(dir).with_context(|| format!("opening store {}", dir.display()))?;
        records.extend(store.read_all()?);
    }
    Ok(records)
}

fn product_rows(inputs: &Inputs, stores: &[PathBuf]) -> Result<(Vec<TrialRecord>, Vec<ProductRow>)> {
    let (catalog, pairs, configs) = inputs.load()?;
    let records = read_stores(stores)?;
    let by_id: BTreeMap<String, ExperimentConfig> = configs.into_iter().map(|c| (c.config_id.clone(), c)).collect();
    let rows = reshape_trials(&records, &by_id, &pairs, &catalog)?;
    Ok((records, rows))
}

fn analyze_cmd(a: AnalyzeArgs) -> Result<()> {
    let (records, rows) = product_rows(&a.inputs, &a.stores)?;
    let mut spec = AnalysisSpec {
        interaction_order: a.order,
        ..AnalysisSpec::default()
    };
    if a.pooled_only {
        spec.by_model = false;
        spec.nudge_text_model = false;
    }
    if !a.cluster.is_empty() {
        spec.cluster = a.cluster.clone();
    }
    if a.no_small_sample {
        spec.correction = SmallSample::None;
    }
    let report = analyze(&rows, &spec)?;
    println!("{} records, {} trials with a choice, {} rows", records.len(), report.n_trials, report.n_rows);
    print!("{}", report.to_table());
    for note in &report.notes {
        println!("note: {note}");
    }
    if !report.dropped_terms.is_empty() {
        println!("dropped: {}", report.dropped_terms.join(", "));
    }
    if let Some(out) = &a.out {
        io::write_json(&report, out)?;
    }
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let (records, rows) = product_rows(&a.inputs, &a.stores)?;
    let configs: BTreeMap<String, ExperimentConfig> =
        io::read_configs(&a.inputs.configs)?.into_iter().map(|c| (c.config_id.clone(), c)).collect();
    let mut groups: BTreeMap<(String, String), Vec<&TrialRecord>> = BTreeMap::new();
    for r in &records {
        let Some(c) = configs.get(&r.config_id) else { continue };
        let model = match r.source {
            Source::Human => choicebench_stats::rows::HUMAN_MODEL.to_string(),
            Source::Agent => c.model.clone(),
        };
        groups.entry((model, c.condition.as_str().to_string())).or_default().push(r);
    }
    println!(
        "{:<24} {:<10} {:>7} {:>7} {:>7} {:>7} {:>7} {:>9} {:>10}",
        "model", "condition", "a", "b", "timeout", "failed", "steps", "requests", "tokens"
    );
    for ((model, condition), rs) in &groups {
        let counts = OutcomeCounts::from_records(rs.iter().copied());
        let steps: Vec<u32> = rs.iter().filter_map(|r| r.steps).collect();
        let mean_steps = if steps.is_empty() {
            f64::NAN
        } else {
            steps.iter().map(|&s| f64::from(s)).sum::<f64>() / steps.len() as f64
        };
        let requests: u64 = rs.iter().filter_map(|r| r.usage.as_ref()).map(|u| u.requests).sum();
        let tokens: u64 = rs.iter().filter_map(|r| r.usage.as_ref()).map(|u| u.tokens()).sum();
        println!(
            "{:<24} {:<10} {:>7} {:>7} {:>7} {:>7} {:>7.2} {:>9} {:>10}",
            model, condition, counts.chosen_a, counts.chosen_b, counts.timeout, counts.failed, mean_steps, requests, tokens
        );
    }
    let mut failures: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &records {
        if let Some(f) = &r.failure {
            *failures.entry(f.as_str()).or_default() += 1;
        }
    }
    for (f, n) in failures {
        println!("failed x{n}: {f}");
    }
    print_curve(&rows, a.curve_points)
}

fn print_curve(rows: &[ProductRow], n_points: usize) -> Result<()> {
    if rows.is_empty() {
        println!("no chosen trials; no price curve");
        return Ok(());
    }
    let advantage: Vec<f64> = rows.iter().map(|r| r.price_advantage).collect();
    let y: Vec<f64> = rows.iter().map(|r| f64::from(r.y)).collect();
    let trial: Vec<String> = rows.iter().map(|r| r.trial_id.clone()).collect();
    let curve = price_advantage_curve(&advantage, &y, &trial, n_points)?;
    println!("\nchoice probability by price advantage (degree {})", curve.degree);
    println!("{:>10} {:>8} {:>8} {:>8}", "adv_pct", "fit", "lo95", "hi95");
    for p in &curve.points {
        println!("{:>10.1} {:>8.3} {:>8.3} {:>8.3}", p.x, p.fit, p.lower, p.upper);
    }
    Ok(())
}
