//! Acceptance suite: one PASS/FAIL/SKIP line per criterion, with the
//! tolerance and time limit of each pinned below. Exits non-zero when any
//! criterion fails.

use std::collections::{BTreeMap, HashSet};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use choicebench_core::catalog::Catalog;
use choicebench_core::episode::run_episode;
use choicebench_core::grid::{generate_grid, GridSpec};
use choicebench_core::interventions::{
    apply_nudge, builtin_nudges, match_price, render_nudge, PageSet, SubstitutionTable, Valence,
};
use choicebench_core::page::render_product_page;
use choicebench_core::pairing::{is_valid_pair, pair_catalog, pair_matched, subsample_pairs, PairConstraints};
use choicebench_core::policy::{
    AttributeFocus, Direction, NoiseModel, RandomPolicy, RemoteSpec, ScriptedSpec, ScriptedWeights,
    UserProfile, TASK_INTENT,
};
use choicebench_core::records::{Outcome, RecordStore, TrialRecord};
use choicebench_core::runner::{run_batch, BatchContext, BatchOptions, BudgetLimits, PolicyRegistry, ScriptedFactory};
use choicebench_core::shopsim::{new_session, replay, trace_digest, EnvConfig};
use choicebench_core::synth::{cap_category_sizes, synthetic_catalog, synthetic_study, Study};
use choicebench_core::{Condition, ExperimentConfig, ExperimentRegime, PairRegime, ProductPair, Slot};
use choicebench_remote::{Recording, RemoteClient, RemoteFactory, Throttle};
use choicebench_stats::bh::bh_step_up;
use choicebench_stats::lpm::{fit_lpm, ModelSpec};
use choicebench_stats::vcov::{cluster_vcov, one_way, SmallSample};
use choicebench_stats::{analyze, reshape_trials, AnalysisSpec, EffectsReport, Frame};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FE_TOL: f64 = 1e-8;
const SANDWICH_TOL: f64 = 1e-10;
const BH_TOL: f64 = 1e-14;
const RECOVERY_TOL_PP: f64 = 2.0;
const RECOVERY_TRIALS: usize = 5000;
const PROFILE_NUDGE_MIN_PP: f64 = 90.0;
const LIVE_MIN_COMPLETED: f64 = 0.90;

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Check = fn() -> Verdict;

fn main() -> ExitCode {
    let checks: [(&str, u64, Check); 8] = [
        ("grid-structure", 1, grid_structure),
        ("pairing-regimes", 5, pairing_regimes),
        ("intervention-correctness", 5, intervention_correctness),
        ("environment-determinism", 30, environment_determinism),
        ("stats-oracles", 60, stats_oracles),
        ("effect-recovery", 600, effect_recovery),
        ("profile-switching", 300, profile_switching),
        ("live-endpoint-smoke", 1800, live_smoke),
    ];
    let mut failed = 0;
    for (name, limit, check) in checks {
        let started = Instant::now();
        let verdict = check();
        let elapsed = started.elapsed();
        let limit = Duration::from_secs(limit);
        let (tag, detail) = match verdict {
            Verdict::Pass(d) if elapsed <= limit => ("PASS", d),
            Verdict::Pass(d) => ("FAIL", format!("over time limit; {d}")),
            Verdict::Fail(d) => ("FAIL", d),
            Verdict::Skip(d) => ("SKIP", d),
        };
        if tag == "FAIL" {
            failed += 1;
        }
        println!("{tag} {name} [{:.2}s / {}s] {detail}", elapsed.as_secs_f64(), limit.as_secs());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let holds: bool = $cond;
        if !holds {
            return Verdict::Fail(format!($($fmt)+));
        }
    };
}

fn grid_structure() -> Verdict {
    let mut all_ids = HashSet::new();
    for regime in [ExperimentRegime::Original, ExperimentRegime::Mr, ExperimentRegime::Mrap] {
        let study = match synthetic_study(1, 50, regime, &["agent".into()], &[]) {
            Ok(s) => s,
            Err(e) => return Verdict::Fail(format!("{regime}: {e}")),
        };
        ensure!(study.pairs.len() == 50, "{regime}: {} pairs", study.pairs.len());
        ensure!(study.configs.len() == 1500, "{regime}: {} configs", study.configs.len());
        let nudges: HashSet<_> = study.configs.iter().map(|c| c.nudge_id.as_str()).collect();
        ensure!(nudges.len() == 10, "{regime}: {} nudges", nudges.len());
        for condition in Condition::ALL {
            let n = study.configs.iter().filter(|c| c.condition == condition).count();
            ensure!(n == 500, "{regime}: {n} configs under {condition:?}");
        }
        for c in &study.configs {
            ensure!(all_ids.insert(c.config_id.clone()), "config id {} repeats", c.config_id);
        }
    }
    Verdict::Pass("1500 configs per regime (10 nudges x 50 pairs x 3 conditions), 4500 distinct ids".into())
}

/// Exhaustive maximum matching over positions `0..n`.
fn brute_max_matching(n: usize, edge: &dyn Fn(usize, usize) -> bool) -> usize {
    fn go(free: &mut Vec<bool>, n: usize, edge: &dyn Fn(usize, usize) -> bool) -> usize {
        let Some(i) = (0..n).find(|i| free[*i]) else { return 0 };
        free[i] = false;
        let mut best = go(free, n, edge);
        for j in i + 1..n {
            if free[j] && edge(i, j) {
                free[j] = false;
                best = best.max(1 + go(free, n, edge));
                free[j] = true;
            }
        }
        free[i] = true;
        best
    }
    go(&mut vec![true; n], n, edge)
}

fn pairing_regimes() -> Verdict {
    let catalog = synthetic_catalog(500, 2026);
    let mut counts = Vec::new();
    for (regime, c, max_dr) in [
        (PairRegime::Original, PairConstraints::original(), 10u8),
        (PairRegime::MatchedRatings, PairConstraints::matched(), 0u8),
    ] {
        let pairs = pair_catalog(&catalog, regime, &c);
        ensure!(!pairs.is_empty(), "{regime}: no pairs");
        for p in &pairs {
            let (a, b) = (catalog.get(&p.slot_a).unwrap(), catalog.get(&p.slot_b).unwrap());
            let (ca, cb) = (a.price.cents() as f64, b.price.cents() as f64);
            let dp = (ca - cb).abs() / ca.min(cb);
            ensure!(a.rating.abs_diff(b.rating) <= max_dr, "{regime} {}: rating gap", p.pair_id);
            ensure!(dp <= 0.5 + 1e-12, "{regime} {}: price gap {dp}", p.pair_id);
            ensure!(a.category == b.category, "{regime} {}: categories differ", p.pair_id);
        }
        counts.push(pairs.len());
    }
    let c = PairConstraints::matched();
    let mut categories = 0;
    for seed in 0..4 {
        let small = cap_category_sizes(&synthetic_catalog(500, seed), 12);
        for cat in small.categories() {
            let products = small.category_products(cat);
            let edge = |i: usize, j: usize| j - i <= c.k && is_valid_pair(products[i], products[j], &c).unwrap();
            let expected = brute_max_matching(products.len(), &edge);
            let got = pair_matched(&products, &c).len();
            ensure!(got == expected, "category {cat}: {got} pairs, maximum is {expected}");
            categories += 1;
        }
    }
    Verdict::Pass(format!(
        "{} original and {} matched pairs all valid; matched = brute force on {categories} categories of <= 12",
        counts[0], counts[1]
    ))
}

fn html_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn intervention_correctness() -> Verdict {
    let table = SubstitutionTable::builtin();
    let items: Vec<_> = synthetic_catalog(200, 4).products().step_by(10).take(20).cloned().collect();
    ensure!(items.len() == 20, "only {} products", items.len());
    let nudges = builtin_nudges();
    for nudge in &nudges {
        for (i, product) in items.iter().enumerate() {
            let other = &items[(i + 1) % items.len()];
            let base = PageSet::new(render_product_page(product), render_product_page(other));
            let text = render_nudge(nudge, &product.category, &BTreeMap::new(), &table).unwrap();
            let nudged = apply_nudge(&base, Slot::A, &text).unwrap();
            let markup = nudged.page(Slot::A).markup();
            let escaped = html_escape(&text);
            ensure!(markup.matches(&escaped).count() == 1, "{} on {}: count", nudge.nudge_id, product.id);
            let mut lines = markup.lines();
            let after = lines.find(|l| l.trim_start().starts_with("<h1")).and_then(|_| lines.next()).unwrap_or("");
            ensure!(after.contains(&escaped), "{} on {}: not right after the title", nudge.nudge_id, product.id);
            ensure!(nudged.strip_inserted().page(Slot::A).markup() == base.page(Slot::A).markup(), "strip differs");
            ensure!(nudged.page(Slot::B) == base.page(Slot::B), "other slot changed");
        }
    }
    for pair in items.chunks(2) {
        let base = PageSet::new(render_product_page(&pair[0]), render_product_page(&pair[1]));
        let target = pair[0].price.min(pair[1].price);
        let matched = match_price(&match_price(&base, Slot::A, target).unwrap(), Slot::B, target).unwrap();
        for slot in Slot::BOTH {
            let (before, after) = (base.page(slot).markup(), matched.page(slot).markup());
            let shown = target.display_usd();
            ensure!(after.contains(&shown), "matched price {shown} not shown");
            let changed: Vec<_> = before.lines().zip(after.lines()).filter(|(a, b)| a != b).collect();
            ensure!(before.lines().count() == after.lines().count(), "line count changed");
            ensure!(changed.iter().all(|(_, b)| b.contains(&shown)), "a non-price line changed: {changed:?}");
        }
    }
    Verdict::Pass(format!("{} nudges x 20 products exact; price matching on 10 pairs", nudges.len()))
}

fn environment_determinism() -> Verdict {
    let catalog = synthetic_catalog(300, 5);
    let pairs = pair_catalog(&catalog, PairRegime::MatchedRatings, &PairConstraints::matched());
    let mut max_steps = 0;
    let mut chosen = 0;
    for i in 0..1000u64 {
        let pair = &pairs[i as usize % pairs.len()];
        let condition = Condition::ALL[(i % 3) as usize];
        let interventions: Vec<_> = condition
            .nudged_slot()
            .map(|slot| vec![choicebench_core::Intervention::InjectNudge { slot, text: "Best seller".into() }])
            .unwrap_or_default();
        let start = new_session(pair, &catalog, condition, &interventions, i, EnvConfig::default()).unwrap();
        let ids = [pair.slot_a.as_str(), pair.slot_b.as_str()];
        let first = run_episode(start.clone(), &mut RandomPolicy::new(i, &ids), TASK_INTENT, None);
        let second = run_episode(start.clone(), &mut RandomPolicy::new(i, &ids), TASK_INTENT, None);
        let bytes = |t: &[_]| serde_json::to_vec(t).unwrap();
        ensure!(bytes(&first.trace) == bytes(&second.trace), "episode {i}: rerun trace differs");
        let end = match replay(&start, &first.trace) {
            Ok(s) => s,
            Err(e) => return Verdict::Fail(format!("episode {i}: {e}")),
        };
        ensure!(end.step_count == first.steps, "episode {i}: replay ended at step {}", end.step_count);
        ensure!(trace_digest(&first.trace) == trace_digest(&second.trace), "episode {i}: digest");
        ensure!(first.steps <= 10 && first.trace.len() <= 10, "episode {i}: {} steps", first.steps);
        max_steps = max_steps.max(first.steps);
        chosen += matches!(first.outcome, Outcome::Chosen { .. }) as usize;
    }
    Verdict::Pass(format!("1000 episodes replayed; max {max_steps} steps; {chosen} ended in the cart"))
}

fn random_design(rng: &mut ChaCha8Rng, trials: usize) -> (Frame, Vec<usize>) {
    let (mut c, mut p, mut n, mut y, mut t, mut codes) = (vec![], vec![], vec![], vec![], vec![], vec![]);
    for trial in 0..trials {
        let cheaper_first = rng.random_bool(0.5);
        let nudge = rng.random_range(0..3);
        let chosen = rng.random_range(0..2);
        for slot in 0..2 {
            c.push(((slot == 0) == cheaper_first) as u8 as f64);
            p.push((slot == 0) as u8 as f64);
            n.push((nudge == slot + 1) as u8 as f64);
            y.push((chosen == slot) as u8 as f64);
            t.push(format!("t{trial:03}"));
            codes.push(trial);
        }
    }
    let mut f = Frame::new();
    for (name, v) in [("y", y), ("c", c), ("p", p), ("n", n)] {
        f.add_numeric(name, v).unwrap();
    }
    f.add_factor("trial", &t).unwrap();
    (f, codes)
}

fn dummy_ols(x: &DMatrix<f64>, y: &DVector<f64>, trials: &[usize], n_trials: usize) -> DVector<f64> {
    let k = x.ncols();
    let full = DMatrix::from_fn(x.nrows(), k + n_trials, |i, j| {
        if j < k {
            x[(i, j)]
        } else {
            (trials[i] == j - k) as u8 as f64
        }
    });
    full.svd(true, true).solve(y, 1e-12).unwrap().rows(0, k).into_owned()
}

fn brute_sandwich(x: &DMatrix<f64>, e: &DVector<f64>, cluster: &[usize]) -> DMatrix<f64> {
    let k = x.ncols();
    let bread = (x.transpose() * x).try_inverse().unwrap();
    let mut meat = DMatrix::<f64>::zeros(k, k);
    for g in 0..=*cluster.iter().max().unwrap() {
        let mut s = DVector::<f64>::zeros(k);
        for i in (0..x.nrows()).filter(|i| cluster[*i] == g) {
            for j in 0..k {
                s[j] += x[(i, j)] * e[i];
            }
        }
        meat += &s * s.transpose();
    }
    &bread * meat * &bread
}

fn bh_textbook(p: &[f64]) -> Vec<f64> {
    let m = p.len();
    let mut sorted = p.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    p.iter()
        .map(|pi| {
            let first = sorted.iter().position(|s| s == pi).unwrap();
            (first..m).map(|j| sorted[j] * (m as f64 / (j + 1) as f64)).fold(f64::INFINITY, f64::min).min(1.0)
        })
        .collect()
}

fn stats_oracles() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut designs, mut worst_fe) = (0, 0.0f64);
    while designs < 200 {
        let trials = rng.random_range(6..20);
        let (frame, codes) = random_design(&mut rng, trials);
        let Ok(fit) = fit_lpm(&frame, &ModelSpec::new("y", &["c", "p", "n"]).order(Some(2)).absorb("trial")) else {
            continue;
        };
        let raw = fit.design.matrix(&frame).select_columns(&fit.retained);
        let y = DVector::from_column_slice(frame.numeric("y").unwrap());
        worst_fe = worst_fe.max((&fit.coef - dummy_ols(&raw, &y, &codes, trials)).abs().max());
        designs += 1;
    }
    ensure!(worst_fe <= FE_TOL, "demeaned vs dummy OLS differ by {worst_fe:e}");

    let mut f = Frame::new();
    f.add_numeric("x", vec![0.3, 1.2, -0.7, 2.2, 0.0, 1.1, -1.4, 0.8, 2.9, -0.2]).unwrap();
    f.add_numeric("y", vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0]).unwrap();
    let g = ["a", "a", "b", "b", "b", "c", "c", "d", "d", "d"];
    f.add_factor("g", &g).unwrap();
    let fit = fit_lpm(&f, &ModelSpec::new("y", &["x"])).unwrap();
    let codes: Vec<usize> = g.iter().map(|s| (s.as_bytes()[0] - b'a') as usize).collect();
    let (v, _) = one_way(&fit, &codes, SmallSample::None).unwrap();
    let one_way_diff = (v - brute_sandwich(&fit.x, &fit.residuals, &codes)).abs().max();
    ensure!(one_way_diff <= SANDWICH_TOL, "one-way sandwich differs by {one_way_diff:e}");

    let mut f = Frame::new();
    let n = 36;
    f.add_numeric("x", (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    f.add_numeric("y", (0..n).map(|_| rng.random_range(0..2) as f64).collect()).unwrap();
    let ca: Vec<usize> = (0..n).map(|i| i % 3).collect();
    let cb: Vec<usize> = (0..n).map(|i| (i / 3) % 3).collect();
    f.add_factor("a", &ca.iter().map(|c| format!("a{c}")).collect::<Vec<_>>()).unwrap();
    f.add_factor("b", &cb.iter().map(|c| format!("b{c}")).collect::<Vec<_>>()).unwrap();
    let fit = fit_lpm(&f, &ModelSpec::new("y", &["x"])).unwrap();
    let cab: Vec<usize> = (0..n).map(|i| ca[i] * 3 + cb[i]).collect();
    let scale = |g: f64| g / (g - 1.0) * (n as f64 - 1.0) / (n as f64 - 2.0);
    let expected = brute_sandwich(&fit.x, &fit.residuals, &ca) * scale(3.0) + brute_sandwich(&fit.x, &fit.residuals, &cb) * scale(3.0)
        - brute_sandwich(&fit.x, &fit.residuals, &cab) * scale(9.0);
    let v = cluster_vcov(&fit, &f, &["a", "b"], SmallSample::Cgm).unwrap();
    let two_way_diff = (&v.raw - expected).abs().max();
    ensure!(two_way_diff <= SANDWICH_TOL, "V_a + V_b - V_ab differs by {two_way_diff:e}");

    let mut worst_bh = 0.0f64;
    for _ in 0..500 {
        let m = rng.random_range(1..30);
        let p: Vec<f64> = (0..m).map(|_| rng.random::<f64>().powi(3)).collect();
        for (a, b) in bh_step_up(&p).unwrap().iter().zip(bh_textbook(&p)) {
            worst_bh = worst_bh.max((a - b).abs());
        }
    }
    ensure!(worst_bh <= BH_TOL, "BH differs by {worst_bh:e}");
    Verdict::Pass(format!(
        "FE {worst_fe:.1e} over 200 designs; one-way {one_way_diff:.1e}; two-way {two_way_diff:.1e}; BH {worst_bh:.1e}"
    ))
}

fn sigma(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Product features (cheaper, viewed first, effectively nudged) of both
/// slots as the scripted agent reads them.
fn slot_features(config: &ExperimentConfig, pair: &ProductPair, catalog: &Catalog) -> [[u8; 3]; 2] {
    let (a, b) = (catalog.get(&pair.slot_a).unwrap(), catalog.get(&pair.slot_b).unwrap());
    let matched = config.regime == ExperimentRegime::Mrap;
    let (pa, pb) = if matched { (0, 0) } else { (a.price.cents(), b.price.cents()) };
    let nudged = config.condition.nudged_slot().map(|s| match config.valence {
        Valence::Positive => s,
        Valence::Negative => s.other(),
    });
    [
        [(pa < pb) as u8, 1, (nudged == Some(Slot::A)) as u8],
        [(pb < pa) as u8, 0, (nudged == Some(Slot::B)) as u8],
    ]
}

/// Population value, for the realized design, of the 1 vs 0 contrasts
/// of a saturated product-level LPM with trial fixed effects. Each trial
/// pins one within-trial difference `f(cell_a) - f(cell_b) = 2 P(a) - 1`;
/// `f` is the least-squares solution over the 8 cells and each contrast
/// averages `f(x with factor = 1) - f(x with factor = 0)` over all rows.
fn analytic_contrasts(trials: &[([u8; 3], [u8; 3], f64)]) -> Result<[f64; 3], String> {
    let cell = |x: &[u8; 3]| (x[0] * 4 + x[1] * 2 + x[2]) as usize;
    let a = DMatrix::from_fn(trials.len(), 8, |t, j| {
        (cell(&trials[t].0) == j) as u8 as f64 - (cell(&trials[t].1) == j) as u8 as f64
    });
    let d = DVector::from_iterator(trials.len(), trials.iter().map(|t| 2.0 * t.2 - 1.0));
    let pinv = a.clone().pseudo_inverse(1e-10)?;
    let f = &pinv * &d;
    let row_space = &pinv * &a;
    let mut out = [0.0; 3];
    for (k, o) in out.iter_mut().enumerate() {
        let mut g = DVector::<f64>::zeros(8);
        for x in trials.iter().flat_map(|t| [t.0, t.1]) {
            let (mut hi, mut lo) = (x, x);
            hi[k] = 1;
            lo[k] = 0;
            g[cell(&hi)] += 1.0;
            g[cell(&lo)] -= 1.0;
        }
        g /= (2 * trials.len()) as f64;
        if (&row_space * &g - &g).abs().max() > 1e-8 {
            return Err(format!("contrast {k} is not identified by this design"));
        }
        *o = 100.0 * g.dot(&f);
    }
    Ok(out)
}

fn run_scripted(study: &Study, spec: ScriptedSpec) -> Result<Vec<TrialRecord>, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut registry = PolicyRegistry::new();
    for model in study.configs.iter().map(|c| c.model.clone()).collect::<HashSet<_>>() {
        registry.register(model, Arc::new(ScriptedFactory { spec: spec.clone() }));
    }
    let pairs = study.pair_map();
    let ctx = BatchContext {
        catalog: &study.catalog,
        pairs: &pairs,
        registry: &registry,
        env: EnvConfig::default(),
        intent: TASK_INTENT,
    };
    let options = BatchOptions {
        parallelism: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(4),
        ..Default::default()
    };
    let mut store = RecordStore::open(dir.path()).map_err(|e| e.to_string())?;
    run_batch(&study.configs, &ctx, options, &mut store).map_err(|e| e.to_string())?;
    store.read_all().map_err(|e| e.to_string())
}

fn effects(study: &Study, records: &[TrialRecord], spec: &AnalysisSpec) -> Result<EffectsReport, String> {
    let by_id = study.configs.iter().map(|c| (c.config_id.clone(), c.clone())).collect();
    let rows = reshape_trials(records, &by_id, &study.pair_map(), &study.catalog).map_err(|e| e.to_string())?;
    analyze(&rows, spec).map_err(|e| e.to_string())
}

/// Rating-matched study with enough pairs for `trials` configs.
fn recovery_study(trials: usize, seed: u64) -> Result<Study, String> {
    let catalog = synthetic_catalog(3000, seed);
    let constraints = PairConstraints::matched();
    let all = pair_catalog(&catalog, PairRegime::MatchedRatings, &constraints);
    let n_pairs = trials.div_ceil(30);
    if all.len() < n_pairs {
        return Err(format!("{} matched pairs, need {n_pairs}", all.len()));
    }
    let pairs = subsample_pairs(&all, n_pairs, seed);
    let configs = generate_grid(&GridSpec {
        pairs: &pairs,
        catalog: &catalog,
        nudges: &builtin_nudges(),
        regime: ExperimentRegime::Mr,
        models: &["logit".to_string()],
        profiles: &[],
        substitutions: &BTreeMap::new(),
        substituter: &SubstitutionTable::builtin(),
        seed,
    })
    .map_err(|e| e.to_string())?;
    Ok(Study { catalog, pairs, configs })
}

fn effect_recovery() -> Verdict {
    let weights = ScriptedWeights { first: 0.5, cheaper: 2.0, higher_rated: 0.0, nudged: 2.5 };
    let spec = ScriptedSpec::new(weights, NoiseModel::Logistic { scale: 1.0 });
    let study = match recovery_study(RECOVERY_TRIALS, 17) {
        Ok(s) => s,
        Err(e) => return Verdict::Fail(e),
    };
    let records = match run_scripted(&study, spec.clone()) {
        Ok(r) => r,
        Err(e) => return Verdict::Fail(e),
    };
    let pairs = study.pair_map();
    let configs: BTreeMap<_, _> = study.configs.iter().map(|c| (c.config_id.as_str(), c)).collect();
    let mut design = Vec::new();
    for r in records.iter().filter(|r| r.outcome.chosen_slot().is_some()) {
        let config = configs[r.config_id.as_str()];
        let [fa, fb] = slot_features(config, &pairs[&config.pair_id], &study.catalog);
        let utility = |f: [u8; 3]| weights.cheaper * f[0] as f64 + weights.first * f[1] as f64 + weights.nudged * f[2] as f64;
        design.push((fa, fb, sigma(utility(fa) - utility(fb))));
    }
    ensure!(design.len() >= RECOVERY_TRIALS, "only {} of {} trials ended with a choice", design.len(), records.len());
    let truth = match analytic_contrasts(&design) {
        Ok(t) => t,
        Err(e) => return Verdict::Fail(e),
    };
    let report = match effects(&study, &records, &AnalysisSpec { nudge_text_model: false, ..Default::default() }) {
        Ok(r) => r,
        Err(e) => return Verdict::Fail(e),
    };
    let mut detail = vec![format!("{} trials", design.len())];
    for (k, factor) in ["c", "p", "n"].into_iter().enumerate() {
        let Some(e) = report.find("M1 pooled", factor, None) else {
            return Verdict::Fail(format!("no pooled `{factor}` estimate"));
        };
        let (lo, hi) = e.ci95();
        detail.push(format!("{factor} {:.2} [{lo:.2}, {hi:.2}] vs {:.2}", e.estimate, truth[k]));
        ensure!(lo <= truth[k] && truth[k] <= hi, "{factor}: analytic {:.2} outside [{lo:.2}, {hi:.2}]", truth[k]);
        ensure!((e.estimate - truth[k]).abs() <= RECOVERY_TOL_PP, "{factor}: {:.2} vs analytic {:.2}", e.estimate, truth[k]);
    }
    Verdict::Pass(detail.join("; "))
}

fn profile_switching() -> Verdict {
    let weights = ScriptedWeights { first: 0.4, cheaper: 1.2, higher_rated: 1.0, nudged: 1.0 };
    let spec = ScriptedSpec::new(weights, NoiseModel::Logistic { scale: 1.0 });
    let authority = UserProfile::builtin(AttributeFocus::AuthorityNudge, Direction::Increased);
    let pooled = AnalysisSpec { by_model: false, nudge_text_model: false, ..Default::default() };
    let mut results = Vec::new();
    for profiles in [vec![], vec![authority]] {
        let study = match synthetic_study(23, 50, ExperimentRegime::Original, &["logit".into()], &profiles) {
            Ok(s) => s,
            Err(e) => return Verdict::Fail(e.to_string()),
        };
        let report = match run_scripted(&study, spec.clone()).and_then(|r| effects(&study, &r, &pooled)) {
            Ok(r) => r,
            Err(e) => return Verdict::Fail(e),
        };
        let get = |f: &str| report.find("M1 pooled", f, None).map(|e| e.estimate).unwrap_or(f64::NAN);
        results.push([get("n"), get("c"), get("r")]);
    }
    let ([n0, c0, r0], [n1, c1, r1]) = (results[0], results[1]);
    let detail = format!("baseline n {n0:.1} c {c0:.1} r {r0:.1}; authority+ n {n1:.1} c {c1:.1} r {r1:.1}");
    ensure!(n1 > PROFILE_NUDGE_MIN_PP, "nudge contrast {n1:.1} <= {PROFILE_NUDGE_MIN_PP}; {detail}");
    ensure!(c0 > 0.0 && r0 > 0.0, "baseline price/rating contrasts not positive; {detail}");
    ensure!(c1.abs() < c0 && r1.abs() < r0, "price/rating contrasts did not shrink; {detail}");
    Verdict::Pass(detail)
}

/// Needs CHOICEBENCH_LIVE_ENDPOINT, CHOICEBENCH_LIVE_MODEL and
/// CHOICEBENCH_API_KEY; skipped otherwise.
fn live_smoke() -> Verdict {
    let (Ok(endpoint), Ok(model)) = (std::env::var("CHOICEBENCH_LIVE_ENDPOINT"), std::env::var("CHOICEBENCH_LIVE_MODEL")) else {
        return Verdict::Skip("set CHOICEBENCH_LIVE_ENDPOINT and CHOICEBENCH_LIVE_MODEL to run".into());
    };
    let mut remote = RemoteSpec::new(endpoint, model.clone());
    remote.api_key_env = Some("CHOICEBENCH_API_KEY".into());
    let client = match RemoteClient::new(remote, Arc::new(Throttle::new(2, Some(60))), Arc::new(Recording::Off)) {
        Ok(c) => c,
        Err(e) => return Verdict::Fail(e.to_string()),
    };
    let mut study = match synthetic_study(5, 10, ExperimentRegime::Mr, std::slice::from_ref(&model), &[]) {
        Ok(s) => s,
        Err(e) => return Verdict::Fail(e.to_string()),
    };
    let first_nudge = study.configs[0].nudge_id.clone();
    study.configs.retain(|c| c.nudge_id == first_nudge);
    let mut registry = PolicyRegistry::new();
    registry.register(model, Arc::new(RemoteFactory { client: Arc::new(client) }));
    let pairs = study.pair_map();
    let ctx = BatchContext {
        catalog: &study.catalog,
        pairs: &pairs,
        registry: &registry,
        env: EnvConfig::default(),
        intent: TASK_INTENT,
    };
    let options = BatchOptions {
        parallelism: 2,
        resume: false,
        limits: BudgetLimits { max_requests: Some(400), max_tokens: Some(2_000_000), max_episodes: None },
    };
    let dir = tempfile::tempdir().unwrap();
    let mut store = RecordStore::open(dir.path()).unwrap();
    let run = match run_batch(&study.configs, &ctx, options, &mut store) {
        Ok(r) => r,
        Err(e) => return Verdict::Fail(e.to_string()),
    };
    let records = store.read_all().unwrap();
    let ok = records.iter().filter(|r| r.outcome != Outcome::Failed).count() as f64 / study.configs.len() as f64;
    ensure!(ok >= LIVE_MIN_COMPLETED, "{:.0}% non-failed episodes", ok * 100.0);
    let pooled = AnalysisSpec { by_model: false, nudge_text_model: false, ..Default::default() };
    let report = match effects(&study, &records, &pooled) {
        Ok(r) => r,
        Err(e) => return Verdict::Fail(e),
    };
    ensure!(
        !report.estimates.is_empty() && report.estimates.iter().all(|e| e.estimate.is_finite() && (0.0..=1.0).contains(&e.p_adjusted)),
        "malformed effects table"
    );
    Verdict::Pass(format!("{} episodes, {:.0}% non-failed, {} requests", records.len(), ok * 100.0, run.requests))
}
