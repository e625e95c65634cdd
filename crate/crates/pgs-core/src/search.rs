//! Test-time search and the experiment harness. A trained policy supplies a
//! per-dimension step-size vector at every gradient-ascent step on the
//! surrogate; the fixed-step baseline runs the same loop with a constant
//! step. The harness wires dataset → surrogate → trajectories → agent →
//! search → scores, caches stage artifacts by content key, and appends
//! result rows to a CSV.

use std::path::Path;
use std::time::Instant;

use rand_chacha::ChaCha8Rng;

use crate::agents::{cql_train, policy_act, sac_train, Agent};
use crate::config::{Method, RunConfig};
use crate::error::{Error, Result, ResultExt};
use crate::seed::{self, tags};
use crate::stats;
use crate::surrogate::{train_surrogate, Surrogate};
use crate::tasks::{
    d_best, generate_offline_dataset, normalize_score, oracle_eval, OfflineDataset, Task,
};
use crate::trajectories::{
    build_transition_set, select_top_p, sort_trajectories_by_y, synthesize_trajectories,
    ActionBound, TransitionSet, DEFAULT_EPS_GRAD,
};

/// A differentiable scalar landscape over raw design coordinates. The
/// trained surrogate is the production implementation; tests use closed-form
/// landscapes to pin search behavior exactly.
pub trait Landscape {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> Result<f64>;
    fn grad(&self, x: &[f64]) -> Result<Vec<f64>>;
}

impl Landscape for Surrogate {
    fn dim(&self) -> usize {
        Surrogate::dim(self)
    }
    fn value(&self, x: &[f64]) -> Result<f64> {
        Surrogate::value(self, x)
    }
    fn grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        Surrogate::grad(self, x)
    }
}

/// Full record of one search: the visited states (T+1, box-clamped), the
/// landscape value at each state, and the ℓ₂ norm of each step-size vector
/// (T entries).
#[derive(Debug, Clone, PartialEq)]
pub struct SearchTrace {
    pub states: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    pub action_norms: Vec<f64>,
}

impl SearchTrace {
    pub fn final_x(&self) -> &[f64] {
        self.states.last().expect("trace always holds x0")
    }

    pub fn steps(&self) -> usize {
        self.action_norms.len()
    }
}

fn l2(xs: &[f64]) -> f64 {
    xs.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Shared ascent loop: x ← clamp(x + α ⊙ ∇f̂(x)). The two public searches
/// differ only in where α comes from, so they run byte-identical updates.
fn ascent_loop(
    x0: &[f64],
    model: &dyn Landscape,
    t: usize,
    bounds: (f64, f64),
    mut alpha_of: impl FnMut(&[f64]) -> Result<Vec<f64>>,
) -> Result<SearchTrace> {
    if x0.len() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), got: x0.len() });
    }
    let (lo, hi) = bounds;
    let mut x: Vec<f64> = x0.iter().map(|v| v.clamp(lo, hi)).collect();
    let mut trace = SearchTrace {
        states: Vec::with_capacity(t + 1),
        values: Vec::with_capacity(t + 1),
        action_norms: Vec::with_capacity(t),
    };
    trace.values.push(model.value(&x)?);
    trace.states.push(x.clone());
    for _ in 0..t {
        let alpha = alpha_of(&x)?;
        let g = model.grad(&x)?;
        for j in 0..x.len() {
            x[j] = (x[j] + alpha[j] * g[j]).clamp(lo, hi);
        }
        trace.action_norms.push(l2(&alpha));
        trace.values.push(model.value(&x)?);
        trace.states.push(x.clone());
    }
    Ok(trace)
}

/// Policy-guided search: T gradient-ascent steps on the landscape with the
/// agent's deterministic (mean) action as the per-dimension step size.
pub fn pgs_search(
    x0: &[f64],
    model: &dyn Landscape,
    agent: &Agent,
    t: usize,
    bounds: (f64, f64),
) -> Result<SearchTrace> {
    // Deterministic mode never touches the stream; any seed works.
    let mut rng = seed::rng_for(0, 0);
    ascent_loop(x0, model, t, bounds, |x| policy_act(agent, x, true, &mut rng))
}

/// Policy-guided search with sampled (stochastic) actions.
pub fn pgs_search_stochastic(
    x0: &[f64],
    model: &dyn Landscape,
    agent: &Agent,
    t: usize,
    bounds: (f64, f64),
    rng: &mut ChaCha8Rng,
) -> Result<SearchTrace> {
    ascent_loop(x0, model, t, bounds, |x| policy_act(agent, x, false, rng))
}

/// Fixed-step gradient ascent: the same loop with α ≡ η on every dimension.
pub fn grad_baseline(
    x0: &[f64],
    model: &dyn Landscape,
    t: usize,
    eta: f64,
    bounds: (f64, f64),
) -> Result<SearchTrace> {
    let alpha = vec![eta; model.dim()];
    ascent_loop(x0, model, t, bounds, |_| Ok(alpha.clone()))
}

/// The N highest-scoring dataset inputs, best first; ties keep dataset
/// order.
pub fn pick_starts(ds: &OfflineDataset, n: usize) -> Result<Vec<Vec<f64>>> {
    if n > ds.len() {
        return Err(Error::InvalidArgument(format!(
            "asked for {n} starts from a dataset of {}",
            ds.len()
        )));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.sort_by(|&a, &b| {
        ds.outputs[b].partial_cmp(&ds.outputs[a]).expect("scores are finite").then(a.cmp(&b))
    });
    Ok(order[..n].iter().map(|&i| ds.input(i).to_vec()).collect())
}

/// Oracle-evaluate every candidate, normalize against the dataset's pool
/// range, and return (best, median) — the 100th- and 50th-percentile scores.
pub fn evaluate_candidates(
    task: Task,
    ds: &OfflineDataset,
    candidates: &[Vec<f64>],
) -> Result<(f64, f64)> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("no candidates to evaluate".into()));
    }
    let mut scores = Vec::with_capacity(candidates.len());
    for x in candidates {
        let y = oracle_eval(task, x)?;
        scores.push(normalize_score(y, ds)?);
    }
    let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((best, stats::median(&scores)))
}

/// One result row: the per-seed outcome of a full pipeline run.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub task: String,
    pub method: Method,
    pub p: f64,
    /// Agent training epochs behind this result; 0 for the gradient
    /// baseline.
    pub epochs: usize,
    pub t_test: usize,
    pub m_traj: usize,
    pub seed: u64,
    pub score100: f64,
    pub score50: f64,
    /// Best dataset score, normalized — the bar to beat.
    pub d_best: f64,
    /// Mean ‖α‖₂ over all searches, one entry per step.
    pub action_norms: Vec<f64>,
    pub wall_seconds: f64,
}

/// Mean (and spread where it matters) over the per-seed reports.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub score100_mean: f64,
    pub score100_std: f64,
    pub score50_mean: f64,
    pub score50_std: f64,
    pub d_best_mean: f64,
    pub first_norm_mean: f64,
    pub last_norm_mean: f64,
    pub wall_seconds_total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub reports: Vec<Report>,
    pub aggregate: Aggregate,
}

/// Mean the per-seed reports into one summary row.
pub fn aggregate_reports(reports: &[Report]) -> Aggregate {
    let col = |f: fn(&Report) -> f64| -> Vec<f64> { reports.iter().map(f).collect() };
    let s100 = col(|r| r.score100);
    let s50 = col(|r| r.score50);
    Aggregate {
        score100_mean: stats::mean(&s100),
        score100_std: stats::std_dev(&s100),
        score50_mean: stats::mean(&s50),
        score50_std: stats::std_dev(&s50),
        d_best_mean: stats::mean(&col(|r| r.d_best)),
        first_norm_mean: stats::mean(&col(|r| *r.action_norms.first().unwrap_or(&0.0))),
        last_norm_mean: stats::mean(&col(|r| *r.action_norms.last().unwrap_or(&0.0))),
        wall_seconds_total: s100.len() as f64 * stats::mean(&col(|r| r.wall_seconds)),
    }
}

/// Load a cached artifact or build and cache it. With no cache directory the
/// artifact is simply built.
fn cached<T>(
    dir: Option<&Path>,
    name: &str,
    load: impl FnOnce(&Path) -> Result<T>,
    save: impl FnOnce(&T, &Path) -> Result<()>,
    build: impl FnOnce() -> Result<T>,
) -> Result<T> {
    let Some(dir) = dir else { return build() };
    let path = dir.join(name);
    if path.exists() {
        match load(&path) {
            Ok(v) => {
                log::info!("reusing cached {name}");
                return Ok(v);
            }
            Err(e) => log::warn!("cached {name} unreadable ({e}); rebuilding"),
        }
    }
    let v = build()?;
    std::fs::create_dir_all(dir)?;
    save(&v, &path)?;
    Ok(v)
}

/// Train (or load) the agent a config calls for, on the given transitions.
fn agent_for(cfg: &RunConfig, set: &TransitionSet, seed: u64, dir: Option<&Path>) -> Result<Agent> {
    cached(
        dir,
        &format!("agent-{}.ckpt", cfg.agent_key(seed)),
        Agent::load,
        |a, p| a.save(p),
        || {
            let outcome = match cfg.method {
                Method::PgsCql => cql_train(set, &cfg.agent, seed)?,
                Method::PgsSac => sac_train(set, &cfg.agent, seed)?,
                Method::Grad => unreachable!("grad runs no agent"),
            };
            if let Some(reason) = outcome.aborted {
                return Err(Error::NumericFailure(format!("agent training aborted: {reason}")));
            }
            Ok(outcome.agent)
        },
    )
}

/// Run `f`, logging the stage's wall time on success.
fn timed<T>(stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let t0 = Instant::now();
    let v = f()?;
    log::info!("{stage}: {:.2}s", t0.elapsed().as_secs_f64());
    Ok(v)
}

/// Build or load one seed's offline dataset and its surrogate, using the
/// config's cache directory when one is resolved.
pub fn dataset_and_surrogate(cfg: &RunConfig, seed: u64) -> Result<(OfflineDataset, Surrogate)> {
    let task = Task::by_name(&cfg.task)?;
    let out_dir = cfg.resolve_out_dir();
    let dir = out_dir.as_deref();
    let ds = timed("dataset", || {
        cached(
            dir,
            &format!("ds-{}.csv", cfg.dataset_key(seed)),
            OfflineDataset::load_csv,
            |d, p| d.save_csv(p),
            || generate_offline_dataset(task, cfg.pool, cfg.keep_percentile, seed),
        )
        .in_stage("dataset")
    })?;
    let surrogate = timed("surrogate", || {
        cached(
            dir,
            &format!("sur-{}.ckpt", cfg.surrogate_key(seed)),
            Surrogate::load,
            |s, p| s.save(p),
            || train_surrogate(&ds, &cfg.surrogate, seed),
        )
        .in_stage("surrogate")
    })?;
    Ok((ds, surrogate))
}

/// The search stage shared by the experiment driver and the standalone
/// command: one ascent per starting point.
pub struct SearchBatch {
    /// Final design of each search, in start order.
    pub finals: Vec<Vec<f64>>,
    /// Mean ‖α‖₂ across searches, one entry per step.
    pub action_norms: Vec<f64>,
}

/// Run one search from every start: the gradient baseline when no agent is
/// given, otherwise policy-guided (deterministic or with seeded exploration
/// noise).
#[allow(clippy::too_many_arguments)]
pub fn search_from_starts(
    starts: &[Vec<f64>],
    model: &dyn Landscape,
    agent: Option<&Agent>,
    t: usize,
    eta: f64,
    bounds: (f64, f64),
    deterministic: bool,
    seed: u64,
) -> Result<SearchBatch> {
    let search_seed = seed::split_seed(seed, tags::SEARCH);
    let mut finals = Vec::with_capacity(starts.len());
    let mut norm_sums = vec![0.0; t];
    for (i, x0) in starts.iter().enumerate() {
        let trace = match (agent, deterministic) {
            (None, _) => grad_baseline(x0, model, t, eta, bounds),
            (Some(a), true) => pgs_search(x0, model, a, t, bounds),
            (Some(a), false) => {
                let mut rng = seed::rng_for(search_seed, i as u64);
                pgs_search_stochastic(x0, model, a, t, bounds, &mut rng)
            }
        }?;
        for (k, n) in trace.action_norms.iter().enumerate() {
            norm_sums[k] += n;
        }
        finals.push(trace.states.into_iter().next_back().expect("non-empty trace"));
    }
    let action_norms = norm_sums.iter().map(|s| s / starts.len().max(1) as f64).collect();
    Ok(SearchBatch { finals, action_norms })
}

/// One seed's full pipeline: synthesize (or load) the offline dataset, fit
/// the surrogate, select the top percentile, synthesize trajectories, build
/// transitions, train the agent (skipped for the gradient baseline), run one
/// search per starting point, and oracle-score the final candidates.
fn run_seed(cfg: &RunConfig, task: Task, dir: Option<&Path>, seed: u64) -> Result<Report> {
    let t0 = Instant::now();
    let bounds = task.bounds();

    let (ds, surrogate) = dataset_and_surrogate(cfg, seed)?;

    let agent = if cfg.method == Method::Grad {
        log::info!("method=grad: skipping trajectory synthesis and agent training");
        None
    } else {
        let set = timed("transitions", || {
            cached(
                dir,
                &format!("trs-{}.ckpt", cfg.transitions_key(seed)),
                TransitionSet::load,
                |t, p| t.save(p),
                || {
                    let top = select_top_p(&ds, cfg.top_p)?;
                    let mut trajs = synthesize_trajectories(&top, cfg.m_traj, cfg.t_train, seed)?;
                    if cfg.monotonic {
                        sort_trajectories_by_y(&mut trajs, &ds);
                    }
                    let bound = ActionBound::new(cfg.a_max)?;
                    build_transition_set(&trajs, &surrogate, &ds, bound, DEFAULT_EPS_GRAD)
                },
            )
            .in_stage("transitions")
        })?;
        Some(timed("agent-training", || agent_for(cfg, &set, seed, dir).in_stage("agent-training"))?)
    };

    let batch = timed("search", || {
        let starts = pick_starts(&ds, cfg.n_starts)?;
        search_from_starts(
            &starts,
            &surrogate,
            agent.as_ref(),
            cfg.t_test,
            cfg.eta,
            bounds,
            cfg.deterministic,
            seed,
        )
    })
    .in_stage("search")?;
    let SearchBatch { finals, action_norms } = batch;

    let (score100, score50) = evaluate_candidates(task, &ds, &finals).in_stage("evaluation")?;
    let best = d_best(&ds).in_stage("evaluation")?;
    let wall = t0.elapsed().as_secs_f64();
    log::info!(
        "{} {} seed {seed}: score100 {score100:.4}, score50 {score50:.4}, d_best {:.4} ({wall:.1}s)",
        cfg.task,
        cfg.method,
        best.normalized
    );
    Ok(Report {
        task: cfg.task.clone(),
        method: cfg.method,
        p: cfg.top_p,
        epochs: if cfg.method == Method::Grad { 0 } else { cfg.agent.epochs },
        t_test: cfg.t_test,
        m_traj: cfg.m_traj,
        seed,
        score100,
        score50,
        d_best: best.normalized,
        action_norms,
        wall_seconds: wall,
    })
}

/// Run the full pipeline for every seed in the config and aggregate.
pub fn run_experiment(cfg: &RunConfig) -> Result<ExperimentResult> {
    run_experiment_jobs(cfg, 1)
}

/// [`run_experiment`] with up to `jobs` seeds in flight at once. Seeds are
/// independent (distinct RNG streams and cache keys), so the result is
/// identical for any job count; only wall-clock timings move.
pub fn run_experiment_jobs(cfg: &RunConfig, jobs: usize) -> Result<ExperimentResult> {
    cfg.validate()?;
    let task = Task::by_name(&cfg.task)?;
    let out_dir = cfg.resolve_out_dir();
    let dir = out_dir.as_deref();
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir)?;
    }

    let outcomes = for_each_job(&cfg.seeds, jobs, |&seed| run_seed(cfg, task, dir, seed));
    let mut reports = Vec::with_capacity(cfg.seeds.len());
    for outcome in outcomes {
        reports.push(outcome?);
    }
    let aggregate = aggregate_reports(&reports);
    Ok(ExperimentResult { reports, aggregate })
}

/// Apply `work` to every item, running up to `jobs` items concurrently, and
/// return the outcomes in item order (so failures surface deterministically
/// no matter how threads interleave).
pub(crate) fn for_each_job<T: Sync, R: Send>(
    items: &[T],
    jobs: usize,
    work: impl Fn(&T) -> R + Sync,
) -> Vec<R> {
    if jobs <= 1 || items.len() <= 1 {
        return items.iter().map(work).collect();
    }
    let cursor = std::sync::atomic::AtomicUsize::new(0);
    let slots: Vec<std::sync::Mutex<Option<R>>> =
        items.iter().map(|_| std::sync::Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(items.len()) {
            scope.spawn(|| loop {
                let i = cursor.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                let Some(item) = items.get(i) else { break };
                *slots[i].lock().expect("worker never panics holding the slot") = Some(work(item));
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().expect("no poisoned slots").expect("every slot filled"))
        .collect()
}

pub const RESULTS_HEADER: &str = "task,method,p,epochs,T_test,m_traj,seed,score100,score50,d_best,mean_action_norm_first_step,mean_action_norm_last_step,wall_seconds";

fn report_row(r: &Report, seed_label: &str) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{}",
        r.task,
        r.method,
        r.p,
        r.epochs,
        r.t_test,
        r.m_traj,
        seed_label,
        r.score100,
        r.score50,
        r.d_best,
        r.action_norms.first().unwrap_or(&0.0),
        r.action_norms.last().unwrap_or(&0.0),
        r.wall_seconds
    )
}

/// Append one experiment's rows (plus its aggregate row, marked seed=agg) to
/// a results CSV, writing the header when the file is new. The experiment's
/// config hash rides along as a comment line.
pub fn append_results_csv(path: &Path, result: &ExperimentResult, config_hash: &str) -> Result<()> {
    let reports = &result.reports;
    if reports.is_empty() {
        return Err(Error::InvalidArgument("no reports to write".into()));
    }
    let mut body = String::new();
    if !path.exists() {
        body.push_str(RESULTS_HEADER);
        body.push('\n');
    }
    body.push_str(&format!("# config {config_hash}\n"));
    for r in reports {
        body.push_str(&report_row(r, &r.seed.to_string()));
        body.push('\n');
    }
    let a = &result.aggregate;
    let template = Report {
        seed: 0,
        score100: a.score100_mean,
        score50: a.score50_mean,
        d_best: a.d_best_mean,
        action_norms: vec![a.first_norm_mean, a.last_norm_mean],
        wall_seconds: a.wall_seconds_total,
        ..reports[0].clone()
    };
    body.push_str(&report_row(&template, "agg"));
    body.push('\n');
    use std::io::Write as _;
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(body.as_bytes())?;
    Ok(())
}
