//! Subcommand implementations. Each wraps one pipeline stage from the core
//! library, adds file plumbing, and prints a one-line summary; `pipeline`
//! and `tune` drive the cached multi-stage runners.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use pgs_core::agents::{cql_train, sac_train, Agent, CqlConfig};
use pgs_core::config::{short_hash, Method, RunConfig};
use pgs_core::osel::{hyperparameter_select_jobs, write_grid_csv};
use pgs_core::search::{
    aggregate_reports, append_results_csv, dataset_and_surrogate, evaluate_candidates,
    pick_starts, run_experiment_jobs, search_from_starts, ExperimentResult, Report,
};
use pgs_core::surrogate::{train_surrogate, Surrogate, SurrogateConfig};
use pgs_core::tasks::{d_best, generate_offline_dataset, OfflineDataset, Task};
use pgs_core::trajectories::{
    build_transition_set, select_top_p, sort_trajectories_by_y, synthesize_trajectories,
    ActionBound, TransitionSet, DEFAULT_EPS_GRAD,
};

use crate::{Cli, Cmd};

pub fn dispatch(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::GenData { task, pool, keep, seed, out } => gen_data(&task, pool, keep, seed, &out),
        Cmd::TrainSurrogate { data, out, hidden, epochs, batch, lr, seed } => {
            let cfg = SurrogateConfig { hidden: parse_widths(&hidden)?, epochs, batch, lr };
            cmd_train_surrogate(&data, &out, &cfg, seed)
        }
        Cmd::BuildTransitions { data, surrogate, out, p, m, t, a_max, monotonic, seed } => {
            build_transitions(&data, &surrogate, &out, p, m, t, a_max, monotonic, seed)
        }
        Cmd::TrainPolicy {
            transitions,
            out,
            method,
            epochs,
            steps_per_epoch,
            batch,
            actor_lr,
            critic_lr,
            gamma,
            tau,
            w_cons,
            m_actions,
            hidden,
            checkpoint_interval,
            seed,
        } => {
            let cfg = CqlConfig {
                epochs,
                steps_per_epoch,
                batch,
                actor_lr,
                critic_lr,
                gamma,
                tau,
                w_cons,
                m_actions,
                hidden: parse_widths(&hidden)?,
                checkpoint_interval,
            };
            train_policy(&transitions, &out, Method::parse(&method)?, &cfg, seed)
        }
        Cmd::Search { data, surrogate, agent, method, out, n_starts, t, eta, stochastic, seed } => {
            search(
                &data,
                &surrogate,
                agent.as_deref(),
                Method::parse(&method)?,
                &out,
                n_starts,
                t,
                eta,
                !stochastic,
                seed,
            )
        }
        Cmd::Tune { config, out } => tune(&config, out.as_deref(), cli.jobs),
        Cmd::Pipeline { config, results, ablation } => {
            pipeline(&config, results.as_deref(), ablation.as_deref(), cli.jobs)
        }
        Cmd::Report { results } => report_cmd(&results),
    }
}

fn parse_widths(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|w| w.trim().parse::<usize>().with_context(|| format!("bad layer width {w:?}")))
        .collect()
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .with_context(|| format!("creating {}", parent.display()))?;
        }
    }
    Ok(())
}

fn load_dataset(path: &Path) -> Result<OfflineDataset> {
    OfflineDataset::load_csv(path).with_context(|| format!("reading dataset {}", path.display()))
}

fn gen_data(task: &str, pool: usize, keep: f64, seed: u64, out: &Path) -> Result<()> {
    let task = Task::by_name(task)?;
    let ds = generate_offline_dataset(task, pool, keep, seed)?;
    ensure_parent(out)?;
    ds.save_csv(out)?;
    println!(
        "wrote {} points (dim {}, pool {pool}, keep {keep}%) to {}",
        ds.len(),
        ds.dim,
        out.display()
    );
    Ok(())
}

fn cmd_train_surrogate(data: &Path, out: &Path, cfg: &SurrogateConfig, seed: u64) -> Result<()> {
    let ds = load_dataset(data)?;
    let s = train_surrogate(&ds, cfg, seed)?;
    ensure_parent(out)?;
    s.save(out)?;
    println!(
        "trained surrogate on {} points, final train MSE {:.6}; wrote {}",
        ds.len(),
        s.training_log.last().copied().unwrap_or(f64::NAN),
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn build_transitions(
    data: &Path,
    surrogate: &Path,
    out: &Path,
    p: f64,
    m: usize,
    t: usize,
    a_max: f64,
    monotonic: bool,
    seed: u64,
) -> Result<()> {
    let ds = load_dataset(data)?;
    let s = Surrogate::load(surrogate)
        .with_context(|| format!("reading surrogate {}", surrogate.display()))?;
    let top = select_top_p(&ds, p)?;
    let mut trajs = synthesize_trajectories(&top, m, t, seed)?;
    if monotonic {
        sort_trajectories_by_y(&mut trajs, &ds);
    }
    let set = build_transition_set(&trajs, &s, &ds, ActionBound::new(a_max)?, DEFAULT_EPS_GRAD)?;
    ensure_parent(out)?;
    set.save(out)?;
    println!(
        "built {} transitions from {m} trajectories (top {p}% = {} points): mean |α| {:.5}, clip rate {:.4}, mask rate {:.4}; wrote {}",
        set.len(),
        top.len(),
        set.stats.mean_abs_action,
        set.stats.clip_rate,
        set.stats.mask_rate,
        out.display()
    );
    Ok(())
}

fn train_policy(
    transitions: &Path,
    out: &Path,
    method: Method,
    cfg: &CqlConfig,
    seed: u64,
) -> Result<()> {
    if method == Method::Grad {
        bail!("the gradient baseline trains no policy; use pgs-cql or pgs-sac");
    }
    let set = TransitionSet::load(transitions)
        .with_context(|| format!("reading transitions {}", transitions.display()))?;
    let outcome = match method {
        Method::PgsCql => cql_train(&set, cfg, seed)?,
        Method::PgsSac => sac_train(&set, cfg, seed)?,
        Method::Grad => unreachable!(),
    };
    if let Some(reason) = outcome.aborted {
        bail!("training aborted: {reason}");
    }
    ensure_parent(out)?;
    outcome.agent.save(out)?;
    if let Some(d) = outcome.diagnostics.last() {
        println!(
            "trained {method} for {} epochs on {} tuples: td {:.4}/{:.4}, gap {:.4}/{:.4}, temperature {:.4}; wrote {}",
            cfg.epochs,
            set.len(),
            d.td1,
            d.td2,
            d.gap1,
            d.gap2,
            d.temperature,
            out.display()
        );
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn search(
    data: &Path,
    surrogate: &Path,
    agent_path: Option<&Path>,
    method: Method,
    out: &Path,
    n_starts: usize,
    t: usize,
    eta: f64,
    deterministic: bool,
    seed: u64,
) -> Result<()> {
    let ds = load_dataset(data)?;
    let s = Surrogate::load(surrogate)
        .with_context(|| format!("reading surrogate {}", surrogate.display()))?;
    let agent = match (method, agent_path) {
        (Method::Grad, _) => None,
        (_, Some(path)) => {
            Some(Agent::load(path).with_context(|| format!("reading agent {}", path.display()))?)
        }
        (_, None) => bail!("--agent is required for method {method}"),
    };
    let bounds = Task::by_name(&ds.task_name)?.bounds();
    let starts = pick_starts(&ds, n_starts)?;
    let batch =
        search_from_starts(&starts, &s, agent.as_ref(), t, eta, bounds, deterministic, seed)?;
    let task = Task::by_name(&ds.task_name)?;
    let (score100, score50) = evaluate_candidates(task, &ds, &batch.finals)?;
    let best = d_best(&ds)?;

    // Ad-hoc runs have no run config; hash the flags that shaped the result
    // so the CSV still records provenance.
    let flags = format!(
        "search;task={};method={method};n={n_starts};t={t};eta={eta};det={deterministic};seed={seed};data={}",
        ds.task_name,
        data.display()
    );
    let report = Report {
        task: ds.task_name.clone(),
        method,
        p: 0.0,
        epochs: 0,
        t_test: t,
        m_traj: 0,
        seed,
        score100,
        score50,
        d_best: best.normalized,
        action_norms: batch.action_norms,
        wall_seconds: 0.0,
    };
    let result =
        ExperimentResult { aggregate: aggregate_reports(std::slice::from_ref(&report)), reports: vec![report] };
    ensure_parent(out)?;
    append_results_csv(out, &result, &short_hash(&flags, 16))?;
    println!(
        "{method} from {n_starts} starts: score100 {score100:.4}, score50 {score50:.4}, d_best {:.4}; appended to {}",
        best.normalized,
        out.display()
    );
    Ok(())
}

/// Default output path resolution: an explicit flag wins, else the config's
/// output directory, else the current directory.
fn default_out(flag: Option<&Path>, cfg: &RunConfig, name: &str) -> PathBuf {
    flag.map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.resolve_out_dir().unwrap_or_default().join(name))
}

fn read_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    RunConfig::parse(&text).with_context(|| format!("parsing config {}", path.display()))
}

fn tune(config: &Path, out: Option<&Path>, jobs: usize) -> Result<()> {
    let cfg = read_config(config)?;
    let (ds, surrogate) = dataset_and_surrogate(&cfg, cfg.seeds[0])?;
    let grid = hyperparameter_select_jobs(&ds, &surrogate, &cfg, &cfg.seeds, jobs)?;
    let out = default_out(out, &cfg, "grid.csv");
    ensure_parent(&out)?;
    write_grid_csv(&out, &grid, &cfg.hash())?;
    let (p, epochs) = grid.selected;
    println!(
        "selected p={p} epochs={epochs} (score {:.6}); wrote {} cells to {}",
        grid.selected_score().unwrap_or(f64::NAN),
        grid.cells.len(),
        out.display()
    );
    Ok(())
}

/// The sweepable keys accept the run-config spellings plus the kebab-case
/// aliases printed in help text; `traj-length` sweeps the test-time search
/// length per the ablation protocol (policies stay trained at t_train).
fn ablation_key(name: &str) -> String {
    match name {
        "traj-length" => "t_test".into(),
        other => other.replace('-', "_"),
    }
}

fn pipeline(
    config: &Path,
    results: Option<&Path>,
    ablation: Option<&[String]>,
    jobs: usize,
) -> Result<()> {
    let base = read_config(config)?;
    let variants: Vec<RunConfig> = match ablation {
        None => vec![base],
        Some([key, values]) => {
            let key = ablation_key(key);
            values
                .split(',')
                .map(|v| {
                    let mut cfg = base.clone();
                    cfg.set(&key, v.trim())?;
                    cfg.validate()?;
                    Ok(cfg)
                })
                .collect::<pgs_core::Result<_>>()?
        }
        Some(other) => bail!("--ablation expects KEY VALUES, got {other:?}"),
    };

    let results = default_out(results, &variants[0], "results.csv");
    ensure_parent(&results)?;
    if results.exists() {
        log::info!("overwriting previous {}", results.display());
        std::fs::remove_file(&results)?;
    }
    for cfg in &variants {
        let result = run_experiment_jobs(cfg, jobs)?;
        append_results_csv(&results, &result, &cfg.hash())?;
        let a = &result.aggregate;
        println!(
            "{} {} p={} T_test={}: score100 {:.4} ± {:.4} over {} seeds (d_best {:.4})",
            cfg.task,
            cfg.method,
            cfg.top_p,
            cfg.t_test,
            a.score100_mean,
            a.score100_std,
            result.reports.len(),
            a.d_best_mean,
        );
    }
    println!("wrote {}", results.display());
    Ok(())
}

fn report_cmd(results: &Path) -> Result<()> {
    let text = std::fs::read_to_string(results)
        .with_context(|| format!("reading results {}", results.display()))?;
    let rows = crate::report::parse(&text)?;
    match crate::report::render(&rows) {
        Some(table) => print!("{table}"),
        None => println!("no results"),
    }
    Ok(())
}
