//! `pgs`: offline black-box optimization from the command line — dataset
//! synthesis, surrogate fitting, trajectory-to-transition conversion,
//! conservative policy training, policy-guided search, hyperparameter
//! tuning, and result reporting, each as a composable subcommand.

mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "pgs",
    version,
    about = "Policy-guided gradient search for offline black-box optimization"
)]
pub struct Cli {
    /// Concurrent workers for independent seeds and grid cells.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Subcommand)]
pub enum Cmd {
    /// Synthesize an offline dataset (CSV plus .meta sidecar).
    GenData {
        /// Task name: neg-ackley, neg-rastrigin, neg-rosenbrock, quadratic-bowl.
        #[arg(long)]
        task: String,
        /// Oracle pool size sampled before truncation.
        #[arg(long, default_value_t = 5000)]
        pool: usize,
        /// Percentile of lowest-scoring pool points kept as the dataset.
        #[arg(long, default_value_t = 40.0)]
        keep: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the MLP surrogate to a dataset and write its checkpoint.
    TrainSurrogate {
        /// Dataset CSV from gen-data.
        #[arg(long)]
        data: PathBuf,
        /// Output checkpoint path.
        #[arg(long)]
        out: PathBuf,
        /// Hidden layer widths, comma-separated.
        #[arg(long, default_value = "256,256")]
        hidden: String,
        #[arg(long, default_value_t = 50)]
        epochs: usize,
        #[arg(long, default_value_t = 128)]
        batch: usize,
        #[arg(long, default_value_t = 3e-4)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Synthesize trajectories over the top percentile and convert them to
    /// transition tuples.
    BuildTransitions {
        #[arg(long)]
        data: PathBuf,
        /// Surrogate checkpoint from train-surrogate.
        #[arg(long)]
        surrogate: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Top percentile of the dataset trajectories are drawn from.
        #[arg(long, default_value_t = 40.0)]
        p: f64,
        /// Number of trajectories.
        #[arg(long, default_value_t = 2000)]
        m: usize,
        /// Trajectory length.
        #[arg(long, default_value_t = 50)]
        t: usize,
        /// Per-dimension action bound.
        #[arg(long, default_value_t = 0.05)]
        a_max: f64,
        /// Sort each trajectory by ascending score before conversion.
        #[arg(long)]
        monotonic: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the step-size policy on a transition set and write the agent
    /// checkpoint.
    TrainPolicy {
        /// Transition set from build-transitions.
        #[arg(long)]
        transitions: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// pgs-cql (conservative) or pgs-sac (conservative weight zero).
        #[arg(long, default_value = "pgs-cql")]
        method: String,
        #[arg(long, default_value_t = 100)]
        epochs: usize,
        #[arg(long, default_value_t = 25)]
        steps_per_epoch: usize,
        #[arg(long, default_value_t = 256)]
        batch: usize,
        #[arg(long, default_value_t = 3e-4)]
        actor_lr: f64,
        #[arg(long, default_value_t = 3e-4)]
        critic_lr: f64,
        #[arg(long, default_value_t = 0.99)]
        gamma: f64,
        #[arg(long, default_value_t = 0.005)]
        tau: f64,
        /// Weight on the conservative regularizer.
        #[arg(long, default_value_t = 5.0)]
        w_cons: f64,
        /// Sampled actions per state for the conservative term (even).
        #[arg(long, default_value_t = 10)]
        m_actions: usize,
        #[arg(long, default_value = "256,256")]
        hidden: String,
        #[arg(long, default_value_t = 50)]
        checkpoint_interval: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Search from the best dataset points and append oracle-scored rows to
    /// a results CSV.
    Search {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        surrogate: PathBuf,
        /// Agent checkpoint; required unless --method grad.
        #[arg(long)]
        agent: Option<PathBuf>,
        /// pgs-cql, pgs-sac, or grad (plain gradient ascent, no agent).
        #[arg(long, default_value = "pgs-cql")]
        method: String,
        /// Results CSV to append to.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 128)]
        n_starts: usize,
        /// Search steps.
        #[arg(long, default_value_t = 50)]
        t: usize,
        /// Step size for the gradient baseline.
        #[arg(long, default_value_t = 0.05)]
        eta: f64,
        /// Sample exploration noise instead of the deterministic mean action.
        #[arg(long)]
        stochastic: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Grid-search (top-p, training epochs) with the offline latent-KNN
    /// estimator and write the scored grid.
    Tune {
        /// Run configuration file (key = value lines).
        #[arg(long)]
        config: PathBuf,
        /// Grid CSV path; defaults to grid.csv in the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full pipeline (dataset → surrogate → transitions → policy →
    /// search → oracle scores) for every seed in the config.
    Pipeline {
        /// Run configuration file (key = value lines).
        #[arg(long)]
        config: PathBuf,
        /// Results CSV path; defaults to results.csv in the output directory.
        #[arg(long)]
        results: Option<PathBuf>,
        /// Sweep one config key over comma-separated values, e.g.
        /// `--ablation traj-length 50,60,70,80,90,100`.
        #[arg(long, num_args = 2, value_names = ["KEY", "VALUES"])]
        ablation: Option<Vec<String>>,
    },
    /// Render a results CSV as a per-task, per-method mean ± std table.
    Report {
        #[arg(long)]
        results: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp_millis()
        .init();
    match commands::dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
