//! Experiment configuration: one flat key=value file drives the whole
//! pipeline. Missing keys take the defaults below; unknown keys are errors
//! (they are almost always typos). Stage artifacts are cached under content
//! keys derived from exactly the fields that influence the stage, so
//! unrelated edits never invalidate a cache entry.

use std::fmt::Write as _;
use std::path::PathBuf;

use sha2::{Digest, Sha256};

use crate::agents::CqlConfig;
use crate::error::{Error, Result};
use crate::surrogate::SurrogateConfig;
use crate::tasks::Task;

/// Which optimizer produces the candidate set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Policy-guided search with the conservative agent.
    PgsCql,
    /// Policy-guided search with the plain SAC agent (no conservatism).
    PgsSac,
    /// Fixed-step gradient ascent on the surrogate; no agent at all.
    Grad,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::PgsCql => "pgs-cql",
            Method::PgsSac => "pgs-sac",
            Method::Grad => "grad",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        match s {
            "pgs-cql" => Ok(Method::PgsCql),
            "pgs-sac" => Ok(Method::PgsSac),
            "grad" => Ok(Method::Grad),
            other => Err(Error::InvalidConfig(format!(
                "unknown method {other:?}; expected pgs-cql, pgs-sac, or grad"
            ))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Settings for the latent-space evaluator and its hyperparameter grid.
#[derive(Debug, Clone, PartialEq)]
pub struct OselConfig {
    /// Percentile grid for the subset-selection axis.
    pub p_grid: Vec<f64>,
    /// Agent-training epoch marks to score; each must be a multiple of the
    /// agent checkpoint interval.
    pub epoch_grid: Vec<usize>,
    /// Neighbors for the latent KNN estimate.
    pub k: usize,
    /// Neighbor count used to re-score tied grid cells.
    pub k_tie: usize,
    pub latent_dim: usize,
    /// Reward-prediction horizons 1..=window.
    pub window: usize,
    /// Random trajectories synthesized over the full dataset for encoder
    /// pretraining.
    pub n_traj: usize,
    pub traj_len: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
}

impl Default for OselConfig {
    fn default() -> OselConfig {
        OselConfig {
            p_grid: vec![10.0, 20.0, 30.0, 40.0],
            epoch_grid: (1..=8).map(|i| i * 50).collect(),
            k: 10,
            k_tie: 100,
            latent_dim: 32,
            window: 8,
            n_traj: 2000,
            traj_len: 50,
            epochs: 30,
            batch: 128,
            lr: 3e-4,
        }
    }
}

impl OselConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p_grid.is_empty() || self.epoch_grid.is_empty() {
            return Err(Error::InvalidConfig("osel grid axes must be non-empty".into()));
        }
        if self.p_grid.iter().any(|p| !(*p > 0.0 && *p <= 100.0)) {
            return Err(Error::InvalidConfig("osel.p_grid entries must lie in (0, 100]".into()));
        }
        if self.epoch_grid.contains(&0) {
            return Err(Error::InvalidConfig("osel.epoch_grid entries must be positive".into()));
        }
        if self.k == 0 || self.k_tie == 0 {
            return Err(Error::InvalidConfig("osel.k and osel.k_tie must be positive".into()));
        }
        if self.latent_dim == 0 || self.window == 0 {
            return Err(Error::InvalidConfig("osel.latent_dim and osel.window must be positive".into()));
        }
        if self.n_traj == 0 || self.traj_len < self.window + 1 {
            return Err(Error::InvalidConfig(
                "osel.n_traj must be positive and osel.traj_len > osel.window".into(),
            ));
        }
        if self.epochs == 0 || self.batch == 0 || !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::InvalidConfig("osel training fields must be positive".into()));
        }
        Ok(())
    }
}

/// Everything one experiment needs, validated before any stage runs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub task: String,
    pub seeds: Vec<u64>,
    pub method: Method,
    /// Pre-truncation pool size for dataset synthesis.
    pub pool: usize,
    /// The offline dataset keeps this percentile of lowest scores.
    pub keep_percentile: f64,
    /// Trajectories are synthesized from this top percentile of the dataset;
    /// 100 uses the whole dataset.
    pub top_p: f64,
    pub m_traj: usize,
    /// Synthesized trajectory length (states per trajectory).
    pub t_train: usize,
    /// Search steps at test time.
    pub t_test: usize,
    /// Sort each trajectory by ascending score before tuple extraction.
    pub monotonic: bool,
    /// Per-dimension step-size bound.
    pub a_max: f64,
    /// Fixed step for the gradient-ascent baseline.
    pub eta: f64,
    /// Search starting points (highest-score dataset inputs).
    pub n_starts: usize,
    /// Deterministic (mean) policy actions at test time.
    pub deterministic: bool,
    pub surrogate: SurrogateConfig,
    pub agent: CqlConfig,
    pub osel: OselConfig,
    /// Artifact cache and results directory; not part of any content hash.
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        RunConfig {
            task: "neg-ackley".into(),
            seeds: vec![0, 1, 2, 3, 4],
            method: Method::PgsCql,
            pool: 5000,
            keep_percentile: 40.0,
            top_p: 40.0,
            m_traj: 2000,
            t_train: 50,
            t_test: 50,
            monotonic: false,
            a_max: 0.05,
            eta: 0.05,
            n_starts: 128,
            deterministic: true,
            surrogate: SurrogateConfig::default(),
            agent: CqlConfig::default(),
            osel: OselConfig::default(),
            out_dir: None,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("bad value for {key}: {v:?}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(|tok| {
            tok.trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad list entry in {key}: {tok:?}")))
        })
        .collect()
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::InvalidConfig(format!("bad value for {key}: {v:?} (want true/false)"))),
    }
}

impl RunConfig {
    /// Parse a flat key=value config. Lines are `key = value`; `#` starts a
    /// comment; absent keys keep their defaults.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected key = value, got {raw:?}", ln + 1))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Apply one key=value override.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "task" => self.task = v.to_string(),
            "seeds" => self.seeds = parse_list(key, v)?,
            "method" => self.method = Method::parse(v)?,
            "pool" => self.pool = parse_num(key, v)?,
            "keep_percentile" => self.keep_percentile = parse_num(key, v)?,
            "top_p" => self.top_p = parse_num(key, v)?,
            "m_traj" => self.m_traj = parse_num(key, v)?,
            "t_train" => self.t_train = parse_num(key, v)?,
            "t_test" => self.t_test = parse_num(key, v)?,
            "monotonic" => self.monotonic = parse_bool(key, v)?,
            "a_max" => self.a_max = parse_num(key, v)?,
            "eta" => self.eta = parse_num(key, v)?,
            "n_starts" => self.n_starts = parse_num(key, v)?,
            "deterministic" => self.deterministic = parse_bool(key, v)?,
            "out_dir" => self.out_dir = Some(PathBuf::from(v)),
            "surrogate.hidden" => self.surrogate.hidden = parse_list(key, v)?,
            "surrogate.epochs" => self.surrogate.epochs = parse_num(key, v)?,
            "surrogate.batch" => self.surrogate.batch = parse_num(key, v)?,
            "surrogate.lr" => self.surrogate.lr = parse_num(key, v)?,
            "agent.epochs" => self.agent.epochs = parse_num(key, v)?,
            "agent.steps_per_epoch" => self.agent.steps_per_epoch = parse_num(key, v)?,
            "agent.batch" => self.agent.batch = parse_num(key, v)?,
            "agent.actor_lr" => self.agent.actor_lr = parse_num(key, v)?,
            "agent.critic_lr" => self.agent.critic_lr = parse_num(key, v)?,
            "agent.gamma" => self.agent.gamma = parse_num(key, v)?,
            "agent.tau" => self.agent.tau = parse_num(key, v)?,
            "agent.w_cons" => self.agent.w_cons = parse_num(key, v)?,
            "agent.m_actions" => self.agent.m_actions = parse_num(key, v)?,
            "agent.hidden" => self.agent.hidden = parse_list(key, v)?,
            "agent.checkpoint_interval" => self.agent.checkpoint_interval = parse_num(key, v)?,
            "osel.p_grid" => self.osel.p_grid = parse_list(key, v)?,
            "osel.epoch_grid" => self.osel.epoch_grid = parse_list(key, v)?,
            "osel.k" => self.osel.k = parse_num(key, v)?,
            "osel.k_tie" => self.osel.k_tie = parse_num(key, v)?,
            "osel.latent_dim" => self.osel.latent_dim = parse_num(key, v)?,
            "osel.window" => self.osel.window = parse_num(key, v)?,
            "osel.n_traj" => self.osel.n_traj = parse_num(key, v)?,
            "osel.traj_len" => self.osel.traj_len = parse_num(key, v)?,
            "osel.epochs" => self.osel.epochs = parse_num(key, v)?,
            "osel.batch" => self.osel.batch = parse_num(key, v)?,
            "osel.lr" => self.osel.lr = parse_num(key, v)?,
            other => {
                return Err(Error::InvalidConfig(format!("unknown config key {other:?}")));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        Task::by_name(&self.task)?;
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("need at least one seed".into()));
        }
        if self.pool < 100 {
            return Err(Error::InvalidConfig("pool must be at least 100".into()));
        }
        for (name, p) in [("keep_percentile", self.keep_percentile), ("top_p", self.top_p)] {
            if !(p > 0.0 && p <= 100.0) {
                return Err(Error::InvalidConfig(format!("{name} must lie in (0, 100], got {p}")));
            }
        }
        if self.m_traj == 0 {
            return Err(Error::InvalidConfig("m_traj must be positive".into()));
        }
        if self.t_train < 2 {
            return Err(Error::InvalidConfig("t_train must be at least 2".into()));
        }
        if !(self.a_max > 0.0 && self.a_max.is_finite()) {
            return Err(Error::InvalidConfig("a_max must be positive and finite".into()));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidConfig("eta must be non-negative and finite".into()));
        }
        if self.n_starts == 0 {
            return Err(Error::InvalidConfig("n_starts must be positive".into()));
        }
        if self.surrogate.hidden.is_empty()
            || self.surrogate.epochs == 0
            || self.surrogate.batch == 0
            || !(self.surrogate.lr.is_finite() && self.surrogate.lr > 0.0)
        {
            return Err(Error::InvalidConfig("surrogate fields must be positive".into()));
        }
        self.agent.validate()?;
        self.osel.validate()?;
        Ok(())
    }

    /// Canonical textual form: every key in a fixed order, parseable back.
    /// `out_dir` is deliberately omitted — where artifacts live must not
    /// change what they contain.
    pub fn to_canonical_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "task = {}", self.task);
        let _ = writeln!(s, "seeds = {}", join(&self.seeds));
        let _ = writeln!(s, "method = {}", self.method);
        let _ = writeln!(s, "pool = {}", self.pool);
        let _ = writeln!(s, "keep_percentile = {}", self.keep_percentile);
        let _ = writeln!(s, "top_p = {}", self.top_p);
        let _ = writeln!(s, "m_traj = {}", self.m_traj);
        let _ = writeln!(s, "t_train = {}", self.t_train);
        let _ = writeln!(s, "t_test = {}", self.t_test);
        let _ = writeln!(s, "monotonic = {}", self.monotonic);
        let _ = writeln!(s, "a_max = {}", self.a_max);
        let _ = writeln!(s, "eta = {}", self.eta);
        let _ = writeln!(s, "n_starts = {}", self.n_starts);
        let _ = writeln!(s, "deterministic = {}", self.deterministic);
        let _ = writeln!(s, "surrogate.hidden = {}", join(&self.surrogate.hidden));
        let _ = writeln!(s, "surrogate.epochs = {}", self.surrogate.epochs);
        let _ = writeln!(s, "surrogate.batch = {}", self.surrogate.batch);
        let _ = writeln!(s, "surrogate.lr = {}", self.surrogate.lr);
        let _ = writeln!(s, "agent.epochs = {}", self.agent.epochs);
        let _ = writeln!(s, "agent.steps_per_epoch = {}", self.agent.steps_per_epoch);
        let _ = writeln!(s, "agent.batch = {}", self.agent.batch);
        let _ = writeln!(s, "agent.actor_lr = {}", self.agent.actor_lr);
        let _ = writeln!(s, "agent.critic_lr = {}", self.agent.critic_lr);
        let _ = writeln!(s, "agent.gamma = {}", self.agent.gamma);
        let _ = writeln!(s, "agent.tau = {}", self.agent.tau);
        let _ = writeln!(s, "agent.w_cons = {}", self.agent.w_cons);
        let _ = writeln!(s, "agent.m_actions = {}", self.agent.m_actions);
        let _ = writeln!(s, "agent.hidden = {}", join(&self.agent.hidden));
        let _ = writeln!(s, "agent.checkpoint_interval = {}", self.agent.checkpoint_interval);
        let _ = writeln!(s, "osel.p_grid = {}", join(&self.osel.p_grid));
        let _ = writeln!(s, "osel.epoch_grid = {}", join(&self.osel.epoch_grid));
        let _ = writeln!(s, "osel.k = {}", self.osel.k);
        let _ = writeln!(s, "osel.k_tie = {}", self.osel.k_tie);
        let _ = writeln!(s, "osel.latent_dim = {}", self.osel.latent_dim);
        let _ = writeln!(s, "osel.window = {}", self.osel.window);
        let _ = writeln!(s, "osel.n_traj = {}", self.osel.n_traj);
        let _ = writeln!(s, "osel.traj_len = {}", self.osel.traj_len);
        let _ = writeln!(s, "osel.epochs = {}", self.osel.epochs);
        let _ = writeln!(s, "osel.batch = {}", self.osel.batch);
        let _ = writeln!(s, "osel.lr = {}", self.osel.lr);
        s
    }

    /// Hash of the canonical text; stamps results files.
    pub fn hash(&self) -> String {
        short_hash(&self.to_canonical_text(), 16)
    }

    /// Cache key for the per-seed offline dataset.
    pub fn dataset_key(&self, seed: u64) -> String {
        short_hash(
            &format!("task={};pool={};keep={};seed={seed}", self.task, self.pool, self.keep_percentile),
            12,
        )
    }

    /// Cache key for the per-seed surrogate (depends on its dataset).
    pub fn surrogate_key(&self, seed: u64) -> String {
        short_hash(
            &format!(
                "ds={};hidden={};epochs={};batch={};lr={};seed={seed}",
                self.dataset_key(seed),
                join(&self.surrogate.hidden),
                self.surrogate.epochs,
                self.surrogate.batch,
                self.surrogate.lr
            ),
            12,
        )
    }

    /// Cache key for the per-seed transition set (depends on its surrogate).
    pub fn transitions_key(&self, seed: u64) -> String {
        short_hash(
            &format!(
                "sur={};p={};m={};t={};mono={};a_max={};seed={seed}",
                self.surrogate_key(seed),
                self.top_p,
                self.m_traj,
                self.t_train,
                self.monotonic,
                self.a_max
            ),
            12,
        )
    }

    /// Cache key for the per-seed trained agent. SAC is CQL with the
    /// conservative weight forced to zero, and the key reflects that.
    pub fn agent_key(&self, seed: u64) -> String {
        let w_cons = match self.method {
            Method::PgsSac => 0.0,
            _ => self.agent.w_cons,
        };
        short_hash(
            &format!(
                "trs={};epochs={};steps={};batch={};alr={};clr={};gamma={};tau={};w={};m={};hidden={};ck={};seed={seed}",
                self.transitions_key(seed),
                self.agent.epochs,
                self.agent.steps_per_epoch,
                self.agent.batch,
                self.agent.actor_lr,
                self.agent.critic_lr,
                self.agent.gamma,
                self.agent.tau,
                w_cons,
                self.agent.m_actions,
                join(&self.agent.hidden),
                self.agent.checkpoint_interval
            ),
            12,
        )
    }

    /// Output directory resolution: explicit config value, else the
    /// `PGS_OUT_DIR` environment variable, else none (no caching).
    pub fn resolve_out_dir(&self) -> Option<PathBuf> {
        self.out_dir
            .clone()
            .or_else(|| std::env::var_os("PGS_OUT_DIR").map(PathBuf::from))
    }
}

fn join<T: std::fmt::Display>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// First `hex_chars` hex digits of the text's SHA-256; stamps artifacts.
pub fn short_hash(text: &str, hex_chars: usize) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect::<String>()[..hex_chars].to_string()
}
