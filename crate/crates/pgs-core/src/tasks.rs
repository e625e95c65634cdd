//! Synthetic black-box objectives and offline-dataset generation.
//!
//! Each task is a deterministic maximization objective on a box. An offline
//! dataset is built by sampling a large pool uniformly in the box, recording
//! the pool's min/max objective value for score normalization, then keeping
//! only the lowest-scoring slice — so the learner never sees the good region
//! and "beating the dataset" is a meaningful bar.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::seed::{self, tags};
use crate::stats;

/// Built-in synthetic objectives (all maximized; classical test functions
/// are negated so their known minimum becomes the maximum).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    /// Negated Ackley function, d=10 on [-5, 5]^d. Maximum 0 at the origin.
    NegAckley,
    /// Negated Rastrigin function, d=10 on [-5.12, 5.12]^d. Maximum 0 at the origin.
    NegRastrigin,
    /// Negated Rosenbrock function, d=8 on [-2.048, 2.048]^d. Maximum 0 at (1,…,1).
    NegRosenbrock,
    /// f(x) = -‖x‖², d=5 on [-3, 3]^d. Maximum 0 at the origin.
    QuadraticBowl,
}

impl Task {
    pub fn all() -> [Task; 4] {
        [Task::NegAckley, Task::NegRastrigin, Task::NegRosenbrock, Task::QuadraticBowl]
    }

    pub fn by_name(name: &str) -> Result<Task> {
        match name {
            "neg-ackley" => Ok(Task::NegAckley),
            "neg-rastrigin" => Ok(Task::NegRastrigin),
            "neg-rosenbrock" => Ok(Task::NegRosenbrock),
            "quadratic-bowl" => Ok(Task::QuadraticBowl),
            other => Err(Error::InvalidArgument(format!(
                "unknown task {other:?} (expected one of: neg-ackley, neg-rastrigin, neg-rosenbrock, quadratic-bowl)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Task::NegAckley => "neg-ackley",
            Task::NegRastrigin => "neg-rastrigin",
            Task::NegRosenbrock => "neg-rosenbrock",
            Task::QuadraticBowl => "quadratic-bowl",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Task::NegAckley => 10,
            Task::NegRastrigin => 10,
            Task::NegRosenbrock => 8,
            Task::QuadraticBowl => 5,
        }
    }

    /// Per-dimension bounds (same box on every dimension).
    pub fn bounds(&self) -> (f64, f64) {
        match self {
            Task::NegAckley => (-5.0, 5.0),
            Task::NegRastrigin => (-5.12, 5.12),
            Task::NegRosenbrock => (-2.048, 2.048),
            Task::QuadraticBowl => (-3.0, 3.0),
        }
    }

    /// Known global maximum inside the box; documentation and tests only,
    /// never visible to any learner.
    pub fn optimum(&self) -> f64 {
        0.0
    }

    fn raw_eval(&self, x: &[f64]) -> f64 {
        match self {
            Task::NegAckley => {
                let d = x.len() as f64;
                let (a, b, c) = (20.0, 0.2, std::f64::consts::TAU);
                let sq = x.iter().map(|v| v * v).sum::<f64>() / d;
                let cs = x.iter().map(|v| (c * v).cos()).sum::<f64>() / d;
                -(-a * (-b * sq.sqrt()).exp() - cs.exp() + a + (1.0_f64).exp())
            }
            Task::NegRastrigin => {
                -x.iter()
                    .map(|v| v * v - 10.0 * (std::f64::consts::TAU * v).cos() + 10.0)
                    .sum::<f64>()
            }
            Task::NegRosenbrock => -x
                .windows(2)
                .map(|w| {
                    let (a, b) = (w[0], w[1]);
                    100.0 * (b - a * a).powi(2) + (1.0 - a).powi(2)
                })
                .sum::<f64>(),
            Task::QuadraticBowl => -x.iter().map(|v| v * v).sum::<f64>(),
        }
    }
}

/// Evaluate the ground-truth objective. Inputs are clamped to the task box
/// first (clamping is logged); non-finite inputs are rejected.
pub fn oracle_eval(task: Task, x: &[f64]) -> Result<f64> {
    if x.len() != task.dim() {
        return Err(Error::DimensionMismatch { expected: task.dim(), got: x.len() });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite value in oracle input".into()));
    }
    let (lo, hi) = task.bounds();
    let mut clamped = 0usize;
    let mut inside = Vec::with_capacity(x.len());
    for &v in x {
        let c = v.clamp(lo, hi);
        if c != v {
            clamped += 1;
        }
        inside.push(c);
    }
    if clamped > 0 {
        log::debug!("oracle_eval({}): clamped {clamped} coordinate(s) to the box", task.name());
    }
    Ok(task.raw_eval(&inside))
}

/// The fixed dataset a learner sees, plus normalization statistics.
///
/// `pool_min`/`pool_max` come from the full pool the dataset was truncated
/// from and anchor score normalization; the z-score stats are computed on
/// the kept subset only.
#[derive(Debug, Clone, PartialEq)]
pub struct OfflineDataset {
    pub task_name: String,
    pub dim: usize,
    /// Row-major n×dim.
    pub inputs: Vec<f64>,
    /// Raw objective values, length n.
    pub outputs: Vec<f64>,
    pub pool_min: f64,
    pub pool_max: f64,
    pub in_mean: Vec<f64>,
    pub in_std: Vec<f64>,
    pub out_mean: f64,
    pub out_std: f64,
    pub seed: u64,
    pub keep_percentile: f64,
}

impl OfflineDataset {
    /// Build from raw rows, computing z-score stats. Degenerate standard
    /// deviations are replaced by 1.0 so normalization stays defined.
    #[allow(clippy::too_many_arguments)]
    pub fn from_raw(
        task_name: &str,
        dim: usize,
        inputs: Vec<f64>,
        outputs: Vec<f64>,
        pool_min: f64,
        pool_max: f64,
        seed: u64,
        keep_percentile: f64,
    ) -> Result<OfflineDataset> {
        let n = outputs.len();
        if n < 2 {
            return Err(Error::TooSmallDataset(format!("need at least 2 points, got {n}")));
        }
        if inputs.len() != n * dim {
            return Err(Error::DimensionMismatch { expected: n * dim, got: inputs.len() });
        }
        let mut in_mean = vec![0.0; dim];
        let mut in_std = vec![0.0; dim];
        for j in 0..dim {
            let col: Vec<f64> = (0..n).map(|i| inputs[i * dim + j]).collect();
            in_mean[j] = stats::mean(&col);
            in_std[j] = guard_std(stats::std_dev(&col));
        }
        let out_mean = stats::mean(&outputs);
        let out_std = guard_std(stats::std_dev(&outputs));
        Ok(OfflineDataset {
            task_name: task_name.to_string(),
            dim,
            inputs,
            outputs,
            pool_min,
            pool_max,
            in_mean,
            in_std,
            out_mean,
            out_std,
            seed,
            keep_percentile,
        })
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    /// Write `path` as CSV (`x0,…,x{d-1},y`) and `path.meta` as key=value
    /// lines carrying the normalization statistics. Floats print in Rust's
    /// shortest round-trip form, so a load reproduces values exactly.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut csv = String::new();
        for j in 0..self.dim {
            let _ = write!(csv, "x{j},");
        }
        csv.push_str("y\n");
        for i in 0..self.len() {
            for j in 0..self.dim {
                let _ = write!(csv, "{},", self.inputs[i * self.dim + j]);
            }
            let _ = writeln!(csv, "{}", self.outputs[i]);
        }
        fs::write(path, csv)?;

        let mut meta = String::new();
        let _ = writeln!(meta, "task={}", self.task_name);
        let _ = writeln!(meta, "dim={}", self.dim);
        let _ = writeln!(meta, "pool_min={}", self.pool_min);
        let _ = writeln!(meta, "pool_max={}", self.pool_max);
        let _ = writeln!(meta, "in_mean={}", join_floats(&self.in_mean));
        let _ = writeln!(meta, "in_std={}", join_floats(&self.in_std));
        let _ = writeln!(meta, "out_mean={}", self.out_mean);
        let _ = writeln!(meta, "out_std={}", self.out_std);
        let _ = writeln!(meta, "seed={}", self.seed);
        let _ = writeln!(meta, "keep_percentile={}", self.keep_percentile);
        fs::write(meta_path(path), meta)?;
        Ok(())
    }

    pub fn load_csv(path: &Path) -> Result<OfflineDataset> {
        let csv = fs::read_to_string(path)?;
        let mut lines = csv.lines();
        let header = lines.next().ok_or_else(|| Error::Format("empty dataset file".into()))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 2 || cols[cols.len() - 1] != "y" {
            return Err(Error::Format(format!("unexpected dataset header {header:?}")));
        }
        let dim = cols.len() - 1;
        for (j, c) in cols[..dim].iter().enumerate() {
            if *c != format!("x{j}") {
                return Err(Error::Format(format!("unexpected dataset column {c:?}")));
            }
        }
        let mut inputs = Vec::new();
        let mut outputs = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != dim + 1 {
                return Err(Error::Format(format!(
                    "row {}: expected {} fields, got {}",
                    lineno + 2,
                    dim + 1,
                    fields.len()
                )));
            }
            for f in &fields[..dim] {
                inputs.push(parse_float(f)?);
            }
            outputs.push(parse_float(fields[dim])?);
        }

        let meta = fs::read_to_string(meta_path(path))?;
        let get = |key: &str| -> Result<&str> {
            meta.lines()
                .find_map(|l| l.strip_prefix(&format!("{key}=")))
                .ok_or_else(|| Error::Format(format!("dataset metadata missing {key}")))
        };
        let task_name = get("task")?.to_string();
        let meta_dim: usize = get("dim")?
            .parse()
            .map_err(|_| Error::Format("dataset metadata: bad dim".into()))?;
        if meta_dim != dim {
            return Err(Error::Format(format!(
                "metadata dim {meta_dim} does not match CSV dim {dim}"
            )));
        }
        let pool_min = parse_float(get("pool_min")?)?;
        let pool_max = parse_float(get("pool_max")?)?;
        let in_mean = split_floats(get("in_mean")?)?;
        let in_std = split_floats(get("in_std")?)?;
        let out_mean = parse_float(get("out_mean")?)?;
        let out_std = parse_float(get("out_std")?)?;
        let seed: u64 =
            get("seed")?.parse().map_err(|_| Error::Format("dataset metadata: bad seed".into()))?;
        let keep_percentile = parse_float(get("keep_percentile")?)?;
        if in_mean.len() != dim || in_std.len() != dim {
            return Err(Error::Format("dataset metadata: stat length mismatch".into()));
        }
        let n = outputs.len();
        if n < 2 {
            return Err(Error::TooSmallDataset(format!("dataset file holds {n} rows")));
        }
        Ok(OfflineDataset {
            task_name,
            dim,
            inputs,
            outputs,
            pool_min,
            pool_max,
            in_mean,
            in_std,
            out_mean,
            out_std,
            seed,
            keep_percentile,
        })
    }
}

fn guard_std(s: f64) -> f64 {
    if s > 1e-12 {
        s
    } else {
        1.0
    }
}

fn meta_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_os_string();
    os.push(".meta");
    os.into()
}

fn join_floats(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn split_floats(s: &str) -> Result<Vec<f64>> {
    s.split(',').map(parse_float).collect()
}

fn parse_float(s: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| Error::Format(format!("bad float {s:?}")))
}

/// Sample `pool_size` points uniformly in the task box, evaluate all, then
/// keep the `keep_percentile`% lowest-scoring points (stable order, ties at
/// the cut resolved by sample index). The pool's min/max objective values are
/// recorded before truncation.
pub fn generate_offline_dataset(
    task: Task,
    pool_size: usize,
    keep_percentile: f64,
    seed: u64,
) -> Result<OfflineDataset> {
    if pool_size < 100 {
        return Err(Error::InvalidArgument(format!("pool_size must be ≥ 100, got {pool_size}")));
    }
    if !(keep_percentile > 0.0 && keep_percentile <= 100.0) {
        return Err(Error::InvalidArgument(format!(
            "keep_percentile must lie in (0, 100], got {keep_percentile}"
        )));
    }
    let d = task.dim();
    let (lo, hi) = task.bounds();
    let mut rng = seed::rng_for(seed, tags::DATASET);

    let mut pool_x = Vec::with_capacity(pool_size * d);
    let mut pool_y = Vec::with_capacity(pool_size);
    for _ in 0..pool_size {
        let start = pool_x.len();
        for _ in 0..d {
            pool_x.push(lo + (hi - lo) * rng.gen::<f64>());
        }
        pool_y.push(oracle_eval(task, &pool_x[start..])?);
    }
    let pool_min = pool_y.iter().copied().fold(f64::INFINITY, f64::min);
    let pool_max = pool_y.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let keep = ((keep_percentile / 100.0) * pool_size as f64).ceil() as usize;
    if keep < 50 {
        return Err(Error::TooSmallDataset(format!(
            "keep_percentile={keep_percentile} leaves {keep} of {pool_size} points (need ≥ 50)"
        )));
    }
    let mut order: Vec<usize> = (0..pool_size).collect();
    order.sort_by(|&a, &b| pool_y[a].total_cmp(&pool_y[b]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = order[..keep].to_vec();
    kept.sort_unstable();

    let mut inputs = Vec::with_capacity(keep * d);
    let mut outputs = Vec::with_capacity(keep);
    for &i in &kept {
        inputs.extend_from_slice(&pool_x[i * d..(i + 1) * d]);
        outputs.push(pool_y[i]);
    }
    OfflineDataset::from_raw(
        task.name(),
        d,
        inputs,
        outputs,
        pool_min,
        pool_max,
        seed,
        keep_percentile,
    )
}

/// Map a raw objective value onto the pool's [min, max] range. The result is
/// not clipped: values above the pool maximum exceed 1. Reports clip for
/// display; internal bookkeeping keeps the raw value.
pub fn normalize_score(y: f64, ds: &OfflineDataset) -> Result<f64> {
    if ds.pool_max.partial_cmp(&ds.pool_min) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::DegeneratePoolRange { min: ds.pool_min, max: ds.pool_max });
    }
    Ok((y - ds.pool_min) / (ds.pool_max - ds.pool_min))
}

/// Best objective value present in the offline dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BestScore {
    pub raw: f64,
    pub normalized: f64,
}

pub fn d_best(ds: &OfflineDataset) -> Result<BestScore> {
    if ds.is_empty() {
        return Err(Error::TooSmallDataset("empty dataset".into()));
    }
    let raw = ds.outputs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(BestScore { raw, normalized: normalize_score(raw, ds)? })
}
