//! Offline evaluation without oracle calls: a state encoder trained to
//! predict upcoming (z-scored) score increments along random dataset
//! trajectories, a KNN regressor over the resulting latent space, and the
//! (p, epochs) grid search that uses the KNN scores to pick policy-training
//! hyperparameters.

use std::path::Path;

use crate::agents::{cql_train, Agent};
use crate::config::{OselConfig, RunConfig};
use crate::error::{Error, Result, ResultExt};
use crate::numerics::{AdamState, Checkpoint, Mlp};
use crate::search::{pgs_search, pick_starts, Landscape};
use crate::seed::{self, tags};
use crate::surrogate::Surrogate;
use crate::tasks::{OfflineDataset, Task};
use crate::trajectories::{
    build_transition_set, select_top_p, synthesize_trajectories, ActionBound, Trajectory,
    DEFAULT_EPS_GRAD,
};

/// Width of the encoder trunk's single hidden layer.
const TRUNK_HIDDEN: usize = 64;

/// State encoder: a trunk embedding designs into a latent space, plus one
/// linear scalar head per reward horizon 1..=window. Inputs are z-scored
/// with the dataset statistics baked in at training time.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    trunk: Mlp,
    heads: Mlp,
    in_mean: Vec<f64>,
    in_std: Vec<f64>,
    /// Masked MSE per training epoch.
    pub training_log: Vec<f64>,
}

impl Encoder {
    pub fn dim(&self) -> usize {
        self.trunk.input_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.trunk.output_dim()
    }

    pub fn window(&self) -> usize {
        self.heads.output_dim()
    }

    fn normalize(&self, x_raw: &[f64]) -> Vec<f64> {
        x_raw
            .iter()
            .zip(self.in_mean.iter().zip(&self.in_std))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }

    /// Deterministic latent embedding of one raw design vector.
    pub fn embed(&self, x_raw: &[f64]) -> Result<Vec<f64>> {
        if x_raw.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x_raw.len() });
        }
        self.trunk.forward(&self.normalize(x_raw))
    }

    /// Embeddings for a flat row-major batch, flat row-major out.
    pub fn embed_batch(&self, xs_raw: &[f64], batch: usize) -> Result<Vec<f64>> {
        if xs_raw.len() != batch * self.dim() {
            return Err(Error::DimensionMismatch { expected: batch * self.dim(), got: xs_raw.len() });
        }
        let normed: Vec<f64> = xs_raw
            .chunks(self.dim())
            .flat_map(|row| self.normalize(row))
            .collect();
        Ok(self.trunk.forward_batch(&normed, batch).output().to_vec())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut ck = Checkpoint::new();
        ck.push_net("trunk", &self.trunk);
        ck.push_net("heads", &self.heads);
        ck.push_f64s("in_mean", &self.in_mean);
        ck.push_f64s("in_std", &self.in_std);
        ck.push_f64s("training_log", &self.training_log);
        ck.save(path)
    }

    pub fn load(path: &Path) -> Result<Encoder> {
        let ck = Checkpoint::load(path)?;
        let enc = Encoder {
            trunk: ck.net("trunk")?.clone(),
            heads: ck.net("heads")?.clone(),
            in_mean: ck.f64s("in_mean")?.to_vec(),
            in_std: ck.f64s("in_std")?.to_vec(),
            training_log: ck.f64s("training_log")?.to_vec(),
        };
        if enc.in_mean.len() != enc.dim() || enc.trunk.output_dim() != enc.heads.input_dim() {
            return Err(Error::Format("encoder checkpoint: inconsistent shapes".into()));
        }
        Ok(enc)
    }
}

/// Training rows for the reward-horizon objective: each dataset point along
/// a trajectory, with the z-scored one-step score increment w−1 steps ahead
/// as the target for head w. Positions too close to the trajectory's end
/// lack far horizons; those targets are masked out.
struct HorizonSamples {
    /// Dataset index of each sample's state.
    state_idx: Vec<usize>,
    /// Flat n×window targets.
    targets: Vec<f64>,
    /// Flat n×window validity flags.
    mask: Vec<bool>,
}

fn horizon_samples(ds: &OfflineDataset, trajs: &[Trajectory], window: usize) -> HorizonSamples {
    let zy: Vec<f64> =
        ds.outputs.iter().map(|y| (y - ds.out_mean) / ds.out_std).collect();
    let mut s = HorizonSamples { state_idx: Vec::new(), targets: Vec::new(), mask: Vec::new() };
    for traj in trajs {
        let idx = &traj.indices;
        for i in 0..idx.len() - 1 {
            s.state_idx.push(idx[i]);
            for w in 1..=window {
                if i + w < idx.len() {
                    s.targets.push(zy[idx[i + w]] - zy[idx[i + w - 1]]);
                    s.mask.push(true);
                } else {
                    s.targets.push(0.0);
                    s.mask.push(false);
                }
            }
        }
    }
    s
}

fn fresh_encoder(ds: &OfflineDataset, cfg: &OselConfig, enc_seed: u64) -> Result<Encoder> {
    Ok(Encoder {
        trunk: Mlp::init(
            &[ds.dim, TRUNK_HIDDEN, cfg.latent_dim],
            seed::split_seed(enc_seed, 1),
        )?,
        heads: Mlp::init(&[cfg.latent_dim, cfg.window], seed::split_seed(enc_seed, 2))?,
        in_mean: ds.in_mean.clone(),
        in_std: ds.in_std.clone(),
        training_log: Vec::new(),
    })
}

/// Masked MSE of the encoder's horizon predictions over a sample set.
#[cfg(test)]
fn masked_loss(enc: &Encoder, ds: &OfflineDataset, samples: &HorizonSamples) -> f64 {
    let n = samples.state_idx.len();
    let w = enc.window();
    let mut sum = 0.0;
    let mut count = 0usize;
    for chunk_start in (0..n).step_by(512) {
        let chunk: Vec<usize> =
            (chunk_start..(chunk_start + 512).min(n)).collect();
        let xs: Vec<f64> =
            chunk.iter().flat_map(|&i| ds.input(samples.state_idx[i]).to_vec()).collect();
        let z = enc.embed_batch(&xs, chunk.len()).expect("dims fixed by construction");
        let preds = enc.heads.forward_batch(&z, chunk.len());
        for (row, &i) in chunk.iter().enumerate() {
            for j in 0..w {
                if samples.mask[i * w + j] {
                    let d = preds.output()[row * w + j] - samples.targets[i * w + j];
                    sum += d * d;
                    count += 1;
                }
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Train the encoder on random trajectories drawn from the FULL dataset
/// (subset selection plays no role here): joint MSE over all valid reward
/// horizons, Adam on trunk and heads together. Deterministic per seed.
pub fn train_encoder(ds: &OfflineDataset, cfg: &OselConfig, seed: u64) -> Result<Encoder> {
    cfg.validate()?;
    let enc_seed = seed::split_seed(seed, tags::ENCODER);
    let all: Vec<usize> = (0..ds.len()).collect();
    let trajs = synthesize_trajectories(&all, cfg.n_traj, cfg.traj_len.min(ds.len()), enc_seed)
        .in_stage("encoder-training")?;
    let samples = horizon_samples(ds, &trajs, cfg.window);

    let mut enc = fresh_encoder(ds, cfg, enc_seed)?;
    let mut trunk_opt = AdamState::new(&enc.trunk, cfg.lr);
    let mut heads_opt = AdamState::new(&enc.heads, cfg.lr);
    let mut rng = seed::rng_for(enc_seed, 0);

    let n = samples.state_idx.len();
    let w = cfg.window;
    let mut order: Vec<usize> = (0..n).collect();
    for _epoch in 0..cfg.epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        let mut epoch_sum = 0.0;
        let mut epoch_count = 0usize;
        for chunk in order.chunks(cfg.batch) {
            let b = chunk.len();
            let xs_raw: Vec<f64> =
                chunk.iter().flat_map(|&i| ds.input(samples.state_idx[i]).to_vec()).collect();
            let xs: Vec<f64> =
                xs_raw.chunks(ds.dim).flat_map(|row| enc.normalize(row)).collect();
            let acts_t = enc.trunk.forward_batch(&xs, b);
            let acts_h = enc.heads.forward_batch(acts_t.output(), b);

            let mut n_valid = 0usize;
            for &i in chunk {
                n_valid += samples.mask[i * w..(i + 1) * w].iter().filter(|&&m| m).count();
            }
            // A batch of only trajectory-final states carries no signal.
            if n_valid == 0 {
                continue;
            }
            let mut d_pred = vec![0.0; b * w];
            let mut loss = 0.0;
            for (row, &i) in chunk.iter().enumerate() {
                for j in 0..w {
                    if samples.mask[i * w + j] {
                        let d = acts_h.output()[row * w + j] - samples.targets[i * w + j];
                        loss += d * d / n_valid as f64;
                        d_pred[row * w + j] = 2.0 * d / n_valid as f64;
                    }
                }
            }
            let gh = enc.heads.backward_batch(acts_t.output(), &acts_h, &d_pred, true, true);
            let gt = enc.trunk.backward_batch(&xs, &acts_t, &gh.d_inputs, true, false);
            if !loss.is_finite() || !gh.all_finite() || !gt.all_finite() {
                return Err(Error::NumericFailure("encoder loss or gradient not finite".into())
                    .in_stage("encoder-training"));
            }
            heads_opt.apply(&mut enc.heads, &gh);
            trunk_opt.apply(&mut enc.trunk, &gt);
            epoch_sum += loss * n_valid as f64;
            epoch_count += n_valid;
        }
        enc.training_log.push(if epoch_count == 0 { 0.0 } else { epoch_sum / epoch_count as f64 });
    }
    Ok(enc)
}

/// Mean raw y of the k nearest dataset embeddings. Distances are Euclidean
/// in latent space; exact ties fall back to dataset order. The selected
/// neighbors are averaged in index order, so k = n is exactly the global
/// mean.
fn knn_mean(embedded: &[f64], latent: usize, ys: &[f64], query: &[f64], k: usize) -> f64 {
    let n = ys.len();
    let mut by_dist: Vec<(f64, usize)> = (0..n)
        .map(|i| {
            let row = &embedded[i * latent..(i + 1) * latent];
            let d2: f64 = row.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum();
            (d2, i)
        })
        .collect();
    by_dist.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite distances").then(a.1.cmp(&b.1)));
    let mut picked: Vec<usize> = by_dist[..k].iter().map(|&(_, i)| i).collect();
    picked.sort_unstable();
    picked.iter().map(|&i| ys[i]).sum::<f64>() / k as f64
}

/// KNN regression estimate of a design's raw score: embed it, take the k
/// nearest dataset points in latent space, and average their raw y.
pub fn knn_estimate(enc: &Encoder, ds: &OfflineDataset, x: &[f64], k: usize) -> Result<f64> {
    if k == 0 || k > ds.len() {
        return Err(Error::InvalidArgument(format!(
            "k must lie in 1..={}, got {k}",
            ds.len()
        )));
    }
    let embedded = enc.embed_batch(&ds.inputs, ds.len())?;
    let q = enc.embed(x)?;
    Ok(knn_mean(&embedded, enc.latent_dim(), &ds.outputs, &q, k))
}

/// Score one agent checkpoint without oracle calls: run `n` deterministic
/// policy-guided searches from the best dataset points and average the KNN
/// estimates of the final designs.
pub fn osel_score(
    enc: &Encoder,
    ds: &OfflineDataset,
    model: &dyn Landscape,
    agent: &Agent,
    n: usize,
    t: usize,
    k: usize,
) -> Result<f64> {
    let finals = osel_search_finals(ds, model, agent, n, t)?;
    let embedded = enc.embed_batch(&ds.inputs, ds.len())?;
    estimate_mean(enc, ds, &embedded, &finals, k)
}

/// The final designs of `n` deterministic searches (shared by scoring and
/// the grid's tie-break, which must re-estimate the same candidates).
fn osel_search_finals(
    ds: &OfflineDataset,
    model: &dyn Landscape,
    agent: &Agent,
    n: usize,
    t: usize,
) -> Result<Vec<Vec<f64>>> {
    let bounds = Task::by_name(&ds.task_name)?.bounds();
    let starts = pick_starts(ds, n)?;
    let mut finals = Vec::with_capacity(n);
    for x0 in &starts {
        let trace = pgs_search(x0, model, agent, t, bounds)?;
        finals.push(trace.states.into_iter().next_back().expect("non-empty trace"));
    }
    Ok(finals)
}

fn estimate_mean(
    enc: &Encoder,
    ds: &OfflineDataset,
    embedded: &[f64],
    finals: &[Vec<f64>],
    k: usize,
) -> Result<f64> {
    if k == 0 || k > ds.len() {
        return Err(Error::InvalidArgument(format!("k must lie in 1..={}, got {k}", ds.len())));
    }
    let mut sum = 0.0;
    for x in finals {
        let q = enc.embed(x)?;
        sum += knn_mean(embedded, enc.latent_dim(), &ds.outputs, &q, k);
    }
    Ok(sum / finals.len() as f64)
}

/// One grid cell: a (subset percentile, training epochs) pair and its mean
/// score, `None` when the cell was infeasible (subset too small for the
/// trajectory length, or training aborted for every seed).
#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub p: f64,
    pub epochs: usize,
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    /// All cells in grid order (p-major, epochs-minor).
    pub cells: Vec<GridCell>,
    /// The winning (p, epochs) pair.
    pub selected: (f64, usize),
}

impl GridResult {
    pub fn selected_score(&self) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| (c.p, c.epochs) == self.selected)
            .and_then(|c| c.score)
    }
}

/// Scores considered tied when this close; KNN means of a few hundred raw y
/// values carry no meaningful information below it.
const TIE_EPS: f64 = 1e-9;

/// Pick the winning cell index: highest score, ties re-scored through
/// `rescore` (the wider-k estimate), remaining ties to the smallest epochs,
/// then grid order. Returns None when every cell is missing.
pub fn pick_selected(
    cells: &[GridCell],
    rescore: &mut dyn FnMut(usize) -> Option<f64>,
) -> Option<usize> {
    let best = cells
        .iter()
        .filter_map(|c| c.score)
        .fold(f64::NEG_INFINITY, f64::max);
    if best == f64::NEG_INFINITY {
        return None;
    }
    let tied: Vec<usize> = cells
        .iter()
        .enumerate()
        .filter(|(_, c)| c.score.is_some_and(|s| (s - best).abs() <= TIE_EPS))
        .map(|(i, _)| i)
        .collect();
    if tied.len() == 1 {
        return Some(tied[0]);
    }
    log::info!("grid tie among {} cells at score {best}; re-scoring with the wider k", tied.len());
    let rescored: Vec<(usize, f64)> =
        tied.iter().map(|&i| (i, rescore(i).unwrap_or(f64::NEG_INFINITY))).collect();
    let best2 = rescored.iter().map(|(_, s)| *s).fold(f64::NEG_INFINITY, f64::max);
    let mut finalists: Vec<usize> = rescored
        .iter()
        .filter(|(_, s)| (s - best2).abs() <= TIE_EPS)
        .map(|(i, _)| *i)
        .collect();
    finalists.sort_by_key(|&i| (cells[i].epochs, i));
    Some(finalists[0])
}

/// Grid search over (top-p percentile, training epochs): per p, build the
/// transition set once per seed, train the conservative agent to the largest
/// epoch mark while checkpointing, and score every requested checkpoint with
/// the latent KNN estimator. Cell scores are averaged over seeds. Infeasible
/// cells are recorded as missing rather than failing the whole grid.
pub fn hyperparameter_select(
    ds: &OfflineDataset,
    surrogate: &Surrogate,
    cfg: &RunConfig,
    seeds: &[u64],
) -> Result<GridResult> {
    hyperparameter_select_jobs(ds, surrogate, cfg, seeds, 1)
}

/// One (p, seed) unit of grid work: everything from trajectory synthesis to
/// the per-checkpoint score, slotted by epoch-grid position.
struct PairOutcome {
    scored: Vec<(usize, f64, Vec<Vec<f64>>)>,
}

/// [`hyperparameter_select`] with up to `jobs` (p, seed) training runs in
/// flight at once. Pairs are independent, so the grid is identical for any
/// job count.
pub fn hyperparameter_select_jobs(
    ds: &OfflineDataset,
    surrogate: &Surrogate,
    cfg: &RunConfig,
    seeds: &[u64],
    jobs: usize,
) -> Result<GridResult> {
    cfg.osel.validate()?;
    cfg.agent.validate()?;
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("need at least one training seed".into()));
    }
    for &e in &cfg.osel.epoch_grid {
        if !e.is_multiple_of(cfg.agent.checkpoint_interval) {
            return Err(Error::InvalidConfig(format!(
                "epoch mark {e} is not a multiple of the checkpoint interval {}",
                cfg.agent.checkpoint_interval
            )));
        }
    }
    let max_epochs = *cfg.osel.epoch_grid.iter().max().expect("grid validated non-empty");
    let mut train_cfg = cfg.agent.clone();
    train_cfg.epochs = max_epochs;

    let enc = train_encoder(ds, &cfg.osel, seeds[0])?;
    let embedded = enc.embed_batch(&ds.inputs, ds.len())?;
    let bound = ActionBound::new(cfg.a_max)?;

    // Feasible top-p subsets, shared by that percentile's seeds.
    let tops: Vec<Option<Vec<usize>>> = cfg
        .osel
        .p_grid
        .iter()
        .map(|&p| match select_top_p(ds, p) {
            Ok(top) if top.len() >= cfg.t_train => Some(top),
            Ok(top) => {
                log::warn!(
                    "p={p}: subset of {} cannot host length-{} trajectories; cells left missing",
                    top.len(),
                    cfg.t_train
                );
                None
            }
            Err(e) => {
                log::warn!("p={p}: subset selection failed ({e}); cells left missing");
                None
            }
        })
        .collect();

    let pairs: Vec<(usize, &[usize], u64)> = tops
        .iter()
        .enumerate()
        .filter_map(|(pi, top)| top.as_deref().map(|t| (pi, t)))
        .flat_map(|(pi, top)| seeds.iter().map(move |&s| (pi, top, s)))
        .collect();
    let outcomes = crate::search::for_each_job(&pairs, jobs, |&(pi, top, s)| -> Result<PairOutcome> {
        let p = cfg.osel.p_grid[pi];
        let trajs =
            synthesize_trajectories(top, cfg.m_traj, cfg.t_train, s).in_stage("grid-search")?;
        let set = build_transition_set(&trajs, surrogate, ds, bound, DEFAULT_EPS_GRAD)
            .in_stage("grid-search")?;
        let outcome = cql_train(&set, &train_cfg, s).in_stage("grid-search")?;
        if let Some(reason) = &outcome.aborted {
            log::warn!("p={p} seed {s}: training aborted ({reason}); later epoch marks missing");
        }
        let mut scored = Vec::new();
        for (epoch, agent) in &outcome.checkpoints {
            let Some(slot) = cfg.osel.epoch_grid.iter().position(|e| e == epoch) else {
                continue;
            };
            let finals = osel_search_finals(ds, surrogate, agent, cfg.n_starts, cfg.t_test)?;
            let score = estimate_mean(&enc, ds, &embedded, &finals, cfg.osel.k)?;
            scored.push((slot, score, finals));
        }
        Ok(PairOutcome { scored })
    });

    let n_epochs = cfg.osel.epoch_grid.len();
    let mut cells: Vec<GridCell> = cfg
        .osel
        .p_grid
        .iter()
        .flat_map(|&p| cfg.osel.epoch_grid.iter().map(move |&e| GridCell { p, epochs: e, score: None }))
        .collect();
    // Finals per cell and seed, kept for the tie-break's re-estimate.
    let mut cell_finals: Vec<Vec<Vec<Vec<f64>>>> = vec![Vec::new(); cells.len()];
    let mut sums = vec![0.0; cells.len()];
    let mut counts = vec![0usize; cells.len()];
    for (&(pi, _, _), outcome) in pairs.iter().zip(outcomes) {
        for (slot, score, finals) in outcome?.scored {
            let cell = pi * n_epochs + slot;
            sums[cell] += score;
            counts[cell] += 1;
            cell_finals[cell].push(finals);
        }
    }
    for ((cell, &sum), &count) in cells.iter_mut().zip(&sums).zip(&counts) {
        if count > 0 {
            cell.score = Some(sum / count as f64);
        }
    }

    let mut rescore = |i: usize| -> Option<f64> {
        let per_seed = &cell_finals[i];
        if per_seed.is_empty() {
            return None;
        }
        let mut sum = 0.0;
        for finals in per_seed {
            sum += estimate_mean(&enc, ds, &embedded, finals, cfg.osel.k_tie).ok()?;
        }
        Some(sum / per_seed.len() as f64)
    };
    let idx = pick_selected(&cells, &mut rescore).ok_or_else(|| {
        Error::InvalidConfig("every grid cell was infeasible; nothing to select".into())
    })?;
    let selected = (cells[idx].p, cells[idx].epochs);
    log::info!("grid selected p={} epochs={}", selected.0, selected.1);
    Ok(GridResult { cells, selected })
}

/// Write the grid as CSV (columns p, epochs, osel_score, selected), with the
/// experiment's config hash on a comment line. Missing cells leave the score
/// field empty.
pub fn write_grid_csv(path: &Path, grid: &GridResult, config_hash: &str) -> Result<()> {
    let mut text = String::from("p,epochs,osel_score,selected\n");
    text.push_str(&format!("# config {config_hash}\n"));
    for c in &grid.cells {
        let score = c.score.map(|s| s.to_string()).unwrap_or_default();
        let sel = (c.p, c.epochs) == grid.selected;
        text.push_str(&format!("{},{},{},{}\n", c.p, c.epochs, score, sel));
    }
    std::fs::write(path, text)?;
    Ok(())
}
