//! Reduction of the offline dataset to an off-policy RL training set:
//! select the best slice of the data, thread random trajectories through it,
//! and recover the per-dimension step-size action that explains each
//! consecutive pair under the surrogate's gradient field.

use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::Checkpoint;
use crate::seed::{self, tags};
use crate::surrogate::Surrogate;
use crate::tasks::OfflineDataset;

/// Default gradient magnitude below which a dimension is treated as
/// degenerate during action recovery.
pub const DEFAULT_EPS_GRAD: f64 = 1e-6;

/// Per-dimension cap on step-size actions. The total budget scales as
/// `a_max·√d` in the Euclidean norm, so the default 0.05 spreads a
/// `0.05·√d` budget evenly across dimensions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionBound {
    pub a_max: f64,
}

impl ActionBound {
    pub fn new(a_max: f64) -> Result<ActionBound> {
        if a_max > 0.0 && a_max.is_finite() {
            Ok(ActionBound { a_max })
        } else {
            Err(Error::InvalidConfig(format!("action bound must be positive, got {a_max}")))
        }
    }
}

impl Default for ActionBound {
    fn default() -> ActionBound {
        ActionBound { a_max: 0.05 }
    }
}

/// Ordered walk through distinct dataset indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    pub indices: Vec<usize>,
}

/// Indices of the `ceil(p·n/100)` highest-output points, ascending; ties at
/// the cut are broken by original index order.
pub fn select_top_p(ds: &OfflineDataset, p: f64) -> Result<Vec<usize>> {
    if !(p > 0.0 && p <= 100.0) {
        return Err(Error::InvalidArgument(format!("percentile must lie in (0, 100], got {p}")));
    }
    let n = ds.len();
    let keep = ((p / 100.0) * n as f64).ceil() as usize;
    if keep < 2 {
        return Err(Error::TooSmallDataset(format!(
            "top-{p}% of {n} points keeps {keep}, need at least 2"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| ds.outputs[b].total_cmp(&ds.outputs[a]).then(a.cmp(&b)));
    let mut top = order[..keep].to_vec();
    top.sort_unstable();
    Ok(top)
}

/// Draw `m` trajectories of length `t`: each is an independent uniform
/// ordering of `t` distinct members of `top`. Points may recur across
/// trajectories, never within one. Each trajectory consumes its own RNG
/// stream, so the result is deterministic per seed regardless of order of
/// construction.
pub fn synthesize_trajectories(
    top: &[usize],
    m: usize,
    t: usize,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    if t < 2 {
        return Err(Error::InvalidArgument(format!("trajectory length must be ≥ 2, got {t}")));
    }
    if t > top.len() {
        return Err(Error::InfeasibleTrajectory { requested: t, available: top.len() });
    }
    let stage = seed::split_seed(seed, tags::TRAJECTORIES);
    let mut out = Vec::with_capacity(m);
    for i in 0..m {
        let mut rng = seed::rng_for(stage, i as u64);
        let mut pool = top.to_vec();
        // Partial Fisher–Yates: the first t slots become the sample.
        for k in 0..t {
            let j = k + rng.gen_range(0..pool.len() - k);
            pool.swap(k, j);
        }
        pool.truncate(t);
        out.push(Trajectory { indices: pool });
    }
    Ok(out)
}

/// Ablation: reorder each trajectory ascending by dataset output, turning
/// random walks into monotonically improving ones.
pub fn sort_trajectories_by_y(trajs: &mut [Trajectory], ds: &OfflineDataset) {
    for traj in trajs {
        traj.indices.sort_by(|&a, &b| ds.outputs[a].total_cmp(&ds.outputs[b]).then(a.cmp(&b)));
    }
}

/// Step-size action recovered from a consecutive pair.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveredAction {
    pub alpha: Vec<f64>,
    /// true where the gradient was too small to divide by (α forced to 0).
    pub masked: Vec<bool>,
    pub n_clipped: usize,
}

/// Solve `x' = x + α ⊙ g` elementwise for α. Dimensions with |g_j| ≤ ε_g
/// are masked and get α_j = 0; the rest are clipped to ±a_max.
pub fn recover_action(
    x: &[f64],
    x_next: &[f64],
    g: &[f64],
    bound: ActionBound,
    eps_g: f64,
) -> Result<RecoveredAction> {
    let d = x.len();
    if x_next.len() != d || g.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: x_next.len().max(g.len()) });
    }
    if !(eps_g.is_finite() && eps_g > 0.0) {
        return Err(Error::InvalidArgument(format!("ε_g must be positive, got {eps_g}")));
    }
    let mut alpha = Vec::with_capacity(d);
    let mut masked = Vec::with_capacity(d);
    let mut n_clipped = 0;
    for j in 0..d {
        if g[j].abs() > eps_g {
            let raw = (x_next[j] - x[j]) / g[j];
            let clipped = raw.clamp(-bound.a_max, bound.a_max);
            if clipped != raw {
                n_clipped += 1;
            }
            alpha.push(clipped);
            masked.push(false);
        } else {
            alpha.push(0.0);
            masked.push(true);
        }
    }
    Ok(RecoveredAction { alpha, masked, n_clipped })
}

/// The deterministic environment step: `x + α ⊙ ∇f̂(x)`, clamped to the box.
pub fn transition(
    x: &[f64],
    alpha: &[f64],
    s: &Surrogate,
    bounds: (f64, f64),
) -> Result<Vec<f64>> {
    if alpha.len() != x.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), got: alpha.len() });
    }
    let g = s.grad(x)?;
    let (lo, hi) = bounds;
    let mut clamped = 0usize;
    let mut out = Vec::with_capacity(x.len());
    for j in 0..x.len() {
        let v = x[j] + alpha[j] * g[j];
        let c = v.clamp(lo, hi);
        if c != v {
            clamped += 1;
        }
        out.push(c);
    }
    if clamped > 0 {
        log::debug!("transition clamped {clamped} coordinate(s) to the box");
    }
    Ok(out)
}

/// Aggregate recovery statistics over a transition set.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TransitionStats {
    pub mean_abs_action: f64,
    /// Fraction of action entries that hit the ±a_max clip.
    pub clip_rate: f64,
    /// Fraction of action entries masked for degenerate gradient.
    pub mask_rate: f64,
}

/// Flat storage for (s, a, s', r) tuples; all matrices are row-major n×d.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionSet {
    pub dim: usize,
    pub states: Vec<f64>,
    pub actions: Vec<f64>,
    pub next_states: Vec<f64>,
    pub rewards: Vec<f64>,
    /// Per-tuple count of masked dimensions.
    pub mask_counts: Vec<u64>,
    pub stats: TransitionStats,
    /// Free-form provenance lines (key=value) carried into the file sidecar.
    pub meta: Vec<(String, String)>,
}

impl TransitionSet {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn action(&self, i: usize) -> &[f64] {
        &self.actions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn next_state(&self, i: usize) -> &[f64] {
        &self.next_states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn set_meta(&mut self, key: &str, value: &str) {
        if let Some(slot) = self.meta.iter_mut().find(|(k, _)| k == key) {
            slot.1 = value.to_string();
        } else {
            self.meta.push((key.to_string(), value.to_string()));
        }
    }

    pub fn get_meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut ck = Checkpoint::new();
        ck.push_u64s("shape", &[self.len() as u64, self.dim as u64]);
        ck.push_f64s("states", &self.states);
        ck.push_f64s("actions", &self.actions);
        ck.push_f64s("next_states", &self.next_states);
        ck.push_f64s("rewards", &self.rewards);
        ck.push_u64s("mask_counts", &self.mask_counts);
        ck.push_f64s(
            "stats",
            &[self.stats.mean_abs_action, self.stats.clip_rate, self.stats.mask_rate],
        );
        let meta: String =
            self.meta.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        ck.push_text("meta", &meta);
        ck.save(path)
    }

    pub fn load(path: &Path) -> Result<TransitionSet> {
        let ck = Checkpoint::load(path)?;
        let shape = ck.u64s("shape")?;
        if shape.len() != 2 {
            return Err(Error::Format("transition file: bad shape section".into()));
        }
        let (n, dim) = (shape[0] as usize, shape[1] as usize);
        let states = ck.f64s("states")?.to_vec();
        let actions = ck.f64s("actions")?.to_vec();
        let next_states = ck.f64s("next_states")?.to_vec();
        let rewards = ck.f64s("rewards")?.to_vec();
        let mask_counts = ck.u64s("mask_counts")?.to_vec();
        if states.len() != n * dim
            || actions.len() != n * dim
            || next_states.len() != n * dim
            || rewards.len() != n
            || mask_counts.len() != n
        {
            return Err(Error::Format("transition file: section lengths disagree".into()));
        }
        let st = ck.f64s("stats")?;
        if st.len() != 3 {
            return Err(Error::Format("transition file: bad stats section".into()));
        }
        let meta = ck
            .text("meta")?
            .lines()
            .filter_map(|l| l.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())))
            .collect();
        Ok(TransitionSet {
            dim,
            states,
            actions,
            next_states,
            rewards,
            mask_counts,
            stats: TransitionStats { mean_abs_action: st[0], clip_rate: st[1], mask_rate: st[2] },
            meta,
        })
    }
}

/// Build the RL training set: one tuple per consecutive trajectory pair,
/// with actions recovered against the surrogate's gradient field and rewards
/// taken as z-scored output differences. Gradients are computed once per
/// distinct dataset point, so the round-trip identity holds against
/// [`transition`] bit-for-bit up to one division/multiplication rounding.
pub fn build_transition_set(
    trajs: &[Trajectory],
    s: &Surrogate,
    ds: &OfflineDataset,
    bound: ActionBound,
    eps_g: f64,
) -> Result<TransitionSet> {
    if trajs.is_empty() {
        return Err(Error::InvalidArgument("no trajectories to convert".into()));
    }
    let d = ds.dim;
    if s.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: s.dim() });
    }

    // Gradient cache over the distinct source points (trajectories revisit
    // the same top slice constantly).
    let mut seen = vec![false; ds.len()];
    for traj in trajs {
        // The final point of a trajectory is only ever a next-state.
        for &i in &traj.indices[..traj.indices.len() - 1] {
            seen[i] = true;
        }
    }
    let unique: Vec<usize> = (0..ds.len()).filter(|&i| seen[i]).collect();
    let mut grad_of = vec![usize::MAX; ds.len()];
    let mut grads = vec![0.0; unique.len() * d];
    const CHUNK: usize = 512;
    for (chunk_idx, chunk) in unique.chunks(CHUNK).enumerate() {
        let mut xs = Vec::with_capacity(chunk.len() * d);
        for &i in chunk {
            xs.extend_from_slice(ds.input(i));
        }
        let g = s.grad_batch(&xs, chunk.len())?;
        let base = chunk_idx * CHUNK;
        grads[base * d..base * d + g.len()].copy_from_slice(&g);
        for (off, &i) in chunk.iter().enumerate() {
            grad_of[i] = base + off;
        }
    }

    let zy: Vec<f64> = ds.outputs.iter().map(|y| (y - s.out_mean) / s.out_std).collect();

    let n_tuples: usize = trajs.iter().map(|t| t.indices.len() - 1).sum();
    let mut set = TransitionSet {
        dim: d,
        states: Vec::with_capacity(n_tuples * d),
        actions: Vec::with_capacity(n_tuples * d),
        next_states: Vec::with_capacity(n_tuples * d),
        rewards: Vec::with_capacity(n_tuples),
        mask_counts: Vec::with_capacity(n_tuples),
        stats: TransitionStats::default(),
        meta: Vec::new(),
    };
    let mut abs_sum = 0.0;
    let mut clipped = 0usize;
    let mut masked = 0usize;
    for traj in trajs {
        for w in traj.indices.windows(2) {
            let (i, j) = (w[0], w[1]);
            let x = ds.input(i);
            let x_next = ds.input(j);
            let g = &grads[grad_of[i] * d..(grad_of[i] + 1) * d];
            let rec = recover_action(x, x_next, g, bound, eps_g)?;
            abs_sum += rec.alpha.iter().map(|a| a.abs()).sum::<f64>();
            clipped += rec.n_clipped;
            masked += rec.masked.iter().filter(|&&m| m).count();
            set.states.extend_from_slice(x);
            set.actions.extend_from_slice(&rec.alpha);
            set.next_states.extend_from_slice(x_next);
            set.rewards.push(zy[j] - zy[i]);
            set.mask_counts.push(rec.masked.iter().filter(|&&m| m).count() as u64);
        }
    }
    set.set_meta("a_max", &format!("{}", bound.a_max));
    set.set_meta("eps_grad", &format!("{eps_g}"));
    let entries = (n_tuples * d) as f64;
    set.stats = TransitionStats {
        mean_abs_action: abs_sum / entries,
        clip_rate: clipped as f64 / entries,
        mask_rate: masked as f64 / entries,
    };
    log::info!(
        "built {} transitions: mean|α|={:.4}, clip rate {:.1}%, mask rate {:.1}%",
        n_tuples,
        set.stats.mean_abs_action,
        100.0 * set.stats.clip_rate,
        100.0 * set.stats.mask_rate
    );
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surrogate::{train_surrogate, SurrogateConfig};
    use crate::tasks::{generate_offline_dataset, OfflineDataset, Task};

    fn small_dataset() -> OfflineDataset {
        generate_offline_dataset(Task::QuadraticBowl, 300, 50.0, 17).unwrap()
    }

    fn small_surrogate(ds: &OfflineDataset) -> Surrogate {
        let cfg = SurrogateConfig { hidden: vec![16, 16], epochs: 10, batch: 64, lr: 1e-3 };
        train_surrogate(ds, &cfg, 23).unwrap()
    }

    #[test]
    fn top_p_picks_the_largest_outputs() {
        let ds = OfflineDataset::from_raw(
            "quadratic-bowl",
            1,
            (0..10).map(|i| i as f64).collect(),
            vec![5.0, 1.0, 9.0, 3.0, 7.0, 2.0, 8.0, 0.0, 6.0, 4.0],
            0.0,
            9.0,
            0,
            100.0,
        )
        .unwrap();
        // 20% of 10 → the two largest outputs, 9.0 (idx 2) and 8.0 (idx 6).
        assert_eq!(select_top_p(&ds, 20.0).unwrap(), vec![2, 6]);
        assert_eq!(select_top_p(&ds, 100.0).unwrap(), (0..10).collect::<Vec<_>>());
        assert!(select_top_p(&ds, 5.0).is_err());
        assert!(select_top_p(&ds, 0.0).is_err());
    }

    #[test]
    fn top_p_count_and_monotonicity() {
        let ds = generate_offline_dataset(Task::NegAckley, 1000, 100.0, 3).unwrap();
        assert_eq!(select_top_p(&ds, 10.0).unwrap().len(), 100);
        let mut prev_min = f64::INFINITY;
        for p in [10.0, 20.0, 40.0, 80.0, 100.0] {
            let top = select_top_p(&ds, p).unwrap();
            let min_y = top.iter().map(|&i| ds.outputs[i]).fold(f64::INFINITY, f64::min);
            assert!(min_y <= prev_min, "min y must be non-increasing in p");
            prev_min = min_y;
        }
    }

    #[test]
    fn top_p_breaks_ties_by_index() {
        let ds = OfflineDataset::from_raw(
            "quadratic-bowl",
            1,
            vec![0.0, 1.0, 2.0, 3.0],
            vec![1.0, 5.0, 5.0, 5.0],
            0.0,
            5.0,
            0,
            100.0,
        )
        .unwrap();
        assert_eq!(select_top_p(&ds, 50.0).unwrap(), vec![1, 2]);
    }

    #[test]
    fn trajectories_are_distinct_within_and_deterministic() {
        let top: Vec<usize> = (0..60).map(|i| i * 3).collect();
        let trajs = synthesize_trajectories(&top, 25, 50, 5).unwrap();
        assert_eq!(trajs.len(), 25);
        for t in &trajs {
            assert_eq!(t.indices.len(), 50);
            let mut seen = std::collections::HashSet::new();
            for &i in &t.indices {
                assert!(top.contains(&i));
                assert!(seen.insert(i), "repeated index within a trajectory");
            }
        }
        let again = synthesize_trajectories(&top, 25, 50, 5).unwrap();
        assert_eq!(trajs, again);
        let other = synthesize_trajectories(&top, 25, 50, 6).unwrap();
        assert_ne!(trajs, other);
        // Distinct trajectories come from distinct streams.
        assert_ne!(trajs[0], trajs[1]);
    }

    #[test]
    fn trajectory_of_full_subset_is_a_permutation() {
        let top: Vec<usize> = (10..15).collect();
        let trajs = synthesize_trajectories(&top, 4, 5, 1).unwrap();
        for t in &trajs {
            let mut sorted = t.indices.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, top);
        }
    }

    #[test]
    fn infeasible_trajectory_length_errors() {
        let top: Vec<usize> = (0..10).collect();
        assert!(matches!(
            synthesize_trajectories(&top, 1, 11, 0),
            Err(Error::InfeasibleTrajectory { requested: 11, available: 10 })
        ));
        assert!(synthesize_trajectories(&top, 1, 1, 0).is_err());
    }

    #[test]
    fn monotonic_sort_orders_by_output() {
        let ds = small_dataset();
        let top = select_top_p(&ds, 80.0).unwrap();
        let mut trajs = synthesize_trajectories(&top, 5, 20, 9).unwrap();
        sort_trajectories_by_y(&mut trajs, &ds);
        for t in &trajs {
            for w in t.indices.windows(2) {
                assert!(ds.outputs[w[0]] <= ds.outputs[w[1]]);
            }
        }
    }

    #[test]
    fn recover_action_elementwise_with_mask() {
        let bound = ActionBound::new(2.0).unwrap();
        let rec =
            recover_action(&[1.0, 2.0], &[1.5, 2.0], &[0.5, 0.0], bound, 1e-8).unwrap();
        assert_eq!(rec.alpha, vec![1.0, 0.0]);
        assert_eq!(rec.masked, vec![false, true]);
        assert_eq!(rec.n_clipped, 0);
    }

    #[test]
    fn recover_action_zero_gradient_masks_everything() {
        let rec = recover_action(
            &[1.0, 2.0, 3.0],
            &[4.0, 5.0, 6.0],
            &[0.0, 0.0, 0.0],
            ActionBound::default(),
            1e-6,
        )
        .unwrap();
        assert_eq!(rec.alpha, vec![0.0; 3]);
        assert!(rec.masked.iter().all(|&m| m));
    }

    #[test]
    fn recover_action_clips_to_bound() {
        let bound = ActionBound::new(0.05).unwrap();
        let rec = recover_action(&[0.0], &[1.0], &[1.0], bound, 1e-8).unwrap();
        assert_eq!(rec.alpha, vec![0.05]);
        assert_eq!(rec.n_clipped, 1);
        let rec = recover_action(&[0.0], &[-1.0], &[1.0], bound, 1e-8).unwrap();
        assert_eq!(rec.alpha, vec![-0.05]);
    }

    #[test]
    fn transition_with_zero_action_is_identity_and_clamps() {
        let ds = small_dataset();
        let s = small_surrogate(&ds);
        let x = vec![0.5, -0.5, 1.0, -1.0, 0.0];
        let out = transition(&x, &[0.0; 5], &s, Task::QuadraticBowl.bounds()).unwrap();
        assert_eq!(out, x);

        // A huge action must land on the box boundary.
        let g = s.grad(&x).unwrap();
        let big: Vec<f64> = g.iter().map(|gj| if *gj != 0.0 { 1e9 } else { 0.0 }).collect();
        let out = transition(&x, &big, &s, (-3.0, 3.0)).unwrap();
        assert!(out.iter().all(|v| (-3.0..=3.0).contains(v)));
    }

    #[test]
    fn transition_set_counts_rewards_and_round_trips() {
        let ds = small_dataset();
        let s = small_surrogate(&ds);
        let top = select_top_p(&ds, 40.0).unwrap();
        let trajs = synthesize_trajectories(&top, 30, 20, 7).unwrap();
        let set = build_transition_set(&trajs, &s, &ds, ActionBound::default(), 1e-6).unwrap();
        assert_eq!(set.len(), 30 * 19);
        assert_eq!(set.dim, 5);

        // Round trip: transition(s, a) reproduces s' on unmasked, unclipped
        // dimensions (clipped ones fall short by construction).
        let bounds = Task::QuadraticBowl.bounds();
        for i in (0..set.len()).step_by(37) {
            let x = set.state(i);
            let a = set.action(i);
            let got = transition(x, a, &s, bounds).unwrap();
            let g = s.grad(x).unwrap();
            let want = set.next_state(i);
            for j in 0..5 {
                let unmasked = g[j].abs() > 1e-6;
                let unclipped = a[j].abs() < ActionBound::default().a_max;
                if unmasked && unclipped {
                    assert!(
                        (got[j] - want[j]).abs() < 1e-9,
                        "tuple {i} dim {j}: {} vs {}",
                        got[j],
                        want[j]
                    );
                }
            }
        }

        // Telescoping: per-trajectory reward sums collapse to the z-scored
        // endpoint difference.
        let zy = |i: usize| (ds.outputs[i] - s.out_mean) / s.out_std;
        let mut offset = 0;
        for traj in &trajs {
            let steps = traj.indices.len() - 1;
            let sum: f64 = set.rewards[offset..offset + steps].iter().sum();
            let want = zy(*traj.indices.last().unwrap()) - zy(traj.indices[0]);
            assert!((sum - want).abs() <= 1e-12, "telescoping off by {}", (sum - want).abs());
            offset += steps;
        }
    }

    #[test]
    fn equal_outputs_give_zero_reward() {
        let ds = OfflineDataset::from_raw(
            "quadratic-bowl",
            1,
            vec![0.0, 1.0, 2.0],
            vec![5.0, 5.0, 5.0],
            0.0,
            10.0,
            0,
            100.0,
        )
        .unwrap();
        let cfg = SurrogateConfig { hidden: vec![4], epochs: 1, batch: 8, lr: 1e-3 };
        let s = train_surrogate(&ds, &cfg, 0).unwrap();
        let trajs = vec![Trajectory { indices: vec![0, 1, 2] }];
        let set = build_transition_set(&trajs, &s, &ds, ActionBound::default(), 1e-6).unwrap();
        assert_eq!(set.rewards, vec![0.0, 0.0]);
    }

    #[test]
    fn build_rejects_empty_input() {
        let ds = small_dataset();
        let s = small_surrogate(&ds);
        assert!(build_transition_set(&[], &s, &ds, ActionBound::default(), 1e-6).is_err());
    }

    #[test]
    fn transition_set_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("transitions.bin");
        let ds = small_dataset();
        let s = small_surrogate(&ds);
        let top = select_top_p(&ds, 50.0).unwrap();
        let trajs = synthesize_trajectories(&top, 5, 10, 2).unwrap();
        let mut set = build_transition_set(&trajs, &s, &ds, ActionBound::default(), 1e-6).unwrap();
        set.set_meta("p", "50");
        set.set_meta("m", "5");
        set.save(&path).unwrap();
        let back = TransitionSet::load(&path).unwrap();
        assert_eq!(back, set);
        assert_eq!(back.get_meta("p"), Some("50"));
    }
}
