//! Shared fixtures for the criterion benchmarks: a dataset, a trained
//! surrogate, and a transition set at the default network width.

use pgs_core::agents::CqlConfig;
use pgs_core::config::OselConfig;
use pgs_core::surrogate::{train_surrogate, Surrogate, SurrogateConfig};
use pgs_core::tasks::{generate_offline_dataset, OfflineDataset, Task};
use pgs_core::trajectories::{
    build_transition_set, select_top_p, synthesize_trajectories, ActionBound, TransitionSet,
    DEFAULT_EPS_GRAD,
};

/// Offline dataset of the benchmark task, small enough to set up quickly.
pub fn dataset() -> OfflineDataset {
    let task = Task::by_name("quadratic-bowl").unwrap();
    generate_offline_dataset(task, 2000, 40.0, 0).unwrap()
}

/// Surrogate at the default width, trained just long enough to be realistic.
pub fn surrogate(ds: &OfflineDataset) -> Surrogate {
    let cfg = SurrogateConfig { epochs: 2, ..SurrogateConfig::default() };
    train_surrogate(ds, &cfg, 0).unwrap()
}

/// Transition set synthesized from the top half of the dataset.
pub fn transitions(ds: &OfflineDataset, sur: &Surrogate) -> TransitionSet {
    let top = select_top_p(ds, 50.0).unwrap();
    let trajs = synthesize_trajectories(&top, 64, 16, 0).unwrap();
    build_transition_set(&trajs, sur, ds, ActionBound::new(0.05).unwrap(), DEFAULT_EPS_GRAD)
        .unwrap()
}

/// One-epoch policy-training config so a bench iteration is a fixed, small
/// number of gradient steps.
pub fn one_step_cql() -> CqlConfig {
    CqlConfig { epochs: 1, steps_per_epoch: 1, checkpoint_interval: 1, ..CqlConfig::default() }
}

/// Encoder config small enough that setup stays in seconds.
pub fn small_osel() -> OselConfig {
    OselConfig {
        n_traj: 64,
        traj_len: 16,
        window: 8,
        latent_dim: 32,
        epochs: 3,
        ..OselConfig::default()
    }
}
