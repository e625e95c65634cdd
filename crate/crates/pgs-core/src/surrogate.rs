//! The learned objective model: an MLP fit by MSE regression to the
//! z-scored offline dataset. Values and gradients are exposed in raw task
//! coordinates; the gradient chains through the normalization, so
//! `d(raw)/d(x_j) = (out_std / in_std_j) · d(net)/d(z_j)`.

use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::numerics::{train_step, AdamState, Checkpoint, Mlp};
use crate::seed::{self, tags};
use crate::tasks::OfflineDataset;

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateConfig {
    /// Hidden layer widths, input to output.
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
}

impl Default for SurrogateConfig {
    fn default() -> SurrogateConfig {
        SurrogateConfig { hidden: vec![256, 256], epochs: 50, batch: 128, lr: 3e-4 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Surrogate {
    /// Operates in z-scored coordinates: dim → hidden… → 1.
    pub net: Mlp,
    pub in_mean: Vec<f64>,
    pub in_std: Vec<f64>,
    pub out_mean: f64,
    pub out_std: f64,
    /// Mean training MSE per epoch, in normalized space.
    pub training_log: Vec<f64>,
}

/// Fit a surrogate to the dataset: z-score inputs and outputs, then train
/// with shuffled mini-batches. Deterministic per seed.
pub fn train_surrogate(
    ds: &OfflineDataset,
    cfg: &SurrogateConfig,
    seed: u64,
) -> Result<Surrogate> {
    if cfg.batch == 0 || cfg.epochs == 0 {
        return Err(Error::InvalidConfig("surrogate batch and epochs must be positive".into()));
    }
    if cfg.hidden.is_empty() {
        return Err(Error::InvalidConfig("surrogate needs at least one hidden layer".into()));
    }
    let d = ds.dim;
    let n = ds.len();
    let mut dims = Vec::with_capacity(cfg.hidden.len() + 2);
    dims.push(d);
    dims.extend_from_slice(&cfg.hidden);
    dims.push(1);

    let stage = seed::split_seed(seed, tags::SURROGATE);
    let mut net = Mlp::init(&dims, stage)?;
    let mut opt = AdamState::new(&net, cfg.lr);
    let mut shuffle_rng = seed::rng_for(seed, tags::SURROGATE);

    // Pre-normalize the whole training set once.
    let mut zx = vec![0.0; n * d];
    for i in 0..n {
        for j in 0..d {
            zx[i * d + j] = (ds.inputs[i * d + j] - ds.in_mean[j]) / ds.in_std[j];
        }
    }
    let zy: Vec<f64> = ds.outputs.iter().map(|y| (y - ds.out_mean) / ds.out_std).collect();

    let mut order: Vec<usize> = (0..n).collect();
    let mut training_log = Vec::with_capacity(cfg.epochs);
    let mut batch_x = Vec::with_capacity(cfg.batch * d);
    let mut batch_y = Vec::with_capacity(cfg.batch);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_sse = 0.0;
        for chunk in order.chunks(cfg.batch) {
            batch_x.clear();
            batch_y.clear();
            for &i in chunk {
                batch_x.extend_from_slice(&zx[i * d..(i + 1) * d]);
                batch_y.push(zy[i]);
            }
            let loss = train_step(&mut net, &mut opt, &batch_x, &batch_y).map_err(|e| {
                log::warn!(
                    "surrogate training aborted at epoch {epoch} after {} logged epochs",
                    training_log.len()
                );
                e.in_stage("surrogate-training")
            })?;
            epoch_sse += loss * chunk.len() as f64;
        }
        training_log.push(epoch_sse / n as f64);
    }

    Ok(Surrogate {
        net,
        in_mean: ds.in_mean.clone(),
        in_std: ds.in_std.clone(),
        out_mean: ds.out_mean,
        out_std: ds.out_std,
        training_log,
    })
}

impl Surrogate {
    pub fn dim(&self) -> usize {
        self.in_mean.len()
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        Ok(())
    }

    fn normalize_into(&self, x_raw: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for ((x, m), s) in x_raw.iter().zip(&self.in_mean).zip(&self.in_std) {
            out.push((x - m) / s);
        }
    }

    /// Model prediction in raw coordinates.
    pub fn value(&self, x_raw: &[f64]) -> Result<f64> {
        self.check_dim(x_raw)?;
        let mut z = Vec::new();
        self.normalize_into(x_raw, &mut z);
        Ok(self.out_mean + self.out_std * self.net.forward_scalar(&z)?)
    }

    /// Gradient of the raw-coordinate prediction at `x_raw`.
    pub fn grad(&self, x_raw: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x_raw)?;
        let mut z = Vec::new();
        self.normalize_into(x_raw, &mut z);
        let mut g = self.net.input_gradient(&z)?;
        for (gj, s) in g.iter_mut().zip(&self.in_std) {
            *gj *= self.out_std / s;
        }
        Ok(g)
    }

    /// Batched raw-coordinate gradients: `xs` packs `batch` rows, the result
    /// packs one gradient row per input.
    pub fn grad_batch(&self, xs_raw: &[f64], batch: usize) -> Result<Vec<f64>> {
        let d = self.dim();
        if xs_raw.len() != batch * d {
            return Err(Error::DimensionMismatch { expected: batch * d, got: xs_raw.len() });
        }
        let mut z = vec![0.0; batch * d];
        for i in 0..batch {
            for j in 0..d {
                z[i * d + j] = (xs_raw[i * d + j] - self.in_mean[j]) / self.in_std[j];
            }
        }
        let mut g = self.net.input_gradient_batch(&z, batch)?;
        for i in 0..batch {
            for j in 0..d {
                g[i * d + j] *= self.out_std / self.in_std[j];
            }
        }
        Ok(g)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut ck = Checkpoint::new();
        ck.push_net("net", &self.net);
        ck.push_f64s("in_mean", &self.in_mean);
        ck.push_f64s("in_std", &self.in_std);
        ck.push_f64s("out_stats", &[self.out_mean, self.out_std]);
        ck.push_f64s("training_log", &self.training_log);
        ck.save(path)
    }

    pub fn load(path: &Path) -> Result<Surrogate> {
        let ck = Checkpoint::load(path)?;
        let net = ck.net("net")?.clone();
        let in_mean = ck.f64s("in_mean")?.to_vec();
        let in_std = ck.f64s("in_std")?.to_vec();
        let out = ck.f64s("out_stats")?;
        if out.len() != 2 {
            return Err(Error::Format("surrogate checkpoint: bad out_stats".into()));
        }
        if in_mean.len() != net.input_dim() || in_std.len() != net.input_dim() {
            return Err(Error::Format("surrogate checkpoint: stat length mismatch".into()));
        }
        Ok(Surrogate {
            net,
            in_mean,
            in_std,
            out_mean: out[0],
            out_std: out[1],
            training_log: ck.f64s("training_log")?.to_vec(),
        })
    }
}
