//! Fully-connected ReLU network with a linear output layer.
//!
//! Weights for layer `k` are stored row-major with shape
//! `(dims[k+1], dims[k])`; biases have length `dims[k+1]`. Hidden layers
//! apply ReLU, the final layer is affine. The ReLU subgradient at exactly
//! zero is taken as zero, which the backward pass detects from the stored
//! post-activations (`act > 0` iff the unit was on).

use rand::Rng;

use super::gemm;
use crate::error::{Error, Result};
use crate::seed::{self, tags};

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

/// Post-activations of every layer for one batched forward pass.
/// `acts[k]` has shape `(batch, dims[k+1])`; the last entry is the output.
#[derive(Debug, Clone)]
pub struct BatchActivations {
    pub batch: usize,
    pub acts: Vec<Vec<f64>>,
}

impl BatchActivations {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("network has at least one layer")
    }
}

/// Gradients produced by a backward pass, shaped like the network.
/// `d_inputs` is empty unless input gradients were requested.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub d_weights: Vec<Vec<f64>>,
    pub d_biases: Vec<Vec<f64>>,
    pub d_inputs: Vec<f64>,
}

impl MlpGrads {
    pub fn zeros_like(net: &Mlp) -> MlpGrads {
        MlpGrads {
            d_weights: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            d_biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            d_inputs: Vec::new(),
        }
    }

    /// Accumulate `other` into `self` (parameter gradients only).
    pub fn add_params(&mut self, other: &MlpGrads) {
        for (dst, src) in self.d_weights.iter_mut().zip(&other.d_weights) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
        for (dst, src) in self.d_biases.iter_mut().zip(&other.d_biases) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    pub fn scale_params(&mut self, c: f64) {
        for w in &mut self.d_weights {
            for v in w {
                *v *= c;
            }
        }
        for b in &mut self.d_biases {
            for v in b {
                *v *= c;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.d_weights.iter().chain(&self.d_biases).all(|v| v.iter().all(|x| x.is_finite()))
            && self.d_inputs.iter().all(|x| x.is_finite())
    }
}

impl Mlp {
    /// Glorot-uniform weights (±sqrt(6/(fan_in+fan_out))), zero biases.
    /// Weights are drawn layer by layer in row-major order from a stream
    /// derived from `seed`, so the same seed always builds the same network.
    pub fn init(dims: &[usize], seed: u64) -> Result<Mlp> {
        Self::validate_dims(dims)?;
        let mut rng = seed::rng_for(seed, tags::MLP_INIT);
        let mut weights = Vec::with_capacity(dims.len() - 1);
        let mut biases = Vec::with_capacity(dims.len() - 1);
        for k in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[k], dims[k + 1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w: Vec<f64> =
                (0..fan_in * fan_out).map(|_| (2.0 * rng.gen::<f64>() - 1.0) * bound).collect();
            weights.push(w);
            biases.push(vec![0.0; fan_out]);
        }
        Ok(Mlp { dims: dims.to_vec(), weights, biases })
    }

    /// All-zero parameters; useful for targets and tests.
    pub fn zeros(dims: &[usize]) -> Result<Mlp> {
        Self::validate_dims(dims)?;
        let weights = (0..dims.len() - 1).map(|k| vec![0.0; dims[k] * dims[k + 1]]).collect();
        let biases = (0..dims.len() - 1).map(|k| vec![0.0; dims[k + 1]]).collect();
        Ok(Mlp { dims: dims.to_vec(), weights, biases })
    }

    pub(crate) fn from_parts(dims: Vec<usize>, weights: Vec<Vec<f64>>, biases: Vec<Vec<f64>>) -> Result<Mlp> {
        Self::validate_dims(&dims)?;
        if weights.len() != dims.len() - 1 || biases.len() != dims.len() - 1 {
            return Err(Error::InvalidArchitecture("layer count mismatch".into()));
        }
        for k in 0..dims.len() - 1 {
            if weights[k].len() != dims[k] * dims[k + 1] || biases[k].len() != dims[k + 1] {
                return Err(Error::InvalidArchitecture(format!("layer {k} shape mismatch")));
            }
        }
        Ok(Mlp { dims, weights, biases })
    }

    fn validate_dims(dims: &[usize]) -> Result<()> {
        if dims.len() < 2 {
            return Err(Error::InvalidArchitecture(format!(
                "need at least input and output dims, got {dims:?}"
            )));
        }
        if dims.contains(&0) {
            return Err(Error::InvalidArchitecture(format!("zero-width layer in {dims:?}")));
        }
        Ok(())
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn n_params(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>() + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    pub fn weights(&self, layer: usize) -> &[f64] {
        &self.weights[layer]
    }

    pub fn biases(&self, layer: usize) -> &[f64] {
        &self.biases[layer]
    }

    pub fn weights_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.weights[layer]
    }

    pub fn biases_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.biases[layer]
    }

    /// Forward pass for a single input.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), got: x.len() });
        }
        let acts = self.forward_batch(x, 1);
        Ok(acts.acts.into_iter().last().unwrap())
    }

    /// Scalar-output convenience.
    pub fn forward_scalar(&self, x: &[f64]) -> Result<f64> {
        let out = self.forward(x)?;
        if out.len() != 1 {
            return Err(Error::InvalidArchitecture(format!(
                "expected scalar output, network emits {}",
                out.len()
            )));
        }
        Ok(out[0])
    }

    /// Batched forward pass over `batch` rows packed in `xs`.
    /// Panics on shape misuse: callers inside this crate always size buffers.
    pub fn forward_batch(&self, xs: &[f64], batch: usize) -> BatchActivations {
        assert_eq!(xs.len(), batch * self.input_dim(), "input buffer shape");
        let n_layers = self.n_layers();
        let mut acts = Vec::with_capacity(n_layers);
        let mut cur: &[f64] = xs;
        for k in 0..n_layers {
            let out_dim = self.dims[k + 1];
            let in_dim = self.dims[k];
            // Start from the broadcast bias, then add x · W^T.
            let mut out = Vec::with_capacity(batch * out_dim);
            for _ in 0..batch {
                out.extend_from_slice(&self.biases[k]);
            }
            gemm::matmul_x_wt(cur, batch, &self.weights[k], out_dim, in_dim, &mut out);
            if k + 1 < n_layers {
                for v in &mut out {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            acts.push(out);
            cur = acts.last().unwrap();
        }
        BatchActivations { batch, acts }
    }

    /// Backward pass from `d_out` (gradient of a scalar loss w.r.t. the
    /// network output, shape `(batch, output_dim)`). Parameter gradients are
    /// summed over the batch. Input gradients are returned only if requested.
    pub fn backward_batch(
        &self,
        xs: &[f64],
        acts: &BatchActivations,
        d_out: &[f64],
        want_params: bool,
        want_inputs: bool,
    ) -> MlpGrads {
        let batch = acts.batch;
        assert_eq!(xs.len(), batch * self.input_dim(), "input buffer shape");
        assert_eq!(d_out.len(), batch * self.output_dim(), "output gradient shape");
        let n_layers = self.n_layers();

        let mut grads = if want_params {
            MlpGrads::zeros_like(self)
        } else {
            MlpGrads { d_weights: Vec::new(), d_biases: Vec::new(), d_inputs: Vec::new() }
        };

        let mut dz = d_out.to_vec();
        for k in (0..n_layers).rev() {
            let out_dim = self.dims[k + 1];
            let in_dim = self.dims[k];
            if k + 1 < n_layers {
                // ReLU: units that were clamped (act == 0) pass no gradient.
                for (d, &a) in dz.iter_mut().zip(&acts.acts[k]) {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let layer_input: &[f64] = if k == 0 { xs } else { &acts.acts[k - 1] };
            if want_params {
                gemm::matmul_dzt_x(&dz, batch, out_dim, layer_input, in_dim, &mut grads.d_weights[k]);
                let db = &mut grads.d_biases[k];
                for b in 0..batch {
                    for o in 0..out_dim {
                        db[o] += dz[b * out_dim + o];
                    }
                }
            }
            if k > 0 {
                let mut d_prev = vec![0.0; batch * in_dim];
                gemm::matmul_dz_w(&dz, batch, &self.weights[k], out_dim, in_dim, &mut d_prev);
                dz = d_prev;
            } else if want_inputs {
                let mut d_in = vec![0.0; batch * in_dim];
                gemm::matmul_dz_w(&dz, batch, &self.weights[k], out_dim, in_dim, &mut d_in);
                grads.d_inputs = d_in;
            }
        }
        grads
    }

    /// Gradient of a scalar-output network w.r.t. its input.
    pub fn input_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        if self.output_dim() != 1 {
            return Err(Error::InvalidArchitecture(format!(
                "input_gradient needs a scalar output, network emits {}",
                self.output_dim()
            )));
        }
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), got: x.len() });
        }
        let acts = self.forward_batch(x, 1);
        let grads = self.backward_batch(x, &acts, &[1.0], false, true);
        Ok(grads.d_inputs)
    }

    /// Batched input gradients for a scalar-output network: one row per input.
    pub fn input_gradient_batch(&self, xs: &[f64], batch: usize) -> Result<Vec<f64>> {
        if self.output_dim() != 1 {
            return Err(Error::InvalidArchitecture(format!(
                "input_gradient needs a scalar output, network emits {}",
                self.output_dim()
            )));
        }
        if xs.len() != batch * self.input_dim() {
            return Err(Error::DimensionMismatch { expected: batch * self.input_dim(), got: xs.len() });
        }
        let acts = self.forward_batch(xs, batch);
        let grads = self.backward_batch(xs, &acts, &vec![1.0; batch], false, true);
        Ok(grads.d_inputs)
    }

    /// Smallest |pre-activation| over all hidden units for input `x`.
    /// Finite-difference probes are only trustworthy when this clears the
    /// probe step, since crossing a ReLU kink changes the local slope.
    pub fn min_kink_distance(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), got: x.len() });
        }
        let n_layers = self.n_layers();
        let mut cur = x.to_vec();
        let mut min_abs = f64::INFINITY;
        for k in 0..n_layers {
            let out_dim = self.dims[k + 1];
            let mut out = self.biases[k].clone();
            gemm::matmul_x_wt(&cur, 1, &self.weights[k], out_dim, self.dims[k], &mut out);
            if k + 1 < n_layers {
                for v in &mut out {
                    min_abs = min_abs.min(v.abs());
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            cur = out;
        }
        Ok(min_abs)
    }
}
