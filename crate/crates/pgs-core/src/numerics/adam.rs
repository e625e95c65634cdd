//! Adam optimizer with state shaped like an [`Mlp`], plus a scalar variant
//! for single learnable parameters such as an entropy temperature.

use super::mlp::{Mlp, MlpGrads};

#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m_w: Vec<Vec<f64>>,
    v_w: Vec<Vec<f64>>,
    m_b: Vec<Vec<f64>>,
    v_b: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(net: &Mlp, lr: f64) -> AdamState {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m_w: (0..net.n_layers()).map(|k| vec![0.0; net.weights(k).len()]).collect(),
            v_w: (0..net.n_layers()).map(|k| vec![0.0; net.weights(k).len()]).collect(),
            m_b: (0..net.n_layers()).map(|k| vec![0.0; net.biases(k).len()]).collect(),
            v_b: (0..net.n_layers()).map(|k| vec![0.0; net.biases(k).len()]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One Adam update in place. Gradient moments use bias correction
    /// `m/(1-b1^t)` and `v/(1-b2^t)` with `t` counted from 1.
    pub fn apply(&mut self, net: &mut Mlp, grads: &MlpGrads) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for k in 0..net.n_layers() {
            update_slice(
                net.weights_mut(k),
                &grads.d_weights[k],
                &mut self.m_w[k],
                &mut self.v_w[k],
                self.lr,
                self.beta1,
                self.beta2,
                self.eps,
                c1,
                c2,
            );
            update_slice(
                net.biases_mut(k),
                &grads.d_biases[k],
                &mut self.m_b[k],
                &mut self.v_b[k],
                self.lr,
                self.beta1,
                self.beta2,
                self.eps,
                c1,
                c2,
            );
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn update_slice(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    c1: f64,
    c2: f64,
) {
    debug_assert_eq!(params.len(), grads.len());
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Adam for one scalar parameter.
#[derive(Debug, Clone)]
pub struct ScalarAdam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: f64,
    v: f64,
}

impl ScalarAdam {
    pub fn new(lr: f64) -> ScalarAdam {
        ScalarAdam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: 0.0, v: 0.0 }
    }

    pub fn apply(&mut self, param: &mut f64, grad: f64) {
        self.step += 1;
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad;
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad;
        let m_hat = self.m / (1.0 - self.beta1.powi(self.step as i32));
        let v_hat = self.v / (1.0 - self.beta2.powi(self.step as i32));
        *param -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
    }
}
