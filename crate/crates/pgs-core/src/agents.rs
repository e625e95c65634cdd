//! Offline policy learning on the synthesized transition set: soft
//! actor-critic with twin critics, automatic entropy temperature, and a
//! conservative critic regularizer that penalizes out-of-distribution
//! actions. Plain SAC is the same trainer with the conservative weight
//! switched off — bit for bit.
//!
//! Internals operate on *unit* actions â ∈ (−1, 1) (the tanh output); the
//! raw step-size vector is `a_max · â` at the public boundary. The policy
//! log-density is taken over unit actions (squash correction included, the
//! constant a_max rescale excluded, as is standard), and the entropy target
//! is −d.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::{AdamState, Checkpoint, Mlp, MlpGrads, ScalarAdam};
use crate::seed::{self, tags};
use crate::trajectories::{ActionBound, TransitionSet};

const LOG_STD_MIN: f64 = -5.0;
const LOG_STD_MAX: f64 = 2.0;
const LN_2PI: f64 = 1.8378770664093453;
const LN_4: f64 = 1.3862943611198906;

/// Actor-critic ensemble. States are raw task coordinates; critics consume
/// `concat(state, unit action)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub actor: Mlp,
    pub q1: Mlp,
    pub q2: Mlp,
    pub q1_target: Mlp,
    pub q2_target: Mlp,
    pub log_temp: f64,
    pub bound: ActionBound,
    pub gamma: f64,
    pub dim: usize,
    pub config_hash: String,
}

impl Agent {
    /// Fresh agent: actor d → hidden… → 2d (mean and log-std heads), twin
    /// critics 2d → hidden… → 1, targets initialized as critic copies.
    pub fn new(
        dim: usize,
        hidden: &[usize],
        bound: ActionBound,
        gamma: f64,
        seed: u64,
    ) -> Result<Agent> {
        if dim == 0 {
            return Err(Error::InvalidArchitecture("agent needs a positive state dim".into()));
        }
        let stage = seed::split_seed(seed, tags::AGENT);
        let mut actor_dims = vec![dim];
        actor_dims.extend_from_slice(hidden);
        actor_dims.push(2 * dim);
        let mut critic_dims = vec![2 * dim];
        critic_dims.extend_from_slice(hidden);
        critic_dims.push(1);
        let actor = Mlp::init(&actor_dims, seed::split_seed(stage, 1))?;
        let q1 = Mlp::init(&critic_dims, seed::split_seed(stage, 2))?;
        let q2 = Mlp::init(&critic_dims, seed::split_seed(stage, 3))?;
        Ok(Agent {
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            actor,
            q1,
            q2,
            log_temp: 0.0,
            bound,
            gamma,
            dim,
            config_hash: String::new(),
        })
    }

    pub fn temperature(&self) -> f64 {
        self.log_temp.exp()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut ck = Checkpoint::new();
        ck.push_net("actor", &self.actor);
        ck.push_net("q1", &self.q1);
        ck.push_net("q2", &self.q2);
        ck.push_net("q1_target", &self.q1_target);
        ck.push_net("q2_target", &self.q2_target);
        ck.push_f64s(
            "scalars",
            &[self.log_temp, self.bound.a_max, self.gamma, self.dim as f64],
        );
        ck.push_text("config_hash", &self.config_hash);
        ck.save(path)
    }

    pub fn load(path: &Path) -> Result<Agent> {
        let ck = Checkpoint::load(path)?;
        let scalars = ck.f64s("scalars")?;
        if scalars.len() != 4 {
            return Err(Error::Format("agent checkpoint: bad scalars section".into()));
        }
        let agent = Agent {
            actor: ck.net("actor")?.clone(),
            q1: ck.net("q1")?.clone(),
            q2: ck.net("q2")?.clone(),
            q1_target: ck.net("q1_target")?.clone(),
            q2_target: ck.net("q2_target")?.clone(),
            log_temp: scalars[0],
            bound: ActionBound::new(scalars[1])?,
            gamma: scalars[2],
            dim: scalars[3] as usize,
            config_hash: ck.text("config_hash")?.to_string(),
        };
        if agent.actor.input_dim() != agent.dim || agent.q1.input_dim() != 2 * agent.dim {
            return Err(Error::Format("agent checkpoint: dims disagree with scalars".into()));
        }
        Ok(agent)
    }
}

/// Step-size action for one state. Deterministic mode returns
/// `a_max·tanh(μ)` and leaves the RNG untouched; stochastic mode samples the
/// squashed Gaussian. Either way every component stays within ±a_max.
pub fn policy_act(
    agent: &Agent,
    x: &[f64],
    deterministic: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    if x.len() != agent.dim {
        return Err(Error::DimensionMismatch { expected: agent.dim, got: x.len() });
    }
    let out = agent.actor.forward(x)?;
    let d = agent.dim;
    let mut alpha = Vec::with_capacity(d);
    for j in 0..d {
        let mu = out[j];
        let u = if deterministic {
            mu
        } else {
            let std = out[d + j].clamp(LOG_STD_MIN, LOG_STD_MAX).exp();
            let xi: f64 = rng.sample(StandardNormal);
            mu + std * xi
        };
        alpha.push(agent.bound.a_max * u.tanh());
    }
    Ok(alpha)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CqlConfig {
    pub epochs: usize,
    /// Gradient steps per epoch. An "epoch" is a fixed step budget, not a
    /// full pass: transition sets are large and heavily redundant.
    pub steps_per_epoch: usize,
    pub batch: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub gamma: f64,
    /// Polyak mixing rate for target critics.
    pub tau: f64,
    /// Weight on the conservative regularizer; 0 gives plain SAC.
    pub w_cons: f64,
    /// Sampled actions per state for the conservative term (half uniform in
    /// the action box, half from the current policy). Must be even.
    pub m_actions: usize,
    pub hidden: Vec<usize>,
    pub checkpoint_interval: usize,
}

impl Default for CqlConfig {
    fn default() -> CqlConfig {
        CqlConfig {
            epochs: 100,
            steps_per_epoch: 25,
            batch: 256,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            gamma: 0.99,
            tau: 0.005,
            w_cons: 5.0,
            m_actions: 10,
            hidden: vec![256, 256],
            checkpoint_interval: 50,
        }
    }
}

impl CqlConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.steps_per_epoch == 0 || self.batch == 0 {
            return Err(Error::InvalidConfig("epochs, steps_per_epoch, batch must be positive".into()));
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return Err(Error::InvalidConfig("learning rates must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::InvalidConfig(format!("gamma must lie in [0, 1), got {}", self.gamma)));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::InvalidConfig(format!("tau must lie in (0, 1], got {}", self.tau)));
        }
        if self.w_cons < 0.0 {
            return Err(Error::InvalidConfig("conservative weight must be ≥ 0".into()));
        }
        if self.m_actions < 2 || !self.m_actions.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "m_actions must be even and ≥ 2, got {}",
                self.m_actions
            )));
        }
        if self.hidden.is_empty() {
            return Err(Error::InvalidConfig("agent needs at least one hidden layer".into()));
        }
        if self.checkpoint_interval == 0 {
            return Err(Error::InvalidConfig("checkpoint interval must be positive".into()));
        }
        if !self.epochs.is_multiple_of(self.checkpoint_interval) {
            log::warn!(
                "checkpoint interval {} does not divide epochs {}; the final agent is not a grid checkpoint",
                self.checkpoint_interval,
                self.epochs
            );
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!(
            "epochs={};steps={};batch={};alr={};clr={};gamma={};tau={};w={};m={};hidden={:?};ck={}",
            self.epochs,
            self.steps_per_epoch,
            self.batch,
            self.actor_lr,
            self.critic_lr,
            self.gamma,
            self.tau,
            self.w_cons,
            self.m_actions,
            self.hidden,
            self.checkpoint_interval
        ));
        hex(&h.finalize())
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Per-batch critic diagnostics: squared TD error and conservative gap
/// (logsumexp over sampled actions minus mean data-action Q), per critic.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CriticDiagnostics {
    pub td1: f64,
    pub td2: f64,
    pub gap1: f64,
    pub gap2: f64,
}

/// Mean diagnostics over one epoch of training steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochDiagnostics {
    pub epoch: usize,
    pub td1: f64,
    pub td2: f64,
    pub gap1: f64,
    pub gap2: f64,
    pub actor_loss: f64,
    pub temperature: f64,
}

/// Training product: the final agent, the periodic checkpoints (epoch,
/// snapshot), per-epoch diagnostics, and — if training hit a numeric
/// failure — the abort reason, with `agent` rolled back to the last good
/// checkpoint.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub agent: Agent,
    pub checkpoints: Vec<(usize, Agent)>,
    pub diagnostics: Vec<EpochDiagnostics>,
    pub aborted: Option<String>,
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m.is_infinite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Mean and log-std heads the actor produced for a batch, with the log-std
/// clamp applied (and remembered, for the backward mask).
struct ActorHeads {
    mu: Vec<f64>,
    log_std: Vec<f64>,
    std: Vec<f64>,
    clamped: Vec<bool>,
    batch: usize,
}

fn split_heads(out: &[f64], batch: usize, d: usize) -> ActorHeads {
    let mut heads = ActorHeads {
        mu: Vec::with_capacity(batch * d),
        log_std: Vec::with_capacity(batch * d),
        std: Vec::with_capacity(batch * d),
        clamped: Vec::with_capacity(batch * d),
        batch,
    };
    for b in 0..batch {
        for j in 0..d {
            let mu = out[b * 2 * d + j];
            let raw = out[b * 2 * d + d + j];
            let ls = raw.clamp(LOG_STD_MIN, LOG_STD_MAX);
            heads.mu.push(mu);
            heads.log_std.push(ls);
            heads.std.push(ls.exp());
            heads.clamped.push(ls != raw);
        }
    }
    heads
}

/// One reparameterized sample per (row, dim): `u = μ + σξ`, `â = tanh u`,
/// with the summed per-row log-density of â.
struct SquashedSample {
    xi: Vec<f64>,
    u: Vec<f64>,
    a: Vec<f64>,
    logp: Vec<f64>,
}

fn sample_squashed(heads: &ActorHeads, d: usize, rng: &mut ChaCha8Rng) -> SquashedSample {
    let n = heads.batch * d;
    let mut s = SquashedSample {
        xi: Vec::with_capacity(n),
        u: Vec::with_capacity(n),
        a: Vec::with_capacity(n),
        logp: vec![0.0; heads.batch],
    };
    for b in 0..heads.batch {
        for j in 0..d {
            let i = b * d + j;
            let xi: f64 = rng.sample(StandardNormal);
            let u = heads.mu[i] + heads.std[i] * xi;
            let a = u.tanh();
            s.xi.push(xi);
            s.u.push(u);
            s.a.push(a);
            // log N(u; μ, σ) − log(1 − tanh²u), the latter via the stable
            // identity log(1−tanh²u) = ln4 − 2u − 2·softplus(−2u).
            s.logp[b] += -0.5 * LN_2PI
                - heads.log_std[i]
                - 0.5 * xi * xi
                - (LN_4 - 2.0 * u - 2.0 * softplus(-2.0 * u));
        }
    }
    s
}

fn concat_rows(a: &[f64], b: &[f64], batch: usize, da: usize, db: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(batch * (da + db));
    for i in 0..batch {
        out.extend_from_slice(&a[i * da..(i + 1) * da]);
        out.extend_from_slice(&b[i * db..(i + 1) * db]);
    }
    out
}

struct CriticPass {
    loss: f64,
    diag: CriticDiagnostics,
    grads: Option<(MlpGrads, MlpGrads)>,
}

/// Shared critic computation for loss reporting and training. RNG
/// consumption order is part of the contract: (1) next-action noise at s',
/// then — only when w_cons ≠ 0 — (2) uniform box actions and (3) policy
/// noise at s. With w_cons = 0 the conservative block is skipped entirely,
/// randomness included, which is what makes the SAC path identical.
fn critic_pass(
    agent: &Agent,
    cfg: &CqlConfig,
    set: &TransitionSet,
    idx: &[usize],
    rng: &mut ChaCha8Rng,
    want_grads: bool,
) -> Result<CriticPass> {
    let b_n = idx.len();
    if b_n == 0 {
        return Err(Error::InvalidArgument("empty transition batch".into()));
    }
    let d = agent.dim;
    if set.dim != d {
        return Err(Error::DimensionMismatch { expected: d, got: set.dim });
    }
    let a_max = agent.bound.a_max;

    let mut s = Vec::with_capacity(b_n * d);
    let mut a_unit = Vec::with_capacity(b_n * d);
    let mut s2 = Vec::with_capacity(b_n * d);
    let mut r = Vec::with_capacity(b_n);
    for &i in idx {
        s.extend_from_slice(set.state(i));
        for v in set.action(i) {
            a_unit.push(v / a_max);
        }
        s2.extend_from_slice(set.next_state(i));
        r.push(set.rewards[i]);
    }

    // (1) Bootstrap target from the current policy at s'.
    let heads2 = split_heads(agent.actor.forward_batch(&s2, b_n).output(), b_n, d);
    let next = sample_squashed(&heads2, d, rng);
    let cin2 = concat_rows(&s2, &next.a, b_n, d, d);
    let t1 = agent.q1_target.forward_batch(&cin2, b_n);
    let t2 = agent.q2_target.forward_batch(&cin2, b_n);
    let temp = agent.temperature();
    let y: Vec<f64> = (0..b_n)
        .map(|b| {
            r[b] + agent.gamma * (t1.output()[b].min(t2.output()[b]) - temp * next.logp[b])
        })
        .collect();

    // Data-action Q values.
    let cin = concat_rows(&s, &a_unit, b_n, d, d);
    let acts1 = agent.q1.forward_batch(&cin, b_n);
    let acts2 = agent.q2.forward_batch(&cin, b_n);
    let q1d = acts1.output();
    let q2d = acts2.output();
    let inv_b = 1.0 / b_n as f64;
    let td1 = q1d.iter().zip(&y).map(|(q, y)| (q - y) * (q - y)).sum::<f64>() * inv_b;
    let td2 = q2d.iter().zip(&y).map(|(q, y)| (q - y) * (q - y)).sum::<f64>() * inv_b;

    // (2)+(3) Conservative term over sampled actions.
    let m = cfg.m_actions;
    let mut gap1 = 0.0;
    let mut gap2 = 0.0;
    let mut sampled: Option<(Vec<f64>, crate::numerics::BatchActivations, crate::numerics::BatchActivations)> =
        None;
    let mut soft1 = Vec::new();
    let mut soft2 = Vec::new();
    if cfg.w_cons != 0.0 {
        let half = m / 2;
        let mut uniform = Vec::with_capacity(b_n * half * d);
        for _ in 0..b_n * half * d {
            uniform.push(2.0 * rng.gen::<f64>() - 1.0);
        }
        let heads1 = split_heads(agent.actor.forward_batch(&s, b_n).output(), b_n, d);
        let mut pol = Vec::with_capacity(b_n * half * d);
        for b in 0..b_n {
            for _ in 0..half {
                for j in 0..d {
                    let i = b * d + j;
                    let xi: f64 = rng.sample(StandardNormal);
                    pol.push((heads1.mu[i] + heads1.std[i] * xi).tanh());
                }
            }
        }
        let mut cin_samp = Vec::with_capacity(b_n * m * 2 * d);
        for b in 0..b_n {
            for k in 0..m {
                cin_samp.extend_from_slice(&s[b * d..(b + 1) * d]);
                let src = if k < half {
                    &uniform[(b * half + k) * d..(b * half + k + 1) * d]
                } else {
                    &pol[(b * half + k - half) * d..(b * half + k - half + 1) * d]
                };
                cin_samp.extend_from_slice(src);
            }
        }
        let acts_s1 = agent.q1.forward_batch(&cin_samp, b_n * m);
        let acts_s2 = agent.q2.forward_batch(&cin_samp, b_n * m);
        soft1 = vec![0.0; b_n * m];
        soft2 = vec![0.0; b_n * m];
        for b in 0..b_n {
            let row1 = &acts_s1.output()[b * m..(b + 1) * m];
            let row2 = &acts_s2.output()[b * m..(b + 1) * m];
            let lse1 = logsumexp(row1);
            let lse2 = logsumexp(row2);
            gap1 += (lse1 - q1d[b]) * inv_b;
            gap2 += (lse2 - q2d[b]) * inv_b;
            for k in 0..m {
                soft1[b * m + k] = (row1[k] - lse1).exp();
                soft2[b * m + k] = (row2[k] - lse2).exp();
            }
        }
        sampled = Some((cin_samp, acts_s1, acts_s2));
    }

    let loss = td1 + td2 + cfg.w_cons * (gap1 + gap2);
    let diag = CriticDiagnostics { td1, td2, gap1, gap2 };
    if !want_grads {
        return Ok(CriticPass { loss, diag, grads: None });
    }

    let mut d1 = Vec::with_capacity(b_n);
    let mut d2 = Vec::with_capacity(b_n);
    let cons = if cfg.w_cons != 0.0 { cfg.w_cons * inv_b } else { 0.0 };
    for b in 0..b_n {
        d1.push(2.0 * (q1d[b] - y[b]) * inv_b - cons);
        d2.push(2.0 * (q2d[b] - y[b]) * inv_b - cons);
    }
    let mut g1 = agent.q1.backward_batch(&cin, &acts1, &d1, true, false);
    let mut g2 = agent.q2.backward_batch(&cin, &acts2, &d2, true, false);
    if let Some((cin_samp, acts_s1, acts_s2)) = &sampled {
        let ds1: Vec<f64> = soft1.iter().map(|w| cfg.w_cons * w * inv_b).collect();
        let ds2: Vec<f64> = soft2.iter().map(|w| cfg.w_cons * w * inv_b).collect();
        g1.add_params(&agent.q1.backward_batch(cin_samp, acts_s1, &ds1, true, false));
        g2.add_params(&agent.q2.backward_batch(cin_samp, acts_s2, &ds2, true, false));
    }
    Ok(CriticPass { loss, diag, grads: Some((g1, g2)) })
}

/// Conservative critic loss on an explicit batch (`indices` into `set`),
/// with diagnostics. Consumes the RNG exactly as a training step's critic
/// phase would.
///
/// The gap uses the logsumexp soft maximum, so it carries a constant
/// offset: a critic that is identically c scores a gap of exactly ln M,
/// not 0.
pub fn cql_critic_loss(
    set: &TransitionSet,
    indices: &[usize],
    agent: &Agent,
    cfg: &CqlConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, CriticDiagnostics)> {
    let pass = critic_pass(agent, cfg, set, indices, rng, false)?;
    Ok((pass.loss, pass.diag))
}

fn polyak(target: &mut Mlp, src: &Mlp, tau: f64) {
    for k in 0..src.n_layers() {
        for (t, s) in target.weights_mut(k).iter_mut().zip(src.weights(k)) {
            *t = (1.0 - tau) * *t + tau * s;
        }
        for (t, s) in target.biases_mut(k).iter_mut().zip(src.biases(k)) {
            *t = (1.0 - tau) * *t + tau * s;
        }
    }
}

struct ActorPass {
    loss: f64,
}

/// Actor update: maximize min-critic value of reparameterized actions plus
/// entropy bonus; then one temperature step toward target entropy −d.
fn actor_pass(
    agent: &mut Agent,
    set: &TransitionSet,
    idx: &[usize],
    rng: &mut ChaCha8Rng,
    actor_opt: &mut AdamState,
    temp_opt: &mut ScalarAdam,
) -> Result<ActorPass> {
    let b_n = idx.len();
    let d = agent.dim;
    let mut s = Vec::with_capacity(b_n * d);
    for &i in idx {
        s.extend_from_slice(set.state(i));
    }

    let acts = agent.actor.forward_batch(&s, b_n);
    let heads = split_heads(acts.output(), b_n, d);
    let fresh = sample_squashed(&heads, d, rng);

    let cin = concat_rows(&s, &fresh.a, b_n, d, d);
    let acts_q1 = agent.q1.forward_batch(&cin, b_n);
    let acts_q2 = agent.q2.forward_batch(&cin, b_n);
    let temp = agent.temperature();
    let inv_b = 1.0 / b_n as f64;

    // Route each row's gradient through whichever critic attains the min.
    let mut pick1 = vec![0.0; b_n];
    let mut pick2 = vec![0.0; b_n];
    let mut loss = 0.0;
    for b in 0..b_n {
        let (v1, v2) = (acts_q1.output()[b], acts_q2.output()[b]);
        if v1 <= v2 {
            pick1[b] = 1.0;
        } else {
            pick2[b] = 1.0;
        }
        loss += (temp * fresh.logp[b] - v1.min(v2)) * inv_b;
    }
    let gin1 = agent.q1.backward_batch(&cin, &acts_q1, &pick1, false, true).d_inputs;
    let gin2 = agent.q2.backward_batch(&cin, &acts_q2, &pick2, false, true).d_inputs;

    let mut d_out = vec![0.0; b_n * 2 * d];
    for b in 0..b_n {
        for j in 0..d {
            let i = b * d + j;
            let a = fresh.a[i];
            let dq_da = if pick1[b] == 1.0 { gin1[b * 2 * d + d + j] } else { gin2[b * 2 * d + d + j] };
            let du = (temp * 2.0 * a - dq_da * (1.0 - a * a)) * inv_b;
            d_out[b * 2 * d + j] = du;
            let dls = du * heads.std[i] * fresh.xi[i] - temp * inv_b;
            d_out[b * 2 * d + d + j] = if heads.clamped[i] { 0.0 } else { dls };
        }
    }
    let grads = agent.actor.backward_batch(&s, &acts, &d_out, true, false);
    if !loss.is_finite() || !grads.all_finite() {
        return Err(Error::NumericFailure("actor loss or gradient not finite".into()));
    }
    actor_opt.apply(&mut agent.actor, &grads);

    let mean_logp = fresh.logp.iter().sum::<f64>() * inv_b;
    let target_entropy = -(d as f64);
    let d_log_temp = -(mean_logp + target_entropy);
    temp_opt.apply(&mut agent.log_temp, d_log_temp);
    Ok(ActorPass { loss })
}

/// Train a conservative agent on the transition set. Checkpoints are cloned
/// at every `checkpoint_interval` epochs; a numeric failure stops training
/// and rolls the returned agent back to the last good checkpoint (the
/// initial agent if none), with the reason in `aborted`.
pub fn cql_train(set: &TransitionSet, cfg: &CqlConfig, seed: u64) -> Result<TrainOutcome> {
    cfg.validate()?;
    if set.is_empty() {
        return Err(Error::TooSmallDataset("empty transition set".into()));
    }
    let d = set.dim;
    let bound = guess_bound(set)?;
    let mut agent = Agent::new(d, &cfg.hidden, bound, cfg.gamma, seed)?;
    agent.config_hash = cfg.hash();

    let mut rng = seed::rng_for(seed::split_seed(seed, tags::AGENT), 0);
    let mut actor_opt = AdamState::new(&agent.actor, cfg.actor_lr);
    let mut q1_opt = AdamState::new(&agent.q1, cfg.critic_lr);
    let mut q2_opt = AdamState::new(&agent.q2, cfg.critic_lr);
    let mut temp_opt = ScalarAdam::new(cfg.actor_lr);

    let mut outcome = TrainOutcome {
        agent: agent.clone(),
        checkpoints: Vec::new(),
        diagnostics: Vec::with_capacity(cfg.epochs),
        aborted: None,
    };

    let mut idx = vec![0usize; cfg.batch];
    'epochs: for epoch in 1..=cfg.epochs {
        let mut sum = (0.0, 0.0, 0.0, 0.0, 0.0);
        for _ in 0..cfg.steps_per_epoch {
            for slot in idx.iter_mut() {
                *slot = rng.gen_range(0..set.len());
            }
            let step = (|| -> Result<(CriticDiagnostics, f64)> {
                let pass = critic_pass(&agent, cfg, set, &idx, &mut rng, true)?;
                let (g1, g2) = pass.grads.as_ref().expect("grads requested");
                if !pass.loss.is_finite() || !g1.all_finite() || !g2.all_finite() {
                    return Err(Error::NumericFailure("critic loss or gradient not finite".into()));
                }
                q1_opt.apply(&mut agent.q1, &pass.grads.as_ref().unwrap().0);
                q2_opt.apply(&mut agent.q2, &pass.grads.as_ref().unwrap().1);
                polyak(&mut agent.q1_target, &agent.q1, cfg.tau);
                polyak(&mut agent.q2_target, &agent.q2, cfg.tau);
                let ap =
                    actor_pass(&mut agent, set, &idx, &mut rng, &mut actor_opt, &mut temp_opt)?;
                Ok((pass.diag, ap.loss))
            })();
            match step {
                Ok((diag, actor_loss)) => {
                    sum.0 += diag.td1;
                    sum.1 += diag.td2;
                    sum.2 += diag.gap1;
                    sum.3 += diag.gap2;
                    sum.4 += actor_loss;
                }
                Err(e) => {
                    log::error!("training aborted at epoch {epoch}: {e}");
                    outcome.aborted = Some(format!("epoch {epoch}: {e}"));
                    outcome.agent = outcome
                        .checkpoints
                        .last()
                        .map(|(_, a)| a.clone())
                        .unwrap_or_else(|| outcome.agent.clone());
                    break 'epochs;
                }
            }
        }
        let n = cfg.steps_per_epoch as f64;
        outcome.diagnostics.push(EpochDiagnostics {
            epoch,
            td1: sum.0 / n,
            td2: sum.1 / n,
            gap1: sum.2 / n,
            gap2: sum.3 / n,
            actor_loss: sum.4 / n,
            temperature: agent.temperature(),
        });
        if epoch % cfg.checkpoint_interval == 0 {
            outcome.checkpoints.push((epoch, agent.clone()));
        }
    }
    if outcome.aborted.is_none() {
        outcome.agent = agent;
    }
    Ok(outcome)
}

/// Plain SAC on the same transition set: the conservative trainer with
/// w_cons = 0 — the identical code path, so results match bit for bit.
pub fn sac_train(set: &TransitionSet, cfg: &CqlConfig, seed: u64) -> Result<TrainOutcome> {
    let mut cfg = cfg.clone();
    cfg.w_cons = 0.0;
    cql_train(set, &cfg, seed)
}

/// The action bound is data: recovered actions were clipped to ±a_max, so
/// the transition set's recorded bound is the max |action| ceiling.
fn guess_bound(set: &TransitionSet) -> Result<ActionBound> {
    if let Some(v) = set.get_meta("a_max") {
        let a: f64 = v
            .parse()
            .map_err(|_| Error::Format(format!("transition meta a_max={v:?} is not a number")))?;
        return ActionBound::new(a);
    }
    let peak = set.actions.iter().fold(0.0_f64, |m, a| m.max(a.abs()));
    if peak > 0.0 {
        ActionBound::new(peak)
    } else {
        Ok(ActionBound::default())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surrogate::{train_surrogate, SurrogateConfig};
    use crate::tasks::{generate_offline_dataset, Task};
    use crate::trajectories::{build_transition_set, select_top_p, synthesize_trajectories};

    fn tiny_set(n_traj: usize, t: usize) -> TransitionSet {
        let ds = generate_offline_dataset(Task::QuadraticBowl, 300, 50.0, 31).unwrap();
        let s = train_surrogate(
            &ds,
            &SurrogateConfig { hidden: vec![16, 16], epochs: 10, batch: 64, lr: 1e-3 },
            31,
        )
        .unwrap();
        let top = select_top_p(&ds, 40.0).unwrap();
        let trajs = synthesize_trajectories(&top, n_traj, t, 31).unwrap();
        let mut set =
            build_transition_set(&trajs, &s, &ds, ActionBound::default(), 1e-6).unwrap();
        set.set_meta("a_max", "0.05");
        set
    }

    fn tiny_cfg() -> CqlConfig {
        CqlConfig {
            epochs: 2,
            steps_per_epoch: 3,
            batch: 32,
            hidden: vec![16, 16],
            ..CqlConfig::default()
        }
    }

    #[test]
    fn deterministic_action_is_bounded_and_repeatable() {
        let agent =
            Agent::new(5, &[16], ActionBound::default(), 0.99, 3).unwrap();
        let mut rng = seed::rng_for(0, 0);
        let x = [0.5, -1.0, 2.0, 0.0, -0.3];
        let a = policy_act(&agent, &x, true, &mut rng).unwrap();
        let b = policy_act(&agent, &x, true, &mut rng).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|v| v.abs() <= 0.05));
        // Stochastic actions stay bounded too.
        for _ in 0..100 {
            let s = policy_act(&agent, &x, false, &mut rng).unwrap();
            assert!(s.iter().all(|v| v.abs() <= 0.05));
        }
    }

    #[test]
    fn zero_actor_gives_zero_action_and_saturation_hits_the_bound() {
        let mut agent = Agent::new(3, &[8], ActionBound::new(0.1).unwrap(), 0.99, 1).unwrap();
        agent.actor = Mlp::zeros(agent.actor.dims()).unwrap();
        let mut rng = seed::rng_for(0, 0);
        let a = policy_act(&agent, &[1.0, 2.0, 3.0], true, &mut rng).unwrap();
        assert_eq!(a, vec![0.0; 3]);

        // Saturate the mean head through the bias.
        for j in 0..3 {
            agent.actor.biases_mut(1)[j] = 50.0;
        }
        let a = policy_act(&agent, &[0.0; 3], true, &mut rng).unwrap();
        for v in a {
            assert!((v - 0.1).abs() < 1e-9, "saturated action {v}");
        }
    }

    #[test]
    fn policy_act_rejects_wrong_dim() {
        let agent = Agent::new(4, &[8], ActionBound::default(), 0.99, 0).unwrap();
        let mut rng = seed::rng_for(0, 0);
        assert!(policy_act(&agent, &[1.0], true, &mut rng).is_err());
    }

    #[test]
    fn constant_critic_gap_is_log_m_and_td_matches_hand_value() {
        let set = tiny_set(5, 10);
        let mut cfg = tiny_cfg();
        cfg.gamma = 0.0;
        let mut agent = Agent::new(5, &cfg.hidden, ActionBound::default(), cfg.gamma, 7).unwrap();
        // Q ≡ 1 on both critics; temperature irrelevant since γ=0.
        agent.q1 = Mlp::zeros(agent.q1.dims()).unwrap();
        agent.q2 = Mlp::zeros(agent.q2.dims()).unwrap();
        agent.q1.biases_mut(2)[0] = 1.0;
        agent.q2.biases_mut(2)[0] = 1.0;

        // Pick tuples with exactly zero reward? Rewards vary; zero them out.
        let mut set0 = set.clone();
        for r in &mut set0.rewards {
            *r = 0.0;
        }
        let mut rng = seed::rng_for(1, 1);
        let idx: Vec<usize> = (0..16).collect();
        let (loss, diag) = cql_critic_loss(&set0, &idx, &agent, &cfg, &mut rng).unwrap();

        // y = r + 0·(…) = 0, so each critic's TD term is (1 − 0)² = 1.
        assert!((diag.td1 - 1.0).abs() < 1e-12, "td1 {}", diag.td1);
        assert!((diag.td2 - 1.0).abs() < 1e-12);
        // Constant critic: logsumexp of M equal values minus the value
        // itself is exactly log M.
        let want = (cfg.m_actions as f64).ln();
        assert!((diag.gap1 - want).abs() < 1e-12, "gap1 {}", diag.gap1);
        assert!((diag.gap2 - want).abs() < 1e-12);
        let want_loss = 2.0 + cfg.w_cons * 2.0 * want;
        assert!((loss - want_loss).abs() < 1e-10);
    }

    #[test]
    fn zero_weight_loss_is_plain_td() {
        let set = tiny_set(5, 10);
        let cfg = tiny_cfg();
        let mut cfg0 = cfg.clone();
        cfg0.w_cons = 0.0;
        let agent = Agent::new(5, &cfg.hidden, ActionBound::default(), cfg.gamma, 5).unwrap();
        let idx: Vec<usize> = (3..35).collect();

        let mut rng = seed::rng_for(9, 9);
        let (loss0, diag0) = cql_critic_loss(&set, &idx, &agent, &cfg0, &mut rng).unwrap();
        assert_eq!(loss0, diag0.td1 + diag0.td2);
        assert_eq!(diag0.gap1, 0.0);

        // Same RNG stream, conservative weight on: TD parts are identical
        // because the bootstrap noise is drawn before the conservative block.
        let mut rng = seed::rng_for(9, 9);
        let (_, diag) = cql_critic_loss(&set, &idx, &agent, &cfg, &mut rng).unwrap();
        assert_eq!(diag.td1, diag0.td1);
        assert_eq!(diag.td2, diag0.td2);
        assert!(diag.gap1 != 0.0);
    }

    #[test]
    fn critic_loss_rejects_empty_batch() {
        let set = tiny_set(2, 5);
        let cfg = tiny_cfg();
        let agent = Agent::new(5, &cfg.hidden, ActionBound::default(), cfg.gamma, 5).unwrap();
        let mut rng = seed::rng_for(0, 0);
        assert!(cql_critic_loss(&set, &[], &agent, &cfg, &mut rng).is_err());
    }

    #[test]
    fn critic_gradients_match_finite_differences() {
        // Smooth in critic parameters except at ReLU kinks; the fixed seed
        // below stays clear of them.
        let set = tiny_set(4, 8);
        let mut cfg = tiny_cfg();
        cfg.batch = 6;
        cfg.hidden = vec![8];
        let agent = Agent::new(5, &cfg.hidden, ActionBound::default(), cfg.gamma, 11).unwrap();
        let idx: Vec<usize> = (0..6).collect();

        let pass = {
            let mut rng = seed::rng_for(4, 4);
            critic_pass(&agent, &cfg, &set, &idx, &mut rng, true).unwrap()
        };
        let (g1, _g2) = pass.grads.as_ref().unwrap();

        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for layer in 0..agent.q1.n_layers() {
            for pi in (0..agent.q1.weights(layer).len()).step_by(7) {
                let mut probe = agent.clone();
                probe.q1.weights_mut(layer)[pi] += h;
                let up = {
                    let mut rng = seed::rng_for(4, 4);
                    critic_pass(&probe, &cfg, &set, &idx, &mut rng, false).unwrap().loss
                };
                let mut probe = agent.clone();
                probe.q1.weights_mut(layer)[pi] -= h;
                let down = {
                    let mut rng = seed::rng_for(4, 4);
                    critic_pass(&probe, &cfg, &set, &idx, &mut rng, false).unwrap().loss
                };
                let fd = (up - down) / (2.0 * h);
                let an = g1.d_weights[layer][pi];
                worst = worst.max((fd - an).abs() / an.abs().max(1e-6));
            }
        }
        assert!(worst < 1e-3, "worst critic-gradient relative error {worst}");
    }

    #[test]
    fn actor_entropy_gradient_matches_finite_differences() {
        // Zero critics isolate the smooth temperature·logp path.
        let set = tiny_set(4, 8);
        let mut cfg = tiny_cfg();
        cfg.batch = 5;
        cfg.hidden = vec![8];
        let mut agent = Agent::new(5, &cfg.hidden, ActionBound::default(), cfg.gamma, 13).unwrap();
        agent.q1 = Mlp::zeros(agent.q1.dims()).unwrap();
        agent.q2 = Mlp::zeros(agent.q2.dims()).unwrap();
        assert_actor_grad_close(&agent, &cfg, &set, 1e-4);
    }

    #[test]
    fn actor_value_gradient_matches_finite_differences() {
        // Linear critics (no hidden layer) keep the Q path smooth.
        let set = tiny_set(4, 8);
        let mut cfg = tiny_cfg();
        cfg.batch = 5;
        cfg.hidden = vec![8];
        let mut agent = Agent::new(5, &cfg.hidden, ActionBound::default(), cfg.gamma, 17).unwrap();
        let mut lin = Mlp::zeros(&[10, 1]).unwrap();
        for (i, w) in lin.weights_mut(0).iter_mut().enumerate() {
            *w = 0.1 * (i as f64) - 0.45;
        }
        agent.q1 = lin.clone();
        lin.weights_mut(0)[3] = 2.0;
        agent.q2 = lin;
        agent.log_temp = f64::NEG_INFINITY; // temp = 0: pure value path
        assert_actor_grad_close(&agent, &cfg, &set, 1e-4);
    }

    /// Compare the actor backward pass against central finite differences of
    /// the actor loss, sampling every 5th parameter of each layer.
    fn assert_actor_grad_close(agent: &Agent, cfg: &CqlConfig, set: &TransitionSet, tol: f64) {
        let idx: Vec<usize> = (0..cfg.batch).collect();
        let d = agent.dim;

        let loss_of = |a: &Agent| -> f64 {
            let mut rng = seed::rng_for(21, 21);
            let b_n = idx.len();
            let mut s = Vec::new();
            for &i in &idx {
                s.extend_from_slice(set.state(i));
            }
            let heads = split_heads(a.actor.forward_batch(&s, b_n).output(), b_n, d);
            let fresh = sample_squashed(&heads, d, &mut rng);
            let cin = concat_rows(&s, &fresh.a, b_n, d, d);
            let q1 = a.q1.forward_batch(&cin, b_n);
            let q2 = a.q2.forward_batch(&cin, b_n);
            let temp = a.temperature();
            (0..b_n)
                .map(|b| temp * fresh.logp[b] - q1.output()[b].min(q2.output()[b]))
                .sum::<f64>()
                / b_n as f64
        };

        // Analytic gradients via one actor_pass on a zero-lr clone.
        let mut probe = agent.clone();
        let mut actor_opt = AdamState::new(&probe.actor, 0.0);
        let mut temp_opt = ScalarAdam::new(0.0);
        let mut rng = seed::rng_for(21, 21);
        actor_pass(&mut probe, set, &idx, &mut rng, &mut actor_opt, &mut temp_opt).unwrap();
        // Re-derive the gradient by hand since actor_pass consumed it: rerun
        // the same math with explicit backward capture.
        let analytic = {
            let b_n = idx.len();
            let mut s = Vec::new();
            for &i in &idx {
                s.extend_from_slice(set.state(i));
            }
            let acts = agent.actor.forward_batch(&s, b_n);
            let heads = split_heads(acts.output(), b_n, d);
            let mut rng = seed::rng_for(21, 21);
            let fresh = sample_squashed(&heads, d, &mut rng);
            let cin = concat_rows(&s, &fresh.a, b_n, d, d);
            let acts_q1 = agent.q1.forward_batch(&cin, b_n);
            let acts_q2 = agent.q2.forward_batch(&cin, b_n);
            let temp = agent.temperature();
            let inv_b = 1.0 / b_n as f64;
            let mut pick1 = vec![0.0; b_n];
            let mut pick2 = vec![0.0; b_n];
            for b in 0..b_n {
                if acts_q1.output()[b] <= acts_q2.output()[b] {
                    pick1[b] = 1.0;
                } else {
                    pick2[b] = 1.0;
                }
            }
            let gin1 = agent.q1.backward_batch(&cin, &acts_q1, &pick1, false, true).d_inputs;
            let gin2 = agent.q2.backward_batch(&cin, &acts_q2, &pick2, false, true).d_inputs;
            let mut d_out = vec![0.0; b_n * 2 * d];
            for b in 0..b_n {
                for j in 0..d {
                    let i = b * d + j;
                    let a = fresh.a[i];
                    let dq = if pick1[b] == 1.0 {
                        gin1[b * 2 * d + d + j]
                    } else {
                        gin2[b * 2 * d + d + j]
                    };
                    let du = (temp * 2.0 * a - dq * (1.0 - a * a)) * inv_b;
                    d_out[b * 2 * d + j] = du;
                    let dls = du * heads.std[i] * fresh.xi[i] - temp * inv_b;
                    d_out[b * 2 * d + d + j] = if heads.clamped[i] { 0.0 } else { dls };
                }
            }
            agent.actor.backward_batch(&s, &acts, &d_out, true, false)
        };

        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for layer in 0..agent.actor.n_layers() {
            for pi in (0..agent.actor.weights(layer).len()).step_by(5) {
                let mut up_agent = agent.clone();
                up_agent.actor.weights_mut(layer)[pi] += h;
                let mut down_agent = agent.clone();
                down_agent.actor.weights_mut(layer)[pi] -= h;
                let fd = (loss_of(&up_agent) - loss_of(&down_agent)) / (2.0 * h);
                let an = analytic.d_weights[layer][pi];
                worst = worst.max((fd - an).abs() / an.abs().max(1e-6));
            }
        }
        assert!(worst < tol, "worst actor-gradient relative error {worst}");
    }

    #[test]
    fn smoke_one_epoch_no_checkpoints() {
        let set = tiny_set(5, 10);
        let mut cfg = tiny_cfg();
        cfg.epochs = 1;
        let out = cql_train(&set, &cfg, 1).unwrap();
        assert!(out.aborted.is_none());
        assert!(out.checkpoints.is_empty());
        assert_eq!(out.diagnostics.len(), 1);
        assert!(out.diagnostics[0].td1.is_finite());
    }

    #[test]
    fn training_is_deterministic_and_sac_equals_w0() {
        let set = tiny_set(5, 10);
        let mut cfg = tiny_cfg();
        cfg.w_cons = 0.0;
        let a = cql_train(&set, &cfg, 6).unwrap();
        let b = cql_train(&set, &cfg, 6).unwrap();
        assert_eq!(a.agent, b.agent);

        let mut sac_cfg = tiny_cfg();
        sac_cfg.w_cons = 123.0; // sac_train must override this
        let c = sac_train(&set, &sac_cfg, 6).unwrap();
        assert_eq!(a.agent.actor, c.agent.actor);
        assert_eq!(a.agent.q1, c.agent.q1);
        assert_eq!(a.agent.log_temp, c.agent.log_temp);

        let d = cql_train(&set, &cfg, 7).unwrap();
        assert_ne!(a.agent.actor, d.agent.actor);
    }

    #[test]
    fn checkpoints_land_on_interval_marks() {
        let set = tiny_set(5, 10);
        let mut cfg = tiny_cfg();
        cfg.epochs = 4;
        cfg.checkpoint_interval = 2;
        let out = cql_train(&set, &cfg, 2).unwrap();
        let epochs: Vec<usize> = out.checkpoints.iter().map(|(e, _)| *e).collect();
        assert_eq!(epochs, vec![2, 4]);
        // Final agent is the last checkpoint.
        assert_eq!(out.agent, out.checkpoints.last().unwrap().1);
    }

    #[test]
    fn conservatism_pushes_data_actions_above_random_ones() {
        let set = tiny_set(40, 20);
        let cfg = CqlConfig {
            epochs: 10,
            steps_per_epoch: 20,
            batch: 64,
            hidden: vec![32, 32],
            ..CqlConfig::default()
        };
        let out = cql_train(&set, &cfg, 3).unwrap();
        assert!(out.aborted.is_none());
        let agent = &out.agent;

        // Paired comparison over 1000 states: the effective (min-twin) Q on
        // the dataset action vs. on a uniform random in-box action.
        let mut rng = seed::rng_for(99, 99);
        let q_min = |s: &[f64], a_unit: &[f64]| {
            let mut row = s.to_vec();
            row.extend_from_slice(a_unit);
            agent
                .q1
                .forward_scalar(&row)
                .unwrap()
                .min(agent.q2.forward_scalar(&row).unwrap())
        };
        let mut diff = 0.0;
        let n_eval = 1000;
        for i in 0..n_eval {
            let idx = (i * 17) % set.len();
            let s = set.state(idx);
            let a_data: Vec<f64> =
                set.action(idx).iter().map(|a| a / agent.bound.a_max).collect();
            let a_rand: Vec<f64> = (0..set.dim).map(|_| 2.0 * rng.gen::<f64>() - 1.0).collect();
            diff += q_min(s, &a_data) - q_min(s, &a_rand);
        }
        assert!(
            diff / n_eval as f64 >= 0.0,
            "mean Q(data) − Q(random) = {} must be ≥ 0",
            diff / n_eval as f64
        );
    }

    #[test]
    fn numeric_failure_rolls_back_to_last_checkpoint() {
        let mut set = tiny_set(5, 10);
        let mut cfg = tiny_cfg();
        cfg.epochs = 4;
        cfg.checkpoint_interval = 1;
        // Poison a reward so some later batch blows up.
        let n = set.rewards.len();
        set.rewards[n - 1] = f64::NAN;
        let out = cql_train(&set, &cfg, 5).unwrap();
        // With batch 32 over a tiny set the poisoned tuple is hit quickly.
        if let Some(msg) = &out.aborted {
            assert!(msg.contains("epoch"));
            if let Some((e, last)) = out.checkpoints.last() {
                assert_eq!(&out.agent, last, "rollback target is checkpoint at epoch {e}");
            }
            // All stored diagnostics are from completed epochs.
            assert!(out.diagnostics.iter().all(|d| d.td1.is_finite()));
        } else {
            panic!("expected an abort with a NaN reward in a tiny set");
        }
    }

    #[test]
    fn agent_checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("agent.ckpt");
        let set = tiny_set(3, 8);
        let cfg = tiny_cfg();
        let out = cql_train(&set, &cfg, 8).unwrap();
        out.agent.save(&path).unwrap();
        let back = Agent::load(&path).unwrap();
        assert_eq!(back, out.agent);
        assert_eq!(back.config_hash, cfg.hash());
    }

    #[test]
    fn config_validation_catches_bad_fields() {
        let cfg = CqlConfig { m_actions: 7, ..CqlConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = CqlConfig { gamma: 1.0, ..CqlConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = CqlConfig { tau: 0.0, ..CqlConfig::default() };
        assert!(cfg.validate().is_err());
        assert!(CqlConfig::default().validate().is_ok());
    }
}

