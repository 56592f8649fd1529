//! Implicit Q-learning: expectile value regression, TD critics with a frozen
//! value target, and advantage-weighted policy extraction. Also hosts the
//! Gaussian actor and critic helpers shared with the SAC trainer.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::distributions::{clip_action, log_prob_with_grad, GaussianPolicyHead};
use crate::error::{Error, Result};
use crate::numcore::checkpoint::{Checkpoint, CheckpointEntry};
use crate::numcore::{adam_step, mlp_backward, mlp_forward, soft_update, AdamState, Matrix, MlpParams, ParamSet};
use crate::replay::Batch;

pub const INIT_LOG_STD: f64 = 0.0;

/// Policy network producing the raw mean of a [`GaussianPolicyHead`], plus a
/// state-independent log standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianActor {
    pub net: MlpParams,
    pub log_std: Vec<f64>,
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

impl GaussianActor {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, hidden: &[usize], low: Vec<f64>, high: Vec<f64>, rng: &mut R) -> Result<Self> {
        crate::distributions::check_bounds(&low, &high)?;
        let sizes: Vec<usize> = std::iter::once(obs_dim).chain(hidden.iter().copied()).chain([low.len()]).collect();
        Ok(Self {
            net: MlpParams::init(&sizes, rng)?,
            log_std: vec![INIT_LOG_STD; low.len()],
            low,
            high,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn act_dim(&self) -> usize {
        self.log_std.len()
    }

    /// Same shape, all parameters zero; used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        Self {
            net: MlpParams::zeros(self.net.layer_sizes()).expect("valid sizes"),
            log_std: vec![0.0; self.log_std.len()],
            low: self.low.clone(),
            high: self.high.clone(),
        }
    }

    pub fn head(&self, obs: &[f64]) -> Result<GaussianPolicyHead> {
        let raw = self.net.predict(&Matrix::row_vector(obs))?;
        GaussianPolicyHead::new(raw.into_vec(), &self.log_std, self.low.clone(), self.high.clone())
    }

    pub fn greedy(&self, obs: &[f64]) -> Result<Vec<f64>> {
        Ok(self.head(obs)?.greedy())
    }

    pub fn sample<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        Ok(self.head(obs)?.sample(rng))
    }

    pub fn log_prob(&self, obs: &[f64], action: &[f64]) -> Result<f64> {
        self.head(obs)?.log_prob(action)
    }

    /// Greedy actions for every row of `obs`.
    pub fn greedy_batch(&self, obs: &Matrix) -> Result<Matrix> {
        let mut raw = self.net.predict(obs)?;
        for r in 0..raw.rows() {
            let row = raw.row_mut(r);
            for (j, v) in row.iter_mut().enumerate() {
                *v = crate::distributions::squash_scalar(*v, self.low[j], self.high[j]);
            }
        }
        Ok(raw)
    }

    /// Reparameterized samples `mean + std·noise` for every row. Returns the
    /// unclipped samples, the clipped actions, and the log-density of the
    /// unclipped samples.
    pub fn sample_batch_with_noise(&self, obs: &Matrix, noise: &Matrix) -> Result<(Matrix, Matrix, Vec<f64>)> {
        let mean = self.greedy_batch(obs)?;
        if noise.rows() != mean.rows() || noise.cols() != mean.cols() {
            return Err(Error::shape(
                "sample noise",
                format!("{}x{}", mean.rows(), mean.cols()),
                format!("{}x{}", noise.rows(), noise.cols()),
            ));
        }
        let std: Vec<f64> = self.log_std.iter().map(|&l| crate::distributions::clamp_log_std(l).exp()).collect();
        let mut raw = mean.clone();
        let mut clipped = mean;
        let mut log_probs = Vec::with_capacity(raw.rows());
        for r in 0..raw.rows() {
            let mut lp = 0.0;
            for j in 0..std.len() {
                let e = noise.get(r, j);
                let a = raw.get(r, j) + std[j] * e;
                raw.set(r, j, a);
                lp += -0.5 * e * e - std[j].ln() - HALF_LN_2PI;
            }
            log_probs.push(lp);
            let c = clip_action(raw.row(r), &self.low, &self.high);
            clipped.row_mut(r).copy_from_slice(&c);
        }
        Ok((raw, clipped, log_probs))
    }

    /// `−mean(wᵢ · log π(aᵢ|sᵢ))` and its gradient.
    pub fn weighted_nll(&self, obs: &Matrix, actions: &Matrix, weights: &[f64]) -> Result<(f64, GaussianActor)> {
        let n = obs.rows();
        if n == 0 {
            return Err(Error::InvalidArgument("policy loss on an empty batch".into()));
        }
        let d = self.act_dim();
        if actions.rows() != n || actions.cols() != d || weights.len() != n {
            return Err(Error::shape(
                "weighted_nll",
                format!("{n} rows, {d} action dims"),
                format!("{} rows, {} action dims, {} weights", actions.rows(), actions.cols(), weights.len()),
            ));
        }
        let (raw, tape) = mlp_forward(&self.net, obs)?;
        let inv_n = 1.0 / n as f64;
        let mut out_grad = Matrix::zeros(n, d);
        let mut grad = self.zeros_like();
        let mut loss = 0.0;
        for i in 0..n {
            let g = log_prob_with_grad(raw.row(i), &self.log_std, &self.low, &self.high, actions.row(i));
            let w = weights[i];
            loss -= w * g.log_prob;
            for j in 0..d {
                out_grad.set(i, j, -w * g.d_raw_mean[j] * inv_n);
                grad.log_std[j] -= w * g.d_log_std[j] * inv_n;
            }
        }
        grad.net = mlp_backward(&self.net, &tape, &out_grad)?.0;
        Ok((loss * inv_n, grad))
    }

    pub fn write_checkpoint(&self, prefix: &str, ckpt: &mut Checkpoint) {
        ckpt.push(CheckpointEntry::network(format!("{prefix}.net"), &self.net));
        ckpt.push(CheckpointEntry::vector(format!("{prefix}.log_std"), &self.log_std));
        ckpt.push(CheckpointEntry::vector(format!("{prefix}.low"), &self.low));
        ckpt.push(CheckpointEntry::vector(format!("{prefix}.high"), &self.high));
    }

    pub fn read_checkpoint(prefix: &str, ckpt: &Checkpoint) -> Result<Self> {
        let actor = Self {
            net: ckpt.network(&format!("{prefix}.net"))?,
            log_std: ckpt.vector(&format!("{prefix}.log_std"))?,
            low: ckpt.vector(&format!("{prefix}.low"))?,
            high: ckpt.vector(&format!("{prefix}.high"))?,
        };
        crate::distributions::check_bounds(&actor.low, &actor.high)?;
        if actor.net.output_dim() != actor.log_std.len() || actor.low.len() != actor.log_std.len() {
            return Err(Error::shape("checkpoint actor", actor.net.output_dim(), actor.log_std.len()));
        }
        Ok(actor)
    }
}

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

impl ParamSet for GaussianActor {
    fn param_slices(&self) -> Vec<&[f64]> {
        let mut v = self.net.param_slices();
        v.push(&self.log_std);
        v
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.net.param_slices_mut();
        v.push(&mut self.log_std);
        v
    }

    fn group_of(&self, slice_index: usize) -> usize {
        slice_index / 2
    }
}

/// Standard normal noise matrix.
pub fn normal_noise<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized")
}

/// Critic over `[obs, action]` rows.
pub fn new_critic<R: Rng + ?Sized>(obs_dim: usize, act_dim: usize, hidden: &[usize], rng: &mut R) -> Result<MlpParams> {
    let sizes: Vec<usize> = std::iter::once(obs_dim + act_dim).chain(hidden.iter().copied()).chain([1]).collect();
    MlpParams::init(&sizes, rng)
}

pub fn new_value<R: Rng + ?Sized>(obs_dim: usize, hidden: &[usize], rng: &mut R) -> Result<MlpParams> {
    let sizes: Vec<usize> = std::iter::once(obs_dim).chain(hidden.iter().copied()).chain([1]).collect();
    MlpParams::init(&sizes, rng)
}

pub fn critic_values(critic: &MlpParams, obs: &Matrix, actions: &Matrix) -> Result<Vec<f64>> {
    Ok(critic.predict(&Matrix::hcat(obs, actions)?)?.into_vec())
}

/// Elementwise `min(q1, q2)`.
pub fn min_q(q1: &MlpParams, q2: &MlpParams, obs: &Matrix, actions: &Matrix) -> Result<Vec<f64>> {
    let a = critic_values(q1, obs, actions)?;
    let b = critic_values(q2, obs, actions)?;
    let out: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x.min(*y)).collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("critic output".into()));
    }
    Ok(out)
}

/// Mean squared error of one critic against fixed targets, with its gradient.
pub(crate) fn critic_mse(critic: &MlpParams, input: &Matrix, targets: &[f64]) -> Result<(f64, MlpParams)> {
    let n = targets.len();
    let (q, tape) = mlp_forward(critic, input)?;
    let inv_n = 1.0 / n as f64;
    let mut g = Matrix::zeros(n, 1);
    let mut loss = 0.0;
    for i in 0..n {
        let e = q.get(i, 0) - targets[i];
        loss += e * e;
        g.set(i, 0, 2.0 * e * inv_n);
    }
    Ok((loss * inv_n, mlp_backward(critic, &tape, &g)?.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IqlHyper {
    pub expectile: f64,
    pub inverse_temperature: f64,
    pub weight_clamp: f64,
    pub discount: f64,
}

impl IqlHyper {
    pub const SPARSE: IqlHyper = IqlHyper {
        expectile: 0.9,
        inverse_temperature: 10.0,
        weight_clamp: 100.0,
        discount: 0.99,
    };
    pub const DENSE: IqlHyper = IqlHyper {
        expectile: 0.7,
        inverse_temperature: 3.0,
        weight_clamp: 100.0,
        discount: 0.99,
    };

    pub fn validate(&self) -> Result<()> {
        check_expectile(self.expectile).map_err(|e| Error::Config(e.to_string()))?;
        if !(self.inverse_temperature > 0.0 && self.inverse_temperature.is_finite()) {
            return Err(Error::Config(format!("inverse temperature must be positive, got {}", self.inverse_temperature)));
        }
        if !(self.weight_clamp > 0.0) {
            return Err(Error::Config(format!("weight clamp must be positive, got {}", self.weight_clamp)));
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return Err(Error::Config(format!("discount must be in (0, 1), got {}", self.discount)));
        }
        Ok(())
    }

    /// Temperature α shared by the advantage weights and policy selection.
    pub fn temperature(&self) -> f64 {
        1.0 / self.inverse_temperature
    }
}

fn check_expectile(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidArgument(format!("expectile must be in (0, 1), got {tau}")));
    }
    Ok(())
}

/// `|τ − 1(u < 0)| · u²`.
pub fn expectile_loss(u: f64, tau: f64) -> Result<f64> {
    check_expectile(tau)?;
    Ok(expectile_weight(u, tau) * u * u)
}

#[inline]
fn expectile_weight(u: f64, tau: f64) -> f64 {
    if u >= 0.0 {
        tau
    } else {
        1.0 - tau
    }
}

/// `min(exp(adv · α⁻¹), w_max)`.
pub fn awr_weight(advantage: f64, hyper: &IqlHyper) -> f64 {
    (advantage * hyper.inverse_temperature).exp().min(hyper.weight_clamp)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IqlNets {
    pub q1: MlpParams,
    pub q2: MlpParams,
    pub q1_target: MlpParams,
    pub q2_target: MlpParams,
    pub v: MlpParams,
    pub actor: GaussianActor,
}

impl IqlNets {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, low: Vec<f64>, high: Vec<f64>, hidden: &[usize], rng: &mut R) -> Result<Self> {
        let act_dim = low.len();
        let q1 = new_critic(obs_dim, act_dim, hidden, rng)?;
        let q2 = new_critic(obs_dim, act_dim, hidden, rng)?;
        let v = new_value(obs_dim, hidden, rng)?;
        let actor = GaussianActor::new(obs_dim, hidden, low, high, rng)?;
        Ok(Self {
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            q1,
            q2,
            v,
            actor,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.v.input_dim()
    }

    pub fn act_dim(&self) -> usize {
        self.actor.act_dim()
    }

    pub fn write_checkpoint(&self, ckpt: &mut Checkpoint) {
        ckpt.push(CheckpointEntry::network("q1", &self.q1));
        ckpt.push(CheckpointEntry::network("q2", &self.q2));
        ckpt.push(CheckpointEntry::network("q1_target", &self.q1_target));
        ckpt.push(CheckpointEntry::network("q2_target", &self.q2_target));
        ckpt.push(CheckpointEntry::network("v", &self.v));
        self.actor.write_checkpoint("actor", ckpt);
    }

    pub fn read_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let nets = Self {
            q1: ckpt.network("q1")?,
            q2: ckpt.network("q2")?,
            q1_target: ckpt.network("q1_target")?,
            q2_target: ckpt.network("q2_target")?,
            v: ckpt.network("v")?,
            actor: GaussianActor::read_checkpoint("actor", ckpt)?,
        };
        let critic_in = nets.obs_dim() + nets.act_dim();
        for q in [&nets.q1, &nets.q2, &nets.q1_target, &nets.q2_target] {
            if q.input_dim() != critic_in || !q.same_shape(&nets.q1) {
                return Err(Error::shape("checkpoint critic", critic_in, q.input_dim()));
            }
        }
        Ok(nets)
    }
}

fn check_batch(batch: &Batch) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("loss on an empty batch".into()));
    }
    Ok(())
}

/// Expectile regression of V toward the target critics' minimum.
pub fn v_loss(nets: &IqlNets, batch: &Batch, hyper: &IqlHyper) -> Result<(f64, MlpParams)> {
    check_batch(batch)?;
    check_expectile(hyper.expectile)?;
    let q = min_q(&nets.q1_target, &nets.q2_target, &batch.obs, &batch.actions)?;
    let (v, tape) = mlp_forward(&nets.v, &batch.obs)?;
    let n = batch.len();
    let inv_n = 1.0 / n as f64;
    let mut g = Matrix::zeros(n, 1);
    let mut loss = 0.0;
    for i in 0..n {
        let u = q[i] - v.get(i, 0);
        let w = expectile_weight(u, hyper.expectile);
        loss += w * u * u;
        g.set(i, 0, -2.0 * w * u * inv_n);
    }
    Ok((loss * inv_n, mlp_backward(&nets.v, &tape, &g)?.0))
}

/// TD targets `r + γ(1 − done)·V(s')`.
pub fn q_targets(nets: &IqlNets, batch: &Batch, hyper: &IqlHyper) -> Result<Vec<f64>> {
    let v_next = nets.v.predict(&batch.next_obs)?;
    Ok((0..batch.len())
        .map(|i| {
            if batch.dones[i] {
                batch.rewards[i]
            } else {
                batch.rewards[i] + hyper.discount * v_next.get(i, 0)
            }
        })
        .collect())
}

/// Sum of both critics' mean squared TD errors; gradients for `(q1, q2)`.
pub fn q_loss(nets: &IqlNets, batch: &Batch, hyper: &IqlHyper) -> Result<(f64, MlpParams, MlpParams)> {
    check_batch(batch)?;
    let y = q_targets(nets, batch, hyper)?;
    let input = Matrix::hcat(&batch.obs, &batch.actions)?;
    let (l1, g1) = critic_mse(&nets.q1, &input, &y)?;
    let (l2, g2) = critic_mse(&nets.q2, &input, &y)?;
    Ok((l1 + l2, g1, g2))
}

/// Clamped exponential advantage weights with `min(q1, q2)` from the target critics.
pub fn awr_weights(nets: &IqlNets, obs: &Matrix, actions: &Matrix, hyper: &IqlHyper) -> Result<Vec<f64>> {
    let q = min_q(&nets.q1_target, &nets.q2_target, obs, actions)?;
    let v = nets.v.predict(obs)?;
    Ok(q.iter().enumerate().map(|(i, &qi)| awr_weight(qi - v.get(i, 0), hyper)).collect())
}

/// Advantage-weighted log-likelihood on replayed actions for `actor`, which
/// may be the offline policy or the online one.
pub fn awr_policy_loss(nets: &IqlNets, actor: &GaussianActor, batch: &Batch, hyper: &IqlHyper) -> Result<(f64, GaussianActor)> {
    check_batch(batch)?;
    let w = awr_weights(nets, &batch.obs, &batch.actions, hyper)?;
    actor.weighted_nll(&batch.obs, &batch.actions, &w)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningRates {
    pub actor: f64,
    pub critic: f64,
    pub value: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            actor: 3e-4,
            critic: 3e-4,
            value: 3e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IqlOptim {
    pub q1: AdamState,
    pub q2: AdamState,
    pub v: AdamState,
    pub actor: AdamState,
}

impl IqlOptim {
    pub fn new(nets: &IqlNets) -> Self {
        Self {
            q1: AdamState::new(&nets.q1),
            q2: AdamState::new(&nets.q2),
            v: AdamState::new(&nets.v),
            actor: AdamState::new(&nets.actor),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IqlFlags {
    pub train_actor: bool,
    pub train_critics: bool,
}

impl Default for IqlFlags {
    fn default() -> Self {
        Self {
            train_actor: true,
            train_critics: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct IqlStats {
    pub v_loss: f64,
    pub q_loss: f64,
    pub actor_loss: f64,
}

/// One gradient step each on V, the actor and both critics, in that order,
/// then Polyak averaging of the target critics.
pub fn iql_update(
    nets: &mut IqlNets,
    hyper: &IqlHyper,
    batch: &Batch,
    opt: &mut IqlOptim,
    lr: &LearningRates,
    target_speed: f64,
    flags: IqlFlags,
) -> Result<IqlStats> {
    check_batch(batch)?;
    let mut stats = IqlStats::default();
    if flags.train_critics {
        let (l, g) = v_loss(nets, batch, hyper)?;
        adam_step(&mut nets.v, &g, &mut opt.v, lr.value)?;
        stats.v_loss = l;
    }
    if flags.train_actor {
        let (l, g) = awr_policy_loss(nets, &nets.actor, batch, hyper)?;
        adam_step(&mut nets.actor, &g, &mut opt.actor, lr.actor)?;
        stats.actor_loss = l;
    }
    if flags.train_critics {
        let (l, g1, g2) = q_loss(nets, batch, hyper)?;
        adam_step(&mut nets.q1, &g1, &mut opt.q1, lr.critic)?;
        adam_step(&mut nets.q2, &g2, &mut opt.q2, lr.critic)?;
        soft_update(&mut nets.q1_target, &nets.q1, target_speed)?;
        soft_update(&mut nets.q2_target, &nets.q2, target_speed)?;
        stats.q_loss = l;
    }
    Ok(stats)
}
