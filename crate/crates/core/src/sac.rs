//! Soft actor-critic for the online stage, with next actions and actor
//! pseudo-targets drawn from the composite policy, and automatic entropy
//! temperature tuning.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bridge::{pex_select_batch, BatchSelection, PolicySet};
use crate::distributions::{clamp_log_std, squash_derivative, LOG_STD_MAX, LOG_STD_MIN};
use crate::error::{Error, Result};
use crate::iql::{critic_mse, min_q, normal_noise, GaussianActor, IqlNets};
use crate::numcore::checkpoint::{Checkpoint, CheckpointEntry};
use crate::numcore::{adam_step, mlp_backward, mlp_forward, soft_update, AdamState, Matrix, MlpParams};
use crate::replay::Batch;

#[derive(Debug, Clone, PartialEq)]
pub struct SacNets {
    pub q1: MlpParams,
    pub q2: MlpParams,
    pub q1_target: MlpParams,
    pub q2_target: MlpParams,
    pub actor: GaussianActor,
    pub log_ent_coef: f64,
}

impl SacNets {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        low: Vec<f64>,
        high: Vec<f64>,
        hidden: &[usize],
        init_ent_coef: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let iql = IqlNets::new(obs_dim, low, high, hidden, rng)?;
        Self::from_iql(&iql, iql.actor.clone(), init_ent_coef)
    }

    /// Critics and their targets come from the offline learner; V is dropped.
    pub fn from_iql(iql: &IqlNets, actor: GaussianActor, init_ent_coef: f64) -> Result<Self> {
        if !(init_ent_coef > 0.0 && init_ent_coef.is_finite()) {
            return Err(Error::Config(format!("initial entropy coefficient must be positive, got {init_ent_coef}")));
        }
        if actor.obs_dim() != iql.obs_dim() || actor.act_dim() != iql.act_dim() {
            return Err(Error::shape("sac actor", iql.act_dim(), actor.act_dim()));
        }
        Ok(Self {
            q1: iql.q1.clone(),
            q2: iql.q2.clone(),
            q1_target: iql.q1_target.clone(),
            q2_target: iql.q2_target.clone(),
            actor,
            log_ent_coef: init_ent_coef.ln(),
        })
    }

    pub fn ent_coef(&self) -> f64 {
        self.log_ent_coef.exp()
    }

    pub fn write_checkpoint(&self, ckpt: &mut Checkpoint) {
        ckpt.push(CheckpointEntry::network("q1", &self.q1));
        ckpt.push(CheckpointEntry::network("q2", &self.q2));
        ckpt.push(CheckpointEntry::network("q1_target", &self.q1_target));
        ckpt.push(CheckpointEntry::network("q2_target", &self.q2_target));
        self.actor.write_checkpoint("actor", ckpt);
        ckpt.push(CheckpointEntry::vector("log_ent_coef", &[self.log_ent_coef]));
    }
}

#[derive(Debug, Clone)]
pub struct SacOptim {
    pub q1: AdamState,
    pub q2: AdamState,
    pub actor: AdamState,
    pub ent: AdamState,
}

impl SacOptim {
    pub fn new(nets: &SacNets) -> Self {
        Self {
            q1: AdamState::new(&nets.q1),
            q2: AdamState::new(&nets.q2),
            actor: AdamState::new(&nets.actor),
            ent: AdamState::new(&vec![nets.log_ent_coef]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SacHyper {
    pub discount: f64,
    pub target_entropy: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub ent_lr: f64,
    pub target_speed: f64,
}

/// TD targets `r + γ(1 − done)(min Q̄(s', a') − c·log π_θ(a'|s'))`, where the
/// entropy term applies only to rows whose `a'` came from the learner.
pub fn sac_critic_targets(nets: &SacNets, batch: &Batch, discount: f64, next: &BatchSelection) -> Result<Vec<f64>> {
    let q_next = min_q(&nets.q1_target, &nets.q2_target, &batch.next_obs, &next.actions)?;
    let c = nets.ent_coef();
    Ok((0..batch.len())
        .map(|i| {
            if batch.dones[i] {
                return batch.rewards[i];
            }
            let entropy = if next.from_learner(i) { c * next.learner_log_probs[i] } else { 0.0 };
            batch.rewards[i] + discount * (q_next[i] - entropy)
        })
        .collect())
}

/// Mean squared errors of both critics against fixed targets.
pub fn sac_critic_loss(nets: &SacNets, batch: &Batch, targets: &[f64]) -> Result<(f64, MlpParams, MlpParams)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("critic loss on an empty batch".into()));
    }
    if targets.len() != batch.len() {
        return Err(Error::shape("sac targets", batch.len(), targets.len()));
    }
    let input = Matrix::hcat(&batch.obs, &batch.actions)?;
    let (l1, g1) = critic_mse(&nets.q1, &input, targets)?;
    let (l2, g2) = critic_mse(&nets.q2, &input, targets)?;
    Ok((l1 + l2, g1, g2))
}

/// Gradient-stopped pseudo-targets `∂ min(q1, q2)(s, a)/∂a + a`, with the
/// derivative taken through whichever critic is smaller on each row.
pub fn pseudo_targets(q1: &MlpParams, q2: &MlpParams, obs: &Matrix, actions: &Matrix) -> Result<Matrix> {
    let input = Matrix::hcat(obs, actions)?;
    let (v1, t1) = mlp_forward(q1, &input)?;
    let (v2, t2) = mlp_forward(q2, &input)?;
    let n = obs.rows();
    let mut g1 = Matrix::zeros(n, 1);
    let mut g2 = Matrix::zeros(n, 1);
    for i in 0..n {
        if v1.get(i, 0) <= v2.get(i, 0) {
            g1.set(i, 0, 1.0);
        } else {
            g2.set(i, 0, 1.0);
        }
    }
    let d1 = mlp_backward(q1, &t1, &g1)?.1;
    let d2 = mlp_backward(q2, &t2, &g2)?.1;
    let (o, d) = (obs.cols(), actions.cols());
    let mut out = actions.clone();
    for i in 0..n {
        for j in 0..d {
            let v = out.get(i, j) + d1.get(i, o + j) + d2.get(i, o + j);
            out.set(i, j, v);
        }
    }
    if !out.is_finite() {
        return Err(Error::NonFinite("actor pseudo-target".into()));
    }
    Ok(out)
}

/// `mean_i ‖tᵢ − a₀ᵢ‖² + c · log π(a₀ᵢ|sᵢ)` with the reparameterized sample
/// `a₀ = mean + std·noise`. Only the actor receives gradients.
pub fn pex_actor_loss(
    actor: &GaussianActor,
    obs: &Matrix,
    noise: &Matrix,
    targets: &Matrix,
    ent_coef: f64,
) -> Result<(f64, GaussianActor)> {
    let n = obs.rows();
    if n == 0 {
        return Err(Error::InvalidArgument("actor loss on an empty batch".into()));
    }
    let d = actor.act_dim();
    if noise.rows() != n || noise.cols() != d || targets.rows() != n || targets.cols() != d {
        return Err(Error::shape(
            "pex_actor_loss",
            format!("{n}x{d}"),
            format!("noise {}x{}, targets {}x{}", noise.rows(), noise.cols(), targets.rows(), targets.cols()),
        ));
    }
    let (raw, tape) = mlp_forward(&actor.net, obs)?;
    let inv_n = 1.0 / n as f64;
    let ls: Vec<f64> = actor.log_std.iter().map(|&l| clamp_log_std(l)).collect();
    let in_range: Vec<bool> = actor.log_std.iter().map(|l| (LOG_STD_MIN..=LOG_STD_MAX).contains(l)).collect();
    let mut out_grad = Matrix::zeros(n, d);
    let mut grad = actor.zeros_like();
    let mut loss = 0.0;
    for i in 0..n {
        for j in 0..d {
            let (lo, hi) = (actor.low[j], actor.high[j]);
            let r = raw.get(i, j);
            let mean = crate::distributions::squash_scalar(r, lo, hi);
            let e = noise.get(i, j);
            let std = ls[j].exp();
            let a0 = mean + std * e;
            let diff = targets.get(i, j) - a0;
            loss += diff * diff + ent_coef * (-0.5 * e * e - ls[j] - HALF_LN_2PI);
            let d_a0 = -2.0 * diff * inv_n;
            out_grad.set(i, j, d_a0 * squash_derivative(r, lo, hi));
            if in_range[j] {
                grad.log_std[j] += d_a0 * std * e - ent_coef * inv_n;
            }
        }
    }
    grad.net = mlp_backward(&actor.net, &tape, &out_grad)?.0;
    Ok((loss * inv_n, grad))
}

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Temperature loss `−log c · mean(log π + H_target)` and its derivative.
pub fn entropy_loss(log_ent_coef: f64, log_probs: &[f64], target_entropy: f64) -> (f64, f64) {
    if log_probs.is_empty() {
        return (0.0, 0.0);
    }
    let m = log_probs.iter().map(|lp| lp + target_entropy).sum::<f64>() / log_probs.len() as f64;
    (-log_ent_coef * m, -m)
}

/// One Adam step on the log entropy coefficient.
pub fn entropy_tune(
    log_ent_coef: &mut f64,
    opt: &mut AdamState,
    log_probs: &[f64],
    target_entropy: f64,
    lr: f64,
) -> Result<f64> {
    let (loss, g) = entropy_loss(*log_ent_coef, log_probs, target_entropy);
    let mut p = vec![*log_ent_coef];
    adam_step(&mut p, &vec![g], opt, lr)?;
    *log_ent_coef = p[0];
    Ok(loss)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SacStats {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub ent_loss: f64,
}

/// Critic step, actor step and temperature step for the learner in
/// `nets.actor`, with `offline` (if any) as the frozen first member of the
/// policy set. Consumes from `rng` in order: next-state noise and selection,
/// then current-state noise and selection.
pub fn sac_update<R: Rng + ?Sized>(
    nets: &mut SacNets,
    offline: Option<&GaussianActor>,
    selection_temperature: f64,
    batch: &Batch,
    opt: &mut SacOptim,
    hyper: &SacHyper,
    rng: &mut R,
) -> Result<SacStats> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("sac update on an empty batch".into()));
    }
    let n = batch.len();
    let d = nets.actor.act_dim();
    let select = |nets: &SacNets, obs: &Matrix, noise: &Matrix, rng: &mut R| -> Result<BatchSelection> {
        match offline {
            Some(b) => {
                let set = PolicySet::expanded(b, &nets.actor, selection_temperature, true)?;
                pex_select_batch(&set, &nets.q1, &nets.q2, obs, noise, rng)
            }
            None => {
                let set = PolicySet::single(&nets.actor, selection_temperature)?;
                pex_select_batch(&set, &nets.q1, &nets.q2, obs, noise, rng)
            }
        }
    };

    let noise = normal_noise(n, d, rng);
    let next = select(nets, &batch.next_obs, &noise, rng)?;
    let y = sac_critic_targets(nets, batch, hyper.discount, &next)?;
    let (critic_loss, g1, g2) = sac_critic_loss(nets, batch, &y)?;
    adam_step(&mut nets.q1, &g1, &mut opt.q1, hyper.critic_lr)?;
    adam_step(&mut nets.q2, &g2, &mut opt.q2, hyper.critic_lr)?;

    let noise = normal_noise(n, d, rng);
    let cur = select(nets, &batch.obs, &noise, rng)?;
    let t = pseudo_targets(&nets.q1, &nets.q2, &batch.obs, &cur.actions)?;
    let (actor_loss, ga) = pex_actor_loss(&nets.actor, &batch.obs, &noise, &t, nets.ent_coef())?;
    adam_step(&mut nets.actor, &ga, &mut opt.actor, hyper.actor_lr)?;

    let ent_loss = entropy_tune(&mut nets.log_ent_coef, &mut opt.ent, &cur.learner_log_probs, hyper.target_entropy, hyper.ent_lr)?;

    soft_update(&mut nets.q1_target, &nets.q1, hyper.target_speed)?;
    soft_update(&mut nets.q2_target, &nets.q2, hyper.target_speed)?;
    Ok(SacStats {
        critic_loss,
        actor_loss,
        ent_loss,
    })
}
