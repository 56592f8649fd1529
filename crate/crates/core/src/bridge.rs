//! Offline-to-online bridging: the expanded policy set with value-based
//! selection, the transfer baselines, behavior transfer, jump-start guidance,
//! reward-free behavior cloning, and policy-usage bookkeeping.

use std::borrow::Borrow;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{argmax_first, categorical_sample, softmax_temperature, ZetaSampler};
use crate::error::{Error, Result};
use crate::iql::{min_q, GaussianActor};
use crate::numcore::{Matrix, MlpParams};
use crate::replay::Batch;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BridgeStrategy {
    Scratch,
    Buffer,
    Direct,
    Pex,
    Bt { zeta_a: f64, epsilon: f64 },
    Jsrl { max_guide_steps: usize },
    BcOffline,
}

impl BridgeStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Scratch => "scratch",
            Self::Buffer => "buffer",
            Self::Direct => "direct",
            Self::Pex => "pex",
            Self::Bt { .. } => "bt",
            Self::Jsrl { .. } => "jsrl",
            Self::BcOffline => "bc-offline",
        }
    }

    /// Whether the online phase needs an offline checkpoint at all.
    pub fn uses_offline_phase(&self) -> bool {
        !matches!(self, Self::Scratch | Self::Buffer)
    }
}

/// Optional overrides of a strategy's default wiring. `None` keeps the default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationFlags {
    pub use_offline_buffer: Option<bool>,
    pub transfer_critic: Option<bool>,
    pub transfer_policy: Option<bool>,
    pub freeze_offline_policy: Option<bool>,
}

/// Fully resolved online-phase wiring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Wiring {
    pub use_offline_buffer: bool,
    pub transfer_critic: bool,
    pub transfer_policy: bool,
    pub freeze_offline_policy: bool,
    /// `[π_β, π_θ]` composed by value-based selection.
    pub policy_expansion: bool,
}

struct Defaults {
    wiring: Wiring,
    overridable: [bool; 4],
}

fn defaults(strategy: &BridgeStrategy) -> Defaults {
    let w = |buffer, critic, policy, freeze, expansion| Wiring {
        use_offline_buffer: buffer,
        transfer_critic: critic,
        transfer_policy: policy,
        freeze_offline_policy: freeze,
        policy_expansion: expansion,
    };
    // overridable order: buffer, critic, policy, freeze
    match strategy {
        BridgeStrategy::Scratch => Defaults {
            wiring: w(false, false, false, false, false),
            overridable: [false; 4],
        },
        BridgeStrategy::Buffer => Defaults {
            wiring: w(true, false, false, false, false),
            overridable: [false; 4],
        },
        BridgeStrategy::Direct => Defaults {
            wiring: w(true, true, true, false, false),
            overridable: [true, true, true, false],
        },
        BridgeStrategy::Pex => Defaults {
            wiring: w(true, true, true, true, true),
            overridable: [true, true, false, true],
        },
        BridgeStrategy::Bt { .. } | BridgeStrategy::Jsrl { .. } => Defaults {
            wiring: w(true, true, true, true, false),
            overridable: [true, true, false, false],
        },
        BridgeStrategy::BcOffline => Defaults {
            wiring: w(false, false, true, true, true),
            overridable: [false, false, false, true],
        },
    }
}

/// Resolves the wiring and rejects overrides that contradict the strategy.
pub fn resolve_wiring(strategy: &BridgeStrategy, flags: &AblationFlags) -> Result<Wiring> {
    match *strategy {
        BridgeStrategy::Bt { zeta_a, epsilon } => {
            if !(zeta_a > 1.0 && zeta_a.is_finite()) {
                return Err(Error::Config(format!("bt zeta_a must exceed 1, got {zeta_a}")));
            }
            if !(0.0..=1.0).contains(&epsilon) {
                return Err(Error::Config(format!("bt epsilon must be in [0, 1], got {epsilon}")));
            }
        }
        BridgeStrategy::Jsrl { max_guide_steps: 0 } => {
            return Err(Error::Config("jsrl max_guide_steps must be positive".into()));
        }
        _ => {}
    }
    let d = defaults(strategy);
    let mut wiring = d.wiring;
    let slots = [
        ("use_offline_buffer", flags.use_offline_buffer, &mut wiring.use_offline_buffer),
        ("transfer_critic", flags.transfer_critic, &mut wiring.transfer_critic),
        ("transfer_policy", flags.transfer_policy, &mut wiring.transfer_policy),
        ("freeze_offline_policy", flags.freeze_offline_policy, &mut wiring.freeze_offline_policy),
    ];
    for ((name, value, slot), overridable) in slots.into_iter().zip(d.overridable) {
        if let Some(v) = value {
            if v != *slot && !overridable {
                return Err(Error::Config(format!(
                    "{name} = {v} contradicts strategy '{}'",
                    strategy.name()
                )));
            }
            *slot = v;
        }
    }
    Ok(wiring)
}

/// A candidate policy. `A` is an owned actor or a borrow of one, so a set can
/// be assembled per step from actors owned by a trainer.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyMember<A = GaussianActor> {
    pub actor: A,
    pub frozen: bool,
    /// Proposes its greedy action even when exploring.
    pub greedy_proposal: bool,
}

/// Ordered candidate policies with a selection temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySet<A = GaussianActor> {
    pub members: Vec<PolicyMember<A>>,
    pub alpha: f64,
}

impl<A: Borrow<GaussianActor>> PolicySet<A> {
    /// `[π_β, π_θ]`: π_β always proposes greedily.
    pub fn expanded(offline: A, online: A, alpha: f64, freeze_offline: bool) -> Result<Self> {
        let (b, t) = (offline.borrow(), online.borrow());
        if b.obs_dim() != t.obs_dim() || b.act_dim() != t.act_dim() {
            return Err(Error::shape("policy set", b.act_dim(), t.act_dim()));
        }
        Self::validated(
            vec![
                PolicyMember {
                    actor: offline,
                    frozen: freeze_offline,
                    greedy_proposal: true,
                },
                PolicyMember {
                    actor: online,
                    frozen: false,
                    greedy_proposal: false,
                },
            ],
            alpha,
        )
    }

    pub fn single(actor: A, alpha: f64) -> Result<Self> {
        Self::validated(
            vec![PolicyMember {
                actor,
                frozen: false,
                greedy_proposal: false,
            }],
            alpha,
        )
    }

    fn validated(members: Vec<PolicyMember<A>>, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("selection temperature must be positive, got {alpha}")));
        }
        Ok(Self { members, alpha })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// The newest member, which is always trainable.
    pub fn learner(&self) -> &GaussianActor {
        self.members.last().expect("nonempty").actor.borrow()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActMode {
    Explore,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionLogEntry {
    pub env_step: u64,
    pub chosen_index: usize,
    pub probabilities: [f64; 2],
}

fn pair(p: &[f64]) -> [f64; 2] {
    [p.first().copied().unwrap_or(0.0), p.get(1).copied().unwrap_or(0.0)]
}

/// Proposes one action per member, scores each with `min(q1, q2)`, and picks
/// one by softmax sampling (explore) or first-index argmax (eval).
pub fn pex_act<A: Borrow<GaussianActor>, R: Rng + ?Sized>(
    set: &PolicySet<A>,
    q1: &MlpParams,
    q2: &MlpParams,
    obs: &[f64],
    env_step: u64,
    rng: &mut R,
    mode: ActMode,
) -> Result<(Vec<f64>, SelectionLogEntry)> {
    if set.is_empty() {
        return Err(Error::InvalidArgument("empty policy set".into()));
    }
    let mut proposals = Vec::with_capacity(set.len());
    for m in &set.members {
        let actor = m.actor.borrow();
        let a = if m.greedy_proposal || mode == ActMode::Eval {
            actor.greedy(obs)?
        } else {
            actor.sample(obs, rng)?
        };
        proposals.push(a);
    }
    if set.len() == 1 {
        let entry = SelectionLogEntry {
            env_step,
            chosen_index: 0,
            probabilities: [1.0, 0.0],
        };
        return Ok((proposals.pop().expect("one"), entry));
    }
    let s = Matrix::row_vector(obs);
    let mut q = Vec::with_capacity(set.len());
    for (i, a) in proposals.iter().enumerate() {
        let v = min_q(q1, q2, &s, &Matrix::row_vector(a)).map_err(|_| {
            Error::NonFinite(format!("critic value for candidate {i} at step {env_step}, obs {obs:?}, action {a:?}"))
        })?;
        q.push(v[0]);
    }
    let dist = softmax_temperature(&q, set.alpha)?;
    let chosen = match mode {
        ActMode::Explore => categorical_sample(&dist, rng),
        ActMode::Eval => argmax_first(&q),
    };
    let entry = SelectionLogEntry {
        env_step,
        chosen_index: chosen,
        probabilities: pair(&dist.probabilities),
    };
    Ok((proposals.swap_remove(chosen), entry))
}

/// Batched composite-policy draw used inside losses.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchSelection {
    /// Chosen (clipped) action per row.
    pub actions: Matrix,
    pub chosen: Vec<usize>,
    /// Index of the member that samples (the learner).
    pub learner_index: usize,
    /// Learner's clipped samples, whether chosen or not.
    pub learner_actions: Matrix,
    /// Log-density of the learner's unclipped samples.
    pub learner_log_probs: Vec<f64>,
}

impl BatchSelection {
    pub fn from_learner(&self, row: usize) -> bool {
        self.chosen[row] == self.learner_index
    }
}

/// Draws `a ∼ π̃(s)` for every row of `obs`. The learner's sample uses the
/// given standard-normal `noise`; selection consumes one uniform per row when
/// the set has several members.
pub fn pex_select_batch<A: Borrow<GaussianActor>, R: Rng + ?Sized>(
    set: &PolicySet<A>,
    q1: &MlpParams,
    q2: &MlpParams,
    obs: &Matrix,
    noise: &Matrix,
    rng: &mut R,
) -> Result<BatchSelection> {
    if set.is_empty() {
        return Err(Error::InvalidArgument("empty policy set".into()));
    }
    let learner_index = set.len() - 1;
    let (_, learner_actions, learner_log_probs) = set.learner().sample_batch_with_noise(obs, noise)?;
    if set.len() == 1 {
        return Ok(BatchSelection {
            actions: learner_actions.clone(),
            chosen: vec![0; obs.rows()],
            learner_index,
            learner_actions,
            learner_log_probs,
        });
    }
    let mut proposals = Vec::with_capacity(set.len());
    for (i, m) in set.members.iter().enumerate() {
        if i == learner_index {
            proposals.push(learner_actions.clone());
        } else {
            proposals.push(m.actor.borrow().greedy_batch(obs)?);
        }
    }
    let values: Vec<Vec<f64>> = proposals
        .iter()
        .map(|a| min_q(q1, q2, obs, a))
        .collect::<Result<_>>()?;
    let mut actions = Matrix::zeros(obs.rows(), set.learner().act_dim());
    let mut chosen = Vec::with_capacity(obs.rows());
    for r in 0..obs.rows() {
        let q: Vec<f64> = values.iter().map(|v| v[r]).collect();
        let k = categorical_sample(&softmax_temperature(&q, set.alpha)?, rng);
        actions.row_mut(r).copy_from_slice(proposals[k].row(r));
        chosen.push(k);
    }
    Ok(BatchSelection {
        actions,
        chosen,
        learner_index,
        learner_actions,
        learner_log_probs,
    })
}

/// Behavior-transfer persistence state.
#[derive(Debug, Clone)]
pub struct BtState {
    remaining: usize,
    epsilon: f64,
    sampler: ZetaSampler,
}

impl BtState {
    pub fn new(zeta_a: f64, epsilon: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::InvalidArgument(format!("epsilon must be in [0, 1], got {epsilon}")));
        }
        Ok(Self {
            remaining: 0,
            epsilon,
            sampler: ZetaSampler::new(zeta_a)?,
        })
    }

    pub fn remaining(&self) -> usize {
        self.remaining
    }

    /// 0 for the offline policy, 1 for the online policy.
    pub fn choose<R: Rng + ?Sized>(&mut self, rng: &mut R) -> usize {
        if self.remaining > 0 {
            self.remaining -= 1;
            return 0;
        }
        if rng.random::<f64>() < self.epsilon {
            self.remaining = self.sampler.sample(rng) - 1;
            0
        } else {
            1
        }
    }
}

/// Offline policy acts greedily during a persistence run; the online policy samples.
pub fn bt_act<R: Rng + ?Sized>(
    offline: &GaussianActor,
    online: &GaussianActor,
    state: &mut BtState,
    obs: &[f64],
    rng: &mut R,
) -> Result<(Vec<f64>, usize)> {
    match state.choose(rng) {
        0 => Ok((offline.greedy(obs)?, 0)),
        _ => Ok((online.sample(obs, rng)?, 1)),
    }
}

/// `round((1 − progress) · max_guide_steps)`.
pub fn jsrl_guide_horizon(training_progress: f64, max_guide_steps: usize) -> usize {
    ((1.0 - training_progress.clamp(0.0, 1.0)) * max_guide_steps as f64).round() as usize
}

pub fn jsrl_act<R: Rng + ?Sized>(
    offline: &GaussianActor,
    online: &GaussianActor,
    episode_step: usize,
    training_progress: f64,
    max_guide_steps: usize,
    obs: &[f64],
    rng: &mut R,
) -> Result<(Vec<f64>, usize)> {
    if episode_step < jsrl_guide_horizon(training_progress, max_guide_steps) {
        Ok((offline.greedy(obs)?, 0))
    } else {
        Ok((online.sample(obs, rng)?, 1))
    }
}

/// Reward-free maximum likelihood `−mean log π(a|s)`.
pub fn bc_loss(actor: &GaussianActor, batch: &Batch) -> Result<(f64, GaussianActor)> {
    actor.weighted_nll(&batch.obs, &batch.actions, &vec![1.0; batch.len()])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UsageBucket {
    pub start_step: u64,
    pub steps: usize,
    /// Fraction of steps acted by member 0 (π_β).
    pub offline_fraction: f64,
}

/// Offline-policy usage per window `[k·bucket, (k+1)·bucket)` of env steps;
/// windows without entries are skipped.
pub fn usage_summary(log: &[SelectionLogEntry], bucket: u64) -> Result<Vec<UsageBucket>> {
    if bucket == 0 {
        return Err(Error::InvalidArgument("usage bucket must be at least 1".into()));
    }
    let mut out: Vec<UsageBucket> = Vec::new();
    let mut offline = 0usize;
    for e in log {
        let start = e.env_step / bucket * bucket;
        if out.last().is_none_or(|b| b.start_step != start) {
            if let Some(b) = out.last_mut() {
                b.offline_fraction = offline as f64 / b.steps as f64;
            }
            out.push(UsageBucket {
                start_step: start,
                steps: 0,
                offline_fraction: 0.0,
            });
            offline = 0;
        }
        let b = out.last_mut().expect("pushed");
        b.steps += 1;
        offline += (e.chosen_index == 0) as usize;
    }
    if let Some(b) = out.last_mut() {
        b.offline_fraction = offline as f64 / b.steps as f64;
    }
    Ok(out)
}

pub const SELECTION_CSV_HEADER: &str = "env_step,chosen_index,p0,p1";

pub fn write_selection_csv<W: Write>(log: &[SelectionLogEntry], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{SELECTION_CSV_HEADER}")?;
    for e in log {
        writeln!(w, "{},{},{},{}", e.env_step, e.chosen_index, e.probabilities[0], e.probabilities[1])?;
    }
    Ok(())
}

pub fn save_selection_csv(log: &[SelectionLogEntry], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_selection_csv(log, &mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn parse_selection_csv(text: &str) -> Result<Vec<SelectionLogEntry>> {
    let mut lines = text.lines();
    if lines.next() != Some(SELECTION_CSV_HEADER) {
        return Err(Error::InvalidArgument("selection log header mismatch".into()));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let bad = || Error::InvalidArgument(format!("bad selection log line '{l}'"));
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 4 {
                return Err(bad());
            }
            Ok(SelectionLogEntry {
                env_step: f[0].parse().map_err(|_| bad())?,
                chosen_index: f[1].parse().map_err(|_| bad())?,
                probabilities: [f[2].parse().map_err(|_| bad())?, f[3].parse().map_err(|_| bad())?],
            })
        })
        .collect()
}
