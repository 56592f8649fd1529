use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{OfflineAlgo, OnlineAlgo, RunConfig};
use crate::bridge::{bc_loss, bt_act, jsrl_act, pex_act, ActMode, BridgeStrategy, BtState, PolicySet, SelectionLogEntry, Wiring};
use crate::envs::{generate_offline_dataset, Env};
use crate::error::{Error, Result};
use crate::iql::{awr_policy_loss, iql_update, GaussianActor, IqlFlags, IqlNets, IqlOptim};
use crate::numcore::checkpoint::{Checkpoint, CheckpointEntry};
use crate::numcore::{adam_step, AdamState, MlpParams};
use crate::replay::{load_dataset, TransitionSource, sample_batch, sample_mixed, DatasetMeta, OfflineDataset, ReplayBuffer};
use crate::sac::{sac_update, SacNets, SacOptim};

// Each phase draws from its own ChaCha stream of the run seed, so the offline
// and online phases can run in separate processes and still reproduce.
pub const DATA_STREAM: u64 = 1;
pub const OFFLINE_STREAM: u64 = 2;
pub const ONLINE_STREAM: u64 = 3;
pub const EVAL_STREAM: u64 = 4;

pub fn phase_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const HASH_MARKER: &str = "config_hash:";
const ALGO_MARKER: &str = "offline_algo:";
const ENV_MARKER: &str = "env_id:";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    /// Env steps in the online phase; gradient steps in the offline phase.
    pub env_step: u64,
    pub mean_return: f64,
    pub normalized_score: f64,
    pub episode_returns: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunLog {
    pub label: String,
    pub env_id: String,
    pub seed: u64,
    pub config_hash: String,
    pub records: Vec<EvalRecord>,
    pub selection_log: Vec<SelectionLogEntry>,
    pub wall_clock_secs: f64,
}

/// Wall-clock time is excluded.
impl PartialEq for RunLog {
    fn eq(&self, other: &Self) -> bool {
        self.label == other.label
            && self.env_id == other.env_id
            && self.seed == other.seed
            && self.config_hash == other.config_hash
            && self.records == other.records
            && self.selection_log == other.selection_log
    }
}

impl RunLog {
    pub fn final_score(&self) -> Option<f64> {
        self.records.last().map(|r| r.normalized_score)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run log serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Data(format!("run log: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub mean_return: f64,
    pub episode_returns: Vec<f64>,
}

/// Runs `episodes` episodes on a copy of `env` with a deterministic policy.
/// `rng` only drives the start-state jitter.
pub fn evaluate<R, F>(env: &Env, episodes: usize, rng: &mut R, mut policy: F) -> Result<EvalResult>
where
    R: Rng + ?Sized,
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if episodes == 0 {
        return Err(Error::InvalidArgument("evaluation needs at least one episode".into()));
    }
    let mut env = env.clone();
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut obs = env.reset(rng);
        let mut total = 0.0;
        loop {
            let t = env.step(&policy(&obs)?)?;
            total += t.reward;
            if t.done || t.truncated {
                break;
            }
            obs = t.next_obs;
        }
        returns.push(total);
    }
    Ok(EvalResult {
        mean_return: returns.iter().sum::<f64>() / episodes as f64,
        episode_returns: returns,
    })
}

pub fn evaluate_actor<R: Rng + ?Sized>(env: &Env, actor: &GaussianActor, episodes: usize, rng: &mut R) -> Result<EvalResult> {
    evaluate(env, episodes, rng, |obs| actor.greedy(obs))
}

/// Composite policy with argmax selection over greedy proposals.
pub fn evaluate_policy_set<R: Rng + ?Sized>(
    env: &Env,
    set: &PolicySet<&GaussianActor>,
    q1: &MlpParams,
    q2: &MlpParams,
    episodes: usize,
    rng: &mut R,
) -> Result<EvalResult> {
    let mut selection_rng = ChaCha8Rng::seed_from_u64(0);
    evaluate(env, episodes, rng, |obs| {
        Ok(pex_act(set, q1, q2, obs, 0, &mut selection_rng, ActMode::Eval)?.0)
    })
}

fn record(env: &Env, step: u64, result: EvalResult) -> EvalRecord {
    EvalRecord {
        env_step: step,
        normalized_score: env.spec().normalized_score(result.mean_return),
        mean_return: result.mean_return,
        episode_returns: result.episode_returns,
    }
}

/// Rolls out the behavior controller for the configured grade.
pub fn generate_dataset(env_id: &str, grade: crate::envs::BehaviorGrade, size: usize, seed: u64) -> Result<OfflineDataset> {
    let mut env = Env::from_id(env_id)?;
    let mut rng = phase_rng(seed, DATA_STREAM);
    let transitions = generate_offline_dataset(&mut env, grade, size, &mut rng)?;
    let spec = env.spec();
    let meta = DatasetMeta {
        env_id: env_id.to_string(),
        grade,
        seed,
    };
    OfflineDataset::new(meta, spec.obs_dim, spec.act_dim, &transitions)
}

/// Loads `cfg.dataset` or generates one, and checks it against the environment.
pub fn prepare_dataset(cfg: &RunConfig) -> Result<OfflineDataset> {
    let dataset = match &cfg.dataset {
        Some(path) => load_dataset(path).map_err(|e| match e {
            Error::Io { path, source } => Error::Data(format!("cannot read dataset {}: {source}", path.display())),
            other => other,
        })?,
        None => generate_dataset(&cfg.env_id, cfg.dataset_grade, cfg.dataset_size, cfg.seed)?,
    };
    check_dataset(&cfg.env()?, &dataset)?;
    Ok(dataset)
}

pub fn check_dataset(env: &Env, dataset: &OfflineDataset) -> Result<()> {
    let spec = env.spec();
    if dataset.meta().env_id != spec.env_id || dataset.obs_dim() != spec.obs_dim || dataset.act_dim() != spec.act_dim {
        return Err(Error::Data(format!(
            "dataset for {} ({}x{}) does not match environment {} ({}x{})",
            dataset.meta().env_id,
            dataset.obs_dim(),
            dataset.act_dim(),
            spec.env_id,
            spec.obs_dim,
            spec.act_dim
        )));
    }
    if dataset.is_empty() {
        return Err(Error::Data("dataset is empty".into()));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct OfflineOutcome {
    pub nets: IqlNets,
    pub records: Vec<EvalRecord>,
    pub checkpoint: Checkpoint,
}

impl OfflineOutcome {
    pub fn final_score(&self) -> Option<f64> {
        self.records.last().map(|r| r.normalized_score)
    }
}

fn offline_checkpoint(cfg: &RunConfig, nets: &IqlNets) -> Checkpoint {
    let mut ckpt = Checkpoint::new();
    nets.write_checkpoint(&mut ckpt);
    ckpt.push(CheckpointEntry::marker(format!("{HASH_MARKER}{}", cfg.config_hash())));
    let algo = match cfg.offline_algo {
        OfflineAlgo::Iql => "iql",
        OfflineAlgo::Bc => "bc",
    };
    ckpt.push(CheckpointEntry::marker(format!("{ALGO_MARKER}{algo}")));
    ckpt.push(CheckpointEntry::marker(format!("{ENV_MARKER}{}", cfg.env_id)));
    ckpt
}

/// IQL (or behavior cloning) on batches of the offline dataset. The offline
/// actor is evaluated every `offline_eval_interval` gradient steps and at the end.
pub fn run_offline_phase(cfg: &RunConfig, dataset: &OfflineDataset) -> Result<OfflineOutcome> {
    cfg.validate()?;
    let env = cfg.env()?;
    check_dataset(&env, dataset)?;
    let spec = env.spec();
    let hyper = cfg.iql_hyper(&env)?;
    let lr = cfg.learning_rates();
    let mut rng = phase_rng(cfg.seed, OFFLINE_STREAM);
    let mut nets = IqlNets::new(spec.obs_dim, spec.action_low.clone(), spec.action_high.clone(), &cfg.hidden, &mut rng)?;
    let mut opt = IqlOptim::new(&nets);
    let mut records = Vec::new();
    let eval = |nets: &IqlNets, step: usize| -> Result<EvalRecord> {
        let mut eval_rng = phase_rng(cfg.seed, EVAL_STREAM);
        Ok(record(&env, step as u64, evaluate_actor(&env, &nets.actor, cfg.eval_episodes, &mut eval_rng)?))
    };
    for step in 1..=cfg.offline_steps {
        let batch = sample_batch(dataset, cfg.batch_size, &mut rng)?;
        match cfg.offline_algo {
            OfflineAlgo::Iql => {
                iql_update(&mut nets, &hyper, &batch, &mut opt, &lr, cfg.target_speed, IqlFlags::default())?;
            }
            OfflineAlgo::Bc => {
                let (_, g) = bc_loss(&nets.actor, &batch)?;
                adam_step(&mut nets.actor, &g, &mut opt.actor, lr.actor)?;
            }
        }
        if cfg.offline_eval_interval > 0 && step % cfg.offline_eval_interval == 0 && step != cfg.offline_steps {
            records.push(eval(&nets, step)?);
        }
    }
    records.push(eval(&nets, cfg.offline_steps)?);
    let checkpoint = offline_checkpoint(cfg, &nets);
    Ok(OfflineOutcome { nets, records, checkpoint })
}

/// Nets from an offline checkpoint after checking that they fit `env`.
pub fn read_offline_checkpoint(ckpt: &Checkpoint, env: &Env) -> Result<(IqlNets, OfflineAlgo)> {
    let nets = IqlNets::read_checkpoint(ckpt)?;
    let spec = env.spec();
    if nets.obs_dim() != spec.obs_dim || nets.act_dim() != spec.act_dim {
        return Err(Error::Data(format!(
            "checkpoint nets are {}x{}, environment {} is {}x{}",
            nets.obs_dim(),
            nets.act_dim(),
            spec.env_id,
            spec.obs_dim,
            spec.act_dim
        )));
    }
    if let Some(id) = ckpt.markers_with_prefix(ENV_MARKER).next() {
        if id != spec.env_id {
            return Err(Error::Data(format!("checkpoint was trained on {id}, not {}", spec.env_id)));
        }
    }
    let algo = match ckpt.markers_with_prefix(ALGO_MARKER).next() {
        Some("bc") => OfflineAlgo::Bc,
        _ => OfflineAlgo::Iql,
    };
    Ok((nets, algo))
}

/// Offline config hash recorded in a checkpoint.
pub fn checkpoint_config_hash(ckpt: &Checkpoint) -> Option<&str> {
    ckpt.markers_with_prefix(HASH_MARKER).next()
}

/// Serialized bytes of an actor's parameters.
pub fn actor_bytes(actor: &GaussianActor) -> Result<Vec<u8>> {
    let mut ckpt = Checkpoint::new();
    actor.write_checkpoint("actor", &mut ckpt);
    ckpt.to_bytes()
}

enum Learner {
    Iql { nets: IqlNets, opt: IqlOptim },
    Sac { nets: SacNets, opt: SacOptim },
}

impl Learner {
    fn actor(&self) -> &GaussianActor {
        match self {
            Learner::Iql { nets, .. } => &nets.actor,
            Learner::Sac { nets, .. } => &nets.actor,
        }
    }

    fn critics(&self) -> (&MlpParams, &MlpParams) {
        match self {
            Learner::Iql { nets, .. } => (&nets.q1, &nets.q2),
            Learner::Sac { nets, .. } => (&nets.q1, &nets.q2),
        }
    }
}

enum Explorer {
    Single,
    Expansion,
    Bt(BtState),
    Jsrl { max_guide_steps: usize },
}

struct Agent {
    learner: Learner,
    /// π_β, present under expansion, BT and JSRL.
    offline: Option<GaussianActor>,
    /// Optimizer for π_β when it keeps training.
    offline_opt: Option<AdamState>,
    explorer: Explorer,
    alpha: f64,
}

impl Agent {
    fn build(cfg: &RunConfig, wiring: &Wiring, env: &Env, ckpt: Option<&Checkpoint>, rng: &mut ChaCha8Rng) -> Result<Self> {
        let spec = env.spec();
        let fresh = IqlNets::new(spec.obs_dim, spec.action_low.clone(), spec.action_high.clone(), &cfg.hidden, rng)?;
        let explorer = match cfg.strategy {
            BridgeStrategy::Bt { zeta_a, epsilon } => Explorer::Bt(BtState::new(zeta_a, epsilon)?),
            BridgeStrategy::Jsrl { max_guide_steps } => Explorer::Jsrl { max_guide_steps },
            _ if wiring.policy_expansion => Explorer::Expansion,
            _ => Explorer::Single,
        };
        let needs_ckpt = wiring.transfer_critic || wiring.transfer_policy || !matches!(explorer, Explorer::Single);
        let offline_nets = match (needs_ckpt, ckpt) {
            (false, _) => None,
            (true, None) => {
                return Err(Error::Config(format!("strategy '{}' needs an offline checkpoint", cfg.strategy.name())));
            }
            (true, Some(c)) => {
                let (nets, algo) = read_offline_checkpoint(c, env)?;
                if nets.v.layer_sizes()[1..len_minus_one(&nets.v)] != cfg.hidden[..] {
                    return Err(Error::Config(format!(
                        "checkpoint hidden sizes {:?} differ from config {:?}",
                        &nets.v.layer_sizes()[1..len_minus_one(&nets.v)],
                        cfg.hidden
                    )));
                }
                if algo == OfflineAlgo::Bc && wiring.transfer_critic {
                    return Err(Error::Config("checkpoint holds a behavior-cloned policy without trained critics".into()));
                }
                Some(nets)
            }
        };
        let (offline, direct_actor) = match (&explorer, &offline_nets) {
            (Explorer::Single, Some(o)) if wiring.transfer_policy => (None, Some(o.actor.clone())),
            (Explorer::Single, _) => (None, None),
            (_, Some(o)) => (Some(o.actor.clone()), None),
            (_, None) => unreachable!("checked above"),
        };
        let critic_src = match &offline_nets {
            Some(o) if wiring.transfer_critic => o,
            _ => &fresh,
        };
        let actor = direct_actor.unwrap_or_else(|| fresh.actor.clone());
        let learner = match cfg.online_algo {
            OnlineAlgo::Iql => {
                let nets = IqlNets {
                    q1: critic_src.q1.clone(),
                    q2: critic_src.q2.clone(),
                    q1_target: critic_src.q1_target.clone(),
                    q2_target: critic_src.q2_target.clone(),
                    v: critic_src.v.clone(),
                    actor,
                };
                let opt = IqlOptim::new(&nets);
                Learner::Iql { nets, opt }
            }
            OnlineAlgo::Sac => {
                let nets = SacNets::from_iql(critic_src, actor, cfg.init_ent_coef)?;
                let opt = SacOptim::new(&nets);
                Learner::Sac { nets, opt }
            }
        };
        let offline_opt = match (&explorer, &offline) {
            (Explorer::Expansion, Some(b)) if !wiring.freeze_offline_policy => Some(AdamState::new(b)),
            _ => None,
        };
        Ok(Self {
            learner,
            offline,
            offline_opt,
            explorer,
            alpha: cfg.iql_hyper(env)?.temperature(),
        })
    }

    fn act(&mut self, obs: &[f64], env_step: u64, episode_step: usize, progress: f64, rng: &mut ChaCha8Rng) -> Result<(Vec<f64>, Option<SelectionLogEntry>)> {
        let indicator = |chosen: usize| SelectionLogEntry {
            env_step,
            chosen_index: chosen,
            probabilities: if chosen == 0 { [1.0, 0.0] } else { [0.0, 1.0] },
        };
        let learner = self.learner.actor();
        match (&mut self.explorer, &self.offline) {
            (Explorer::Single, _) => Ok((learner.sample(obs, rng)?, None)),
            (Explorer::Expansion, Some(b)) => {
                let set = PolicySet::expanded(b, learner, self.alpha, self.offline_opt.is_none())?;
                let (q1, q2) = self.learner.critics();
                let (a, entry) = pex_act(&set, q1, q2, obs, env_step, rng, ActMode::Explore)?;
                Ok((a, Some(entry)))
            }
            (Explorer::Bt(state), Some(b)) => {
                let (a, i) = bt_act(b, learner, state, obs, rng)?;
                Ok((a, Some(indicator(i))))
            }
            (Explorer::Jsrl { max_guide_steps }, Some(b)) => {
                let (a, i) = jsrl_act(b, learner, episode_step, progress, *max_guide_steps, obs, rng)?;
                Ok((a, Some(indicator(i))))
            }
            _ => unreachable!("offline policy present for every non-single explorer"),
        }
    }

    fn update(&mut self, cfg: &RunConfig, env: &Env, batch: &crate::replay::Batch, rng: &mut ChaCha8Rng) -> Result<()> {
        let expansion = matches!(self.explorer, Explorer::Expansion);
        match &mut self.learner {
            Learner::Iql { nets, opt } => {
                let hyper = cfg.iql_hyper(env)?;
                iql_update(nets, &hyper, batch, opt, &cfg.learning_rates(), cfg.target_speed, IqlFlags::default())?;
                if let (Some(b), Some(b_opt)) = (&mut self.offline, &mut self.offline_opt) {
                    let (_, g) = awr_policy_loss(nets, b, batch, &hyper)?;
                    adam_step(b, &g, b_opt, cfg.actor_lr)?;
                }
            }
            Learner::Sac { nets, opt } => {
                let offline = if expansion { self.offline.as_ref() } else { None };
                sac_update(nets, offline, self.alpha, batch, opt, &cfg.sac_hyper(env), rng)?;
            }
        }
        Ok(())
    }

    fn evaluate<R: Rng + ?Sized>(&self, env: &Env, episodes: usize, rng: &mut R) -> Result<EvalResult> {
        let learner = self.learner.actor();
        match (&self.explorer, &self.offline) {
            (Explorer::Expansion, Some(b)) => {
                let set = PolicySet::expanded(b, learner, self.alpha, true)?;
                let (q1, q2) = self.learner.critics();
                evaluate_policy_set(env, &set, q1, q2, episodes, rng)
            }
            _ => evaluate_actor(env, learner, episodes, rng),
        }
    }
}

fn len_minus_one(net: &MlpParams) -> usize {
    net.layer_sizes().len() - 1
}

#[derive(Debug, Clone)]
pub struct OnlineOutcome {
    pub log: RunLog,
    /// π_β at the end of the phase, if the strategy carries one.
    pub offline_policy: Option<GaussianActor>,
    pub learner: GaussianActor,
}

/// Online fine-tuning under the configured wiring. Per env step the training
/// rng is consumed in order: action selection, episode reset, then batch
/// sampling and update noise. Evaluation uses its own generator.
pub fn run_online_phase(cfg: &RunConfig, checkpoint: Option<&Checkpoint>, dataset: Option<&OfflineDataset>) -> Result<OnlineOutcome> {
    let started = Instant::now();
    let wiring = cfg.validate()?;
    let env = cfg.env()?;
    let spec = env.spec().clone();
    let offline_data = if wiring.use_offline_buffer {
        let d = dataset.ok_or_else(|| Error::Data(format!("strategy '{}' needs the offline dataset", cfg.strategy.name())))?;
        check_dataset(&env, d)?;
        Some(d)
    } else {
        None
    };
    let mut rng = phase_rng(cfg.seed, ONLINE_STREAM);
    let mut agent = Agent::build(cfg, &wiring, &env, checkpoint, &mut rng)?;
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity, spec.obs_dim, spec.act_dim)?;
    let eval = |agent: &Agent, step: u64| -> Result<EvalRecord> {
        let mut eval_rng = phase_rng(cfg.seed, EVAL_STREAM);
        Ok(record(&env, step, agent.evaluate(&env, cfg.eval_episodes, &mut eval_rng)?))
    };

    let mut records = vec![eval(&agent, 0)?];
    let mut selection_log = Vec::new();
    let mut train_env = env.clone();
    let mut obs = train_env.reset(&mut rng);
    let mut episode_step = 0;
    let first_update = cfg.initial_collection_steps.max(1);
    for step in 1..=cfg.online_steps {
        let progress = (step - 1) as f64 / cfg.online_steps as f64;
        let (action, entry) = agent.act(&obs, step as u64, episode_step, progress, &mut rng)?;
        selection_log.extend(entry);
        let t = train_env.step(&action)?;
        buffer.push(&t)?;
        episode_step += 1;
        if t.done || t.truncated {
            obs = train_env.reset(&mut rng);
            episode_step = 0;
        } else {
            obs = t.next_obs;
        }
        if step >= first_update {
            for _ in 0..cfg.updates_per_env_step {
                let batch = sample_mixed(&buffer, offline_data, cfg.batch_size, cfg.offline_ratio, &mut rng)?;
                agent.update(cfg, &env, &batch, &mut rng)?;
            }
        }
        if step % cfg.eval_interval == 0 || step == cfg.online_steps {
            records.push(eval(&agent, step as u64)?);
        }
    }
    let log = RunLog {
        label: cfg.label(),
        env_id: cfg.env_id.clone(),
        seed: cfg.seed,
        config_hash: cfg.config_hash(),
        records,
        selection_log,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    Ok(OnlineOutcome {
        log,
        learner: agent.learner.actor().clone(),
        offline_policy: agent.offline,
    })
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub offline: Option<OfflineOutcome>,
    pub online: OnlineOutcome,
}

/// Dataset, offline phase when the strategy uses one, then the online phase.
pub fn run_experiment(cfg: &RunConfig) -> Result<ExperimentOutcome> {
    let wiring = cfg.validate()?;
    let needs_data = wiring.use_offline_buffer || cfg.strategy.uses_offline_phase();
    let dataset = if needs_data { Some(prepare_dataset(cfg)?) } else { None };
    let offline = match &dataset {
        Some(d) if cfg.strategy.uses_offline_phase() => Some(run_offline_phase(cfg, d)?),
        _ => None,
    };
    let online = run_online_phase(cfg, offline.as_ref().map(|o| &o.checkpoint), dataset.as_ref())?;
    Ok(ExperimentOutcome { offline, online })
}
