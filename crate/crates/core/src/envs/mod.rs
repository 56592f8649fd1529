//! Desk-scale environments: a sparse-reward point maze (antmaze analog) and a
//! dense-reward reaching task (locomotion analog), offline dataset generators
//! at graded behavior quality, and D4RL-style score normalization.

mod linereach;
mod pointmaze;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use linereach::LineReach;
pub use pointmaze::{MazeLayout, PointMaze, GOAL_RADIUS, MAX_STEP, MEDIUM_MAZE, START_JITTER, UMAZE};

use crate::error::{Error, Result};

pub const POINTMAZE_UMAZE: &str = "pointmaze-umaze";
pub const POINTMAZE_MEDIUM: &str = "pointmaze-medium";
pub const LINEREACH: &str = "linereach";

pub const POINTMAZE_MAX_STEPS: usize = 300;
pub const LINEREACH_MAX_STEPS: usize = 200;

/// Seed used to compute reference returns.
pub const REFERENCE_SEED: u64 = 0;
pub const REFERENCE_EPISODES: usize = 200;

/// Stored reference returns `(random, expert)` for the built-in environments,
/// reproduced exactly by [`compute_reference_returns`] with [`REFERENCE_SEED`].
const UMAZE_REFERENCES: (f64, f64) = (0.0, 1.0);
const MEDIUM_MAZE_REFERENCES: (f64, f64) = (0.0, 1.0);
const LINEREACH_REFERENCES: (f64, f64) = (-635.010090415315, -58.56583418268913);

/// Medium-grade behavior: probability of a uniform action, and Gaussian noise on the rest.
pub const MEDIUM_EPSILON: f64 = 0.4;
pub const MEDIUM_NOISE_STD: f64 = 0.3;
/// Medium-replay anneals its uniform-action probability between these values.
pub const REPLAY_EPSILON_START: f64 = 1.0;
pub const REPLAY_EPSILON_END: f64 = 0.4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub env_id: String,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub max_episode_steps: usize,
    pub reference_random_return: f64,
    pub reference_expert_return: f64,
}

impl EnvSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        env_id: impl Into<String>,
        obs_dim: usize,
        action_low: Vec<f64>,
        action_high: Vec<f64>,
        max_episode_steps: usize,
        reference_random_return: f64,
        reference_expert_return: f64,
    ) -> Result<Self> {
        crate::distributions::check_bounds(&action_low, &action_high)?;
        if !(reference_expert_return > reference_random_return) {
            return Err(Error::InvalidArgument(format!(
                "expert reference {reference_expert_return} must exceed random reference {reference_random_return}"
            )));
        }
        if obs_dim == 0 || action_low.is_empty() || max_episode_steps == 0 {
            return Err(Error::InvalidArgument("environment dimensions must be positive".into()));
        }
        Ok(Self {
            env_id: env_id.into(),
            obs_dim,
            act_dim: action_low.len(),
            action_low,
            action_high,
            max_episode_steps,
            reference_random_return,
            reference_expert_return,
        })
    }

    /// `100 · (raw − random) / (expert − random)`.
    pub fn normalized_score(&self, raw_return: f64) -> f64 {
        normalized_score(self, raw_return)
    }

    /// SAC target entropy `−d`.
    pub fn target_entropy(&self) -> f64 {
        -(self.act_dim as f64)
    }
}

pub fn normalized_score(spec: &EnvSpec, raw_return: f64) -> f64 {
    100.0 * (raw_return - spec.reference_random_return) / (spec.reference_expert_return - spec.reference_random_return)
}

/// One environment step. `done` marks true termination only; hitting the
/// time limit sets `truncated` instead.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub done: bool,
    pub truncated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BehaviorGrade {
    Random,
    Medium,
    Expert,
    MediumReplay,
}

impl BehaviorGrade {
    pub fn code(self) -> u8 {
        match self {
            BehaviorGrade::Random => 0,
            BehaviorGrade::Medium => 1,
            BehaviorGrade::Expert => 2,
            BehaviorGrade::MediumReplay => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => BehaviorGrade::Random,
            1 => BehaviorGrade::Medium,
            2 => BehaviorGrade::Expert,
            3 => BehaviorGrade::MediumReplay,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            BehaviorGrade::Random => "random",
            BehaviorGrade::Medium => "medium",
            BehaviorGrade::Expert => "expert",
            BehaviorGrade::MediumReplay => "medium-replay",
        }
    }
}

impl std::str::FromStr for BehaviorGrade {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            BehaviorGrade::Random,
            BehaviorGrade::Medium,
            BehaviorGrade::Expert,
            BehaviorGrade::MediumReplay,
        ]
        .into_iter()
        .find(|g| g.name() == s)
        .ok_or_else(|| Error::Config(format!("unknown behavior grade {s:?}")))
    }
}

#[derive(Debug, Clone)]
enum Dynamics {
    Maze(PointMaze),
    Line(LineReach),
}

/// An environment instance with episode bookkeeping.
#[derive(Debug, Clone)]
pub struct Env {
    spec: EnvSpec,
    dynamics: Dynamics,
    obs: Vec<f64>,
    elapsed: usize,
    finished: bool,
}

impl Env {
    /// Built-in environments: `pointmaze-umaze`, `pointmaze-medium`, `linereach`.
    pub fn from_id(env_id: &str) -> Result<Self> {
        match env_id {
            POINTMAZE_UMAZE => Self::point_maze(POINTMAZE_UMAZE, MazeLayout::parse(UMAZE)?, Some(UMAZE_REFERENCES)),
            POINTMAZE_MEDIUM => {
                Self::point_maze(POINTMAZE_MEDIUM, MazeLayout::parse(MEDIUM_MAZE)?, Some(MEDIUM_MAZE_REFERENCES))
            }
            LINEREACH => Self::line_reach(Some(LINEREACH_REFERENCES)),
            other => Err(Error::Config(format!("unknown environment {other:?}"))),
        }
    }

    /// A point maze over an arbitrary layout. Without stored references they
    /// are computed from [`REFERENCE_EPISODES`] rollouts.
    pub fn point_maze(env_id: &str, layout: MazeLayout, references: Option<(f64, f64)>) -> Result<Self> {
        let placeholder = EnvSpec::new(env_id, 2, vec![-1.0; 2], vec![1.0; 2], POINTMAZE_MAX_STEPS, 0.0, 1.0)?;
        let env = Self::assemble(placeholder, Dynamics::Maze(PointMaze::new(layout)));
        env.with_references(references)
    }

    pub fn line_reach(references: Option<(f64, f64)>) -> Result<Self> {
        let placeholder = EnvSpec::new(LINEREACH, 2, vec![-1.0], vec![1.0], LINEREACH_MAX_STEPS, 0.0, 1.0)?;
        Self::assemble(placeholder, Dynamics::Line(LineReach::new())).with_references(references)
    }

    fn assemble(spec: EnvSpec, dynamics: Dynamics) -> Self {
        let obs = vec![0.0; spec.obs_dim];
        Self {
            spec,
            dynamics,
            obs,
            elapsed: 0,
            finished: true,
        }
    }

    fn with_references(mut self, references: Option<(f64, f64)>) -> Result<Self> {
        let (random, expert) = match references {
            Some(r) => r,
            None => compute_reference_returns(&self, REFERENCE_SEED)?,
        };
        self.spec = EnvSpec::new(
            self.spec.env_id.clone(),
            self.spec.obs_dim,
            self.spec.action_low.clone(),
            self.spec.action_high.clone(),
            self.spec.max_episode_steps,
            random,
            expert,
        )?;
        Ok(self)
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn maze_layout(&self) -> Option<&MazeLayout> {
        match &self.dynamics {
            Dynamics::Maze(m) => Some(m.layout()),
            Dynamics::Line(_) => None,
        }
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self.dynamics, Dynamics::Maze(_))
    }

    pub fn current_obs(&self) -> &[f64] {
        &self.obs
    }

    pub fn elapsed_steps(&self) -> usize {
        self.elapsed
    }

    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<f64> {
        self.obs = match &mut self.dynamics {
            Dynamics::Maze(m) => m.reset(rng),
            Dynamics::Line(l) => l.reset(),
        };
        self.elapsed = 0;
        self.finished = false;
        self.obs.clone()
    }

    pub fn step(&mut self, action: &[f64]) -> Result<Transition> {
        if self.finished {
            return Err(Error::EpisodeFinished);
        }
        if action.len() != self.spec.act_dim {
            return Err(Error::shape("Env::step action", self.spec.act_dim, action.len()));
        }
        let clipped = crate::distributions::clip_action(action, &self.spec.action_low, &self.spec.action_high);
        let (next_obs, reward, done) = match &mut self.dynamics {
            Dynamics::Maze(m) => m.step(&clipped),
            Dynamics::Line(l) => {
                let (o, r) = l.step(&clipped);
                (o, r, false)
            }
        };
        self.elapsed += 1;
        let truncated = !done && self.elapsed >= self.spec.max_episode_steps;
        self.finished = done || truncated;
        let t = Transition {
            obs: std::mem::replace(&mut self.obs, next_obs.clone()),
            action: clipped,
            reward,
            next_obs,
            done,
            truncated,
        };
        Ok(t)
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    /// Scripted expert controller for this environment.
    pub fn expert_action(&self, obs: &[f64]) -> Vec<f64> {
        match &self.dynamics {
            Dynamics::Maze(m) => m.expert_action(obs),
            Dynamics::Line(_) => LineReach::expert_action(obs),
        }
    }

    pub fn random_action<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.spec
            .action_low
            .iter()
            .zip(&self.spec.action_high)
            .map(|(&lo, &hi)| rng.random_range(lo..=hi))
            .collect()
    }

    /// Behavior action at a given grade; `progress` in `[0, 1]` drives the
    /// medium-replay annealing.
    pub fn behavior_action<R: Rng + ?Sized>(&self, grade: BehaviorGrade, obs: &[f64], progress: f64, rng: &mut R) -> Vec<f64> {
        let epsilon = match grade {
            BehaviorGrade::Random => return self.random_action(rng),
            BehaviorGrade::Expert => return self.expert_action(obs),
            BehaviorGrade::Medium => MEDIUM_EPSILON,
            BehaviorGrade::MediumReplay => {
                REPLAY_EPSILON_START + (REPLAY_EPSILON_END - REPLAY_EPSILON_START) * progress.clamp(0.0, 1.0)
            }
        };
        if rng.random::<f64>() < epsilon {
            return self.random_action(rng);
        }
        let noise = Normal::new(0.0, MEDIUM_NOISE_STD).expect("valid std");
        let noisy: Vec<f64> = self.expert_action(obs).iter().map(|a| a + noise.sample(rng)).collect();
        crate::distributions::clip_action(&noisy, &self.spec.action_low, &self.spec.action_high)
    }
}

/// Rolls out the behavior controller for `grade` until `n_transitions` are
/// collected. The final episode may be cut short.
pub fn generate_offline_dataset<R: Rng + ?Sized>(env: &mut Env, grade: BehaviorGrade, n_transitions: usize, rng: &mut R) -> Result<Vec<Transition>> {
    if n_transitions == 0 {
        return Err(Error::InvalidArgument("dataset needs at least one transition".into()));
    }
    let mut out = Vec::with_capacity(n_transitions);
    let mut obs = env.reset(rng);
    while out.len() < n_transitions {
        let progress = out.len() as f64 / n_transitions as f64;
        let action = env.behavior_action(grade, &obs, progress, rng);
        let t = env.step(&action)?;
        let finished = t.done || t.truncated;
        obs = t.next_obs.clone();
        out.push(t);
        if finished {
            obs = env.reset(rng);
        }
    }
    Ok(out)
}

/// Undiscounted returns of complete episodes (ending in `done` or `truncated`).
pub fn episode_returns(transitions: &[Transition]) -> Vec<f64> {
    let mut returns = Vec::new();
    let mut acc = 0.0;
    for t in transitions {
        acc += t.reward;
        if t.done || t.truncated {
            returns.push(acc);
            acc = 0.0;
        }
    }
    returns
}

/// Runs one full episode with `policy` and returns its undiscounted return.
pub fn rollout_return<R: Rng + ?Sized>(env: &mut Env, rng: &mut R, mut policy: impl FnMut(&Env, &[f64], &mut R) -> Vec<f64>) -> Result<f64> {
    let mut obs = env.reset(rng);
    let mut total = 0.0;
    loop {
        let action = policy(env, &obs, rng);
        let t = env.step(&action)?;
        total += t.reward;
        if t.done || t.truncated {
            return Ok(total);
        }
        obs = t.next_obs;
    }
}

/// Mean returns of the random and the expert controller over
/// [`REFERENCE_EPISODES`] episodes each, from a fixed seed.
pub fn compute_reference_returns(env: &Env, seed: u64) -> Result<(f64, f64)> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut env = env.clone();
    let mut random = 0.0;
    for _ in 0..REFERENCE_EPISODES {
        random += rollout_return(&mut env, &mut rng, |e, _, r| e.random_action(r))?;
    }
    let mut expert = 0.0;
    for _ in 0..REFERENCE_EPISODES {
        expert += rollout_return(&mut env, &mut rng, |e, o, _| e.expert_action(o))?;
    }
    let n = REFERENCE_EPISODES as f64;
    Ok((random / n, expert / n))
}
