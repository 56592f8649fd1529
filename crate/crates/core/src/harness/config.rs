use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::bridge::{resolve_wiring, AblationFlags, BridgeStrategy, Wiring};
use crate::envs::{BehaviorGrade, Env};
use crate::error::{Error, Result};
use crate::iql::{IqlHyper, LearningRates};
use crate::sac::SacHyper;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OfflineAlgo {
    Iql,
    Bc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OnlineAlgo {
    Iql,
    Sac,
}

/// One experiment. Every field has a default, so a config file only lists
/// what it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub env_id: String,
    /// Existing PEXD file. When absent a dataset is generated from
    /// `dataset_grade` and `dataset_size`.
    pub dataset: Option<PathBuf>,
    pub dataset_grade: BehaviorGrade,
    pub dataset_size: usize,
    pub strategy: BridgeStrategy,
    pub ablation: AblationFlags,
    pub offline_algo: OfflineAlgo,
    pub online_algo: OnlineAlgo,
    pub offline_steps: usize,
    pub online_steps: usize,
    pub batch_size: usize,
    pub hidden: Vec<usize>,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub value_lr: f64,
    pub ent_lr: f64,
    pub target_speed: f64,
    pub discount: f64,
    /// `None` picks 0.9 for sparse and 0.7 for dense environments.
    pub expectile: Option<f64>,
    /// `None` picks 10 for sparse and 3 for dense environments.
    pub inverse_temperature: Option<f64>,
    pub weight_clamp: f64,
    pub buffer_capacity: usize,
    /// Share of each online batch drawn from the offline dataset.
    pub offline_ratio: f64,
    pub initial_collection_steps: usize,
    pub updates_per_env_step: usize,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    /// Offline evaluation cadence in gradient steps; 0 evaluates only at the end.
    pub offline_eval_interval: usize,
    pub init_ent_coef: f64,
    /// `None` uses `−act_dim`.
    pub target_entropy: Option<f64>,
    /// Window size in env steps for the policy usage summary.
    pub usage_bucket: u64,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env_id: crate::envs::POINTMAZE_UMAZE.to_string(),
            dataset: None,
            dataset_grade: BehaviorGrade::Medium,
            dataset_size: 100_000,
            strategy: BridgeStrategy::Pex,
            ablation: AblationFlags::default(),
            offline_algo: OfflineAlgo::Iql,
            online_algo: OnlineAlgo::Iql,
            offline_steps: 50_000,
            online_steps: 100_000,
            batch_size: 256,
            hidden: vec![64, 64],
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            value_lr: 3e-4,
            ent_lr: 3e-4,
            target_speed: 5e-3,
            discount: 0.99,
            expectile: None,
            inverse_temperature: None,
            weight_clamp: 100.0,
            buffer_capacity: 1_000_000,
            offline_ratio: 0.5,
            initial_collection_steps: 5000,
            updates_per_env_step: 1,
            eval_interval: 2000,
            eval_episodes: 10,
            offline_eval_interval: 10_000,
            init_ent_coef: 0.1,
            target_entropy: None,
            usage_bucket: 2000,
            seed: 0,
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(config_err)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Applies `key=value` overrides. Keys are dotted paths such as
    /// `ablation.freeze_offline_policy`; values are parsed as JSON and fall
    /// back to a plain string.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        if overrides.is_empty() {
            return Ok(());
        }
        let mut root = serde_json::to_value(&*self).map_err(config_err)?;
        for item in overrides {
            let item = item.as_ref();
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {item:?} is not key=value")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            let mut slot = &mut root;
            let parts: Vec<&str> = key.split('.').collect();
            for (i, part) in parts.iter().enumerate() {
                let obj = slot
                    .as_object_mut()
                    .ok_or_else(|| Error::Config(format!("override key {key:?}: '{part}' is not inside an object")))?;
                if i + 1 == parts.len() {
                    obj.insert(part.to_string(), value.clone());
                    break;
                }
                let next = obj.entry(part.to_string()).or_insert(Value::Null);
                if next.is_null() {
                    *next = Value::Object(Default::default());
                }
                slot = next;
            }
        }
        *self = serde_json::from_value(root).map_err(config_err)?;
        Ok(())
    }

    /// Checks ranges and flag consistency and returns the resolved wiring.
    pub fn validate(&self) -> Result<Wiring> {
        let env = self.env()?;
        let wiring = resolve_wiring(&self.strategy, &self.ablation)?;
        let positive = [
            ("batch_size", self.batch_size),
            ("eval_episodes", self.eval_episodes),
            ("eval_interval", self.eval_interval),
            ("buffer_capacity", self.buffer_capacity),
            ("updates_per_env_step", self.updates_per_env_step),
            ("usage_bucket", self.usage_bucket as usize),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden sizes must be positive".into()));
        }
        for (name, v) in [
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
            ("value_lr", self.value_lr),
            ("ent_lr", self.ent_lr),
            ("init_ent_coef", self.init_ent_coef),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.target_speed > 0.0 && self.target_speed <= 1.0) {
            return Err(Error::Config(format!("target_speed must be in (0, 1], got {}", self.target_speed)));
        }
        if !(0.0..=1.0).contains(&self.offline_ratio) {
            return Err(Error::Config(format!("offline_ratio must be in [0, 1], got {}", self.offline_ratio)));
        }
        if let Some(h) = self.target_entropy.filter(|h| !h.is_finite()) {
            return Err(Error::Config(format!("target_entropy must be finite, got {h}")));
        }
        self.iql_hyper(&env)?;
        if self.dataset.is_none() && self.dataset_size == 0 {
            return Err(Error::Config("dataset_size must be positive when no dataset file is given".into()));
        }
        match self.offline_algo {
            OfflineAlgo::Bc if wiring.transfer_critic => {
                return Err(Error::Config("behavior cloning trains no critic to transfer; set ablation.transfer_critic = false".into()));
            }
            OfflineAlgo::Iql if self.strategy == BridgeStrategy::BcOffline => {
                return Err(Error::Config("strategy bc-offline requires offline_algo = bc".into()));
            }
            _ => {}
        }
        if self.online_algo == OnlineAlgo::Sac && wiring.policy_expansion && !wiring.freeze_offline_policy {
            return Err(Error::Config("online sac keeps the offline policy frozen; freeze_offline_policy = false is only supported with online iql".into()));
        }
        Ok(wiring)
    }

    pub fn env(&self) -> Result<Env> {
        Env::from_id(&self.env_id)
    }

    pub fn iql_hyper(&self, env: &Env) -> Result<IqlHyper> {
        let base = if env.is_sparse() { IqlHyper::SPARSE } else { IqlHyper::DENSE };
        let hyper = IqlHyper {
            expectile: self.expectile.unwrap_or(base.expectile),
            inverse_temperature: self.inverse_temperature.unwrap_or(base.inverse_temperature),
            weight_clamp: self.weight_clamp,
            discount: self.discount,
        };
        hyper.validate()?;
        Ok(hyper)
    }

    pub fn learning_rates(&self) -> LearningRates {
        LearningRates {
            actor: self.actor_lr,
            critic: self.critic_lr,
            value: self.value_lr,
        }
    }

    pub fn sac_hyper(&self, env: &Env) -> SacHyper {
        SacHyper {
            discount: self.discount,
            target_entropy: self.target_entropy.unwrap_or_else(|| env.spec().target_entropy()),
            actor_lr: self.actor_lr,
            critic_lr: self.critic_lr,
            ent_lr: self.ent_lr,
            target_speed: self.target_speed,
        }
    }

    /// CRC32 of the compact JSON form, as 8 hex digits.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        format!("{:08x}", crc32fast::hash(json.as_bytes()))
    }

    /// Strategy name plus a suffix for every ablation override.
    pub fn label(&self) -> String {
        let mut label = self.strategy.name().to_string();
        let a = &self.ablation;
        for (name, v) in [
            ("buffer", a.use_offline_buffer),
            ("critic", a.transfer_critic),
            ("policy", a.transfer_policy),
            ("freeze", a.freeze_offline_policy),
        ] {
            if let Some(v) = v {
                label.push_str(if v { "+" } else { "-no-" });
                label.push_str(name);
            }
        }
        if self.online_algo == OnlineAlgo::Sac {
            label.push_str("-sac");
        }
        label
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let cfg = RunConfig::default();
        let w = cfg.validate().unwrap();
        assert!(w.policy_expansion && w.freeze_offline_policy);
        let h = cfg.iql_hyper(&cfg.env().unwrap()).unwrap();
        assert_eq!((h.expectile, h.inverse_temperature), (0.9, 10.0));
        let dense = RunConfig {
            env_id: "linereach".into(),
            ..RunConfig::default()
        };
        let h = dense.iql_hyper(&dense.env().unwrap()).unwrap();
        assert_eq!((h.expectile, h.inverse_temperature), (0.7, 3.0));
    }

    #[test]
    fn json_round_trip_and_unknown_keys() {
        let cfg = RunConfig {
            strategy: BridgeStrategy::Bt { zeta_a: 2.0, epsilon: 0.1 },
            seed: 7,
            ..RunConfig::default()
        };
        assert_eq!(RunConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        let err = RunConfig::from_json(r#"{"batch": 3}"#).unwrap_err();
        assert!(err.is_config());
        let partial = RunConfig::from_json(r#"{"strategy": {"kind": "scratch"}, "online_steps": 10}"#).unwrap();
        assert_eq!(partial.strategy, BridgeStrategy::Scratch);
        assert_eq!(partial.online_steps, 10);
        assert_eq!(partial.batch_size, 256);
    }

    #[test]
    fn overrides() {
        let mut cfg = RunConfig::default();
        cfg.apply_overrides(&[
            "batch_size=32",
            "ablation.freeze_offline_policy=false",
            "env_id=linereach",
            "strategy.kind=direct",
            "hidden=[8]",
        ])
        .unwrap();
        assert_eq!(cfg.batch_size, 32);
        assert_eq!(cfg.ablation.freeze_offline_policy, Some(false));
        assert_eq!(cfg.env_id, "linereach");
        assert_eq!(cfg.strategy, BridgeStrategy::Direct);
        assert_eq!(cfg.hidden, vec![8]);
        assert!(cfg.clone().apply_overrides(&["nope=1"]).unwrap_err().is_config());
        assert!(cfg.clone().apply_overrides(&["batch_size"]).unwrap_err().is_config());
        assert!(cfg.apply_overrides(&["batch_size=-1"]).unwrap_err().is_config());
    }

    #[test]
    fn contradictions_rejected() {
        let bad = [
            r#"{"strategy": {"kind": "pex"}, "ablation": {"transfer_policy": false}}"#,
            r#"{"strategy": {"kind": "scratch"}, "ablation": {"transfer_critic": true}}"#,
            r#"{"strategy": {"kind": "bc-offline"}}"#,
            r#"{"offline_algo": "bc"}"#,
            r#"{"online_algo": "sac", "ablation": {"freeze_offline_policy": false}}"#,
            r#"{"strategy": {"kind": "bt", "zeta_a": 1.0, "epsilon": 0.1}}"#,
            r#"{"env_id": "nowhere"}"#,
            r#"{"batch_size": 0}"#,
            r#"{"expectile": 1.0}"#,
        ];
        for text in bad {
            let cfg = RunConfig::from_json(text).unwrap();
            assert!(cfg.validate().unwrap_err().is_config(), "{text}");
        }
        let ok = [
            r#"{"strategy": {"kind": "bc-offline"}, "offline_algo": "bc"}"#,
            r#"{"offline_algo": "bc", "ablation": {"transfer_critic": false}}"#,
            r#"{"ablation": {"use_offline_buffer": false}}"#,
            r#"{"ablation": {"transfer_critic": false}}"#,
            r#"{"ablation": {"freeze_offline_policy": false}}"#,
            r#"{"strategy": {"kind": "direct"}, "ablation": {"transfer_policy": false}}"#,
        ];
        for text in ok {
            RunConfig::from_json(text).unwrap().validate().unwrap();
        }
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.config_hash(), b.config_hash());
        b.seed = 1;
        assert_ne!(a.config_hash(), b.config_hash());
        assert_eq!(a.config_hash().len(), 8);
    }

    #[test]
    fn labels() {
        let mut cfg = RunConfig::default();
        assert_eq!(cfg.label(), "pex");
        cfg.ablation.freeze_offline_policy = Some(false);
        assert_eq!(cfg.label(), "pex-no-freeze");
    }
}
