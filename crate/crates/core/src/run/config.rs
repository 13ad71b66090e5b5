use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::bev::{EncoderConfig, PillarConfig};
use crate::error::{Error, Result};
use crate::eval::VelocityMode;
use crate::sac::{AgentConfig, TrainConfig};
use crate::sim::{SimConfig, WorldSpec};
use crate::ssl::SslConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Paper,
    #[default]
    Desk,
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Self::Paper),
            "desk" => Ok(Self::Desk),
            other => Err(Error::config("profile", format!("unknown profile `{other}` (paper or desk)"))),
        }
    }
}

/// Everything a run depends on. Every field is serialized and, except the
/// output directory and seed list, hashed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub profile: Profile,
    /// Built-in world preset, used when `world` is absent.
    pub scenario: String,
    /// Random pedestrians added to the preset.
    pub peds: usize,
    /// Explicit world; overrides `scenario` and `peds`.
    pub world: Option<WorldSpec>,
    pub pillar: PillarConfig,
    pub encoder: EncoderConfig,
    pub ssl: SslConfig,
    pub train: TrainConfig,
    pub sim: SimConfig,
    /// Environment steps per training run.
    pub steps: u64,
    pub seeds: Vec<u64>,
    pub log_every: u64,
    pub checkpoint_every: u64,
    pub eval_episodes: usize,
    /// First evaluation seed; training episodes use a disjoint range.
    pub eval_seed: u64,
    pub velocity_mode: VelocityMode,
    pub out_dir: PathBuf,
}

impl RunConfig {
    pub fn preset(profile: Profile) -> Self {
        match profile {
            Profile::Desk => Self {
                profile,
                scenario: "open".into(),
                peds: 0,
                world: None,
                pillar: PillarConfig::desk(),
                encoder: EncoderConfig::desk(),
                ssl: SslConfig {
                    proj_hidden: 64,
                    pred_hidden: 32,
                    action_hidden: 32,
                    tcl_hidden: 64,
                    tcl_embed: 32,
                    ..SslConfig::default()
                },
                train: TrainConfig {
                    actor_hidden: 128,
                    critic_hidden: 128,
                    ..TrainConfig::default()
                },
                sim: SimConfig::desk(),
                steps: 30_000,
                seeds: vec![0, 1, 2],
                log_every: 100,
                checkpoint_every: 10_000,
                eval_episodes: 50,
                eval_seed: 1_000_000,
                velocity_mode: VelocityMode::AllEpisodes,
                out_dir: PathBuf::from("runs"),
            },
            Profile::Paper => Self {
                profile,
                scenario: "square".into(),
                peds: 0,
                world: None,
                pillar: PillarConfig::sim(),
                encoder: EncoderConfig::paper(),
                ssl: SslConfig::default(),
                train: TrainConfig::default(),
                sim: SimConfig::default(),
                steps: 500_000,
                seeds: vec![0, 1, 2],
                log_every: 100,
                checkpoint_every: 50_000,
                eval_episodes: 100,
                eval_seed: 1_000_000,
                velocity_mode: VelocityMode::AllEpisodes,
                out_dir: PathBuf::from("runs"),
            },
        }
    }

    /// The profile preset with `overrides` merged in key by key. Unknown
    /// keys are rejected.
    pub fn merged(profile: Profile, overrides: &Value) -> Result<Self> {
        let mut base = serde_json::to_value(Self::preset(profile))?;
        merge(&mut base, overrides);
        let cfg: Self = serde_json::from_value(base).map_err(|e| Error::config("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a JSON file. A `profile` key in the file selects the base
    /// preset unless `profile` is given.
    pub fn load(path: &Path, profile: Option<Profile>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let v: Value = serde_json::from_str(&text)?;
        if !v.is_object() {
            return Err(Error::config("config", "top level must be a JSON object"));
        }
        let from_file = v.get("profile").and_then(Value::as_str).map(str::parse).transpose()?;
        let profile = profile.or(from_file).unwrap_or_default();
        let mut v = v;
        v.as_object_mut().expect("object").insert("profile".into(), serde_json::to_value(profile)?);
        Self::merged(profile, &v)
    }

    pub fn world_spec(&self) -> Result<WorldSpec> {
        match &self.world {
            Some(w) => Ok(w.clone()),
            None => WorldSpec::preset(&self.scenario, self.peds),
        }
    }

    pub fn agent_config(&self) -> Result<AgentConfig> {
        Ok(AgentConfig {
            pillar: self.pillar.clone(),
            encoder: self.encoder.clone(),
            ssl: self.ssl.clone(),
            train: self.train.clone(),
            goal_scale: self.world_spec()?.diagonal(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.world_spec()?.validate()?;
        self.sim.validate()?;
        self.agent_config()?.validate()?;
        if self.log_every == 0 {
            return Err(Error::config("log_every", "must be at least 1"));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::config("checkpoint_every", "must be at least 1"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "need at least one seed"));
        }
        if self.eval_episodes == 0 {
            return Err(Error::config("eval_episodes", "must be at least 1"));
        }
        Ok(())
    }

    /// First 16 hex digits of SHA-256 over the canonical JSON, without
    /// `out_dir` and `seeds`.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        let obj = v.as_object_mut().expect("object");
        obj.remove("out_dir");
        obj.remove("seeds");
        let digest = Sha256::digest(v.to_string().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Comment line content embedded in every artifact.
    pub fn stamp(&self, seed: u64) -> String {
        format!("config_hash={},seed={seed}", self.hash())
    }
}

/// Recursive object merge; non-object values replace.
pub fn merge(base: &mut Value, over: &Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}
