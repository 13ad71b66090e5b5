use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::nn::Checkpoint;
use crate::sac::{record, rng_stream, streams, Agent, ObsRecord, ReplayBuffer, UpdateMetrics};
use crate::sim::Env;

use super::RunConfig;

pub const TRAIN_CSV_HEADER: &str = "step,L_sc,L_tc,critic_loss,actor_loss,alpha";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const TRAIN_CSV: &str = "train.csv";

/// Reset seed of training episode `episode`. Depends only on the run seed,
/// so runs that differ in anything else see the same layouts in the same
/// order.
pub fn episode_seed(seed: u64, episode: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17) ^ episode
}

fn csv_cell(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn csv_row(step: u64, m: &UpdateMetrics) -> String {
    format!(
        "{step},{},{},{},{},{}",
        csv_cell(m.l_sc),
        csv_cell(m.l_tc),
        m.critic_loss,
        m.actor_loss,
        m.alpha
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub steps: u64,
    pub episodes: u64,
    pub updates: u64,
    pub checkpoint: PathBuf,
    pub csv: PathBuf,
}

/// Environment interaction plus updates for one seed.
pub struct Trainer {
    pub config: RunConfig,
    pub seed: u64,
    pub agent: Agent,
    pub env: Env,
    pub buffer: ReplayBuffer,
    explore_rng: ChaCha8Rng,
    step: u64,
    episode: u64,
    obs: ObsRecord,
    ep_return: f64,
    out: PathBuf,
}

impl Trainer {
    pub fn new(config: RunConfig, seed: u64, out: &Path) -> Result<Self> {
        config.validate()?;
        let agent = Agent::new(config.agent_config()?, seed)?;
        Self::assemble(config, seed, out, agent, 0, 0, rng_stream(seed, streams::EXPLORE))
    }

    fn assemble(
        config: RunConfig,
        seed: u64,
        out: &Path,
        agent: Agent,
        step: u64,
        episode: u64,
        explore_rng: ChaCha8Rng,
    ) -> Result<Self> {
        let mut env = Env::new(config.world_spec()?, config.sim.clone())?;
        let first = env.reset(episode_seed(seed, episode))?;
        let obs = record(&first, agent.config.goal_scale);
        let mut buffer = ReplayBuffer::new(config.train.buffer_capacity);
        buffer.begin_episode(obs.clone());
        Ok(Self {
            config,
            seed,
            agent,
            env,
            buffer,
            explore_rng,
            step,
            episode,
            obs,
            ep_return: 0.0,
            out: out.to_path_buf(),
        })
    }

    /// Restores from a checkpoint written by [`Trainer::save`]. The replay
    /// buffer is not saved: the resumed run starts a fresh episode and
    /// waits for the buffer to refill before updating.
    pub fn resume(config: RunConfig, path: &Path, out: &Path) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        let hash = ck.meta.get("config_hash").and_then(Value::as_str).unwrap_or("");
        if hash != config.hash() {
            log::warn!(
                "checkpoint {} was written with config {hash}, current config is {}",
                path.display(),
                config.hash()
            );
        }
        let meta_u64 = |k: &str| {
            ck.meta.get(k).and_then(Value::as_u64).ok_or_else(|| Error::Checkpoint {
                path: path.to_path_buf(),
                reason: format!("missing or invalid `{k}`"),
            })
        };
        let (seed, step, episode) = (meta_u64("seed")?, meta_u64("step")?, meta_u64("episode")?);
        let explore: ChaCha8Rng = serde_json::from_value(ck.meta.get("explore_rng").cloned().unwrap_or(Value::Null))
            .map_err(|e| Error::Checkpoint {
                path: path.to_path_buf(),
                reason: format!("explore_rng: {e}"),
            })?;
        let agent = Agent::from_checkpoint(&ck, path)?;
        Self::assemble(config, seed, out, agent, step, episode + 1, explore)
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn episode(&self) -> u64 {
        self.episode
    }

    fn checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = self.agent.to_checkpoint()?;
        ck.meta.insert("config_hash".into(), Value::from(self.config.hash()));
        ck.meta.insert("run_config".into(), serde_json::to_value(&self.config)?);
        ck.meta.insert("seed".into(), Value::from(self.seed));
        ck.meta.insert("step".into(), Value::from(self.step));
        ck.meta.insert("episode".into(), Value::from(self.episode));
        ck.meta.insert("explore_rng".into(), serde_json::to_value(&self.explore_rng)?);
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.checkpoint()?.save(path)
    }

    /// One environment step followed by `updates_per_step` updates once
    /// warmup is over. Returns the last update's metrics.
    pub fn advance(&mut self) -> Result<Option<UpdateMetrics>> {
        let warm = self.step < self.config.train.warmup as u64;
        let action = if warm {
            [self.explore_rng.gen_range(0.0f32..1.0), self.explore_rng.gen_range(-1.0f32..1.0)]
        } else {
            self.agent.act(&self.obs, false, &mut self.explore_rng)?
        };
        let res = self.env.step([action[0] as f64, action[1] as f64])?;
        let executed = [self.env.robot().v as f32, self.env.robot().omega as f32];
        let next = record(&res.observation, self.agent.config.goal_scale);
        self.buffer.push(executed, res.reward as f32, res.done, next.clone())?;
        self.step += 1;
        self.ep_return += res.reward;
        if res.done {
            log::debug!(
                "step {} episode {}: {} after {} steps, return {:.2}",
                self.step,
                self.episode,
                res.outcome,
                self.env.steps(),
                self.ep_return
            );
            self.ep_return = 0.0;
            self.episode += 1;
            let first = self.env.reset(episode_seed(self.seed, self.episode))?;
            self.obs = record(&first, self.agent.config.goal_scale);
            self.buffer.begin_episode(self.obs.clone());
        } else {
            self.obs = next;
        }
        let mut last = None;
        if !warm {
            for _ in 0..self.config.train.updates_per_step {
                if let Some(m) = self.agent.update(&self.buffer)? {
                    last = Some(m);
                }
            }
        }
        Ok(last)
    }

    /// Runs until `total` environment steps, writing the training CSV,
    /// periodic checkpoints and a final one.
    pub fn run(&mut self, total: u64) -> Result<TrainSummary> {
        fs::create_dir_all(&self.out)?;
        let csv_path = self.out.join(TRAIN_CSV);
        let mut csv = open_csv(&csv_path, &self.config.stamp(self.seed), self.step)?;
        let every = self.config.log_every;
        while self.step < total {
            let m = self.advance()?;
            if let Some(m) = m.filter(|_| self.step.is_multiple_of(every)) {
                writeln!(csv, "{}", csv_row(self.step, &m))?;
                csv.flush()?;
            }
            if self.step.is_multiple_of(self.config.checkpoint_every) && self.step < total {
                csv.flush()?;
                self.save(&self.out.join(format!("step_{}.ckpt", self.step)))?;
            }
        }
        csv.flush()?;
        let checkpoint = self.out.join(FINAL_CHECKPOINT);
        self.save(&checkpoint)?;
        Ok(TrainSummary {
            steps: self.step,
            episodes: self.episode,
            updates: self.agent.updates(),
            checkpoint,
            csv: csv_path,
        })
    }
}

/// Opens the training CSV. A fresh run writes the stamp and header; a
/// resumed run keeps rows up to `step` and appends after them.
fn open_csv(path: &Path, stamp: &str, step: u64) -> Result<BufWriter<File>> {
    if step > 0 && path.exists() {
        let kept: Vec<String> = BufReader::new(File::open(path)?)
            .lines()
            .collect::<std::io::Result<Vec<_>>>()?
            .into_iter()
            .filter(|l| {
                l.split(',')
                    .next()
                    .and_then(|s| s.parse::<u64>().ok())
                    .is_none_or(|s| s <= step)
            })
            .collect();
        let mut f = BufWriter::new(File::create(path)?);
        for l in kept {
            writeln!(f, "{l}")?;
        }
        f.flush()?;
        let f = OpenOptions::new().append(true).open(path)?;
        return Ok(BufWriter::new(f));
    }
    let mut f = BufWriter::new(File::create(path)?);
    writeln!(f, "# {stamp}")?;
    writeln!(f, "{TRAIN_CSV_HEADER}")?;
    Ok(f)
}
