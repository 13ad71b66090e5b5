use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::bev::{BevEncoder, EncoderConfig, PillarConfig, PointCloud};
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, Checkpoint, LrSchedule, Mlp, ParamId, ParamStore, Scalar, Tape, Tensor, Var};
use crate::sim::Observation;
use crate::ssl::{augment, scl_loss, SclHeads, SslConfig, TclHeads};

use super::policy::squashed_sample;
use super::replay::{Index, ObsRecord, ReplayBuffer};
use super::TrainConfig;

/// Independent random streams derived from one run seed.
pub mod streams {
    pub const INIT: u64 = 0;
    pub const UPDATE: u64 = 1;
    pub const AUGMENT: u64 = 2;
    pub const EXPLORE: u64 = 3;
    pub const ENV: u64 = 4;
    pub const EVAL: u64 = 5;
}

pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub pillar: PillarConfig,
    pub encoder: EncoderConfig,
    pub ssl: SslConfig,
    pub train: TrainConfig,
    /// Divides the goal distance feature; the arena diagonal.
    pub goal_scale: f64,
}

impl AgentConfig {
    /// Desk-scale widths over the 64 × 64 grid.
    pub fn desk(goal_scale: f64) -> Self {
        Self {
            pillar: PillarConfig::desk(),
            encoder: EncoderConfig::desk(),
            ssl: SslConfig::default(),
            train: TrainConfig::default(),
            goal_scale,
        }
    }

    /// Full widths over the simulator grid.
    pub fn paper(goal_scale: f64) -> Self {
        Self {
            pillar: PillarConfig::sim(),
            encoder: EncoderConfig::paper(),
            ssl: SslConfig::default(),
            train: TrainConfig::default(),
            goal_scale,
        }
    }

    /// An 8 × 8 grid and single-digit widths, small enough for finite
    /// differences over every parameter.
    pub fn tiny() -> Self {
        Self {
            pillar: PillarConfig {
                x_range: (-1.2, 1.2),
                y_range: (0.0, 2.4),
                z_range: (0.0, 2.0),
                cell_x: 0.3,
                cell_y: 0.3,
            },
            encoder: EncoderConfig {
                sparse_channels: vec![3, 4],
                dense_channels: 4,
                dense_blocks: 1,
            },
            ssl: SslConfig {
                proj_hidden: 5,
                pred_hidden: 3,
                action_hidden: 3,
                tcl_hidden: 5,
                tcl_embed: 3,
                ..SslConfig::default()
            },
            train: TrainConfig {
                batch_size: 4,
                k: 2,
                warmup: 0,
                buffer_capacity: 1000,
                actor_hidden: 5,
                critic_hidden: 5,
                ..TrainConfig::default()
            },
            goal_scale: 4.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.pillar.validate()?;
        self.encoder.validate()?;
        self.ssl.validate()?;
        self.train.validate()?;
        if !(self.goal_scale.is_finite() && self.goal_scale > 0.0) {
            return Err(Error::config("goal_scale", "must be positive"));
        }
        Ok(())
    }
}

/// `(distance / scale, bearing / π)`.
pub fn goal_features(obs: &Observation, scale: f64) -> [f32; 2] {
    [
        (obs.goal_distance / scale) as f32,
        (obs.goal_bearing / std::f64::consts::PI) as f32,
    ]
}

pub fn record(obs: &Observation, scale: f64) -> ObsRecord {
    ObsRecord {
        cloud: obs.cloud.clone(),
        goal: goal_features(obs, scale),
    }
}

/// Parameter ids of every network. Holds no weights, so the same layout
/// serves the `f32` training store and `f64` gradient checks.
#[derive(Clone, Debug, PartialEq)]
pub struct Networks {
    pub encoder: BevEncoder,
    pub actor: Mlp,
    pub q1: Mlp,
    pub q2: Mlp,
    pub q1_target: Mlp,
    pub q2_target: Mlp,
    pub log_alpha: ParamId,
    pub scl: Option<SclHeads>,
    pub tcl: Option<TclHeads>,
}

impl Networks {
    pub fn new<T: Scalar, R: Rng>(store: &mut ParamStore<T>, cfg: &AgentConfig, rng: &mut R) -> Result<Self> {
        let t = &cfg.train;
        let encoder = BevEncoder::new(store, "encoder", cfg.pillar.clone(), cfg.encoder.clone(), rng)?;
        let l = encoder.latent_dim();
        let (ah, ch) = (t.actor_hidden, t.critic_hidden);
        let actor = Mlp::new(store, "actor", &[l + 2, ah, ah, 4], rng)?;
        let q1 = Mlp::new(store, "critic1", &[l + 4, ch, ch, 1], rng)?;
        let q2 = Mlp::new(store, "critic2", &[l + 4, ch, ch, 1], rng)?;
        let q1_target = Mlp::new(store, "critic1_target", &[l + 4, ch, ch, 1], rng)?;
        let q2_target = Mlp::new(store, "critic2_target", &[l + 4, ch, ch, 1], rng)?;
        store.copy_values(&q1.params(), &q1_target.params());
        store.copy_values(&q2.params(), &q2_target.params());
        let log_alpha = store.register("log_alpha", Tensor::scalar(T::lit(t.init_alpha.ln())))?;
        let scl = if t.enable_scl {
            Some(SclHeads::new(store, "scl", l, &cfg.ssl, rng)?)
        } else {
            None
        };
        let tcl = if t.tcl_active() {
            Some(TclHeads::new(store, "tcl", l, t.k, &cfg.ssl, rng)?)
        } else {
            None
        };
        Ok(Self {
            encoder,
            actor,
            q1,
            q2,
            q1_target,
            q2_target,
            log_alpha,
            scl,
            tcl,
        })
    }

    pub fn critic_params(&self) -> Vec<ParamId> {
        let mut p = self.encoder.params();
        p.extend(self.q1.params());
        p.extend(self.q2.params());
        p
    }

    pub fn aux_params(&self) -> Vec<ParamId> {
        let mut p = self.encoder.params();
        if let Some(h) = &self.scl {
            p.extend(h.params());
        }
        if let Some(h) = &self.tcl {
            p.extend(h.params());
        }
        p
    }

    /// Twin-Q estimates `[B, 1]` each for `[latent, goal, action]`.
    pub fn q_values<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        input: Var,
        target: bool,
        frozen: bool,
    ) -> (Var, Var) {
        let (a, b) = if target {
            (&self.q1_target, &self.q2_target)
        } else {
            (&self.q1, &self.q2)
        };
        (a.forward_with(tape, store, input, frozen), b.forward_with(tape, store, input, frozen))
    }
}

/// `mean((Q₁ − y)²) + mean((Q₂ − y)²)` on `[latent, goal, action]`.
pub fn critic_loss<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    nets: &Networks,
    latent: Var,
    goals: Var,
    actions: Var,
    y: &[T],
) -> Var {
    let input = tape.concat_cols(&[latent, goals, actions]);
    let (q1, q2) = nets.q_values(tape, store, input, false, false);
    let y = tape.input(&[y.len(), 1], y.to_vec());
    let mut total = None;
    for q in [q1, q2] {
        let d = tape.sub(q, y);
        let sq = tape.mul(d, d);
        let m = tape.mean(sq);
        total = Some(match total {
            None => m,
            Some(t) => tape.add(t, m),
        });
    }
    total.expect("two critics")
}

/// `mean(α·log π(a|s) − min Q(s, a))` with critics frozen. Returns the loss
/// and the `[B]` log-probabilities.
#[allow(clippy::too_many_arguments)]
pub fn actor_loss<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    nets: &Networks,
    latent: Var,
    goals: Var,
    noise: &[T],
    alpha: T,
    log_std_bounds: (f64, f64),
) -> (Var, Var) {
    let x = tape.concat_cols(&[latent, goals]);
    let out = nets.actor.forward(tape, store, x);
    let s = squashed_sample(tape, out, noise, log_std_bounds);
    let qin = tape.concat_cols(&[latent, goals, s.action]);
    let (q1, q2) = nets.q_values(tape, store, qin, false, true);
    let qmin = tape.minimum(q1, q2);
    let b = tape.shape(qmin)[0];
    let lp = tape.reshape(s.log_prob, &[b, 1]);
    let scaled = tape.affine(lp, alpha, T::zero());
    let diff = tape.sub(scaled, qmin);
    (tape.mean(diff), s.log_prob)
}

/// `−log α · (mean log π + target_entropy)`: descending it raises α when
/// the policy entropy is below target and lowers it when above.
pub fn alpha_loss<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    log_alpha: ParamId,
    mean_log_prob: T,
    target_entropy: f64,
) -> Var {
    let la = tape.param(store, log_alpha);
    let c = tape.input(&[1], vec![-(mean_log_prob + T::lit(target_entropy))]);
    let p = tape.mul(la, c);
    tape.sum(p)
}

/// `r + γ·(1 − done)·(min Q' − α·log π)`.
pub fn td_target(reward: f32, done: bool, gamma: f32, min_q: f32, alpha_log_prob: f32) -> f32 {
    if done {
        reward
    } else {
        reward + gamma * (min_q - alpha_log_prob)
    }
}

/// Values logged after an update.
#[derive(Clone, Debug, PartialEq)]
pub struct UpdateMetrics {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub alpha: f64,
    pub l_sc: Option<f64>,
    pub l_tc: Option<f64>,
}

/// Shared-encoder SAC with optional auxiliary losses.
#[derive(Clone, Debug)]
pub struct Agent {
    pub config: AgentConfig,
    pub store: ParamStore<f32>,
    pub nets: Networks,
    pub critic_opt: Adam,
    pub actor_opt: Adam,
    pub alpha_opt: Adam,
    pub aux_opt: Option<Adam>,
    pub update_rng: ChaCha8Rng,
    pub aug_rng: ChaCha8Rng,
    updates: u64,
    warned_short_buffer: bool,
}

fn goal_rows(tape: &mut Tape<f32>, rows: &[[f32; 2]]) -> Var {
    tape.input(&[rows.len(), 2], rows.iter().flatten().copied().collect())
}

fn normal_noise<R: Rng>(rng: &mut R, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

impl Agent {
    pub fn new(config: AgentConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let nets = Networks::new(&mut store, &config, &mut rng_stream(seed, streams::INIT))?;
        let optim = config.train.optim;
        let alpha_cfg = AdamConfig {
            schedule: LrSchedule::constant(config.train.alpha_lr),
            ..optim
        };
        let aux_opt = (nets.scl.is_some() || nets.tcl.is_some()).then(|| Adam::new(&store, nets.aux_params(), optim));
        Ok(Self {
            critic_opt: Adam::new(&store, nets.critic_params(), optim),
            actor_opt: Adam::new(&store, nets.actor.params(), optim),
            alpha_opt: Adam::new(&store, vec![nets.log_alpha], alpha_cfg),
            aux_opt,
            update_rng: rng_stream(seed, streams::UPDATE),
            aug_rng: rng_stream(seed, streams::AUGMENT),
            config,
            store,
            nets,
            updates: 0,
            warned_short_buffer: false,
        })
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn alpha(&self) -> f64 {
        (self.store.tensor(self.nets.log_alpha).data()[0] as f64).exp()
    }

    pub fn latent(&self, tape: &mut Tape<f32>, clouds: &[&PointCloud], frozen: bool) -> Result<Var> {
        let batch = self.nets.encoder.prepare(clouds)?;
        Ok(self.nets.encoder.forward(tape, &self.store, &batch, frozen).latent)
    }

    /// Actions for a batch of observations. Deterministic mode uses the
    /// mean and consumes no randomness.
    pub fn act_batch<R: Rng>(&self, obs: &[&ObsRecord], deterministic: bool, rng: &mut R) -> Result<Vec<[f32; 2]>> {
        let mut tape = Tape::new();
        let clouds: Vec<&PointCloud> = obs.iter().map(|o| &o.cloud).collect();
        let s = self.latent(&mut tape, &clouds, true)?;
        let goals: Vec<[f32; 2]> = obs.iter().map(|o| o.goal).collect();
        let g = goal_rows(&mut tape, &goals);
        let x = tape.concat_cols(&[s, g]);
        let out = self.nets.actor.forward_with(&mut tape, &self.store, x, true);
        let noise = if deterministic {
            vec![0.0; 2 * obs.len()]
        } else {
            normal_noise(rng, 2 * obs.len())
        };
        let t = &self.config.train;
        let sample = squashed_sample(&mut tape, out, &noise, (t.log_std_min, t.log_std_max));
        Ok(tape.data(sample.action).chunks(2).map(|a| [a[0], a[1]]).collect())
    }

    pub fn act<R: Rng>(&self, obs: &ObsRecord, deterministic: bool, rng: &mut R) -> Result<[f32; 2]> {
        Ok(self.act_batch(&[obs], deterministic, rng)?[0])
    }

    /// Whether `buffer` holds enough windows for a batch.
    pub fn ready(&self, buffer: &ReplayBuffer) -> bool {
        let t = &self.config.train;
        let k = if t.tcl_active() { t.k } else { 0 };
        buffer.usable_windows(k) >= t.batch_size * (k + 1)
    }

    /// One full update: critics (with the encoder), actor on a detached
    /// latent, temperature, the auxiliary step, then Polyak averaging.
    ///
    /// Draws from the update stream, in order: the batch indices, `2B`
    /// normals for the target policy, `2B` normals for the actor. The
    /// augmentation stream is touched only by the two-view or temporal loss.
    /// Returns `None` when the buffer is too small.
    pub fn update(&mut self, buffer: &ReplayBuffer) -> Result<Option<UpdateMetrics>> {
        if !self.ready(buffer) {
            if !self.warned_short_buffer {
                log::info!("replay buffer too small for a batch ({} transitions); skipping updates", buffer.len());
                self.warned_short_buffer = true;
            }
            return Ok(None);
        }
        self.warned_short_buffer = false;
        let t = self.config.train.clone();
        let b = t.batch_size;
        let idx = buffer.sample(b, &mut self.update_rng)?;
        let item = |i: &Index| buffer.episode(i.episode);

        let obs: Vec<&ObsRecord> = idx.iter().map(|i| &item(i).obs[i.t]).collect();
        let next: Vec<&ObsRecord> = idx.iter().map(|i| &item(i).obs[i.t + 1]).collect();
        let actions: Vec<[f32; 2]> = idx.iter().map(|i| item(i).actions[i.t]).collect();
        let rewards: Vec<f32> = idx.iter().map(|i| item(i).rewards[i.t]).collect();
        let dones: Vec<bool> = idx.iter().map(|i| item(i).dones[i.t]).collect();
        let goals: Vec<[f32; 2]> = obs.iter().map(|o| o.goal).collect();
        let next_goals: Vec<[f32; 2]> = next.iter().map(|o| o.goal).collect();
        let bounds = (t.log_std_min, t.log_std_max);
        let alpha = self.alpha() as f32;

        // Bootstrapped targets.
        let y: Vec<f32> = {
            let mut tape = Tape::new();
            let clouds: Vec<&PointCloud> = next.iter().map(|o| &o.cloud).collect();
            let s = self.latent(&mut tape, &clouds, true)?;
            let g = goal_rows(&mut tape, &next_goals);
            let x = tape.concat_cols(&[s, g]);
            let out = self.nets.actor.forward_with(&mut tape, &self.store, x, true);
            let noise = normal_noise(&mut self.update_rng, 2 * b);
            let smp = squashed_sample(&mut tape, out, &noise, bounds);
            let qin = tape.concat_cols(&[s, g, smp.action]);
            let (q1, q2) = self.nets.q_values(&mut tape, &self.store, qin, true, true);
            let (q1, q2, lp) = (tape.data(q1), tape.data(q2), tape.data(smp.log_prob));
            (0..b)
                .map(|i| td_target(rewards[i], dones[i], t.gamma as f32, q1[i].min(q2[i]), alpha * lp[i]))
                .collect()
        };

        // Critics and encoder.
        let (critic_value, latent_values) = {
            let mut tape = Tape::new();
            let clouds: Vec<&PointCloud> = obs.iter().map(|o| &o.cloud).collect();
            let s = self.latent(&mut tape, &clouds, false)?;
            let g = goal_rows(&mut tape, &goals);
            let a = goal_rows(&mut tape, &actions);
            let loss = critic_loss(&mut tape, &self.store, &self.nets, s, g, a, &y);
            self.store.zero_grad();
            tape.backward(loss, &mut self.store)?;
            self.critic_opt.step(&mut self.store)?;
            (tape.data(loss)[0] as f64, tape.value(s).clone())
        };

        // Actor on the critic step's latent, detached.
        let (actor_value, mean_lp) = {
            let mut tape = Tape::new();
            let s = tape.constant(latent_values);
            let g = goal_rows(&mut tape, &goals);
            let noise = normal_noise(&mut self.update_rng, 2 * b);
            let (loss, lp) = actor_loss(&mut tape, &self.store, &self.nets, s, g, &noise, alpha, bounds);
            self.store.zero_grad();
            tape.backward(loss, &mut self.store)?;
            self.actor_opt.step(&mut self.store)?;
            let lp = tape.data(lp);
            (tape.data(loss)[0] as f64, lp.iter().sum::<f32>() / lp.len() as f32)
        };

        {
            let mut tape = Tape::new();
            let loss = alpha_loss(&mut tape, &self.store, self.nets.log_alpha, mean_lp, t.target_entropy);
            self.store.zero_grad();
            tape.backward(loss, &mut self.store)?;
            self.alpha_opt.step(&mut self.store)?;
        }

        let (l_sc, l_tc) = self.aux_update(buffer, &idx)?;

        self.store.polyak(&self.nets.q1.params(), &self.nets.q1_target.params(), t.tau as f32);
        self.store.polyak(&self.nets.q2.params(), &self.nets.q2_target.params(), t.tau as f32);
        self.updates += 1;
        if !self.store.all_finite() {
            return Err(Error::NonFinite("parameters after update".into()));
        }
        Ok(Some(UpdateMetrics {
            critic_loss: critic_value,
            actor_loss: actor_value,
            alpha: self.alpha(),
            l_sc,
            l_tc,
        }))
    }

    /// Two-view and temporal losses on the encoder and their heads. With the
    /// temporal loss on, each row is anchored at the start of its action
    /// window and rows from episodes shorter than the window are dropped.
    fn aux_update(&mut self, buffer: &ReplayBuffer, idx: &[Index]) -> Result<(Option<f64>, Option<f64>)> {
        let Some(opt) = self.aux_opt.as_mut() else {
            return Ok((None, None));
        };
        let t = &self.config.train;
        let k = t.k;
        let mut anchors: Vec<&PointCloud> = Vec::with_capacity(idx.len());
        let mut windows: Vec<(usize, usize)> = Vec::new();
        for i in idx {
            let ep = buffer.episode(i.episode);
            if self.nets.tcl.is_some() {
                if let Some(s) = ep.window_start(i.t, k) {
                    anchors.push(&ep.obs[s].cloud);
                    windows.push((i.episode, s));
                }
            } else {
                anchors.push(&ep.obs[i.t].cloud);
            }
        }
        if anchors.is_empty() {
            return Ok((None, None));
        }
        let shift = self.config.ssl.shift;
        let view1: Vec<PointCloud> = anchors.iter().map(|c| augment(c, shift, &mut self.aug_rng)).collect();
        let view2: Vec<PointCloud> = if self.nets.scl.is_some() {
            anchors.iter().map(|c| augment(c, shift, &mut self.aug_rng)).collect()
        } else {
            Vec::new()
        };

        let mut tape = Tape::new();
        let enc = &self.nets.encoder;
        let b1 = enc.prepare(&view1.iter().collect::<Vec<_>>())?;
        let s1 = enc.forward(&mut tape, &self.store, &b1, false).latent;
        let mut total: Option<Var> = None;
        let mut l_sc = None;
        if let Some(h) = &self.nets.scl {
            let b2 = enc.prepare(&view2.iter().collect::<Vec<_>>())?;
            let s2 = enc.forward(&mut tape, &self.store, &b2, false).latent;
            let l = scl_loss(&mut tape, &self.store, &h.g, &h.h, s1, s2);
            l_sc = Some(tape.data(l)[0] as f64);
            total = Some(tape.affine(l, t.lambda_sc as f32, 0.0));
        }
        let mut l_tc = None;
        if let Some(h) = &self.nets.tcl {
            let n = windows.len();
            let mut acts = Vec::with_capacity(n * 2 * (k + 1));
            let mut future: Vec<&PointCloud> = Vec::with_capacity(n);
            for &(e, s) in &windows {
                let ep = buffer.episode(e);
                acts.extend(ep.actions[s..=s + k].iter().flatten());
                future.push(&ep.obs[s + k].cloud);
            }
            let a = tape.input(&[n, 2 * (k + 1)], acts);
            let bf = enc.prepare(&future)?;
            let sf = enc.forward(&mut tape, &self.store, &bf, true).latent;
            let l = h.loss(&mut tape, &self.store, s1, a, sf, self.config.ssl.temperature)?;
            l_tc = Some(tape.data(l)[0] as f64);
            let w = tape.affine(l, t.lambda_tc as f32, 0.0);
            total = Some(match total {
                None => w,
                Some(x) => tape.add(x, w),
            });
        }
        let total = total.expect("aux optimizer implies a head");
        self.store.zero_grad();
        tape.backward(total, &mut self.store)?;
        opt.step(&mut self.store)?;
        Ok((l_sc, l_tc))
    }

    fn optimizers(&self) -> Vec<(&'static str, &Adam)> {
        let mut v = vec![("critic", &self.critic_opt), ("actor", &self.actor_opt), ("alpha", &self.alpha_opt)];
        if let Some(a) = &self.aux_opt {
            v.push(("aux", a));
        }
        v
    }

    /// All parameters, optimizer moments, random stream states and the
    /// agent config.
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new();
        ck.meta.insert("agent_config".into(), serde_json::to_value(&self.config)?);
        ck.meta.insert("updates".into(), Value::from(self.updates));
        ck.meta.insert("update_rng".into(), serde_json::to_value(&self.update_rng)?);
        ck.meta.insert("aug_rng".into(), serde_json::to_value(&self.aug_rng)?);
        for p in self.store.iter() {
            ck.push(format!("param/{}", p.name), Tensor::from_vec(p.tensor.shape(), p.tensor.data().to_vec()));
        }
        for (name, opt) in self.optimizers() {
            ck.meta.insert(format!("optim/{name}/step"), Value::from(opt.step_count()));
            let (m, v) = opt.moments();
            for (k, &id) in opt.params().iter().enumerate() {
                let shape = self.store.tensor(id).shape();
                let pname = self.store.name(id);
                ck.push(format!("optim/{name}/m/{pname}"), Tensor::from_vec(shape, m[k].clone()));
                ck.push(format!("optim/{name}/v/{pname}"), Tensor::from_vec(shape, v[k].clone()));
            }
        }
        Ok(ck)
    }

    /// Rebuilds an agent from [`Agent::to_checkpoint`] output. Every
    /// tensor must be present with a matching shape.
    pub fn from_checkpoint(ck: &Checkpoint, path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::Checkpoint {
            path: path.to_path_buf(),
            reason,
        };
        let meta = |key: &str| ck.meta.get(key).ok_or_else(|| bad(format!("missing meta `{key}`")));
        let config: AgentConfig = serde_json::from_value(meta("agent_config")?.clone())?;
        let mut agent = Agent::new(config, 0)?;
        agent.updates = meta("updates")?.as_u64().ok_or_else(|| bad("`updates` is not an integer".into()))?;
        agent.update_rng = serde_json::from_value(meta("update_rng")?.clone())?;
        agent.aug_rng = serde_json::from_value(meta("aug_rng")?.clone())?;
        let fetch = |name: &str, shape: &[usize]| -> Result<Vec<f32>> {
            let t = ck.get(name).ok_or_else(|| bad(format!("missing tensor `{name}`")))?;
            if t.shape() != shape {
                return Err(bad(format!("`{name}` has shape {:?}, expected {shape:?}", t.shape())));
            }
            Ok(t.data().to_vec())
        };
        let ids: Vec<ParamId> = agent.store.ids().collect();
        for id in ids {
            let name = format!("param/{}", agent.store.name(id));
            let data = fetch(&name, agent.store.tensor(id).shape())?;
            agent.store.tensor_mut(id).data_mut().copy_from_slice(&data);
        }
        let names: Vec<&'static str> = agent.optimizers().iter().map(|(n, _)| *n).collect();
        for name in names {
            let step = meta(&format!("optim/{name}/step"))?
                .as_u64()
                .ok_or_else(|| bad(format!("optimizer `{name}` step is not an integer")))?;
            let params = match name {
                "critic" => agent.critic_opt.params().to_vec(),
                "actor" => agent.actor_opt.params().to_vec(),
                "alpha" => agent.alpha_opt.params().to_vec(),
                _ => agent.aux_opt.as_ref().expect("listed").params().to_vec(),
            };
            let (mut m, mut v) = (Vec::new(), Vec::new());
            for id in params {
                let shape = agent.store.tensor(id).shape().to_vec();
                let pname = agent.store.name(id).to_string();
                m.push(fetch(&format!("optim/{name}/m/{pname}"), &shape)?);
                v.push(fetch(&format!("optim/{name}/v/{pname}"), &shape)?);
            }
            let opt = match name {
                "critic" => &mut agent.critic_opt,
                "actor" => &mut agent.actor_opt,
                "alpha" => &mut agent.alpha_opt,
                _ => agent.aux_opt.as_mut().expect("listed"),
            };
            opt.restore(m, v, step)?;
        }
        Ok(agent)
    }
}
