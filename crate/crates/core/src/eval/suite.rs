use rand::Rng;

use crate::error::{Error, Result};
use crate::sac::{record, Agent};
use crate::sim::{Env, Observation, Outcome};

use super::{optimal_path_length, EpisodeRecord};

/// Maps an observation to `(v, ω)`. The env is passed read-only for
/// scripted baselines that use privileged state.
pub trait Policy {
    fn act(&mut self, obs: &Observation, env: &Env) -> Result<[f64; 2]>;
}

/// The trained actor in deterministic mode.
pub struct AgentPolicy<'a> {
    pub agent: &'a Agent,
}

impl Policy for AgentPolicy<'_> {
    fn act(&mut self, obs: &Observation, _: &Env) -> Result<[f64; 2]> {
        let rec = record(obs, self.agent.config.goal_scale);
        let a = self.agent.act(&rec, true, &mut rand::rngs::mock::StepRng::new(0, 0))?;
        Ok([a[0] as f64, a[1] as f64])
    }
}

/// Uniform actions over the whole action box.
pub struct RandomPolicy<R: Rng> {
    pub rng: R,
}

impl<R: Rng> Policy for RandomPolicy<R> {
    fn act(&mut self, _: &Observation, _: &Env) -> Result<[f64; 2]> {
        Ok([self.rng.gen_range(0.0..1.0), self.rng.gen_range(-1.0..1.0)])
    }
}

/// Turns toward the goal and drives at full speed once roughly aligned.
#[derive(Clone, Copy, Debug, Default)]
pub struct ScriptedPolicy;

impl Policy for ScriptedPolicy {
    fn act(&mut self, obs: &Observation, _: &Env) -> Result<[f64; 2]> {
        let b = obs.goal_bearing;
        let v = if b.abs() < 0.3 { 1.0 } else { 0.1 };
        Ok([v, (2.0 * b).clamp(-1.0, 1.0)])
    }
}

/// Runs one episode from `env.reset(seed)`.
pub fn run_episode(policy: &mut dyn Policy, env: &mut Env, seed: u64) -> Result<EpisodeRecord> {
    let mut obs = env.reset(seed)?;
    let optimal = optimal_path_length(env.start(), env.goal(), env.world(), env.config().robot_radius)?;
    let (mut reward, mut v_sum) = (0.0, 0.0);
    let mut outcome = Outcome::Running;
    while outcome == Outcome::Running {
        let a = policy.act(&obs, env)?;
        let step = env.step(a)?;
        reward += step.reward;
        v_sum += env.robot().v;
        outcome = step.outcome;
        obs = step.observation;
    }
    Ok(EpisodeRecord {
        seed,
        outcome,
        steps: env.steps(),
        path_length: env.path_length(),
        optimal_length: optimal,
        mean_velocity: v_sum / env.steps() as f64,
        reward,
    })
}

/// `n` episodes seeded `seed0..seed0 + n`. Episodes whose goal is
/// unreachable on the planning grid are dropped with a warning.
pub fn run_suite(policy: &mut dyn Policy, env: &mut Env, n: usize, seed0: u64) -> Result<Vec<EpisodeRecord>> {
    let mut out = Vec::with_capacity(n);
    for seed in seed0..seed0 + n as u64 {
        match run_episode(policy, env, seed) {
            Ok(r) => out.push(r),
            Err(Error::NoPath) => log::warn!("episode {seed}: no path from start to goal, excluded"),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}
