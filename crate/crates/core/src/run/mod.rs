//! Run configuration, the training loop, evaluation and window sweeps.

mod config;
mod train;

use std::io::Write;
use std::path::Path;

pub use config::{merge, Profile, RunConfig};
pub use train::{csv_row, episode_seed, TrainSummary, Trainer, FINAL_CHECKPOINT, TRAIN_CSV, TRAIN_CSV_HEADER};

use crate::error::Result;
use crate::eval::{run_suite, AgentPolicy, EpisodeRecord, MetricsReport};
use crate::sac::Agent;
use crate::sim::{Env, WorldSpec};

/// Deterministic-policy evaluation of `agent` on `world`.
pub fn evaluate(agent: &Agent, cfg: &RunConfig, world: WorldSpec, peds: usize) -> Result<(MetricsReport, Vec<EpisodeRecord>)> {
    let name = world.name.clone();
    let mut env = Env::new(world, cfg.sim.clone())?;
    let records = run_suite(&mut AgentPolicy { agent }, &mut env, cfg.eval_episodes, cfg.eval_seed)?;
    let report = MetricsReport::from_records(&name, peds, &records, cfg.velocity_mode)?;
    Ok((report, records))
}

/// One row of a window sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub k: usize,
    pub seed: u64,
    pub metrics: MetricsReport,
}

pub const SWEEP_HEADER: &str = "k,seed,SR,Velocity,SPL,Reward,N";

/// Trains and evaluates one agent per `(k, seed)`. Every `k` sees the
/// same training and evaluation environment streams for a given seed.
pub fn sweep_k(base: &RunConfig, ks: &[usize], seeds: &[u64], out: &Path) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &k in ks {
        for &seed in seeds {
            let mut cfg = base.clone();
            cfg.train.k = k;
            let dir = out.join(format!("k{k}_seed{seed}"));
            let mut trainer = Trainer::new(cfg.clone(), seed, &dir)?;
            trainer.run(cfg.steps)?;
            let (metrics, _) = evaluate(&trainer.agent, &cfg, cfg.world_spec()?, cfg.peds)?;
            log::info!("k={k} seed={seed}: SR {:.3} reward {:.2}", metrics.sr, metrics.reward);
            rows.push(SweepRow { k, seed, metrics });
        }
    }
    write_sweep_csv(&out.join("sweep.csv"), &base.stamp(seeds.first().copied().unwrap_or(0)), &rows)?;
    Ok(rows)
}

/// Per-`(k, seed)` rows followed by one `mean` row per `k`.
pub fn write_sweep_csv(path: &Path, stamp: &str, rows: &[SweepRow]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "# {stamp}")?;
    writeln!(f, "{SWEEP_HEADER}")?;
    let line = |k: String, s: String, m: &MetricsReport| {
        format!("{k},{s},{:.4},{:.4},{:.4},{:.4},{}", m.sr, m.velocity, m.spl, m.reward, m.n)
    };
    for r in rows {
        writeln!(f, "{}", line(r.k.to_string(), r.seed.to_string(), &r.metrics))?;
    }
    let mut ks: Vec<usize> = rows.iter().map(|r| r.k).collect();
    ks.dedup();
    for k in ks {
        let group: Vec<&MetricsReport> = rows.iter().filter(|r| r.k == k).map(|r| &r.metrics).collect();
        let n = group.len() as f64;
        let mean = |f: fn(&MetricsReport) -> f64| group.iter().map(|m| f(m)).sum::<f64>() / n;
        let m = MetricsReport {
            scenario: group[0].scenario.clone(),
            peds: group[0].peds,
            sr: mean(|m| m.sr),
            velocity: mean(|m| m.velocity),
            spl: mean(|m| m.spl),
            reward: mean(|m| m.reward),
            n: group.iter().map(|m| m.n).sum(),
        };
        writeln!(f, "{}", line(k.to_string(), "mean".into(), &m))?;
    }
    f.flush()?;
    Ok(())
}
