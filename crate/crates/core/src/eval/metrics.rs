use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::Outcome;

/// One evaluated episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub seed: u64,
    pub outcome: Outcome,
    pub steps: usize,
    /// Summed step displacements, meters.
    pub path_length: f64,
    /// Shortest collision-free length, meters.
    pub optimal_length: f64,
    /// Mean commanded linear velocity over the episode.
    pub mean_velocity: f64,
    pub reward: f64,
}

impl EpisodeRecord {
    pub fn success(&self) -> bool {
        self.outcome == Outcome::Goal
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VelocityMode {
    #[default]
    AllEpisodes,
    SuccessfulOnly,
}

fn nonempty(records: &[EpisodeRecord], what: &str) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Metric(format!("{what} of an empty record set")));
    }
    Ok(records.len() as f64)
}

pub fn compute_sr(records: &[EpisodeRecord]) -> Result<f64> {
    let n = nonempty(records, "success rate")?;
    Ok(records.iter().filter(|r| r.success()).count() as f64 / n)
}

/// `(1/N) Σ S_i · L_i / max(P_i, L_i)`.
pub fn compute_spl(records: &[EpisodeRecord]) -> Result<f64> {
    let n = nonempty(records, "SPL")?;
    let mut sum = 0.0;
    for r in records {
        if !(r.optimal_length > 0.0) {
            return Err(Error::Metric(format!(
                "episode {} has optimal length {}",
                r.seed, r.optimal_length
            )));
        }
        if r.success() {
            sum += r.optimal_length / r.path_length.max(r.optimal_length);
        }
    }
    Ok(sum / n)
}

/// Mean over episodes of each episode's mean commanded `v`.
pub fn compute_velocity(records: &[EpisodeRecord], mode: VelocityMode) -> Result<f64> {
    let picked: Vec<&EpisodeRecord> = match mode {
        VelocityMode::AllEpisodes => records.iter().collect(),
        VelocityMode::SuccessfulOnly => records.iter().filter(|r| r.success()).collect(),
    };
    if picked.is_empty() {
        return Err(Error::Metric("velocity over no episodes".into()));
    }
    Ok(picked.iter().map(|r| r.mean_velocity).sum::<f64>() / picked.len() as f64)
}

pub fn mean_reward(records: &[EpisodeRecord]) -> Result<f64> {
    let n = nonempty(records, "mean reward")?;
    Ok(records.iter().map(|r| r.reward).sum::<f64>() / n)
}

/// One `metrics.csv` row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub peds: usize,
    pub sr: f64,
    pub velocity: f64,
    pub spl: f64,
    pub reward: f64,
    pub n: usize,
}

impl MetricsReport {
    pub fn from_records(scenario: &str, peds: usize, records: &[EpisodeRecord], mode: VelocityMode) -> Result<Self> {
        Ok(Self {
            scenario: scenario.to_string(),
            peds,
            sr: compute_sr(records)?,
            velocity: compute_velocity(records, mode).unwrap_or(0.0),
            spl: compute_spl(records)?,
            reward: mean_reward(records)?,
            n: records.len(),
        })
    }
}

pub const METRICS_HEADER: &str = "scenario,peds,SR,Velocity,SPL,Reward,N";

/// Writes rows under a `# stamp` comment line.
pub fn write_metrics_csv(path: &Path, stamp: &str, rows: &[MetricsReport]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "# {stamp}")?;
    writeln!(f, "{METRICS_HEADER}")?;
    for r in rows {
        writeln!(
            f,
            "{},{},{:.4},{:.4},{:.4},{:.4},{}",
            r.scenario, r.peds, r.sr, r.velocity, r.spl, r.reward, r.n
        )?;
    }
    f.flush()?;
    Ok(())
}

pub fn write_episodes_csv(path: &Path, stamp: &str, rows: &[(String, usize, EpisodeRecord)]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "# {stamp}")?;
    writeln!(
        f,
        "scenario,peds,seed,outcome,success,steps,path_length,optimal_length,mean_velocity,reward"
    )?;
    for (scenario, peds, r) in rows {
        writeln!(
            f,
            "{scenario},{peds},{},{},{},{},{:.4},{:.4},{:.4},{:.4}",
            r.seed,
            r.outcome,
            u8::from(r.success()),
            r.steps,
            r.path_length,
            r.optimal_length,
            r.mean_velocity,
            r.reward
        )?;
    }
    f.flush()?;
    Ok(())
}
