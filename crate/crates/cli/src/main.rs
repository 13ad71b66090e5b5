use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use pillarnav::bev::pillarize;
use pillarnav::eval::{
    run_suite, write_episodes_csv, write_metrics_csv, AgentPolicy, Policy, RandomPolicy, ScriptedPolicy,
};
use pillarnav::nn::Checkpoint;
use pillarnav::run::sweep_k;
use pillarnav::sac::{self, rng_stream, streams};
use pillarnav::{Agent, Env, MetricsReport, PointCloud, Profile, RunConfig, Trainer, WorldSpec};

/// Point-cloud navigation: train, evaluate and inspect pillar-BEV SAC agents.
#[derive(Parser)]
#[command(name = "pillarnav", version)]
struct Cli {
    /// Output root; defaults to the config's `out_dir`.
    #[arg(long, global = true, env = "PILLARNAV_OUT")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// JSON config merged over the profile preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    profile: Option<ProfileArg>,
    /// Built-in world: square, lobby or open.
    #[arg(long)]
    scenario: Option<String>,
    /// Disable the spatial consistency loss.
    #[arg(long)]
    no_scl: bool,
    /// Disable the temporal contrastive loss.
    #[arg(long)]
    no_tcl: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Paper,
    Desk,
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Paper => Profile::Paper,
            ProfileArg::Desk => Profile::Desk,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Agent,
    Random,
    Scripted,
}

#[derive(Subcommand)]
enum Command {
    /// Train one agent per seed.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Seeds to train; defaults to the config's list.
        #[arg(long, value_delimiter = ',')]
        seed: Vec<u64>,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        peds: Option<usize>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Skip the evaluation after training.
        #[arg(long)]
        no_eval: bool,
    },
    /// Evaluate a checkpoint, one metrics row per pedestrian count.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        peds: Vec<usize>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long, value_enum, default_value = "agent")]
        policy: PolicyArg,
    },
    /// Train and evaluate one agent per prediction window and seed.
    SweepK {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3")]
        k: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        seed: Vec<u64>,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        peds: Option<usize>,
    },
    /// Pillarize an XYZ cloud and dump the grid as CSV and PGM.
    Inspect {
        cloud: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Finite-difference check of every network block.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Preset, then file, then flags.
fn load_config(a: &ConfigArgs) -> Result<RunConfig> {
    let profile = a.profile.map(Profile::from);
    let cfg = match &a.config {
        Some(p) => RunConfig::load(p, profile).with_context(|| format!("loading {}", p.display()))?,
        None => RunConfig::preset(profile.unwrap_or_default()),
    };
    Ok(apply_flags(cfg, a))
}

fn apply_flags(mut cfg: RunConfig, a: &ConfigArgs) -> RunConfig {
    if let Some(s) = &a.scenario {
        cfg.scenario = s.clone();
        cfg.world = None;
    }
    cfg.train.enable_scl &= !a.no_scl;
    cfg.train.enable_tcl &= !a.no_tcl;
    cfg
}

fn load_checkpoint(p: &Path) -> Result<Checkpoint> {
    Checkpoint::load(p).with_context(|| format!("loading checkpoint {}", p.display()))
}

/// The checkpoint's own run config unless a config file or profile is
/// given; flags apply either way.
fn resolve_config(a: &ConfigArgs, ck: Option<&Checkpoint>) -> Result<RunConfig> {
    match ck {
        Some(ck) if a.config.is_none() && a.profile.is_none() => {
            let v = ck.meta.get("run_config").cloned().context("checkpoint carries no run config")?;
            Ok(apply_flags(serde_json::from_value(v)?, a))
        }
        _ => load_config(a),
    }
}

fn out_root(cli_out: &Option<PathBuf>, cfg: &RunConfig) -> PathBuf {
    cli_out.clone().unwrap_or_else(|| cfg.out_dir.clone())
}

type EpisodeRow = (String, usize, pillarnav::EpisodeRecord);

fn evaluate_rows(
    policy: &mut dyn Policy,
    cfg: &RunConfig,
    peds: &[usize],
) -> Result<(Vec<MetricsReport>, Vec<EpisodeRow>)> {
    let (mut rows, mut episodes) = (Vec::new(), Vec::new());
    for &n in peds {
        let world = match &cfg.world {
            Some(w) if n == 0 => w.clone(),
            Some(_) => bail!("--peds needs a built-in scenario, the config has an explicit world"),
            None => WorldSpec::preset(&cfg.scenario, n)?,
        };
        let name = world.name.clone();
        let mut env = Env::new(world, cfg.sim.clone())?;
        let records = run_suite(policy, &mut env, cfg.eval_episodes, cfg.eval_seed)?;
        let report = MetricsReport::from_records(&name, n, &records, cfg.velocity_mode)?;
        log::info!(
            "{name} peds={n}: SR {:.3} SPL {:.3} velocity {:.3} reward {:.2} over {}",
            report.sr,
            report.spl,
            report.velocity,
            report.reward,
            report.n
        );
        episodes.extend(records.into_iter().map(|r| (name.clone(), n, r)));
        rows.push(report);
    }
    Ok((rows, episodes))
}

fn write_eval(dir: &Path, stamp: &str, rows: &[MetricsReport], eps: &[(String, usize, pillarnav::EpisodeRecord)]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_metrics_csv(&dir.join("metrics.csv"), stamp, rows)?;
    write_episodes_csv(&dir.join("episodes.csv"), stamp, eps)?;
    println!("{}", dir.join("metrics.csv").display());
    Ok(())
}

fn train(
    out: &Option<PathBuf>,
    a: &ConfigArgs,
    seeds: Vec<u64>,
    steps: Option<u64>,
    peds: Option<usize>,
    resume: Option<PathBuf>,
    no_eval: bool,
) -> Result<()> {
    let mut cfg = match &resume {
        Some(p) => resolve_config(a, Some(&load_checkpoint(p)?))?,
        None => load_config(a)?,
    };
    if let Some(s) = steps {
        cfg.steps = s;
    }
    if let Some(p) = peds {
        cfg.peds = p;
    }
    if let Some(ck) = resume {
        if seeds.len() > 1 {
            bail!("--resume continues a single run; drop the extra seeds");
        }
        let dir = match out {
            Some(o) => o.clone(),
            None => ck.parent().map(Path::to_path_buf).unwrap_or_default(),
        };
        let mut t = Trainer::resume(cfg, &ck, &dir)?;
        log::info!("resuming seed {} at step {}", t.seed, t.step());
        return finish(&mut t, &dir, no_eval);
    }
    if !seeds.is_empty() {
        cfg.seeds = seeds;
    }
    cfg.validate()?;
    let root = out_root(out, &cfg).join(cfg.hash());
    for &seed in &cfg.seeds {
        let dir = root.join(format!("seed{seed}"));
        log::info!("training seed {seed} for {} steps into {}", cfg.steps, dir.display());
        let mut t = Trainer::new(cfg.clone(), seed, &dir)?;
        finish(&mut t, &dir, no_eval)?;
    }
    Ok(())
}

fn finish(t: &mut Trainer, dir: &Path, no_eval: bool) -> Result<()> {
    let summary = t.run(t.config.steps)?;
    println!("{}", summary.checkpoint.display());
    if !no_eval {
        let cfg = t.config.clone();
        let (rows, eps) = evaluate_rows(&mut AgentPolicy { agent: &t.agent }, &cfg, &[cfg.peds])?;
        write_eval(dir, &cfg.stamp(t.seed), &rows, &eps)?;
    }
    Ok(())
}

fn eval(
    out: &Option<PathBuf>,
    a: &ConfigArgs,
    checkpoint: Option<PathBuf>,
    peds: Vec<usize>,
    episodes: Option<usize>,
    policy: PolicyArg,
) -> Result<()> {
    let loaded = checkpoint.as_deref().map(load_checkpoint).transpose()?;
    let mut cfg = resolve_config(a, loaded.as_ref())?;
    let seed = loaded.as_ref().and_then(|ck| ck.meta.get("seed")?.as_u64()).unwrap_or(0);
    if let Some(ck) = &loaded {
        let saved = ck.meta.get("config_hash").and_then(|v| v.as_str()).unwrap_or("");
        if saved != cfg.hash() {
            log::warn!("checkpoint config {saved} differs from evaluation config {}", cfg.hash());
        }
    }
    if let Some(n) = episodes {
        cfg.eval_episodes = n;
    }
    cfg.validate()?;
    let stamp = cfg.stamp(seed);
    let (rows, eps) = match policy {
        PolicyArg::Agent => {
            let (ck, path) = match (&loaded, &checkpoint) {
                (Some(ck), Some(p)) => (ck, p),
                _ => bail!("--policy agent needs --checkpoint"),
            };
            let agent = Agent::from_checkpoint(ck, path)?;
            evaluate_rows(&mut AgentPolicy { agent: &agent }, &cfg, &peds)?
        }
        PolicyArg::Random => {
            let mut p = RandomPolicy {
                rng: rng_stream(seed, streams::EVAL),
            };
            evaluate_rows(&mut p, &cfg, &peds)?
        }
        PolicyArg::Scripted => evaluate_rows(&mut ScriptedPolicy, &cfg, &peds)?,
    };
    let dir = match (out, &checkpoint) {
        (Some(o), _) => o.clone(),
        (None, Some(p)) => p.parent().map(Path::to_path_buf).unwrap_or_default(),
        (None, None) => cfg.out_dir.join(cfg.hash()),
    };
    write_eval(&dir, &stamp, &rows, &eps)
}

fn sweep(
    out: &Option<PathBuf>,
    a: &ConfigArgs,
    ks: Vec<usize>,
    seeds: Vec<u64>,
    steps: Option<u64>,
    peds: Option<usize>,
) -> Result<()> {
    let mut cfg = load_config(a)?;
    if let Some(s) = steps {
        cfg.steps = s;
    }
    if let Some(p) = peds {
        cfg.peds = p;
    }
    if !seeds.is_empty() {
        cfg.seeds = seeds;
    }
    cfg.validate()?;
    let dir = out_root(out, &cfg).join(format!("sweep-{}", cfg.hash()));
    let rows = sweep_k(&cfg, &ks, &cfg.seeds, &dir)?;
    for r in &rows {
        println!("k={} seed={} SR={:.3} reward={:.2}", r.k, r.seed, r.metrics.sr, r.metrics.reward);
    }
    println!("{}", dir.join("sweep.csv").display());
    Ok(())
}

fn inspect(out: &Option<PathBuf>, cloud: &Path, a: &ConfigArgs) -> Result<()> {
    let cfg = load_config(a)?;
    let points = PointCloud::read_xyz(cloud)?;
    let grid = pillarize(&points, &cfg.pillar)?;
    let dir = out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)?;
    let stem = cloud.file_stem().and_then(|s| s.to_str()).unwrap_or("cloud");
    let stamp = cfg.stamp(0);
    let csv = dir.join(format!("{stem}_occupancy.csv"));
    std::fs::write(&csv, format!("# {stamp}\n{}", grid.occupancy_csv()))?;
    let pillars = dir.join(format!("{stem}_pillars.csv"));
    std::fs::write(&pillars, format!("# {stamp}\n{}", grid.pillars_csv()))?;
    let pgm = dir.join(format!("{stem}_occupancy.pgm"));
    std::fs::write(&pgm, grid.occupancy_pgm(&stamp))?;
    println!(
        "{} points, {} pillars on a {}x{} grid ({} in range)",
        points.len(),
        grid.len(),
        grid.height,
        grid.width,
        grid.total_count()
    );
    for p in [csv, pillars, pgm] {
        println!("{}", p.display());
    }
    Ok(())
}

fn gradcheck(seed: u64) -> Result<bool> {
    let blocks = sac::gradcheck::run_suite(seed)?;
    let mut ok = true;
    for b in &blocks {
        let pass = b.passes();
        ok &= pass;
        println!(
            "{:<10} {} max rel err {:.3e} over {} tensors",
            b.block,
            if pass { "pass" } else { "FAIL" },
            b.report.max_rel_err(),
            b.report.params.len()
        );
    }
    println!("tolerance {:.0e}: {}", sac::gradcheck::TOLERANCE, if ok { "all blocks pass" } else { "failures" });
    Ok(ok)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Train {
            cfg,
            seed,
            steps,
            peds,
            resume,
            no_eval,
        } => train(&cli.out, &cfg, seed, steps, peds, resume, no_eval),
        Command::Eval {
            cfg,
            checkpoint,
            peds,
            episodes,
            policy,
        } => eval(&cli.out, &cfg, checkpoint, peds, episodes, policy),
        Command::SweepK {
            cfg,
            k,
            seed,
            steps,
            peds,
        } => sweep(&cli.out, &cfg, k, seed, steps, peds),
        Command::Inspect { cloud, cfg } => inspect(&cli.out, &cloud, &cfg),
        Command::Gradcheck { seed } => match gradcheck(seed) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::FAILURE,
            Err(e) => Err(e),
        },
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
