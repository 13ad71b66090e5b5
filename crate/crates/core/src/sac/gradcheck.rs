//! Finite-difference checks over every network block of a tiny agent.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bev::{PointCloud, PreparedBatch};
use crate::error::Result;
use crate::nn::{grad_check_params, Differentiable, GradCheckReport, ParamId, ParamStore, Scalar, Tape, Var};
use crate::ssl::{cosine_loss, Head};

use super::{actor_loss, alpha_loss, critic_loss, AgentConfig, Networks};

pub const TOLERANCE: f64 = 1e-4;
const STEP: f64 = 1e-5;
const BATCH: usize = 3;

/// Result for one block.
#[derive(Clone, Debug)]
pub struct BlockReport {
    pub block: &'static str,
    pub report: GradCheckReport,
}

impl BlockReport {
    pub fn passes(&self) -> bool {
        self.report.passes(TOLERANCE)
    }
}

struct Fixture {
    nets: Networks,
    batch: PreparedBatch,
    cfg: AgentConfig,
    latent: Vec<f64>,
    goals: Vec<f64>,
    actions: Vec<f64>,
    noise: Vec<f64>,
    y: Vec<f64>,
}

fn lits<T: Scalar>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::lit(x)).collect()
}

fn uniform<R: Rng>(rng: &mut R, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

impl Fixture {
    fn latent<T: Scalar>(&self, tape: &mut Tape<T>) -> Var {
        let l = self.nets.encoder.latent_dim();
        tape.input(&[BATCH, l], lits(&self.latent))
    }

    fn goals<T: Scalar>(&self, tape: &mut Tape<T>) -> Var {
        tape.input(&[BATCH, 2], lits(&self.goals))
    }
}

struct EncoderCheck<'a>(&'a Fixture);
struct CriticCheck<'a>(&'a Fixture);
struct ActorCheck<'a>(&'a Fixture);
struct AlphaCheck<'a>(&'a Fixture);
struct SclCheck<'a>(&'a Fixture);
struct TclCheck<'a>(&'a Fixture);

impl Differentiable for EncoderCheck<'_> {
    fn loss<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>) -> Var {
        let f = self.0;
        let s = f.nets.encoder.forward(tape, store, &f.batch, false).latent;
        let shape = tape.shape(s).to_vec();
        let w = tape.input(&shape, lits(&f.latent));
        let p = tape.mul(s, w);
        tape.sum(p)
    }
}

impl Differentiable for CriticCheck<'_> {
    fn loss<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>) -> Var {
        let f = self.0;
        let s = f.nets.encoder.forward(tape, store, &f.batch, false).latent;
        let g = f.goals(tape);
        let a = tape.input(&[BATCH, 2], lits(&f.actions));
        critic_loss(tape, store, &f.nets, s, g, a, &lits::<T>(&f.y))
    }
}

impl Differentiable for ActorCheck<'_> {
    fn loss<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>) -> Var {
        let f = self.0;
        let s = f.latent(tape);
        let g = f.goals(tape);
        let t = &f.cfg.train;
        let noise = lits::<T>(&f.noise);
        actor_loss(tape, store, &f.nets, s, g, &noise, T::lit(0.2), (t.log_std_min, t.log_std_max)).0
    }
}

impl Differentiable for AlphaCheck<'_> {
    fn loss<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>) -> Var {
        let f = self.0;
        alpha_loss(tape, store, f.nets.log_alpha, T::lit(1.3), f.cfg.train.target_entropy)
    }
}

impl Differentiable for SclCheck<'_> {
    fn loss<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>) -> Var {
        let f = self.0;
        let heads = f.nets.scl.as_ref().expect("two-view heads");
        // The target branch is a stop-gradient, which finite differences
        // cannot see; it enters as a constant.
        let s = f.latent(tape);
        let z = heads.g.apply(tape, store, s);
        let p = heads.h.apply(tape, store, z);
        let t: Vec<T> = f.latent.iter().rev().map(|&x| T::lit(x)).collect();
        let shape = tape.shape(s).to_vec();
        let t = tape.input(&shape, t);
        cosine_loss(tape, p, t)
    }
}

impl Differentiable for TclCheck<'_> {
    fn loss<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>) -> Var {
        let f = self.0;
        let heads = f.nets.tcl.as_ref().expect("temporal heads");
        let s = f.latent(tape);
        let k = heads.k;
        let acts: Vec<T> = (0..BATCH * 2 * (k + 1)).map(|i| T::lit((i as f64 * 0.37).sin())).collect();
        let a = tape.input(&[BATCH, 2 * (k + 1)], acts);
        let future: Vec<T> = f.latent.iter().map(|&x| T::lit((3.0 * x).cos())).collect();
        let shape = tape.shape(s).to_vec();
        let sf = tape.input(&shape, future);
        heads
            .loss(tape, store, s, a, sf, f.cfg.ssl.temperature)
            .expect("non-empty batch")
    }
}

/// Runs every block check on [`AgentConfig::tiny`] networks in `f64`.
pub fn run_suite(seed: u64) -> Result<Vec<BlockReport>> {
    let cfg = AgentConfig::tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::<f64>::new();
    let nets = Networks::new(&mut store, &cfg, &mut rng)?;
    let p = &cfg.pillar;
    let clouds: Vec<PointCloud> = (0..BATCH)
        .map(|_| {
            let pts = (0..30)
                .map(|_| {
                    [
                        rng.gen_range(p.x_range.0..p.x_range.1) as f32,
                        rng.gen_range(p.y_range.0..p.y_range.1) as f32,
                        rng.gen_range(p.z_range.0..p.z_range.1) as f32,
                    ]
                })
                .collect();
            PointCloud::new(pts)
        })
        .collect();
    let batch = nets.encoder.prepare(&clouds.iter().collect::<Vec<_>>())?;
    let l = nets.encoder.latent_dim();
    let fixture = Fixture {
        latent: uniform(&mut rng, BATCH * l, -1.0, 1.0),
        goals: uniform(&mut rng, BATCH * 2, -1.0, 1.0),
        actions: uniform(&mut rng, BATCH * 2, -0.9, 0.9),
        noise: uniform(&mut rng, BATCH * 2, -1.5, 1.5),
        y: uniform(&mut rng, BATCH, -2.0, 2.0),
        batch,
        nets,
        cfg,
    };
    let f = &fixture;
    let n = &f.nets;
    let mut critic: Vec<ParamId> = n.critic_params();
    critic.dedup();
    let mut out = vec![
        BlockReport {
            block: "encoder",
            report: grad_check_params(&EncoderCheck(f), &store, STEP, &n.encoder.params())?,
        },
        BlockReport {
            block: "critic",
            report: grad_check_params(&CriticCheck(f), &store, STEP, &critic)?,
        },
        BlockReport {
            block: "actor",
            report: grad_check_params(&ActorCheck(f), &store, STEP, &n.actor.params())?,
        },
        BlockReport {
            block: "alpha",
            report: grad_check_params(&AlphaCheck(f), &store, STEP, &[n.log_alpha])?,
        },
    ];
    if let Some(h) = &n.scl {
        out.push(BlockReport {
            block: "scl_heads",
            report: grad_check_params(&SclCheck(f), &store, STEP, &h.params())?,
        });
    }
    if let Some(h) = &n.tcl {
        out.push(BlockReport {
            block: "tcl_heads",
            report: grad_check_params(&TclCheck(f), &store, STEP, &h.params())?,
        });
    }
    Ok(out)
}
