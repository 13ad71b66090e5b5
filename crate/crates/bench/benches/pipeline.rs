use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pillarnav::bev::pillarize;
use pillarnav::nn::Tape;
use pillarnav::run::{Profile, RunConfig, Trainer};
use pillarnav::sim::Env;
use pillarnav::PointCloud;

fn desk_clouds(n: usize) -> Vec<PointCloud> {
    let cfg = RunConfig::preset(Profile::Desk);
    let mut env = Env::new(cfg.world_spec().unwrap(), cfg.sim.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut obs = env.reset(0).unwrap();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        out.push(obs.cloud.clone());
        let step = env.step([rng.gen_range(0.0..1.0), rng.gen_range(-1.0..1.0)]).unwrap();
        obs = if step.done { env.reset(i as u64 + 1).unwrap() } else { step.observation };
    }
    out
}

fn env_step(c: &mut Criterion) {
    let cfg = RunConfig::preset(Profile::Desk);
    let mut env = Env::new(cfg.world_spec().unwrap(), cfg.sim.clone()).unwrap();
    let mut seed = 0;
    env.reset(seed).unwrap();
    c.bench_function("env_step_desk", |b| {
        b.iter(|| {
            let r = env.step(black_box([0.5, 0.1])).unwrap();
            if r.done {
                seed += 1;
                env.reset(seed).unwrap();
            }
        })
    });
}

fn pillarize_cloud(c: &mut Criterion) {
    let cfg = RunConfig::preset(Profile::Desk);
    let cloud = &desk_clouds(1)[0];
    c.bench_function("pillarize_desk", |b| b.iter(|| pillarize(black_box(cloud), &cfg.pillar).unwrap()));
}

fn encoder_forward(c: &mut Criterion) {
    let cfg = RunConfig::preset(Profile::Desk);
    let dir = std::env::temp_dir().join("pillarnav-bench");
    let trainer = Trainer::new(cfg.clone(), 0, &dir).unwrap();
    let clouds = desk_clouds(cfg.train.batch_size);
    let refs: Vec<&PointCloud> = clouds.iter().collect();
    let enc = &trainer.agent.nets.encoder;
    let batch = enc.prepare(&refs).unwrap();
    c.bench_function("encoder_forward_batch64", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            enc.forward(&mut tape, &trainer.agent.store, &batch, true).latent
        })
    });
}

fn sac_update(c: &mut Criterion) {
    let mut cfg = RunConfig::preset(Profile::Desk);
    cfg.train.warmup = 300;
    let dir = std::env::temp_dir().join("pillarnav-bench");
    let mut trainer = Trainer::new(cfg.clone(), 0, &dir).unwrap();
    for _ in 0..cfg.train.warmup {
        trainer.advance().unwrap();
    }
    let mut g = c.benchmark_group("update");
    g.sample_size(10);
    g.bench_function("full_update_batch64", |b| b.iter(|| trainer.agent.update(&trainer.buffer).unwrap()));
    g.finish();
}

criterion_group!(benches, env_step, pillarize_cloud, encoder_forward, sac_update);
criterion_main!(benches);
