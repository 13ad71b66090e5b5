use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bev::{downsample_cloud, PointCloud};
use crate::error::{Error, Result};

use super::geometry::{ray_cylinder, ray_floor, ray_walls, wall_distance, wrap_angle};
use super::{compute_reward, BoxObstacle, PedestrianSpec, SimConfig, WorldSpec, PEDESTRIAN_SPEED};

const MAX_TRIES: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Running,
    Goal,
    Collision,
    Timeout,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Running => "running",
            Outcome::Goal => "goal",
            Outcome::Collision => "collision",
            Outcome::Timeout => "timeout",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RobotState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
    pub omega: f64,
    pub radius: f64,
}

impl RobotState {
    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pedestrian {
    pub spec: PedestrianSpec,
    pub position: [f64; 2],
    /// Index of the waypoint currently walked toward.
    pub next: usize,
}

impl Pedestrian {
    fn new(spec: PedestrianSpec) -> Self {
        let position = spec.waypoints[0];
        let next = 1 % spec.waypoints.len();
        Self { spec, position, next }
    }

    /// Walks `dist` meters along the loop, turning at waypoints.
    pub fn advance(&mut self, mut dist: f64) {
        let n = self.spec.waypoints.len();
        if n < 2 {
            return;
        }
        // A loop whose waypoints coincide has zero length.
        let mut idle = 0;
        while dist > 0.0 && idle <= n {
            let target = self.spec.waypoints[self.next];
            let gap = (target[0] - self.position[0]).hypot(target[1] - self.position[1]);
            if gap > dist {
                let f = dist / gap;
                self.position[0] += f * (target[0] - self.position[0]);
                self.position[1] += f * (target[1] - self.position[1]);
                return;
            }
            dist -= gap;
            idle = if gap == 0.0 { idle + 1 } else { 0 };
            self.position = target;
            self.next = (self.next + 1) % n;
        }
    }
}

/// Realized layout of one episode.
#[derive(Clone, Debug, PartialEq)]
pub struct World {
    pub half_extent: f64,
    pub wall_height: f64,
    pub boxes: Vec<BoxObstacle>,
    pub pedestrians: Vec<Pedestrian>,
}

impl World {
    /// Smallest gap between a disc of `radius` at `p` and any obstacle
    /// surface (negative when overlapping).
    pub fn clearance(&self, p: [f64; 2], radius: f64) -> f64 {
        let mut gap = wall_distance(p, self.half_extent) - radius;
        for b in &self.boxes {
            gap = gap.min(b.distance(p) - radius);
        }
        for ped in &self.pedestrians {
            let d = (p[0] - ped.position[0]).hypot(p[1] - ped.position[1]);
            gap = gap.min(d - radius - ped.spec.radius);
        }
        gap
    }

    /// Casts every ray of the camera grid and returns hits within range in
    /// the camera frame (x right, y forward, z height above the floor).
    pub fn raycast_raw(&self, robot: &RobotState, cfg: &SimConfig) -> PointCloud {
        let (st, ct) = robot.theta.sin_cos();
        let fwd = [ct, st];
        let right = [st, -ct];
        let o = [robot.x, robot.y, cfg.camera_height];
        let (hf, vf) = (cfg.hfov_deg.to_radians(), cfg.vfov_deg.to_radians());
        let mut points = Vec::with_capacity(cfg.rays_h * cfg.rays_v);
        for j in 0..cfg.rays_v {
            let elev = -vf / 2.0 + vf * j as f64 / (cfg.rays_v - 1) as f64;
            let (se, ce) = elev.sin_cos();
            for i in 0..cfg.rays_h {
                let az = -hf / 2.0 + hf * i as f64 / (cfg.rays_h - 1) as f64;
                let (sa, ca) = az.sin_cos();
                let dc = [ce * sa, ce * ca, se];
                let dir = [
                    dc[0] * right[0] + dc[1] * fwd[0],
                    dc[0] * right[1] + dc[1] * fwd[1],
                    dc[2],
                ];
                let mut best = f64::INFINITY;
                let mut floor = false;
                if let Some(t) = ray_floor(o, dir) {
                    best = t;
                    floor = true;
                }
                let mut consider = |t: Option<f64>| {
                    if let Some(t) = t {
                        if t < best {
                            best = t;
                            floor = false;
                        }
                    }
                };
                consider(ray_walls(o, dir, self.half_extent, self.wall_height));
                for b in &self.boxes {
                    consider(b.ray(o, dir));
                }
                for p in &self.pedestrians {
                    consider(ray_cylinder(o, dir, p.position, p.spec.radius, p.spec.height));
                }
                if best >= cfg.min_range && best <= cfg.max_range {
                    let z = if floor { 0.0 } else { o[2] + best * dc[2] };
                    points.push([(best * dc[0]) as f32, (best * dc[1]) as f32, z as f32]);
                }
            }
        }
        PointCloud::new(points)
    }
}

/// Strict penetration test of the robot disc against walls, boxes and
/// pedestrians.
pub fn collision_check(robot: &RobotState, world: &World) -> bool {
    world.clearance(robot.position(), robot.radius) < 0.0
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub cloud: PointCloud,
    pub goal_distance: f64,
    /// Goal direction relative to the heading, in `(-π, π]`.
    pub goal_bearing: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub outcome: Outcome,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub t: usize,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
    pub omega: f64,
    pub reward: f64,
    pub outcome: Outcome,
}

/// Navigation episode runner.
#[derive(Clone, Debug)]
pub struct Env {
    spec: WorldSpec,
    cfg: SimConfig,
    world: World,
    robot: RobotState,
    start: [f64; 2],
    goal: [f64; 2],
    rng: ChaCha8Rng,
    steps: usize,
    done: bool,
    prev_distance: f64,
    path_length: f64,
    trace: Vec<TraceRow>,
}

impl Env {
    pub fn new(spec: WorldSpec, cfg: SimConfig) -> Result<Self> {
        spec.validate()?;
        cfg.validate()?;
        let world = World {
            half_extent: spec.half_extent,
            wall_height: spec.wall_height,
            boxes: spec.boxes.clone(),
            pedestrians: spec.pedestrians.iter().cloned().map(Pedestrian::new).collect(),
        };
        let robot = RobotState {
            x: 0.0,
            y: 0.0,
            theta: 0.0,
            v: 0.0,
            omega: 0.0,
            radius: cfg.robot_radius,
        };
        Ok(Self {
            spec,
            cfg,
            world,
            robot,
            start: [0.0; 2],
            goal: [0.0; 2],
            rng: ChaCha8Rng::seed_from_u64(0),
            steps: 0,
            done: true,
            prev_distance: 0.0,
            path_length: 0.0,
            trace: Vec::new(),
        })
    }

    pub fn spec(&self) -> &WorldSpec {
        &self.spec
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn robot(&self) -> &RobotState {
        &self.robot
    }

    pub fn start(&self) -> [f64; 2] {
        self.start
    }

    pub fn goal(&self) -> [f64; 2] {
        self.goal
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Sum of per-step displacements since reset.
    pub fn path_length(&self) -> f64 {
        self.path_length
    }

    pub fn trace(&self) -> &[TraceRow] {
        &self.trace
    }

    pub fn goal_distance(&self) -> f64 {
        (self.goal[0] - self.robot.x).hypot(self.goal[1] - self.robot.y)
    }

    fn sample_free<R: Rng>(rng: &mut R, world: &World, margin: f64) -> Result<[f64; 2]> {
        let h = world.half_extent;
        for _ in 0..MAX_TRIES {
            let p = [rng.gen_range(-h..h), rng.gen_range(-h..h)];
            if world.clearance(p, 0.0) >= margin {
                return Ok(p);
            }
        }
        Err(Error::WorldTooDense(MAX_TRIES))
    }

    fn sample_boxes<R: Rng>(&self, rng: &mut R, world: &mut World) -> Result<()> {
        let (smin, smax) = self.spec.random_box_side;
        let h = self.spec.half_extent;
        let gap = 2.0 * self.cfg.robot_radius;
        for _ in 0..self.spec.random_boxes {
            let mut placed = false;
            for _ in 0..MAX_TRIES {
                let size = [rng.gen_range(smin..=smax), rng.gen_range(smin..=smax)];
                let lim = [h - size[0] / 2.0 - gap, h - size[1] / 2.0 - gap];
                if lim[0] <= 0.0 || lim[1] <= 0.0 {
                    continue;
                }
                let b = BoxObstacle {
                    center: [rng.gen_range(-lim[0]..lim[0]), rng.gen_range(-lim[1]..lim[1])],
                    size,
                    height: 1.0,
                };
                let clear = world.boxes.iter().all(|o| box_gap(o, &b) >= gap);
                if clear {
                    world.boxes.push(b);
                    placed = true;
                    break;
                }
            }
            if !placed {
                return Err(Error::WorldTooDense(MAX_TRIES));
            }
        }
        Ok(())
    }

    fn sample_pedestrians<R: Rng>(&self, rng: &mut R, world: &mut World) -> Result<()> {
        let radius = 0.25;
        for _ in 0..self.spec.random_pedestrians {
            let mut waypoints = Vec::with_capacity(3);
            let mut tries = 0;
            while waypoints.len() < 3 {
                tries += 1;
                if tries > MAX_TRIES {
                    return Err(Error::WorldTooDense(MAX_TRIES));
                }
                let p = Self::sample_free(rng, world, radius + 0.1)?;
                let ok = match waypoints.last() {
                    None => true,
                    Some(&q) => segment_clear(world, q, p, radius),
                };
                let closes = waypoints.len() < 2 || segment_clear(world, p, waypoints[0], radius);
                if ok && closes {
                    waypoints.push(p);
                }
            }
            let spec = PedestrianSpec {
                waypoints,
                radius,
                height: 1.7,
            };
            let perimeter: f64 = (0..3)
                .map(|i| {
                    let (a, b) = (spec.waypoints[i], spec.waypoints[(i + 1) % 3]);
                    (a[0] - b[0]).hypot(a[1] - b[1])
                })
                .sum();
            let mut ped = Pedestrian::new(spec);
            ped.advance(rng.gen_range(0.0..perimeter.max(1e-9)));
            world.pedestrians.push(ped);
        }
        Ok(())
    }

    /// Draws a new layout, pose and goal from `seed`.
    pub fn reset(&mut self, seed: u64) -> Result<Observation> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut world = World {
            half_extent: self.spec.half_extent,
            wall_height: self.spec.wall_height,
            boxes: self.spec.boxes.clone(),
            pedestrians: self.spec.pedestrians.iter().cloned().map(Pedestrian::new).collect(),
        };
        self.sample_boxes(&mut rng, &mut world)?;
        self.sample_pedestrians(&mut rng, &mut world)?;
        let margin = 2.0 * self.cfg.robot_radius;
        let start = Self::sample_free(&mut rng, &world, margin)?;
        let theta = wrap_angle(rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI));
        let mut goal = None;
        for _ in 0..MAX_TRIES {
            let g = Self::sample_free(&mut rng, &world, margin)?;
            if (g[0] - start[0]).hypot(g[1] - start[1]) >= self.cfg.goal_min_distance {
                goal = Some(g);
                break;
            }
        }
        let goal = goal.ok_or(Error::WorldTooDense(MAX_TRIES))?;
        self.world = world;
        self.start = start;
        self.goal = goal;
        self.robot = RobotState {
            x: start[0],
            y: start[1],
            theta,
            v: 0.0,
            omega: 0.0,
            radius: self.cfg.robot_radius,
        };
        self.rng = rng;
        self.steps = 0;
        self.done = false;
        self.path_length = 0.0;
        self.prev_distance = self.goal_distance();
        self.trace.clear();
        self.observe()
    }

    /// Overrides pose and goal mid-episode, mainly for scripted tests.
    pub fn place(&mut self, x: f64, y: f64, theta: f64, goal: [f64; 2]) {
        self.robot.x = x;
        self.robot.y = y;
        self.robot.theta = wrap_angle(theta);
        self.goal = goal;
        self.prev_distance = self.goal_distance();
    }

    pub fn world_mut(&mut self) -> &mut World {
        &mut self.world
    }

    pub fn observe(&mut self) -> Result<Observation> {
        let raw = self.world.raycast_raw(&self.robot, &self.cfg);
        let cloud = downsample_cloud(&raw, self.cfg.cloud_points, &mut self.rng)?;
        let (dx, dy) = (self.goal[0] - self.robot.x, self.goal[1] - self.robot.y);
        Ok(Observation {
            cloud,
            goal_distance: dx.hypot(dy),
            goal_bearing: wrap_angle(dy.atan2(dx) - self.robot.theta),
        })
    }

    /// Applies `(v, ω)` for one tick. Actions are clamped to `[0, 1]` and
    /// `[-1, 1]`.
    pub fn step(&mut self, action: [f64; 2]) -> Result<StepResult> {
        if self.done {
            return Err(Error::EpisodeFinished);
        }
        if !(action[0].is_finite() && action[1].is_finite()) {
            return Err(Error::NonFinite(format!("action {action:?}")));
        }
        let v = action[0].clamp(0.0, 1.0);
        let omega = action[1].clamp(-1.0, 1.0);
        let dt = self.cfg.dt;
        let r = &mut self.robot;
        let (x0, y0) = (r.x, r.y);
        r.x += v * r.theta.cos() * dt;
        r.y += v * r.theta.sin() * dt;
        r.theta = wrap_angle(r.theta + omega * dt);
        r.v = v;
        r.omega = omega;
        self.path_length += (r.x - x0).hypot(r.y - y0);
        for p in &mut self.world.pedestrians {
            p.advance(PEDESTRIAN_SPEED * dt);
        }
        self.steps += 1;

        let d = self.goal_distance();
        let collided = collision_check(&self.robot, &self.world);
        let reward = compute_reward(&self.cfg.reward, d, self.prev_distance, v, omega, collided);
        let outcome = if d < self.cfg.reward.goal_radius {
            Outcome::Goal
        } else if collided {
            Outcome::Collision
        } else if self.steps >= self.cfg.max_steps {
            Outcome::Timeout
        } else {
            Outcome::Running
        };
        self.prev_distance = d;
        self.done = outcome != Outcome::Running;
        self.trace.push(TraceRow {
            t: self.steps,
            x: self.robot.x,
            y: self.robot.y,
            theta: self.robot.theta,
            v,
            omega,
            reward,
            outcome,
        });
        Ok(StepResult {
            observation: self.observe()?,
            reward,
            done: self.done,
            outcome,
        })
    }

    pub fn write_trace_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "t,x,y,theta,v,omega,reward,outcome")?;
        for r in &self.trace {
            writeln!(
                f,
                "{},{},{},{},{},{},{},{}",
                r.t, r.x, r.y, r.theta, r.v, r.omega, r.reward, r.outcome
            )?;
        }
        f.flush()?;
        Ok(())
    }
}

fn box_gap(a: &BoxObstacle, b: &BoxObstacle) -> f64 {
    let (alo, ahi, blo, bhi) = (a.min(), a.max(), b.min(), b.max());
    let dx = (blo[0] - ahi[0]).max(alo[0] - bhi[0]).max(0.0);
    let dy = (blo[1] - ahi[1]).max(alo[1] - bhi[1]).max(0.0);
    dx.hypot(dy)
}

/// Whether a disc of `radius` can slide from `a` to `b` without touching
/// any box, checked every 5 cm.
fn segment_clear(world: &World, a: [f64; 2], b: [f64; 2], radius: f64) -> bool {
    let len = (b[0] - a[0]).hypot(b[1] - a[1]);
    let n = (len / 0.05).ceil() as usize + 1;
    (0..=n).all(|i| {
        let f = i as f64 / n as f64;
        let p = [a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])];
        world.boxes.iter().all(|bx| bx.distance(p) > radius)
    })
}
