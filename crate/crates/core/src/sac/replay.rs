use std::collections::VecDeque;

use rand::Rng;

use crate::bev::PointCloud;
use crate::error::{Error, Result};

/// What the agent sees at one time step.
#[derive(Clone, Debug, PartialEq)]
pub struct ObsRecord {
    pub cloud: PointCloud,
    /// `(distance / arena diagonal, bearing / π)`.
    pub goal: [f32; 2],
}

/// Observations `o_0..o_T` and the `T` transitions between them.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Episode {
    pub obs: Vec<ObsRecord>,
    pub actions: Vec<[f32; 2]>,
    pub rewards: Vec<f32>,
    pub dones: Vec<bool>,
}

impl Episode {
    pub fn transitions(&self) -> usize {
        self.actions.len()
    }

    /// First index of a `k`-step action window for a transition sampled at
    /// `t`, pulled back so that `a_start..=a_start+k` stays in the episode.
    pub fn window_start(&self, t: usize, k: usize) -> Option<usize> {
        let n = self.transitions();
        (n > k).then(|| t.min(n - 1 - k))
    }
}

/// A sampled transition: episode position in the buffer and step index.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Index {
    pub episode: usize,
    pub t: usize,
}

/// Episodic replay with whole-episode eviction once `capacity`
/// transitions are exceeded.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    episodes: VecDeque<Episode>,
    transitions: usize,
    open: bool,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            episodes: VecDeque::new(),
            transitions: 0,
            open: false,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Stored transitions.
    pub fn len(&self) -> usize {
        self.transitions
    }

    pub fn is_empty(&self) -> bool {
        self.transitions == 0
    }

    pub fn episodes(&self) -> &VecDeque<Episode> {
        &self.episodes
    }

    pub fn episode(&self, i: usize) -> &Episode {
        &self.episodes[i]
    }

    /// Starts a new episode at observation `o_0`. An unfinished previous
    /// episode is kept as is.
    pub fn begin_episode(&mut self, first: ObsRecord) {
        if self.episodes.back().is_some_and(|e| e.transitions() == 0) {
            self.episodes.pop_back();
        }
        self.episodes.push_back(Episode {
            obs: vec![first],
            ..Episode::default()
        });
        self.open = true;
        self.evict();
    }

    pub fn push(&mut self, action: [f32; 2], reward: f32, done: bool, next: ObsRecord) -> Result<()> {
        if !self.open {
            return Err(Error::Batch("push without an open episode".into()));
        }
        let ep = self.episodes.back_mut().expect("open episode");
        ep.actions.push(action);
        ep.rewards.push(reward);
        ep.dones.push(done);
        ep.obs.push(next);
        self.transitions += 1;
        if done {
            self.open = false;
        }
        self.evict();
        Ok(())
    }

    fn evict(&mut self) {
        while self.transitions > self.capacity && self.episodes.len() > 1 {
            let old = self.episodes.pop_front().expect("non-empty");
            self.transitions -= old.transitions();
        }
    }

    /// Transitions whose window of `k` further actions fits in an episode.
    pub fn usable_windows(&self, k: usize) -> usize {
        self.episodes.iter().map(|e| e.transitions().saturating_sub(k)).sum()
    }

    /// `n` transitions drawn uniformly with replacement.
    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> Result<Vec<Index>> {
        if self.transitions == 0 {
            return Err(Error::Batch("cannot sample from an empty buffer".into()));
        }
        let mut prefix = Vec::with_capacity(self.episodes.len());
        let mut acc = 0;
        for e in &self.episodes {
            acc += e.transitions();
            prefix.push(acc);
        }
        Ok((0..n)
            .map(|_| {
                let u = rng.gen_range(0..self.transitions);
                let episode = prefix.partition_point(|&p| p <= u);
                let before = if episode == 0 { 0 } else { prefix[episode - 1] };
                Index { episode, t: u - before }
            })
            .collect())
    }
}
