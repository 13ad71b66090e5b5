//! Auxiliary self-supervised objectives over encoder latents: a symmetrized
//! stop-gradient cosine loss between two shifted views, and an InfoNCE loss
//! that predicts a future latent from the current one and the actions taken.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bev::PointCloud;
use crate::error::{Error, Result};
use crate::nn::{Mlp, ParamId, ParamStore, Scalar, Tape, Var};

/// Norm guard for every normalization in this module.
pub const NORM_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SslConfig {
    /// Bound of the uniform per-axis horizontal shift (m).
    pub shift: f64,
    pub proj_hidden: usize,
    pub pred_hidden: usize,
    pub action_hidden: usize,
    pub tcl_hidden: usize,
    pub tcl_embed: usize,
    pub temperature: f64,
}

impl Default for SslConfig {
    fn default() -> Self {
        Self {
            shift: 0.01,
            proj_hidden: 256,
            pred_hidden: 64,
            action_hidden: 64,
            tcl_hidden: 128,
            tcl_embed: 64,
            temperature: 0.1,
        }
    }
}

impl SslConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.shift.is_finite() && self.shift >= 0.0) {
            return Err(Error::config("ssl.shift", "must be non-negative"));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::config("ssl.temperature", "must be positive"));
        }
        let dims = [
            ("ssl.proj_hidden", self.proj_hidden),
            ("ssl.pred_hidden", self.pred_hidden),
            ("ssl.action_hidden", self.action_hidden),
            ("ssl.tcl_hidden", self.tcl_hidden),
            ("ssl.tcl_embed", self.tcl_embed),
        ];
        for (field, d) in dims {
            if d == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        Ok(())
    }
}

/// Translates every point by one horizontal offset drawn from
/// `U[-shift, shift]²`. Heights are untouched.
pub fn augment<R: Rng>(cloud: &PointCloud, shift: f64, rng: &mut R) -> PointCloud {
    let dx = rng.gen_range(-shift..=shift) as f32;
    let dy = rng.gen_range(-shift..=shift) as f32;
    PointCloud {
        points: cloud.points.iter().map(|p| [p[0] + dx, p[1] + dy, p[2]]).collect(),
        frame: cloud.frame,
    }
}

/// Batch mean of `1 − cos(pred_i, target_i)`.
pub fn cosine_loss<T: Scalar>(tape: &mut Tape<T>, pred: Var, target: Var) -> Var {
    let eps = T::lit(NORM_EPS);
    let p = tape.l2_normalize_rows(pred, eps);
    let t = tape.l2_normalize_rows(target, eps);
    let prod = tape.mul(p, t);
    let cos = tape.sum_rows(prod);
    let one_minus = tape.affine(cos, -T::one(), T::one());
    tape.mean(one_minus)
}

/// A map from latents to latents; lets tests swap in the identity.
pub trait Head {
    fn apply<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Var;
}

impl Head for Mlp {
    fn apply<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Var {
        self.forward(tape, store, x)
    }
}

pub struct Identity;

impl Head for Identity {
    fn apply<T: Scalar>(&self, _: &mut Tape<T>, _: &ParamStore<T>, x: Var) -> Var {
        x
    }
}

/// Projection `g` and prediction `h` for the two-view loss.
#[derive(Clone, Debug, PartialEq)]
pub struct SclHeads {
    pub g: Mlp,
    pub h: Mlp,
}

impl SclHeads {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        latent: usize,
        cfg: &SslConfig,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            g: Mlp::new(store, &format!("{name}.g"), &[latent, cfg.proj_hidden, latent], rng)?,
            h: Mlp::new(store, &format!("{name}.h"), &[latent, cfg.pred_hidden, latent], rng)?,
        })
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.g.params();
        p.extend(self.h.params());
        p
    }
}

/// One direction: `cosine_loss(h(g(s_online)), stopgrad(g(s_target)))`.
pub fn scl_direction<T: Scalar, G: Head, H: Head>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    g: &G,
    h: &H,
    s_online: Var,
    s_target: Var,
) -> Var {
    let z = g.apply(tape, store, s_online);
    let p = h.apply(tape, store, z);
    let zt = g.apply(tape, store, s_target);
    let zt = tape.detach(zt);
    cosine_loss(tape, p, zt)
}

/// Symmetrized two-view loss over latents `s1`, `s2` of shape `[B, L]`.
pub fn scl_loss<T: Scalar, G: Head, H: Head>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    g: &G,
    h: &H,
    s1: Var,
    s2: Var,
) -> Var {
    let z1 = g.apply(tape, store, s1);
    let z2 = g.apply(tape, store, s2);
    let p1 = h.apply(tape, store, z1);
    let p2 = h.apply(tape, store, z2);
    let t1 = tape.detach(z1);
    let t2 = tape.detach(z2);
    let a = cosine_loss(tape, p1, t2);
    let b = cosine_loss(tape, p2, t1);
    let sum = tape.add(a, b);
    tape.affine(sum, T::lit(0.5), T::zero())
}

/// `-(1/N) Σ_i log softmax_j(pred_i · target_j / τ)[i]` on L2-normalized
/// rows.
pub fn info_nce<T: Scalar>(tape: &mut Tape<T>, pred: Var, target: Var, temperature: f64) -> Result<Var> {
    let n = tape.shape(pred)[0];
    if n == 0 {
        return Err(Error::Batch("contrastive loss needs at least one row".into()));
    }
    if tape.shape(target)[0] != n {
        return Err(Error::Batch(format!(
            "prediction rows {n} != target rows {}",
            tape.shape(target)[0]
        )));
    }
    let eps = T::lit(NORM_EPS);
    let p = tape.l2_normalize_rows(pred, eps);
    let t = tape.l2_normalize_rows(target, eps);
    let tt = tape.transpose(t);
    let sim = tape.matmul(p, tt);
    let logits = tape.affine(sim, T::lit(1.0 / temperature), T::zero());
    Ok(info_nce_logits(tape, logits))
}

/// Cross-entropy of each row of `logits: [N, N]` against its diagonal.
pub fn info_nce_logits<T: Scalar>(tape: &mut Tape<T>, logits: Var) -> Var {
    let n = tape.shape(logits)[0];
    let ls = tape.log_softmax_rows(logits);
    let idx: Vec<usize> = (0..n).collect();
    let diag = tape.gather_cols(ls, &idx);
    let m = tape.mean(diag);
    tape.neg(m)
}

/// Action encoder, predictor and target projector.
#[derive(Clone, Debug, PartialEq)]
pub struct TclHeads {
    pub k: usize,
    pub action: Mlp,
    pub predictor: Mlp,
    pub target: Mlp,
}

impl TclHeads {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        latent: usize,
        k: usize,
        cfg: &SslConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let a = cfg.action_hidden;
        Ok(Self {
            k,
            action: Mlp::new(store, &format!("{name}.action"), &[2 * (k + 1), a, a], rng)?,
            predictor: Mlp::new(
                store,
                &format!("{name}.predictor"),
                &[a + latent, cfg.tcl_hidden, cfg.tcl_embed],
                rng,
            )?,
            target: Mlp::new(store, &format!("{name}.target"), &[latent, cfg.tcl_embed], rng)?,
        })
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.action.params();
        p.extend(self.predictor.params());
        p.extend(self.target.params());
        p
    }

    /// `s_t: [N, L]`, `actions: [N, 2(K+1)]`, `s_tk: [N, L]`. The future
    /// latent is detached before its projector.
    pub fn loss<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        s_t: Var,
        actions: Var,
        s_tk: Var,
        temperature: f64,
    ) -> Result<Var> {
        let c = self.action.forward(tape, store, actions);
        let joint = tape.concat_cols(&[c, s_t]);
        let pred = self.predictor.forward(tape, store, joint);
        let future = tape.detach(s_tk);
        let target = self.target.forward(tape, store, future);
        info_nce(tape, pred, target, temperature)
    }
}
