//! Tanh-squashed Gaussian policy over `(v, ω)` with `v = (tanh(u₁)+1)/2`
//! and `ω = tanh(u₂)`.

use std::f64::consts::{LN_2, PI};

use crate::nn::{Scalar, Tape, Var};

const SQUASH_LIMIT: f64 = 1.0 - 1e-6;

#[derive(Clone, Copy, Debug)]
pub struct PolicySample {
    /// `[B, 2]` actions in environment units.
    pub action: Var,
    /// `[B]` log-density of `action`.
    pub log_prob: Var,
}

/// Reparameterized sample from actor output `out: [B, 4]` laid out as
/// `(mean₁, mean₂, log_std₁, log_std₂)`. `noise` holds `B×2` standard
/// normal draws; all zeros gives the deterministic action.
pub fn squashed_sample<T: Scalar>(
    tape: &mut Tape<T>,
    out: Var,
    noise: &[T],
    log_std_bounds: (f64, f64),
) -> PolicySample {
    let b = tape.shape(out)[0];
    assert_eq!(tape.shape(out), &[b, 4], "actor output must be [B, 4]");
    assert_eq!(noise.len(), 2 * b, "need two noise values per row");
    let mean = tape.narrow_cols(out, 0, 2);
    let raw = tape.narrow_cols(out, 2, 2);
    let log_std = tape.clamp(raw, T::lit(log_std_bounds.0), T::lit(log_std_bounds.1));
    let std = tape.exp(log_std);
    let eps = tape.input(&[b, 2], noise.to_vec());
    let scaled = tape.mul(std, eps);
    let u = tape.add(mean, scaled);
    let t = tape.tanh(u);
    // f32 tanh reaches ±1 exactly for |u| ≳ 9; keep actions strictly inside.
    let t = tape.clamp(t, T::lit(SQUASH_LIMIT).neg(), T::lit(SQUASH_LIMIT));
    let tv = tape.narrow_cols(t, 0, 1);
    let v = tape.affine(tv, T::lit(0.5), T::lit(0.5));
    let w = tape.narrow_cols(t, 1, 1);
    let action = tape.concat_cols(&[v, w]);

    // log N(u; μ, σ) with (u − μ)/σ = ε, minus log|d squash / du|.
    let half_log_2pi = 0.5 * (2.0 * PI).ln();
    let base = noise.iter().map(|&e| T::lit(-0.5) * e * e - T::lit(half_log_2pi)).collect();
    let base = tape.input(&[b, 2], base);
    let gauss = tape.sub(base, log_std);
    let jac = tape.tanh_log_jacobian(u);
    let per_dim = tape.sub(gauss, jac);
    let summed = tape.sum_rows(per_dim);
    // The affine map to v halves the density's support: + ln 2.
    let log_prob = tape.affine(summed, T::one(), T::lit(LN_2));
    PolicySample { action, log_prob }
}

/// Closed-form log-density of an environment action, for reference.
pub fn log_prob_of(mean: [f64; 2], log_std: [f64; 2], action: [f64; 2]) -> f64 {
    let u = [(2.0 * action[0] - 1.0).atanh(), action[1].atanh()];
    let mut lp = LN_2;
    for i in 0..2 {
        let s = log_std[i].exp();
        let z = (u[i] - mean[i]) / s;
        lp += -0.5 * z * z - log_std[i] - 0.5 * (2.0 * PI).ln();
        lp -= (1.0 - u[i].tanh().powi(2)).ln();
    }
    lp
}
