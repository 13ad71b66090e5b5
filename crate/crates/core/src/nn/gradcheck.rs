//! Central finite-difference gradient checking.
//!
//! Models run in `f64` here: the same generic forward code as training, but
//! with enough precision that finite differences resolve the gradient.

use crate::error::Result;

use super::{ParamId, ParamStore, Scalar, Tape, Var};

/// A scalar-valued function of a parameter store.
pub trait Differentiable {
    fn loss<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>) -> Var;
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamReport {
    pub name: String,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub max_abs_grad: f64,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct GradCheckReport {
    pub params: Vec<ParamReport>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_err() < tolerance
    }
}

/// Relative error with a small floor so that two near-zero gradients do
/// not produce a spurious large ratio.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / denom
}

fn eval<M: Differentiable>(model: &M, store: &ParamStore<f64>) -> f64 {
    let mut tape = Tape::<f64>::new();
    let loss = model.loss(&mut tape, store);
    tape.data(loss)[0]
}

/// Compares every parameter's analytic gradient against central differences
/// with step `h`, entirely in `f64`.
pub fn grad_check<M: Differentiable, S: Scalar>(
    model: &M,
    store: &ParamStore<S>,
    h: f64,
) -> Result<GradCheckReport> {
    let ids: Vec<_> = store.ids().collect();
    grad_check_params(model, store, h, &ids)
}

/// Like [`grad_check`] but only over `ids`. Parameters read through frozen
/// paths must be left out: the loss depends on them but they get no
/// gradient.
pub fn grad_check_params<M: Differentiable, S: Scalar>(
    model: &M,
    store: &ParamStore<S>,
    h: f64,
    ids: &[ParamId],
) -> Result<GradCheckReport> {
    let mut store: ParamStore<f64> = store.cast();
    store.zero_grad();
    let mut tape = Tape::<f64>::new();
    let loss = model.loss(&mut tape, &store);
    tape.backward(loss, &mut store)?;

    let mut report = GradCheckReport::default();
    for &id in ids {
        let analytic = store
            .tensor(id)
            .grad()
            .map(|g| g.to_vec())
            .unwrap_or_else(|| vec![0.0; store.tensor(id).numel()]);
        let mut pr = ParamReport {
            name: store.name(id).to_string(),
            max_rel_err: 0.0,
            max_abs_err: 0.0,
            max_abs_grad: 0.0,
        };
        for (k, &a) in analytic.iter().enumerate() {
            let orig = store.tensor(id).data()[k];
            store.tensor_mut(id).data_mut()[k] = orig + h;
            let up = eval(model, &store);
            store.tensor_mut(id).data_mut()[k] = orig - h;
            let down = eval(model, &store);
            store.tensor_mut(id).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            pr.max_rel_err = pr.max_rel_err.max(rel_err(a, numeric));
            pr.max_abs_err = pr.max_abs_err.max((a - numeric).abs());
            pr.max_abs_grad = pr.max_abs_grad.max(a.abs());
        }
        report.params.push(pr);
    }
    Ok(report)
}
