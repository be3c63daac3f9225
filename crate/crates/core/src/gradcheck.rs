//! Central-difference verification of reverse-mode gradients.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Outcome of one finite-difference comparison.
///
/// `skipped` counts coordinates whose perturbed evaluations crossed a branch
/// of a piecewise op (relu/abs sign, bilinear cell or clamp); central
/// differences are meaningless across a kink, so those coordinates are
/// excluded rather than compared.
#[derive(Clone, Copy, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    pub skipped: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

/// Compares the reverse-mode gradient of `f` at `x` against central
/// differences with step `eps`. `f` must build a scalar on the given tape
/// from the single grad-tracked leaf it receives.
///
/// Relative error uses `|a - n| / max(1, |a|, |n|)` so tiny gradients are
/// judged on absolute error.
pub fn finite_diff_check<F>(f: F, x: &Tensor, eps: f64) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    if eps <= 0.0 {
        return Err(Error::invalid(format!("finite_diff_check: eps must be positive, got {eps}")));
    }
    let (analytic, base_sig) = {
        let tape = Tape::with_trace();
        let leaf = tape.leaf(x.clone(), true);
        let loss = f(&tape, leaf)?;
        if loss.value().len() != 1 {
            return Err(Error::invalid("finite_diff_check: f must be scalar-valued"));
        }
        let sig = tape.take_trace();
        let grads = loss.backward()?;
        (grads.wrt(leaf), sig)
    };

    let eval = |data: &[f64]| -> Result<(f64, Vec<i32>)> {
        let tape = Tape::with_trace();
        let leaf = tape.leaf(Tensor::new(x.shape().to_vec(), data.to_vec())?, false);
        let loss = f(&tape, leaf)?;
        let v = loss.value().item()?;
        Ok((v, tape.take_trace()))
    };

    let mut report = GradCheckReport { max_rel_err: 0.0, checked: 0, skipped: 0 };
    let mut buf = x.data().to_vec();
    for i in 0..buf.len() {
        let orig = buf[i];
        buf[i] = orig + eps;
        let (f_plus, sig_plus) = eval(&buf)?;
        buf[i] = orig - eps;
        let (f_minus, sig_minus) = eval(&buf)?;
        buf[i] = orig;
        if sig_plus != base_sig || sig_minus != base_sig {
            report.skipped += 1;
            continue;
        }
        let numeric = (f_plus - f_minus) / (2.0 * eps);
        let a = analytic.data()[i];
        let rel = (a - numeric).abs() / 1.0f64.max(a.abs()).max(numeric.abs());
        report.max_rel_err = report.max_rel_err.max(rel);
        report.checked += 1;
    }
    Ok(report)
}
