//! Exponential moving average of model weights (the teacher update).
//!
//! The incremental form `t += (1 - alpha) * (s - t)` is used because it is a
//! convex combination in floating point too: the result never leaves the
//! interval spanned by `t` and `s`, and the endpoints are handled exactly by
//! dedicated branches.

use crate::error::{Error, Result};
use crate::model::ModelParams;

/// In-place EMA over raw slices: t = alpha * t + (1 - alpha) * s.
pub fn ema_update_slice(teacher: &mut [f64], student: &[f64], alpha: f64) -> Result<()> {
    if teacher.len() != student.len() {
        return Err(Error::invalid("ema: length mismatch"));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("ema: alpha {alpha} outside [0, 1]")));
    }
    if alpha == 0.0 {
        teacher.copy_from_slice(student);
    } else if alpha == 1.0 {
        // Teacher unchanged.
    } else {
        let one_minus = 1.0 - alpha;
        for (t, &s) in teacher.iter_mut().zip(student) {
            *t += one_minus * (s - *t);
        }
    }
    Ok(())
}

/// EMA across every parameter tensor of a model pair.
pub fn ema_update(teacher: &mut ModelParams, student: &ModelParams, alpha: f64) -> Result<()> {
    if teacher.desc != student.desc {
        return Err(Error::invalid("ema: architecture mismatch"));
    }
    let src = student.tensors();
    let mut dst = teacher.tensors_mut();
    if src.len() != dst.len() {
        return Err(Error::invalid("ema: tensor count mismatch"));
    }
    for (t, s) in dst.iter_mut().zip(&src) {
        if t.shape() != s.shape() {
            return Err(Error::invalid("ema: tensor shape mismatch"));
        }
        ema_update_slice(t.data_mut(), s.data(), alpha)?;
    }
    Ok(())
}
