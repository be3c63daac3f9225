//! Training schedules: teacher-momentum ramp, stepped learning-rate decay,
//! and the labeled/unlabeled batch interleave.

use crate::error::{Error, Result};

/// Teacher EMA momentum at global step `t` (piecewise):
/// 0.99 while t <= 98, then 1 - 1/(t+1) while t <= 998, then 0.999.
/// The middle branch starts exactly where it crosses 0.99 and is cut off
/// where it crosses 0.999, giving a ramp from fast-following to stable.
pub fn alpha_schedule(t: i64) -> Result<f64> {
    if t < 0 {
        return Err(Error::invalid("alpha_schedule: step must be >= 0"));
    }
    Ok(if t <= 98 {
        0.99
    } else if t <= 998 {
        1.0 - 1.0 / ((t + 1) as f64)
    } else {
        0.999
    })
}

/// Stepped exponential decay: base * decay^floor(epoch / interval).
pub fn lr_at_epoch(base_lr: f64, decay: f64, interval: usize, epoch: usize) -> Result<f64> {
    if !(base_lr > 0.0) {
        return Err(Error::invalid("lr_at_epoch: base_lr must be > 0"));
    }
    if !(decay > 0.0 && decay <= 1.0) {
        return Err(Error::invalid("lr_at_epoch: decay must be in (0, 1]"));
    }
    if interval == 0 {
        return Err(Error::invalid("lr_at_epoch: interval must be >= 1"));
    }
    let steps = (epoch / interval) as i32;
    Ok(base_lr * decay.powi(steps))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchKind {
    Labeled,
    Unlabeled,
}

/// One epoch's batch order: each labeled batch is followed by
/// `unlabeled_per_labeled` unlabeled batches.
pub fn build_batch_schedule(n_labeled_batches: usize, unlabeled_per_labeled: usize) -> Vec<BatchKind> {
    let mut out = Vec::with_capacity(n_labeled_batches * (1 + unlabeled_per_labeled));
    for _ in 0..n_labeled_batches {
        out.push(BatchKind::Labeled);
        for _ in 0..unlabeled_per_labeled {
            out.push(BatchKind::Unlabeled);
        }
    }
    out
}

/// Default labeled batch size for a labeled-set size.
pub fn default_batch_size(n_labeled: usize) -> usize {
    match n_labeled {
        1 => 1,
        5 => 4,
        _ => 8,
    }
}
