//! Training losses.
//!
//! * Global stage: margin-hinged mean absolute error, so coordinate noise
//!   below the margin contributes nothing.
//! * Local stage: plain mean absolute error.
//! * Consistency: Jensen-Shannon divergence between the channel-softmax
//!   distributions of two feature maps (averaged over all elements), used to
//!   align student and teacher encoders on unlabeled images.

use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Hinge margin of the global loss.
    pub margin: f64,
    /// Weight of the local refinement loss.
    pub w_local: f64,
    /// Weight of the feature-consistency loss.
    pub w_consistency: f64,
    /// Divergence floor added to probabilities before taking logs.
    pub kl_epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { margin: 0.01, w_local: 1.0, w_consistency: 1.0, kl_epsilon: 1e-8 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin >= 0.0) {
            return Err(Error::invalid("loss config: margin must be >= 0"));
        }
        if !(self.w_local >= 0.0) || !(self.w_consistency >= 0.0) {
            return Err(Error::invalid("loss config: loss weights must be >= 0"));
        }
        if !(self.kl_epsilon > 0.0 && self.kl_epsilon <= 1e-6) {
            return Err(Error::invalid("loss config: kl_epsilon must be in (0, 1e-6]"));
        }
        Ok(())
    }
}

fn check_landmark_pair(v: &Var<'_>, gt: &Var<'_>) -> Result<()> {
    let sv = v.shape();
    let sg = gt.shape();
    if sv.len() != 2 || sv[1] != 2 || sv != sg {
        return Err(Error::invalid(format!(
            "landmark loss: prediction {sv:?} and target {sg:?} must both be [k,2]"
        )));
    }
    Ok(())
}

/// Hinged mean absolute error: hinge(mean(|v - gt|) - margin). Scalar output.
pub fn global_loss<'t>(v: Var<'t>, gt: Var<'t>, margin: f64) -> Result<Var<'t>> {
    if !(margin >= 0.0) {
        return Err(Error::invalid("global_loss: margin must be >= 0"));
    }
    check_landmark_pair(&v, &gt)?;
    Ok(v.sub(gt)?.abs().mean()?.add_scalar(-margin).hinge())
}

/// Mean absolute error over all coordinates. Scalar output.
pub fn local_loss<'t>(v: Var<'t>, gt: Var<'t>) -> Result<Var<'t>> {
    check_landmark_pair(&v, &gt)?;
    v.sub(gt)?.abs().mean()
}

/// Discrete KL divergence with an epsilon floor:
/// sum_i p_i * ln((p_i + eps) / (q_i + eps)).
pub fn kl_divergence(p: &[f64], q: &[f64], eps: f64) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::invalid("kl_divergence: length mismatch"));
    }
    if !(eps > 0.0) {
        return Err(Error::invalid("kl_divergence: eps must be > 0"));
    }
    Ok(p.iter().zip(q).map(|(&pi, &qi)| pi * ((pi + eps) / (qi + eps)).ln()).sum())
}

/// Jensen-Shannon divergence between two per-location channel distributions
/// (same shape), averaged over every element:
/// 0.5 * mean(p (log(p+eps) - log(m+eps)) + q (log(q+eps) - log(m+eps)))
/// with m = (p + q) / 2. Symmetric in its arguments.
pub fn js_from_channel_probs<'t>(p: Var<'t>, q: Var<'t>, eps: f64) -> Result<Var<'t>> {
    if !(eps > 0.0) {
        return Err(Error::invalid("js divergence: eps must be > 0"));
    }
    if p.shape() != q.shape() {
        return Err(Error::invalid(format!(
            "js divergence: shape mismatch {:?} vs {:?}",
            p.shape(),
            q.shape()
        )));
    }
    let m = p.add(q)?.mul_scalar(0.5);
    let log_m = m.add_scalar(eps).log();
    let term_p = p.mul(p.add_scalar(eps).log().sub(log_m)?)?;
    let term_q = q.mul(q.add_scalar(eps).log().sub(log_m)?)?;
    Ok(term_p.add(term_q)?.mean()?.mul_scalar(0.5))
}

/// Feature-consistency loss: channel-softmax both maps ([c,h,w], softmax over
/// axis 0), then JS divergence. The target map is detached, so gradients
/// reach only the first argument.
pub fn js_loss<'t>(student_fmap: Var<'t>, target_fmap: Var<'t>, eps: f64) -> Result<Var<'t>> {
    let s = student_fmap.shape();
    if s.len() != 3 {
        return Err(Error::invalid(format!("js_loss: feature map {s:?} must be [c,h,w]")));
    }
    let p = student_fmap.channel_softmax(0)?;
    let q = target_fmap.detach().channel_softmax(0)?;
    js_from_channel_probs(p, q, eps)
}

/// Supervised objective: global + w_local * local (final cascade step only).
pub fn supervised_total<'t>(
    v_global: Var<'t>,
    v_local: Var<'t>,
    gt: Var<'t>,
    cfg: &LossConfig,
) -> Result<Var<'t>> {
    cfg.validate()?;
    let g = global_loss(v_global, gt, cfg.margin)?;
    let l = local_loss(v_local, gt)?;
    g.add(l.mul_scalar(cfg.w_local))
}

/// Unlabeled objective: landmark terms against the teacher's pseudo ground
/// truth plus the feature-consistency term.
#[allow(clippy::too_many_arguments)]
pub fn unlabeled_total<'t>(
    v_global_s: Var<'t>,
    v_local_s: Var<'t>,
    pseudo_gt: Var<'t>,
    student_fmap: Var<'t>,
    teacher_fmap: Var<'t>,
    cfg: &LossConfig,
) -> Result<Var<'t>> {
    cfg.validate()?;
    let g = global_loss(v_global_s, pseudo_gt, cfg.margin)?;
    let l = local_loss(v_local_s, pseudo_gt)?;
    let base = g.add(l.mul_scalar(cfg.w_local))?;
    if cfg.w_consistency == 0.0 {
        // A zero-weight term contributes exactly zero; skip its cost.
        return Ok(base);
    }
    let c = js_loss(student_fmap, teacher_fmap, cfg.kl_epsilon)?;
    base.add(c.mul_scalar(cfg.w_consistency))
}
