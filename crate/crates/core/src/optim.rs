//! Adam optimizer with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Multiplicative learning-rate decay applied every `lr_interval` epochs.
    pub lr_decay: f64,
    pub lr_interval: usize,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
            lr_decay: 0.96,
            lr_interval: 10,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::invalid("adam config: lr must be > 0"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("adam config: betas must be in [0, 1)"));
        }
        if !(self.eps > 0.0) {
            return Err(Error::invalid("adam config: eps must be > 0"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::invalid("adam config: weight_decay must be >= 0"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::invalid("adam config: lr_decay must be in (0, 1]"));
        }
        if self.lr_interval == 0 {
            return Err(Error::invalid("adam config: lr_interval must be >= 1"));
        }
        Ok(())
    }
}

/// First/second-moment accumulators, aligned with [`ModelParams::tensors`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Tensor> =
            params.tensors().iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect();
        AdamState { t: 0, m: zeros.clone(), v: zeros }
    }

    /// One update with an explicit (already scheduled) learning rate.
    /// Weight decay is decoupled: theta -= lr * wd * theta_old in addition to
    /// the moment-driven step.
    pub fn step(
        &mut self,
        params: &mut ModelParams,
        grads: &[Tensor],
        lr: f64,
        cfg: &AdamConfig,
    ) -> Result<()> {
        cfg.validate()?;
        if !(lr > 0.0) {
            return Err(Error::invalid("adam step: lr must be > 0"));
        }
        let mut tensors = params.tensors_mut();
        if grads.len() != tensors.len() || grads.len() != self.m.len() {
            return Err(Error::invalid(format!(
                "adam step: got {} gradients for {} parameter tensors ({} state slots)",
                grads.len(),
                tensors.len(),
                self.m.len()
            )));
        }
        for (g, t) in grads.iter().zip(&tensors) {
            if g.shape() != t.shape() {
                return Err(Error::invalid("adam step: gradient shape mismatch"));
            }
            if !g.all_finite() {
                return Err(Error::invalid("adam step: non-finite gradient"));
            }
        }
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for ((theta, g), (m, v)) in
            tensors.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let td = theta.data_mut();
            let md = m.data_mut();
            let vd = v.data_mut();
            let gd = g.data();
            for i in 0..td.len() {
                md[i] = cfg.beta1 * md[i] + (1.0 - cfg.beta1) * gd[i];
                vd[i] = cfg.beta2 * vd[i] + (1.0 - cfg.beta2) * gd[i] * gd[i];
                let m_hat = md[i] / bc1;
                let v_hat = vd[i] / bc2;
                let old = td[i];
                td[i] = old - lr * (m_hat / (v_hat.sqrt() + cfg.eps)) - lr * cfg.weight_decay * old;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ArchDescriptor;

    fn tiny_params() -> ModelParams {
        let desc = ArchDescriptor {
            image_h: 8,
            image_w: 8,
            enc_channels: vec![2],
            enc_strides: vec![2],
            gcn_width: 4,
            gcn_depth: 1,
            cascade_len: 1,
            k: 2,
        };
        ModelParams::init(&desc, 0).unwrap()
    }

    fn uniform_grads(params: &ModelParams, value: f64) -> Vec<Tensor> {
        params.tensors().iter().map(|t| Tensor::full(t.shape().to_vec(), value)).collect()
    }

    #[test]
    fn first_step_matches_hand_formula() {
        let mut params = tiny_params();
        let before: Vec<f64> = params.tensors().iter().flat_map(|t| t.data().to_vec()).collect();
        let cfg = AdamConfig { weight_decay: 0.0, ..Default::default() };
        let g = 0.5;
        let grads = uniform_grads(&params, g);
        let mut state = AdamState::new(&params);
        state.step(&mut params, &grads, cfg.lr, &cfg).unwrap();

        // t=1: m_hat = g, v_hat = g^2 -> step = lr * g / (|g| + eps).
        let m = (1.0 - cfg.beta1) * g / (1.0 - cfg.beta1);
        let v = (1.0 - cfg.beta2) * g * g / (1.0 - cfg.beta2);
        let expect_delta = cfg.lr * (m / (v.sqrt() + cfg.eps));
        let after: Vec<f64> = params.tensors().iter().flat_map(|t| t.data().to_vec()).collect();
        for (b, a) in before.iter().zip(&after) {
            assert_eq!(*a, b - expect_delta);
        }
    }

    #[test]
    fn weight_decay_shrinks_without_gradient() {
        let mut params = tiny_params();
        let before: Vec<f64> = params.tensors().iter().flat_map(|t| t.data().to_vec()).collect();
        let cfg = AdamConfig { lr: 0.1, weight_decay: 0.5, ..Default::default() };
        let grads = uniform_grads(&params, 0.0);
        let mut state = AdamState::new(&params);
        state.step(&mut params, &grads, cfg.lr, &cfg).unwrap();
        let after: Vec<f64> = params.tensors().iter().flat_map(|t| t.data().to_vec()).collect();
        for (b, a) in before.iter().zip(&after) {
            assert_eq!(*a, b - cfg.lr * cfg.weight_decay * b);
        }
    }

    #[test]
    fn rejects_shape_and_count_mismatch() {
        let mut params = tiny_params();
        let cfg = AdamConfig::default();
        let mut state = AdamState::new(&params);
        let bad = vec![Tensor::zeros(vec![1])];
        assert!(state.step(&mut params, &bad, cfg.lr, &cfg).is_err());
    }

    #[test]
    fn rejects_non_finite_gradient() {
        let mut params = tiny_params();
        let cfg = AdamConfig::default();
        let mut state = AdamState::new(&params);
        let mut grads = uniform_grads(&params, 0.0);
        grads[0].data_mut()[0] = f64::NAN;
        assert!(state.step(&mut params, &grads, cfg.lr, &cfg).is_err());
    }

    #[test]
    fn deterministic_across_runs() {
        let cfg = AdamConfig::default();
        let run = || {
            let mut params = tiny_params();
            let mut state = AdamState::new(&params);
            for step in 0..5 {
                let grads = uniform_grads(&params, 0.1 * (step as f64 + 1.0));
                state.step(&mut params, &grads, cfg.lr, &cfg).unwrap();
            }
            params
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn config_validation() {
        assert!(AdamConfig::default().validate().is_ok());
        assert!(AdamConfig { lr: 0.0, ..Default::default() }.validate().is_err());
        assert!(AdamConfig { beta1: 1.0, ..Default::default() }.validate().is_err());
        assert!(AdamConfig { eps: 0.0, ..Default::default() }.validate().is_err());
        assert!(AdamConfig { weight_decay: -1.0, ..Default::default() }.validate().is_err());
        assert!(AdamConfig { lr_interval: 0, ..Default::default() }.validate().is_err());
    }
}
