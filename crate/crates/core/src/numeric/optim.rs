use serde::{Deserialize, Serialize};

use super::params::{Gradients, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates, one pair per parameter in store order.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(params: &ParamStore, config: AdamConfig) -> Self {
        let zeros = || params.iter().map(|(_, p)| vec![0.0; p.data.len()]).collect();
        OptimizerState {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One bias-corrected Adam update. Parameters without a gradient are
    /// treated as having a zero gradient.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) -> Result<()> {
        if self.m.len() != params.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} parameters, store has {}",
                self.m.len(),
                params.len()
            )));
        }
        for (id, g) in grads.iter() {
            if let Some(bad) = g.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient of {} at index {bad}",
                    params.param(id).name
                )));
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let ids: Vec<_> = params.iter().map(|(id, _)| id).collect();
        for id in ids {
            let i = id.index();
            let g = grads.get(id);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let data = &mut params.param_mut(id).data;
            if m.len() != data.len() {
                return Err(Error::Shape(format!("moment shape for parameter {i}")));
            }
            for k in 0..data.len() {
                let gk = g.map_or(0.0, |g| g[k]);
                m[k] = beta1 * m[k] + (1.0 - beta1) * gk;
                v[k] = beta2 * v[k] + (1.0 - beta2) * gk * gk;
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                data[k] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            params.normalize(id);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::params::Precision;
    use approx::assert_relative_eq;

    fn store() -> (ParamStore, crate::numeric::ParamId) {
        let mut ps = ParamStore::new(Precision::F64);
        let id = ps.add("w", 1, 2, vec![0.5, -0.5]).unwrap();
        (ps, id)
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let (mut ps, id) = store();
        let mut opt = OptimizerState::new(&ps, AdamConfig::default());
        let mut g = Gradients::new();
        g.buffer(id, 2);
        for _ in 0..10 {
            opt.step(&mut ps, &g).unwrap();
        }
        assert_eq!(ps.data(id), [0.5, -0.5]);
        opt.step(&mut ps, &Gradients::new()).unwrap();
        assert_eq!(ps.data(id), [0.5, -0.5]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let (mut ps, id) = store();
        let mut opt = OptimizerState::new(&ps, AdamConfig::default());
        let mut g = Gradients::new();
        g.buffer(id, 2).copy_from_slice(&[1.0, 1.0]);
        opt.step(&mut ps, &g).unwrap();
        assert_relative_eq!(ps.data(id)[0], 0.5 - 1e-4, epsilon = 1e-11);
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn constant_gradient_step_approaches_lr_sign() {
        let (mut ps, id) = store();
        let mut opt = OptimizerState::new(&ps, AdamConfig { lr: 1e-3, ..Default::default() });
        let mut g = Gradients::new();
        g.buffer(id, 2).copy_from_slice(&[0.3, -7.0]);
        let mut prev = ps.data(id).to_vec();
        for _ in 0..2000 {
            opt.step(&mut ps, &g).unwrap();
        }
        opt.step(&mut ps, &g).unwrap();
        let cur = ps.data(id).to_vec();
        prev.clone_from(&cur);
        opt.step(&mut ps, &g).unwrap();
        let delta: Vec<f64> = ps.data(id).iter().zip(&prev).map(|(a, b)| a - b).collect();
        assert_relative_eq!(delta[0], -1e-3, max_relative = 1e-4);
        assert_relative_eq!(delta[1], 1e-3, max_relative = 1e-4);
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let (mut ps, id) = store();
        let mut opt = OptimizerState::new(&ps, AdamConfig::default());
        let mut g = Gradients::new();
        g.buffer(id, 2).copy_from_slice(&[f64::NAN, 0.0]);
        let err = opt.step(&mut ps, &g).unwrap_err();
        assert!(err.to_string().contains("gradient of w"), "{err}");
        assert_eq!(opt.step, 0);
    }
}
