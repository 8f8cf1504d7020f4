use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParameterSet;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            step_size: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adaptive-moment state. Moments are created lazily on the first update.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    first: BTreeMap<String, Tensor>,
    second: BTreeMap<String, Tensor>,
    step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Bias-corrected update from the gradients currently stored in `params`.
    /// Gradients are left in place; the caller zeroes them.
    pub fn update(&mut self, params: &mut ParameterSet) -> Result<()> {
        self.step += 1;
        let AdamConfig {
            step_size,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (name, entry) in params.iter_mut() {
            let m = self
                .first
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(entry.value.shape()));
            let v = self
                .second
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(entry.value.shape()));
            if m.shape() != entry.value.shape() {
                return Err(Error::shape(format!("adam moments for `{name}`"), entry.value.shape(), m.shape()));
            }
            let g = entry.grad.data();
            let md = m.data_mut();
            let vd = v.data_mut();
            for (k, w) in entry.value.data_mut().iter_mut().enumerate() {
                let gk = g[k];
                if gk == 0.0 && md[k] == 0.0 && vd[k] == 0.0 {
                    continue;
                }
                md[k] = beta1 * md[k] + (1.0 - beta1) * gk;
                vd[k] = beta2 * vd[k] + (1.0 - beta2) * gk * gk;
                let mhat = md[k] / c1;
                let vhat = vd[k] / c2;
                *w -= step_size * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> ParameterSet {
        let mut p = ParameterSet::new(0);
        p.insert("x", Tensor::from_vec(&[1], vec![v]).unwrap()).unwrap();
        p
    }

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let mut p = scalar(0.75);
        let mut opt = Adam::new(AdamConfig::default());
        for _ in 0..3 {
            opt.update(&mut p).unwrap();
        }
        assert_eq!(p.value("x").unwrap().data(), &[0.75]);
    }

    #[test]
    fn first_step_moves_by_the_step_size() {
        // m_hat = 1, v_hat = 1 after bias correction, so the step is
        // step_size / (1 + eps).
        let mut p = scalar(1.0);
        p.grad_mut("x").unwrap().fill(1.0);
        let mut opt = Adam::new(AdamConfig::default());
        opt.update(&mut p).unwrap();
        let moved = 1.0 - p.value("x").unwrap().data()[0];
        assert!((moved - 1e-3 / (1.0 + 1e-8)).abs() < 1e-15, "{moved}");
        assert_eq!(p.grad("x").unwrap().data(), &[1.0]);
    }

    #[test]
    fn identical_sets_stay_identical() {
        let mut a = scalar(0.3);
        let mut b = scalar(0.3);
        let mut oa = Adam::new(AdamConfig::default());
        let mut ob = Adam::new(AdamConfig::default());
        for g in [0.5, -1.0, 2.0] {
            a.grad_mut("x").unwrap().fill(g);
            b.grad_mut("x").unwrap().fill(g);
            oa.update(&mut a).unwrap();
            ob.update(&mut b).unwrap();
        }
        assert!(a.same_values(&b));
    }

    #[test]
    fn update_bumps_parameter_version() {
        let mut p = scalar(0.0);
        let before = p.version();
        Adam::new(AdamConfig::default()).update(&mut p).unwrap();
        assert!(p.version() > before);
    }
}
