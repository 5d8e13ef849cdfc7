use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::Tensor;

use crate::error::{Error, Result};
use crate::nn::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("learning rate {} is not a finite non-negative number", self.lr)));
        }
        for (what, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(format!("{what} = {b} is outside [0, 1)")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::config("adam eps must be positive"));
        }
        Ok(())
    }
}

/// Adam without weight decay over one or more parameter stores.
///
/// Moments are keyed by the caller-supplied name prefix plus the parameter
/// name. A parameter that received no gradient in a step keeps its value and
/// its moments; the bias correction uses the shared step count.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    first: BTreeMap<String, Tensor>,
    second: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to every `(prefix, store)` parameter with a gradient in `grads`.
    pub fn step(&mut self, stores: &[(&str, &ParamStore)], grads: &GradStore) -> Result<()> {
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let correction1 = 1.0 - beta1.powi(t);
        let correction2 = 1.0 - beta2.powi(t);
        for (prefix, store) in stores {
            for (name, var) in store.iter() {
                let Some(g) = grads.get(var.as_tensor()) else {
                    continue;
                };
                let key = format!("{prefix}{name}");
                let m = match self.first.get(&key) {
                    Some(m) => ((m * beta1)? + (g * (1.0 - beta1))?)?,
                    None => (g * (1.0 - beta1))?,
                };
                let v = match self.second.get(&key) {
                    Some(v) => ((v * beta2)? + (g.sqr()? * (1.0 - beta2))?)?,
                    None => (g.sqr()? * (1.0 - beta2))?,
                };
                if lr != 0.0 {
                    let m_hat = (&m / correction1)?;
                    let v_hat = (&v / correction2)?;
                    let delta = (m_hat / (v_hat.sqrt()? + eps)?)?;
                    var.set(&(var.as_tensor() - (delta * lr)?)?)?;
                }
                self.first.insert(key.clone(), m);
                self.second.insert(key, v);
            }
        }
        Ok(())
    }

    /// Moment tensors keyed `m/<name>` and `v/<name>`.
    pub fn state(&self) -> BTreeMap<String, Tensor> {
        let m = self.first.iter().map(|(k, t)| (format!("m/{k}"), t.clone()));
        let v = self.second.iter().map(|(k, t)| (format!("v/{k}"), t.clone()));
        m.chain(v).collect()
    }

    /// Restores moments written by [`Adam::state`] together with the step count.
    pub fn restore(&mut self, step: u64, state: &BTreeMap<String, Tensor>) -> Result<()> {
        let mut first = BTreeMap::new();
        let mut second = BTreeMap::new();
        for (k, t) in state {
            if let Some(name) = k.strip_prefix("m/") {
                first.insert(name.to_string(), t.clone());
            } else if let Some(name) = k.strip_prefix("v/") {
                second.insert(name.to_string(), t.clone());
            } else {
                return Err(Error::Checkpoint(format!("unexpected optimizer entry {k:?}")));
            }
        }
        self.step = step;
        self.first = first;
        self.second = second;
        Ok(())
    }
}
