//! Adaptive-moment optimizer over named parameter groups with global-norm
//! gradient clipping. State is kept by name so it can be checkpointed.

use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    /// Adam with decoupled weight decay.
    AdamW,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub name: OptimizerKind,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient norm cap; non-positive disables clipping.
    pub clip_norm: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            name: OptimizerKind::Adam,
            learning_rate: 1e-3,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 1.0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.weight_decay < 0.0 {
            return Err(Error::invalid(
                "learning rate must be > 0 and weight decay >= 0",
            ));
        }
        if !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || !(self.eps > 0.0)
        {
            return Err(Error::invalid(
                "betas must lie in [0, 1) and eps must be > 0",
            ));
        }
        Ok(())
    }
}

/// Flattened host copy of optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub step: u64,
    pub tensors: Vec<(String, Vec<usize>, Vec<f64>)>,
}

pub struct Optimizer {
    pub cfg: OptimizerConfig,
    step: u64,
    first: BTreeMap<String, Tensor>,
    second: BTreeMap<String, Tensor>,
}

/// Global L2 norm over every gradient present for the given groups.
pub fn grad_norm(groups: &[(&str, &ParamStore)], grads: &GradStore) -> Result<f64> {
    let mut acc = 0.0;
    for (_, store) in groups {
        for var in store.vars() {
            if let Some(g) = grads.get(var.as_tensor()) {
                acc += g.sqr()?.sum_all()?.to_scalar::<f64>()?;
            }
        }
    }
    Ok(acc.sqrt())
}

impl Optimizer {
    pub fn new(cfg: OptimizerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter that received a gradient and
    /// returns the pre-clipping gradient norm. Parameters without a gradient
    /// are left untouched, including by weight decay.
    pub fn step(&mut self, groups: &[(&str, &ParamStore)], grads: &GradStore) -> Result<f64> {
        let norm = grad_norm(groups, grads)?;
        if !norm.is_finite() {
            return Err(Error::NonFinite {
                component: "gradient",
                context: format!(" at optimizer step {}", self.step + 1),
            });
        }
        let clip = if self.cfg.clip_norm > 0.0 && norm > self.cfg.clip_norm {
            self.cfg.clip_norm / norm
        } else {
            1.0
        };
        self.step += 1;
        let c = &self.cfg;
        let t = self.step as i32;
        let bias1 = 1.0 - c.beta1.powi(t);
        let bias2 = 1.0 - c.beta2.powi(t);
        for (group, store) in groups {
            for (name, var) in store.iter() {
                let Some(g) = grads.get(var.as_tensor()) else {
                    continue;
                };
                let mut g = (g.detach() * clip)?;
                let w = &var.as_tensor().detach();
                let key = format!("{group}/{name}");
                let next = match c.name {
                    OptimizerKind::Sgd => {
                        if c.weight_decay > 0.0 {
                            g = (g + (w * c.weight_decay)?)?;
                        }
                        (w - (g * c.learning_rate)?)?
                    }
                    OptimizerKind::Adam | OptimizerKind::AdamW => {
                        if c.name == OptimizerKind::Adam && c.weight_decay > 0.0 {
                            g = (g + (w * c.weight_decay)?)?;
                        }
                        let m = match self.first.get(&key) {
                            Some(m) => ((m * c.beta1)? + (&g * (1.0 - c.beta1))?)?,
                            None => (&g * (1.0 - c.beta1))?,
                        };
                        let v = match self.second.get(&key) {
                            Some(v) => ((v * c.beta2)? + (g.sqr()? * (1.0 - c.beta2))?)?,
                            None => (g.sqr()? * (1.0 - c.beta2))?,
                        };
                        let update = ((&m / bias1)? / ((&v / bias2)?.sqrt()? + c.eps)?)?;
                        let mut w_next = (w - (update * c.learning_rate)?)?;
                        if c.name == OptimizerKind::AdamW && c.weight_decay > 0.0 {
                            w_next = (w_next - (w * (c.learning_rate * c.weight_decay))?)?;
                        }
                        self.first.insert(key.clone(), m);
                        self.second.insert(key, v);
                        w_next
                    }
                };
                var.set(&next)?;
            }
        }
        Ok(norm)
    }

    pub fn state(&self) -> Result<OptimizerState> {
        let mut tensors = Vec::new();
        for (prefix, map) in [("m", &self.first), ("v", &self.second)] {
            for (k, t) in map {
                tensors.push((
                    format!("{prefix}:{k}"),
                    t.dims().to_vec(),
                    t.flatten_all()?.to_vec1::<f64>()?,
                ));
            }
        }
        Ok(OptimizerState {
            step: self.step,
            tensors,
        })
    }

    pub fn load_state(&mut self, state: &OptimizerState) -> Result<()> {
        self.first.clear();
        self.second.clear();
        for (name, shape, data) in &state.tensors {
            let t = nn::tensor(data.clone(), shape.as_slice())?;
            match name.split_once(':') {
                Some(("m", k)) => self.first.insert(k.to_string(), t),
                Some(("v", k)) => self.second.insert(k.to_string(), t),
                _ => {
                    return Err(Error::Checkpoint(format!(
                        "bad optimizer tensor name `{name}`"
                    )))
                }
            };
        }
        self.step = state.step;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Init;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store(v: f64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = ParamStore::new();
        s.add("w", &[2], Init::Ones, &mut rng).unwrap();
        s.var("w")
            .unwrap()
            .set(&nn::tensor(vec![v, -v], 2).unwrap())
            .unwrap();
        s
    }

    #[test]
    fn first_adam_step_moves_by_learning_rate() {
        let s = store(1.0);
        let loss = s
            .tracked()
            .get("w")
            .unwrap()
            .sqr()
            .unwrap()
            .sum_all()
            .unwrap();
        let grads = loss.backward().unwrap();
        let mut opt = Optimizer::new(OptimizerConfig {
            clip_norm: 0.0,
            ..Default::default()
        })
        .unwrap();
        opt.step(&[("g", &s)], &grads).unwrap();
        let w = s.var("w").unwrap().as_tensor().to_vec1::<f64>().unwrap();
        // bias-corrected first step is lr * sign(g) up to eps
        assert!((w[0] - (1.0 - 1e-3)).abs() < 1e-9);
        assert!((w[1] - (-1.0 + 1e-3)).abs() < 1e-9);
    }

    #[test]
    fn clipping_scales_sgd_update() {
        let s = store(3.0);
        let loss = s
            .tracked()
            .get("w")
            .unwrap()
            .sqr()
            .unwrap()
            .sum_all()
            .unwrap();
        let grads = loss.backward().unwrap();
        let cfg = OptimizerConfig {
            name: OptimizerKind::Sgd,
            learning_rate: 1.0,
            ..Default::default()
        };
        let mut opt = Optimizer::new(cfg).unwrap();
        let norm = opt.step(&[("g", &s)], &grads).unwrap();
        assert!((norm - (72.0f64).sqrt()).abs() < 1e-12);
        let w = s.var("w").unwrap().as_tensor().to_vec1::<f64>().unwrap();
        let unit = 1.0 / 2f64.sqrt();
        assert!((w[0] - (3.0 - unit)).abs() < 1e-12);
        assert!((w[1] - (-3.0 + unit)).abs() < 1e-12);
    }

    #[test]
    fn untouched_params_stay_bit_identical() {
        let a = store(1.0);
        let b = store(2.0);
        let loss = a.tracked().get("w").unwrap().sum_all().unwrap();
        let grads = loss.backward().unwrap();
        let mut opt = Optimizer::new(OptimizerConfig {
            weight_decay: 0.1,
            ..Default::default()
        })
        .unwrap();
        opt.step(&[("a", &a), ("b", &b)], &grads).unwrap();
        assert_eq!(
            b.var("w").unwrap().as_tensor().to_vec1::<f64>().unwrap(),
            vec![2.0, -2.0]
        );
    }

    #[test]
    fn state_round_trip_continues_identically() {
        let run = |split: bool| {
            let s = store(1.5);
            let mut opt = Optimizer::new(OptimizerConfig::default()).unwrap();
            for i in 0..4 {
                if split && i == 2 {
                    let st = opt.state().unwrap();
                    opt = Optimizer::new(OptimizerConfig::default()).unwrap();
                    opt.load_state(&st).unwrap();
                }
                let loss = s
                    .tracked()
                    .get("w")
                    .unwrap()
                    .powf(4.0)
                    .unwrap()
                    .sum_all()
                    .unwrap();
                opt.step(&[("g", &s)], &loss.backward().unwrap()).unwrap();
            }
            s.var("w").unwrap().as_tensor().to_vec1::<f64>().unwrap()
        };
        assert_eq!(run(false), run(true));
    }
}
