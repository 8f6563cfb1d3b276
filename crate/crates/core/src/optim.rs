use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamSet;

/// Tensors whose name starts with `prefix` train at `lr`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamGroup {
    pub prefix: String,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global L2 norm bound; `0` disables clipping.
    pub grad_clip_norm: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            grad_clip_norm: 1.0,
        }
    }
}

/// Moment estimates, one pair per tensor in visiting order.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub first: Vec<ArrayD<f64>>,
    pub second: Vec<ArrayD<f64>>,
    /// Index into the group list for every tensor.
    pub group_of: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepOutcome {
    Applied { grad_norm: f64 },
    Skipped,
}

#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub groups: Vec<ParamGroup>,
    pub state: OptimizerState,
    shapes: Vec<(String, Vec<usize>)>,
}

impl AdamW {
    pub fn new<P: ParamSet>(params: &P, config: AdamWConfig, groups: Vec<ParamGroup>) -> Result<Self> {
        if groups.iter().any(|g| !(g.lr > 0.0 && g.lr.is_finite())) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        let shapes = params.shapes();
        let mut group_of = Vec::with_capacity(shapes.len());
        for (name, _) in &shapes {
            let g = groups
                .iter()
                .position(|g| name.starts_with(&g.prefix))
                .ok_or_else(|| Error::Config(format!("tensor {name:?} matches no parameter group")))?;
            group_of.push(g);
        }
        let zeros: Vec<ArrayD<f64>> = shapes.iter().map(|(_, s)| ArrayD::zeros(s.as_slice())).collect();
        Ok(AdamW {
            config,
            groups,
            state: OptimizerState {
                step: 0,
                first: zeros.clone(),
                second: zeros,
                group_of,
            },
            shapes,
        })
    }

    pub fn lr_of(&self, tensor: usize) -> f64 {
        self.groups[self.state.group_of[tensor]].lr
    }

    /// One clipped AdamW update. Non-finite gradients leave everything untouched.
    pub fn step<P: ParamSet>(&mut self, params: &mut P, grads: &P) -> Result<StepOutcome> {
        for set in [params.shapes(), grads.shapes()] {
            if set.len() != self.shapes.len() {
                return Err(Error::Config("parameter set does not match the optimizer".into()));
            }
            for ((name, found), (_, expected)) in set.into_iter().zip(&self.shapes) {
                if &found != expected {
                    return Err(Error::Shape {
                        name,
                        expected: expected.clone(),
                        found,
                    });
                }
            }
        }
        if !grads.all_finite() {
            log::warn!("skipping optimizer step {}: non-finite gradient", self.state.step + 1);
            return Ok(StepOutcome::Skipped);
        }
        let grad_norm = grads.squared_norm().sqrt();
        let clip = if self.config.grad_clip_norm > 0.0 && grad_norm > self.config.grad_clip_norm {
            self.config.grad_clip_norm / grad_norm
        } else {
            1.0
        };

        let mut grad_views = Vec::with_capacity(self.shapes.len());
        grads.visit(&mut |_, g| grad_views.push(g));

        self.state.step += 1;
        let t = self.state.step as i32;
        let c = &self.config;
        let bias1 = 1.0 - c.beta1.powi(t);
        let bias2 = 1.0 - c.beta2.powi(t);
        let lrs: Vec<f64> = (0..self.shapes.len()).map(|i| self.lr_of(i)).collect();
        let state = &mut self.state;
        let mut i = 0;
        params.visit_mut(&mut |_, mut p| {
            let lr = lrs[i];
            let decay = if p.ndim() >= 2 { c.weight_decay } else { 0.0 };
            let m = &mut state.first[i];
            let v = &mut state.second[i];
            ndarray::Zip::from(&mut p)
                .and(m)
                .and(v)
                .and(&grad_views[i])
                .for_each(|p, m, v, &g| {
                    let g = g * clip;
                    *p -= lr * decay * *p;
                    *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                    *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                    let m_hat = *m / bias1;
                    let v_hat = *v / bias2;
                    *p -= lr * m_hat / (v_hat.sqrt() + c.eps);
                });
            i += 1;
        });
        Ok(StepOutcome::Applied { grad_norm })
    }
}
