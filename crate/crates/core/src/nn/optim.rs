//! SGD with momentum and learning-rate schedules.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::nn::mlp::{MlpParameters, ParamGrads};

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    velocity: ParamGrads,
    pub momentum: f64,
    pub lr: f64,
}

impl OptimizerState {
    pub fn new(params: &MlpParameters, momentum: f64, lr: f64) -> Self {
        assert!((0.0..1.0).contains(&momentum), "momentum must lie in [0, 1)");
        OptimizerState {
            velocity: ParamGrads::zeros_like(params),
            momentum,
            lr,
        }
    }

    pub fn velocity(&self) -> &ParamGrads {
        &self.velocity
    }
}

/// `v <- m v + g; p <- p - lr v`.
pub fn sgd_step(params: &mut MlpParameters, grads: &ParamGrads, state: &mut OptimizerState) {
    let (m, lr) = (state.momentum, state.lr);
    for ((layer, g), v) in params
        .layers_mut()
        .iter_mut()
        .zip(&grads.layers)
        .zip(&mut state.velocity.layers)
    {
        assert_eq!(layer.weight.len(), g.weight.len(), "gradient shape mismatch");
        let pairs = layer
            .weight
            .iter_mut()
            .zip(&g.weight)
            .zip(&mut v.weight)
            .chain(layer.bias.iter_mut().zip(&g.bias).zip(&mut v.bias));
        for ((p, &gi), vi) in pairs {
            *vi = m * *vi + gi;
            *p -= lr * *vi;
        }
    }
}

/// `lr0 (1 + cos(pi epoch / total)) / 2`.
pub fn cosine_lr(epoch: usize, total_epochs: usize, lr0: f64) -> f64 {
    debug_assert!(epoch < total_epochs);
    lr0 * (1.0 + (PI * epoch as f64 / total_epochs as f64).cos()) / 2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    Cosine,
    /// Multiply by `factor` at each milestone epoch.
    Step { milestones: Vec<usize>, factor: f64 },
}

impl LrSchedule {
    pub fn lr_at(&self, epoch: usize, total_epochs: usize, lr0: f64) -> f64 {
        match self {
            LrSchedule::Constant => lr0,
            LrSchedule::Cosine => cosine_lr(epoch, total_epochs, lr0),
            LrSchedule::Step { milestones, factor } => {
                let passed = milestones.iter().filter(|&&m| epoch >= m).count();
                lr0 * factor.powi(passed as i32)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::mlp::Dense;

    fn scalar(p: f64) -> MlpParameters {
        MlpParameters::from_layers(vec![Dense {
            in_dim: 1,
            out_dim: 1,
            weight: vec![p],
            bias: vec![0.0],
        }])
        .unwrap()
    }

    fn unit_grad() -> ParamGrads {
        ParamGrads {
            layers: vec![Dense {
                in_dim: 1,
                out_dim: 1,
                weight: vec![1.0],
                bias: vec![0.0],
            }],
        }
    }

    #[test]
    fn plain_step() {
        let mut p = scalar(0.0);
        let mut st = OptimizerState::new(&p, 0.0, 1.0);
        sgd_step(&mut p, &unit_grad(), &mut st);
        assert_eq!(p.layers()[0].weight[0], -1.0);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = scalar(0.7);
        let before = p.clone();
        let mut st = OptimizerState::new(&p, 0.9, 0.5);
        let zero = ParamGrads::zeros_like(&p);
        sgd_step(&mut p, &zero, &mut st);
        assert_eq!(p, before);
    }

    #[test]
    fn two_momentum_steps() {
        let mut p = scalar(0.0);
        let mut st = OptimizerState::new(&p, 0.9, 0.1);
        sgd_step(&mut p, &unit_grad(), &mut st);
        sgd_step(&mut p, &unit_grad(), &mut st);
        // -0.1 * 1 - 0.1 * 1.9
        assert!((p.layers()[0].weight[0] + 0.29).abs() < 1e-15);
    }

    #[test]
    fn cosine_schedule_values() {
        assert_eq!(cosine_lr(0, 20, 0.3), 0.3);
        assert!((cosine_lr(10, 20, 0.3) - 0.15).abs() < 1e-15);
        let last = cosine_lr(19, 20, 1e-4);
        assert!((last - 6.155_829_702_431_17e-7).abs() < 1e-18, "{last}");
    }

    #[test]
    fn step_schedule() {
        let s = LrSchedule::Step {
            milestones: vec![150, 180, 210],
            factor: 0.1,
        };
        assert_eq!(s.lr_at(0, 240, 0.05), 0.05);
        assert!((s.lr_at(150, 240, 0.05) - 0.005).abs() < 1e-15);
        assert!((s.lr_at(239, 240, 0.05) - 0.00005).abs() < 1e-15);
    }
}
