//! Optimizers and learning-rate schedules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Param;

fn check_finite(name: &str, grad: &[f64]) -> Result<()> {
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient of `{name}` at element {i} is {}", grad[i])));
    }
    Ok(())
}

/// One heavy-ball step on a flat tensor:
/// `v ← μ·v + (g + λ·θ)`, then `θ ← θ − lr·v`.
pub fn momentum_sgd_step(
    value: &mut [f64],
    grad: &[f64],
    velocity: &mut [f64],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if value.len() != grad.len() || value.len() != velocity.len() {
        return Err(Error::Dimension(format!(
            "sgd step on {} values with {} grads and {} velocities",
            value.len(),
            grad.len(),
            velocity.len()
        )));
    }
    check_finite("tensor", grad)?;
    for ((x, g), v) in value.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        *v = momentum * *v + (g + weight_decay * *x);
        *x -= lr * *v;
    }
    Ok(())
}

/// Momentum SGD over a fixed, ordered parameter list.
#[derive(Clone, Debug)]
pub struct MomentumSgd {
    pub momentum: f64,
    pub weight_decay: f64,
    /// Parameters whose name contains any of these substrings get no
    /// weight decay.
    pub no_decay: Vec<String>,
    velocity: Vec<Vec<f64>>,
}

impl MomentumSgd {
    pub fn new(momentum: f64, weight_decay: f64, no_decay: Vec<String>) -> Self {
        MomentumSgd {
            momentum,
            weight_decay,
            no_decay,
            velocity: Vec::new(),
        }
    }

    pub fn velocity(&self) -> &[Vec<f64>] {
        &self.velocity
    }

    pub fn step(&mut self, params: &mut [&mut Param], lr: f64) -> Result<()> {
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        if self.velocity.len() != params.len() {
            return Err(Error::Dimension(format!(
                "optimizer holds state for {} tensors, got {}",
                self.velocity.len(),
                params.len()
            )));
        }
        for p in params.iter() {
            check_finite(&p.name, &p.grad())?;
        }
        for (p, v) in params.iter_mut().zip(&mut self.velocity) {
            let wd = if self.no_decay.iter().any(|s| p.name.contains(s.as_str())) {
                0.0
            } else {
                self.weight_decay
            };
            let grad = p.grad().into_owned();
            momentum_sgd_step(&mut p.value, &grad, v, lr, self.momentum, wd)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    #[serde(default = "default_betas")]
    pub betas: (f64, f64),
    #[serde(default = "default_adam_eps")]
    pub eps: f64,
}

fn default_betas() -> (f64, f64) {
    (0.9, 0.999)
}
fn default_adam_eps() -> f64 {
    1e-8
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            betas: default_betas(),
            eps: default_adam_eps(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (b1, b2) = self.betas;
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("optimizer.lr must be positive, got {}", self.lr)));
        }
        if !(self.eps > 0.0 && (0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(Error::Config(format!(
                "optimizer.betas must lie in [0, 1) and optimizer.eps must be positive, got {:?} and {}",
                self.betas, self.eps
            )));
        }
        Ok(())
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub betas: (f64, f64),
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: &AdamConfig) -> Self {
        Adam {
            betas: config.betas,
            eps: config.eps,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Param], lr: f64) -> Result<()> {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(Error::Dimension(format!(
                "optimizer holds state for {} tensors, got {}",
                self.m.len(),
                params.len()
            )));
        }
        for p in params.iter() {
            check_finite(&p.name, &p.grad())?;
        }
        self.t += 1;
        let (b1, b2) = self.betas;
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let grad = p.grad().into_owned();
            for (i, g) in grad.iter().enumerate() {
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                p.value[i] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Piecewise-constant decay: the rate is multiplied by `gamma` at each
/// milestone iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultiStepSchedule {
    pub milestones: Vec<u64>,
    pub gamma: f64,
}

impl MultiStepSchedule {
    /// Drops at 60% and 80% of training. Very short runs, where those
    /// points coincide or round to zero, keep only the distinct positive ones.
    pub fn two_drop(total_iterations: u64) -> Self {
        let mut milestones: Vec<u64> = [6, 8]
            .iter()
            .map(|p| total_iterations * p / 10)
            .filter(|&m| m > 0)
            .collect();
        milestones.dedup();
        MultiStepSchedule { milestones, gamma: 0.1 }
    }

    pub fn validate(&self, total_iterations: u64) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("schedule gamma {} must lie in (0, 1]", self.gamma)));
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "milestones {:?} must be strictly increasing",
                self.milestones
            )));
        }
        if let Some(&last) = self.milestones.last() {
            if last >= total_iterations {
                return Err(Error::Config(format!(
                    "milestone {last} is not below total_iterations {total_iterations}"
                )));
            }
        }
        Ok(())
    }

    pub fn lr_at(&self, base_lr: f64, iteration: u64) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| m <= iteration).count();
        base_lr * self.gamma.powi(passed as i32)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlateauConfig {
    #[serde(default = "default_patience")]
    pub patience: u32,
    #[serde(default = "default_factor")]
    pub factor: f64,
    #[serde(default = "default_min_lr")]
    pub min_lr: f64,
}

fn default_patience() -> u32 {
    5
}
fn default_factor() -> f64 {
    0.1
}
fn default_min_lr() -> f64 {
    1e-6
}

impl Default for PlateauConfig {
    fn default() -> Self {
        PlateauConfig {
            patience: default_patience(),
            factor: default_factor(),
            min_lr: default_min_lr(),
        }
    }
}

impl PlateauConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience < 1 || !(self.factor > 0.0 && self.factor < 1.0) || self.min_lr < 0.0 {
            return Err(Error::Config(format!(
                "plateau schedule needs patience >= 1, factor in (0, 1), min_lr >= 0; got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Reduces the learning rate when a maximized metric stops improving.
///
/// An epoch is "bad" when the metric does not strictly exceed the best seen
/// so far. Once more than `patience` consecutive bad epochs accumulate, the
/// rate is multiplied by `factor` (floored at `min_lr`) and the count resets.
#[derive(Clone, Debug)]
pub struct ReduceOnPlateau {
    pub config: PlateauConfig,
    lr: f64,
    best: f64,
    bad_epochs: u32,
    reductions: u32,
}

impl ReduceOnPlateau {
    pub fn new(config: PlateauConfig, initial_lr: f64) -> Self {
        ReduceOnPlateau {
            config,
            lr: initial_lr,
            best: f64::NEG_INFINITY,
            bad_epochs: 0,
            reductions: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn reductions(&self) -> u32 {
        self.reductions
    }

    /// Records one epoch's metric and returns the rate for the next epoch.
    pub fn observe(&mut self, metric: f64) -> f64 {
        if metric > self.best {
            self.best = metric;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
        }
        if self.bad_epochs > self.config.patience {
            let next = (self.lr * self.config.factor).max(self.config.min_lr);
            if next < self.lr {
                self.reductions += 1;
            }
            self.lr = next;
            self.bad_epochs = 0;
        }
        self.lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_hand_steps() {
        // θ0 = 1, g = 0.5 constant, μ = 0.9, λ = 0.1, lr = 0.1.
        // v1 = 0.5 + 0.1 = 0.6, θ1 = 1 - 0.06 = 0.94
        // v2 = 0.54 + 0.5 + 0.094 = 1.134, θ2 = 0.94 - 0.1134 = 0.8266
        let (mut x, mut v) = ([1.0], [0.0]);
        momentum_sgd_step(&mut x, &[0.5], &mut v, 0.1, 0.9, 0.1).unwrap();
        assert!((x[0] - 0.94).abs() < 1e-15);
        momentum_sgd_step(&mut x, &[0.5], &mut v, 0.1, 0.9, 0.1).unwrap();
        assert!((v[0] - 1.134).abs() < 1e-12);
        assert!((x[0] - 0.8266).abs() < 1e-12);
    }

    #[test]
    fn zero_grad_decays_velocity_only() {
        let (mut x, mut v) = ([2.0, -1.0], [1.0, 0.5]);
        momentum_sgd_step(&mut x, &[0.0, 0.0], &mut v, 0.0, 0.9, 0.0).unwrap();
        assert_eq!(x, [2.0, -1.0]);
        assert_eq!(v, [0.9, 0.45]);
    }

    #[test]
    fn non_finite_grad_rejected() {
        let (mut x, mut v) = ([0.0], [0.0]);
        assert!(momentum_sgd_step(&mut x, &[f64::NAN], &mut v, 0.1, 0.9, 0.0).is_err());
    }

    #[test]
    fn multistep_lr() {
        let s = MultiStepSchedule::two_drop(100_000);
        assert_eq!(s.milestones, vec![60_000, 80_000]);
        assert_eq!(s.lr_at(0.05, 0), 0.05);
        assert!((s.lr_at(0.05, 70_000) - 0.005).abs() < 1e-15);
        assert!((s.lr_at(0.05, 90_000) - 0.0005).abs() < 1e-15);
        assert!(s.validate(100_000).is_ok());
        assert!(s.validate(80_000).is_err());
    }

    #[test]
    fn plateau_reduces_once_per_event() {
        let mut s = ReduceOnPlateau::new(PlateauConfig { patience: 2, factor: 0.5, min_lr: 0.0 }, 1.0);
        let trace: Vec<f64> = [0.5, 0.5, 0.5, 0.5, 0.6, 0.6, 0.6].iter().map(|&m| s.observe(m)).collect();
        assert_eq!(trace, vec![1.0, 1.0, 1.0, 0.5, 0.5, 0.5, 0.5]);
        assert_eq!(s.reductions(), 1);
        s.observe(0.6);
        assert_eq!(s.lr(), 0.25);
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        let mut p = Param::new("w", vec![2], vec![1.0, 1.0]);
        p.grad_mut().copy_from_slice(&[3.0, -0.01]);
        let mut opt = Adam::new(&AdamConfig::with_lr(0.1));
        opt.step(&mut [&mut p], 0.1).unwrap();
        assert!((p.value[0] - 0.9).abs() < 1e-6);
        assert!((p.value[1] - 1.1).abs() < 1e-5);
    }
}
