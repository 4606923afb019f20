use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};
use crate::param::{ParamRole, Parameterized};
use crate::real::Real;

/// Quarter-wave cosine decay from `lr_init` at step 0 to `lr_min` at step
/// `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LRSchedule {
    pub lr_init: f64,
    pub lr_min: f64,
    pub total_steps: usize,
}

impl LRSchedule {
    pub fn new(lr_init: f64, lr_min: f64, total_steps: usize) -> Result<Self> {
        if !(lr_min > 0.0 && lr_min < lr_init) {
            return Err(Error::Config(format!(
                "need 0 < lr_min < lr_init, got {lr_min} and {lr_init}"
            )));
        }
        if total_steps == 0 {
            return Err(Error::Config("schedule needs at least one step".into()));
        }
        Ok(LRSchedule {
            lr_init,
            lr_min,
            total_steps,
        })
    }

    /// `lr_min + (lr_init − lr_min)·cos(π·t / 2T)`, evaluated as the sine of
    /// the complementary angle so both endpoints are exact.
    pub fn lr_at(&self, t: usize) -> Result<f64> {
        if t > self.total_steps {
            return Err(Error::InvalidArgument(format!(
                "step {t} beyond schedule length {}",
                self.total_steps
            )));
        }
        if t == 0 {
            return Ok(self.lr_init);
        }
        if t == self.total_steps {
            return Ok(self.lr_min);
        }
        let remaining = (self.total_steps - t) as f64 / self.total_steps as f64;
        Ok(self.lr_min + (self.lr_init - self.lr_min) * (FRAC_PI_2 * remaining).sin())
    }
}

pub fn lr_at(schedule: &LRSchedule, t: usize) -> Result<f64> {
    schedule.lr_at(t)
}

/// One momentum SGD update with coupled weight decay:
/// `v ← μ·v + g + λ·p`, then `p ← p − lr·v`.
pub fn sgd_step<T: Real>(
    params: &mut [T],
    grads: &[T],
    velocity: &mut [T],
    momentum: f64,
    weight_decay: f64,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(Error::shape(
            "sgd_step",
            format!(
                "params {}, grads {}, velocity {}",
                params.len(),
                grads.len(),
                velocity.len()
            ),
        ));
    }
    let (mu, wd, lr) = (T::lit(momentum), T::lit(weight_decay), T::lit(lr));
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = mu * *v + g + wd * *p;
        *p -= lr * *v;
    }
    Ok(())
}

/// Velocity buffers for every tensor of a model. Biases get no decay.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd<T: Real> {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<T>>,
}

impl<T: Real> Sgd<T> {
    pub fn new<P: Parameterized<T> + ?Sized>(model: &P, momentum: f64, weight_decay: f64) -> Self {
        let mut velocity = Vec::new();
        model.visit("", &mut |_, _, _, d| velocity.push(vec![T::zero(); d.len()]));
        Sgd {
            momentum,
            weight_decay,
            velocity,
        }
    }

    pub fn velocity(&self) -> &[Vec<T>] {
        &self.velocity
    }

    /// `grads` holds one buffer per tensor, in traversal order.
    pub fn step<P: Parameterized<T> + ?Sized>(&mut self, model: &mut P, grads: &[Vec<T>], lr: f64) -> Result<()> {
        if grads.len() != self.velocity.len() {
            return Err(Error::shape(
                "sgd_step",
                format!("{} gradients for {} tensors", grads.len(), self.velocity.len()),
            ));
        }
        let mut i = 0;
        let mut result = Ok(());
        model.visit_mut("", &mut |_, role, p| {
            if result.is_ok() {
                let wd = if role == ParamRole::Weight { self.weight_decay } else { 0.0 };
                result = sgd_step(p, &grads[i], &mut self.velocity[i], self.momentum, wd, lr);
            }
            i += 1;
        });
        result
    }
}
