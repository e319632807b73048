//! Nesterov accelerated gradient with coupled weight decay and a cosine
//! learning-rate schedule.
//!
//! The lookahead formulation is used: the gradient is evaluated at
//! `w + mu * v`, so
//!
//! ```text
//! v <- mu * v - lr * (grad(w + mu*v) + lambda * (w + mu*v))
//! w <- w + v
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub total_steps: usize,
}

impl OptimConfig {
    pub fn new(lr0: f64, momentum: f64, weight_decay: f64, total_steps: usize) -> Result<Self> {
        let cfg = OptimConfig {
            lr0,
            momentum,
            weight_decay,
            total_steps,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.momentum >= 0.0 && self.momentum < 1.0) {
            return Err(Error::arg(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::arg(format!(
                "weight decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if !(self.lr0 >= 0.0) || !self.lr0.is_finite() {
            return Err(Error::arg(format!("lr0 must be >= 0, got {}", self.lr0)));
        }
        Ok(())
    }

    /// Cosine decay: `lr(t) = 0.5 * lr0 * (1 + cos(pi * t / T))`. Exactly
    /// `lr0` at `t = 0` and exactly `0` at `t = T`.
    pub fn cosine_lr(&self, t: usize) -> Result<f64> {
        if t > self.total_steps {
            return Err(Error::arg(format!(
                "step {} beyond schedule length {}",
                t, self.total_steps
            )));
        }
        if self.total_steps == 0 {
            return Ok(self.lr0);
        }
        let frac = t as f64 / self.total_steps as f64;
        Ok(0.5 * self.lr0 * (1.0 + (std::f64::consts::PI * frac).cos()))
    }
}

/// One NAG update over a flat parameter vector. `grad_fn` is called once with
/// the lookahead point `w + mu * v` and must return the data gradient there;
/// weight decay is applied here, at the same point. `step` is only used to
/// tag divergence errors.
pub fn nag_step<F>(
    weights: &mut [f64],
    velocity: &mut [f64],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
    step: usize,
    grad_fn: F,
) -> Result<()>
where
    F: FnOnce(&[f64]) -> Result<Vec<f64>>,
{
    if weights.len() != velocity.len() {
        return Err(Error::shape(format!(
            "weights ({}) and velocity ({}) differ",
            weights.len(),
            velocity.len()
        )));
    }
    let lookahead: Vec<f64> = weights
        .iter()
        .zip(velocity.iter())
        .map(|(w, v)| w + momentum * v)
        .collect();
    let grad = grad_fn(&lookahead)?;
    if grad.len() != weights.len() {
        return Err(Error::shape(format!(
            "gradient length {} vs parameter length {}",
            grad.len(),
            weights.len()
        )));
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Divergence { step });
    }
    for i in 0..weights.len() {
        velocity[i] =
            momentum * velocity[i] - lr * (grad[i] + weight_decay * lookahead[i]);
        weights[i] += velocity[i];
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_lr_endpoints_exact() {
        let cfg = OptimConfig::new(0.35, 0.9, 0.0, 1000).unwrap();
        assert_eq!(cfg.cosine_lr(0).unwrap(), 0.35);
        assert_eq!(cfg.cosine_lr(1000).unwrap(), 0.0);
    }

    #[test]
    fn cosine_lr_midpoint() {
        let cfg = OptimConfig::new(0.2, 0.9, 0.0, 100).unwrap();
        assert!((cfg.cosine_lr(50).unwrap() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn cosine_lr_rejects_past_end() {
        let cfg = OptimConfig::new(0.1, 0.9, 0.0, 10).unwrap();
        assert!(matches!(
            cfg.cosine_lr(11),
            Err(crate::Error::Argument(_))
        ));
    }

    #[test]
    fn hand_computed_recurrence_on_quadratic() {
        // loss = w^2 / 2, grad = w, w0 = 1, v0 = 0, mu = 0.9, lr = 0.1.
        let mut w = vec![1.0];
        let mut v = vec![0.0];
        let grad = |p: &[f64]| Ok(p.to_vec());
        nag_step(&mut w, &mut v, 0.1, 0.9, 0.0, 0, grad).unwrap();
        assert!((w[0] - 0.9).abs() < 1e-15);
        assert!((v[0] + 0.1).abs() < 1e-15);
        nag_step(&mut w, &mut v, 0.1, 0.9, 0.0, 1, grad).unwrap();
        assert!((v[0] + 0.171).abs() < 1e-15);
        assert!((w[0] - 0.729).abs() < 1e-15);
    }

    #[test]
    fn zero_momentum_reduces_to_gradient_descent() {
        let mut w = vec![2.0, -3.0];
        let mut v = vec![0.0, 0.0];
        nag_step(&mut w, &mut v, 0.25, 0.0, 0.0, 0, |p| Ok(p.to_vec())).unwrap();
        assert_eq!(w, vec![2.0 - 0.25 * 2.0, -3.0 + 0.25 * 3.0]);
    }

    #[test]
    fn quadratic_converges_within_500_steps() {
        let mut w = vec![1.0, -2.0, 0.5];
        let mut v = vec![0.0; 3];
        let mut converged_at = None;
        for step in 0..500 {
            nag_step(&mut w, &mut v, 0.1, 0.9, 0.0, step, |p| Ok(p.to_vec())).unwrap();
            let norm: f64 = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-6 {
                converged_at = Some(step);
                break;
            }
        }
        assert!(converged_at.is_some(), "no convergence: w = {w:?}");
    }

    #[test]
    fn weight_decay_shrinks_weights_monotonically() {
        let mut w = vec![1.0];
        let mut v = vec![0.0];
        let mut prev = 1.0;
        for step in 0..200 {
            nag_step(&mut w, &mut v, 0.1, 0.0, 0.1, step, |p| {
                Ok(vec![0.0; p.len()])
            })
            .unwrap();
            assert!(w[0] < prev);
            assert!(w[0] > 0.0);
            prev = w[0];
        }
    }

    #[test]
    fn non_finite_gradient_is_divergence() {
        let mut w = vec![1.0];
        let mut v = vec![0.0];
        let err = nag_step(&mut w, &mut v, 0.1, 0.9, 0.0, 17, |_| Ok(vec![f64::NAN]));
        assert!(matches!(err, Err(crate::Error::Divergence { step: 17 })));
    }
}
