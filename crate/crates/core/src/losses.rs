//! Margin-based softmax losses over cosine logits: plain softmax, A-Softmax
//! (multiplicative angular margin), CosFace (additive cosine margin) and
//! ArcFace (additive angular margin), plus the pluggable loss interface the
//! distillation engine trains through.
//!
//! All variants share the same structure: with unit embeddings and unit
//! prototypes, the target-class logit is `s * f(m, theta_y)` and every other
//! logit is `s * cos(theta_k)`. The per-sample loss is
//!
//! ```text
//! softplus( logsumexp_{k != y}(s * cos_k)  -  s * f(m, cos_y) )
//! ```
//!
//! which equals the cross-entropy of the target class and keeps full relative
//! precision even when the target logit dominates. Batch reduction is always
//! the arithmetic mean.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{logsumexp, softplus, Matrix};

/// Tolerance for cosines slightly outside [-1, 1]; beyond it is an error.
const COS_RANGE_TOL: f64 = 1e-9;
/// Interior clamp used before the ArcFace derivative's 1/sqrt(1-c^2) factor.
const COS_SING_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossVariant {
    Softmax,
    ASoftmax,
    CosFace,
    ArcFace,
}

impl LossVariant {
    pub fn name(&self) -> &'static str {
        match self {
            LossVariant::Softmax => "softmax",
            LossVariant::ASoftmax => "asoftmax",
            LossVariant::CosFace => "cosface",
            LossVariant::ArcFace => "arcface",
        }
    }
}

impl std::str::FromStr for LossVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "softmax" => Ok(LossVariant::Softmax),
            "asoftmax" => Ok(LossVariant::ASoftmax),
            "cosface" => Ok(LossVariant::CosFace),
            "arcface" => Ok(LossVariant::ArcFace),
            other => Err(Error::arg(format!("unknown loss variant '{other}'"))),
        }
    }
}

/// Loss variant plus its margin `m` and scale `s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub variant: LossVariant,
    pub m: f64,
    pub s: f64,
}

impl LossConfig {
    pub fn new(variant: LossVariant, m: f64, s: f64) -> Result<Self> {
        let cfg = LossConfig { variant, m, s };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn softmax(s: f64) -> Result<Self> {
        Self::new(LossVariant::Softmax, 0.0, s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s > 0.0) || !self.s.is_finite() {
            return Err(Error::arg(format!("scale s must be > 0, got {}", self.s)));
        }
        if !(self.m >= 0.0) || !self.m.is_finite() {
            return Err(Error::arg(format!("margin m must be >= 0, got {}", self.m)));
        }
        if self.variant == LossVariant::ASoftmax && (self.m < 1.0 || self.m.fract() != 0.0) {
            return Err(Error::arg(format!(
                "asoftmax requires an integer margin m >= 1, got {}",
                self.m
            )));
        }
        Ok(())
    }

    /// The margin function `f(m, theta)` expressed in terms of `cos(theta)`.
    ///
    /// - softmax: `cos(theta)`
    /// - asoftmax: `cos(m * theta)` via the degree-m Chebyshev polynomial
    /// - cosface: `cos(theta) - m`
    /// - arcface: `cos(theta + m)`, falling back to `cos(theta) - m*sin(m)`
    ///   once `theta + m >= pi` so the target logit stays monotone in theta
    pub fn margin_fn(&self, cos_theta: f64) -> Result<f64> {
        let c = check_cosine(cos_theta)?;
        Ok(match self.variant {
            LossVariant::Softmax => c,
            LossVariant::ASoftmax => chebyshev_t(self.m as u32, c),
            LossVariant::CosFace => c - self.m,
            LossVariant::ArcFace => {
                // theta + m >= pi  <=>  cos(theta) <= -cos(m)
                if c > -self.m.cos() {
                    c * self.m.cos() - (1.0 - c * c).max(0.0).sqrt() * self.m.sin()
                } else {
                    c - self.m * self.m.sin()
                }
            }
        })
    }

    /// d f / d cos(theta) on the branch selected by `margin_fn`.
    fn margin_deriv(&self, cos_theta: f64) -> Result<f64> {
        let c = check_cosine(cos_theta)?;
        Ok(match self.variant {
            LossVariant::Softmax | LossVariant::CosFace => 1.0,
            LossVariant::ASoftmax => {
                let m = self.m as u32;
                m as f64 * chebyshev_u(m.saturating_sub(1), c)
            }
            LossVariant::ArcFace => {
                if c > -self.m.cos() {
                    let cc = c.clamp(-1.0 + COS_SING_CLAMP, 1.0 - COS_SING_CLAMP);
                    self.m.cos() + self.m.sin() * (cc / (1.0 - cc * cc).sqrt())
                } else {
                    1.0
                }
            }
        })
    }
}

/// Validates a cosine is within [-1, 1] up to tolerance and clamps it in.
fn check_cosine(c: f64) -> Result<f64> {
    if !c.is_finite() || c < -1.0 - COS_RANGE_TOL || c > 1.0 + COS_RANGE_TOL {
        return Err(Error::arg(format!("cosine {c} outside [-1, 1]")));
    }
    Ok(c.clamp(-1.0, 1.0))
}

/// Chebyshev polynomial of the first kind: T_m(cos t) = cos(m t).
fn chebyshev_t(m: u32, c: f64) -> f64 {
    match m {
        0 => 1.0,
        1 => c,
        _ => {
            let mut prev = 1.0;
            let mut cur = c;
            for _ in 2..=m {
                let next = 2.0 * c * cur - prev;
                prev = cur;
                cur = next;
            }
            cur
        }
    }
}

/// Chebyshev polynomial of the second kind; T_m'(c) = m * U_{m-1}(c).
fn chebyshev_u(m: u32, c: f64) -> f64 {
    match m {
        0 => 1.0,
        1 => 2.0 * c,
        _ => {
            let mut prev = 1.0;
            let mut cur = 2.0 * c;
            for _ in 2..=m {
                let next = 2.0 * c * cur - prev;
                prev = cur;
                cur = next;
            }
            cur
        }
    }
}

/// A loss over one row of cosine logits. Implemented by [`LossConfig`] for
/// the built-in family; anything else plugs in through [`CallbackLoss`].
pub trait CosineLoss {
    /// Per-sample loss (nats) given the cosines against every class prototype.
    fn forward(&self, cosines: &[f64], label: usize) -> Result<f64>;

    /// Gradient of the per-sample loss with respect to each cosine.
    fn backward(&self, cosines: &[f64], label: usize) -> Result<Vec<f64>>;

    /// Echoed into training reports.
    fn describe(&self) -> serde_json::Value {
        serde_json::json!("custom")
    }
}

fn check_inputs(cosines: &[f64], label: usize) -> Result<()> {
    if cosines.len() < 2 {
        return Err(Error::arg(format!(
            "need at least 2 classes, got {}",
            cosines.len()
        )));
    }
    if label >= cosines.len() {
        return Err(Error::arg(format!(
            "label {} out of range for {} classes",
            label,
            cosines.len()
        )));
    }
    Ok(())
}

impl CosineLoss for LossConfig {
    fn forward(&self, cosines: &[f64], label: usize) -> Result<f64> {
        self.validate()?;
        check_inputs(cosines, label)?;
        let target_logit = self.s * self.margin_fn(cosines[label])?;
        let mut other_logits = Vec::with_capacity(cosines.len() - 1);
        for (k, &c) in cosines.iter().enumerate() {
            if k != label {
                other_logits.push(self.s * check_cosine(c)?);
            }
        }
        Ok(softplus(logsumexp(&other_logits)? - target_logit))
    }

    fn backward(&self, cosines: &[f64], label: usize) -> Result<Vec<f64>> {
        self.validate()?;
        check_inputs(cosines, label)?;
        let k = cosines.len();
        let mut logits = Vec::with_capacity(k);
        for (i, &c) in cosines.iter().enumerate() {
            if i == label {
                logits.push(self.s * self.margin_fn(c)?);
            } else {
                logits.push(self.s * check_cosine(c)?);
            }
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
        let denom: f64 = exps.iter().sum();
        // Softmax probabilities; the target gradient uses -sum of the others
        // rather than p_y - 1 so it keeps relative precision near saturation.
        let mut grad = vec![0.0; k];
        let mut sum_other = 0.0;
        for i in 0..k {
            if i != label {
                let p = exps[i] / denom;
                grad[i] = self.s * p;
                sum_other += p;
            }
        }
        grad[label] = -self.s * self.margin_deriv(cosines[label])? * sum_other;
        Ok(grad)
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({
            "variant": self.variant.name(),
            "m": self.m,
            "s": self.s,
        })
    }
}

type ForwardFn = dyn Fn(&[f64], usize) -> Result<f64>;
type BackwardFn = dyn Fn(&[f64], usize) -> Result<Vec<f64>>;

/// A loss supplied as a pair of callbacks. Construction fails if the backward
/// callback is missing, since the engine trains by gradient descent.
pub struct CallbackLoss {
    forward: Box<ForwardFn>,
    backward: Box<BackwardFn>,
    name: String,
}

impl CallbackLoss {
    pub fn new(
        name: impl Into<String>,
        forward: Box<ForwardFn>,
        backward: Option<Box<BackwardFn>>,
    ) -> Result<Self> {
        let backward =
            backward.ok_or_else(|| Error::Config("loss plugin is missing a backward callback".into()))?;
        Ok(CallbackLoss {
            forward,
            backward,
            name: name.into(),
        })
    }
}

impl CosineLoss for CallbackLoss {
    fn forward(&self, cosines: &[f64], label: usize) -> Result<f64> {
        (self.forward)(cosines, label)
    }

    fn backward(&self, cosines: &[f64], label: usize) -> Result<Vec<f64>> {
        (self.backward)(cosines, label)
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({ "plugin": self.name })
    }
}

/// Mean loss over a batch of cosine rows, plus the gradient of that mean with
/// respect to every cosine (already divided by the batch size).
pub fn batch_loss(
    loss: &dyn CosineLoss,
    cosines: &Matrix,
    labels: &[usize],
) -> Result<(f64, Matrix)> {
    let n = cosines.rows();
    if n == 0 {
        return Err(Error::arg("batch_loss: empty batch"));
    }
    if labels.len() != n {
        return Err(Error::shape(format!(
            "batch_loss: {} label(s) for {} row(s)",
            labels.len(),
            n
        )));
    }
    let inv_n = 1.0 / n as f64;
    let mut total = 0.0;
    let mut grad = Matrix::zeros(n, cosines.cols());
    for i in 0..n {
        total += loss.forward(cosines.row(i), labels[i])?;
        let g = loss.backward(cosines.row(i), labels[i])?;
        for (dst, gk) in grad.row_mut(i).iter_mut().zip(g) {
            *dst = gk * inv_n;
        }
    }
    Ok((total * inv_n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Rng;

    fn cfg(variant: LossVariant, m: f64, s: f64) -> LossConfig {
        LossConfig::new(variant, m, s).unwrap()
    }

    #[test]
    fn margin_fn_reduces_to_identity_at_zero_margin() {
        let arc = cfg(LossVariant::ArcFace, 0.0, 1.0);
        let cos = cfg(LossVariant::CosFace, 0.0, 1.0);
        for &c in &[-1.0, -0.5, 0.0, 0.3, 0.999, 1.0] {
            assert_eq!(arc.margin_fn(c).unwrap(), c);
            assert_eq!(cos.margin_fn(c).unwrap(), c);
        }
    }

    #[test]
    fn margin_fn_hand_values() {
        let cos = cfg(LossVariant::CosFace, 0.35, 1.0);
        assert!((cos.margin_fn(1.0).unwrap() - 0.65).abs() < 1e-15);

        // theta = 0, m = 0.5 -> cos(0.5)
        let arc = cfg(LossVariant::ArcFace, 0.5, 1.0);
        assert!((arc.margin_fn(1.0).unwrap() - 0.5f64.cos()).abs() < 1e-12);
        assert!((arc.margin_fn(1.0).unwrap() - 0.877582561890373).abs() < 1e-12);

        // theta = pi/4, m = 2 -> cos(pi/2) = 0
        let asoft = cfg(LossVariant::ASoftmax, 2.0, 1.0);
        let c = std::f64::consts::FRAC_1_SQRT_2;
        assert!(asoft.margin_fn(c).unwrap().abs() < 1e-15);
    }

    #[test]
    fn margin_fn_rejects_out_of_range_cosine() {
        let arc = cfg(LossVariant::ArcFace, 0.5, 1.0);
        assert!(arc.margin_fn(1.0 + 1e-10).is_ok()); // inside tolerance, clamped
        assert!(matches!(
            arc.margin_fn(1.1),
            Err(crate::Error::Argument(_))
        ));
    }

    #[test]
    fn asoftmax_requires_integer_margin() {
        assert!(LossConfig::new(LossVariant::ASoftmax, 1.5, 64.0).is_err());
        assert!(LossConfig::new(LossVariant::ASoftmax, 0.0, 64.0).is_err());
        assert!(LossConfig::new(LossVariant::ASoftmax, 3.0, 64.0).is_ok());
    }

    #[test]
    fn forward_equal_logits_is_ln2() {
        let sm = cfg(LossVariant::Softmax, 0.0, 1.0);
        for &c in &[-0.4, 0.0, 0.7] {
            let v = sm.forward(&[c, c], 0).unwrap();
            assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
        }
    }

    #[test]
    fn forward_closed_form_two_classes() {
        let sm = cfg(LossVariant::Softmax, 0.0, 1.0);
        let v = sm.forward(&[1.0, 0.0], 0).unwrap();
        let expect = (1.0 + (-1.0f64).exp()).ln();
        assert!((v - expect).abs() < 1e-15);
        assert!((v - 0.313261687518223).abs() < 1e-12);
    }

    #[test]
    fn forward_saturated_arcface_keeps_relative_precision() {
        // ArcFace with m = 0.5, s = 64: the target logit dominates and the
        // loss is ln(1 + e^(-64 cos 0.5)) ~ 4.1e-25, not zero.
        let arc = cfg(LossVariant::ArcFace, 0.5, 64.0);
        let v = arc.forward(&[1.0, 0.0], 0).unwrap();
        let expect = (-64.0 * 0.5f64.cos()).exp();
        assert!(v > 0.0);
        assert!((v - expect).abs() / expect < 1e-12, "v = {v:e}");
        assert!((v - 4.1e-25).abs() < 0.1e-25);
    }

    #[test]
    fn backward_symmetric_softmax() {
        let sm = cfg(LossVariant::Softmax, 0.0, 1.0);
        let g = sm.backward(&[0.3, 0.3], 0).unwrap();
        assert!((g[0] + 0.5).abs() < 1e-15);
        assert!((g[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn logit_space_gradient_sums_to_zero() {
        // grad wrt target logit = grad_cos[y] / (s f'), wrt others = grad/s;
        // their sum must vanish (softmax identity), here exactly by
        // construction.
        let mut rng = Rng::new(99);
        for _ in 0..50 {
            let k = 2 + rng.next_below(8);
            let cosines: Vec<f64> = (0..k).map(|_| rng.uniform(-0.95, 0.95)).collect();
            let label = rng.next_below(k);
            for cfg in [
                cfg(LossVariant::Softmax, 0.0, 8.0),
                cfg(LossVariant::CosFace, 0.35, 12.0),
                cfg(LossVariant::ArcFace, 0.5, 10.0),
                cfg(LossVariant::ASoftmax, 2.0, 6.0),
            ] {
                let g = cfg.backward(&cosines, label).unwrap();
                let fp = cfg.margin_deriv(cosines[label]).unwrap();
                let mut sum = g[label] / (cfg.s * fp);
                for (i, gi) in g.iter().enumerate() {
                    if i != label {
                        sum += gi / cfg.s;
                    }
                }
                assert!(sum.abs() < 1e-12, "sum {sum}");
            }
        }
    }

    fn central_diff(cfg: &LossConfig, cosines: &[f64], label: usize) -> Vec<f64> {
        let h = 1e-6;
        let mut fd = Vec::with_capacity(cosines.len());
        for i in 0..cosines.len() {
            let mut plus = cosines.to_vec();
            let mut minus = cosines.to_vec();
            plus[i] += h;
            minus[i] -= h;
            let fp = cfg.forward(&plus, label).unwrap();
            let fm = cfg.forward(&minus, label).unwrap();
            fd.push((fp - fm) / (2.0 * h));
        }
        fd
    }

    fn vec_rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        diff / na.max(nb).max(1e-12)
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = Rng::new(4242);
        let mut cases = 0;
        while cases < 100 {
            let k = 2 + rng.next_below(15);
            let variant = match rng.next_below(4) {
                0 => LossVariant::Softmax,
                1 => LossVariant::ASoftmax,
                2 => LossVariant::CosFace,
                _ => LossVariant::ArcFace,
            };
            let m = match variant {
                LossVariant::Softmax => 0.0,
                LossVariant::ASoftmax => (1 + rng.next_below(3)) as f64,
                _ => rng.uniform(0.0, 0.6),
            };
            let s = rng.uniform(1.0, 16.0);
            let cfg = cfg(variant, m, s);
            let label = rng.next_below(k);
            // Stay away from |cos|=1 and from the ArcFace branch point.
            let mut cosines: Vec<f64> = (0..k).map(|_| rng.uniform(-0.99, 0.99)).collect();
            if variant == LossVariant::ArcFace {
                let boundary = -m.cos();
                if (cosines[label] - boundary).abs() < 1e-2 {
                    cosines[label] = boundary + 0.05;
                }
            }
            let analytic = cfg.backward(&cosines, label).unwrap();
            let fd = central_diff(&cfg, &cosines, label);
            assert!(
                vec_rel_err(&analytic, &fd) < 1e-6,
                "variant {variant:?} m {m} s {s}: {analytic:?} vs {fd:?}"
            );
            cases += 1;
        }
    }

    #[test]
    fn zero_margin_reductions_are_exact() {
        let mut rng = Rng::new(7);
        for _ in 0..1000 {
            let k = 2 + rng.next_below(6);
            let cosines: Vec<f64> = (0..k).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let label = rng.next_below(k);
            let s = rng.uniform(0.5, 64.0);
            let base = cfg(LossVariant::Softmax, 0.0, s)
                .forward(&cosines, label)
                .unwrap();
            for c in [
                cfg(LossVariant::ArcFace, 0.0, s),
                cfg(LossVariant::CosFace, 0.0, s),
                cfg(LossVariant::ASoftmax, 1.0, s),
            ] {
                assert_eq!(c.forward(&cosines, label).unwrap(), base);
            }
        }
    }

    #[test]
    fn loss_is_nondecreasing_in_margin() {
        let cosines = [0.7, 0.2, -0.1, 0.4];
        for variant in [LossVariant::CosFace, LossVariant::ArcFace] {
            let mut prev = f64::NEG_INFINITY;
            for i in 0..20 {
                let m = i as f64 * 0.05;
                let v = cfg(variant, m, 16.0).forward(&cosines, 0).unwrap();
                assert!(v >= prev - 1e-15, "{variant:?} m={m}");
                prev = v;
            }
        }
    }

    #[test]
    fn loss_vanishes_as_scale_grows_when_target_dominates() {
        let cosines = [0.8, 0.1, -0.3];
        let mut prev = f64::INFINITY;
        for &s in &[1.0, 4.0, 16.0, 64.0, 256.0] {
            let v = cfg(LossVariant::ArcFace, 0.2, s).forward(&cosines, 0).unwrap();
            assert!(v < prev);
            prev = v;
        }
        assert!(prev < 1e-10);
    }

    #[test]
    fn label_out_of_range_errors() {
        let sm = cfg(LossVariant::Softmax, 0.0, 1.0);
        assert!(matches!(
            sm.forward(&[0.1, 0.2], 2),
            Err(crate::Error::Argument(_))
        ));
    }

    #[test]
    fn callback_loss_requires_backward() {
        let fwd: Box<ForwardFn> = Box::new(|_, _| Ok(0.0));
        assert!(matches!(
            CallbackLoss::new("zero", fwd, None),
            Err(crate::Error::Config(_))
        ));
    }

    #[test]
    fn batch_loss_means_over_rows() {
        let sm = cfg(LossVariant::Softmax, 0.0, 1.0);
        let cosines = Matrix::from_rows(&[vec![0.5, 0.5], vec![1.0, 0.0]]).unwrap();
        let (v, grad) = batch_loss(&sm, &cosines, &[0, 0]).unwrap();
        let v0 = sm.forward(&[0.5, 0.5], 0).unwrap();
        let v1 = sm.forward(&[1.0, 0.0], 0).unwrap();
        assert!((v - 0.5 * (v0 + v1)).abs() < 1e-15);
        let g0 = sm.backward(&[0.5, 0.5], 0).unwrap();
        assert!((grad.get(0, 0) - 0.5 * g0[0]).abs() < 1e-15);
    }
}
