//! Numerically stable scalar reductions.

use crate::error::{Error, Result};

/// `log(sum_i exp(v_i))` via max-shift; never overflows for finite inputs.
pub fn logsumexp(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::arg("logsumexp: empty input"));
    }
    if let Some(x) = v.iter().find(|x| !x.is_finite()) {
        return Err(Error::arg(format!("logsumexp: non-finite entry {x}")));
    }
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = v.iter().map(|&x| (x - m).exp()).sum();
    Ok(m + sum.ln())
}

/// `ln(1 + exp(x))` with full relative precision in both tails.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::rng::Rng;

    #[test]
    fn single_element_is_identity() {
        assert_eq!(logsumexp(&[2.5]).unwrap(), 2.5);
        assert_eq!(logsumexp(&[-1e300]).unwrap(), -1e300);
    }

    #[test]
    fn two_equal_entries_add_ln2() {
        let a = 0.37;
        let got = logsumexp(&[a, a]).unwrap();
        assert!((got - (a + std::f64::consts::LN_2)).abs() < 1e-15);
    }

    #[test]
    fn large_entries_do_not_overflow() {
        let got = logsumexp(&[1000.0, 1000.0]).unwrap();
        assert!(got.is_finite());
        assert!((got - (1000.0 + std::f64::consts::LN_2)).abs() < 1e-12);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(logsumexp(&[]), Err(crate::Error::Argument(_))));
    }

    #[test]
    fn bounds_hold_for_random_inputs() {
        // max(v) <= logsumexp(v) <= max(v) + ln(len(v))
        let mut rng = Rng::new(3);
        for _ in 0..200 {
            let n = 1 + rng.next_below(12);
            let v: Vec<f64> = (0..n).map(|_| rng.uniform(-50.0, 50.0)).collect();
            let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = logsumexp(&v).unwrap();
            assert!(lse >= m);
            assert!(lse <= m + (n as f64).ln() + 1e-12);
        }
    }

    #[test]
    fn softplus_tails() {
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-16);
        // Deep negative tail keeps relative precision.
        let x: f64 = -56.0;
        let expect = x.exp(); // ln(1+e^x) ~ e^x
        assert!((softplus(x) - expect).abs() / expect < 1e-12);
        // Large positive tail is ~x.
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
    }
}
