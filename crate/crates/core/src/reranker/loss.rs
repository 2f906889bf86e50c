//! Grouped softmax cross-entropy with one positive against `m` negatives.
//!
//! `ℓ = −ln( exp(s⁺) / (exp(s⁺) + Σⱼ exp(s⁻ⱼ)) )`, evaluated after
//! subtracting the group maximum. The gradient with respect to the scores is
//! the group softmax minus the one-hot positive indicator.

use crate::error::{Error, Result};

fn check(positive: f64, negatives: &[f64]) -> Result<()> {
    if negatives.is_empty() {
        return Err(Error::InvalidConfig("a group needs at least one negative".into()));
    }
    if !positive.is_finite() || negatives.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("reranker score in loss group".into()));
    }
    Ok(())
}

/// Softmax over `[positive, negatives...]`.
fn softmax(positive: f64, negatives: &[f64]) -> (Vec<f64>, f64) {
    let max = negatives.iter().copied().fold(positive, f64::max);
    let exps: Vec<f64> = std::iter::once(positive)
        .chain(negatives.iter().copied())
        .map(|s| (s - max).exp())
        .collect();
    let z: f64 = exps.iter().sum();
    let probs = exps.iter().map(|e| e / z).collect();
    (probs, max + z.ln())
}

pub fn lce_loss(positive: f64, negatives: &[f64]) -> Result<f64> {
    check(positive, negatives)?;
    let (_, log_z) = softmax(positive, negatives);
    Ok((log_z - positive).max(0.0))
}

/// Gradient with respect to `[positive, negatives...]`.
pub fn lce_gradient(positive: f64, negatives: &[f64]) -> Result<Vec<f64>> {
    check(positive, negatives)?;
    let (mut grad, _) = softmax(positive, negatives);
    grad[0] -= 1.0;
    Ok(grad)
}

/// Loss and gradient in one pass.
pub fn lce_loss_and_gradient(positive: f64, negatives: &[f64]) -> Result<(f64, Vec<f64>)> {
    check(positive, negatives)?;
    let (mut grad, log_z) = softmax(positive, negatives);
    grad[0] -= 1.0;
    Ok(((log_z - positive).max(0.0), grad))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn uniform_group() {
        let l = lce_loss(0.3, &[0.3; 19]).unwrap();
        assert!((l - 20f64.ln()).abs() < 1e-12);
        assert!((l - 2.995732).abs() < 1e-6);
        let g = lce_gradient(0.3, &[0.3; 19]).unwrap();
        assert!((g[0] + 0.95).abs() < 1e-12);
        assert!(g[1..].iter().all(|v| (v - 0.05).abs() < 1e-12));
    }

    #[test]
    fn two_negative_example() {
        let expected = (std::f64::consts::E + 2.0).ln() - 1.0;
        let l = lce_loss(1.0, &[0.0, 0.0]).unwrap();
        assert!((l - expected).abs() < 1e-12);
        assert!((l - 0.551445).abs() < 1e-6);
    }

    #[test]
    fn large_positive_drives_loss_to_zero() {
        let mut prev = f64::INFINITY;
        for shift in [0.0, 1.0, 10.0, 100.0, 1000.0] {
            let l = lce_loss(shift, &[0.5, -0.2, 1.0]).unwrap();
            assert!(l <= prev);
            prev = l;
        }
        assert!(prev < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(lce_loss(f64::NAN, &[0.0]).is_err());
        assert!(lce_loss(0.0, &[f64::INFINITY]).is_err());
        assert!(lce_loss(0.0, &[]).is_err());
    }

    proptest! {
        #[test]
        fn gradient_sums_to_zero(pos in -50.0f64..50.0, negs in prop::collection::vec(-50.0f64..50.0, 1..30)) {
            let g = lce_gradient(pos, &negs).unwrap();
            prop_assert!(g.iter().sum::<f64>().abs() < 1e-12);
        }

        #[test]
        fn loss_is_monotone(pos in -10.0f64..10.0, negs in prop::collection::vec(-10.0f64..10.0, 1..10), d in 0.01f64..5.0) {
            let base = lce_loss(pos, &negs).unwrap();
            prop_assert!(base >= 0.0);
            prop_assert!(lce_loss(pos + d, &negs).unwrap() <= base);
            let mut up = negs.clone();
            up[0] += d;
            prop_assert!(lce_loss(pos, &up).unwrap() >= base);
        }
    }
}
