use crate::tensor::{Elem, Tensor};

/// Probability clamp used inside the cross-entropy so log() stays finite.
const BCE_EPS: f64 = 1e-7;

/// Default transition point for the smooth-L1 regression loss.
pub const SMOOTH_L1_BETA: f64 = 0.1;

/// Binary cross-entropy, mean over all elements.  `pred` holds probabilities
/// (post-sigmoid) and is clamped to [1e-7, 1 − 1e-7] before the logs.
pub fn bce_loss<E: Elem>(pred: &Tensor<E>, target: &Tensor<E>) -> E {
    assert_eq!(pred.shape(), target.shape(), "bce_loss shapes");
    let mut acc = 0.0f64;
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        let p = p.to_f64().clamp(BCE_EPS, 1.0 - BCE_EPS);
        let t = t.to_f64();
        acc -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
    }
    E::from_f64(acc / pred.len() as f64)
}

/// Gradient of [`bce_loss`] w.r.t. `pred`.
pub fn bce_loss_backward<E: Elem>(pred: &Tensor<E>, target: &Tensor<E>) -> Tensor<E> {
    assert_eq!(pred.shape(), target.shape(), "bce_loss shapes");
    let inv_n = 1.0 / pred.len() as f64;
    let data = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let p = p.to_f64().clamp(BCE_EPS, 1.0 - BCE_EPS);
            let t = t.to_f64();
            E::from_f64((p - t) / (p * (1.0 - p)) * inv_n)
        })
        .collect();
    Tensor::new(pred.shape(), data)
}

/// Smooth L1 (Huber-style), mean over all elements:
/// 0.5·d²/beta for |d| < beta, |d| − 0.5·beta otherwise.
pub fn smooth_l1_loss<E: Elem>(pred: &Tensor<E>, target: &Tensor<E>, beta: f64) -> E {
    assert_eq!(pred.shape(), target.shape(), "smooth_l1 shapes");
    assert!(beta > 0.0);
    let mut acc = 0.0f64;
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        let d = (p.to_f64() - t.to_f64()).abs();
        acc += if d < beta {
            0.5 * d * d / beta
        } else {
            d - 0.5 * beta
        };
    }
    E::from_f64(acc / pred.len() as f64)
}

/// Gradient of [`smooth_l1_loss`] w.r.t. `pred`: clamp(d/beta, ±1) / N.
pub fn smooth_l1_loss_backward<E: Elem>(
    pred: &Tensor<E>,
    target: &Tensor<E>,
    beta: f64,
) -> Tensor<E> {
    assert_eq!(pred.shape(), target.shape(), "smooth_l1 shapes");
    let inv_n = 1.0 / pred.len() as f64;
    let data = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = p.to_f64() - t.to_f64();
            E::from_f64((d / beta).clamp(-1.0, 1.0) * inv_n)
        })
        .collect();
    Tensor::new(pred.shape(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_perfect_prediction_is_tiny() {
        let pred: Tensor = Tensor::new(&[4], vec![1.0, 0.0, 1.0, 0.0]);
        let target: Tensor = Tensor::new(&[4], vec![1.0, 0.0, 1.0, 0.0]);
        let loss = bce_loss(&pred, &target);
        // clamped at 1e-7 => loss = -ln(1 - 1e-7) ≈ 1e-7 per element
        assert!(loss <= 1.2e-7, "loss {loss}");
        assert!(loss > 0.0);
    }

    #[test]
    fn bce_uniform_prediction_is_ln2() {
        let pred: Tensor = Tensor::full(&[8], 0.5);
        let target: Tensor = Tensor::new(&[8], vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        let loss = bce_loss(&pred, &target);
        assert!((loss - std::f32::consts::LN_2).abs() < 1e-6);
    }

    #[test]
    fn smooth_l1_regimes() {
        // |d| = 0.05 < beta: quadratic 0.5·0.0025/0.1 = 0.0125
        // |d| = 0.5  >= beta: linear 0.5 − 0.05 = 0.45
        let pred: Tensor = Tensor::new(&[2], vec![0.05, 0.5]);
        let target: Tensor = Tensor::zeros(&[2]);
        let loss = smooth_l1_loss(&pred, &target, SMOOTH_L1_BETA);
        assert!((loss - (0.0125 + 0.45) / 2.0).abs() < 1e-7);
    }

    #[test]
    fn smooth_l1_gradient_saturates_at_one_over_n() {
        let pred: Tensor = Tensor::new(&[2], vec![5.0, -5.0]);
        let target: Tensor = Tensor::zeros(&[2]);
        let g = smooth_l1_loss_backward(&pred, &target, SMOOTH_L1_BETA);
        assert_eq!(g.data(), &[0.5, -0.5]);
    }
}
