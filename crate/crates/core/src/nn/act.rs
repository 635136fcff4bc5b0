use crate::tensor::{Elem, Tensor};

/// Elementwise max(x, 0).
pub fn relu<E: Elem>(x: &Tensor<E>) -> Tensor<E> {
    x.map(|v| if v > E::zero() { v } else { E::zero() })
}

/// Gradient of [`relu`]: upstream gradient masked where the input was <= 0.
pub fn relu_backward<E: Elem>(input: &Tensor<E>, grad_out: &Tensor<E>) -> Tensor<E> {
    assert_eq!(input.shape(), grad_out.shape(), "relu_backward shapes");
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > E::zero() { g } else { E::zero() })
        .collect();
    Tensor::new(input.shape(), data)
}

/// Elementwise logistic 1 / (1 + e^{-x}).
pub fn sigmoid<E: Elem>(x: &Tensor<E>) -> Tensor<E> {
    x.map(|v| E::one() / (E::one() + (-v).exp()))
}

/// Gradient of [`sigmoid`] given its *output* y: g · y · (1 − y).
pub fn sigmoid_backward<E: Elem>(output: &Tensor<E>, grad_out: &Tensor<E>) -> Tensor<E> {
    assert_eq!(output.shape(), grad_out.shape(), "sigmoid_backward shapes");
    let data = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&y, &g)| g * y * (E::one() - y))
        .collect();
    Tensor::new(output.shape(), data)
}

/// Elementwise hyperbolic tangent.
pub fn tanh<E: Elem>(x: &Tensor<E>) -> Tensor<E> {
    x.map(|v| v.tanh())
}

/// Gradient of [`tanh`] given its *output* y: g · (1 − y²).
pub fn tanh_backward<E: Elem>(output: &Tensor<E>, grad_out: &Tensor<E>) -> Tensor<E> {
    assert_eq!(output.shape(), grad_out.shape(), "tanh_backward shapes");
    let data = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&y, &g)| g * (E::one() - y * y))
        .collect();
    Tensor::new(output.shape(), data)
}
