use crate::error::{Error, Result};
use crate::tensor::{mm_nn, transpose, Elem, Tensor};

/// Fully-connected layer: out[N, Dout] = input[N, Din] · weight[Dout, Din]^T + bias.
pub fn linear<E: Elem>(
    input: &Tensor<E>,
    weight: &Tensor<E>,
    bias: &Tensor<E>,
) -> Result<Tensor<E>> {
    if input.rank() != 2 || weight.rank() != 2 {
        return Err(Error::ShapeMismatch(format!(
            "linear wants rank-2 input and weight, got {:?} and {:?}",
            input.shape(),
            weight.shape()
        )));
    }
    let (n, din) = (input.shape()[0], input.shape()[1]);
    let (dout, wdin) = (weight.shape()[0], weight.shape()[1]);
    if wdin != din || bias.shape() != [dout] {
        return Err(Error::ShapeMismatch(format!(
            "linear: input {:?} vs weight {:?} vs bias {:?}",
            input.shape(),
            weight.shape(),
            bias.shape()
        )));
    }
    let w_t = transpose(weight.data(), dout, din);
    let mut out = vec![E::zero(); n * dout];
    mm_nn(input.data(), &w_t, n, din, dout, &mut out);
    for row in out.chunks_exact_mut(dout) {
        for (o, &b) in row.iter_mut().zip(bias.data()) {
            *o = *o + b;
        }
    }
    Ok(Tensor::new(&[n, dout], out))
}

/// Gradients of [`linear`] w.r.t. input, weight, and bias.
pub fn linear_backward<E: Elem>(
    input: &Tensor<E>,
    weight: &Tensor<E>,
    grad_out: &Tensor<E>,
) -> (Tensor<E>, Tensor<E>, Tensor<E>) {
    let (n, din) = (input.shape()[0], input.shape()[1]);
    let (dout, _) = (weight.shape()[0], weight.shape()[1]);
    assert_eq!(grad_out.shape(), &[n, dout], "linear_backward grad shape");

    // dIn = dOut · W
    let mut d_in = vec![E::zero(); n * din];
    mm_nn(grad_out.data(), weight.data(), n, dout, din, &mut d_in);

    // dW = dOut^T · input
    let go_t = transpose(grad_out.data(), n, dout);
    let mut d_w = vec![E::zero(); dout * din];
    mm_nn(&go_t, input.data(), dout, n, din, &mut d_w);

    // db = column sums of dOut
    let mut d_b = vec![E::zero(); dout];
    for row in grad_out.data().chunks_exact(dout) {
        for (d, &g) in d_b.iter_mut().zip(row) {
            *d = *d + g;
        }
    }

    (
        Tensor::new(&[n, din], d_in),
        Tensor::new(&[dout, din], d_w),
        Tensor::new(&[dout], d_b),
    )
}
