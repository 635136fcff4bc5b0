use crate::error::{Error, Result};
use crate::tensor::{mm_nn, transpose, Elem, Tensor};

/// 2-D convolution over [N, Cin, H, W] with an [Cout, Cin, k, k] kernel.
///
/// Supported hyper-parameters: k in {1, 3}, stride in {1, 2}, zero padding in
/// {0, 1}.  Output extent per axis is (H + 2·pad − k) / stride + 1.
///
/// Internally lowers each batch item to an im2col matrix and multiplies; the
/// accumulation order per output element is fixed, so results are
/// bit-reproducible run to run.
pub fn conv2d<E: Elem>(
    input: &Tensor<E>,
    weight: &Tensor<E>,
    bias: &Tensor<E>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<E>> {
    let geo = ConvGeometry::resolve(input, weight, bias, stride, pad)?;
    let ConvGeometry {
        n,
        cin,
        h,
        w,
        cout,
        k,
        ho,
        wo,
    } = geo;

    let ck = cin * k * k;
    let spatial = ho * wo;
    let mut col = vec![E::zero(); ck * spatial];
    let mut out = vec![E::zero(); n * cout * spatial];

    for b in 0..n {
        let in_b = &input.data()[b * cin * h * w..(b + 1) * cin * h * w];
        im2col(in_b, cin, h, w, k, stride, pad, ho, wo, &mut col);
        let out_b = &mut out[b * cout * spatial..(b + 1) * cout * spatial];
        mm_nn(weight.data(), &col, cout, ck, spatial, out_b);
        for co in 0..cout {
            let beta = bias.data()[co];
            for v in &mut out_b[co * spatial..(co + 1) * spatial] {
                *v = *v + beta;
            }
        }
    }
    Ok(Tensor::new(&[n, cout, ho, wo], out))
}

/// Gradients of [`conv2d`] with respect to input, weight, and bias.
pub fn conv2d_backward<E: Elem>(
    input: &Tensor<E>,
    weight: &Tensor<E>,
    stride: usize,
    pad: usize,
    grad_out: &Tensor<E>,
) -> (Tensor<E>, Tensor<E>, Tensor<E>) {
    let bias = Tensor::zeros(&[weight.shape()[0]]);
    let geo = ConvGeometry::resolve(input, weight, &bias, stride, pad)
        .expect("conv2d_backward: shapes were valid in forward");
    let ConvGeometry {
        n,
        cin,
        h,
        w,
        cout,
        k,
        ho,
        wo,
    } = geo;
    assert_eq!(
        grad_out.shape(),
        &[n, cout, ho, wo],
        "conv2d_backward: upstream gradient shape"
    );

    let ck = cin * k * k;
    let spatial = ho * wo;
    let mut col = vec![E::zero(); ck * spatial];
    let mut d_col = vec![E::zero(); ck * spatial];
    let mut d_input = Tensor::zeros(input.shape());
    let mut d_weight = vec![E::zero(); cout * ck];
    let mut d_bias = vec![E::zero(); cout];
    // W^T once; reused for every batch item.
    let w_t = transpose(weight.data(), cout, ck);

    for b in 0..n {
        let in_b = &input.data()[b * cin * h * w..(b + 1) * cin * h * w];
        let go_b = &grad_out.data()[b * cout * spatial..(b + 1) * cout * spatial];

        im2col(in_b, cin, h, w, k, stride, pad, ho, wo, &mut col);

        // dW += dOut · col^T  (computed as dOut[cout×S] · colT[S×ck])
        let col_t = transpose(&col, ck, spatial);
        mm_nn(go_b, &col_t, cout, spatial, ck, &mut d_weight);

        // db += row sums of dOut
        for co in 0..cout {
            let mut acc = E::zero();
            for &g in &go_b[co * spatial..(co + 1) * spatial] {
                acc = acc + g;
            }
            d_bias[co] = d_bias[co] + acc;
        }

        // dCol = W^T · dOut, then scatter back to the input layout.
        d_col.iter_mut().for_each(|v| *v = E::zero());
        mm_nn(&w_t, go_b, ck, cout, spatial, &mut d_col);
        let di_b = &mut d_input.data_mut()[b * cin * h * w..(b + 1) * cin * h * w];
        col2im(&d_col, cin, h, w, k, stride, pad, ho, wo, di_b);
    }

    (
        d_input,
        Tensor::new(weight.shape(), d_weight),
        Tensor::new(&[cout], d_bias),
    )
}

struct ConvGeometry {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeometry {
    fn resolve<E: Elem>(
        input: &Tensor<E>,
        weight: &Tensor<E>,
        bias: &Tensor<E>,
        stride: usize,
        pad: usize,
    ) -> Result<ConvGeometry> {
        if input.rank() != 4 || weight.rank() != 4 {
            return Err(Error::ShapeMismatch(format!(
                "conv2d wants rank-4 input and weight, got input {:?}, weight {:?}",
                input.shape(),
                weight.shape()
            )));
        }
        let (n, cin, h, w) = (
            input.shape()[0],
            input.shape()[1],
            input.shape()[2],
            input.shape()[3],
        );
        let (cout, wcin, kh, kw) = (
            weight.shape()[0],
            weight.shape()[1],
            weight.shape()[2],
            weight.shape()[3],
        );
        if wcin != cin || kh != kw {
            return Err(Error::ShapeMismatch(format!(
                "conv2d channel/kernel mismatch: input {:?} vs weight {:?}",
                input.shape(),
                weight.shape()
            )));
        }
        if bias.shape() != [cout] {
            return Err(Error::ShapeMismatch(format!(
                "conv2d bias {:?} vs {cout} output channels",
                bias.shape()
            )));
        }
        let k = kh;
        assert!(k == 1 || k == 3, "conv2d kernel must be 1 or 3, got {k}");
        assert!(stride == 1 || stride == 2, "conv2d stride must be 1 or 2");
        assert!(pad <= 1, "conv2d padding must be 0 or 1");
        assert!(h + 2 * pad >= k && w + 2 * pad >= k, "input too small");
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        Ok(ConvGeometry {
            n,
            cin,
            h,
            w,
            cout,
            k,
            ho,
            wo,
        })
    }
}

/// Lower one [Cin, H, W] image into a [Cin·k·k, Ho·Wo] column matrix.
#[allow(clippy::too_many_arguments)]
fn im2col<E: Elem>(
    input: &[E],
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    col: &mut [E],
) {
    let spatial = ho * wo;
    for ci in 0..cin {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut col[row * spatial..(row + 1) * spatial];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let dst_row = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        dst_row.iter_mut().for_each(|v| *v = E::zero());
                        continue;
                    }
                    let src_row =
                        &input[(ci * h + iy as usize) * w..(ci * h + iy as usize + 1) * w];
                    for (ox, d) in dst_row.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        *d = if ix < 0 || ix >= w as isize {
                            E::zero()
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Transpose of [`im2col`]: scatter-add a column matrix back onto the image.
#[allow(clippy::too_many_arguments)]
fn col2im<E: Elem>(
    col: &[E],
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    out: &mut [E],
) {
    let spatial = ho * wo;
    for ci in 0..cin {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &col[row * spatial..(row + 1) * spatial];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row =
                        &mut out[(ci * h + iy as usize) * w..(ci * h + iy as usize + 1) * w];
                    let src_row = &src[oy * wo..(oy + 1) * wo];
                    for (ox, &s) in src_row.iter().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst_row[ix as usize] = dst_row[ix as usize] + s;
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_ones_3x3_same_conv_center_is_nine() {
        // 3×3 all-ones input, 3×3 all-ones kernel, stride 1, pad 1:
        // the center output sums the full 3×3 window.
        let input: Tensor = Tensor::full(&[1, 1, 3, 3], 1.0);
        let weight: Tensor = Tensor::full(&[1, 1, 3, 3], 1.0);
        let bias: Tensor = Tensor::zeros(&[1]);
        let out = conv2d(&input, &weight, &bias, 1, 1).unwrap();
        assert_eq!(out.shape(), &[1, 1, 3, 3]);
        assert_eq!(out.data()[4], 9.0);
        // corners see a 2×2 window, edges 2×3
        assert_eq!(out.data()[0], 4.0);
        assert_eq!(out.data()[1], 6.0);
    }

    #[test]
    fn stride_2_shapes() {
        let input: Tensor = Tensor::zeros(&[2, 3, 8, 8]);
        let weight: Tensor = Tensor::zeros(&[5, 3, 3, 3]);
        let bias: Tensor = Tensor::zeros(&[5]);
        let out = conv2d(&input, &weight, &bias, 2, 1).unwrap();
        assert_eq!(out.shape(), &[2, 5, 4, 4]);
    }

    #[test]
    fn kernel_1x1_is_channel_mix() {
        let input: Tensor = Tensor::new(&[1, 2, 1, 2], vec![1.0, 2.0, 10.0, 20.0]);
        let weight: Tensor = Tensor::new(&[1, 2, 1, 1], vec![1.0, 0.5]);
        let bias: Tensor = Tensor::new(&[1], vec![0.25]);
        let out = conv2d(&input, &weight, &bias, 1, 0).unwrap();
        assert_eq!(out.data(), &[1.0 + 5.0 + 0.25, 2.0 + 10.0 + 0.25]);
    }

    #[test]
    fn channel_mismatch_is_reported_with_both_shapes() {
        let input: Tensor = Tensor::zeros(&[1, 3, 4, 4]);
        let weight: Tensor = Tensor::zeros(&[2, 4, 3, 3]);
        let bias: Tensor = Tensor::zeros(&[2]);
        let err = conv2d(&input, &weight, &bias, 1, 1).unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("[1, 3, 4, 4]") && msg.contains("[2, 4, 3, 3]"),
            "{msg}"
        );
    }

    #[test]
    fn bias_gradient_is_output_sum() {
        let input: Tensor = Tensor::full(&[1, 1, 2, 2], 1.0);
        let weight: Tensor = Tensor::full(&[1, 1, 1, 1], 1.0);
        let grad_out: Tensor = Tensor::full(&[1, 1, 2, 2], 0.5);
        let (_, _, db) = conv2d_backward(&input, &weight, 1, 0, &grad_out);
        assert_eq!(db.data(), &[2.0]);
    }
}
