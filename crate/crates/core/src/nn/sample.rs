use crate::tensor::{Elem, Tensor};

// Per-axis interpolation tap: two source indices and the blend weight.
struct AxisTap {
    i0: usize,
    i1: usize,
    frac: f64,
}

/// Doubling upsample with bilinear interpolation, half-pixel-center mapping:
/// source coordinate = (dst + 0.5) / 2 − 0.5, clamped at the borders.
pub fn upsample_bilinear_2x<E: Elem>(input: &Tensor<E>) -> Tensor<E> {
    assert_eq!(input.rank(), 4, "upsample wants [N, C, H, W]");
    let (n, c, h, w) = dims4(input);
    let (ho, wo) = (h * 2, w * 2);
    let ytab = axis_taps(h, ho);
    let xtab = axis_taps(w, wo);
    let mut out = vec![E::zero(); n * c * ho * wo];
    for plane in 0..n * c {
        let src = &input.data()[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * ho * wo..(plane + 1) * ho * wo];
        for (oy, yt) in ytab.iter().enumerate() {
            let wy = E::from_f64(yt.frac);
            let one_wy = E::from_f64(1.0 - yt.frac);
            let r0 = &src[yt.i0 * w..yt.i0 * w + w];
            let r1 = &src[yt.i1 * w..yt.i1 * w + w];
            let drow = &mut dst[oy * wo..(oy + 1) * wo];
            for (ox, xt) in xtab.iter().enumerate() {
                let wx = E::from_f64(xt.frac);
                let one_wx = E::from_f64(1.0 - xt.frac);
                let top = one_wx * r0[xt.i0] + wx * r0[xt.i1];
                let bot = one_wx * r1[xt.i0] + wx * r1[xt.i1];
                drow[ox] = one_wy * top + wy * bot;
            }
        }
    }
    Tensor::new(&[n, c, ho, wo], out)
}

/// Gradient of [`upsample_bilinear_2x`]: scatter the upstream gradient back
/// through the same interpolation weights.
pub fn upsample_bilinear_2x_backward<E: Elem>(
    input_shape: &[usize],
    grad_out: &Tensor<E>,
) -> Tensor<E> {
    assert_eq!(input_shape.len(), 4);
    let (n, c, h, w) = (
        input_shape[0],
        input_shape[1],
        input_shape[2],
        input_shape[3],
    );
    let (ho, wo) = (h * 2, w * 2);
    assert_eq!(grad_out.shape(), &[n, c, ho, wo], "upsample_backward shape");
    let ytab = axis_taps(h, ho);
    let xtab = axis_taps(w, wo);
    let mut d_in = vec![E::zero(); n * c * h * w];
    for plane in 0..n * c {
        let go = &grad_out.data()[plane * ho * wo..(plane + 1) * ho * wo];
        let di = &mut d_in[plane * h * w..(plane + 1) * h * w];
        for (oy, yt) in ytab.iter().enumerate() {
            let wy = E::from_f64(yt.frac);
            let one_wy = E::from_f64(1.0 - yt.frac);
            for (ox, xt) in xtab.iter().enumerate() {
                let g = go[oy * wo + ox];
                let wx = E::from_f64(xt.frac);
                let one_wx = E::from_f64(1.0 - xt.frac);
                di[yt.i0 * w + xt.i0] = di[yt.i0 * w + xt.i0] + g * one_wy * one_wx;
                di[yt.i0 * w + xt.i1] = di[yt.i0 * w + xt.i1] + g * one_wy * wx;
                di[yt.i1 * w + xt.i0] = di[yt.i1 * w + xt.i0] + g * wy * one_wx;
                di[yt.i1 * w + xt.i1] = di[yt.i1 * w + xt.i1] + g * wy * wx;
            }
        }
    }
    Tensor::new(input_shape, d_in)
}

fn axis_taps(src_len: usize, dst_len: usize) -> Vec<AxisTap> {
    (0..dst_len)
        .map(|d| {
            let mut s = (d as f64 + 0.5) / 2.0 - 0.5;
            if s < 0.0 {
                s = 0.0;
            }
            let i0 = s.floor() as usize;
            let frac = s - i0 as f64;
            let i1 = (i0 + 1).min(src_len - 1);
            AxisTap { i0, i1, frac }
        })
        .collect()
}

/// Sample a feature map at normalized points.
///
/// `feature` is [N, C, H, W]; `coords` is [N, P, 2] with the last axis (x, y)
/// in [−1, 1], where x = −1 maps to the center of column 0 and x = +1 to the
/// center of column W−1 (same for y over rows).  Each output value blends the
/// 4 neighboring texels; neighbors that fall off the lattice contribute zero,
/// so points outside the valid range fade to zero (zero-padding policy).
///
/// Returns [N, C, P].
pub fn grid_sample_bilinear<E: Elem>(feature: &Tensor<E>, coords: &Tensor<E>) -> Tensor<E> {
    let (n, c, h, w) = dims4(feature);
    assert_eq!(coords.rank(), 3, "coords want [N, P, 2]");
    assert_eq!(coords.shape()[0], n, "coords batch mismatch");
    assert_eq!(coords.shape()[2], 2, "coords last axis must be (x, y)");
    let p = coords.shape()[1];
    debug_assert!(
        coords.data().iter().all(|v| v.is_finite()),
        "grid_sample coords must be finite"
    );

    let mut out = vec![E::zero(); n * c * p];
    for b in 0..n {
        for pi in 0..p {
            let x = coords.data()[(b * p + pi) * 2].to_f64();
            let y = coords.data()[(b * p + pi) * 2 + 1].to_f64();
            let px = (x + 1.0) / 2.0 * (w as f64 - 1.0);
            let py = (y + 1.0) / 2.0 * (h as f64 - 1.0);
            let x0 = px.floor() as isize;
            let y0 = py.floor() as isize;
            let fx = E::from_f64(px - x0 as f64);
            let fy = E::from_f64(py - y0 as f64);
            let taps = [
                (x0, y0, (E::one() - fx) * (E::one() - fy)),
                (x0 + 1, y0, fx * (E::one() - fy)),
                (x0, y0 + 1, (E::one() - fx) * fy),
                (x0 + 1, y0 + 1, fx * fy),
            ];
            for ci in 0..c {
                let plane = &feature.data()[(b * c + ci) * h * w..(b * c + ci + 1) * h * w];
                let mut acc = E::zero();
                for &(tx, ty, tw) in &taps {
                    if tx >= 0 && tx < w as isize && ty >= 0 && ty < h as isize {
                        acc = acc + tw * plane[ty as usize * w + tx as usize];
                    }
                }
                out[(b * c + ci) * p + pi] = acc;
            }
        }
    }
    Tensor::new(&[n, c, p], out)
}

/// Gradients of [`grid_sample_bilinear`] for both the feature map and the
/// coordinates.
pub fn grid_sample_bilinear_backward<E: Elem>(
    feature: &Tensor<E>,
    coords: &Tensor<E>,
    grad_out: &Tensor<E>,
) -> (Tensor<E>, Tensor<E>) {
    let (n, c, h, w) = dims4(feature);
    let p = coords.shape()[1];
    assert_eq!(grad_out.shape(), &[n, c, p], "grid_sample_backward shape");

    let mut d_feat = vec![E::zero(); feature.len()];
    let mut d_coords = vec![E::zero(); coords.len()];
    let sx = E::from_f64((w as f64 - 1.0) / 2.0); // d px / d x
    let sy = E::from_f64((h as f64 - 1.0) / 2.0);

    for b in 0..n {
        for pi in 0..p {
            let x = coords.data()[(b * p + pi) * 2].to_f64();
            let y = coords.data()[(b * p + pi) * 2 + 1].to_f64();
            let px = (x + 1.0) / 2.0 * (w as f64 - 1.0);
            let py = (y + 1.0) / 2.0 * (h as f64 - 1.0);
            let x0 = px.floor() as isize;
            let y0 = py.floor() as isize;
            let fx = E::from_f64(px - x0 as f64);
            let fy = E::from_f64(py - y0 as f64);

            let mut d_px = E::zero();
            let mut d_py = E::zero();
            for ci in 0..c {
                let base = (b * c + ci) * h * w;
                let g = grad_out.data()[(b * c + ci) * p + pi];
                // fetch the 4 taps (zero off-lattice)
                let fetch = |tx: isize, ty: isize, d: &[E]| -> E {
                    if tx >= 0 && tx < w as isize && ty >= 0 && ty < h as isize {
                        d[base + ty as usize * w + tx as usize]
                    } else {
                        E::zero()
                    }
                };
                let a = fetch(x0, y0, feature.data());
                let bv = fetch(x0 + 1, y0, feature.data());
                let cv = fetch(x0, y0 + 1, feature.data());
                let dv = fetch(x0 + 1, y0 + 1, feature.data());

                d_px = d_px + g * ((E::one() - fy) * (bv - a) + fy * (dv - cv));
                d_py = d_py + g * ((E::one() - fx) * (cv - a) + fx * (dv - bv));

                let mut scatter = |tx: isize, ty: isize, tw: E| {
                    if tx >= 0 && tx < w as isize && ty >= 0 && ty < h as isize {
                        let idx = base + ty as usize * w + tx as usize;
                        d_feat[idx] = d_feat[idx] + g * tw;
                    }
                };
                scatter(x0, y0, (E::one() - fx) * (E::one() - fy));
                scatter(x0 + 1, y0, fx * (E::one() - fy));
                scatter(x0, y0 + 1, (E::one() - fx) * fy);
                scatter(x0 + 1, y0 + 1, fx * fy);
            }
            d_coords[(b * p + pi) * 2] = d_px * sx;
            d_coords[(b * p + pi) * 2 + 1] = d_py * sy;
        }
    }
    (
        Tensor::new(feature.shape(), d_feat),
        Tensor::new(coords.shape(), d_coords),
    )
}

fn dims4<E: Elem>(t: &Tensor<E>) -> (usize, usize, usize, usize) {
    assert_eq!(t.rank(), 4, "expected rank-4 tensor, got {:?}", t.shape());
    (t.shape()[0], t.shape()[1], t.shape()[2], t.shape()[3])
}
