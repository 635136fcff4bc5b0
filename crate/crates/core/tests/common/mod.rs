//! Shared test oracles: central finite differences and independently written
//! reference implementations the fast paths are checked against.
#![allow(dead_code)]

use heatgrasp::tensor::{Elem, Tensor};
use rand::Rng;

// Numerical gradient check settings: central differences in f64 with step
// 1e-4; a gradient entry passes if it agrees within 1e-4 relative error or
// 1e-6 absolute error.
pub const FD_STEP: f64 = 1e-4;
pub const FD_REL_TOL: f64 = 1e-4;
pub const FD_ABS_FLOOR: f64 = 1e-6;

/// Central finite-difference gradient of scalar `f` at `x`.
pub fn finite_diff(mut f: impl FnMut(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut xs = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = xs[i];
        xs[i] = orig + FD_STEP;
        let hi = f(&xs);
        xs[i] = orig - FD_STEP;
        let lo = f(&xs);
        xs[i] = orig;
        grad[i] = (hi - lo) / (2.0 * FD_STEP);
    }
    grad
}

/// Assert analytic and numeric gradients agree entrywise.
pub fn assert_grads_close(analytic: &[f64], numeric: &[f64], what: &str) {
    assert_eq!(analytic.len(), numeric.len(), "{what}: gradient lengths");
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let abs = (a - n).abs();
        if abs <= FD_ABS_FLOOR {
            continue;
        }
        let rel = abs / a.abs().max(n.abs());
        assert!(
            rel <= FD_REL_TOL,
            "{what}: grad[{i}] analytic={a} numeric={n} rel={rel:.3e}"
        );
    }
}

/// Same check, returning the worst relative error instead of panicking.
pub fn max_grad_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| {
            let abs = (a - n).abs();
            if abs <= FD_ABS_FLOOR {
                0.0
            } else {
                abs / a.abs().max(n.abs())
            }
        })
        .fold(0.0, f64::max)
}

/// Fixed random projection so a tensor-valued op becomes a scalar function.
pub fn projection(rng: &mut impl Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect())
}

/// Random values bounded away from zero (for ops with a kink there).
pub fn random_tensor_away_from(
    rng: &mut impl Rng,
    shape: &[usize],
    scale: f64,
    dead_zone: f64,
) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            sign * rng.gen_range(dead_zone..scale)
        })
        .collect();
    Tensor::new(shape, data)
}

// ─── independent references ────────────────────────────────────────────────

/// Naive 4-neighbor bilinear lookup, written directly from the mapping
/// definition (−1 → first texel center, +1 → last texel center; taps off the
/// lattice read zero).  Deliberately loops per output element with no im2col
/// or batching tricks.
pub fn naive_grid_sample<E: Elem>(feature: &Tensor<E>, coords: &Tensor<E>) -> Tensor<E> {
    let (n, c, h, w) = (
        feature.shape()[0],
        feature.shape()[1],
        feature.shape()[2],
        feature.shape()[3],
    );
    let p = coords.shape()[1];
    let mut out = Tensor::zeros(&[n, c, p]);
    for b in 0..n {
        for ci in 0..c {
            for pi in 0..p {
                let x = coords.data()[(b * p + pi) * 2].to_f64();
                let y = coords.data()[(b * p + pi) * 2 + 1].to_f64();
                let px = (x + 1.0) * (w as f64 - 1.0) / 2.0;
                let py = (y + 1.0) * (h as f64 - 1.0) / 2.0;
                let x0 = px.floor();
                let y0 = py.floor();
                let mut acc = 0.0;
                for (ty, tx) in [
                    (y0, x0),
                    (y0, x0 + 1.0),
                    (y0 + 1.0, x0),
                    (y0 + 1.0, x0 + 1.0),
                ] {
                    if tx < 0.0 || ty < 0.0 || tx >= w as f64 || ty >= h as f64 {
                        continue;
                    }
                    let weight = (1.0 - (px - tx).abs()) * (1.0 - (py - ty).abs());
                    let v = feature.data()[((b * c + ci) * h + ty as usize) * w + tx as usize];
                    acc += weight * v.to_f64();
                }
                out.data_mut()[(b * c + ci) * p + pi] = E::from_f64(acc);
            }
        }
    }
    out
}

/// Greedy farthest-point reference: recompute all distances from scratch at
/// every pick (no incremental min-distance array), ties to the point that
/// comes first in row-major (v, then u) order.
pub fn naive_fps(points: &[(f32, f32)], k: usize, seed_index: usize) -> Vec<usize> {
    assert!(!points.is_empty());
    let k = k.min(points.len());
    let mut chosen = vec![seed_index];
    while chosen.len() < k {
        let mut best: Option<(usize, f64)> = None;
        for (i, &(u, v)) in points.iter().enumerate() {
            if chosen.contains(&i) {
                continue;
            }
            let d = chosen
                .iter()
                .map(|&j| {
                    let (du, dv) = (u - points[j].0, v - points[j].1);
                    (du as f64) * (du as f64) + (dv as f64) * (dv as f64)
                })
                .fold(f64::INFINITY, f64::min);
            let better = match best {
                None => true,
                Some((bi, bd)) => {
                    d > bd || (d == bd && row_major_key(points[i]) < row_major_key(points[bi]))
                }
            };
            if better {
                best = Some((i, d));
            }
        }
        chosen.push(best.unwrap().0);
    }
    chosen
}

fn row_major_key(p: (f32, f32)) -> (f32, f32) {
    (p.1, p.0)
}

/// Quaternion for R = Rz(theta)·Ry(beta)·Rx(gamma), built by composing the
/// three axis quaternions — a different route than the matrix code takes.
pub fn euler_quaternion(theta: f64, gamma: f64, beta: f64) -> [f64; 4] {
    fn axis_q(axis: usize, angle: f64) -> [f64; 4] {
        let (s, c) = (angle / 2.0).sin_cos();
        let mut q = [c, 0.0, 0.0, 0.0];
        q[1 + axis] = s;
        q
    }
    fn mul(a: [f64; 4], b: [f64; 4]) -> [f64; 4] {
        [
            a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
            a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
            a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
            a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
        ]
    }
    mul(mul(axis_q(2, theta), axis_q(1, beta)), axis_q(0, gamma))
}

/// Geodesic angle between two rotations via quaternion inner product.
pub fn quaternion_distance(a: [f64; 4], b: [f64; 4]) -> f64 {
    let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    2.0 * dot.abs().clamp(0.0, 1.0).acos()
}

/// Reference suppression: walk best-first, recompute every pairwise test
/// from scratch, measure orientation distance through quaternions instead of
/// rotation matrices.
pub fn naive_nms(
    grasps: &[heatgrasp::geometry::GraspPose],
    dist_m: f32,
    angle_rad: f32,
) -> Vec<heatgrasp::geometry::GraspPose> {
    let mut order: Vec<usize> = (0..grasps.len()).collect();
    order.sort_by(|&a, &b| grasps[b].score.partial_cmp(&grasps[a].score).unwrap());
    let mut kept: Vec<usize> = Vec::new();
    for &i in &order {
        let gi = &grasps[i];
        let qi = euler_quaternion(gi.theta as f64, gi.gamma as f64, gi.beta as f64);
        let mut ok = true;
        for &j in &kept {
            let gj = &grasps[j];
            let dx = (gi.x - gj.x) as f64;
            let dy = (gi.y - gj.y) as f64;
            let dz = (gi.z - gj.z) as f64;
            if (dx * dx + dy * dy + dz * dz).sqrt() > dist_m as f64 {
                continue;
            }
            let qj = euler_quaternion(gj.theta as f64, gj.gamma as f64, gj.beta as f64);
            if quaternion_distance(qi, qj) <= angle_rad as f64 {
                ok = false;
                break;
            }
        }
        if ok {
            kept.push(i);
        }
    }
    kept.into_iter().map(|i| grasps[i]).collect()
}
