//! Anchor-based rotation head: per region, a small MLP scores a grid of
//! (gamma, beta) orientation anchors and regresses the in-plane angle, jaw
//! width, and a sub-cell position/depth refinement for each anchor cell.
//!
//! Channel layout per anchor cell, after activation:
//!
//! ```text
//! 0  score        sigmoid   confidence this orientation bin holds a grasp
//! 1  theta        tanh      in-plane angle   / (π/2)
//! 2  width        tanh      2·(w / w_max) − 1
//! 3  offset u     tanh      heatmap cells, ±1
//! 4  offset v     tanh      heatmap cells, ±1
//! 5  offset depth tanh      meters / OFFSET_DEPTH_MAX_M
//! ```
//!
//! Anchors quantize gamma and beta; the regressed channels sharpen
//! everything else, so a single head output decodes directly to a full
//! 6-DoF grasp.

use crate::error::{Error, Result};
use crate::geometry::{
    pixel_to_point, project_point, rotation_distance, CameraIntrinsics, GraspPose,
};
use crate::nn::{
    kaiming_uniform, lecun_uniform, linear, linear_backward, relu, relu_backward, sigmoid,
    sigmoid_backward, tanh, tanh_backward, LayerGrads, ParamSet,
};
use crate::region::{RegionCenter, REGION_REF_DEPTH_M};
use crate::tensor::{Elem, Tensor};
use rand::Rng;
use std::f64::consts::PI;

/// Channels per anchor cell in the head output.
pub const CELL_CHANNELS: usize = 6;

/// Largest refinement the depth-offset channel can express, in meters.
pub const OFFSET_DEPTH_MAX_M: f32 = 0.02;

/// Hidden width of the per-region MLP.
pub const HIDDEN: usize = 256;

/// Anchor angles for `bins` bins over (−π/2, π/2): bin centers at
/// −π/2 + (i + 0.5)·π/bins.
pub fn anchor_angles(bins: usize) -> Vec<f32> {
    assert!(bins >= 1);
    (0..bins)
        .map(|i| (-PI / 2.0 + (i as f64 + 0.5) * PI / bins as f64) as f32)
        .collect()
}

/// Map an angle in [−π/2, π/2] to its anchor bin.  A value lying exactly on
/// a bin boundary belongs to the lower bin.
pub fn anchor_bin(angle: f32, bins: usize) -> usize {
    let t = (angle as f64 + PI / 2.0) / (PI / bins as f64);
    let mut j = t.floor();
    if t - j <= 1e-9 && j > 0.0 {
        j -= 1.0; // exactly on (or numerically at) a boundary → lower bin
    }
    (j as usize).min(bins - 1)
}

/// Initialize the rotation head for `feat_dim`-dimensional flattened region
/// features and an `a_gamma` × `a_beta` anchor grid.
pub fn init_rotation_params<E: Elem>(
    feat_dim: usize,
    a_gamma: usize,
    a_beta: usize,
    rng: &mut impl Rng,
    params: &mut ParamSet<E>,
) {
    let out = a_gamma * a_beta * CELL_CHANNELS;
    params.insert(
        "rot.fc1.w",
        kaiming_uniform(rng, &[HIDDEN, feat_dim], feat_dim),
    );
    params.insert("rot.fc1.b", Tensor::zeros(&[HIDDEN]));
    params.insert("rot.fc2.w", lecun_uniform(rng, &[out, HIDDEN], HIDDEN));
    params.insert("rot.fc2.b", Tensor::zeros(&[out]));
}

/// Cached forward state of the rotation head.
pub struct RotationActs<E: Elem = f32> {
    input_shape: Vec<usize>,
    flat: Tensor<E>,
    fc1_pre: Tensor<E>,
    fc1_post: Tensor<E>,
    /// activated output [k, a_gamma·a_beta·6]: ch 0 sigmoid, ch 1–5 tanh
    pub out: Tensor<E>,
}

impl<E: Elem> RotationActs<E> {
    /// Smallest |pre-activation| at the hidden ReLU — the margin a numerical
    /// probe has before flipping a unit.
    pub fn min_relu_margin(&self) -> f64 {
        self.fc1_pre
            .data()
            .iter()
            .map(|&v| v.to_f64().abs())
            .fold(f64::INFINITY, f64::min)
    }
}

/// Run the head on region features [k, C, g, g].
pub fn rotation_head_forward<E: Elem>(
    p: &ParamSet<E>,
    features: &Tensor<E>,
) -> Result<RotationActs<E>> {
    if features.rank() != 4 {
        return Err(Error::ShapeMismatch(format!(
            "region features must be [k, C, g, g], got {:?}",
            features.shape()
        )));
    }
    let k = features.shape()[0];
    let d: usize = features.shape()[1..].iter().product();
    let flat = features.clone().reshape(&[k, d]);
    let fc1_pre = linear(&flat, p.get("rot.fc1.w"), p.get("rot.fc1.b"))?;
    let fc1_post = relu(&fc1_pre);
    let raw = linear(&fc1_post, p.get("rot.fc2.w"), p.get("rot.fc2.b"))?;
    let m = raw.shape()[1];
    let mut out = Tensor::zeros(&[k, m]);
    let sig = sigmoid(&raw);
    let tnh = tanh(&raw);
    for r in 0..k {
        for j in 0..m {
            let idx = r * m + j;
            out.data_mut()[idx] = if j % CELL_CHANNELS == 0 {
                sig.data()[idx]
            } else {
                tnh.data()[idx]
            };
        }
    }
    Ok(RotationActs {
        input_shape: features.shape().to_vec(),
        flat,
        fc1_pre,
        fc1_post,
        out,
    })
}

/// Backward through the head; `d_out` is the gradient on the activated
/// output.  The returned input gradient has the original [k, C, g, g] shape.
pub fn rotation_head_backward<E: Elem>(
    p: &ParamSet<E>,
    acts: &RotationActs<E>,
    d_out: &Tensor<E>,
) -> LayerGrads<E> {
    let (k, m) = (acts.out.shape()[0], acts.out.shape()[1]);
    assert_eq!(d_out.shape(), acts.out.shape(), "rotation head d_out shape");
    // both activations differentiate via their own output value
    let d_sig = sigmoid_backward(&acts.out, d_out);
    let d_tanh = tanh_backward(&acts.out, d_out);
    let mut d_raw = Tensor::zeros(&[k, m]);
    for r in 0..k {
        for j in 0..m {
            let idx = r * m + j;
            d_raw.data_mut()[idx] = if j % CELL_CHANNELS == 0 {
                d_sig.data()[idx]
            } else {
                d_tanh.data()[idx]
            };
        }
    }
    let mut grads = LayerGrads::new(&acts.input_shape);
    let (d_fc1_post, dw2, db2) = linear_backward(&acts.fc1_post, p.get("rot.fc2.w"), &d_raw);
    grads.add("rot.fc2.w", dw2);
    grads.add("rot.fc2.b", db2);
    let d_fc1_pre = relu_backward(&acts.fc1_pre, &d_fc1_post);
    let (d_flat, dw1, db1) = linear_backward(&acts.flat, p.get("rot.fc1.w"), &d_fc1_pre);
    grads.add("rot.fc1.w", dw1);
    grads.add("rot.fc1.b", db1);
    grads.input = d_flat.reshape(&acts.input_shape);
    grads
}

// ─── training targets ──────────────────────────────────────────────────────

/// Per-region, per-anchor-cell training targets in activation space.
pub struct RotationTargets {
    /// [k, a_gamma·a_beta] — 1 where a label occupies the anchor cell
    pub scores: Tensor,
    /// [k, a_gamma·a_beta·5] — θ, width, offsets; meaningful only where positive
    pub regress: Tensor,
    /// [k, a_gamma·a_beta·5] — 1 on the regression entries of positive cells
    pub mask: Tensor,
    /// labels that matched no region (too far from every center)
    pub unmatched: usize,
}

/// How far (in heatmap cells) a label may sit from a region center and
/// still count as that region's positive.  Decode can move a detection at
/// most one cell off its center, so matching beyond reach would ask the
/// offset channels for values they cannot express — their clamped targets
/// all land exactly on ±1 and the tanh outputs saturate to death.  The
/// footprint radius still applies when it is smaller.
pub const MATCH_REACH_CELLS: f64 = 1.5;

/// Build rotation targets by assigning each label to every region whose
/// depth-scaled footprint radius — capped at [`MATCH_REACH_CELLS`] —
/// contains the label's projected center.  Within an anchor cell the label
/// nearest the cell's anchor pair wins.
pub fn make_gt_rotation(
    labels: &[GraspPose],
    centers: &[RegionCenter],
    intr: &CameraIntrinsics,
    a_gamma: usize,
    a_beta: usize,
    span_cells: f32,
    stride: usize,
    w_max: f32,
) -> RotationTargets {
    let k = centers.len();
    let cells = a_gamma * a_beta;
    let mut scores = Tensor::zeros(&[k, cells]);
    let mut regress = Tensor::zeros(&[k, cells * 5]);
    let mut mask = Tensor::zeros(&[k, cells * 5]);
    // per (region, cell): angular distance² of the label currently written
    let mut best = vec![f64::INFINITY; k * cells];
    let gammas = anchor_angles(a_gamma);
    let betas = anchor_angles(a_beta);
    let mut unmatched = 0usize;

    for label in labels {
        let Ok((u_img, v_img)) = project_point([label.x, label.y, label.z], intr) else {
            unmatched += 1;
            continue;
        };
        let uh = (u_img as f64 + 0.5) / stride as f64 - 0.5;
        let vh = (v_img as f64 + 0.5) / stride as f64 - 0.5;
        let ig = anchor_bin(label.gamma, a_gamma);
        let ib = anchor_bin(label.beta, a_beta);
        let cell = ig * a_beta + ib;
        let ang2 = {
            let dg = (label.gamma - gammas[ig]) as f64;
            let db = (label.beta - betas[ib]) as f64;
            dg * dg + db * db
        };
        let mut hit = false;
        for (r, c) in centers.iter().enumerate() {
            let radius = (span_cells as f64 / 2.0 * (REGION_REF_DEPTH_M / c.depth_m) as f64)
                .min(MATCH_REACH_CELLS);
            let du = uh - c.u as f64;
            let dv = vh - c.v as f64;
            if du * du + dv * dv > radius * radius {
                continue;
            }
            hit = true;
            scores.data_mut()[r * cells + cell] = 1.0;
            let slot = r * cells + cell;
            if ang2 >= best[slot] {
                continue;
            }
            best[slot] = ang2;
            let clamp1 = |x: f64| x.clamp(-1.0, 1.0) as f32;
            let base = (r * cells + cell) * 5;
            let t = &mut regress.data_mut()[base..base + 5];
            t[0] = clamp1(label.theta as f64 / (PI / 2.0));
            t[1] = clamp1(2.0 * (label.width / w_max) as f64 - 1.0);
            t[2] = clamp1(du);
            t[3] = clamp1(dv);
            t[4] = clamp1((label.z - c.depth_m) as f64 / OFFSET_DEPTH_MAX_M as f64);
            for m in &mut mask.data_mut()[base..base + 5] {
                *m = 1.0;
            }
        }
        if !hit {
            unmatched += 1;
        }
    }
    RotationTargets {
        scores,
        regress,
        mask,
        unmatched,
    }
}

// ─── decoding ──────────────────────────────────────────────────────────────

/// Decode statistics worth surfacing: how often the refined depth was
/// unusable and the region's own depth had to stand in.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DecodeStats {
    pub depth_fallbacks: usize,
}

/// Turn head outputs into scored 6-DoF grasps.  Anchor cells with confidence
/// ≥ `cell_threshold` survive; each final score is the cell confidence times
/// the region's graspability.  Results are sorted by score, best first.
#[allow(clippy::too_many_arguments)]
pub fn decode_grasps(
    out: &Tensor,
    centers: &[RegionCenter],
    intr: &CameraIntrinsics,
    a_gamma: usize,
    a_beta: usize,
    cell_threshold: f32,
    w_max: f32,
    stride: usize,
) -> (Vec<GraspPose>, DecodeStats) {
    let k = centers.len();
    let cells = a_gamma * a_beta;
    assert_eq!(
        out.shape(),
        &[k, cells * CELL_CHANNELS],
        "head output shape"
    );
    let gammas = anchor_angles(a_gamma);
    let betas = anchor_angles(a_beta);
    let mut grasps = Vec::new();
    let mut stats = DecodeStats::default();
    for (r, c) in centers.iter().enumerate() {
        for cell in 0..cells {
            let base = r * cells * CELL_CHANNELS + cell * CELL_CHANNELS;
            let conf = out.data()[base];
            if conf < cell_threshold {
                continue;
            }
            let theta = out.data()[base + 1] * (PI as f32 / 2.0);
            let width = (out.data()[base + 2] + 1.0) / 2.0 * w_max;
            let du = out.data()[base + 3];
            let dv = out.data()[base + 4];
            let dd = out.data()[base + 5] * OFFSET_DEPTH_MAX_M;
            let uh = c.u as f32 + du;
            let vh = c.v as f32 + dv;
            let u_img = (uh + 0.5) * stride as f32 - 0.5;
            let v_img = (vh + 0.5) * stride as f32 - 0.5;
            let mut z = c.depth_m + dd;
            if !(z > 0.0) {
                z = c.depth_m;
                stats.depth_fallbacks += 1;
            }
            let Ok(pos) = pixel_to_point(u_img, v_img, z * 1000.0, intr) else {
                stats.depth_fallbacks += 1;
                continue;
            };
            grasps.push(GraspPose {
                x: pos[0],
                y: pos[1],
                z: pos[2],
                theta,
                gamma: gammas[cell / a_beta],
                beta: betas[cell % a_beta],
                width,
                score: conf * c.graspability,
            });
        }
    }
    grasps.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
    (grasps, stats)
}

/// Greedy non-maximum suppression: walk grasps best-first and drop any that
/// is simultaneously within `dist_m` of a kept grasp's position *and* within
/// `angle_rad` of its orientation.  Far-away or differently-oriented
/// duplicates both survive.
pub fn grasp_nms(grasps: &[GraspPose], dist_m: f32, angle_rad: f32) -> Vec<GraspPose> {
    let mut order: Vec<usize> = (0..grasps.len()).collect();
    order.sort_by(|&a, &b| grasps[b].score.partial_cmp(&grasps[a].score).unwrap());
    let mut kept: Vec<GraspPose> = Vec::new();
    let rots: Vec<[[f64; 3]; 3]> = grasps.iter().map(|g| g.rotation()).collect();
    let mut kept_rots: Vec<[[f64; 3]; 3]> = Vec::new();
    for &i in &order {
        let g = &grasps[i];
        let suppressed = kept.iter().zip(&kept_rots).any(|(kg, kr)| {
            let dx = (g.x - kg.x) as f64;
            let dy = (g.y - kg.y) as f64;
            let dz = (g.z - kg.z) as f64;
            let close = (dx * dx + dy * dy + dz * dz).sqrt() <= dist_m as f64;
            close && rotation_distance(&rots[i], kr) <= angle_rad as f64
        });
        if !suppressed {
            kept.push(*g);
            kept_rots.push(rots[i]);
        }
    }
    kept
}
