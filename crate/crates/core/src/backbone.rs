//! Fully-convolutional backbone: a small strided encoder, a top-down feature
//! pyramid, and a per-pixel graspability heatmap head.
//!
//! Stage layout for an H×W input (H, W divisible by 32):
//!
//! ```text
//! input [1, 6, H, W]
//!   stem: 3×3 s2 conv + ReLU                        → ch0 × H/2
//!   stage i (i=0..4): 3×3 s2 conv + ReLU,
//!                     3×3 s1 conv + ReLU            → chi × H/(4·2^i)
//! features C2..C5 at strides 4, 8, 16, 32
//! pyramid: 1×1 laterals to Cf, top-down 2× bilinear upsample + add,
//!          3×3 fusion conv                          → fused [Cf, H/4, W/4]
//! head: 3×3 conv + ReLU, 1×1 conv, sigmoid          → heatmap [1, H/4, W/4]
//! ```
//!
//! No normalization layers anywhere; every parameter is a conv weight or
//! bias.  The backward pass is hand-chained through the same cached
//! activations the forward produced.

use crate::error::{Error, Result};
use crate::geometry::{project_point, CameraIntrinsics, GraspPose};
use crate::nn::{
    conv2d, conv2d_backward, kaiming_uniform, relu, relu_backward, sigmoid, sigmoid_backward,
    upsample_bilinear_2x, upsample_bilinear_2x_backward, LayerGrads, ParamSet,
};
use crate::tensor::{Elem, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Output stride of the fused map and heatmap relative to the input image.
pub const HEATMAP_STRIDE: usize = 4;

/// Gaussian radius (in heatmap cells) used when splatting training targets.
pub const GT_SIGMA: f64 = 0.7;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct EncoderConfig {
    /// Channel count per encoder stage, strictly increasing, 4 entries.
    pub stage_channels: Vec<usize>,
    /// Channel width of the pyramid and fused map.
    pub fpn_channels: usize,
    /// Input (height, width); both divisible by 32.
    pub input_hw: (usize, usize),
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            stage_channels: vec![16, 32, 64, 128],
            fpn_channels: 64,
            input_hw: (96, 96),
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stage_channels.len() != 4 {
            return Err(Error::Config(format!(
                "want 4 encoder stages, got {}",
                self.stage_channels.len()
            )));
        }
        if !self.stage_channels.windows(2).all(|w| w[0] < w[1]) || self.stage_channels[0] == 0 {
            return Err(Error::Config(format!(
                "stage channels must be strictly increasing and positive: {:?}",
                self.stage_channels
            )));
        }
        if self.fpn_channels == 0 {
            return Err(Error::Config("fpn_channels must be positive".into()));
        }
        let (h, w) = self.input_hw;
        if h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0 {
            return Err(Error::Config(format!(
                "input {h}x{w} must be a positive multiple of 32 per side"
            )));
        }
        Ok(())
    }

    pub fn heatmap_hw(&self) -> (usize, usize) {
        (
            self.input_hw.0 / HEATMAP_STRIDE,
            self.input_hw.1 / HEATMAP_STRIDE,
        )
    }
}

/// Graspability map at stride 4, values in (0, 1).
#[derive(Clone, Debug)]
pub struct LocationHeatmap {
    /// [1, H/4, W/4]
    pub values: Tensor,
    pub stride: usize,
}

/// The fused stride-4 feature map regions are sampled from.
#[derive(Clone, Debug)]
pub struct FeaturePyramid<E: Elem = f32> {
    /// [1, Cf, H/4, W/4]
    pub fused: Tensor<E>,
    pub stride: usize,
}

/// Initialize every backbone parameter with Kaiming-uniform weights and zero
/// biases, drawing from the RNG in a fixed order.
pub fn init_backbone_params<E: Elem>(
    cfg: &EncoderConfig,
    rng: &mut impl Rng,
    params: &mut ParamSet<E>,
) {
    let ch = &cfg.stage_channels;
    let cf = cfg.fpn_channels;
    let mut conv = |params: &mut ParamSet<E>, name: &str, cout: usize, cin: usize, k: usize| {
        params.insert(
            format!("{name}.w"),
            kaiming_uniform(rng, &[cout, cin, k, k], cin * k * k),
        );
        params.insert(format!("{name}.b"), Tensor::zeros(&[cout]));
    };
    conv(params, "enc.stem", ch[0], 6, 3);
    let mut prev = ch[0];
    for (i, &c) in ch.iter().enumerate() {
        conv(params, &format!("enc.s{i}.c0"), c, prev, 3);
        conv(params, &format!("enc.s{i}.c1"), c, c, 3);
        prev = c;
    }
    for (i, &c) in ch.iter().enumerate() {
        conv(params, &format!("fpn.lat{i}"), cf, c, 1);
    }
    conv(params, "fpn.smooth", cf, cf, 3);
    conv(params, "head.c0", cf, cf, 3);
    conv(params, "head.c1", 1, cf, 1);
}

/// Everything the forward pass computed, kept for the backward pass.
pub struct BackboneActs<E: Elem = f32> {
    pub input: Tensor<E>,
    stem_pre: Tensor<E>,
    stem_post: Tensor<E>,
    /// per stage: (c0 pre-relu, c0 post, c1 pre-relu, c1 post)
    stages: Vec<StageActs<E>>,
    /// P maps after top-down addition (index 0 = stride-4 level)
    pyramids: Vec<Tensor<E>>,
    /// final fused map (fusion conv output, or the lateral itself without FPN)
    pub fused: Tensor<E>,
    head_pre: Tensor<E>,
    head_post: Tensor<E>,
    pub head_logits: Tensor<E>,
    /// post-sigmoid heatmap values
    pub heat: Tensor<E>,
    use_fpn: bool,
}

struct StageActs<E: Elem> {
    c0_pre: Tensor<E>,
    c0_post: Tensor<E>,
    c1_pre: Tensor<E>,
    c1_post: Tensor<E>,
}

impl<E: Elem> BackboneActs<E> {
    /// Post-relu encoder feature at `level` (0 = C2/stride 4 … 3 = C5).
    pub fn feature(&self, level: usize) -> &Tensor<E> {
        &self.stages[level].c1_post
    }

    /// Smallest |pre-activation| over every ReLU input in this pass: the
    /// margin a numerical probe has before flipping a unit on or off.
    pub fn min_relu_margin(&self) -> f64 {
        let mut m = f64::INFINITY;
        let mut scan = |t: &Tensor<E>| {
            for &v in t.data() {
                m = m.min(v.to_f64().abs());
            }
        };
        scan(&self.stem_pre);
        for st in &self.stages {
            scan(&st.c0_pre);
            scan(&st.c1_pre);
        }
        scan(&self.head_pre);
        m
    }
}

/// Run encoder, pyramid (optional), and heatmap head on one [1, 6, H, W]
/// input.  With `use_fpn` false the fused map is just the stride-4 lateral
/// projection — the single-scale ablation baseline.
pub fn backbone_forward<E: Elem>(
    p: &ParamSet<E>,
    cfg: &EncoderConfig,
    input: Tensor<E>,
    use_fpn: bool,
) -> Result<BackboneActs<E>> {
    cfg.validate()?;
    let (h, w) = (input.shape()[2], input.shape()[3]);
    if input.shape()[0] != 1 || input.shape()[1] != 6 {
        return Err(Error::ShapeMismatch(format!(
            "backbone wants [1, 6, H, W], got {:?}",
            input.shape()
        )));
    }
    if h % 32 != 0 || w % 32 != 0 {
        return Err(Error::Config(format!("input {h}x{w} not divisible by 32")));
    }

    let stem_pre = conv2d(&input, p.get("enc.stem.w"), p.get("enc.stem.b"), 2, 1)?;
    let stem_post = relu(&stem_pre);

    let mut stages = Vec::with_capacity(4);
    let mut cur = stem_post.clone();
    for i in 0..4 {
        let c0_pre = conv2d(
            &cur,
            p.get(&format!("enc.s{i}.c0.w")),
            p.get(&format!("enc.s{i}.c0.b")),
            2,
            1,
        )?;
        let c0_post = relu(&c0_pre);
        let c1_pre = conv2d(
            &c0_post,
            p.get(&format!("enc.s{i}.c1.w")),
            p.get(&format!("enc.s{i}.c1.b")),
            1,
            1,
        )?;
        let c1_post = relu(&c1_pre);
        cur = c1_post.clone();
        stages.push(StageActs {
            c0_pre,
            c0_post,
            c1_pre,
            c1_post,
        });
    }

    let (pyramids, fused) = if use_fpn {
        let mut laterals = Vec::with_capacity(4);
        for (i, st) in stages.iter().enumerate() {
            laterals.push(conv2d(
                &st.c1_post,
                p.get(&format!("fpn.lat{i}.w")),
                p.get(&format!("fpn.lat{i}.b")),
                1,
                0,
            )?);
        }
        // top-down: P3 = L3; P_i = L_i + up2(P_{i+1})
        let mut pyramids = vec![Tensor::zeros(&[1]); 4];
        pyramids[3] = laterals[3].clone();
        for i in (0..3).rev() {
            let mut pi = laterals[i].clone();
            let up = upsample_bilinear_2x(&pyramids[i + 1]);
            pi.add_scaled(&up, E::one());
            pyramids[i] = pi;
        }
        let fused = conv2d(
            &pyramids[0],
            p.get("fpn.smooth.w"),
            p.get("fpn.smooth.b"),
            1,
            1,
        )?;
        (pyramids, fused)
    } else {
        let fused = conv2d(
            &stages[0].c1_post,
            p.get("fpn.lat0.w"),
            p.get("fpn.lat0.b"),
            1,
            0,
        )?;
        (Vec::new(), fused)
    };

    let head_pre = conv2d(&fused, p.get("head.c0.w"), p.get("head.c0.b"), 1, 1)?;
    let head_post = relu(&head_pre);
    let head_logits = conv2d(&head_post, p.get("head.c1.w"), p.get("head.c1.b"), 1, 0)?;
    let heat = sigmoid(&head_logits);

    Ok(BackboneActs {
        input,
        stem_pre,
        stem_post,
        stages,
        pyramids,
        fused,
        head_pre,
        head_post,
        head_logits,
        heat,
        use_fpn,
    })
}

/// Backward through the whole backbone.
///
/// `d_heat` is the upstream gradient on the post-sigmoid heatmap;
/// `d_fused` (optional) is the gradient flowing back into the fused map from
/// downstream consumers (region sampling).  Returns gradients for every
/// parameter on the active path plus the gradient w.r.t. the network input.
pub fn backbone_backward<E: Elem>(
    p: &ParamSet<E>,
    acts: &BackboneActs<E>,
    d_heat: Option<&Tensor<E>>,
    d_fused: Option<&Tensor<E>>,
) -> LayerGrads<E> {
    let mut grads = LayerGrads::new(acts.input.shape());

    // head, in reverse
    let mut d_fused_total = Tensor::zeros(acts.fused.shape());
    if let Some(dh) = d_heat {
        let d_logits = sigmoid_backward(&acts.heat, dh);
        let (d_head_post, dw1, db1) =
            conv2d_backward(&acts.head_post, p.get("head.c1.w"), 1, 0, &d_logits);
        grads.add("head.c1.w", dw1);
        grads.add("head.c1.b", db1);
        let d_head_pre = relu_backward(&acts.head_pre, &d_head_post);
        let (d_fused_head, dw0, db0) =
            conv2d_backward(&acts.fused, p.get("head.c0.w"), 1, 1, &d_head_pre);
        grads.add("head.c0.w", dw0);
        grads.add("head.c0.b", db0);
        d_fused_total.add_scaled(&d_fused_head, E::one());
    }
    if let Some(df) = d_fused {
        d_fused_total.add_scaled(df, E::one());
    }

    // pyramid (or bare lateral), producing a gradient per encoder feature
    let mut d_feats = vec![None::<Tensor<E>>; 4];
    if acts.use_fpn {
        let (d_p0, dws, dbs) = conv2d_backward(
            &acts.pyramids[0],
            p.get("fpn.smooth.w"),
            1,
            1,
            &d_fused_total,
        );
        grads.add("fpn.smooth.w", dws);
        grads.add("fpn.smooth.b", dbs);

        let mut d_p = d_p0;
        for i in 0..4 {
            // d_p is the gradient on P_i; it feeds both the lateral and, via
            // the upsample, P_{i+1}.
            let (d_feat, dw, db) =
                conv2d_backward(acts.feature(i), p.get(&format!("fpn.lat{i}.w")), 1, 0, &d_p);
            grads.add(format!("fpn.lat{i}.w"), dw);
            grads.add(format!("fpn.lat{i}.b"), db);
            d_feats[i] = Some(d_feat);
            if i < 3 {
                d_p = upsample_bilinear_2x_backward(acts.pyramids[i + 1].shape(), &d_p);
            }
        }
    } else {
        let (d_feat, dw, db) =
            conv2d_backward(acts.feature(0), p.get("fpn.lat0.w"), 1, 0, &d_fused_total);
        grads.add("fpn.lat0.w", dw);
        grads.add("fpn.lat0.b", db);
        d_feats[0] = Some(d_feat);
    }

    // encoder stages, deepest first
    let mut d_chain: Option<Tensor<E>> = None;
    for i in (0..4).rev() {
        let st = &acts.stages[i];
        let mut d_out = match d_feats[i].take() {
            Some(d) => d,
            None => Tensor::zeros(st.c1_post.shape()),
        };
        if let Some(dc) = d_chain.take() {
            d_out.add_scaled(&dc, E::one());
        }
        let d_c1_pre = relu_backward(&st.c1_pre, &d_out);
        let (d_c0_post, dw1, db1) = conv2d_backward(
            &st.c0_post,
            p.get(&format!("enc.s{i}.c1.w")),
            1,
            1,
            &d_c1_pre,
        );
        grads.add(format!("enc.s{i}.c1.w"), dw1);
        grads.add(format!("enc.s{i}.c1.b"), db1);
        let d_c0_pre = relu_backward(&st.c0_pre, &d_c0_post);
        let below = if i == 0 {
            &acts.stem_post
        } else {
            acts.feature(i - 1)
        };
        let (d_below, dw0, db0) =
            conv2d_backward(below, p.get(&format!("enc.s{i}.c0.w")), 2, 1, &d_c0_pre);
        grads.add(format!("enc.s{i}.c0.w"), dw0);
        grads.add(format!("enc.s{i}.c0.b"), db0);
        d_chain = Some(d_below);
    }

    let d_stem_pre = relu_backward(&acts.stem_pre, &d_chain.unwrap());
    let (d_input, dw, db) = conv2d_backward(&acts.input, p.get("enc.stem.w"), 2, 1, &d_stem_pre);
    grads.add("enc.stem.w", dw);
    grads.add("enc.stem.b", db);
    grads.input = d_input;
    grads
}

/// Rasterize training targets for the heatmap: every grasp center is
/// projected into the stride-4 grid and splatted as a Gaussian (σ = 2 cells,
/// peak exactly 1 at the projected cell); overlapping splats keep the
/// per-cell maximum.  Labels behind the camera or projecting outside the grid
/// are skipped; the count of skipped labels is returned.
pub fn make_gt_heatmap(
    labels: &[GraspPose],
    intr: &CameraIntrinsics,
    cfg: &EncoderConfig,
) -> (Tensor, usize) {
    let (hh, ww) = cfg.heatmap_hw();
    let mut map = Tensor::zeros(&[1, hh, ww]);
    let mut skipped = 0usize;
    // splat window: 3σ in cells
    let radius = (3.0 * GT_SIGMA).ceil() as isize;
    for g in labels {
        if g.z <= 0.0 {
            skipped += 1;
            continue;
        }
        let Ok((u, v)) = project_point([g.x, g.y, g.z], intr) else {
            skipped += 1;
            continue;
        };
        // image pixel -> heatmap cell, half-pixel-center aligned
        let uh = (u as f64 + 0.5) / HEATMAP_STRIDE as f64 - 0.5;
        let vh = (v as f64 + 0.5) / HEATMAP_STRIDE as f64 - 0.5;
        let cu = uh.round() as isize;
        let cv = vh.round() as isize;
        if cu < 0 || cv < 0 || cu >= ww as isize || cv >= hh as isize {
            skipped += 1;
            continue;
        }
        for dv in -radius..=radius {
            let y = cv + dv;
            if y < 0 || y >= hh as isize {
                continue;
            }
            for du in -radius..=radius {
                let x = cu + du;
                if x < 0 || x >= ww as isize {
                    continue;
                }
                let d2 = (du * du + dv * dv) as f64;
                let val = (-d2 / (2.0 * GT_SIGMA * GT_SIGMA)).exp() as f32;
                let cell = &mut map.data_mut()[y as usize * ww + x as usize];
                if val > *cell {
                    *cell = val;
                }
            }
        }
    }
    (map, skipped)
}
