//! The assembled detector: configuration, parameter initialization,
//! inference with stage timings and test-time scale augmentation, and the
//! single-frame training step with its full hand-chained backward pass.

use crate::backbone::{
    backbone_backward, backbone_forward, init_backbone_params, make_gt_heatmap, BackboneActs,
    EncoderConfig, HEATMAP_STRIDE,
};
use crate::error::{Error, Result};
use crate::geometry::{pixel_to_point, positional_meshgrid, GraspPose, ImageFrame, JAW_WIDTH_MAX};
use crate::nn::{
    bce_loss, bce_loss_backward, kaiming_uniform, lecun_uniform, linear, linear_backward, relu,
    relu_backward, sigmoid, sigmoid_backward, smooth_l1_loss, smooth_l1_loss_backward, tanh,
    tanh_backward, LayerGrads, ParamSet, SgdOptimizer, SMOOTH_L1_BETA,
};
use crate::region::{
    attach_depths, farthest_point_sampling, propagate_region_features,
    propagate_region_features_backward, region_grid_coords, sample_region_size, select_candidates,
    CellScore, RegionCenter,
};
use crate::rotation::{
    decode_grasps, grasp_nms, init_rotation_params, make_gt_rotation, rotation_head_backward,
    rotation_head_forward, CELL_CHANNELS, HIDDEN, OFFSET_DEPTH_MAX_M,
};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::time::Instant;

/// Output channels of the single-cell regression head used when the anchor
/// grid is disabled: confidence plus θ, γ, β, width, Δu, Δv, Δdepth.
pub const DIRECT_CHANNELS: usize = 8;

/// Loss mix: heatmap BCE, anchor-cell confidence BCE, masked refinement.
pub const LOSS_W_HEATMAP: f64 = 1.0;
pub const LOSS_W_SCORE: f64 = 1.0;
pub const LOSS_W_REFINE: f64 = 1.0;

/// Minimum effective entry count when normalizing the masked regression
/// loss; frames with fewer matches contribute proportionally less instead of
/// concentrating the same loss mass on a few entries (see `head_losses`).
pub const REFINE_NORM_FLOOR: f64 = 64.0;

/// Training gradients are rescaled to at most this global L2 norm.
pub const GRAD_CLIP_NORM: f64 = 5.0;

/// Coupled L2 weight decay, applied with the gradient each step.  Keeps
/// pre-activations from drifting into the saturated tails.
pub const WEIGHT_DECAY: f64 = 1e-4;

// ─── configuration ─────────────────────────────────────────────────────────

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct PipelineConfig {
    /// Input resolution (height, width); frames must match exactly.
    pub input_hw: (usize, usize),
    pub stage_channels: Vec<usize>,
    pub fpn_channels: usize,
    /// Heatmap cells at or above this graspability become region candidates.
    pub heatmap_threshold: f32,
    pub max_candidates: usize,
    /// Regions kept by farthest-point sampling.
    pub regions: usize,
    /// Side length of the per-region feature grid.
    pub region_grid: usize,
    /// Region footprint in heatmap cells at the reference depth.
    pub base_region_size: f32,
    pub gamma_bins: usize,
    pub beta_bins: usize,
    /// Anchor-cell confidence needed to emit a grasp.
    pub score_threshold: f32,
    pub nms_distance_m: f32,
    pub nms_angle_deg: f32,
    pub max_width_m: f32,
    /// Sample region features from the shared fused map (one encoder pass).
    /// Off: re-encode a raw crop per region.
    pub region_propagation: bool,
    /// Fuse all pyramid levels into the shared map.  Off: stride-4 only.
    pub pyramid_fusion: bool,
    /// Predict rotations via the anchor grid.  Off: direct regression.
    pub anchor_rotation: bool,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            input_hw: (96, 96),
            stage_channels: vec![16, 32, 64, 128],
            fpn_channels: 64,
            heatmap_threshold: 0.3,
            max_candidates: 128,
            regions: 32,
            region_grid: 8,
            base_region_size: 12.0,
            gamma_bins: 6,
            beta_bins: 6,
            score_threshold: 0.3,
            nms_distance_m: 0.03,
            nms_angle_deg: 30.0,
            max_width_m: JAW_WIDTH_MAX,
            region_propagation: true,
            pyramid_fusion: true,
            anchor_rotation: true,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            stage_channels: self.stage_channels.clone(),
            fpn_channels: self.fpn_channels,
            input_hw: self.input_hw,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder().validate()?;
        if self.regions == 0 || self.region_grid == 0 {
            return Err(Error::Config("regions and region_grid must be >= 1".into()));
        }
        if self.gamma_bins == 0 || self.beta_bins == 0 {
            return Err(Error::Config("anchor bins must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.heatmap_threshold)
            || !(0.0..=1.0).contains(&self.score_threshold)
        {
            return Err(Error::Config("thresholds must lie in [0, 1]".into()));
        }
        if !(self.base_region_size > 0.0) || !(self.max_width_m > 0.0) {
            return Err(Error::Config("sizes must be positive".into()));
        }
        if !self.region_propagation {
            let win = HEATMAP_STRIDE * self.region_grid;
            if win % 32 != 0 {
                return Err(Error::Config(format!(
                    "per-region crops are {win}px wide, which the encoder cannot \
                     take; pick region_grid so stride*grid divides by 32"
                )));
            }
        }
        Ok(())
    }

    /// Stable identity of this configuration: SHA-256 over its JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    fn feat_dim(&self) -> usize {
        self.fpn_channels * self.region_grid * self.region_grid
    }
}

// ─── inference results ─────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct StageTimings {
    pub input_ms: f64,
    pub backbone_ms: f64,
    pub region_ms: f64,
    pub rotation_ms: f64,
    pub decode_ms: f64,
    pub nms_ms: f64,
    pub total_ms: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct InferDiagnostics {
    /// Full network invocations this frame: 1 with shared-map sampling,
    /// 1 + regions when each region re-encodes its own crop.
    pub encoder_calls: usize,
    pub candidates: usize,
    pub regions: usize,
    pub pre_nms: usize,
    pub depth_fallbacks: usize,
    pub timings: StageTimings,
}

#[derive(Clone, Debug)]
pub struct Detections {
    /// Final grasps, best first (post-suppression).
    pub grasps: Vec<GraspPose>,
    /// Post-sigmoid graspability map [1, Hm, Wm], for dumps and tests.
    pub heatmap: Tensor,
    pub centers: Vec<RegionCenter>,
    pub diag: InferDiagnostics,
}

#[derive(Clone, Debug)]
pub struct InferOptions {
    /// Region-footprint multipliers; detections from every scale are pooled
    /// before suppression.  `[1.0]` disables augmentation.
    pub tta_scales: Vec<f32>,
}

impl Default for InferOptions {
    fn default() -> Self {
        InferOptions {
            tta_scales: vec![1.0],
        }
    }
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct TrainLosses {
    pub heatmap: f64,
    pub rotation: f64,
    pub refine: f64,
    pub total: f64,
}

// ─── model ─────────────────────────────────────────────────────────────────

pub struct Model {
    pub cfg: PipelineConfig,
    pub params: ParamSet<f32>,
}

impl Model {
    /// Fresh parameters drawn from the config's seed.  Same config (seed
    /// included), same weights, bit for bit.
    pub fn init(cfg: PipelineConfig) -> Result<Model> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut params = ParamSet::new();
        init_backbone_params(&cfg.encoder(), &mut rng, &mut params);
        if cfg.anchor_rotation {
            init_rotation_params(
                cfg.feat_dim(),
                cfg.gamma_bins,
                cfg.beta_bins,
                &mut rng,
                &mut params,
            );
        } else {
            params.insert(
                "rot.fc1.w",
                kaiming_uniform(&mut rng, &[HIDDEN, cfg.feat_dim()], cfg.feat_dim()),
            );
            params.insert("rot.fc1.b", Tensor::zeros(&[HIDDEN]));
            params.insert(
                "rot.fc2.w",
                lecun_uniform(&mut rng, &[DIRECT_CHANNELS, HIDDEN], HIDDEN),
            );
            params.insert("rot.fc2.b", Tensor::zeros(&[DIRECT_CHANNELS]));
        }
        Ok(Model { cfg, params })
    }

    /// Wrap already-loaded parameters, verifying every tensor matches the
    /// shape the config implies — a mismatch means the weights were trained
    /// for a different resolution or architecture.
    pub fn from_params(cfg: PipelineConfig, params: ParamSet<f32>) -> Result<Model> {
        let reference = Model::init(cfg.clone())?;
        if params.len() != reference.params.len() {
            return Err(Error::Config(format!(
                "weights hold {} tensors, config implies {}",
                params.len(),
                reference.params.len()
            )));
        }
        for (name, expected) in reference.params.iter() {
            match params.try_get(name) {
                Some(t) if t.shape() == expected.shape() => {}
                Some(t) => {
                    return Err(Error::Config(format!(
                        "weight {name:?} has shape {:?}, config implies {:?}",
                        t.shape(),
                        expected.shape()
                    )));
                }
                None => {
                    return Err(Error::Config(format!(
                        "weights are missing parameter {name:?}"
                    )));
                }
            }
        }
        Ok(Model { cfg, params })
    }

    /// RGB + depth + positional channels as the [1, 6, H, W] network input.
    pub fn assemble_input(&self, frame: &ImageFrame) -> Result<Tensor> {
        let (h, w) = self.cfg.input_hw;
        if (frame.intrinsics.height, frame.intrinsics.width) != (h, w) {
            return Err(Error::Config(format!(
                "frame is {}x{}, model expects {h}x{w}",
                frame.intrinsics.height, frame.intrinsics.width
            )));
        }
        let hw = h * w;
        let mut data = vec![0.0f32; 6 * hw];
        data[..3 * hw].copy_from_slice(frame.rgb.data());
        for (dst, &mm) in data[3 * hw..4 * hw].iter_mut().zip(frame.depth_mm.data()) {
            *dst = mm / 1000.0;
        }
        let pos = positional_meshgrid(&frame.intrinsics);
        data[4 * hw..].copy_from_slice(pos.data());
        Ok(Tensor::new(&[1, 6, h, w], data))
    }

    fn heat_as_map(acts: &BackboneActs<f32>) -> Tensor {
        let (hh, ww) = (acts.heat.shape()[2], acts.heat.shape()[3]);
        acts.heat.clone().reshape(&[1, hh, ww])
    }

    // ── region feature extraction ──────────────────────────────────────

    /// Zero-padded raw-input window, `win` pixels square, centered on a
    /// heatmap cell.
    fn crop_input(input: &Tensor, center: &RegionCenter, win: usize) -> Tensor {
        let (h, w) = (input.shape()[2], input.shape()[3]);
        let px = ((center.u as f32 + 0.5) * HEATMAP_STRIDE as f32 - 0.5).round() as isize;
        let py = ((center.v as f32 + 0.5) * HEATMAP_STRIDE as f32 - 0.5).round() as isize;
        let x0 = px - win as isize / 2;
        let y0 = py - win as isize / 2;
        let mut out = Tensor::zeros(&[1, 6, win, win]);
        for c in 0..6 {
            for yy in 0..win {
                let sy = y0 + yy as isize;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for xx in 0..win {
                    let sx = x0 + xx as isize;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    out.data_mut()[(c * win + yy) * win + xx] =
                        input.data()[(c * h + sy as usize) * w + sx as usize];
                }
            }
        }
        out
    }

    fn crop_encoder_cfg(&self, win: usize) -> EncoderConfig {
        EncoderConfig {
            stage_channels: self.cfg.stage_channels.clone(),
            fpn_channels: self.cfg.fpn_channels,
            input_hw: (win, win),
        }
    }

    /// Per-region features via one shared-map sampling pass.  Returns the
    /// features and the sampling coordinates (needed for backward).
    fn sampled_features(
        &self,
        acts: &BackboneActs<f32>,
        centers: &[RegionCenter],
        span_cells: f32,
    ) -> Result<(Tensor, Tensor)> {
        let g = self.cfg.region_grid;
        let (hh, ww) = (acts.fused.shape()[2], acts.fused.shape()[3]);
        let coords = region_grid_coords(centers, g, span_cells, (hh, ww));
        let feats = propagate_region_features(&acts.fused, &coords, centers.len(), g)?;
        Ok((feats, coords))
    }

    /// Per-region features by re-encoding a raw crop each (the ablation
    /// path).  Returns the features and each crop's activations.
    fn cropped_features(
        &self,
        input: &Tensor,
        centers: &[RegionCenter],
    ) -> Result<(Tensor, Vec<(Tensor, BackboneActs<f32>)>)> {
        let g = self.cfg.region_grid;
        let win = HEATMAP_STRIDE * g;
        let crop_cfg = self.crop_encoder_cfg(win);
        let c = self.cfg.fpn_channels;
        let mut feats = Tensor::zeros(&[centers.len(), c, g, g]);
        let mut crops = Vec::with_capacity(centers.len());
        for (r, center) in centers.iter().enumerate() {
            let crop = Self::crop_input(input, center, win);
            let acts = backbone_forward(
                &self.params,
                &crop_cfg,
                crop.clone(),
                self.cfg.pyramid_fusion,
            )?;
            let per = c * g * g;
            feats.data_mut()[r * per..(r + 1) * per].copy_from_slice(acts.fused.data());
            crops.push((crop, acts));
        }
        Ok((feats, crops))
    }

    // ── rotation heads ─────────────────────────────────────────────────

    fn direct_head_forward(&self, feats: &Tensor) -> Result<DirectActs> {
        let k = feats.shape()[0];
        let d: usize = feats.shape()[1..].iter().product();
        let flat = feats.clone().reshape(&[k, d]);
        let fc1_pre = linear(
            &flat,
            self.params.get("rot.fc1.w"),
            self.params.get("rot.fc1.b"),
        )?;
        let fc1_post = relu(&fc1_pre);
        let raw = linear(
            &fc1_post,
            self.params.get("rot.fc2.w"),
            self.params.get("rot.fc2.b"),
        )?;
        let sig = sigmoid(&raw);
        let tnh = tanh(&raw);
        let mut out = Tensor::zeros(raw.shape());
        for j in 0..out.len() {
            out.data_mut()[j] = if j % DIRECT_CHANNELS == 0 {
                sig.data()[j]
            } else {
                tnh.data()[j]
            };
        }
        Ok(DirectActs {
            flat,
            fc1_pre,
            fc1_post,
            out,
            input_shape: feats.shape().to_vec(),
        })
    }

    fn direct_head_backward(&self, acts: &DirectActs, d_out: &Tensor) -> LayerGrads<f32> {
        let d_sig = sigmoid_backward(&acts.out, d_out);
        let d_tanh = tanh_backward(&acts.out, d_out);
        let mut d_raw = Tensor::zeros(acts.out.shape());
        for j in 0..d_raw.len() {
            d_raw.data_mut()[j] = if j % DIRECT_CHANNELS == 0 {
                d_sig.data()[j]
            } else {
                d_tanh.data()[j]
            };
        }
        let mut grads = LayerGrads::new(&acts.input_shape);
        let (d_fc1_post, dw2, db2) =
            linear_backward(&acts.fc1_post, self.params.get("rot.fc2.w"), &d_raw);
        grads.add("rot.fc2.w", dw2);
        grads.add("rot.fc2.b", db2);
        let d_fc1_pre = relu_backward(&acts.fc1_pre, &d_fc1_post);
        let (d_flat, dw1, db1) =
            linear_backward(&acts.flat, self.params.get("rot.fc1.w"), &d_fc1_pre);
        grads.add("rot.fc1.w", dw1);
        grads.add("rot.fc1.b", db1);
        grads.input = d_flat.reshape(&acts.input_shape);
        grads
    }

    fn decode_direct(
        &self,
        out: &Tensor,
        centers: &[RegionCenter],
        intr: &crate::geometry::CameraIntrinsics,
    ) -> (Vec<GraspPose>, usize) {
        let half_pi = std::f32::consts::FRAC_PI_2;
        let mut grasps = Vec::new();
        let mut fallbacks = 0usize;
        for (r, c) in centers.iter().enumerate() {
            let o = &out.data()[r * DIRECT_CHANNELS..(r + 1) * DIRECT_CHANNELS];
            if o[0] < self.cfg.score_threshold {
                continue;
            }
            let uh = c.u as f32 + o[5];
            let vh = c.v as f32 + o[6];
            let u_img = (uh + 0.5) * HEATMAP_STRIDE as f32 - 0.5;
            let v_img = (vh + 0.5) * HEATMAP_STRIDE as f32 - 0.5;
            let mut z = c.depth_m + o[7] * OFFSET_DEPTH_MAX_M;
            if !(z > 0.0) {
                z = c.depth_m;
                fallbacks += 1;
            }
            let Ok(pos) = pixel_to_point(u_img, v_img, z * 1000.0, intr) else {
                fallbacks += 1;
                continue;
            };
            grasps.push(GraspPose {
                x: pos[0],
                y: pos[1],
                z: pos[2],
                theta: o[1] * half_pi,
                gamma: o[2] * half_pi,
                beta: o[3] * half_pi,
                width: (o[4] + 1.0) / 2.0 * self.cfg.max_width_m,
                score: o[0] * c.graspability,
            });
        }
        grasps.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
        (grasps, fallbacks)
    }

    // ── inference ──────────────────────────────────────────────────────

    pub fn infer(&self, frame: &ImageFrame, opts: &InferOptions) -> Result<Detections> {
        if opts.tta_scales.is_empty() {
            return Err(Error::Config("at least one augmentation scale".into()));
        }
        if !self.cfg.region_propagation && opts.tta_scales.as_slice() != [1.0] {
            return Err(Error::Config(
                "scale augmentation needs shared-map region sampling".into(),
            ));
        }
        let wall = Instant::now();
        let mut diag = InferDiagnostics::default();

        let t = Instant::now();
        let input = self.assemble_input(frame)?;
        diag.timings.input_ms = t.elapsed().as_secs_f64() * 1e3;

        let t = Instant::now();
        let acts = backbone_forward(
            &self.params,
            &self.cfg.encoder(),
            input.clone(),
            self.cfg.pyramid_fusion,
        )?;
        diag.encoder_calls = 1;
        diag.timings.backbone_ms = t.elapsed().as_secs_f64() * 1e3;

        let t = Instant::now();
        let heat = Self::heat_as_map(&acts);
        let cells = select_candidates(&heat, self.cfg.heatmap_threshold, self.cfg.max_candidates);
        diag.candidates = cells.len();
        let picks = farthest_point_sampling(&cells, self.cfg.regions.min(cells.len()));
        let chosen: Vec<CellScore> = picks.iter().map(|&i| cells[i]).collect();
        let centers = attach_depths(&chosen, &frame.depth_mm, HEATMAP_STRIDE);
        diag.regions = centers.len();
        diag.timings.region_ms = t.elapsed().as_secs_f64() * 1e3;

        let mut pooled: Vec<GraspPose> = Vec::new();
        for &scale in &opts.tta_scales {
            let t = Instant::now();
            let feats = if self.cfg.region_propagation {
                let span = self.cfg.base_region_size * scale;
                let (feats, _coords) = self.sampled_features(&acts, &centers, span)?;
                feats
            } else {
                let (feats, crops) = self.cropped_features(&input, &centers)?;
                diag.encoder_calls += crops.len();
                feats
            };
            diag.timings.region_ms += t.elapsed().as_secs_f64() * 1e3;

            let t = Instant::now();
            let (decoded, fallbacks) = if self.cfg.anchor_rotation {
                let rot = rotation_head_forward(&self.params, &feats)?;
                diag.timings.rotation_ms += t.elapsed().as_secs_f64() * 1e3;
                let t = Instant::now();
                let (decoded, stats) = decode_grasps(
                    &rot.out,
                    &centers,
                    &frame.intrinsics,
                    self.cfg.gamma_bins,
                    self.cfg.beta_bins,
                    self.cfg.score_threshold,
                    self.cfg.max_width_m,
                    HEATMAP_STRIDE,
                );
                diag.timings.decode_ms += t.elapsed().as_secs_f64() * 1e3;
                (decoded, stats.depth_fallbacks)
            } else {
                let rot = self.direct_head_forward(&feats)?;
                diag.timings.rotation_ms += t.elapsed().as_secs_f64() * 1e3;
                let t = Instant::now();
                let r = self.decode_direct(&rot.out, &centers, &frame.intrinsics);
                diag.timings.decode_ms += t.elapsed().as_secs_f64() * 1e3;
                r
            };
            diag.depth_fallbacks += fallbacks;
            pooled.extend(decoded);
        }
        diag.pre_nms = pooled.len();

        let t = Instant::now();
        pooled.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
        let grasps = grasp_nms(
            &pooled,
            self.cfg.nms_distance_m,
            self.cfg.nms_angle_deg.to_radians(),
        );
        diag.timings.nms_ms = t.elapsed().as_secs_f64() * 1e3;
        diag.timings.total_ms = wall.elapsed().as_secs_f64() * 1e3;

        Ok(Detections {
            grasps,
            heatmap: heat,
            centers,
            diag,
        })
    }

    // ── training ───────────────────────────────────────────────────────

    /// One SGD step on one labeled frame.  Region centers come from the
    /// ground-truth heatmap so the rotation head sees meaningful regions
    /// from the first epoch.
    pub fn train_step(
        &mut self,
        frame: &ImageFrame,
        labels: &[GraspPose],
        opt: &mut SgdOptimizer<f32>,
        lr: f64,
        momentum: f64,
        rng: &mut impl Rng,
    ) -> Result<TrainLosses> {
        let input = self.assemble_input(frame)?;
        let enc_cfg = self.cfg.encoder();
        let acts = backbone_forward(
            &self.params,
            &enc_cfg,
            input.clone(),
            self.cfg.pyramid_fusion,
        )?;
        let heat = Self::heat_as_map(&acts);

        let (gt_heat, _skipped) = make_gt_heatmap(labels, &frame.intrinsics, &enc_cfg);
        let cells = select_candidates(
            &gt_heat,
            self.cfg.heatmap_threshold,
            self.cfg.max_candidates,
        );
        let picks = farthest_point_sampling(&cells, self.cfg.regions.min(cells.len()));
        let chosen: Vec<CellScore> = picks.iter().map(|&i| cells[i]).collect();
        let centers = attach_depths(&chosen, &frame.depth_mm, HEATMAP_STRIDE);
        let span = sample_region_size(rng, self.cfg.base_region_size, true);

        enum FeatTrace {
            Sampled(Tensor),
            Cropped(Vec<(Tensor, BackboneActs<f32>)>),
        }
        let (feats, trace) = if self.cfg.region_propagation {
            let (feats, coords) = self.sampled_features(&acts, &centers, span)?;
            (feats, FeatTrace::Sampled(coords))
        } else {
            let (feats, crops) = self.cropped_features(&input, &centers)?;
            (feats, FeatTrace::Cropped(crops))
        };

        // forward heads + losses + output gradient
        let loss_heat = bce_loss(&heat, &gt_heat) as f64;
        let d_heat_flat = {
            let mut d = bce_loss_backward(&heat, &gt_heat);
            for v in d.data_mut() {
                *v *= LOSS_W_HEATMAP as f32;
            }
            d
        };
        let (hh, ww) = (heat.shape()[1], heat.shape()[2]);
        let d_heat = d_heat_flat.reshape(&[1, 1, hh, ww]);

        let (loss_score, loss_refine, d_feats) = if self.cfg.anchor_rotation {
            let rot = rotation_head_forward(&self.params, &feats)?;
            let targets = make_gt_rotation(
                labels,
                &centers,
                &frame.intrinsics,
                self.cfg.gamma_bins,
                self.cfg.beta_bins,
                span,
                HEATMAP_STRIDE,
                self.cfg.max_width_m,
            );
            let (ls, lr_, d_out) = head_losses(
                &rot.out,
                &targets.scores,
                &targets.regress,
                &targets.mask,
                CELL_CHANNELS,
            );
            let grads_rot = rotation_head_backward(&self.params, &rot, &d_out);
            (ls, lr_, grads_rot)
        } else {
            let rot = self.direct_head_forward(&feats)?;
            let (scores, regress, mask) = direct_targets(
                labels,
                &centers,
                &frame.intrinsics,
                span,
                self.cfg.max_width_m,
            );
            let (ls, lr_, d_out) = head_losses(&rot.out, &scores, &regress, &mask, DIRECT_CHANNELS);
            let grads_rot = self.direct_head_backward(&rot, &d_out);
            (ls, lr_, grads_rot)
        };

        let total =
            LOSS_W_HEATMAP * loss_heat + LOSS_W_SCORE * loss_score + LOSS_W_REFINE * loss_refine;
        if !total.is_finite() {
            return Err(Error::NonFinite(format!("training loss {total}")));
        }

        // backward into the backbone
        let mut grads = match trace {
            FeatTrace::Sampled(coords) => {
                let d_fused =
                    propagate_region_features_backward(&acts.fused, &coords, &d_feats.input);
                let mut g = backbone_backward(&self.params, &acts, Some(&d_heat), Some(&d_fused));
                g.merge(d_feats);
                g
            }
            FeatTrace::Cropped(crops) => {
                let mut g = backbone_backward(&self.params, &acts, Some(&d_heat), None);
                let gdim = self.cfg.region_grid;
                let c = self.cfg.fpn_channels;
                let per = c * gdim * gdim;
                for (r, (_crop, crop_acts)) in crops.iter().enumerate() {
                    let d_fused = Tensor::new(
                        &[1, c, gdim, gdim],
                        d_feats.input.data()[r * per..(r + 1) * per].to_vec(),
                    );
                    g.merge(backbone_backward(
                        &self.params,
                        crop_acts,
                        None,
                        Some(&d_fused),
                    ));
                }
                g.merge(d_feats);
                g
            }
        };
        // ensure the optimizer only sees parameters that exist (the no-FPN
        // path legitimately produces no gradient for pyramid parameters)
        grads.params.retain(|name, _| self.params.contains(name));

        for (name, g) in grads.params.iter_mut() {
            g.add_scaled(self.params.get(name), WEIGHT_DECAY as f32);
        }

        // Clip the global gradient norm.  Early steps can spike (the dense
        // heatmap term dominates before it settles); an unclipped spike
        // saturates the head's tanh/sigmoid outputs, whose gradients then
        // vanish for good.
        let norm = grads
            .params
            .values()
            .flat_map(|g| g.data())
            .map(|&v| (v as f64) * (v as f64))
            .sum::<f64>()
            .sqrt();
        if norm > GRAD_CLIP_NORM {
            let s = (GRAD_CLIP_NORM / norm) as f32;
            for g in grads.params.values_mut() {
                g.scale(s);
            }
        }

        opt.step(&mut self.params, &grads, lr, momentum)?;
        Ok(TrainLosses {
            heatmap: loss_heat,
            rotation: loss_score,
            refine: loss_refine,
            total,
        })
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        crate::weights::save_weights(path, &self.params)
    }

    pub fn load(cfg: PipelineConfig, path: impl AsRef<std::path::Path>) -> Result<Model> {
        let params = crate::weights::load_weights(path)?;
        Model::from_params(cfg, params)
    }
}

struct DirectActs {
    flat: Tensor,
    fc1_pre: Tensor,
    fc1_post: Tensor,
    out: Tensor,
    input_shape: Vec<usize>,
}

/// Confidence BCE + masked smooth-L1 over a head output laid out as
/// per-cell blocks of `channels` values (confidence first, then
/// regressions).  Returns both losses and the gradient w.r.t. the output.
///
/// The regression term is normalized by max(matched entries,
/// [`REFINE_NORM_FLOOR`]) rather than a bare mean: single-sample updates on a
/// frame with a handful of matches would otherwise concentrate the whole loss
/// on those few entries, and the resulting gradient spikes (amplified by
/// momentum) drive the bounded outputs into saturation they cannot leave.
fn head_losses(
    out: &Tensor,
    scores: &Tensor,
    regress: &Tensor,
    mask: &Tensor,
    channels: usize,
) -> (f64, f64, Tensor) {
    let k = out.shape()[0];
    let cells = out.shape()[1] / channels;
    let reg_ch = channels - 1;
    debug_assert_eq!(scores.len(), k * cells);
    debug_assert_eq!(regress.len(), k * cells * reg_ch);

    // gather confidence entries
    let mut conf = Tensor::zeros(&[k * cells]);
    for i in 0..k * cells {
        conf.data_mut()[i] = out.data()[i * channels];
    }
    let score_flat = scores.clone().reshape(&[k * cells]);
    let loss_score = bce_loss(&conf, &score_flat) as f64;
    let d_conf = bce_loss_backward(&conf, &score_flat);

    // gather masked regression entries
    let mut pred_m = Vec::new();
    let mut tgt_m = Vec::new();
    let mut pos_m = Vec::new();
    for i in 0..k * cells {
        for ch in 0..reg_ch {
            let mi = i * reg_ch + ch;
            if mask.data()[mi] > 0.0 {
                pos_m.push(i * channels + 1 + ch);
                pred_m.push(out.data()[i * channels + 1 + ch]);
                tgt_m.push(regress.data()[mi]);
            }
        }
    }
    let (loss_refine, d_reg) = if pred_m.is_empty() {
        (0.0, None)
    } else {
        let m = pred_m.len();
        let scale = (m as f64 / (m as f64).max(REFINE_NORM_FLOOR)) as f32;
        let p = Tensor::new(&[m], pred_m);
        let t = Tensor::new(&[m], tgt_m);
        let loss = smooth_l1_loss(&p, &t, SMOOTH_L1_BETA) as f64 * scale as f64;
        let mut d = smooth_l1_loss_backward(&p, &t, SMOOTH_L1_BETA);
        for v in d.data_mut() {
            *v *= scale;
        }
        (loss, Some(d))
    };

    // scatter into the full output gradient
    let mut d_out = Tensor::zeros(out.shape());
    for i in 0..k * cells {
        d_out.data_mut()[i * channels] = d_conf.data()[i] * LOSS_W_SCORE as f32;
    }
    if let Some(d_reg) = d_reg {
        for (slot, &pos) in pos_m.iter().enumerate() {
            d_out.data_mut()[pos] = d_reg.data()[slot] * LOSS_W_REFINE as f32;
        }
    }
    (loss_score, loss_refine, d_out)
}

/// Training targets for the direct-regression head: each region takes the
/// label nearest its center among those whose projection falls inside the
/// region's depth-scaled footprint.
fn direct_targets(
    labels: &[GraspPose],
    centers: &[RegionCenter],
    intr: &crate::geometry::CameraIntrinsics,
    span_cells: f32,
    w_max: f32,
) -> (Tensor, Tensor, Tensor) {
    use crate::geometry::project_point;
    use crate::region::REGION_REF_DEPTH_M;
    let half_pi = std::f64::consts::FRAC_PI_2;
    let k = centers.len();
    let reg_ch = DIRECT_CHANNELS - 1;
    let mut scores = Tensor::zeros(&[k, 1]);
    let mut regress = Tensor::zeros(&[k, reg_ch]);
    let mut mask = Tensor::zeros(&[k, reg_ch]);
    let mut best = vec![f64::INFINITY; k];
    for label in labels {
        let Ok((u_img, v_img)) = project_point([label.x, label.y, label.z], intr) else {
            continue;
        };
        let uh = (u_img as f64 + 0.5) / HEATMAP_STRIDE as f64 - 0.5;
        let vh = (v_img as f64 + 0.5) / HEATMAP_STRIDE as f64 - 0.5;
        for (r, c) in centers.iter().enumerate() {
            let radius = (span_cells as f64 / 2.0 * (REGION_REF_DEPTH_M / c.depth_m) as f64)
                .min(crate::rotation::MATCH_REACH_CELLS);
            let du = uh - c.u as f64;
            let dv = vh - c.v as f64;
            let d2 = du * du + dv * dv;
            if d2 > radius * radius || d2 >= best[r] {
                continue;
            }
            best[r] = d2;
            scores.data_mut()[r] = 1.0;
            let clamp1 = |x: f64| x.clamp(-1.0, 1.0) as f32;
            let t = &mut regress.data_mut()[r * reg_ch..(r + 1) * reg_ch];
            t[0] = clamp1(label.theta as f64 / half_pi);
            t[1] = clamp1(label.gamma as f64 / half_pi);
            t[2] = clamp1(label.beta as f64 / half_pi);
            t[3] = clamp1(2.0 * (label.width / w_max) as f64 - 1.0);
            t[4] = clamp1(du);
            t[5] = clamp1(dv);
            t[6] = clamp1((label.z - c.depth_m) as f64 / OFFSET_DEPTH_MAX_M as f64);
            for m in &mut mask.data_mut()[r * reg_ch..(r + 1) * reg_ch] {
                *m = 1.0;
            }
        }
    }
    (scores, regress, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{default_intrinsics, gen_scene, label_grasps, render_frame};

    fn tiny_cfg() -> PipelineConfig {
        PipelineConfig {
            stage_channels: vec![4, 8, 12, 16],
            fpn_channels: 8,
            regions: 6,
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn init_is_deterministic_and_config_hash_stable() {
        let cfg = tiny_cfg();
        let a = Model::init(cfg.clone()).unwrap();
        let b = Model::init(cfg.clone()).unwrap();
        assert_eq!(a.params.len(), b.params.len());
        for ((na, ta), (nb, tb)) in a.params.iter().zip(b.params.iter()) {
            assert_eq!(na, nb);
            assert_eq!(ta.data(), tb.data());
        }
        assert_eq!(cfg.hash(), cfg.hash());
        let mut other = cfg.clone();
        other.seed = 1;
        assert_ne!(cfg.hash(), other.hash());
    }

    #[test]
    fn infer_produces_detections_and_one_encoder_call() {
        let cfg = tiny_cfg();
        let model = Model::init(cfg).unwrap();
        let scene = gen_scene(3, 3);
        let frame = render_frame(&scene, &default_intrinsics()).unwrap();
        let det = model.infer(&frame, &InferOptions::default()).unwrap();
        assert_eq!(det.diag.encoder_calls, 1);
        assert!(det.diag.regions >= 1);
        assert_eq!(det.heatmap.shape(), &[1, 24, 24]);
        assert!(det.diag.timings.total_ms > 0.0);
        for g in &det.grasps {
            assert!(g.width <= JAW_WIDTH_MAX + 1e-6);
            assert!(g.score.is_finite());
        }
    }

    #[test]
    fn crop_ablation_reencodes_per_region() {
        let mut cfg = tiny_cfg();
        cfg.region_propagation = false;
        let model = Model::init(cfg).unwrap();
        let scene = gen_scene(3, 3);
        let frame = render_frame(&scene, &default_intrinsics()).unwrap();
        let det = model.infer(&frame, &InferOptions::default()).unwrap();
        assert_eq!(det.diag.encoder_calls, det.diag.regions + 1);
        // scale augmentation is incompatible with fixed crops
        let err = model
            .infer(
                &frame,
                &InferOptions {
                    tta_scales: vec![0.8, 1.0],
                },
            )
            .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn train_step_reduces_loss_on_one_frame() {
        let cfg = tiny_cfg();
        let mut model = Model::init(cfg).unwrap();
        let scene = gen_scene(11, 2);
        let frame = render_frame(&scene, &default_intrinsics()).unwrap();
        let labels = label_grasps(&scene);
        assert!(!labels.is_empty());
        let mut opt = SgdOptimizer::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let first = model
            .train_step(&frame, &labels, &mut opt, 0.05, 0.9, &mut rng)
            .unwrap();
        assert!(first.total.is_finite());
        let mut last = first;
        for _ in 0..30 {
            last = model
                .train_step(&frame, &labels, &mut opt, 0.05, 0.9, &mut rng)
                .unwrap();
        }
        assert!(
            last.total < 0.6 * first.total,
            "loss {} -> {}",
            first.total,
            last.total
        );
    }

    #[test]
    fn all_ablation_paths_train_without_breaking() {
        for (rfp, glh, rrh) in [
            (false, true, true),
            (true, false, true),
            (true, true, false),
        ] {
            let mut cfg = tiny_cfg();
            cfg.region_propagation = rfp;
            cfg.pyramid_fusion = glh;
            cfg.anchor_rotation = rrh;
            cfg.regions = 4;
            let mut model = Model::init(cfg).unwrap();
            let scene = gen_scene(21, 2);
            let frame = render_frame(&scene, &default_intrinsics()).unwrap();
            let labels = label_grasps(&scene);
            let mut opt = SgdOptimizer::new();
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let first = model
                .train_step(&frame, &labels, &mut opt, 0.02, 0.9, &mut rng)
                .unwrap();
            let mut last = first;
            for _ in 0..10 {
                last = model
                    .train_step(&frame, &labels, &mut opt, 0.02, 0.9, &mut rng)
                    .unwrap();
            }
            assert!(
                last.total < first.total,
                "rfp={rfp} glh={glh} rrh={rrh}: {} -> {}",
                first.total,
                last.total
            );
            // inference also runs on every ablation
            let det = model.infer(&frame, &InferOptions::default()).unwrap();
            assert!(det.diag.regions >= 1);
        }
    }

    #[test]
    fn wrong_resolution_is_a_config_error() {
        let model = Model::init(tiny_cfg()).unwrap();
        let intr = crate::geometry::CameraIntrinsics::new(70.0, 70.0, 32.0, 32.0, 64, 64).unwrap();
        let scene = gen_scene(0, 1);
        let frame = render_frame(&scene, &intr).unwrap();
        let err = model.infer(&frame, &InferOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn weights_round_trip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.e3gw");
        let cfg = tiny_cfg();
        let model = Model::init(cfg.clone()).unwrap();
        model.save(&path).unwrap();
        let back = Model::load(cfg.clone(), &path).unwrap();
        for ((na, ta), (nb, tb)) in model.params.iter().zip(back.params.iter()) {
            assert_eq!(na, nb);
            assert_eq!(ta.data(), tb.data());
        }
        // a config with different channels must refuse these weights
        let mut other = cfg;
        other.fpn_channels = 16;
        assert!(matches!(Model::load(other, &path), Err(Error::Config(_))));
    }

    #[test]
    fn tta_pools_more_raw_detections() {
        let cfg = tiny_cfg();
        let model = Model::init(cfg).unwrap();
        let scene = gen_scene(3, 3);
        let frame = render_frame(&scene, &default_intrinsics()).unwrap();
        let single = model.infer(&frame, &InferOptions::default()).unwrap();
        let multi = model
            .infer(
                &frame,
                &InferOptions {
                    tta_scales: vec![0.8, 1.0, 1.2],
                },
            )
            .unwrap();
        assert!(multi.diag.pre_nms >= single.diag.pre_nms);
        assert_eq!(
            multi.diag.encoder_calls, 1,
            "augmentation reuses the encoding"
        );
    }
}
