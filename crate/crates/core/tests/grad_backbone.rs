//! End-to-end numerical gradient check of the backbone: every parameter
//! entry of a small model is verified against central finite differences in
//! f64, through both heads the network exposes (heatmap and fused features).

mod common;

use common::{dot, projection};
use heatgrasp::backbone::{
    backbone_backward, backbone_forward, init_backbone_params, EncoderConfig,
};
use heatgrasp::nn::ParamSet;
use heatgrasp::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Step chosen so a probe never flips a ReLU unit: the test only runs on a
// seed whose smallest |pre-activation| clears KINK_MARGIN, and a ±1e-5
// parameter nudge moves any pre-activation by far less than that.  Biases
// are shifted slightly positive after init so no conv window is exactly
// dead (pre-activation identically zero — a kink sitting right on the
// evaluation point).
const STEP: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;
const ABS_FLOOR: f64 = 1e-6;
const KINK_MARGIN: f64 = 1e-3;
const BIAS_SHIFT: f64 = 0.2;

fn tiny_cfg() -> EncoderConfig {
    EncoderConfig {
        stage_channels: vec![2, 3, 4, 5],
        fpn_channels: 4,
        input_hw: (32, 32),
    }
}

struct Setup {
    params: ParamSet<f64>,
    input: Tensor<f64>,
    proj_heat: Vec<f64>,
    proj_fused: Vec<f64>,
}

/// Scalar objective: random projections of the two network outputs, so every
/// parameter influences the value through realistic paths.
fn objective(s: &Setup, cfg: &EncoderConfig) -> f64 {
    let acts = backbone_forward(&s.params, cfg, s.input.clone(), true).unwrap();
    let heat: Vec<f64> = acts.heat.data().to_vec();
    let fused: Vec<f64> = acts.fused.data().to_vec();
    dot(&heat, &s.proj_heat) + dot(&fused, &s.proj_fused)
}

fn build_setup(cfg: &EncoderConfig, use_fpn: bool) -> Setup {
    // Find a seed whose forward pass keeps every ReLU input away from zero;
    // finite differences would be meaningless across a kink.
    for seed in 0..200 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::<f64>::new();
        init_backbone_params(cfg, &mut rng, &mut params);
        for (name, t) in params.iter_mut() {
            if name.ends_with(".b") {
                for v in t.data_mut() {
                    *v += BIAS_SHIFT;
                }
            }
        }
        let n: usize = 6 * cfg.input_hw.0 * cfg.input_hw.1;
        let input = Tensor::new(
            &[1, 6, cfg.input_hw.0, cfg.input_hw.1],
            (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        );
        let acts = backbone_forward(&params, cfg, input.clone(), use_fpn).unwrap();
        if acts.min_relu_margin() < KINK_MARGIN {
            continue;
        }
        let proj_heat = projection(&mut rng, acts.heat.len());
        let proj_fused = projection(&mut rng, acts.fused.len());
        return Setup {
            params,
            input,
            proj_heat,
            proj_fused,
        };
    }
    panic!("no seed kept all ReLU inputs {KINK_MARGIN} away from zero");
}

fn check_entry(analytic: f64, numeric: f64, what: &str) {
    let abs = (analytic - numeric).abs();
    if abs <= ABS_FLOOR {
        return;
    }
    let rel = abs / analytic.abs().max(numeric.abs());
    assert!(
        rel <= REL_TOL,
        "{what}: analytic={analytic} numeric={numeric} rel={rel:.3e}"
    );
}

#[test]
fn backbone_gradients_match_finite_differences() {
    let cfg = tiny_cfg();
    let mut s = build_setup(&cfg, true);

    let acts = backbone_forward(&s.params, &cfg, s.input.clone(), true).unwrap();
    let d_heat = Tensor::new(acts.heat.shape(), s.proj_heat.clone());
    let d_fused = Tensor::new(acts.fused.shape(), s.proj_fused.clone());
    let grads = backbone_backward(&s.params, &acts, Some(&d_heat), Some(&d_fused));

    // Every parameter gets a gradient, and none of them is all-zero.
    let names: Vec<String> = s.params.iter().map(|(n, _)| n.clone()).collect();
    for name in &names {
        let g = grads.get(name);
        assert!(
            g.data().iter().any(|&v| v != 0.0),
            "{name}: gradient identically zero"
        );
    }
    assert_eq!(grads.params.len(), names.len());

    // Finite-difference every entry of every parameter tensor.
    for name in &names {
        let len = s.params.get(name).len();
        for idx in 0..len {
            let orig = s.params.get(name).data()[idx];
            s.params.get_mut(name).data_mut()[idx] = orig + STEP;
            let hi = objective(&s, &cfg);
            s.params.get_mut(name).data_mut()[idx] = orig - STEP;
            let lo = objective(&s, &cfg);
            s.params.get_mut(name).data_mut()[idx] = orig;
            let numeric = (hi - lo) / (2.0 * STEP);
            check_entry(
                grads.get(name).data()[idx],
                numeric,
                &format!("{name}[{idx}]"),
            );
        }
    }

    // Input gradient on a spread of entries.
    let n = s.input.len();
    for k in 0..64 {
        let idx = k * n / 64;
        let orig = s.input.data()[idx];
        s.input.data_mut()[idx] = orig + STEP;
        let hi = objective(&s, &cfg);
        s.input.data_mut()[idx] = orig - STEP;
        let lo = objective(&s, &cfg);
        s.input.data_mut()[idx] = orig;
        let numeric = (hi - lo) / (2.0 * STEP);
        check_entry(grads.input.data()[idx], numeric, &format!("input[{idx}]"));
    }
}

#[test]
fn single_scale_path_gradients_match() {
    // The pyramid-free variant routes the fused map through the stride-4
    // lateral only; check its parameter gradients the same way on a subset.
    let cfg = tiny_cfg();
    let mut s = build_setup(&cfg, false);

    let fwd = |s: &Setup| {
        let acts = backbone_forward(&s.params, &cfg, s.input.clone(), false).unwrap();
        let heat: Vec<f64> = acts.heat.data().to_vec();
        let fused: Vec<f64> = acts.fused.data().to_vec();
        // reuse prefixes of the projections; shapes differ from the FPN path
        dot(&heat, &s.proj_heat[..heat.len()]) + dot(&fused, &s.proj_fused[..fused.len()])
    };

    let acts = backbone_forward(&s.params, &cfg, s.input.clone(), false).unwrap();
    let d_heat = Tensor::new(acts.heat.shape(), s.proj_heat[..acts.heat.len()].to_vec());
    let d_fused = Tensor::new(
        acts.fused.shape(),
        s.proj_fused[..acts.fused.len()].to_vec(),
    );
    let grads = backbone_backward(&s.params, &acts, Some(&d_heat), Some(&d_fused));

    // Only the active path gets gradients: no smoothing conv, no deep laterals.
    assert!(!grads.params.contains_key("fpn.smooth.w"));
    assert!(!grads.params.contains_key("fpn.lat3.w"));

    for name in [
        "enc.stem.w",
        "enc.s3.c1.w",
        "fpn.lat0.w",
        "head.c0.w",
        "head.c1.b",
    ] {
        let len = s.params.get(name).len();
        for idx in (0..len).step_by(7) {
            let orig = s.params.get(name).data()[idx];
            s.params.get_mut(name).data_mut()[idx] = orig + STEP;
            let hi = fwd(&s);
            s.params.get_mut(name).data_mut()[idx] = orig - STEP;
            let lo = fwd(&s);
            s.params.get_mut(name).data_mut()[idx] = orig;
            let numeric = (hi - lo) / (2.0 * STEP);
            check_entry(
                grads.get(name).data()[idx],
                numeric,
                &format!("{name}[{idx}]"),
            );
        }
    }
}
