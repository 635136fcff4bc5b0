//! Suppression checked against a quaternion-based reference on random grasp
//! sets: same survivors, same order, every trial.

mod common;

use common::naive_nms;
use heatgrasp::geometry::GraspPose;
use heatgrasp::rotation::grasp_nms;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_grasps(rng: &mut impl Rng, n: usize) -> Vec<GraspPose> {
    (0..n)
        .map(|_| {
            let half_pi = std::f32::consts::FRAC_PI_2;
            GraspPose {
                // tight cluster so position suppression actually fires
                x: rng.gen_range(-0.06..0.06),
                y: rng.gen_range(-0.06..0.06),
                z: rng.gen_range(0.45..0.55),
                theta: rng.gen_range(-half_pi..half_pi),
                gamma: rng.gen_range(-half_pi..half_pi),
                beta: rng.gen_range(-half_pi..half_pi),
                width: rng.gen_range(0.01..0.085),
                score: rng.gen_range(0.0..1.0),
            }
        })
        .collect()
}

#[test]
fn nms_matches_quaternion_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for trial in 0..100 {
        let n = rng.gen_range(2..=100);
        let grasps = random_grasps(&mut rng, n);
        let fast = grasp_nms(&grasps, 0.03, 30.0f32.to_radians());
        let slow = naive_nms(&grasps, 0.03, 30.0f32.to_radians());
        assert_eq!(fast, slow, "trial {trial} with {n} grasps");
        assert!(!fast.is_empty());
        // best-scored grasp always survives
        let best = grasps
            .iter()
            .map(|g| g.score)
            .fold(f32::NEG_INFINITY, f32::max);
        assert_eq!(fast[0].score, best);
    }
}

#[test]
fn nms_with_loose_thresholds_keeps_only_leader_clusters() {
    // every grasp identical except score → exactly one survivor
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut grasps = random_grasps(&mut rng, 1);
    let base = grasps[0];
    for i in 1..20 {
        let mut g = base;
        g.score = base.score * (1.0 - i as f32 * 0.01);
        grasps.push(g);
    }
    let kept = grasp_nms(&grasps, 0.03, 30.0f32.to_radians());
    assert_eq!(kept.len(), 1);
}
