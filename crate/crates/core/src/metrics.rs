//! Grasp quality scoring on synthetic scenes: antipodal force closure with
//! Coulomb friction, and average precision over a friction-coefficient grid.

use crate::geometry::GraspPose;
use crate::scene::{gripper_collides, point_inside, ray_object, SceneModel};
use serde::{Deserialize, Serialize};

/// Friction coefficients a detection is scored against.
pub const FRICTION_GRID: [f64; 5] = [0.2, 0.4, 0.6, 0.8, 1.0];

/// Fixed denominator for per-scene precision: fewer than this many valid
/// detections pads the score down.
pub const AP_DENOMINATOR: usize = 50;

/// The two jaw contacts of a grasp, world frame, with outward normals.
#[derive(Clone, Copy, Debug)]
pub struct ContactPair {
    pub p1: [f32; 3],
    pub n1: [f32; 3],
    pub p2: [f32; 3],
    pub n2: [f32; 3],
    /// Index of the grasped object in the scene.
    pub object: usize,
}

fn sub(a: [f32; 3], b: [f32; 3]) -> [f64; 3] {
    [
        a[0] as f64 - b[0] as f64,
        a[1] as f64 - b[1] as f64,
        a[2] as f64 - b[2] as f64,
    ]
}

fn angle_between(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let na = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    let nb = (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt();
    (dot / (na * nb)).clamp(-1.0, 1.0).acos()
}

/// Close the jaws along the grasp's x axis and report where they land.
///
/// Each jaw is a ray from the fully open position toward the grasp center;
/// both must strike the *same* object within the jaw span, and neither jaw
/// may start inside any object.
pub fn grasp_contacts(scene: &SceneModel, grasp: &GraspPose) -> Option<ContactPair> {
    if !(grasp.width.is_finite() && grasp.width > 0.0) {
        return None;
    }
    let r = grasp.rotation();
    let axis = [r[0][0] as f32, r[1][0] as f32, r[2][0] as f32];
    let c = [grasp.x, grasp.y, grasp.z];
    let half = grasp.width / 2.0;
    let s1 = [
        c[0] + half * axis[0],
        c[1] + half * axis[1],
        c[2] + half * axis[2],
    ];
    let s2 = [
        c[0] - half * axis[0],
        c[1] - half * axis[1],
        c[2] - half * axis[2],
    ];
    if scene
        .objects
        .iter()
        .any(|o| point_inside(o, s1) || point_inside(o, s2))
    {
        return None;
    }
    let neg = [-axis[0], -axis[1], -axis[2]];
    let cast = |origin: [f32; 3], dir: [f32; 3]| -> Option<(usize, f32, [f32; 3])> {
        let mut best: Option<(usize, f32, [f32; 3])> = None;
        for (i, obj) in scene.objects.iter().enumerate() {
            if let Some(hit) = ray_object(origin, dir, obj) {
                if hit.t <= grasp.width && best.map_or(true, |(_, bt, _)| hit.t < bt) {
                    best = Some((i, hit.t, hit.normal));
                }
            }
        }
        best
    };
    let (o1, t1, n1) = cast(s1, neg)?;
    let (o2, t2, n2) = cast(s2, axis)?;
    if o1 != o2 {
        return None;
    }
    let p1 = [
        s1[0] + t1 * neg[0],
        s1[1] + t1 * neg[1],
        s1[2] + t1 * neg[2],
    ];
    let p2 = [
        s2[0] + t2 * axis[0],
        s2[1] + t2 * axis[1],
        s2[2] + t2 * axis[2],
    ];
    Some(ContactPair {
        p1,
        n1,
        p2,
        n2,
        object: o1,
    })
}

/// Worst-case angle between the contact load line and either inward normal,
/// radians.  Force closure at friction μ holds iff this is ≤ atan μ.
pub fn antipodal_angle(c: &ContactPair) -> f64 {
    let l = sub(c.p2, c.p1);
    let len2 = l[0] * l[0] + l[1] * l[1] + l[2] * l[2];
    if len2 < 1e-16 {
        return std::f64::consts::PI; // degenerate: contacts coincide
    }
    let neg = |v: [f32; 3]| [-v[0] as f64, -v[1] as f64, -v[2] as f64];
    let a1 = angle_between(l, neg(c.n1));
    let a2 = angle_between([-l[0], -l[1], -l[2]], neg(c.n2));
    a1.max(a2)
}

/// Full validity check minus the friction test: contacts exist and the
/// gripper body is collision-free against the rest of the scene.  Returns
/// the antipodal angle on success.
pub fn grasp_outcome(scene: &SceneModel, grasp: &GraspPose) -> Option<f64> {
    let contacts = grasp_contacts(scene, grasp)?;
    if gripper_collides(scene, contacts.object, grasp) {
        return None;
    }
    Some(antipodal_angle(&contacts))
}

/// Does the grasp achieve force closure at friction coefficient `mu`?
pub fn force_closure(scene: &SceneModel, grasp: &GraspPose, mu: f64) -> bool {
    match grasp_outcome(scene, grasp) {
        Some(angle) => angle <= mu.atan(),
        None => false,
    }
}

/// Per-scene average precision across the friction grid.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct SceneAp {
    pub per_mu: [f64; 5],
    pub mean: f64,
}

/// Score a ranked detection list against one scene.  The top
/// [`AP_DENOMINATOR`] detections by score are closed on the scene; precision
/// at each μ divides by the full denominator, so sparse lists score low even
/// when every detection succeeds.
pub fn scene_ap(scene: &SceneModel, grasps: &[GraspPose]) -> SceneAp {
    let mut ranked: Vec<&GraspPose> = grasps.iter().collect();
    ranked.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    ranked.truncate(AP_DENOMINATOR);
    let outcomes: Vec<Option<f64>> = ranked.iter().map(|g| grasp_outcome(scene, g)).collect();
    let mut per_mu = [0.0f64; 5];
    for (slot, &mu) in FRICTION_GRID.iter().enumerate() {
        let cone = mu.atan();
        let successes = outcomes
            .iter()
            .filter(|o| matches!(o, Some(angle) if *angle <= cone))
            .count();
        per_mu[slot] = successes as f64 / AP_DENOMINATOR as f64;
    }
    let mean = per_mu.iter().sum::<f64>() / per_mu.len() as f64;
    SceneAp { per_mu, mean }
}

/// Mean AP over scenes (zero for an empty slice).
pub fn mean_ap(per_scene: &[SceneAp]) -> f64 {
    if per_scene.is_empty() {
        return 0.0;
    }
    per_scene.iter().map(|s| s.mean).sum::<f64>() / per_scene.len() as f64
}

/// Evaluation summary written by the `eval` command.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct EvalReport {
    pub scenes: usize,
    pub mu_0_2: f64,
    pub mu_0_4: f64,
    pub mu_0_6: f64,
    pub mu_0_8: f64,
    pub mu_1_0: f64,
    pub map: f64,
    /// Scene directories that could not be scored, with reasons.
    pub skipped: Vec<String>,
}

impl EvalReport {
    pub fn from_scene_aps(per_scene: &[SceneAp], skipped: Vec<String>) -> EvalReport {
        let n = per_scene.len().max(1) as f64;
        let avg = |slot: usize| per_scene.iter().map(|s| s.per_mu[slot]).sum::<f64>() / n;
        EvalReport {
            scenes: per_scene.len(),
            mu_0_2: avg(0),
            mu_0_4: avg(1),
            mu_0_6: avg(2),
            mu_0_8: avg(3),
            mu_1_0: avg(4),
            map: mean_ap(per_scene),
            skipped,
        }
    }
}
