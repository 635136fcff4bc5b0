//! Synthetic tabletop scenes: primitive objects resting on a table, a
//! ray-cast depth/color renderer, analytic grasp labels, and the gripper
//! collision model shared by labeling and evaluation.
//!
//! Frames: the camera sits at the origin looking along +z straight down at
//! the table plane z = `TABLE_Z_M`; +z is therefore "down" and smaller z is
//! closer to the camera.  Objects rest on the table: spheres and upright
//! cylinders with identity rotation, boxes rotated about z only.

use crate::error::Result;
use crate::geometry::{CameraIntrinsics, GraspPose, ImageFrame, JAW_WIDTH_MAX};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Table plane depth below the camera, meters.
pub const TABLE_Z_M: f32 = 0.6;

/// Objects are placed with |x|, |y| up to this, meters.
pub const PLACEMENT_HALF_EXTENT_M: f32 = 0.17;

/// Minimum free gap between bounding circles of placed objects, meters.
const PLACEMENT_GAP_M: f32 = 0.002;

/// Camera used for every synthetic scene unless a caller overrides it.
pub fn default_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics::new(105.0, 105.0, 48.0, 48.0, 96, 96).expect("static intrinsics")
}

// ─── gripper model ─────────────────────────────────────────────────────────
// In the grasp frame (x = closing direction, z = approach, origin at the
// grasp center) the gripper is three boxes.  Fingertips reach
// FINGER_OVERSHOOT past the contact plane; the palm sits behind the fingers.

pub const FINGER_HALF_THICKNESS: f32 = 0.005;
pub const FINGER_HALF_DEPTH: f32 = 0.03; // along approach
pub const FINGER_OVERSHOOT: f32 = 0.01; // tip extends past the contact plane
pub const PALM_HALF_THICKNESS: f32 = 0.005; // along approach
pub const PALM_HALF_WIDTH_EXTRA: f32 = 0.01; // beyond w/2 on each side
/// Extra jaw opening beyond the object surface in labels, meters.
pub const LABEL_WIDTH_MARGIN: f32 = 0.01;

/// Radius of a ball around the grasp center guaranteed to contain the whole
/// gripper at maximum jaw width (used for quick feasibility pre-checks).
pub const GRIPPER_BALL_RADIUS: f32 = 0.085;

// ─── primitives ────────────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PrimitiveShape {
    Sphere { radius: f32 },
    Box { half_extents: [f32; 3] },
    Cylinder { radius: f32, half_height: f32 },
}

impl PrimitiveShape {
    /// Circumradius of the footprint in the table plane.
    pub fn bounding_radius_2d(&self) -> f32 {
        match *self {
            PrimitiveShape::Sphere { radius } => radius,
            PrimitiveShape::Box { half_extents } => {
                (half_extents[0].powi(2) + half_extents[1].powi(2)).sqrt()
            }
            PrimitiveShape::Cylinder { radius, .. } => radius,
        }
    }

    /// Distance from the resting object's center up to the table plane.
    pub fn resting_half_height(&self) -> f32 {
        match *self {
            PrimitiveShape::Sphere { radius } => radius,
            PrimitiveShape::Box { half_extents } => half_extents[2],
            PrimitiveShape::Cylinder { half_height, .. } => half_height,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct Pose {
    pub rotation: [[f32; 3]; 3],
    pub translation: [f32; 3],
}

impl Pose {
    pub fn upright(translation: [f32; 3]) -> Pose {
        Pose {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation,
        }
    }

    /// Rotation about the vertical (z) axis by `yaw`.
    pub fn yawed(yaw: f32, translation: [f32; 3]) -> Pose {
        let (s, c) = yaw.sin_cos();
        Pose {
            rotation: [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
            translation,
        }
    }

    /// World point → object-local coordinates (rotation is orthonormal).
    pub fn to_local(&self, p: [f32; 3]) -> [f32; 3] {
        let d = [
            p[0] - self.translation[0],
            p[1] - self.translation[1],
            p[2] - self.translation[2],
        ];
        let r = &self.rotation;
        [
            r[0][0] * d[0] + r[1][0] * d[1] + r[2][0] * d[2],
            r[0][1] * d[0] + r[1][1] * d[1] + r[2][1] * d[2],
            r[0][2] * d[0] + r[1][2] * d[1] + r[2][2] * d[2],
        ]
    }

    /// Rotate a direction world → local.
    pub fn dir_to_local(&self, d: [f32; 3]) -> [f32; 3] {
        let r = &self.rotation;
        [
            r[0][0] * d[0] + r[1][0] * d[1] + r[2][0] * d[2],
            r[0][1] * d[0] + r[1][1] * d[1] + r[2][1] * d[2],
            r[0][2] * d[0] + r[1][2] * d[1] + r[2][2] * d[2],
        ]
    }

    /// Rotate a direction local → world.
    pub fn dir_to_world(&self, d: [f32; 3]) -> [f32; 3] {
        let r = &self.rotation;
        [
            r[0][0] * d[0] + r[0][1] * d[1] + r[0][2] * d[2],
            r[1][0] * d[0] + r[1][1] * d[1] + r[1][2] * d[2],
            r[2][0] * d[0] + r[2][1] * d[1] + r[2][2] * d[2],
        ]
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct SceneObject {
    pub shape: PrimitiveShape,
    pub pose: Pose,
    pub color: [f32; 3],
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SceneModel {
    pub seed: u64,
    pub table_z: f32,
    pub objects: Vec<SceneObject>,
}

// ─── scene generation ──────────────────────────────────────────────────────

/// Generate a scene with up to `n_objects` primitives resting on the table.
/// Placement is rejection-sampled on bounding circles; an object that cannot
/// be placed in 1000 tries is dropped, so the result may hold fewer objects
/// than requested.  Same seed, same scene, bit for bit.
pub fn gen_scene(seed: u64, n_objects: usize) -> SceneModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut objects: Vec<SceneObject> = Vec::with_capacity(n_objects);
    for _ in 0..n_objects {
        let shape = match rng.gen_range(0..3u32) {
            0 => PrimitiveShape::Sphere {
                radius: rng.gen_range(0.015..0.035),
            },
            1 => PrimitiveShape::Box {
                half_extents: [
                    rng.gen_range(0.01..0.035),
                    rng.gen_range(0.01..0.035),
                    rng.gen_range(0.01..0.035),
                ],
            },
            _ => PrimitiveShape::Cylinder {
                radius: rng.gen_range(0.012..0.03),
                half_height: rng.gen_range(0.02..0.05),
            },
        };
        let yaw = match shape {
            PrimitiveShape::Box { .. } => rng.gen_range(0.0..std::f32::consts::PI),
            _ => 0.0,
        };
        let br = shape.bounding_radius_2d();
        let mut placed = None;
        for _ in 0..1000 {
            let x = rng.gen_range(-PLACEMENT_HALF_EXTENT_M..PLACEMENT_HALF_EXTENT_M);
            let y = rng.gen_range(-PLACEMENT_HALF_EXTENT_M..PLACEMENT_HALF_EXTENT_M);
            let clear = objects.iter().all(|o| {
                let dx = x - o.pose.translation[0];
                let dy = y - o.pose.translation[1];
                let need = br + o.shape.bounding_radius_2d() + PLACEMENT_GAP_M;
                dx * dx + dy * dy >= need * need
            });
            if clear {
                placed = Some((x, y));
                break;
            }
        }
        let Some((x, y)) = placed else { continue };
        let z = TABLE_Z_M - shape.resting_half_height();
        let pose = match shape {
            PrimitiveShape::Box { .. } => Pose::yawed(yaw, [x, y, z]),
            _ => Pose::upright([x, y, z]),
        };
        let color = [
            rng.gen_range(0.2..0.9),
            rng.gen_range(0.2..0.9),
            rng.gen_range(0.2..0.9),
        ];
        objects.push(SceneObject { shape, pose, color });
    }
    SceneModel {
        seed,
        table_z: TABLE_Z_M,
        objects,
    }
}

// ─── ray casting ───────────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug)]
pub struct RayHit {
    pub t: f32,
    /// Outward unit surface normal at the hit, world frame.
    pub normal: [f32; 3],
}

fn norm3(v: [f32; 3]) -> [f32; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Nearest positive intersection of a world-frame ray with one object.
pub fn ray_object(origin: [f32; 3], dir: [f32; 3], obj: &SceneObject) -> Option<RayHit> {
    let o = obj.pose.to_local(origin);
    let d = obj.pose.dir_to_local(dir);
    let (t, n_local) = match obj.shape {
        PrimitiveShape::Sphere { radius } => ray_sphere(o, d, radius)?,
        PrimitiveShape::Box { half_extents } => ray_box(o, d, half_extents)?,
        PrimitiveShape::Cylinder {
            radius,
            half_height,
        } => ray_cylinder(o, d, radius, half_height)?,
    };
    Some(RayHit {
        t,
        normal: obj.pose.dir_to_world(n_local),
    })
}

fn ray_sphere(o: [f32; 3], d: [f32; 3], r: f32) -> Option<(f32, [f32; 3])> {
    let b = o[0] * d[0] + o[1] * d[1] + o[2] * d[2];
    let c = o[0] * o[0] + o[1] * o[1] + o[2] * o[2] - r * r;
    let a = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
    let disc = b * b - a * c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let t = if (-b - sq) / a > 1e-6 {
        (-b - sq) / a
    } else if (-b + sq) / a > 1e-6 {
        (-b + sq) / a
    } else {
        return None;
    };
    let p = [o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2]];
    Some((t, norm3(p)))
}

fn ray_box(o: [f32; 3], d: [f32; 3], he: [f32; 3]) -> Option<(f32, [f32; 3])> {
    let mut t_near = f32::NEG_INFINITY;
    let mut t_far = f32::INFINITY;
    let mut near_axis = 0usize;
    for ax in 0..3 {
        if d[ax].abs() < 1e-9 {
            if o[ax].abs() > he[ax] {
                return None;
            }
            continue;
        }
        let mut t0 = (-he[ax] - o[ax]) / d[ax];
        let mut t1 = (he[ax] - o[ax]) / d[ax];
        if t0 > t1 {
            std::mem::swap(&mut t0, &mut t1);
        }
        if t0 > t_near {
            t_near = t0;
            near_axis = ax;
        }
        t_far = t_far.min(t1);
        if t_near > t_far {
            return None;
        }
    }
    let t = if t_near > 1e-6 {
        t_near
    } else if t_far > 1e-6 {
        // origin inside: report the exit face
        let mut n = [0.0; 3];
        let p = [
            o[0] + t_far * d[0],
            o[1] + t_far * d[1],
            o[2] + t_far * d[2],
        ];
        let ax = (0..3)
            .max_by(|&i, &j| {
                (p[i].abs() / he[i])
                    .partial_cmp(&(p[j].abs() / he[j]))
                    .unwrap()
            })
            .unwrap();
        n[ax] = p[ax].signum();
        return Some((t_far, n));
    } else {
        return None;
    };
    let p = [o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2]];
    let mut n = [0.0; 3];
    n[near_axis] = p[near_axis].signum();
    Some((t, n))
}

fn ray_cylinder(o: [f32; 3], d: [f32; 3], r: f32, hh: f32) -> Option<(f32, [f32; 3])> {
    let mut best: Option<(f32, [f32; 3])> = None;
    let mut consider = |t: f32, n: [f32; 3]| {
        if t > 1e-6 && best.map_or(true, |(bt, _)| t < bt) {
            best = Some((t, n));
        }
    };
    // lateral surface: x² + y² = r²
    let a = d[0] * d[0] + d[1] * d[1];
    if a > 1e-12 {
        let b = o[0] * d[0] + o[1] * d[1];
        let c = o[0] * o[0] + o[1] * o[1] - r * r;
        let disc = b * b - a * c;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            for t in [(-b - sq) / a, (-b + sq) / a] {
                let z = o[2] + t * d[2];
                if z.abs() <= hh {
                    let p = [o[0] + t * d[0], o[1] + t * d[1], 0.0];
                    consider(t, norm3(p));
                }
            }
        }
    }
    // caps: z = ±hh
    if d[2].abs() > 1e-9 {
        for (zc, nz) in [(-hh, -1.0f32), (hh, 1.0)] {
            let t = (zc - o[2]) / d[2];
            let x = o[0] + t * d[0];
            let y = o[1] + t * d[1];
            if x * x + y * y <= r * r {
                consider(t, [0.0, 0.0, nz]);
            }
        }
    }
    best
}

/// Is a world point strictly inside the object?
pub fn point_inside(obj: &SceneObject, p: [f32; 3]) -> bool {
    let l = obj.pose.to_local(p);
    match obj.shape {
        PrimitiveShape::Sphere { radius } => {
            l[0] * l[0] + l[1] * l[1] + l[2] * l[2] < radius * radius
        }
        PrimitiveShape::Box { half_extents } => {
            l[0].abs() < half_extents[0]
                && l[1].abs() < half_extents[1]
                && l[2].abs() < half_extents[2]
        }
        PrimitiveShape::Cylinder {
            radius,
            half_height,
        } => l[0] * l[0] + l[1] * l[1] < radius * radius && l[2].abs() < half_height,
    }
}

// ─── rendering ─────────────────────────────────────────────────────────────

fn pixel_ray(u: usize, v: usize, intr: &CameraIntrinsics) -> [f32; 3] {
    norm3([
        (u as f32 - intr.cx) / intr.fx,
        (v as f32 - intr.cy) / intr.fy,
        1.0,
    ])
}

/// Nearest hit over every object and the table plane.  Returns (t, normal,
/// object index) with `usize::MAX` standing for the table.
fn cast(scene: &SceneModel, dir: [f32; 3]) -> Option<(f32, [f32; 3], usize)> {
    let mut best: Option<(f32, [f32; 3], usize)> = None;
    for (i, obj) in scene.objects.iter().enumerate() {
        if let Some(hit) = ray_object([0.0; 3], dir, obj) {
            if best.map_or(true, |(bt, _, _)| hit.t < bt) {
                best = Some((hit.t, hit.normal, i));
            }
        }
    }
    if dir[2] > 1e-9 {
        let t = scene.table_z / dir[2];
        if best.map_or(true, |(bt, _, _)| t < bt) {
            best = Some((t, [0.0, 0.0, -1.0], usize::MAX));
        }
    }
    best
}

/// Ray-cast depth in millimeters: the z-component of the nearest hit point
/// per pixel, 0 where the ray escapes past the table.
pub fn render_depth(scene: &SceneModel, intr: &CameraIntrinsics) -> Tensor {
    let (h, w) = (intr.height, intr.width);
    let mut out = Tensor::zeros(&[1, h, w]);
    for v in 0..h {
        for u in 0..w {
            let d = pixel_ray(u, v, intr);
            let mm = match cast(scene, d) {
                Some((t, _, _)) => t * d[2] * 1000.0,
                None => 0.0,
            };
            out.data_mut()[v * w + u] = mm;
        }
    }
    out
}

/// Flat-shaded color render: per-object albedo times a Lambert term against
/// the viewing direction, table in fixed gray.  Values in [0, 1].
pub fn render_rgb(scene: &SceneModel, intr: &CameraIntrinsics) -> Tensor {
    let (h, w) = (intr.height, intr.width);
    let mut out = Tensor::zeros(&[3, h, w]);
    let table_color = [0.45, 0.45, 0.5];
    for v in 0..h {
        for u in 0..w {
            let d = pixel_ray(u, v, intr);
            let (albedo, shade) = match cast(scene, d) {
                Some((_, n, idx)) => {
                    let facing = -(n[0] * d[0] + n[1] * d[1] + n[2] * d[2]);
                    let albedo = if idx == usize::MAX {
                        table_color
                    } else {
                        scene.objects[idx].color
                    };
                    (albedo, facing.clamp(0.2, 1.0))
                }
                None => ([0.0, 0.0, 0.0], 0.0),
            };
            for c in 0..3 {
                out.data_mut()[(c * h + v) * w + u] = albedo[c] * shade;
            }
        }
    }
    out
}

/// Depth + color + intrinsics bundled as a network-ready frame.
pub fn render_frame(scene: &SceneModel, intr: &CameraIntrinsics) -> Result<ImageFrame> {
    ImageFrame::new(render_rgb(scene, intr), render_depth(scene, intr), *intr)
}

// ─── gripper collision ─────────────────────────────────────────────────────

/// Oriented box: world center, world rotation (columns are local axes), and
/// half extents.
#[derive(Clone, Copy, Debug)]
pub struct Obb {
    pub center: [f32; 3],
    pub rotation: [[f32; 3]; 3],
    pub half: [f32; 3],
}

fn mat_mul_vec(r: &[[f64; 3]; 3], v: [f32; 3]) -> [f32; 3] {
    [
        (r[0][0] * v[0] as f64 + r[0][1] * v[1] as f64 + r[0][2] * v[2] as f64) as f32,
        (r[1][0] * v[0] as f64 + r[1][1] * v[1] as f64 + r[1][2] * v[2] as f64) as f32,
        (r[2][0] * v[0] as f64 + r[2][1] * v[1] as f64 + r[2][2] * v[2] as f64) as f32,
    ]
}

/// The gripper as three oriented boxes (two fingers, palm) for a grasp.
pub fn gripper_boxes(g: &GraspPose) -> [Obb; 3] {
    let rd = g.rotation();
    let r32 = [
        [rd[0][0] as f32, rd[0][1] as f32, rd[0][2] as f32],
        [rd[1][0] as f32, rd[1][1] as f32, rd[1][2] as f32],
        [rd[2][0] as f32, rd[2][1] as f32, rd[2][2] as f32],
    ];
    let w = g.width.clamp(0.0, JAW_WIDTH_MAX);
    let place = |local_center: [f32; 3], half: [f32; 3]| -> Obb {
        let wc = mat_mul_vec(&rd, local_center);
        Obb {
            center: [g.x + wc[0], g.y + wc[1], g.z + wc[2]],
            rotation: r32,
            half,
        }
    };
    let fx = w / 2.0 + FINGER_HALF_THICKNESS;
    let fz = FINGER_OVERSHOOT - FINGER_HALF_DEPTH; // center so tip is at +overshoot
    [
        place(
            [fx, 0.0, fz],
            [
                FINGER_HALF_THICKNESS,
                FINGER_HALF_THICKNESS,
                FINGER_HALF_DEPTH,
            ],
        ),
        place(
            [-fx, 0.0, fz],
            [
                FINGER_HALF_THICKNESS,
                FINGER_HALF_THICKNESS,
                FINGER_HALF_DEPTH,
            ],
        ),
        place(
            [
                0.0,
                0.0,
                FINGER_OVERSHOOT - 2.0 * FINGER_HALF_DEPTH - PALM_HALF_THICKNESS,
            ],
            [
                w / 2.0 + 2.0 * FINGER_HALF_THICKNESS + PALM_HALF_WIDTH_EXTRA,
                FINGER_HALF_THICKNESS + PALM_HALF_WIDTH_EXTRA,
                PALM_HALF_THICKNESS,
            ],
        ),
    ]
}

/// Does the box dip below the table plane?
fn obb_hits_table(b: &Obb, table_z: f32) -> bool {
    // max z over corners = center_z + Σ |R_z·axis| · half
    let r = &b.rotation;
    let reach = r[2][0].abs() * b.half[0] + r[2][1].abs() * b.half[1] + r[2][2].abs() * b.half[2];
    b.center[2] + reach > table_z
}

fn obb_vs_sphere(b: &Obb, center: [f32; 3], radius: f32) -> bool {
    // closest point on the OBB to the sphere center, in the OBB frame
    let d = [
        center[0] - b.center[0],
        center[1] - b.center[1],
        center[2] - b.center[2],
    ];
    let r = &b.rotation;
    let mut dist2 = 0.0f32;
    for ax in 0..3 {
        let proj = r[0][ax] * d[0] + r[1][ax] * d[1] + r[2][ax] * d[2];
        let ex = proj.abs() - b.half[ax];
        if ex > 0.0 {
            dist2 += ex * ex;
        }
    }
    dist2 < radius * radius
}

/// Separating-axis test between two oriented boxes (15 axes).
fn obb_vs_obb(a: &Obb, b: &Obb) -> bool {
    let ax = |r: &[[f32; 3]; 3], i: usize| [r[0][i], r[1][i], r[2][i]];
    let mut axes: Vec<[f32; 3]> = Vec::with_capacity(15);
    for i in 0..3 {
        axes.push(ax(&a.rotation, i));
        axes.push(ax(&b.rotation, i));
    }
    for i in 0..3 {
        for j in 0..3 {
            let u = ax(&a.rotation, i);
            let v = ax(&b.rotation, j);
            let c = [
                u[1] * v[2] - u[2] * v[1],
                u[2] * v[0] - u[0] * v[2],
                u[0] * v[1] - u[1] * v[0],
            ];
            let len2 = c[0] * c[0] + c[1] * c[1] + c[2] * c[2];
            if len2 > 1e-12 {
                axes.push(c);
            }
        }
    }
    let d = [
        b.center[0] - a.center[0],
        b.center[1] - a.center[1],
        b.center[2] - a.center[2],
    ];
    for axis in axes {
        let project = |o: &Obb| -> f32 {
            (0..3)
                .map(|i| {
                    let col = ax(&o.rotation, i);
                    (col[0] * axis[0] + col[1] * axis[1] + col[2] * axis[2]).abs() * o.half[i]
                })
                .sum()
        };
        let dist = (d[0] * axis[0] + d[1] * axis[1] + d[2] * axis[2]).abs();
        if dist > project(a) + project(b) {
            return false;
        }
    }
    true
}

/// Exact test against an upright cylinder: clip the box to the cylinder's
/// z-slab, project the clipped solid to the table plane (a convex polygon),
/// and compare its distance from the axis with the radius.  Clipping by a
/// slab only ever creates vertices on original box edges, so the vertex set
/// below is complete.
fn obb_vs_upright_cylinder(b: &Obb, center: [f32; 3], radius: f32, half_height: f32) -> bool {
    let z_lo = center[2] - half_height;
    let z_hi = center[2] + half_height;
    // the 8 corners in world coordinates
    let mut corners = [[0.0f32; 3]; 8];
    for (i, c) in corners.iter_mut().enumerate() {
        let s = [
            if i & 1 == 0 { -1.0 } else { 1.0 },
            if i & 2 == 0 { -1.0 } else { 1.0 },
            if i & 4 == 0 { -1.0 } else { 1.0 },
        ];
        for row in 0..3 {
            c[row] = b.center[row]
                + b.rotation[row][0] * s[0] * b.half[0]
                + b.rotation[row][1] * s[1] * b.half[1]
                + b.rotation[row][2] * s[2] * b.half[2];
        }
    }
    let mut pts: Vec<[f32; 2]> = Vec::with_capacity(16);
    for c in &corners {
        if c[2] >= z_lo && c[2] <= z_hi {
            pts.push([c[0], c[1]]);
        }
    }
    // box edges = corner pairs whose index differs in exactly one bit
    for i in 0..8usize {
        for bit in [1usize, 2, 4] {
            let j = i ^ bit;
            if j < i {
                continue;
            }
            let (a, c) = (corners[i], corners[j]);
            for plane in [z_lo, z_hi] {
                if (a[2] - plane) * (c[2] - plane) < 0.0 {
                    let t = (plane - a[2]) / (c[2] - a[2]);
                    pts.push([a[0] + t * (c[0] - a[0]), a[1] + t * (c[1] - a[1])]);
                }
            }
        }
    }
    if pts.is_empty() {
        return false;
    }
    dist2_point_to_hull([center[0], center[1]], &mut pts) < radius * radius
}

/// Squared distance from a point to the convex hull of a 2-D point set
/// (zero if the point is inside).
fn dist2_point_to_hull(p: [f32; 2], pts: &mut Vec<[f32; 2]>) -> f32 {
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    let seg_dist2 = |a: [f32; 2], b: [f32; 2]| -> f32 {
        let ab = [b[0] - a[0], b[1] - a[1]];
        let ap = [p[0] - a[0], p[1] - a[1]];
        let len2 = ab[0] * ab[0] + ab[1] * ab[1];
        let t = if len2 > 0.0 {
            ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let d = [ap[0] - t * ab[0], ap[1] - t * ab[1]];
        d[0] * d[0] + d[1] * d[1]
    };
    if pts.len() == 1 {
        let d = [p[0] - pts[0][0], p[1] - pts[0][1]];
        return d[0] * d[0] + d[1] * d[1];
    }
    if pts.len() == 2 {
        return seg_dist2(pts[0], pts[1]);
    }
    // monotone-chain convex hull (points are sorted and unique)
    let cross = |o: [f32; 2], a: [f32; 2], b: [f32; 2]| -> f32 {
        (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    };
    let mut hull: Vec<[f32; 2]> = Vec::with_capacity(pts.len() * 2);
    for pass in 0..2 {
        let start = hull.len() + 2;
        let iter: Box<dyn Iterator<Item = &[f32; 2]>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &q in iter {
            while hull.len() >= start && cross(hull[hull.len() - 2], hull[hull.len() - 1], q) <= 0.0
            {
                hull.pop();
            }
            hull.push(q);
        }
        hull.pop();
    }
    // inside test: p left of every ccw edge
    let n = hull.len();
    let inside = (0..n).all(|i| cross(hull[i], hull[(i + 1) % n], p) >= 0.0);
    if inside {
        return 0.0;
    }
    (0..n)
        .map(|i| seg_dist2(hull[i], hull[(i + 1) % n]))
        .fold(f32::INFINITY, f32::min)
}

fn obb_vs_object(b: &Obb, obj: &SceneObject) -> bool {
    match obj.shape {
        PrimitiveShape::Sphere { radius } => obb_vs_sphere(b, obj.pose.translation, radius),
        PrimitiveShape::Box { half_extents } => {
            let o = Obb {
                center: obj.pose.translation,
                rotation: obj.pose.rotation,
                half: half_extents,
            };
            obb_vs_obb(b, &o)
        }
        PrimitiveShape::Cylinder {
            radius,
            half_height,
        } => {
            let r = &obj.pose.rotation;
            if r[0][2].abs() < 1e-6 && r[1][2].abs() < 1e-6 {
                obb_vs_upright_cylinder(b, obj.pose.translation, radius, half_height)
            } else {
                // tilted cylinders fall back to their bounding box —
                // conservative at the corners
                let o = Obb {
                    center: obj.pose.translation,
                    rotation: obj.pose.rotation,
                    half: [radius, radius, half_height],
                };
                obb_vs_obb(b, &o)
            }
        }
    }
}

/// Gripper body test for a grasp on object `target`: fingers and palm
/// against every *other* object and the table, palm additionally against the
/// target (fingers legitimately flank it).
pub fn gripper_collides(scene: &SceneModel, target: usize, grasp: &GraspPose) -> bool {
    let boxes = gripper_boxes(grasp);
    for b in &boxes {
        if obb_hits_table(b, scene.table_z) {
            return true;
        }
        for (i, obj) in scene.objects.iter().enumerate() {
            if i == target {
                continue;
            }
            if obb_vs_object(b, obj) {
                return true;
            }
        }
    }
    if let Some(target_obj) = scene.objects.get(target) {
        if obb_vs_object(&boxes[2], target_obj) {
            return true;
        }
    }
    false
}

// ─── grasp labels ──────────────────────────────────────────────────────────

const PI: f32 = std::f32::consts::PI;

/// θ values 31° apart — far enough that same-position grasps at neighboring
/// values are orientation-distinct under a 30° suppression threshold.
fn theta_grid() -> [f32; 6] {
    let step = 31.0f32.to_radians();
    let start = -2.5 * step;
    [
        start,
        start + step,
        start + 2.0 * step,
        start + 3.0 * step,
        start + 4.0 * step,
        start + 5.0 * step,
    ]
}

/// Wrap an angle to [−π/2, π/2) by ±π (a jaw line is symmetric under π).
fn wrap_half(a: f32) -> f32 {
    let mut x = a;
    while x >= PI / 2.0 {
        x -= PI;
    }
    while x < -PI / 2.0 {
        x += PI;
    }
    x
}

/// Fingertip engagement depths below an object's top face, spaced just past
/// the 0.03 m positional suppression radius.  Depth is capped twice: the
/// fingertip overshoot must stay above the table, and the palm (0.05 m
/// behind the contact plane) must stay above the object's top face.
fn engagement_levels(height: f32) -> Vec<f32> {
    let palm_standoff = 2.0 * FINGER_HALF_DEPTH - FINGER_OVERSHOOT; // 0.05
    let cap = (height - FINGER_OVERSHOOT - 0.002).min(palm_standoff - 0.004);
    let mut out = Vec::new();
    let mut e = 0.015f32;
    while e <= cap + 1e-6 && out.len() < 4 {
        out.push(e);
        e += 0.031;
    }
    if out.is_empty() {
        out.push(cap.max(0.002));
    }
    out
}

/// Approach-tilt (roll about the closing axis) grid for grasps whose center
/// leaves room for the tilted gripper above the table.
fn roll_grid(center_z: f32, table_z: f32) -> Vec<f32> {
    if center_z + GRIPPER_BALL_RADIUS <= table_z {
        vec![
            0.0,
            31.0f32.to_radians(),
            -31.0f32.to_radians(),
            62.0f32.to_radians(),
            -62.0f32.to_radians(),
        ]
    } else {
        vec![0.0]
    }
}

fn push_if_free(scene: &SceneModel, target: usize, out: &mut Vec<GraspPose>, grasp: GraspPose) {
    if grasp.width <= JAW_WIDTH_MAX && !gripper_collides(scene, target, &grasp) {
        out.push(grasp);
    }
}

fn sphere_labels(scene: &SceneModel, idx: usize, out: &mut Vec<GraspPose>) {
    let obj = &scene.objects[idx];
    let PrimitiveShape::Sphere { radius } = obj.shape else {
        return;
    };
    let [x, y, z] = obj.pose.translation;
    let width = 2.0 * radius + LABEL_WIDTH_MARGIN;
    for theta in [0.0, PI / 4.0, -PI / 4.0, PI / 2.0 - 1e-3] {
        push_if_free(
            scene,
            idx,
            out,
            GraspPose {
                x,
                y,
                z,
                theta,
                gamma: 0.0,
                beta: 0.0,
                width,
                score: 1.0,
            },
        );
    }
    // one tilted variant; the closing line still passes through the center
    push_if_free(
        scene,
        idx,
        out,
        GraspPose {
            x,
            y,
            z,
            theta: 0.0,
            gamma: 20.0f32.to_radians(),
            beta: 0.0,
            width,
            score: 1.0,
        },
    );
}

fn box_labels(scene: &SceneModel, idx: usize, out: &mut Vec<GraspPose>) {
    let obj = &scene.objects[idx];
    let PrimitiveShape::Box { half_extents } = obj.shape else {
        return;
    };
    let yaw = obj.pose.rotation[1][0].atan2(obj.pose.rotation[0][0]);
    let top = scene.table_z - 2.0 * half_extents[2];
    let height = 2.0 * half_extents[2];
    // closing across local x faces and across local y faces
    for (axis, other) in [(0usize, 1usize), (1, 0)] {
        let width = 2.0 * half_extents[axis] + LABEL_WIDTH_MARGIN;
        let theta = wrap_half(yaw + if axis == 1 { PI / 2.0 } else { 0.0 });
        // slide along the face if there is room to stay well inside it
        let slide_room = half_extents[other] - 0.006;
        let mut slides = vec![0.0f32];
        if slide_room >= 0.01 {
            let s = slide_room.min(0.0155);
            slides.push(s);
            slides.push(-s);
        }
        // local direction of the slide in world coordinates
        let slide_dir = obj.pose.dir_to_world(if other == 0 {
            [1.0, 0.0, 0.0]
        } else {
            [0.0, 1.0, 0.0]
        });
        for e in engagement_levels(height) {
            let z = top + e;
            for &s in &slides {
                push_if_free(
                    scene,
                    idx,
                    out,
                    GraspPose {
                        x: obj.pose.translation[0] + s * slide_dir[0],
                        y: obj.pose.translation[1] + s * slide_dir[1],
                        z,
                        theta,
                        gamma: 0.0,
                        beta: 0.0,
                        width,
                        score: 1.0,
                    },
                );
            }
        }
    }
}

fn cylinder_labels(scene: &SceneModel, idx: usize, out: &mut Vec<GraspPose>) {
    let obj = &scene.objects[idx];
    let PrimitiveShape::Cylinder {
        radius,
        half_height,
    } = obj.shape
    else {
        return;
    };
    let [x, y, _] = obj.pose.translation;
    let top = scene.table_z - 2.0 * half_height;
    let width = 2.0 * radius + LABEL_WIDTH_MARGIN;
    for e in engagement_levels(2.0 * half_height) {
        let z = top + e;
        for gamma in roll_grid(z, scene.table_z) {
            for theta in theta_grid() {
                push_if_free(
                    scene,
                    idx,
                    out,
                    GraspPose {
                        x,
                        y,
                        z,
                        theta,
                        gamma,
                        beta: 0.0,
                        width,
                        score: 1.0,
                    },
                );
            }
        }
    }
}

/// Analytic force-closure grasp proposals for every object, already filtered
/// for gripper collisions.  All label scores are 1.
pub fn label_grasps(scene: &SceneModel) -> Vec<GraspPose> {
    let mut out = Vec::new();
    for idx in 0..scene.objects.len() {
        match scene.objects[idx].shape {
            PrimitiveShape::Sphere { .. } => sphere_labels(scene, idx, &mut out),
            PrimitiveShape::Box { .. } => box_labels(scene, idx, &mut out),
            PrimitiveShape::Cylinder { .. } => cylinder_labels(scene, idx, &mut out),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_depth_at_principal_point() {
        let scene = SceneModel {
            seed: 0,
            table_z: TABLE_Z_M,
            objects: vec![SceneObject {
                shape: PrimitiveShape::Sphere { radius: 0.05 },
                pose: Pose::upright([0.0, 0.0, 0.5]),
                color: [0.5, 0.2, 0.2],
            }],
        };
        let intr = default_intrinsics();
        let depth = render_depth(&scene, &intr);
        let center = depth.data()[48 * 96 + 48];
        assert!((center - 450.0).abs() < 0.5, "got {center}");
        // a corner pixel sees the table
        let corner = depth.data()[0];
        assert!(corner >= 600.0, "corner {corner}");
    }

    #[test]
    fn resting_objects_touch_the_table() {
        for seed in 0..20 {
            let scene = gen_scene(seed, 4);
            for o in &scene.objects {
                let bottom = o.pose.translation[2] + o.shape.resting_half_height();
                assert!((bottom - TABLE_Z_M).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn generated_scenes_have_no_overlap() {
        for seed in 0..100 {
            let scene = gen_scene(seed, 5);
            let n = scene.objects.len();
            for i in 0..n {
                for j in (i + 1)..n {
                    let a = &scene.objects[i];
                    let b = &scene.objects[j];
                    let dx = a.pose.translation[0] - b.pose.translation[0];
                    let dy = a.pose.translation[1] - b.pose.translation[1];
                    let d = (dx * dx + dy * dy).sqrt();
                    assert!(
                        d >= a.shape.bounding_radius_2d() + b.shape.bounding_radius_2d(),
                        "seed {seed}: objects {i},{j} overlap"
                    );
                }
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = gen_scene(7, 5);
        let b = gen_scene(7, 5);
        assert_eq!(a, b);
        let json_a = serde_json::to_string(&a).unwrap();
        let json_b = serde_json::to_string(&b).unwrap();
        assert_eq!(json_a, json_b);
    }

    #[test]
    fn shape_serde_round_trip() {
        let shapes = vec![
            PrimitiveShape::Sphere { radius: 0.02 },
            PrimitiveShape::Box {
                half_extents: [0.01, 0.02, 0.03],
            },
            PrimitiveShape::Cylinder {
                radius: 0.015,
                half_height: 0.04,
            },
        ];
        let s = serde_json::to_string(&shapes).unwrap();
        assert!(s.contains("\"kind\":\"sphere\""));
        assert!(s.contains("\"kind\":\"cylinder\""));
        let back: Vec<PrimitiveShape> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, shapes);
    }

    #[test]
    fn ray_box_face_normal() {
        let obj = SceneObject {
            shape: PrimitiveShape::Box {
                half_extents: [0.02, 0.03, 0.04],
            },
            pose: Pose::yawed(0.0, [0.0, 0.0, 0.5]),
            color: [0.5; 3],
        };
        // straight down the z axis hits the top face (normal toward camera)
        let hit = ray_object([0.0, 0.0, 0.0], [0.0, 0.0, 1.0], &obj).unwrap();
        assert!((hit.t - 0.46).abs() < 1e-6);
        assert_eq!(hit.normal, [0.0, 0.0, -1.0]);
    }

    #[test]
    fn ray_cylinder_side_and_cap() {
        let obj = SceneObject {
            shape: PrimitiveShape::Cylinder {
                radius: 0.02,
                half_height: 0.05,
            },
            pose: Pose::upright([0.0, 0.0, 0.5]),
            color: [0.5; 3],
        };
        // down the axis → top cap at z = 0.45
        let cap = ray_object([0.0, 0.0, 0.0], [0.0, 0.0, 1.0], &obj).unwrap();
        assert!((cap.t - 0.45).abs() < 1e-6);
        assert_eq!(cap.normal, [0.0, 0.0, -1.0]);
        // horizontal ray at mid-height → lateral surface
        let side = ray_object([0.2, 0.0, 0.5], [-1.0, 0.0, 0.0], &obj).unwrap();
        assert!((side.t - 0.18).abs() < 1e-6);
        assert!((side.normal[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn labels_exist_and_are_collision_free() {
        for seed in 0..10 {
            let scene = gen_scene(seed, 3);
            if scene.objects.is_empty() {
                continue;
            }
            let labels = label_grasps(&scene);
            assert!(
                !labels.is_empty(),
                "seed {seed}: no labels for {} objects",
                scene.objects.len()
            );
            for g in &labels {
                assert!(g.width <= JAW_WIDTH_MAX);
                assert!(g.score == 1.0);
            }
        }
    }

    #[test]
    fn gripper_tips_clear_table_on_top_grasp() {
        // top-down sphere grasp: fingertip overshoot must stay above the table
        let scene = SceneModel {
            seed: 0,
            table_z: TABLE_Z_M,
            objects: vec![SceneObject {
                shape: PrimitiveShape::Sphere { radius: 0.03 },
                pose: Pose::upright([0.0, 0.0, TABLE_Z_M - 0.03]),
                color: [0.5; 3],
            }],
        };
        let g = GraspPose {
            x: 0.0,
            y: 0.0,
            z: TABLE_Z_M - 0.03,
            theta: 0.0,
            gamma: 0.0,
            beta: 0.0,
            width: 0.07,
            score: 1.0,
        };
        assert!(!gripper_collides(&scene, 0, &g));
        // but a grasp 25 mm lower pushes the tips through the table
        let mut low = g;
        low.z += 0.025;
        assert!(gripper_collides(&scene, 0, &low));
    }

    #[test]
    fn neighbor_blocks_grasp() {
        let mk = |x: f32| SceneObject {
            shape: PrimitiveShape::Sphere { radius: 0.03 },
            pose: Pose::upright([x, 0.0, TABLE_Z_M - 0.03]),
            color: [0.5; 3],
        };
        let scene = SceneModel {
            seed: 0,
            table_z: TABLE_Z_M,
            objects: vec![mk(0.0), mk(0.065)],
        };
        // closing along x: the far finger lands inside the neighbor
        let g = GraspPose {
            x: 0.0,
            y: 0.0,
            z: TABLE_Z_M - 0.03,
            theta: 0.0,
            gamma: 0.0,
            beta: 0.0,
            width: 0.07,
            score: 1.0,
        };
        assert!(gripper_collides(&scene, 0, &g));
        // closing along y is clear
        let mut ry = g;
        ry.theta = PI / 2.0 - 1e-3;
        assert!(!gripper_collides(&scene, 0, &ry));
    }

    #[test]
    fn tall_cylinder_has_many_distinct_labels() {
        let scene = SceneModel {
            seed: 0,
            table_z: TABLE_Z_M,
            objects: vec![SceneObject {
                shape: PrimitiveShape::Cylinder {
                    radius: 0.018,
                    half_height: 0.07,
                },
                pose: Pose::upright([0.0, 0.0, TABLE_Z_M - 0.07]),
                color: [0.5; 3],
            }],
        };
        let labels = label_grasps(&scene);
        // 6 jaw angles × 2 engagement depths × 5 approach tilts
        assert_eq!(labels.len(), 60, "got {} labels", labels.len());
    }

    #[test]
    fn point_inside_respects_pose() {
        let obj = SceneObject {
            shape: PrimitiveShape::Box {
                half_extents: [0.03, 0.01, 0.01],
            },
            pose: Pose::yawed(PI / 2.0, [0.0, 0.0, 0.5]),
            color: [0.5; 3],
        };
        // local x points along world y after the quarter turn
        assert!(point_inside(&obj, [0.0, 0.025, 0.5]));
        assert!(!point_inside(&obj, [0.025, 0.0, 0.5]));
    }
}
