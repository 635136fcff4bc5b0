//! Camera model, grasp poses, and the fixed-frame Euler convention.
//!
//! Conventions used throughout the crate:
//! - Camera frame: x right, y down, z forward (into the scene).  Depth maps
//!   store millimeters on disk and in `ImageFrame`; all 3-D math is meters.
//! - Pixel coordinates: u along width (columns), v along height (rows).
//! - Grasp frame: x is the jaw closing axis, z is the approach direction.
//!   Rotation from grasp frame to camera frame is R = Rz(theta)·Ry(beta)·Rx(gamma)
//!   with every angle in [−π/2, π/2].

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// Maximum jaw opening of the modeled two-finger gripper, meters.
pub const JAW_WIDTH_MAX: f32 = 0.085;

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f32,
    pub fy: f32,
    pub cx: f32,
    pub cy: f32,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f32, fy: f32, cx: f32, cy: f32, width: usize, height: usize) -> Result<Self> {
        let intr = CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Config(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("image extent cannot be zero".into()));
        }
        if !(0.0..self.width as f32).contains(&self.cx)
            || !(0.0..self.height as f32).contains(&self.cy)
        {
            return Err(Error::Config(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }
}

/// One captured frame: RGB in [0,1] as [3, H, W], depth in millimeters as
/// [1, H, W] (zero = no return), plus the intrinsics that produced it.
#[derive(Clone, Debug)]
pub struct ImageFrame {
    pub rgb: Tensor,
    pub depth_mm: Tensor,
    pub intrinsics: CameraIntrinsics,
}

impl ImageFrame {
    pub fn new(rgb: Tensor, depth_mm: Tensor, intrinsics: CameraIntrinsics) -> Result<Self> {
        let (h, w) = (intrinsics.height, intrinsics.width);
        if rgb.shape() != [3, h, w] {
            return Err(Error::ShapeMismatch(format!(
                "rgb {:?} vs intrinsics {h}x{w}",
                rgb.shape()
            )));
        }
        if depth_mm.shape() != [1, h, w] {
            return Err(Error::ShapeMismatch(format!(
                "depth {:?} vs intrinsics {h}x{w}",
                depth_mm.shape()
            )));
        }
        if rgb.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::Config("rgb values must lie in [0, 1]".into()));
        }
        if depth_mm.data().iter().any(|&v| v < 0.0) {
            return Err(Error::Config("depth values must be >= 0".into()));
        }
        Ok(ImageFrame {
            rgb,
            depth_mm,
            intrinsics,
        })
    }
}

/// Normalized pixel-position channels: for every pixel,
/// x = (u − cx) / (1000·fx), y = (v − cy) / (1000·fy).  Returns [2, H, W].
///
/// Depends only on the intrinsics, so it can be precomputed per camera.
pub fn positional_meshgrid(intr: &CameraIntrinsics) -> Tensor {
    let (h, w) = (intr.height, intr.width);
    let mut data = vec![0.0f32; 2 * h * w];
    let (xs, ys) = data.split_at_mut(h * w);
    for v in 0..h {
        let yval = (v as f32 - intr.cy) / (1000.0 * intr.fy);
        for u in 0..w {
            xs[v * w + u] = (u as f32 - intr.cx) / (1000.0 * intr.fx);
            ys[v * w + u] = yval;
        }
    }
    Tensor::new(&[2, h, w], data)
}

/// Stack the 6-channel network input: RGB in [0,1], depth in meters, and the
/// two positional channels.  Returns [6, H, W].
pub fn make_network_input(frame: &ImageFrame) -> Tensor {
    let (h, w) = (frame.intrinsics.height, frame.intrinsics.width);
    let mesh = positional_meshgrid(&frame.intrinsics);
    let mut data = Vec::with_capacity(6 * h * w);
    data.extend_from_slice(frame.rgb.data());
    data.extend(frame.depth_mm.data().iter().map(|&mm| mm / 1000.0));
    data.extend_from_slice(mesh.data());
    Tensor::new(&[6, h, w], data)
}

/// Back-project a pixel at a measured depth (millimeters) to a camera-frame
/// point in meters.  Depth must be positive.
pub fn pixel_to_point(u: f32, v: f32, depth_mm: f32, intr: &CameraIntrinsics) -> Result<[f32; 3]> {
    if !(depth_mm > 0.0) {
        return Err(Error::InvalidDepth(depth_mm));
    }
    let z = depth_mm / 1000.0;
    Ok([(u - intr.cx) * z / intr.fx, (v - intr.cy) * z / intr.fy, z])
}

/// Project a camera-frame point (meters, z > 0) to pixel coordinates.
pub fn project_point(p: [f32; 3], intr: &CameraIntrinsics) -> Result<(f32, f32)> {
    if !(p[2] > 0.0) {
        return Err(Error::InvalidDepth(p[2] * 1000.0));
    }
    Ok((
        intr.fx * p[0] / p[2] + intr.cx,
        intr.fy * p[1] / p[2] + intr.cy,
    ))
}

/// A 6-DoF parallel-jaw grasp: position in camera frame (meters), fixed-frame
/// Euler angles (radians, each in [−π/2, π/2]), jaw width (meters), and a
/// confidence score in [0, 1].
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct GraspPose {
    pub x: f32,
    pub y: f32,
    pub z: f32,
    pub theta: f32,
    pub gamma: f32,
    pub beta: f32,
    pub width: f32,
    pub score: f32,
}

impl GraspPose {
    pub fn rotation(&self) -> [[f64; 3]; 3] {
        euler_to_matrix(self.theta as f64, self.gamma as f64, self.beta as f64)
    }

    pub fn translation(&self) -> [f32; 3] {
        [self.x, self.y, self.z]
    }

    /// Clamp angles/width/score into their declared ranges (used when loading
    /// records from external files).
    pub fn clamped(mut self, w_max: f32) -> GraspPose {
        let half_pi = std::f32::consts::FRAC_PI_2;
        self.theta = self.theta.clamp(-half_pi, half_pi);
        self.gamma = self.gamma.clamp(-half_pi, half_pi);
        self.beta = self.beta.clamp(-half_pi, half_pi);
        self.width = self.width.clamp(0.0, w_max);
        self.score = self.score.clamp(0.0, 1.0);
        self
    }
}

/// Result of factoring a rotation matrix back into Euler angles.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EulerAngles {
    pub theta: f64,
    pub gamma: f64,
    pub beta: f64,
    /// True when |beta| was within 1e-6 of π/2; theta is set to 0 by
    /// convention in that case.
    pub gimbal_locked: bool,
}

/// Compose R = Rz(theta)·Ry(beta)·Rx(gamma).
pub fn euler_to_matrix(theta: f64, gamma: f64, beta: f64) -> [[f64; 3]; 3] {
    let (st, ct) = theta.sin_cos();
    let (sb, cb) = beta.sin_cos();
    let (sg, cg) = gamma.sin_cos();
    [
        [ct * cb, ct * sb * sg - st * cg, ct * sb * cg + st * sg],
        [st * cb, st * sb * sg + ct * cg, st * sb * cg - ct * sg],
        [-sb, cb * sg, cb * cg],
    ]
}

/// Factor a rotation back into (theta, gamma, beta), all in [−π/2, π/2].
///
/// At gimbal lock (|beta| = π/2 within 1e-6) theta and gamma are not
/// separable; the convention here pins theta = 0 and attributes the remaining
/// spin to gamma, with `gimbal_locked` set.
pub fn matrix_to_euler(r: &[[f64; 3]; 3]) -> EulerAngles {
    let sb = (-r[2][0]).clamp(-1.0, 1.0);
    let beta = sb.asin();
    let cb = (1.0 - sb * sb).sqrt();
    if cb < 1e-6 {
        // row 0 collapses to [0, ±sin(gamma∓theta), cos(gamma∓theta)]
        let gamma = if sb > 0.0 {
            r[0][1].atan2(r[0][2])
        } else {
            (-r[0][1]).atan2(r[0][2])
        };
        return EulerAngles {
            theta: 0.0,
            gamma,
            beta,
            gimbal_locked: true,
        };
    }
    EulerAngles {
        theta: r[1][0].atan2(r[0][0]),
        gamma: r[2][1].atan2(r[2][2]),
        beta,
        gimbal_locked: false,
    }
}

/// Geodesic distance between two rotations: arccos((tr(R1ᵀR2) − 1) / 2).
pub fn rotation_distance(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> f64 {
    // trace of aᵀ·b without forming the product
    let mut tr = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            tr += a[j][i] * b[j][i];
        }
    }
    ((tr - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
}

/// Apply a rotation matrix to a vector.
pub fn rotate(r: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        r[0][0] * v[0] + r[0][1] * v[1] + r[0][2] * v[2],
        r[1][0] * v[0] + r[1][1] * v[1] + r[1][2] * v[2],
        r[2][0] * v[0] + r[2][1] * v[1] + r[2][2] * v[2],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn test_intr() -> CameraIntrinsics {
        CameraIntrinsics::new(1000.0, 1000.0, 320.0, 240.0, 640, 480).unwrap()
    }

    #[test]
    fn meshgrid_scaling() {
        // fx = 1000 and u − cx = 1000 gives x = 0.001 — wait, that pixel is
        // outside a 640-wide image, so use a wider synthetic camera.
        let intr = CameraIntrinsics::new(1000.0, 1000.0, 0.0, 0.0, 1100, 2).unwrap();
        let mesh = positional_meshgrid(&intr);
        let x = mesh.data()[1000]; // row 0, u = 1000
        assert!((x - 0.001).abs() < 1e-9, "x = {x}");
    }

    #[test]
    fn principal_point_backprojects_to_axis() {
        let intr = test_intr();
        let p = pixel_to_point(intr.cx, intr.cy, 1000.0, &intr).unwrap();
        assert_eq!(p, [0.0, 0.0, 1.0]);
    }

    #[test]
    fn one_focal_length_off_axis() {
        // u − cx = fx at depth 2000 mm → x = 2.0, z = 2.0
        let intr = test_intr();
        let p = pixel_to_point(intr.cx + intr.fx, intr.cy, 2000.0, &intr).unwrap();
        assert!((p[0] - 2.0).abs() < 1e-6);
        assert!((p[2] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn zero_depth_rejected() {
        let intr = test_intr();
        assert!(matches!(
            pixel_to_point(10.0, 10.0, 0.0, &intr),
            Err(Error::InvalidDepth(_))
        ));
    }

    #[test]
    fn project_inverts_backproject() {
        let intr = test_intr();
        for (u, v, d) in [(12.5, 400.0, 512.0), (600.0, 3.0, 2345.0)] {
            let p = pixel_to_point(u, v, d, &intr).unwrap();
            let (u2, v2) = project_point(p, &intr).unwrap();
            assert!((u - u2).abs() < 1e-3 && (v - v2).abs() < 1e-3);
        }
    }

    #[test]
    fn euler_round_trip() {
        for &(t, g, b) in &[
            (0.3, -0.7, 1.1),
            (-1.5, 1.5, -1.5),
            (0.0, 0.0, 0.0),
            (1.2, -0.2, 0.4),
        ] {
            let r = euler_to_matrix(t, g, b);
            let e = matrix_to_euler(&r);
            assert!(!e.gimbal_locked);
            assert!((e.theta - t).abs() < 1e-6, "theta {t}");
            assert!((e.gamma - g).abs() < 1e-6, "gamma {g}");
            assert!((e.beta - b).abs() < 1e-6, "beta {b}");
        }
    }

    #[test]
    fn gimbal_lock_pins_theta() {
        let r = euler_to_matrix(0.4, 0.2, FRAC_PI_2);
        let e = matrix_to_euler(&r);
        assert!(e.gimbal_locked);
        assert_eq!(e.theta, 0.0);
        // the matrix is still reproduced by the reported angles
        let r2 = euler_to_matrix(e.theta, e.gamma, e.beta);
        for i in 0..3 {
            for j in 0..3 {
                assert!((r[i][j] - r2[i][j]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn rotation_distance_basics() {
        let id = euler_to_matrix(0.0, 0.0, 0.0);
        let quarter = euler_to_matrix(FRAC_PI_2, 0.0, 0.0);
        assert!(rotation_distance(&id, &id) < 1e-9);
        assert!((rotation_distance(&id, &quarter) - FRAC_PI_2).abs() < 1e-9);
        // conjugation invariance: same relative rotation after a shared pre-twist
        let a = euler_to_matrix(0.3, 0.5, -0.2);
        let d1 = rotation_distance(&a, &a);
        assert!(d1 < 1e-9);
    }

    #[test]
    fn network_input_layout() {
        let intr = CameraIntrinsics::new(100.0, 100.0, 2.0, 1.5, 4, 3).unwrap();
        let rgb = Tensor::full(&[3, 3, 4], 0.25);
        let depth = Tensor::full(&[1, 3, 4], 500.0);
        let frame = ImageFrame::new(rgb, depth, intr).unwrap();
        let input = make_network_input(&frame);
        assert_eq!(input.shape(), &[6, 3, 4]);
        assert_eq!(input.data()[0], 0.25); // rgb first
        assert_eq!(input.data()[3 * 12], 0.5); // depth in meters
        let mesh = positional_meshgrid(&intr);
        assert_eq!(input.data()[4 * 12], mesh.data()[0]);
    }

    #[test]
    fn frame_validation_rejects_out_of_range() {
        let intr = CameraIntrinsics::new(100.0, 100.0, 2.0, 1.5, 4, 3).unwrap();
        let bad_rgb = Tensor::full(&[3, 3, 4], 1.5);
        let depth = Tensor::full(&[1, 3, 4], 500.0);
        assert!(ImageFrame::new(bad_rgb, depth, intr).is_err());
    }
}
