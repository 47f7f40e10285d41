//! Synthetic sensing: analytic depth ray casting of box scenes and
//! flat-shaded RGB frames, replacing rendered sensor data with exact
//! geometry so tests can assert against ground truth.

mod raycast;
mod rgb;

use nalgebra::{UnitQuaternion, Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::geom::{Frame, Pose3};

pub use raycast::{
    raycast_boxes, raycast_scan, render_model_cloud, split_brick_clouds, BoxShape,
};
pub use rgb::{render_rgb, RgbImage};

/// Range sensor: one ray per pixel over an azimuth/elevation grid.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct SensorModel {
    pub pose: Pose3,
    pub h_fov: f64,
    pub v_fov: f64,
    /// (columns, rows)
    pub resolution: (u32, u32),
    pub range_noise_sigma: f64,
    pub dropout_prob: f64,
}

impl SensorModel {
    /// Desk-scale default: 400x400 rays, 90 degree cones, VLP-16-like noise.
    pub fn default_at(pose: Pose3) -> Self {
        SensorModel {
            pose,
            h_fov: 90f64.to_radians(),
            v_fov: 90f64.to_radians(),
            resolution: (400, 400),
            range_noise_sigma: 0.008,
            dropout_prob: 0.02,
        }
    }

    pub fn validate(&self) {
        assert!(self.h_fov > 0.0 && self.h_fov < std::f64::consts::PI);
        assert!(self.v_fov > 0.0 && self.v_fov < std::f64::consts::PI);
        assert!(self.resolution.0 >= 1 && self.resolution.1 >= 1);
        assert!((0.0..=1.0).contains(&self.dropout_prob));
    }
}

/// Pinhole camera; sensor frame is z forward, x right, y down.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// (columns, rows)
    pub resolution: (u32, u32),
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        CameraIntrinsics {
            fx: 930.0,
            fy: 930.0,
            cx: 640.0,
            cy: 360.0,
            resolution: (1280, 720),
        }
    }
}

impl CameraIntrinsics {
    pub fn project(&self, p_cam: &Vector3<f64>) -> Option<Vector2<f64>> {
        if p_cam.z <= 1e-9 {
            return None;
        }
        Some(Vector2::new(
            self.fx * p_cam.x / p_cam.z + self.cx,
            self.fy * p_cam.y / p_cam.z + self.cy,
        ))
    }
}

/// Sensor pose with the boresight (+z) aimed from `eye` at `target`,
/// x kept horizontal.
pub fn pose_looking_at(eye: Vector3<f64>, target: Vector3<f64>, from: Frame, to: Frame) -> Pose3 {
    let z = (target - eye)
        .try_normalize(1e-12)
        .expect("eye and target coincide");
    let up = Vector3::z();
    let x = z
        .cross(&up)
        .try_normalize(1e-9)
        .unwrap_or_else(|| Vector3::x());
    let y = z.cross(&x);
    let rot = nalgebra::Rotation3::from_matrix_unchecked(nalgebra::Matrix3::from_columns(&[
        x, y, z,
    ]));
    Pose3::new(UnitQuaternion::from_rotation_matrix(&rot), eye, from, to)
}

/// Ground-projected point samples of an L-marker footprint: long leg along
/// +x and short leg along +y of the marker frame, meeting at the origin.
pub fn sample_l_footprint(
    pose: &Pose3,
    leg_long: f64,
    leg_short: f64,
    arm_width: f64,
    spacing: f64,
    jitter_sigma: f64,
    seed: u64,
) -> Vec<Vector2<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = Normal::new(0.0, jitter_sigma.max(1e-12)).unwrap();
    let mut out = Vec::new();
    let mut emit = |x: f64, y: f64, rng: &mut ChaCha8Rng| {
        let mut w = pose.apply(&Vector3::new(x, y, 0.0));
        if jitter_sigma > 0.0 {
            w.x += jitter.sample(rng);
            w.y += jitter.sample(rng);
        }
        out.push(Vector2::new(w.x, w.y));
    };
    let steps = |len: f64| (len / spacing).round() as usize;
    for i in 0..=steps(leg_long) {
        for j in 0..=steps(arm_width) {
            emit(i as f64 * spacing, j as f64 * spacing, &mut rng);
        }
    }
    for j in 0..=steps(leg_short) {
        let y = j as f64 * spacing;
        if y <= arm_width + 1e-9 {
            continue; // covered by the long-leg rectangle
        }
        for i in 0..=steps(arm_width) {
            emit(i as f64 * spacing, y, &mut rng);
        }
    }
    out
}

/// Deterministic per-pixel RNG: noise is keyed by pixel index, not by
/// iteration order, so parallel implementations stay seed-stable.
pub(crate) fn pixel_rng(seed: u64, pixel_index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(pixel_index)))
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}
