//! Wall-segment localization from side-camera depth and the cone-of-descent
//! gate used during grasping and placement.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{fit_lines_ransac, Frame, Line2, PointCloud, Pose3};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct WallSearchParams {
    /// Only points inside this height band (m above ground) are used.
    pub height_band: (f64, f64),
    /// Nominal segment length (m).
    pub segment_length: f64,
    /// Required distance between the parallel segment pair (m).
    pub pair_distance: f64,
    pub pair_distance_tol: f64,
    /// Maximum angle between the pair's directions (rad).
    pub parallel_tol: f64,
    /// Minimum detected extent for a valid segment (m).
    pub min_extent: f64,
    pub line_threshold: f64,
    pub line_min_inliers: usize,
    pub max_lines: usize,
    pub rng_seed: u64,
}

impl Default for WallSearchParams {
    fn default() -> Self {
        WallSearchParams {
            height_band: (1.0, 1.7),
            segment_length: 4.0,
            pair_distance: 4.0,
            pair_distance_tol: 0.3,
            parallel_tol: 5f64.to_radians(),
            min_extent: 2.0,
            line_threshold: 0.05,
            line_min_inliers: 40,
            max_lines: 6,
            rng_seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ConeParams {
    /// Cone half-angle (rad).
    pub cone_angle: f64,
    /// Hysteresis subtracted from the angle for re-entry while locked (rad).
    pub hysteresis: f64,
    /// Admission radius at the target height (m).
    pub target_radius: f64,
}

impl Default for ConeParams {
    fn default() -> Self {
        ConeParams {
            cone_angle: 10f64.to_radians(),
            hysteresis: 3f64.to_radians(),
            target_radius: 0.09,
        }
    }
}

/// Descent-gate state: once the UAV drifts outside the cone it stays locked
/// (holding height) until it re-enters the tighter hysteresis cone.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConeState {
    pub locked: bool,
}

/// Robust height above ground from a downward depth cloud in the UAV frame
/// (z up, UAV at the origin): the ground is the lowest surface mode of a
/// 0.1 m histogram, its height the median of the mode's points.
pub fn estimate_height(down_cloud: &PointCloud) -> Result<f64> {
    if down_cloud.is_empty() {
        return Err(Error::TooFewPoints { needed: 1, got: 0 });
    }
    const BIN: f64 = 0.1;
    // depth below the UAV
    let depths: Vec<f64> = down_cloud.points.iter().map(|p| -p.z).collect();
    let max_depth = depths.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let bins = ((max_depth / BIN).floor() as i64 + 1).max(1) as usize;
    let mut counts = vec![0usize; bins];
    for d in &depths {
        if *d >= 0.0 {
            counts[(d / BIN) as usize] += 1;
        }
    }
    let peak = *counts.iter().max().unwrap();
    if peak == 0 {
        return Err(Error::Degenerate("no points below the UAV"));
    }
    // deepest bin with substantial support: the ground, not obstacle tops
    let threshold = (peak as f64 * 0.2).max(3.0) as usize;
    let ground_bin = (0..bins)
        .rev()
        .find(|&b| counts[b] >= threshold)
        .ok_or(Error::Degenerate("no ground mode"))?;
    let lo = ground_bin as f64 * BIN - 0.05;
    let hi = (ground_bin + 1) as f64 * BIN + 0.05;
    let mut in_mode: Vec<f64> = depths.iter().cloned().filter(|d| *d >= lo && *d <= hi).collect();
    in_mode.sort_by(f64::total_cmp);
    Ok(in_mode[in_mode.len() / 2])
}

/// Locate the wall from world-frame clouds: band-filter by height, project
/// to 2-D, extract RANSAC lines, and accept a near-parallel pair at the
/// expected spacing. The pose sits on the pair midline, oriented toward
/// `search_pose` (the wall is assumed not to have rotated 180 degrees).
/// `height` is the estimated flight height; points are expected already
/// lifted into the world frame by the caller.
pub fn detect_wall(
    clouds: &[PointCloud],
    height: f64,
    search_pose: &Pose3,
    params: &WallSearchParams,
) -> Result<Pose3> {
    let _ = height;
    let (z_lo, z_hi) = params.height_band;
    let mut pts2 = Vec::new();
    for cloud in clouds {
        for p in &cloud.points {
            if p.z >= z_lo && p.z <= z_hi {
                pts2.push(Vector2::new(p.x, p.y));
            }
        }
    }
    let lines: Vec<Line2> = fit_lines_ransac(
        &pts2,
        params.line_threshold,
        params.line_min_inliers,
        params.max_lines,
        params.rng_seed,
    )
    .into_iter()
    .filter(|l| l.extent_length() >= params.min_extent)
    .collect();

    let mut best: Option<(f64, usize, usize)> = None;
    for i in 0..lines.len() {
        for j in (i + 1)..lines.len() {
            let cos = lines[i].direction.dot(&lines[j].direction).abs();
            if cos.clamp(-1.0, 1.0).acos() > params.parallel_tol {
                continue;
            }
            let gap = lines[i].distance(&lines[j].midpoint());
            let err = (gap - params.pair_distance).abs();
            if err > params.pair_distance_tol {
                continue;
            }
            if best.map_or(true, |(e, _, _)| err < e) {
                best = Some((err, i, j));
            }
        }
    }
    let Some((_, i, j)) = best else {
        return Err(Error::WallNotFound);
    };

    let (a, b) = (&lines[i], &lines[j]);
    let mut dir_b = b.direction;
    if a.direction.dot(&dir_b) < 0.0 {
        dir_b = -dir_b;
    }
    let mut dir = (a.direction + dir_b).normalize();
    let center = (a.midpoint() + b.midpoint()) / 2.0;
    let search_x = search_pose.rotate(&Vector3::x());
    if dir.x * search_x.x + dir.y * search_x.y < 0.0 {
        dir = -dir;
    }
    Ok(Pose3::from_yaw(
        dir.y.atan2(dir.x),
        Vector3::new(center.x, center.y, 0.0),
        Frame::Wall,
        Frame::World,
    ))
}

/// Project the goal onto the detected segment closest to it: orthogonal
/// projection onto the segment line, clamped to the segment extent, height
/// preserved.
pub fn project_goal(
    wall: &Pose3,
    target: &Vector3<f64>,
    segments: &[Line2],
) -> Vector3<f64> {
    let _ = wall;
    assert!(!segments.is_empty(), "project_goal needs detected segments");
    let t2 = Vector2::new(target.x, target.y);
    let closest = segments
        .iter()
        .min_by(|a, b| {
            let da = (a.point_at(a.project_param(&t2).clamp(a.extent.0, a.extent.1)) - t2).norm();
            let db = (b.point_at(b.project_param(&t2).clamp(b.extent.0, b.extent.1)) - t2).norm();
            da.total_cmp(&db)
        })
        .unwrap();
    let s = closest
        .project_param(&t2)
        .clamp(closest.extent.0, closest.extent.1);
    let p = closest.point_at(s);
    Vector3::new(p.x, p.y, target.z)
}

/// Admission radius of the descent cone at height `h` above the target for
/// the given half-angle.
pub fn admission_radius(h: f64, angle: f64, params: &ConeParams) -> f64 {
    params.target_radius + h * angle.tan()
}

/// Descent gate with hysteresis: when unlocked, descending is allowed while
/// the horizontal offset `r` stays inside the cone; a violation locks the
/// gate, and it unlocks only when `r` re-enters the cone shrunk by the
/// hysteresis angle.
pub fn cone_gate(
    state: ConeState,
    horizontal_offset: f64,
    height_above_target: f64,
    params: &ConeParams,
) -> (bool, ConeState) {
    debug_assert!(horizontal_offset >= 0.0 && height_above_target >= 0.0);
    if !state.locked {
        if horizontal_offset <= admission_radius(height_above_target, params.cone_angle, params) {
            (true, ConeState { locked: false })
        } else {
            (false, ConeState { locked: true })
        }
    } else if horizontal_offset
        <= admission_radius(
            height_above_target,
            params.cone_angle - params.hysteresis,
            params,
        )
    {
        (true, ConeState { locked: false })
    } else {
        (false, ConeState { locked: true })
    }
}
