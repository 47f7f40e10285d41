//! Rough pile detection: geofence filter, ground removal, clustering, size
//! filter, and a PCA pose for the surviving cluster.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{
    euclidean_cluster, fit_plane_ransac, pca, Frame, PointCloud, Pose3,
};

/// Axis-aligned search rectangle in world xy.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Geofence {
    pub min: Vector2<f64>,
    pub max: Vector2<f64>,
}

impl Geofence {
    pub fn new(min: Vector2<f64>, max: Vector2<f64>) -> Result<Self> {
        if max.x <= min.x || max.y <= min.y {
            return Err(Error::Degenerate("geofence must have positive area"));
        }
        Ok(Geofence { min, max })
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    pub fn center(&self) -> Vector2<f64> {
        (self.min + self.max) / 2.0
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct PileParams {
    pub ransac_threshold: f64,
    pub ransac_iterations: usize,
    /// Points closer than this to the fitted ground plane are discarded.
    pub near_plane_dist: f64,
    pub cluster_tolerance: f64,
    pub min_cluster_size: usize,
    /// Expected pile footprint (long, short), meters.
    pub expected_footprint: (f64, f64),
    /// Accepted bounding-box extents relative to the expected footprint.
    pub size_window: (f64, f64),
    pub rng_seed: u64,
}

impl Default for PileParams {
    fn default() -> Self {
        PileParams {
            ransac_threshold: 0.02,
            ransac_iterations: 300,
            near_plane_dist: 0.05,
            cluster_tolerance: 0.30,
            min_cluster_size: 30,
            expected_footprint: (2.5, 1.5),
            size_window: (0.5, 1.5),
            rng_seed: 0,
        }
    }
}

/// Per-stage candidate counts, reported with NotFound outcomes.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct PileDiagnostics {
    pub input: usize,
    pub after_fence: usize,
    pub after_ground_removal: usize,
    pub clusters: usize,
    pub clusters_in_window: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PileDetection {
    /// x-axis along the projected principal axis, z up, origin at the
    /// cluster centroid projected onto the fitted ground plane.
    pub pose: Pose3,
    pub cluster_size: usize,
    /// Cluster bounding-box extents in the pile frame (long, short).
    pub extents: (f64, f64),
}

/// Detect the brick pile in a world-frame scan.
///
/// Pipeline: geofence filter, RANSAC ground fit, near-plane removal,
/// Euclidean clustering, expected-size window, PCA pose of the best
/// surviving cluster. The x-axis sign is chosen to point away from the
/// robot (angle to the robot-to-centroid direction at most 90 degrees).
pub fn detect_pile(
    scan: &PointCloud,
    fence: &Geofence,
    robot_pose: &Pose3,
    params: &PileParams,
) -> Result<PileDetection> {
    let mut diag = PileDiagnostics {
        input: scan.len(),
        ..Default::default()
    };

    let fenced_idx = scan.indices_where(|p| fence.contains(p));
    diag.after_fence = fenced_idx.len();
    let fenced = scan.select(&fenced_idx);
    if fenced.len() < 3 {
        return Err(Error::PileNotFound(diag));
    }

    let plane = fit_plane_ransac(
        &fenced,
        params.ransac_threshold,
        params.ransac_iterations,
        params.rng_seed,
    )?;
    let off_plane_idx = fenced.indices_where(|p| plane.distance(p) > params.near_plane_dist);
    diag.after_ground_removal = off_plane_idx.len();
    let above = fenced.select(&off_plane_idx);

    let clusters = euclidean_cluster(&above, params.cluster_tolerance, params.min_cluster_size);
    diag.clusters = clusters.len();

    let (lo, hi) = params.size_window;
    let (exp_long, exp_short) = (
        params.expected_footprint.0.max(params.expected_footprint.1),
        params.expected_footprint.0.min(params.expected_footprint.1),
    );
    let mut survivors = Vec::new();
    for cluster in &clusters {
        let (ext_long, ext_short) = xy_extents(cluster);
        if ext_long >= lo * exp_long
            && ext_long <= hi * exp_long
            && ext_short >= lo * exp_short
            && ext_short <= hi * exp_short
        {
            survivors.push((cluster, (ext_long, ext_short)));
        }
    }
    diag.clusters_in_window = survivors.len();

    let fence_center = fence.center();
    let best = survivors.into_iter().max_by(|(a, _), (b, _)| {
        a.len().cmp(&b.len()).then_with(|| {
            let da = (centroid_xy(a) - fence_center).norm();
            let db = (centroid_xy(b) - fence_center).norm();
            db.total_cmp(&da) // closer to the fence center wins
        })
    });
    let Some((cluster, extents)) = best else {
        return Err(Error::PileNotFound(diag));
    };

    let p = pca(&cluster.points)?;
    let mut axis = Vector2::new(p.axes[0].x, p.axes[0].y);
    if axis.norm() < 1e-9 {
        // vertical principal axis: fall back to the second component
        axis = Vector2::new(p.axes[1].x, p.axes[1].y);
    }
    let mut axis = axis.normalize();
    let centroid = p.centroid;
    let robot_xy = Vector2::new(robot_pose.translation.x, robot_pose.translation.y);
    let to_pile = Vector2::new(centroid.x, centroid.y) - robot_xy;
    if axis.dot(&to_pile) < 0.0 {
        axis = -axis;
    }
    let origin_z = plane.z_at(centroid.x, centroid.y).unwrap_or(0.0);
    let pose = Pose3::from_yaw(
        axis.y.atan2(axis.x),
        Vector3::new(centroid.x, centroid.y, origin_z),
        Frame::Pile,
        Frame::World,
    );
    Ok(PileDetection {
        pose,
        cluster_size: cluster.len(),
        extents,
    })
}

fn centroid_xy(cloud: &PointCloud) -> Vector2<f64> {
    let mut c = Vector2::zeros();
    for p in &cloud.points {
        c += Vector2::new(p.x, p.y);
    }
    c / cloud.len() as f64
}

/// Axis-aligned xy bounding-box extents, (long, short).
fn xy_extents(cloud: &PointCloud) -> (f64, f64) {
    let mut lo = Vector2::repeat(f64::INFINITY);
    let mut hi = Vector2::repeat(f64::NEG_INFINITY);
    for p in &cloud.points {
        lo.x = lo.x.min(p.x);
        lo.y = lo.y.min(p.y);
        hi.x = hi.x.max(p.x);
        hi.y = hi.y.max(p.y);
    }
    let d = hi - lo;
    (d.x.max(d.y), d.x.min(d.y))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fence_rejects_outside_points() {
        let fence = Geofence::new(Vector2::new(0.0, 0.0), Vector2::new(1.0, 1.0)).unwrap();
        assert!(fence.contains(&Vector3::new(0.5, 0.5, 3.0)));
        assert!(!fence.contains(&Vector3::new(1.5, 0.5, 0.0)));
    }

    #[test]
    fn degenerate_fence_is_rejected() {
        assert!(Geofence::new(Vector2::new(1.0, 0.0), Vector2::new(1.0, 2.0)).is_err());
    }
}
