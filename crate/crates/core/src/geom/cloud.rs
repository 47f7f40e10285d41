//! Point clouds and the two density/attribute filters used by every scan
//! consumer: voxel downsampling and normal estimation.

use std::collections::BTreeMap;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geom::index::SpatialGrid;
use crate::geom::Pose3;

/// Label value marking ground points. Brick points carry their brick id (>= 0).
pub const GROUND_LABEL: i32 = -1;

/// Points with optional per-point unit normals and integer source labels.
#[derive(Clone, Debug, Default, serde::Serialize, serde::Deserialize)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub normals: Option<Vec<Vector3<f64>>>,
    pub labels: Option<Vec<i32>>,
}

impl PointCloud {
    pub fn from_points(points: Vec<Vector3<f64>>) -> Self {
        Self {
            points,
            normals: None,
            labels: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Check the cardinality and unit-norm invariants.
    pub fn validate(&self) -> Result<()> {
        if let Some(normals) = &self.normals {
            if normals.len() != self.points.len() {
                return Err(Error::Degenerate("normal count differs from point count"));
            }
            if normals.iter().any(|n| (n.norm() - 1.0).abs() > 1e-6) {
                return Err(Error::Degenerate("normals are not unit length"));
            }
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.points.len() {
                return Err(Error::Degenerate("label count differs from point count"));
            }
        }
        Ok(())
    }

    /// New cloud holding the selected indices (attributes carried along).
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|ns| indices.iter().map(|&i| ns[i]).collect()),
            labels: self
                .labels
                .as_ref()
                .map(|ls| indices.iter().map(|&i| ls[i]).collect()),
        }
    }

    /// Indices whose points satisfy `keep`.
    pub fn indices_where(&self, mut keep: impl FnMut(&Vector3<f64>) -> bool) -> Vec<usize> {
        (0..self.len()).filter(|&i| keep(&self.points[i])).collect()
    }

    /// Cloud transformed by `pose` (normals rotated).
    pub fn transformed(&self, pose: &Pose3) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| pose.apply(p)).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|ns| ns.iter().map(|n| pose.rotate(n)).collect()),
            labels: self.labels.clone(),
        }
    }

    pub fn extend(&mut self, other: &PointCloud) {
        debug_assert_eq!(self.normals.is_some(), other.normals.is_some() || other.is_empty());
        self.points.extend_from_slice(&other.points);
        if let (Some(a), Some(b)) = (self.normals.as_mut(), other.normals.as_ref()) {
            a.extend_from_slice(b);
        }
        if let (Some(a), Some(b)) = (self.labels.as_mut(), other.labels.as_ref()) {
            a.extend_from_slice(b);
        }
    }
}

fn voxel_key(p: &Vector3<f64>, d: f64) -> (i64, i64, i64) {
    (
        (p.x / d).floor() as i64,
        (p.y / d).floor() as i64,
        (p.z / d).floor() as i64,
    )
}

struct VoxelAcc {
    sum: Vector3<f64>,
    normal_sum: Vector3<f64>,
    count: usize,
    // label -> count, few labels per voxel in practice
    label_counts: BTreeMap<i32, usize>,
}

/// Reduce to at most one point per voxel of edge `d` (centroid of members).
///
/// Labels are propagated by majority (ties to the smaller label); normals are
/// averaged and renormalized, dropped if they cancel. Output order follows
/// voxel keys, so the result is deterministic.
pub fn voxel_downsample(cloud: &PointCloud, d: f64) -> PointCloud {
    assert!(d > 0.0, "voxel resolution must be positive");
    let mut voxels: BTreeMap<(i64, i64, i64), VoxelAcc> = BTreeMap::new();
    for (i, p) in cloud.points.iter().enumerate() {
        let acc = voxels.entry(voxel_key(p, d)).or_insert_with(|| VoxelAcc {
            sum: Vector3::zeros(),
            normal_sum: Vector3::zeros(),
            count: 0,
            label_counts: BTreeMap::new(),
        });
        acc.sum += p;
        acc.count += 1;
        if let Some(ns) = &cloud.normals {
            acc.normal_sum += ns[i];
        }
        if let Some(ls) = &cloud.labels {
            *acc.label_counts.entry(ls[i]).or_insert(0) += 1;
        }
    }

    let mut out = PointCloud {
        points: Vec::with_capacity(voxels.len()),
        normals: cloud.normals.as_ref().map(|_| Vec::with_capacity(voxels.len())),
        labels: cloud.labels.as_ref().map(|_| Vec::with_capacity(voxels.len())),
    };
    for acc in voxels.values() {
        let centroid = acc.sum / acc.count as f64;
        let normal = acc.normal_sum.try_normalize(1e-12);
        if out.normals.is_some() && normal.is_none() {
            // members with cancelling normals: no meaningful direction left
            continue;
        }
        out.points.push(centroid);
        if let Some(ns) = out.normals.as_mut() {
            ns.push(normal.unwrap());
        }
        if let Some(ls) = out.labels.as_mut() {
            let best = acc
                .label_counts
                .iter()
                .max_by_key(|(label, count)| (**count, std::cmp::Reverse(**label)))
                .map(|(label, _)| *label)
                .unwrap();
            ls.push(best);
        }
    }
    out
}

/// Estimate per-point normals from local covariance within `radius`.
///
/// The normal is the smallest-eigenvalue direction, sign-flipped so that
/// `n · (viewpoint − p) ≥ 0`. Points with fewer than 3 points in their
/// neighborhood are dropped.
pub fn estimate_normals(cloud: &PointCloud, radius: f64, viewpoint: &Vector3<f64>) -> PointCloud {
    assert!(radius > 0.0, "normal estimation radius must be positive");
    let grid = SpatialGrid::build(&cloud.points, radius);
    let mut kept = Vec::new();
    let mut normals = Vec::new();
    let mut scratch = Vec::new();
    for (i, p) in cloud.points.iter().enumerate() {
        scratch.clear();
        grid.radius_indices_into(p, radius, &mut scratch);
        if scratch.len() < 3 {
            continue;
        }
        let mut mean = Vector3::zeros();
        for &j in &scratch {
            mean += cloud.points[j];
        }
        mean /= scratch.len() as f64;
        let mut cov = nalgebra::Matrix3::zeros();
        for &j in &scratch {
            let d = cloud.points[j] - mean;
            cov += d * d.transpose();
        }
        let eig = cov.symmetric_eigen();
        // smallest eigenvalue's eigenvector
        let mut min_idx = 0;
        for k in 1..3 {
            if eig.eigenvalues[k] < eig.eigenvalues[min_idx] {
                min_idx = k;
            }
        }
        let mut n = eig.eigenvectors.column(min_idx).into_owned();
        let norm = n.norm();
        if norm < 1e-12 {
            continue;
        }
        n /= norm;
        if n.dot(&(viewpoint - p)) < 0.0 {
            n = -n;
        }
        kept.push(i);
        normals.push(n);
    }
    let mut out = cloud.select(&kept);
    out.normals = Some(normals);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn voxel_merges_points_in_one_cell() {
        let c = PointCloud::from_points(vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(0.005, 0.0, 0.0),
        ]);
        let out = voxel_downsample(&c, 0.02);
        assert_eq!(out.len(), 1);
        assert!((out.points[0] - Vector3::new(0.0025, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn voxel_keeps_distinct_cells() {
        let c = PointCloud::from_points(vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(0.03, 0.0, 0.0),
        ]);
        assert_eq!(voxel_downsample(&c, 0.02).len(), 2);
    }

    #[test]
    fn voxel_count_bounded_by_grid() {
        // uniform points in the unit cube cannot exceed 50^3 voxels at d=0.02
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let pts: Vec<_> = (0..100_000)
            .map(|_| Vector3::new(rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()))
            .collect();
        let out = voxel_downsample(&PointCloud::from_points(pts), 0.02);
        assert!(out.len() <= 50usize.pow(3) + 51 * 51 * 3); // boundary cells at 1.0
    }

    #[test]
    fn voxel_label_majority() {
        let mut c = PointCloud::from_points(vec![
            Vector3::new(0.001, 0.0, 0.0),
            Vector3::new(0.002, 0.0, 0.0),
            Vector3::new(0.003, 0.0, 0.0),
        ]);
        c.labels = Some(vec![2, 2, GROUND_LABEL]);
        let out = voxel_downsample(&c, 0.02);
        assert_eq!(out.labels.as_ref().unwrap(), &vec![2]);
    }

    #[test]
    fn plane_normals_point_to_viewpoint() {
        let mut pts = Vec::new();
        for i in 0..20 {
            for j in 0..20 {
                pts.push(Vector3::new(i as f64 * 0.05, j as f64 * 0.05, 0.0));
            }
        }
        let c = PointCloud::from_points(pts);
        let up = estimate_normals(&c, 0.12, &Vector3::new(0.0, 0.0, 5.0));
        assert_eq!(up.len(), c.len());
        for n in up.normals.as_ref().unwrap() {
            assert!((n - Vector3::new(0.0, 0.0, 1.0)).norm() < 1e-9);
        }
        let down = estimate_normals(&c, 0.12, &Vector3::new(0.0, 0.0, -5.0));
        for n in down.normals.as_ref().unwrap() {
            assert!((n - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-9);
        }
    }

    #[test]
    fn sphere_normals_are_radial() {
        // Fibonacci sphere sampling
        let n = 2000;
        let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
        let pts: Vec<_> = (0..n)
            .map(|i| {
                let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                let r = (1.0 - y * y).sqrt();
                let th = golden * i as f64;
                Vector3::new(r * th.cos(), y, r * th.sin())
            })
            .collect();
        let c = PointCloud::from_points(pts);
        let out = estimate_normals(&c, 0.15, &Vector3::zeros());
        assert!(!out.is_empty());
        for (p, n) in out.points.iter().zip(out.normals.as_ref().unwrap()) {
            let radial = p.normalize();
            // flipped toward the center, so n ≈ -p̂
            assert!(n.dot(&radial) < 0.0);
            assert!((n.dot(&radial).abs() - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn isolated_points_are_dropped() {
        let c = PointCloud::from_points(vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(10.0, 0.0, 0.0),
        ]);
        let out = estimate_normals(&c, 0.1, &Vector3::new(0.0, 0.0, 1.0));
        assert!(out.is_empty());
    }
}
