//! Scan preprocessing ahead of rough alignment: crop, downsample, ground
//! removal, normal estimation.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{estimate_normals, fit_plane_ransac, voxel_downsample, PointCloud, Pose3};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessParams {
    /// RANSAC inlier threshold for the ground fit.
    pub ground_threshold: f64,
    /// Points within this distance of the fitted plane are removed.
    pub ground_removal_dist: f64,
    pub ransac_iterations: usize,
    pub normal_radius: f64,
    pub rng_seed: u64,
}

impl Default for PreprocessParams {
    fn default() -> Self {
        PreprocessParams {
            ground_threshold: 0.02,
            ground_removal_dist: 0.04,
            ransac_iterations: 300,
            normal_radius: 0.06,
            rng_seed: 0,
        }
    }
}

/// Prepare a raw scan for registration, in order: crop a cubic region of
/// half edge `cube_half_extent` around `center`, downsample to voxel
/// resolution `voxel`, remove the RANSAC ground plane, and estimate normals
/// flipped toward `viewpoint` (the scanner position).
pub fn preprocess_scan(
    scan: &PointCloud,
    center: &Pose3,
    cube_half_extent: f64,
    voxel: f64,
    viewpoint: &Vector3<f64>,
    params: &PreprocessParams,
) -> Result<PointCloud> {
    if scan.is_empty() {
        return Err(Error::EmptyAfterPreprocess);
    }
    let c = center.translation;
    let idx = scan.indices_where(|p| {
        (p.x - c.x).abs() <= cube_half_extent
            && (p.y - c.y).abs() <= cube_half_extent
            && (p.z - c.z).abs() <= cube_half_extent
    });
    let cropped = scan.select(&idx);
    if cropped.len() < 3 {
        return Err(Error::EmptyAfterPreprocess);
    }

    let down = voxel_downsample(&cropped, voxel);

    let plane = fit_plane_ransac(
        &down,
        params.ground_threshold,
        params.ransac_iterations,
        params.rng_seed,
    )
    .map_err(|_| Error::EmptyAfterPreprocess)?;
    let keep = down.indices_where(|p| plane.distance(p) > params.ground_removal_dist);
    let above = down.select(&keep);
    if above.is_empty() {
        return Err(Error::EmptyAfterPreprocess);
    }

    let with_normals = estimate_normals(&above, params.normal_radius, viewpoint);
    if with_normals.is_empty() {
        return Err(Error::EmptyAfterPreprocess);
    }
    Ok(with_normals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Frame;

    #[test]
    fn empty_scan_is_an_error() {
        let scan = PointCloud::default();
        let center = Pose3::identity(Frame::Base);
        assert!(matches!(
            preprocess_scan(&scan, &center, 2.0, 0.02, &Vector3::zeros(), &Default::default()),
            Err(Error::EmptyAfterPreprocess)
        ));
    }

    #[test]
    fn ground_only_scan_is_an_error() {
        let mut pts = Vec::new();
        for i in 0..40 {
            for j in 0..40 {
                pts.push(Vector3::new(i as f64 * 0.05 - 1.0, j as f64 * 0.05 - 1.0, 0.0));
            }
        }
        let scan = PointCloud::from_points(pts);
        let center = Pose3::identity(Frame::Base);
        assert!(matches!(
            preprocess_scan(&scan, &center, 2.0, 0.02, &Vector3::new(0.0, 0.0, 2.0), &Default::default()),
            Err(Error::EmptyAfterPreprocess)
        ));
    }
}
