//! Euclidean clustering and principal-component analysis.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geom::index::SpatialGrid;
use crate::geom::PointCloud;

/// Connected components of the graph linking points closer than `tolerance`;
/// components smaller than `min_size` are discarded. Clusters come out in
/// order of their first member, members in input order.
pub fn euclidean_cluster(
    cloud: &PointCloud,
    tolerance: f64,
    min_size: usize,
) -> Vec<PointCloud> {
    cluster_indices(&cloud.points, tolerance)
        .into_iter()
        .filter(|c| c.len() >= min_size)
        .map(|c| cloud.select(&c))
        .collect()
}

pub(crate) fn cluster_indices(points: &[Vector3<f64>], tolerance: f64) -> Vec<Vec<usize>> {
    assert!(tolerance > 0.0);
    let grid = SpatialGrid::build(points, tolerance);
    let mut visited = vec![false; points.len()];
    let mut clusters = Vec::new();
    let mut neighbors = Vec::new();
    for seed in 0..points.len() {
        if visited[seed] {
            continue;
        }
        visited[seed] = true;
        let mut cluster = vec![seed];
        let mut cursor = 0;
        while cursor < cluster.len() {
            let p = points[cluster[cursor]];
            cursor += 1;
            neighbors.clear();
            grid.radius_indices_into(&p, tolerance, &mut neighbors);
            for &j in &neighbors {
                if !visited[j] {
                    visited[j] = true;
                    cluster.push(j);
                }
            }
        }
        cluster.sort_unstable();
        clusters.push(cluster);
    }
    clusters
}

/// Principal axes (descending eigenvalue) of the centered covariance.
#[derive(Clone, Copy, Debug)]
pub struct Pca3 {
    pub axes: [Vector3<f64>; 3],
    pub eigenvalues: [f64; 3],
    pub centroid: Vector3<f64>,
}

pub fn pca(points: &[Vector3<f64>]) -> Result<Pca3> {
    if points.len() < 2 {
        return Err(Error::TooFewPoints {
            needed: 2,
            got: points.len(),
        });
    }
    let mut mean = Vector3::zeros();
    for p in points {
        mean += p;
    }
    mean /= points.len() as f64;
    let mut cov = nalgebra::Matrix3::zeros();
    for p in points {
        let d = p - mean;
        cov += d * d.transpose();
    }
    cov /= points.len() as f64;
    if cov.norm() < 1e-18 {
        return Err(Error::Degenerate("all points coincide"));
    }
    let eig = cov.symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let axis = |i: usize| {
        eig.eigenvectors
            .column(order[i])
            .into_owned()
            .normalize()
    };
    Ok(Pca3 {
        axes: [axis(0), axis(1), axis(2)],
        eigenvalues: [
            eig.eigenvalues[order[0]],
            eig.eigenvalues[order[1]],
            eig.eigenvalues[order[2]],
        ],
        centroid: mean,
    })
}

/// Largest principal component direction. The sign is arbitrary; callers
/// apply their own disambiguation rule.
pub fn pca_axis(points: &[Vector3<f64>]) -> Result<Vector3<f64>> {
    Ok(pca(points)?.axes[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_blobs_separate() {
        let mut pts = Vec::new();
        for i in 0..10 {
            pts.push(Vector3::new(i as f64 * 0.05, 0.0, 0.0));
            pts.push(Vector3::new(1.0 + i as f64 * 0.05, 0.0, 0.0));
        }
        let clusters = euclidean_cluster(&PointCloud::from_points(pts), 0.3, 1);
        assert_eq!(clusters.len(), 2);
    }

    #[test]
    fn min_size_filters_singletons() {
        let c = PointCloud::from_points(vec![Vector3::zeros()]);
        assert!(euclidean_cluster(&c, 0.3, 2).is_empty());
    }

    #[test]
    fn chain_links_transitively() {
        let pts: Vec<_> = (0..10)
            .map(|i| Vector3::new(i as f64 * 0.25, 0.0, 0.0))
            .collect();
        let clusters = euclidean_cluster(&PointCloud::from_points(pts), 0.3, 1);
        assert_eq!(clusters.len(), 1);
        assert_eq!(clusters[0].len(), 10);
    }

    #[test]
    fn segment_axis_is_x() {
        let pts: Vec<_> = (0..20).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
        let axis = pca_axis(&pts).unwrap();
        assert!(axis.x.abs() > 1.0 - 1e-9);
    }

    #[test]
    fn isotropic_cube_has_unit_eigenvalue_ratio() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let pts: Vec<_> = (0..20_000)
            .map(|_| Vector3::new(rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()))
            .collect();
        let p = pca(&pts).unwrap();
        let ratio = p.eigenvalues[0] / p.eigenvalues[2];
        assert!((ratio - 1.0).abs() < 0.1, "ratio {ratio}");
    }

    #[test]
    fn box_axis_matches_long_side() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(22);
        // 6 x 1 x 1 box, rotated 30 degrees about z
        let yaw = 30.0_f64.to_radians();
        let (s, c) = yaw.sin_cos();
        let pts: Vec<_> = (0..20_000)
            .map(|_| {
                let x = rng.gen_range(-3.0..3.0);
                let y = rng.gen_range(-0.5..0.5);
                let z = rng.gen_range(-0.5..0.5);
                Vector3::new(c * x - s * y, s * x + c * y, z)
            })
            .collect();
        let axis = pca_axis(&pts).unwrap();
        let want = Vector3::new(c, s, 0.0);
        let angle = axis.dot(&want).abs().clamp(-1.0, 1.0).acos();
        assert!(angle < 2.0_f64.to_radians(), "angle {} deg", angle.to_degrees());
    }

    #[test]
    fn degenerate_input_is_an_error() {
        let pts = vec![Vector3::new(1.0, 1.0, 1.0); 5];
        assert!(pca_axis(&pts).is_err());
    }
}
