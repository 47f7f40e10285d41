//! RANSAC fitting of planes (3-D) and line sets (2-D).

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geom::PointCloud;

/// Plane `normal · p = offset` with `|normal| = 1`.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct Plane {
    pub normal: Vector3<f64>,
    pub offset: f64,
    pub inlier_count: usize,
}

impl Plane {
    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(p) - self.offset
    }

    pub fn distance(&self, p: &Vector3<f64>) -> f64 {
        self.signed_distance(p).abs()
    }

    fn through(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> Option<Plane> {
        let n = (b - a).cross(&(c - a));
        let normal = n.try_normalize(1e-12)?;
        Some(Plane {
            normal,
            offset: normal.dot(a),
            inlier_count: 0,
        })
    }

    pub fn inlier_indices(&self, points: &[Vector3<f64>], threshold: f64) -> Vec<usize> {
        (0..points.len())
            .filter(|&i| self.distance(&points[i]) <= threshold)
            .collect()
    }

    /// Height of the plane over a ground-plane location (x, y); requires a
    /// non-horizontal-degenerate normal.
    pub fn z_at(&self, x: f64, y: f64) -> Option<f64> {
        if self.normal.z.abs() < 1e-9 {
            return None;
        }
        Some((self.offset - self.normal.x * x - self.normal.y * y) / self.normal.z)
    }
}

/// Plane maximizing the number of points within `threshold`, by sampling
/// `iterations` minimal 3-point candidates. Deterministic for a fixed seed;
/// candidates do not depend on the threshold, so the winning inlier count is
/// monotone in it.
pub fn fit_plane_ransac(
    cloud: &PointCloud,
    threshold: f64,
    iterations: usize,
    rng_seed: u64,
) -> Result<Plane> {
    let points = &cloud.points;
    if points.len() < 3 {
        return Err(Error::TooFewPoints {
            needed: 3,
            got: points.len(),
        });
    }
    assert!(threshold > 0.0 && iterations > 0);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut best: Option<Plane> = None;
    for _ in 0..iterations {
        let (i, j, k) = sample_distinct3(&mut rng, points.len());
        let Some(candidate) = Plane::through(&points[i], &points[j], &points[k]) else {
            continue;
        };
        let count = points
            .iter()
            .filter(|p| candidate.distance(p) <= threshold)
            .count();
        if best.as_ref().map_or(true, |b| count > b.inlier_count) {
            best = Some(Plane {
                inlier_count: count,
                ..candidate
            });
        }
    }
    best.ok_or(Error::Degenerate("all plane samples were collinear"))
}

fn sample_distinct3(rng: &mut ChaCha8Rng, n: usize) -> (usize, usize, usize) {
    let i = rng.gen_range(0..n);
    let mut j = rng.gen_range(0..n);
    while j == i {
        j = rng.gen_range(0..n);
    }
    let mut k = rng.gen_range(0..n);
    while k == i || k == j {
        k = rng.gen_range(0..n);
    }
    (i, j, k)
}

/// 2-D line `point + s · direction` with the inlier span `extent` in `s`.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct Line2 {
    pub direction: Vector2<f64>,
    pub point: Vector2<f64>,
    pub extent: (f64, f64),
    pub inlier_count: usize,
}

impl Line2 {
    pub fn distance(&self, p: &Vector2<f64>) -> f64 {
        let d = p - self.point;
        (d.x * self.direction.y - d.y * self.direction.x).abs()
    }

    /// Parameter of the orthogonal projection of `p`.
    pub fn project_param(&self, p: &Vector2<f64>) -> f64 {
        (p - self.point).dot(&self.direction)
    }

    pub fn point_at(&self, s: f64) -> Vector2<f64> {
        self.point + self.direction * s
    }

    pub fn extent_length(&self) -> f64 {
        self.extent.1 - self.extent.0
    }

    pub fn midpoint(&self) -> Vector2<f64> {
        self.point_at(0.5 * (self.extent.0 + self.extent.1))
    }
}

const LINE_RANSAC_ITERATIONS: usize = 250;

/// Sequential RANSAC line extraction: the best candidate is refit to its
/// inliers by PCA, accepted if it keeps `min_inliers`, and its inliers are
/// removed before the next round.
pub fn fit_lines_ransac(
    points: &[Vector2<f64>],
    threshold: f64,
    min_inliers: usize,
    max_lines: usize,
    rng_seed: u64,
) -> Vec<Line2> {
    assert!(threshold > 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut remaining: Vec<usize> = (0..points.len()).collect();
    let mut lines = Vec::new();
    while lines.len() < max_lines && remaining.len() >= min_inliers.max(2) {
        let mut best: Option<(Vector2<f64>, Vector2<f64>, usize)> = None;
        for _ in 0..LINE_RANSAC_ITERATIONS {
            let a = points[remaining[rng.gen_range(0..remaining.len())]];
            let b = points[remaining[rng.gen_range(0..remaining.len())]];
            let Some(dir) = (b - a).try_normalize(1e-12) else {
                continue;
            };
            let count = remaining
                .iter()
                .filter(|&&i| {
                    let d = points[i] - a;
                    (d.x * dir.y - d.y * dir.x).abs() <= threshold
                })
                .count();
            if best.as_ref().map_or(true, |(_, _, c)| count > *c) {
                best = Some((a, dir, count));
            }
        }
        let Some((anchor, dir, count)) = best else {
            break;
        };
        if count < min_inliers {
            break;
        }
        let sample_inliers: Vec<usize> = remaining
            .iter()
            .copied()
            .filter(|&i| {
                let d = points[i] - anchor;
                (d.x * dir.y - d.y * dir.x).abs() <= threshold
            })
            .collect();
        let Some(refit) = refit_line(points, &sample_inliers) else {
            break;
        };
        let inliers: Vec<usize> = remaining
            .iter()
            .copied()
            .filter(|&i| refit.distance(&points[i]) <= threshold)
            .collect();
        if inliers.len() < min_inliers {
            break;
        }
        lines.push(finish_line(refit, points, &inliers));
        remaining.retain(|i| !inliers.contains(i));
    }
    lines
}

/// Centroid + principal direction of the index set; canonical sign.
fn refit_line(points: &[Vector2<f64>], indices: &[usize]) -> Option<Line2> {
    if indices.len() < 2 {
        return None;
    }
    let mut mean = Vector2::zeros();
    for &i in indices {
        mean += points[i];
    }
    mean /= indices.len() as f64;
    let (mut xx, mut xy, mut yy) = (0.0, 0.0, 0.0);
    for &i in indices {
        let d = points[i] - mean;
        xx += d.x * d.x;
        xy += d.x * d.y;
        yy += d.y * d.y;
    }
    // principal eigenvector of [[xx, xy], [xy, yy]]
    let tr = xx + yy;
    let det = xx * yy - xy * xy;
    let lambda = 0.5 * tr + (0.25 * tr * tr - det).max(0.0).sqrt();
    let dir = if xy.abs() > 1e-12 {
        Vector2::new(lambda - yy, xy)
    } else if xx >= yy {
        Vector2::new(1.0, 0.0)
    } else {
        Vector2::new(0.0, 1.0)
    };
    let mut dir = dir.try_normalize(1e-12)?;
    if dir.x < 0.0 || (dir.x == 0.0 && dir.y < 0.0) {
        dir = -dir;
    }
    Some(Line2 {
        direction: dir,
        point: mean,
        extent: (0.0, 0.0),
        inlier_count: 0,
    })
}

fn finish_line(mut line: Line2, points: &[Vector2<f64>], inliers: &[usize]) -> Line2 {
    let mut s_min = f64::INFINITY;
    let mut s_max = f64::NEG_INFINITY;
    for &i in inliers {
        let s = line.project_param(&points[i]);
        s_min = s_min.min(s);
        s_max = s_max.max(s);
    }
    line.extent = (s_min, s_max);
    line.inlier_count = inliers.len();
    line
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_plane(n: usize, z: f64) -> Vec<Vector3<f64>> {
        let mut pts = Vec::new();
        for i in 0..n {
            for j in 0..n {
                pts.push(Vector3::new(i as f64 * 0.1, j as f64 * 0.1, z));
            }
        }
        pts
    }

    #[test]
    fn perfect_plane_with_outliers() {
        let mut pts = grid_plane(10, 0.0);
        for k in 0..5 {
            pts.push(Vector3::new(k as f64 * 0.2, 0.3, 2.0));
        }
        let plane =
            fit_plane_ransac(&PointCloud::from_points(pts), 0.02, 200, 1).unwrap();
        assert_eq!(plane.inlier_count, 100);
        assert!(plane.normal.z.abs() > 1.0 - 1e-9);
        assert!(plane.offset.abs() < 1e-9 || (plane.offset.abs() - 0.0).abs() < 1e-9);
    }

    #[test]
    fn three_points_give_exact_plane() {
        let pts = vec![
            Vector3::new(0.0, 0.0, 1.0),
            Vector3::new(1.0, 0.0, 1.0),
            Vector3::new(0.0, 1.0, 1.0),
        ];
        let plane = fit_plane_ransac(&PointCloud::from_points(pts.clone()), 0.01, 50, 2).unwrap();
        assert_eq!(plane.inlier_count, 3);
        for p in &pts {
            assert!(plane.distance(p) < 1e-12);
        }
    }

    #[test]
    fn noisy_plane_coverage() {
        use rand::{Rng, SeedableRng};
        use rand_distr::{Distribution, Normal};
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let noise = Normal::new(0.0, 0.01).unwrap();
        let pts: Vec<_> = (0..500)
            .map(|_| {
                Vector3::new(
                    rng.gen_range(0.0..2.0),
                    rng.gen_range(0.0..2.0),
                    noise.sample(&mut rng),
                )
            })
            .collect();
        let plane = fit_plane_ransac(&PointCloud::from_points(pts), 0.02, 400, 3).unwrap();
        assert!(plane.inlier_count >= 450, "got {}", plane.inlier_count);
    }

    #[test]
    fn too_few_points_is_an_error() {
        let c = PointCloud::from_points(vec![Vector3::zeros(), Vector3::x()]);
        assert!(matches!(
            fit_plane_ransac(&c, 0.01, 10, 0),
            Err(Error::TooFewPoints { needed: 3, got: 2 })
        ));
    }

    fn segment(
        from: Vector2<f64>,
        to: Vector2<f64>,
        n: usize,
    ) -> impl Iterator<Item = Vector2<f64>> {
        (0..n).map(move |i| from + (to - from) * (i as f64 / (n - 1) as f64))
    }

    #[test]
    fn two_perpendicular_segments() {
        let mut pts: Vec<_> = segment(Vector2::new(0.0, 0.0), Vector2::new(4.0, 0.0), 80).collect();
        pts.extend(segment(Vector2::new(0.0, 0.2), Vector2::new(0.0, 4.2), 80));
        let lines = fit_lines_ransac(&pts, 0.02, 20, 4, 5);
        assert_eq!(lines.len(), 2);
        for line in &lines {
            assert!((line.extent_length() - 4.0).abs() < 0.1);
        }
        let dot = lines[0].direction.dot(&lines[1].direction).abs();
        assert!(dot < 1e-6, "directions not perpendicular: {dot}");
    }

    #[test]
    fn noise_is_rejected() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<_> = (0..100)
            .map(|_| Vector2::new(rng.gen_range(0.0..4.0), rng.gen_range(0.0..4.0)))
            .collect();
        let lines = fit_lines_ransac(&pts, 0.02, 20, 4, 6);
        assert!(lines.is_empty());
    }

    #[test]
    fn parallel_segments_keep_spacing() {
        let mut pts: Vec<_> = segment(Vector2::new(0.0, 0.0), Vector2::new(4.0, 0.0), 100).collect();
        pts.extend(segment(Vector2::new(0.0, 4.0), Vector2::new(4.0, 4.0), 100));
        let lines = fit_lines_ransac(&pts, 0.02, 20, 4, 8);
        assert_eq!(lines.len(), 2);
        let gap = lines[0].distance(&lines[1].point);
        assert!((gap - 4.0).abs() <= 0.02, "gap {gap}");
    }
}
