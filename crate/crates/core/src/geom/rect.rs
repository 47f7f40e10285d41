//! Convex hull and minimum-area oriented bounding rectangle
//! (rotating calipers over hull edges).

use nalgebra::Vector2;

use crate::error::{Error, Result};

/// Oriented rectangle: `center ± axes[0]·half_extents[0] ± axes[1]·half_extents[1]`.
///
/// `axes[0]` carries the larger half-extent, axes are orthonormal.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct OrientedRect {
    pub center: Vector2<f64>,
    pub axes: [Vector2<f64>; 2],
    pub half_extents: [f64; 2],
}

impl OrientedRect {
    pub fn area(&self) -> f64 {
        4.0 * self.half_extents[0] * self.half_extents[1]
    }

    /// Corners in cyclic order, so indices `i` and `(i + 2) % 4` are diagonal.
    pub fn corners(&self) -> [Vector2<f64>; 4] {
        let a = self.axes[0] * self.half_extents[0];
        let b = self.axes[1] * self.half_extents[1];
        [
            self.center - a - b,
            self.center + a - b,
            self.center + a + b,
            self.center - a + b,
        ]
    }

    pub fn contains(&self, p: &Vector2<f64>, slack: f64) -> bool {
        let d = p - self.center;
        d.dot(&self.axes[0]).abs() <= self.half_extents[0] + slack
            && d.dot(&self.axes[1]).abs() <= self.half_extents[1] + slack
    }
}

fn cross(o: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    (a - o).x * (b - o).y - (a - o).y * (b - o).x
}

/// Convex hull by Andrew's monotone chain, counter-clockwise, no collinear
/// points kept.
pub fn convex_hull(points: &[Vector2<f64>]) -> Vec<Vector2<f64>> {
    let mut pts: Vec<Vector2<f64>> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup_by(|a, b| (*a - *b).norm() < 1e-15);
    let n = pts.len();
    if n < 3 {
        return pts;
    }
    let mut hull: Vec<Vector2<f64>> = Vec::with_capacity(2 * n);
    for p in &pts {
        while hull.len() >= 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(*p);
    }
    let lower_len = hull.len() + 1;
    for p in pts.iter().rev().skip(1) {
        while hull.len() >= lower_len
            && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0
        {
            hull.pop();
        }
        hull.push(*p);
    }
    hull.pop();
    hull
}

/// Minimum-area enclosing rectangle. Collinear input yields the degenerate
/// zero-width rectangle along the span.
pub fn min_oriented_rect(points: &[Vector2<f64>]) -> Result<OrientedRect> {
    if points.is_empty() {
        return Err(Error::TooFewPoints { needed: 1, got: 0 });
    }
    let hull = convex_hull(points);
    if hull.len() < 3 {
        return Ok(degenerate_rect(points));
    }
    let mut best: Option<(f64, OrientedRect)> = None;
    for i in 0..hull.len() {
        let e = hull[(i + 1) % hull.len()] - hull[i];
        let Some(u) = e.try_normalize(1e-15) else {
            continue;
        };
        let v = Vector2::new(-u.y, u.x);
        let (mut lo_u, mut hi_u) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut lo_v, mut hi_v) = (f64::INFINITY, f64::NEG_INFINITY);
        for p in &hull {
            let pu = p.dot(&u);
            let pv = p.dot(&v);
            lo_u = lo_u.min(pu);
            hi_u = hi_u.max(pu);
            lo_v = lo_v.min(pv);
            hi_v = hi_v.max(pv);
        }
        let area = (hi_u - lo_u) * (hi_v - lo_v);
        if best.as_ref().map_or(true, |(a, _)| area < *a) {
            let center = u * (0.5 * (lo_u + hi_u)) + v * (0.5 * (lo_v + hi_v));
            let rect = orient(OrientedRect {
                center,
                axes: [u, v],
                half_extents: [0.5 * (hi_u - lo_u), 0.5 * (hi_v - lo_v)],
            });
            best = Some((area, rect));
        }
    }
    Ok(best.expect("hull with >= 3 vertices has edges").1)
}

fn degenerate_rect(points: &[Vector2<f64>]) -> OrientedRect {
    // all points collinear (or a single point): rectangle of zero width
    let mut far = (points[0], points[0], 0.0);
    for a in points {
        for b in points {
            let d = (a - b).norm();
            if d > far.2 {
                far = (*a, *b, d);
            }
        }
    }
    let u = (far.1 - far.0)
        .try_normalize(1e-15)
        .unwrap_or_else(Vector2::x);
    let v = Vector2::new(-u.y, u.x);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        let s = p.dot(&u);
        lo = lo.min(s);
        hi = hi.max(s);
    }
    orient(OrientedRect {
        center: u * (0.5 * (lo + hi)) + v * (points[0].dot(&v)),
        axes: [u, v],
        half_extents: [0.5 * (hi - lo), 0.0],
    })
}

/// Normalize so `axes[0]` is the long axis with canonical sign and
/// `axes[1]` completes a right-handed pair.
fn orient(mut r: OrientedRect) -> OrientedRect {
    if r.half_extents[1] > r.half_extents[0] {
        r.axes.swap(0, 1);
        r.half_extents.swap(0, 1);
    }
    if r.axes[0].x < 0.0 || (r.axes[0].x == 0.0 && r.axes[0].y < 0.0) {
        r.axes[0] = -r.axes[0];
    }
    r.axes[1] = Vector2::new(-r.axes[0].y, r.axes[0].x);
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_square() -> Vec<Vector2<f64>> {
        vec![
            Vector2::new(0.0, 0.0),
            Vector2::new(1.0, 0.0),
            Vector2::new(1.0, 1.0),
            Vector2::new(0.0, 1.0),
        ]
    }

    #[test]
    fn axis_aligned_square_is_its_own_rect() {
        let r = min_oriented_rect(&unit_square()).unwrap();
        assert!((r.area() - 1.0).abs() < 1e-12);
        assert!((r.center - Vector2::new(0.5, 0.5)).norm() < 1e-12);
        for p in unit_square() {
            assert!(r.contains(&p, 1e-9));
        }
    }

    #[test]
    fn rotated_square_keeps_area() {
        let th = 30.0_f64.to_radians();
        let (s, c) = th.sin_cos();
        let pts: Vec<_> = unit_square()
            .into_iter()
            .map(|p| Vector2::new(c * p.x - s * p.y, s * p.x + c * p.y))
            .collect();
        let r = min_oriented_rect(&pts).unwrap();
        assert!((r.area() - 1.0).abs() < 1e-9);
        for p in &pts {
            assert!(r.contains(p, 1e-9));
        }
    }

    #[test]
    fn l_shape_bounding() {
        // legs 2.0 m and 1.5 m, arm width 0.2 m
        let mut pts = Vec::new();
        for i in 0..=40 {
            for j in 0..=4 {
                pts.push(Vector2::new(i as f64 * 0.05, j as f64 * 0.05));
            }
        }
        for j in 0..=30 {
            for i in 0..=4 {
                pts.push(Vector2::new(i as f64 * 0.05, j as f64 * 0.05));
            }
        }
        let r = min_oriented_rect(&pts).unwrap();
        assert!((2.0 * r.half_extents[0] - 2.0).abs() < 1e-9);
        assert!((2.0 * r.half_extents[1] - 1.5).abs() < 1e-9);
    }

    #[test]
    fn collinear_input_degenerates() {
        let pts: Vec<_> = (0..5).map(|i| Vector2::new(i as f64, 0.0)).collect();
        let r = min_oriented_rect(&pts).unwrap();
        assert_eq!(r.half_extents[1], 0.0);
        assert!((2.0 * r.half_extents[0] - 4.0).abs() < 1e-12);
    }
}
