//! L-shaped wall-marker pose estimation from ground-projected points.
//!
//! The camera front-end (color masking and corner voting) needs real
//! imagery; this module starts at its output, a buffer of 2-D points on the
//! ground plane, and carries the geometric back-end: clustering, oriented
//! bounding rectangle, empty-corner search, and side-length validation.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{euclidean_cluster, min_oriented_rect, OrientedRect, PointCloud};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct MarkerModel {
    pub leg_long: f64,
    pub leg_short: f64,
    /// Accepted fractional deviation of the measured side lengths.
    pub tolerance: f64,
}

impl Default for MarkerModel {
    fn default() -> Self {
        MarkerModel {
            leg_long: 2.0,
            leg_short: 1.5,
            tolerance: 0.2,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MarkerDetection {
    /// The L intersection corner.
    pub corner: Vector2<f64>,
    /// Unit direction along the long leg, away from the corner.
    pub direction: Vector2<f64>,
    pub rect: OrientedRect,
}

/// Sliding 10-second window of timestamped ground-projected points.
/// Entries with `t_old < t_now − window` are evicted; the boundary
/// `t_old = t_now − window` is retained (closed interval).
#[derive(Clone, Debug, Default)]
pub struct ProjectionBuffer {
    entries: Vec<(f64, Vector2<f64>)>,
    last_t: Option<f64>,
}

pub const BUFFER_WINDOW: f64 = 10.0;

impl ProjectionBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append a batch at time `t` (timestamps must be monotone) and evict
    /// entries older than the window.
    pub fn accumulate(&mut self, points: &[Vector2<f64>], t: f64) -> Result<()> {
        if let Some(last) = self.last_t {
            if t < last {
                return Err(Error::NonMonotoneTime { last, got: t });
            }
        }
        self.last_t = Some(t);
        self.entries.extend(points.iter().map(|p| (t, *p)));
        let cutoff = t - BUFFER_WINDOW;
        self.entries.retain(|(te, _)| *te >= cutoff);
        Ok(())
    }

    /// Evict against a bare query time without adding points.
    pub fn evict_to(&mut self, t: f64) -> Result<()> {
        self.accumulate(&[], t)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn points(&self) -> Vec<Vector2<f64>> {
        self.entries.iter().map(|(_, p)| *p).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "t,x,y")?;
        for (t, p) in &self.entries {
            writeln!(w, "{},{},{}", t, p.x, p.y)?;
        }
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<ProjectionBuffer> {
        let r = BufReader::new(std::fs::File::open(path)?);
        let mut buf = ProjectionBuffer::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if i == 0 && line.starts_with('t') {
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let mut it = line.split(',');
            let parse = |s: Option<&str>| -> Result<f64> {
                s.ok_or_else(|| Error::Parse {
                    format: "csv",
                    detail: format!("short row at line {}", i + 1),
                })?
                .trim()
                .parse()
                .map_err(|e| Error::Parse {
                    format: "csv",
                    detail: format!("line {}: {e}", i + 1),
                })
            };
            let t = parse(it.next())?;
            let x = parse(it.next())?;
            let y = parse(it.next())?;
            buf.accumulate(&[Vector2::new(x, y)], t)?;
        }
        Ok(buf)
    }
}

const CLUSTER_TOLERANCE: f64 = 0.3;
const MIN_CLUSTER_SIZE: usize = 10;

/// Detect the L-marker in the buffered projection points.
///
/// The biggest cluster is boxed with the minimum oriented rectangle; the
/// empty rectangle corner is the one with the highest summed distance to the
/// cluster points, the L corner is its diagonal opposite, and the direction
/// is the long rectangle axis oriented away from the L corner. Side lengths
/// are validated against the marker legs.
pub fn detect_l_marker(buffer: &ProjectionBuffer, model: &MarkerModel) -> Result<MarkerDetection> {
    let pts2 = buffer.points();
    if pts2.is_empty() {
        return Err(Error::MarkerNotFound);
    }
    let cloud = PointCloud::from_points(
        pts2.iter().map(|p| Vector3::new(p.x, p.y, 0.0)).collect(),
    );
    let clusters = euclidean_cluster(&cloud, CLUSTER_TOLERANCE, MIN_CLUSTER_SIZE);
    let Some(cluster) = clusters.iter().max_by_key(|c| c.len()) else {
        return Err(Error::MarkerNotFound);
    };
    let cluster_xy: Vec<Vector2<f64>> = cluster
        .points
        .iter()
        .map(|p| Vector2::new(p.x, p.y))
        .collect();
    let rect = min_oriented_rect(&cluster_xy)?;

    let corners = rect.corners();
    let mut empty_idx = 0;
    let mut best_sum = f64::NEG_INFINITY;
    for (i, c) in corners.iter().enumerate() {
        let sum: f64 = cluster_xy.iter().map(|p| (p - c).norm()).sum();
        if sum > best_sum {
            best_sum = sum;
            empty_idx = i;
        }
    }
    let corner = corners[(empty_idx + 2) % 4];

    let long = 2.0 * rect.half_extents[0];
    let short = 2.0 * rect.half_extents[1];
    let ok = |measured: f64, leg: f64| (measured - leg).abs() <= model.tolerance * leg;
    if !ok(long, model.leg_long) || !ok(short, model.leg_short) {
        return Err(Error::MarkerInvalid { long, short });
    }

    let mut direction = rect.axes[0];
    if direction.dot(&(rect.center - corner)) < 0.0 {
        direction = -direction;
    }
    Ok(MarkerDetection {
        corner,
        direction,
        rect,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_eviction() {
        let mut buf = ProjectionBuffer::new();
        buf.accumulate(&[Vector2::new(1.0, 1.0)], 0.0).unwrap();
        buf.evict_to(11.0).unwrap();
        assert!(buf.is_empty());
    }

    #[test]
    fn only_recent_batches_survive() {
        let mut buf = ProjectionBuffer::new();
        buf.accumulate(&[Vector2::new(1.0, 0.0)], 0.0).unwrap();
        buf.accumulate(&[Vector2::new(2.0, 0.0)], 5.0).unwrap();
        buf.evict_to(11.0).unwrap();
        assert_eq!(buf.len(), 1);
        assert_eq!(buf.points()[0], Vector2::new(2.0, 0.0));
    }

    #[test]
    fn boundary_timestamp_is_retained() {
        let mut buf = ProjectionBuffer::new();
        buf.accumulate(&[Vector2::new(1.0, 0.0)], 0.0).unwrap();
        buf.evict_to(10.0).unwrap();
        assert_eq!(buf.len(), 1);
    }

    #[test]
    fn non_monotone_time_is_an_error() {
        let mut buf = ProjectionBuffer::new();
        buf.accumulate(&[], 5.0).unwrap();
        assert!(matches!(
            buf.accumulate(&[], 4.0),
            Err(Error::NonMonotoneTime { .. })
        ));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("buffer.csv");
        let mut buf = ProjectionBuffer::new();
        buf.accumulate(&[Vector2::new(0.5, -1.5)], 1.0).unwrap();
        buf.accumulate(&[Vector2::new(2.0, 3.0)], 2.0).unwrap();
        buf.write_csv(&path).unwrap();
        let back = ProjectionBuffer::read_csv(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back.points(), buf.points());
    }

    #[test]
    fn square_is_rejected_by_leg_validation() {
        let mut buf = ProjectionBuffer::new();
        let mut pts = Vec::new();
        for i in 0..=20 {
            for j in 0..=20 {
                pts.push(Vector2::new(i as f64 * 0.05, j as f64 * 0.05));
            }
        }
        buf.accumulate(&pts, 0.0).unwrap();
        assert!(matches!(
            detect_l_marker(&buf, &MarkerModel::default()),
            Err(Error::MarkerInvalid { .. })
        ));
    }

    #[test]
    fn empty_buffer_is_not_found() {
        let buf = ProjectionBuffer::new();
        assert!(matches!(
            detect_l_marker(&buf, &MarkerModel::default()),
            Err(Error::MarkerNotFound)
        ));
    }
}
