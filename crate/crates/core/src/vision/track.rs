//! Multi-hypothesis tracking: one constant-position Kalman filter per
//! hypothesis, greedy gated nearest-neighbor association.

use nalgebra::{Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::world::BrickType;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackParams {
    /// Association gate on position distance (m).
    pub gate: f64,
    /// Position process noise rate (m^2 per s).
    pub process_noise_pos: f64,
    /// Yaw process noise rate (rad^2 per s).
    pub process_noise_yaw: f64,
    /// Position measurement variance (m^2).
    pub meas_noise_pos: f64,
    /// Yaw measurement variance (rad^2).
    pub meas_noise_yaw: f64,
    pub init_pos_var: f64,
    pub init_yaw_var: f64,
    /// Hypotheses are pruned after this many consecutive misses.
    pub max_misses: u32,
}

impl Default for TrackParams {
    fn default() -> Self {
        TrackParams {
            gate: 0.5,
            process_noise_pos: 4e-4,
            process_noise_yaw: 1e-4,
            meas_noise_pos: 9e-4,
            meas_noise_yaw: 3e-3,
            init_pos_var: 0.25,
            init_yaw_var: 0.12,
            max_misses: 10,
        }
    }
}

/// A brick detection in the common world frame.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Observation {
    pub position: Vector3<f64>,
    pub yaw: f64,
    pub brick_type: BrickType,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Hypothesis {
    pub id: u32,
    pub brick_type: BrickType,
    pub position: Vector3<f64>,
    pub yaw: f64,
    /// State covariance over (x, y, z, yaw).
    pub covariance: Matrix4<f64>,
    pub hits: u32,
    pub misses: u32,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TrackSet {
    pub hypotheses: Vec<Hypothesis>,
    next_id: u32,
}

impl TrackSet {
    pub fn new() -> TrackSet {
        TrackSet::default()
    }
}

/// Wrap an angle difference into [-pi/2, pi/2): patch rectangles are
/// symmetric, so yaw is tracked modulo 180 degrees.
fn wrap_half_pi(mut d: f64) -> f64 {
    use std::f64::consts::PI;
    while d >= PI / 2.0 {
        d -= PI;
    }
    while d < -PI / 2.0 {
        d += PI;
    }
    d
}

/// One tracking step: constant-position predict (process noise grows with
/// `dt`), greedy nearest-neighbor association gated by distance and type,
/// Kalman updates for matches, new hypotheses for unmatched detections
/// (unless one of the same type already sits within the gate), and pruning
/// after `max_misses` consecutive misses.
pub fn mht_update(
    mut tracks: TrackSet,
    detections: &[Observation],
    dt: f64,
    params: &TrackParams,
) -> TrackSet {
    let dt = dt.max(0.0);
    let q = Matrix4::from_diagonal(&Vector4::new(
        params.process_noise_pos * dt,
        params.process_noise_pos * dt,
        params.process_noise_pos * dt,
        params.process_noise_yaw * dt,
    ));
    for h in &mut tracks.hypotheses {
        h.covariance += q;
    }

    // candidate pairs sorted by distance; greedy unique assignment
    let mut pairs = Vec::new();
    for (ti, h) in tracks.hypotheses.iter().enumerate() {
        for (di, d) in detections.iter().enumerate() {
            if d.brick_type != h.brick_type {
                continue;
            }
            let dist = (d.position - h.position).norm();
            if dist <= params.gate {
                pairs.push((dist, ti, di));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut track_matched = vec![false; tracks.hypotheses.len()];
    let mut det_matched = vec![false; detections.len()];
    let r = Matrix4::from_diagonal(&Vector4::new(
        params.meas_noise_pos,
        params.meas_noise_pos,
        params.meas_noise_pos,
        params.meas_noise_yaw,
    ));
    for (_, ti, di) in pairs {
        if track_matched[ti] || det_matched[di] {
            continue;
        }
        track_matched[ti] = true;
        det_matched[di] = true;
        let h = &mut tracks.hypotheses[ti];
        let d = &detections[di];
        let innovation = Vector4::new(
            d.position.x - h.position.x,
            d.position.y - h.position.y,
            d.position.z - h.position.z,
            wrap_half_pi(d.yaw - h.yaw),
        );
        let s = h.covariance + r;
        let Some(s_inv) = s.try_inverse() else {
            continue;
        };
        let k = h.covariance * s_inv;
        let dx = k * innovation;
        h.position += Vector3::new(dx.x, dx.y, dx.z);
        h.yaw += dx.w;
        h.covariance = (Matrix4::identity() - k) * h.covariance;
        h.hits += 1;
        h.misses = 0;
    }

    for (ti, matched) in track_matched.iter().enumerate() {
        if !matched {
            tracks.hypotheses[ti].misses += 1;
        }
    }
    let max_misses = params.max_misses;
    tracks.hypotheses.retain(|h| h.misses < max_misses);

    for (di, d) in detections.iter().enumerate() {
        if det_matched[di] {
            continue;
        }
        // never spawn a duplicate next to an existing same-type hypothesis
        let near_existing = tracks.hypotheses.iter().any(|h| {
            h.brick_type == d.brick_type && (h.position - d.position).norm() <= params.gate
        });
        if near_existing {
            continue;
        }
        let id = tracks.next_id;
        tracks.next_id += 1;
        tracks.hypotheses.push(Hypothesis {
            id,
            brick_type: d.brick_type,
            position: d.position,
            yaw: wrap_half_pi(d.yaw),
            covariance: Matrix4::from_diagonal(&Vector4::new(
                params.init_pos_var,
                params.init_pos_var,
                params.init_pos_var,
                params.init_yaw_var,
            )),
            hits: 1,
            misses: 0,
        });
    }
    tracks
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(x: f64, y: f64, t: BrickType) -> Observation {
        Observation {
            position: Vector3::new(x, y, 0.1),
            yaw: 0.0,
            brick_type: t,
        }
    }

    #[test]
    fn repeated_detection_contracts_covariance() {
        let params = TrackParams::default();
        let mut tracks = TrackSet::new();
        let d = [obs(1.0, 2.0, BrickType::Red)];
        tracks = mht_update(tracks, &d, 0.1, &params);
        let mut last = tracks.hypotheses[0].covariance.trace();
        for _ in 0..5 {
            tracks = mht_update(tracks, &d, 0.1, &params);
            let tr = tracks.hypotheses[0].covariance.trace();
            assert!(tr < last, "trace did not strictly decrease: {tr} >= {last}");
            last = tr;
        }
        assert_eq!(tracks.hypotheses.len(), 1);
        assert_eq!(tracks.hypotheses[0].hits, 6);
    }

    #[test]
    fn far_detection_spawns_new_hypothesis() {
        let params = TrackParams::default();
        let mut tracks = TrackSet::new();
        tracks = mht_update(tracks, &[obs(0.0, 0.0, BrickType::Red)], 0.1, &params);
        tracks = mht_update(tracks, &[obs(2.0, 0.0, BrickType::Red)], 0.1, &params);
        assert_eq!(tracks.hypotheses.len(), 2);
    }

    #[test]
    fn zero_innovation_keeps_the_mean() {
        let params = TrackParams::default();
        let mut tracks = TrackSet::new();
        tracks = mht_update(tracks, &[obs(1.5, -0.5, BrickType::Blue)], 0.1, &params);
        let before = tracks.hypotheses[0].position;
        tracks = mht_update(tracks, &[obs(1.5, -0.5, BrickType::Blue)], 0.1, &params);
        let h = &tracks.hypotheses[0];
        assert!((h.position - before).norm() < 1e-12);
        assert!(h.yaw.abs() < 1e-12);
    }

    #[test]
    fn types_do_not_associate_across() {
        let params = TrackParams::default();
        let mut tracks = TrackSet::new();
        tracks = mht_update(tracks, &[obs(0.0, 0.0, BrickType::Red)], 0.1, &params);
        tracks = mht_update(tracks, &[obs(0.05, 0.0, BrickType::Green)], 0.1, &params);
        assert_eq!(tracks.hypotheses.len(), 2);
    }

    #[test]
    fn stale_hypotheses_are_pruned() {
        let params = TrackParams::default();
        let mut tracks = TrackSet::new();
        tracks = mht_update(tracks, &[obs(0.0, 0.0, BrickType::Red)], 0.1, &params);
        for _ in 0..10 {
            tracks = mht_update(tracks, &[], 0.1, &params);
        }
        assert!(tracks.hypotheses.is_empty());
    }

    #[test]
    fn no_same_type_duplicates_within_gate() {
        let params = TrackParams::default();
        let mut tracks = TrackSet::new();
        // two detections of the same type inside one gate radius
        let ds = [obs(0.0, 0.0, BrickType::Red), obs(0.2, 0.0, BrickType::Red)];
        for _ in 0..4 {
            tracks = mht_update(tracks, &ds, 0.1, &params);
            for a in 0..tracks.hypotheses.len() {
                for b in (a + 1)..tracks.hypotheses.len() {
                    let (ha, hb) = (&tracks.hypotheses[a], &tracks.hypotheses[b]);
                    if ha.brick_type == hb.brick_type {
                        assert!(
                            (ha.position - hb.position).norm() > params.gate,
                            "same-type hypotheses within the gate"
                        );
                    }
                }
            }
        }
    }
}
