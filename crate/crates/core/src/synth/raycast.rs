//! Analytic depth ray casting against axis-aligned boxes under rigid poses
//! plus the ground plane z = 0.

use nalgebra::{UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geom::{PointCloud, Pose3, GROUND_LABEL};
use crate::synth::{pixel_rng, SensorModel};
use crate::world::{BrickInstance, Scene};

/// Hits beyond this range are discarded (near-horizontal ground grazes).
const MAX_RANGE: f64 = 60.0;

/// A box obstacle: `pose` maps the box body frame (origin at the center)
/// into the scene frame.
#[derive(Clone, Debug)]
pub struct BoxShape {
    pub pose: Pose3,
    pub half_extents: Vector3<f64>,
    pub label: i32,
}

impl BoxShape {
    pub fn from_brick(b: &BrickInstance) -> BoxShape {
        BoxShape {
            pose: b.pose,
            half_extents: b.spec.half_extents(),
            label: b.id as i32,
        }
    }
}

struct LocalBox {
    rot: UnitQuaternion<f64>,
    rot_inv: UnitQuaternion<f64>,
    center: Vector3<f64>,
    he: Vector3<f64>,
    label: i32,
}

impl LocalBox {
    fn new(b: &BoxShape) -> Self {
        LocalBox {
            rot: b.pose.rotation,
            rot_inv: b.pose.rotation.inverse(),
            center: b.pose.translation,
            he: b.half_extents,
            label: b.label,
        }
    }

    /// Slab test; returns entry distance, face axis (0..2) and face sign.
    fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, usize, f64)> {
        let o = self.rot_inv * (origin - self.center);
        let d = self.rot_inv * dir;
        let mut t_near = f64::NEG_INFINITY;
        let mut t_far = f64::INFINITY;
        let mut axis = 0usize;
        for k in 0..3 {
            if d[k].abs() < 1e-15 {
                if o[k].abs() > self.he[k] {
                    return None;
                }
                continue;
            }
            let mut t0 = (-self.he[k] - o[k]) / d[k];
            let mut t1 = (self.he[k] - o[k]) / d[k];
            if t0 > t1 {
                std::mem::swap(&mut t0, &mut t1);
            }
            if t0 > t_near {
                t_near = t0;
                axis = k;
            }
            t_far = t_far.min(t1);
            if t_near > t_far {
                return None;
            }
        }
        if t_near <= 1e-9 || t_near > MAX_RANGE {
            return None;
        }
        let entry = o + d * t_near;
        let sign = if entry[axis] >= 0.0 { 1.0 } else { -1.0 };
        Some((t_near, axis, sign))
    }
}

struct RayHit {
    t: f64,
    normal: Vector3<f64>,
    label: i32,
}

fn cast(
    boxes: &[LocalBox],
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    include_ground: bool,
) -> Option<RayHit> {
    let mut best: Option<RayHit> = None;
    for b in boxes {
        if let Some((t, axis, sign)) = b.intersect(origin, dir) {
            if best.as_ref().map_or(true, |h| t < h.t) {
                let mut n_local = Vector3::zeros();
                n_local[axis] = sign;
                best = Some(RayHit {
                    t,
                    normal: b.rot * n_local,
                    label: b.label,
                });
            }
        }
    }
    if include_ground && dir.z < -1e-12 && origin.z > 0.0 {
        let t = -origin.z / dir.z;
        if t > 1e-9 && t <= MAX_RANGE && best.as_ref().map_or(true, |h| t < h.t) {
            best = Some(RayHit {
                t,
                normal: Vector3::z(),
                label: GROUND_LABEL,
            });
        }
    }
    best
}

fn ray_direction(azimuth: f64, elevation: f64) -> Vector3<f64> {
    // sensor frame: z forward, x right, y down
    Vector3::new(
        azimuth.sin() * elevation.cos(),
        elevation.sin(),
        azimuth.cos() * elevation.cos(),
    )
}

struct RayGrid {
    cols: u32,
    rows: u32,
    a0: f64,
    da: f64,
    e0: f64,
    de: f64,
}

impl RayGrid {
    fn centered(h_fov: f64, v_fov: f64, cols: u32, rows: u32) -> Self {
        RayGrid {
            cols,
            rows,
            a0: -h_fov / 2.0,
            da: h_fov / cols as f64,
            e0: -v_fov / 2.0,
            de: v_fov / rows as f64,
        }
    }

    fn direction(&self, row: u32, col: u32) -> Vector3<f64> {
        let a = self.a0 + (col as f64 + 0.5) * self.da;
        let e = self.e0 + (row as f64 + 0.5) * self.de;
        ray_direction(a, e)
    }
}

fn raycast_grid(
    boxes: &[LocalBox],
    sensor_pose: &Pose3,
    grid: &RayGrid,
    include_ground: bool,
    noise: Option<(f64, f64, u64)>, // (sigma, dropout, seed)
    with_normals: bool,
) -> PointCloud {
    let origin = sensor_pose.translation;
    let mut cloud = PointCloud {
        points: Vec::new(),
        normals: with_normals.then(Vec::new),
        labels: Some(Vec::new()),
    };
    let gauss = noise.and_then(|(sigma, _, _)| {
        (sigma > 0.0).then(|| Normal::new(0.0, sigma).unwrap())
    });
    for row in 0..grid.rows {
        for col in 0..grid.cols {
            let dir = sensor_pose.rotate(&grid.direction(row, col));
            let Some(hit) = cast(boxes, &origin, &dir, include_ground) else {
                continue;
            };
            let mut t = hit.t;
            if let Some((_, dropout, seed)) = noise {
                let mut rng = pixel_rng(seed, (row as u64) * grid.cols as u64 + col as u64);
                if dropout > 0.0 && rng.gen::<f64>() < dropout {
                    continue;
                }
                if let Some(g) = &gauss {
                    t += g.sample(&mut rng);
                }
            }
            cloud.points.push(origin + dir * t);
            if let Some(ns) = cloud.normals.as_mut() {
                ns.push(hit.normal);
            }
            cloud.labels.as_mut().unwrap().push(hit.label);
        }
    }
    cloud
}

/// Simulated range scan of a scene: one ray per pixel, nearest box/ground
/// intersection, hit perturbed along the ray by N(0, sigma), points dropped
/// with `dropout_prob`. Labeled, deterministic per seed.
pub fn raycast_scan(scene: &Scene, sensor: &SensorModel, rng_seed: u64) -> Result<PointCloud> {
    sensor.validate();
    let boxes: Vec<LocalBox> = scene
        .world_bricks()?
        .iter()
        .map(|b| LocalBox::new(&BoxShape::from_brick(b)))
        .collect();
    let grid = RayGrid::centered(
        sensor.h_fov,
        sensor.v_fov,
        sensor.resolution.0,
        sensor.resolution.1,
    );
    Ok(raycast_grid(
        &boxes,
        &sensor.pose,
        &grid,
        true,
        Some((sensor.range_noise_sigma, sensor.dropout_prob, rng_seed)),
        false,
    ))
}

/// Raycast arbitrary boxes with a given sensor; noiseless rays keep analytic
/// normals.
pub fn raycast_boxes(
    boxes: &[BoxShape],
    sensor: &SensorModel,
    rng_seed: u64,
    include_ground: bool,
) -> PointCloud {
    sensor.validate();
    let locals: Vec<LocalBox> = boxes.iter().map(LocalBox::new).collect();
    let grid = RayGrid::centered(
        sensor.h_fov,
        sensor.v_fov,
        sensor.resolution.0,
        sensor.resolution.1,
    );
    let noiseless = sensor.range_noise_sigma == 0.0 && sensor.dropout_prob == 0.0;
    raycast_grid(
        &locals,
        &sensor.pose,
        &grid,
        include_ground,
        Some((sensor.range_noise_sigma, sensor.dropout_prob, rng_seed)),
        noiseless,
    )
}

/// Noiseless model cloud of the given bricks (plus optionally the ground
/// around them) seen from `sensor_pose`, downsampled to uniform density `d`.
/// Points carry brick labels and exact face normals.
pub fn render_model_cloud(
    bricks: &[BrickInstance],
    sensor_pose: &Pose3,
    d: f64,
    include_ground: bool,
) -> PointCloud {
    assert!(d > 0.0);
    if bricks.is_empty() && !include_ground {
        return PointCloud {
            points: Vec::new(),
            normals: Some(Vec::new()),
            labels: Some(Vec::new()),
        };
    }
    let boxes: Vec<LocalBox> = bricks
        .iter()
        .map(|b| LocalBox::new(&BoxShape::from_brick(b)))
        .collect();

    // Angular window over the (margin-expanded) brick corners, with the ray
    // pitch chosen so every surface voxel of edge d receives samples.
    let origin = sensor_pose.translation;
    let rot_inv = sensor_pose.rotation.inverse();
    let margin = 0.3;
    let mut a_lo = f64::INFINITY;
    let mut a_hi = f64::NEG_INFINITY;
    let mut e_lo = f64::INFINITY;
    let mut e_hi = f64::NEG_INFINITY;
    let mut max_dist: f64 = 1.0;
    for b in bricks {
        let he = b.spec.half_extents() + Vector3::repeat(margin);
        for sx in [-1.0, 1.0] {
            for sy in [-1.0, 1.0] {
                for sz in [-1.0, 1.0] {
                    let corner = b
                        .pose
                        .apply(&Vector3::new(sx * he.x, sy * he.y, sz * he.z));
                    let v = rot_inv * (corner - origin);
                    if v.z <= 1e-6 {
                        continue;
                    }
                    let a = v.x.atan2(v.z);
                    let e = v.y.atan2((v.x * v.x + v.z * v.z).sqrt());
                    a_lo = a_lo.min(a);
                    a_hi = a_hi.max(a);
                    e_lo = e_lo.min(e);
                    e_hi = e_hi.max(e);
                    max_dist = max_dist.max((corner - origin).norm());
                }
            }
        }
    }
    if !a_lo.is_finite() {
        // nothing in front of the sensor: fall back to a forward window
        a_lo = -0.6;
        a_hi = 0.6;
        e_lo = -0.6;
        e_hi = 0.6;
    }
    let pitch = (0.4 * d / max_dist).max(1e-4);
    let cols = (((a_hi - a_lo) / pitch).ceil() as u32).clamp(64, 2800);
    let rows = (((e_hi - e_lo) / pitch).ceil() as u32).clamp(64, 2800);
    let grid = RayGrid {
        cols,
        rows,
        a0: a_lo,
        da: (a_hi - a_lo) / cols as f64,
        e0: e_lo,
        de: (e_hi - e_lo) / rows as f64,
    };
    let dense = raycast_grid(&boxes, sensor_pose, &grid, include_ground, None, true);
    crate::geom::voxel_downsample(&dense, d)
}

/// Partition a labeled model cloud into per-brick clouds plus the ground
/// points. Brick ids come out ascending.
pub fn split_brick_clouds(model: &PointCloud) -> Result<(Vec<(u32, PointCloud)>, PointCloud)> {
    let labels = model.labels.as_ref().ok_or(Error::MissingLabels)?;
    let mut ids: Vec<i32> = labels.iter().copied().filter(|&l| l >= 0).collect();
    ids.sort_unstable();
    ids.dedup();
    let mut bricks = Vec::with_capacity(ids.len());
    for id in ids {
        let idx: Vec<usize> = (0..model.len()).filter(|&i| labels[i] == id).collect();
        bricks.push((id as u32, model.select(&idx)));
    }
    let ground_idx: Vec<usize> = (0..model.len())
        .filter(|&i| labels[i] == GROUND_LABEL)
        .collect();
    Ok((bricks, model.select(&ground_idx)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Frame;
    use crate::synth::pose_looking_at;
    use crate::world::{brick_spec, BrickType};

    fn down_sensor(eye: Vector3<f64>, res: u32) -> SensorModel {
        SensorModel {
            pose: pose_looking_at(eye, Vector3::zeros(), Frame::Sensor, Frame::World),
            h_fov: 60f64.to_radians(),
            v_fov: 60f64.to_radians(),
            resolution: (res, res),
            range_noise_sigma: 0.0,
            dropout_prob: 0.0,
        }
    }

    fn unit_box_scene() -> Scene {
        let b = BrickInstance {
            id: 0,
            spec: BrickSpec {
                length: 1.0,
                width: 1.0,
                height: 1.0,
                ..brick_spec(BrickType::Red)
            },
            pose: Pose3::from_yaw(
                0.0,
                Vector3::new(0.0, 0.0, 0.5),
                Frame::Brick(0),
                Frame::Pile,
            ),
        };
        Scene {
            bricks: vec![b],
            target_frame_pose: Pose3::identity(Frame::World).relabel(Frame::Pile, Frame::World),
            marker_pose: None,
        }
    }

    use crate::world::BrickSpec;

    #[test]
    fn noiseless_hits_lie_on_the_box() {
        let scene = unit_box_scene();
        let sensor = down_sensor(Vector3::new(0.0, 0.0, 4.0), 100);
        let cloud = raycast_scan(&scene, &sensor, 0).unwrap();
        assert!(!cloud.is_empty());
        for (p, l) in cloud.points.iter().zip(cloud.labels.as_ref().unwrap()) {
            if *l == 0 {
                // on the top face of the unit box
                assert!((p.z - 1.0).abs() < 1e-9);
                assert!(p.x.abs() <= 0.5 + 1e-9 && p.y.abs() <= 0.5 + 1e-9);
            } else {
                assert_eq!(*l, GROUND_LABEL);
                assert!(p.z.abs() < 1e-9);
            }
        }
    }

    #[test]
    fn empty_scene_sees_only_ground() {
        let scene = Scene::empty(Pose3::identity(Frame::World).relabel(Frame::Pile, Frame::World));
        let sensor = down_sensor(Vector3::new(0.0, 0.0, 3.0), 50);
        let cloud = raycast_scan(&scene, &sensor, 0).unwrap();
        assert!(!cloud.is_empty());
        assert!(cloud
            .labels
            .as_ref()
            .unwrap()
            .iter()
            .all(|&l| l == GROUND_LABEL));
        assert!(cloud.points.iter().all(|p| p.z.abs() < 1e-9));
    }

    #[test]
    fn range_noise_matches_sigma() {
        let scene = Scene::empty(Pose3::identity(Frame::World).relabel(Frame::Pile, Frame::World));
        let mut sensor = down_sensor(Vector3::new(0.0, 0.0, 3.0), 120);
        sensor.range_noise_sigma = 0.008;
        let cloud = raycast_scan(&scene, &sensor, 99).unwrap();
        // distance from the plane along the (tilted) rays scales with sigma;
        // use the per-ray range residual: |p - o| - true range
        let o = sensor.pose.translation;
        let mut devs = Vec::new();
        for p in &cloud.points {
            let dir = (p - o).normalize();
            let true_t = -o.z / dir.z;
            devs.push((p - o).norm() - true_t);
        }
        let n = devs.len() as f64;
        let mean: f64 = devs.iter().sum::<f64>() / n;
        let var: f64 = devs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0);
        let sd = var.sqrt();
        assert!((0.006..=0.010).contains(&sd), "stddev {sd}");
    }

    #[test]
    fn dropout_and_seed_determinism() {
        let scene = unit_box_scene();
        let mut sensor = down_sensor(Vector3::new(0.0, 0.0, 4.0), 80);
        sensor.dropout_prob = 0.3;
        sensor.range_noise_sigma = 0.01;
        let a = raycast_scan(&scene, &sensor, 7).unwrap();
        let b = raycast_scan(&scene, &sensor, 7).unwrap();
        assert_eq!(a.points, b.points);
        let c = raycast_scan(&scene, &sensor, 8).unwrap();
        assert_ne!(a.points, c.points);
        // dropout removed roughly 30%
        let full = {
            let mut s = sensor.clone();
            s.dropout_prob = 0.0;
            raycast_scan(&scene, &s, 7).unwrap().len() as f64
        };
        let kept = a.len() as f64 / full;
        assert!((0.6..0.8).contains(&kept), "kept {kept}");
    }

    #[test]
    fn occluded_brick_renders_no_points() {
        let small = BrickInstance {
            id: 0,
            spec: brick_spec(BrickType::Red),
            pose: Pose3::from_yaw(
                0.0,
                Vector3::new(0.0, 0.0, 0.1),
                Frame::Brick(0),
                Frame::World,
            ),
        };
        // a big slab right above the small brick hides it from a top view
        let big = BrickInstance {
            id: 1,
            spec: BrickSpec {
                length: 3.0,
                width: 3.0,
                height: 0.2,
                ..brick_spec(BrickType::Blue)
            },
            pose: Pose3::from_yaw(
                0.0,
                Vector3::new(0.0, 0.0, 0.5),
                Frame::Brick(1),
                Frame::World,
            ),
        };
        let pose = pose_looking_at(
            Vector3::new(0.0, 0.0, 5.0),
            Vector3::zeros(),
            Frame::Sensor,
            Frame::World,
        );
        let cloud = render_model_cloud(&[small, big], &pose, 0.02, false);
        assert!(!cloud.is_empty());
        assert!(cloud.labels.as_ref().unwrap().iter().all(|&l| l == 1));
    }

    #[test]
    fn model_density_matches_voxel_budget() {
        // 1.8 x 0.2 m face seen head on: about 900 voxels of 0.02 m
        let brick = BrickInstance {
            id: 0,
            spec: brick_spec(BrickType::Orange),
            pose: Pose3::from_yaw(
                0.0,
                Vector3::new(0.0, 0.0, 0.1),
                Frame::Brick(0),
                Frame::World,
            ),
        };
        let pose = pose_looking_at(
            Vector3::new(0.0, 0.0, 3.0),
            Vector3::zeros(),
            Frame::Sensor,
            Frame::World,
        );
        let cloud = render_model_cloud(&[brick], &pose, 0.02, false);
        let top: usize = cloud
            .points
            .iter()
            .filter(|p| (p.z - 0.2).abs() < 1e-6)
            .count();
        let expect = (1.8 * 0.2) / (0.02 * 0.02);
        assert!(
            (top as f64) > 0.8 * expect && (top as f64) < 1.2 * expect,
            "top face points {top}, expected about {expect}"
        );
    }

    #[test]
    fn include_ground_flag() {
        let brick = BrickInstance {
            id: 0,
            spec: brick_spec(BrickType::Green),
            pose: Pose3::from_yaw(
                0.0,
                Vector3::new(0.0, 0.0, 0.1),
                Frame::Brick(0),
                Frame::World,
            ),
        };
        let pose = pose_looking_at(
            Vector3::new(2.0, 0.0, 2.0),
            Vector3::zeros(),
            Frame::Sensor,
            Frame::World,
        );
        let without = render_model_cloud(&[brick.clone()], &pose, 0.02, false);
        assert!(without
            .labels
            .as_ref()
            .unwrap()
            .iter()
            .all(|&l| l != GROUND_LABEL));
        let with = render_model_cloud(&[brick], &pose, 0.02, true);
        assert!(with
            .labels
            .as_ref()
            .unwrap()
            .iter()
            .any(|&l| l == GROUND_LABEL));
    }

    #[test]
    fn split_partitions_by_label() {
        let mut cloud = PointCloud::from_points(vec![
            Vector3::zeros(),
            Vector3::x(),
            Vector3::y(),
            Vector3::z(),
        ]);
        cloud.labels = Some(vec![1, 1, 2, GROUND_LABEL]);
        let (bricks, ground) = split_brick_clouds(&cloud).unwrap();
        assert_eq!(bricks.len(), 2);
        assert_eq!(bricks[0].0, 1);
        assert_eq!(bricks[0].1.len(), 2);
        assert_eq!(bricks[1].1.len(), 1);
        assert_eq!(ground.len(), 1);
        let total: usize = bricks.iter().map(|(_, c)| c.len()).sum::<usize>() + ground.len();
        assert_eq!(total, cloud.len());
    }

    #[test]
    fn split_requires_labels() {
        let cloud = PointCloud::from_points(vec![Vector3::zeros()]);
        assert!(matches!(
            split_brick_clouds(&cloud),
            Err(Error::MissingLabels)
        ));
    }

    #[test]
    fn ground_only_cloud_has_no_bricks() {
        let mut cloud = PointCloud::from_points(vec![Vector3::zeros(), Vector3::x()]);
        cloud.labels = Some(vec![GROUND_LABEL, GROUND_LABEL]);
        let (bricks, ground) = split_brick_clouds(&cloud).unwrap();
        assert!(bricks.is_empty());
        assert_eq!(ground.len(), 2);
    }
}
