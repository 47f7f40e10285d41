//! The parametrized world model: brick catalog, blueprints, pile layouts,
//! and scene assembly.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Frame, Pose3};

/// Brick cross-section is 20 x 20 cm for every type.
pub const BRICK_WIDTH: f64 = 0.20;
pub const BRICK_HEIGHT: f64 = 0.20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BrickType {
    Red,
    Green,
    Blue,
    Orange,
}

impl BrickType {
    pub const ALL: [BrickType; 4] = [
        BrickType::Red,
        BrickType::Green,
        BrickType::Blue,
        BrickType::Orange,
    ];

    pub fn length(self) -> f64 {
        match self {
            BrickType::Red => 0.30,
            BrickType::Green => 0.60,
            BrickType::Blue => 1.20,
            BrickType::Orange => 1.80,
        }
    }

    pub fn mass(self) -> f64 {
        match self {
            BrickType::Red => 1.0,
            BrickType::Green => 1.5,
            BrickType::Blue => 1.5,
            BrickType::Orange => 2.0,
        }
    }

    /// Saturated synthesis color; value kept below the white patch so the
    /// local-contrast rule in the vision module separates them.
    pub fn color(self) -> [u8; 3] {
        match self {
            BrickType::Red => [200, 0, 0],
            BrickType::Green => [0, 170, 0],
            BrickType::Blue => [0, 0, 200],
            BrickType::Orange => [230, 120, 0],
        }
    }
}

impl std::fmt::Display for BrickType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            BrickType::Red => "red",
            BrickType::Green => "green",
            BrickType::Blue => "blue",
            BrickType::Orange => "orange",
        };
        f.write_str(s)
    }
}

/// Static parameters of one brick type.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BrickSpec {
    pub brick_type: BrickType,
    pub length: f64,
    pub width: f64,
    pub height: f64,
    pub mass: f64,
    pub color: [u8; 3],
    /// Top white patch (length, width); centered on the top face.
    pub patch_size: (f64, f64),
}

pub fn brick_spec(brick_type: BrickType) -> BrickSpec {
    BrickSpec {
        brick_type,
        length: brick_type.length(),
        width: BRICK_WIDTH,
        height: BRICK_HEIGHT,
        mass: brick_type.mass(),
        color: brick_type.color(),
        patch_size: (brick_type.length() - 0.10, 0.10),
    }
}

impl BrickSpec {
    pub fn half_extents(&self) -> Vector3<f64> {
        Vector3::new(self.length / 2.0, self.width / 2.0, self.height / 2.0)
    }
}

/// One brick slot in a blueprint layer.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct BlueprintEntry {
    #[serde(rename = "type")]
    pub brick_type: BrickType,
    pub left_x: f64,
}

impl BlueprintEntry {
    pub fn right_x(&self) -> f64 {
        self.left_x + self.brick_type.length()
    }

    pub fn center_x(&self) -> f64 {
        self.left_x + self.brick_type.length() / 2.0
    }
}

/// Target wall pattern: per-layer brick slots, left-aligned packing.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Blueprint {
    pub wall_length: f64,
    pub layers: Vec<Vec<BlueprintEntry>>,
}

impl Blueprint {
    pub fn brick_count(&self) -> usize {
        self.layers.iter().map(|l| l.len()).sum()
    }

    /// Bricks in canonical order (layer ascending, then left_x), with the
    /// layer index. Plan brick ids refer to this enumeration.
    pub fn bricks(&self) -> impl Iterator<Item = (usize, BlueprintEntry)> + '_ {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(layer, entries)| entries.iter().map(move |e| (layer, *e)))
    }

    pub fn validate(&self) -> Result<()> {
        if self.wall_length <= 0.0 {
            return Err(Error::Degenerate("wall_length must be positive"));
        }
        for layer in &self.layers {
            let mut prev_right = f64::NEG_INFINITY;
            for e in layer {
                if e.left_x < prev_right - 1e-9 {
                    return Err(Error::Degenerate("layer entries overlap or are unsorted"));
                }
                if e.left_x < -1e-9 || e.right_x() > self.wall_length + 1e-9 {
                    return Err(Error::Degenerate("brick interval outside the wall span"));
                }
                prev_right = e.right_x();
            }
        }
        Ok(())
    }
}

/// Brick counts available for blueprint generation. The default matches the
/// storage-system load for the colored wall segment.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct Inventory {
    pub red: u32,
    pub green: u32,
    pub blue: u32,
    pub orange: u32,
}

impl Default for Inventory {
    fn default() -> Self {
        Inventory {
            red: 20,
            green: 10,
            blue: 5,
            orange: 0,
        }
    }
}

impl Inventory {
    pub fn count(&self, t: BrickType) -> u32 {
        match t {
            BrickType::Red => self.red,
            BrickType::Green => self.green,
            BrickType::Blue => self.blue,
            BrickType::Orange => self.orange,
        }
    }

    fn take(&mut self, t: BrickType) {
        match t {
            BrickType::Red => self.red -= 1,
            BrickType::Green => self.green -= 1,
            BrickType::Blue => self.blue -= 1,
            BrickType::Orange => self.orange -= 1,
        }
    }

    pub fn total(&self) -> u32 {
        self.red + self.green + self.blue + self.orange
    }

    fn longest_available(&self) -> Option<f64> {
        BrickType::ALL
            .iter()
            .filter(|t| self.count(**t) > 0)
            .map(|t| t.length())
            .fold(None, |acc, l| Some(acc.map_or(l, |a: f64| a.max(l))))
    }
}

pub const DEFAULT_MAX_LAYERS: usize = 6;

/// Generate a random blueprint: layers are filled left to right, the next
/// type drawn uniformly among remaining-inventory types that still fit the
/// layer span; a layer closes when nothing fits. Deterministic per seed.
pub fn random_blueprint(
    seed: u64,
    mut inventory: Inventory,
    wall_length: f64,
    max_layers: usize,
) -> Result<Blueprint> {
    if inventory.total() == 0 {
        return Err(Error::EmptyInventory);
    }
    let longest = inventory.longest_available().unwrap();
    if wall_length <= longest {
        return Err(Error::Degenerate("wall shorter than the longest brick"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::new();
    while inventory.total() > 0 && layers.len() < max_layers {
        let mut layer = Vec::new();
        let mut cursor = 0.0;
        loop {
            let fitting: Vec<BrickType> = BrickType::ALL
                .into_iter()
                .filter(|t| inventory.count(*t) > 0 && t.length() <= wall_length - cursor + 1e-12)
                .collect();
            if fitting.is_empty() {
                break;
            }
            let t = fitting[rng.gen_range(0..fitting.len())];
            layer.push(BlueprintEntry {
                brick_type: t,
                left_x: cursor,
            });
            cursor += t.length();
            inventory.take(t);
        }
        if layer.is_empty() {
            break;
        }
        layers.push(layer);
    }
    let bp = Blueprint {
        wall_length,
        layers,
    };
    bp.validate()?;
    Ok(bp)
}

/// A placed brick. The pose maps the brick's body frame (origin at the box
/// center, x along the length) into the pile/wall frame.
#[derive(Clone, Debug)]
pub struct BrickInstance {
    pub id: u32,
    pub spec: BrickSpec,
    pub pose: Pose3,
}

#[derive(Serialize, Deserialize)]
struct BrickInstanceRepr {
    id: u32,
    #[serde(rename = "type")]
    brick_type: BrickType,
    pose: Pose3,
}

impl Serialize for BrickInstance {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        BrickInstanceRepr {
            id: self.id,
            brick_type: self.spec.brick_type,
            pose: self.pose,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for BrickInstance {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = BrickInstanceRepr::deserialize(d)?;
        Ok(BrickInstance {
            id: r.id,
            spec: brick_spec(r.brick_type),
            pose: r.pose,
        })
    }
}

/// World state handed to the synthetic sensors: bricks posed in a target
/// frame (pile or wall), the target frame posed in the world, ground plane
/// z = 0, plus an optional L-marker pose.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Scene {
    pub bricks: Vec<BrickInstance>,
    pub target_frame_pose: Pose3,
    pub marker_pose: Option<Pose3>,
}

impl Scene {
    pub fn empty(target_frame_pose: Pose3) -> Scene {
        Scene {
            bricks: Vec::new(),
            target_frame_pose,
            marker_pose: None,
        }
    }

    /// Build a scene, rejecting layouts where bricks interpenetrate by more
    /// than 1e-6 m.
    pub fn from_instances(bricks: Vec<BrickInstance>, target_frame_pose: Pose3) -> Result<Scene> {
        for i in 0..bricks.len() {
            for j in (i + 1)..bricks.len() {
                if let Some(depth) = upright_penetration(&bricks[i], &bricks[j]) {
                    if depth > 1e-6 {
                        return Err(Error::OverlappingLayout {
                            a: bricks[i].id,
                            b: bricks[j].id,
                            depth,
                        });
                    }
                }
            }
        }
        Ok(Scene {
            bricks,
            target_frame_pose,
            marker_pose: None,
        })
    }

    /// Bricks with poses composed into the world frame.
    pub fn world_bricks(&self) -> Result<Vec<BrickInstance>> {
        self.bricks
            .iter()
            .map(|b| {
                Ok(BrickInstance {
                    id: b.id,
                    spec: b.spec,
                    pose: self.target_frame_pose.compose(&b.pose)?,
                })
            })
            .collect()
    }
}

/// Penetration depth of two yaw-only boxes (separating axes in the xy plane
/// plus the z interval). Returns `None` when either pose is not upright.
fn upright_penetration(a: &BrickInstance, b: &BrickInstance) -> Option<f64> {
    upright_overlap(
        &a.pose,
        &a.spec.half_extents(),
        &b.pose,
        &b.spec.half_extents(),
    )
}

/// Whether the two bricks' boxes, each expanded by `eps`, intersect.
pub fn bricks_touch(a: &BrickInstance, b: &BrickInstance, eps: f64) -> bool {
    upright_overlap(
        &a.pose,
        &(a.spec.half_extents() + Vector3::repeat(eps)),
        &b.pose,
        &(b.spec.half_extents() + Vector3::repeat(eps)),
    )
    .is_some()
}

fn upright_overlap(
    pose_a: &Pose3,
    he_a: &Vector3<f64>,
    pose_b: &Pose3,
    he_b: &Vector3<f64>,
) -> Option<f64> {
    let upright = |p: &Pose3| (p.rotate(&Vector3::z()) - Vector3::z()).norm() < 1e-9;
    if !upright(pose_a) || !upright(pose_b) {
        return None;
    }
    let z_overlap = (he_a.z + he_b.z) - (pose_a.translation.z - pose_b.translation.z).abs();
    if z_overlap <= 0.0 {
        return None;
    }
    let corners = |pose: &Pose3, he: &Vector3<f64>| -> [nalgebra::Vector2<f64>; 4] {
        let c4 = [
            Vector3::new(-he.x, -he.y, 0.0),
            Vector3::new(he.x, -he.y, 0.0),
            Vector3::new(he.x, he.y, 0.0),
            Vector3::new(-he.x, he.y, 0.0),
        ];
        c4.map(|c| {
            let w = pose.apply(&c);
            nalgebra::Vector2::new(w.x, w.y)
        })
    };
    let ca = corners(pose_a, he_a);
    let cb = corners(pose_b, he_b);
    let mut min_overlap = f64::INFINITY;
    for quad in [&ca, &cb] {
        for i in 0..2 {
            let edge = quad[i + 1] - quad[i];
            let axis = nalgebra::Vector2::new(-edge.y, edge.x).normalize();
            let proj = |cs: &[nalgebra::Vector2<f64>; 4]| {
                let ps: Vec<f64> = cs.iter().map(|c| c.dot(&axis)).collect();
                (
                    ps.iter().cloned().fold(f64::INFINITY, f64::min),
                    ps.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                )
            };
            let (a0, a1) = proj(&ca);
            let (b0, b1) = proj(&cb);
            let overlap = a1.min(b1) - a0.max(b0);
            if overlap <= 0.0 {
                return None;
            }
            min_overlap = min_overlap.min(overlap);
        }
    }
    Some(min_overlap.min(z_overlap))
}

/// Brick instances (in the wall frame) for the built subset of a blueprint.
/// `built` indexes the canonical enumeration of [`Blueprint::bricks`]; pass
/// `None` to build everything.
pub fn wall_instances(bp: &Blueprint, built: Option<&[usize]>) -> Vec<BrickInstance> {
    bp.bricks()
        .enumerate()
        .filter(|(i, _)| built.map_or(true, |b| b.contains(i)))
        .map(|(i, (layer, entry))| {
            let spec = brick_spec(entry.brick_type);
            let center = Vector3::new(
                entry.center_x(),
                0.0,
                layer as f64 * BRICK_HEIGHT + BRICK_HEIGHT / 2.0,
            );
            BrickInstance {
                id: i as u32,
                spec,
                pose: Pose3::from_yaw(0.0, center, Frame::Brick(i as u32), Frame::Wall),
            }
        })
        .collect()
}

/// Pile layout: one row per `(type, count)` entry laid along x, rows spaced
/// along y. Mirrors the competition pickup arrangement at configurable gaps.
pub fn pile_rows(rows: &[(BrickType, u32)], gap_along: f64, row_gap: f64) -> Vec<BrickInstance> {
    let mut out = Vec::new();
    let mut id = 0u32;
    for (row_idx, (t, count)) in rows.iter().enumerate() {
        let spec = brick_spec(*t);
        let y = row_idx as f64 * (BRICK_WIDTH + row_gap);
        let mut cursor = 0.0;
        for _ in 0..*count {
            let center = Vector3::new(cursor + spec.length / 2.0, y, BRICK_HEIGHT / 2.0);
            out.push(BrickInstance {
                id,
                spec,
                pose: Pose3::from_yaw(0.0, center, Frame::Brick(id), Frame::Pile),
            });
            cursor += spec.length + gap_along;
            id += 1;
        }
    }
    out
}

/// Each brick shifted by up to `max_xy` in x/y and rotated by up to
/// `max_yaw` about z, drawn uniformly. Bricks are assumed upright.
pub fn perturb_instances(
    bricks: &[BrickInstance],
    max_xy: f64,
    max_yaw: f64,
    rng: &mut impl Rng,
) -> Vec<BrickInstance> {
    bricks
        .iter()
        .map(|b| {
            let dx = rng.gen_range(-max_xy..=max_xy);
            let dy = rng.gen_range(-max_xy..=max_xy);
            let dyaw = rng.gen_range(-max_yaw..=max_yaw);
            let t = b.pose.translation + Vector3::new(dx, dy, 0.0);
            BrickInstance {
                id: b.id,
                spec: b.spec,
                pose: Pose3::from_yaw(b.pose.yaw() + dyaw, t, b.pose.from, b.pose.to),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_constants() {
        let red = brick_spec(BrickType::Red);
        assert_eq!(red.length, 0.30);
        assert_eq!(red.mass, 1.0);
        let orange = brick_spec(BrickType::Orange);
        assert_eq!(orange.length, 1.80);
        assert_eq!(orange.mass, 2.0);
        let blue = brick_spec(BrickType::Blue);
        assert_eq!(blue.length, 1.20);
        assert_eq!(blue.mass, 1.5);
        assert_eq!(brick_spec(BrickType::Green).length, 0.60);
    }

    #[test]
    fn single_brick_inventory_is_forced() {
        let inv = Inventory {
            red: 1,
            green: 0,
            blue: 0,
            orange: 0,
        };
        let bp = random_blueprint(3, inv, 4.0, DEFAULT_MAX_LAYERS).unwrap();
        assert_eq!(bp.layers.len(), 1);
        assert_eq!(bp.layers[0].len(), 1);
        assert_eq!(bp.layers[0][0].brick_type, BrickType::Red);
        assert_eq!(bp.layers[0][0].left_x, 0.0);
    }

    #[test]
    fn default_inventory_brick_count_in_range() {
        for seed in 0..20 {
            let bp = random_blueprint(seed, Inventory::default(), 4.0, DEFAULT_MAX_LAYERS)
                .unwrap();
            let n = bp.brick_count();
            assert!((7..=35).contains(&n), "seed {seed}: {n} bricks");
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = random_blueprint(42, Inventory::default(), 4.0, 4).unwrap();
        let b = random_blueprint(42, Inventory::default(), 4.0, 4).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn full_layers_keep_a_trailing_gap() {
        // 3a + 6b + 12c = 40 has no solution in non-negative integers, so a
        // 4 m layer can never be filled exactly by the default inventory.
        for seed in 0..50 {
            let bp = random_blueprint(seed, Inventory::default(), 4.0, DEFAULT_MAX_LAYERS)
                .unwrap();
            bp.validate().unwrap();
            for layer in &bp.layers {
                let fill: f64 = layer.iter().map(|e| e.brick_type.length()).sum();
                assert!(bp.wall_length - fill > 1e-9);
            }
        }
    }

    #[test]
    fn empty_inventory_is_an_error() {
        let inv = Inventory {
            red: 0,
            green: 0,
            blue: 0,
            orange: 0,
        };
        assert!(matches!(
            random_blueprint(0, inv, 4.0, 2),
            Err(Error::EmptyInventory)
        ));
    }

    #[test]
    fn wall_brick_poses() {
        let bp = Blueprint {
            wall_length: 4.0,
            layers: vec![
                vec![BlueprintEntry {
                    brick_type: BrickType::Red,
                    left_x: 0.0,
                }],
                vec![BlueprintEntry {
                    brick_type: BrickType::Red,
                    left_x: 0.0,
                }],
            ],
        };
        let bricks = wall_instances(&bp, None);
        assert_eq!(bricks.len(), 2);
        let c0 = bricks[0].pose.translation;
        assert!((c0 - Vector3::new(0.15, 0.0, 0.10)).norm() < 1e-12);
        let c1 = bricks[1].pose.translation;
        assert!((c1.z - 0.30).abs() < 1e-12);
    }

    #[test]
    fn empty_built_subset_gives_empty_scene() {
        let bp = Blueprint {
            wall_length: 4.0,
            layers: vec![vec![BlueprintEntry {
                brick_type: BrickType::Green,
                left_x: 0.0,
            }]],
        };
        let bricks = wall_instances(&bp, Some(&[]));
        assert!(bricks.is_empty());
        let scene = Scene::from_instances(bricks, Pose3::identity(Frame::World)).unwrap();
        assert!(scene.bricks.is_empty());
    }

    #[test]
    fn overlapping_layout_is_rejected() {
        let a = BrickInstance {
            id: 0,
            spec: brick_spec(BrickType::Red),
            pose: Pose3::from_yaw(
                0.0,
                Vector3::new(0.0, 0.0, 0.1),
                Frame::Brick(0),
                Frame::Pile,
            ),
        };
        let mut b = a.clone();
        b.id = 1;
        b.pose.translation.x = 0.1;
        b.pose.from = Frame::Brick(1);
        assert!(matches!(
            Scene::from_instances(vec![a, b], Pose3::identity(Frame::World)),
            Err(Error::OverlappingLayout { .. })
        ));
    }

    #[test]
    fn touching_bricks_are_allowed() {
        let a = BrickInstance {
            id: 0,
            spec: brick_spec(BrickType::Red),
            pose: Pose3::from_yaw(
                0.0,
                Vector3::new(0.0, 0.0, 0.1),
                Frame::Brick(0),
                Frame::Pile,
            ),
        };
        let mut b = a.clone();
        b.id = 1;
        b.pose.translation.x = 0.30; // exactly adjacent
        b.pose.from = Frame::Brick(1);
        assert!(Scene::from_instances(vec![a, b], Pose3::identity(Frame::World)).is_ok());
    }

    #[test]
    fn blueprint_json_schema() {
        let bp = Blueprint {
            wall_length: 4.0,
            layers: vec![vec![BlueprintEntry {
                brick_type: BrickType::Red,
                left_x: 0.0,
            }]],
        };
        let json = serde_json::to_value(&bp).unwrap();
        assert_eq!(
            json,
            serde_json::json!({"wall_length": 4.0, "layers": [[{"type": "red", "left_x": 0.0}]]})
        );
    }
}
