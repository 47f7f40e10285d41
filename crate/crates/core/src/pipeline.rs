//! End-to-end LiDAR registration: preprocess the scan, rough-align the
//! rendered world model, re-render per brick at the refined pose, and run
//! the joint multi-brick refinement.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geom::{PointCloud, Pose3};
use crate::register::{
    contact_pairs_from_instances, preprocess_scan, rough_align, solve_multi_brick,
    AlignmentResult, BrickModel, CorrespondenceParams, MultiBrickProblem, PreprocessParams,
    RoughAlignConfig, SolverConfig,
};
use crate::synth::{render_model_cloud, split_brick_clouds};
use crate::world::{BrickInstance, Scene};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct RegistrationConfig {
    pub preprocess: PreprocessParams,
    pub rough: RoughAlignConfig,
    pub solver: SolverConfig,
    pub correspondence: CorrespondenceParams,
    pub rotation_weight: f64,
    pub translation_weight: f64,
    /// Half edge of the cubic crop around the initial target pose (m).
    pub cube_half_extent: f64,
    /// Voxel resolution for both the scan and the rendered models (m).
    pub voxel: f64,
    /// Box expansion when collecting touching brick pairs (m).
    pub contact_eps: f64,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        RegistrationConfig {
            preprocess: PreprocessParams::default(),
            rough: RoughAlignConfig::default(),
            solver: SolverConfig::default(),
            correspondence: CorrespondenceParams::default(),
            rotation_weight: 1.0,
            translation_weight: 1.0,
            cube_half_extent: 3.0,
            voxel: 0.02,
            contact_eps: 0.01,
        }
    }
}

/// Run the full registration chain against a believed world model.
///
/// `believed` poses the bricks in the target frame with the initial guess of
/// the target pose; `scan` is the raw measurement in the same frame as the
/// guess; `sensor_pose` is the scanner pose used for rendering and normal
/// orientation. Returns the refined target pose plus per-brick corrections.
pub fn run_registration(
    believed: &Scene,
    scan: &PointCloud,
    sensor_pose: &Pose3,
    marker_dir: Option<Vector2<f64>>,
    cfg: &RegistrationConfig,
) -> Result<AlignmentResult> {
    let init = believed.target_frame_pose;
    let preprocessed = preprocess_scan(
        scan,
        &init,
        cfg.cube_half_extent,
        cfg.voxel,
        &sensor_pose.translation,
        &cfg.preprocess,
    )?;

    // rough stage: ground-free model of the whole believed scene
    let initial_bricks = believed.world_bricks()?;
    let rough_model = render_model_cloud(&initial_bricks, sensor_pose, cfg.voxel, false);
    let refined = rough_align(&rough_model, &preprocessed, &init, marker_dir, &cfg.rough)?;

    // per-brick stage: re-render at the refined pose, ground included
    let refined_bricks: Vec<BrickInstance> = believed
        .bricks
        .iter()
        .map(|b| {
            Ok(BrickInstance {
                id: b.id,
                spec: b.spec,
                pose: refined.compose(&b.pose)?,
            })
        })
        .collect::<Result<_>>()?;
    let model = render_model_cloud(&refined_bricks, sensor_pose, cfg.voxel, true);
    let (brick_clouds, ground) = split_brick_clouds(&model)?;

    let mut models = Vec::new();
    let mut posed: Vec<BrickInstance> = Vec::new();
    for (id, cloud) in brick_clouds {
        let instance = refined_bricks
            .iter()
            .find(|b| b.id == id)
            .expect("rendered label matches a brick");
        models.push(BrickModel {
            id,
            cloud,
            initial_pose: instance.pose,
        });
        posed.push(instance.clone());
    }
    let contact_pairs = contact_pairs_from_instances(&posed, cfg.contact_eps);

    let problem = MultiBrickProblem {
        target_pose: refined,
        bricks: models,
        ground,
        scan: preprocessed,
        contact_pairs,
        rotation_weight: cfg.rotation_weight,
        translation_weight: cfg.translation_weight,
        correspondence: cfg.correspondence,
    };
    solve_multi_brick(&problem, &cfg.solver)
}

/// Corrected world pose per brick id: the per-brick correction applied to
/// the brick rendered at the refined target pose.
pub fn corrected_world_poses(
    result: &AlignmentResult,
    believed: &Scene,
) -> Result<Vec<(u32, Pose3)>> {
    let mut out = Vec::new();
    for correction in &result.bricks {
        let brick = believed
            .bricks
            .iter()
            .find(|b| b.id == correction.id)
            .ok_or(crate::error::Error::Degenerate(
                "correction for an unknown brick id",
            ))?;
        let initial = result.target_pose.compose(&brick.pose)?;
        out.push((correction.id, correction.corrected_pose(&initial)));
    }
    Ok(out)
}

/// Yaw difference folded to [-pi/2, pi/2): box bricks are symmetric under
/// 180 degree rotation, so pose errors are measured modulo pi.
pub fn yaw_error_mod_pi(estimated: &Pose3, truth: &Pose3) -> f64 {
    use std::f64::consts::PI;
    let mut d = estimated.yaw() - truth.yaw();
    while d >= PI / 2.0 {
        d -= PI;
    }
    while d < -PI / 2.0 {
        d += PI;
    }
    d
}

/// Planar translation error components (x, y) and total 3-D error.
pub fn translation_error(estimated: &Pose3, truth: &Pose3) -> (Vector3<f64>, f64) {
    let d = estimated.translation - truth.translation;
    (d, d.norm())
}
