//! The LiDAR alignment stack: scan preprocessing, two-stage rough ICP with
//! an optional marker-direction cost, joint multi-brick refinement with
//! pairwise rigidity terms, and per-brick confidences.

mod icp;
mod multibrick;
mod preprocess;

pub use icp::{rough_align, RoughAlignConfig};
pub use multibrick::{
    contact_pairs_from_instances, jacobian_check, solve_multi_brick, AlignmentResult,
    BrickCorrection, BrickModel, MultiBrickProblem,
};
pub use preprocess::{preprocess_scan, PreprocessParams};

use serde::{Deserialize, Serialize};

/// Correspondence gates: maximum point distance and minimum normal
/// agreement.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct CorrespondenceParams {
    pub max_dist: f64,
    pub min_normal_dot: f64,
}

impl Default for CorrespondenceParams {
    fn default() -> Self {
        CorrespondenceParams {
            max_dist: 0.10,
            min_normal_dot: 0.8,
        }
    }
}

/// Damped Gauss-Newton termination and damping controls.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Stop when the parameter update norm falls below this.
    pub pose_change_tol: f64,
    /// Stop when the relative cost change falls below this.
    pub cost_change_tol: f64,
    pub max_iterations: usize,
    pub damping_init: f64,
    /// Multiplied onto the damping on a rejected step.
    pub damping_increase: f64,
    /// Divided out of the damping on an accepted step.
    pub damping_decrease: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            pose_change_tol: 5e-8,
            cost_change_tol: 1e-6,
            max_iterations: 20,
            damping_init: 1e-4,
            damping_increase: 10.0,
            damping_decrease: 10.0,
        }
    }
}
