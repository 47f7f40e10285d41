//! Perception and planning algorithms for autonomous brick-wall construction,
//! exercised at desk scale against synthetic sensors.
//!
//! The crate is organized along the data flow of the two robot stacks:
//!
//! * [`geom`] – frame-aware rigid transforms, point clouds, and the generic
//!   geometric machinery (RANSAC, clustering, PCA, oriented rectangles).
//! * [`world`] – the parametrized world model: brick catalog, blueprints,
//!   pile layouts, and scene assembly.
//! * [`synth`] – synthetic sensing: analytic depth ray casting of box scenes
//!   and flat-shaded RGB rendering for the camera pipeline.
//! * [`pile`] – rough pile detection from a LiDAR scan (geofence, ground
//!   removal, clustering, PCA pose).
//! * [`marker`] – L-shaped wall-marker pose estimation from ground-projected
//!   points.
//! * [`register`] – the alignment stack: scan preprocessing, two-stage rough
//!   ICP with an optional marker-direction cost, and joint multi-brick
//!   refinement with pairwise rigidity terms.
//! * [`planner`] – build-order optimization: exact backtracking search with
//!   pruning plus a greedy baseline.
//! * [`vision`] – camera pipeline: patch segmentation, quad extraction,
//!   planar PnP, and multi-hypothesis tracking.
//! * [`uavnav`] – wall-segment localization and the cone-of-descent gate.
//! * [`pipeline`] – glue running the full LiDAR registration chain.

pub mod error;
pub mod geom;
pub mod marker;
pub mod pile;
pub mod pipeline;
pub mod planner;
pub mod register;
pub mod synth;
pub mod uavnav;
pub mod vision;
pub mod world;

pub use error::{Error, Result};
pub use geom::{Frame, Line2, Plane, PointCloud, Pose3, GROUND_LABEL};
pub use world::{Blueprint, BrickInstance, BrickSpec, BrickType, Scene};
