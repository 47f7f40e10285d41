//! Camera pipeline: local-contrast patch segmentation, quad extraction with
//! color voting, planar PnP pose recovery, and multi-hypothesis tracking.

mod pnp;
mod quads;
mod segment;
mod track;

pub use pnp::{planar_pnp, PnpResult};
pub use quads::{extract_quads, QuadCandidate};
pub use segment::{rgb_to_hsv, segment_patches, HueWindows, Mask, SegmentationParams};
pub use track::{mht_update, Hypothesis, Observation, TrackParams, TrackSet};

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geom::Pose3;
use crate::synth::{CameraIntrinsics, RgbImage};
use crate::world::BrickType;

/// A verified patch detection: image quad, voted brick type, and the
/// camera-from-patch pose.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PatchDetection {
    /// Image corners (px), counter-clockwise.
    pub quad: [Vector2<f64>; 4],
    pub brick_type: BrickType,
    pub pose: Pose3,
    pub reproj_rmse: f64,
    /// Near-square patches cannot resolve the 90 degree side assignment.
    pub ambiguous: bool,
}

/// Full per-frame pipeline: segmentation, quad extraction, PnP.
pub fn detect_patches(
    image: &RgbImage,
    intrinsics: &CameraIntrinsics,
    params: &SegmentationParams,
    exclusion: Option<&Mask>,
) -> Result<Vec<PatchDetection>> {
    let mask = segment_patches(image, params, exclusion);
    let mut out = Vec::new();
    for cand in extract_quads(&mask, image, params) {
        match planar_pnp(&cand.quad, cand.brick_type, intrinsics) {
            Ok(pnp) => out.push(PatchDetection {
                quad: cand.quad,
                brick_type: cand.brick_type,
                pose: pnp.pose,
                reproj_rmse: pnp.rmse,
                ambiguous: pnp.ambiguous,
            }),
            Err(_) => continue, // degenerate quad: drop the candidate
        }
    }
    Ok(out)
}
