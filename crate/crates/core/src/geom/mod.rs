//! Frame-aware rigid-body math and generic point-cloud/geometric primitives.
//!
//! Everything here is pure and reentrant: no global state, values freely
//! transferable between threads. Units are meters and radians throughout;
//! frames are right-handed with z up, yaw is rotation about +z.

mod cloud;
mod cluster;
mod index;
mod io;
mod pose;
mod ransac;
mod rect;

pub use cloud::{estimate_normals, voxel_downsample, PointCloud, GROUND_LABEL};
pub use cluster::{euclidean_cluster, pca, pca_axis, Pca3};
pub use index::SpatialGrid;
pub use io::{read_ply, write_cloud_csv, write_ply};
pub use pose::{Frame, Pose3};
pub use ransac::{fit_lines_ransac, fit_plane_ransac, Line2, Plane};
pub use rect::{convex_hull, min_oriented_rect, OrientedRect};
