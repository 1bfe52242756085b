//! Pose and surface metrics: gauge-aligned pose RMSE, marching cubes,
//! Chamfer distance and ICP refinement.

mod chamfer;
mod mesh;
mod metrics;
mod tables;

pub use chamfer::{
    chamfer_brute_force, chamfer_distance, chamfer_with_icp, icp_refine, ChamferMode, IcpResult, PointIndex,
    ICP_MAX_ITERS, ICP_TOLERANCE,
};
pub use mesh::{marching_cubes, sample_analytic_surface, Bounds, Mesh, MIN_RESOLUTION};
pub use metrics::{pose_rmse, PoseMetrics};
