use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{umeyama_align, Rigid, Sim3};
use crate::real::Mat3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseMetrics {
    /// Geodesic rotation error, degrees.
    pub rot_rmse_deg: f64,
    /// Camera-center error, scene units.
    pub trans_rmse: f64,
    /// `(rot_err_deg, trans_err)` per view after alignment.
    pub per_view: Vec<(f64, f64)>,
    /// Maps the estimated world frame onto the ground-truth frame.
    #[serde(skip, default = "Sim3::identity")]
    pub alignment: Sim3,
}

fn rotation_error_deg(est: &Mat3, gt: &Mat3) -> f64 {
    est.mul_mat(&gt.transpose()).rotation_angle().to_degrees()
}

/// Two views: the similarity that puts estimated camera 0 exactly on the
/// ground truth and matches the baseline length.
fn two_view_gauge(est: &[Rigid], gt: &[Rigid]) -> Sim3 {
    let (e0, g0) = (&est[0], &gt[0]);
    let baseline_est = (est[1].center() - e0.center()).norm();
    let baseline_gt = (gt[1].center() - g0.center()).norm();
    let scale = if baseline_est > 0.0 { baseline_gt / baseline_est } else { 1.0 };
    // x_gt = R_g0ᵀ (R_e0 x + t_e0 − t_g0), scaled about the camera-0 center.
    let rotation = g0.rotation.transpose().mul_mat(&e0.rotation);
    let c_e = e0.center();
    let c_g = g0.center();
    Sim3 {
        scale,
        rotation,
        translation: c_g - rotation.mul_vec(&c_e) * scale,
    }
}

/// Pose errors after removing the gauge freedom. Three or more views are
/// aligned by a similarity fit of the camera centers; with two views camera
/// 0 is pinned to ground truth and the RMSE reports view 1 only.
pub fn pose_rmse(estimated: &[Rigid], ground_truth: &[Rigid]) -> Result<PoseMetrics> {
    if estimated.len() != ground_truth.len() {
        return Err(Error::CountMismatch {
            estimated: estimated.len(),
            ground_truth: ground_truth.len(),
        });
    }
    let n = estimated.len();
    if n < 2 {
        return Err(Error::InsufficientPoints { needed: 2, got: n });
    }
    let alignment = if n == 2 {
        two_view_gauge(estimated, ground_truth)
    } else {
        let src: Vec<_> = estimated.iter().map(|c| c.center()).collect();
        let dst: Vec<_> = ground_truth.iter().map(|c| c.center()).collect();
        umeyama_align(&src, &dst)?
    };
    let per_view: Vec<(f64, f64)> = estimated
        .iter()
        .zip(ground_truth)
        .map(|(e, g)| {
            let a = alignment.transform_camera(e);
            (rotation_error_deg(&a.rotation, &g.rotation), (a.center() - g.center()).norm())
        })
        .collect();
    let counted = if n == 2 { &per_view[1..] } else { &per_view[..] };
    let rms = |f: fn(&(f64, f64)) -> f64| (counted.iter().map(|e| f(e).powi(2)).sum::<f64>() / counted.len() as f64).sqrt();
    Ok(PoseMetrics {
        rot_rmse_deg: rms(|e| e.0),
        trans_rmse: rms(|e| e.1),
        per_view,
        alignment,
    })
}
