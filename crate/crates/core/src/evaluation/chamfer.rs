use kiddo::{ImmutableKdTree, SquaredEuclidean};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{rigid_align, Sim3};
use crate::real::Vec3;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChamferMode {
    /// `mean_a + mean_b`.
    #[default]
    Sum,
    /// `(mean_a + mean_b) / 2`.
    MeanOfMeans,
}

/// Nearest-neighbor index over a fixed point set.
pub struct PointIndex {
    tree: ImmutableKdTree<f64, 3>,
}

impl PointIndex {
    pub fn new(points: &[Vec3]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyInput);
        }
        let arr: Vec<[f64; 3]> = points.iter().map(|p| p.to_array()).collect();
        Ok(Self {
            tree: ImmutableKdTree::new_from_slice(&arr),
        })
    }

    /// Distance to and index of the nearest point.
    pub fn nearest(&self, q: &Vec3) -> (f64, usize) {
        let nn = self.tree.nearest_one::<SquaredEuclidean>(&q.to_array());
        (nn.distance.sqrt(), nn.item as usize)
    }

    pub fn mean_distance(&self, queries: &[Vec3]) -> f64 {
        queries.iter().map(|q| self.nearest(q).0).sum::<f64>() / queries.len() as f64
    }
}

fn combine(a_to_b: f64, b_to_a: f64, mode: ChamferMode) -> f64 {
    match mode {
        ChamferMode::Sum => a_to_b + b_to_a,
        ChamferMode::MeanOfMeans => 0.5 * (a_to_b + b_to_a),
    }
}

pub fn chamfer_distance(a: &[Vec3], b: &[Vec3], mode: ChamferMode) -> Result<f64> {
    let ia = PointIndex::new(a)?;
    let ib = PointIndex::new(b)?;
    Ok(combine(ib.mean_distance(a), ia.mean_distance(b), mode))
}

/// Double loop reference for [`chamfer_distance`].
pub fn chamfer_brute_force(a: &[Vec3], b: &[Vec3], mode: ChamferMode) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput);
    }
    let directed = |p: &[Vec3], q: &[Vec3]| {
        p.iter()
            .map(|x| q.iter().map(|y| (*x - *y).norm()).fold(f64::INFINITY, f64::min))
            .sum::<f64>()
            / p.len() as f64
    };
    Ok(combine(directed(a, b), directed(b, a), mode))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IcpResult {
    pub transform: Sim3,
    /// RMS nearest-neighbor distance at the final transform.
    pub residual: f64,
    pub iterations: usize,
}

pub const ICP_MAX_ITERS: usize = 50;
pub const ICP_TOLERANCE: f64 = 1e-8;

/// Point-to-point ICP. The scale of `init` is kept; each iteration refines
/// the rigid part until the mean squared error changes by less than 1e-8.
pub fn icp_refine(source: &[Vec3], target: &[Vec3], init: &Sim3) -> Result<IcpResult> {
    for (n, got) in [(3, source.len()), (3, target.len())] {
        if got < n {
            return Err(Error::InsufficientPoints { needed: n, got });
        }
    }
    let index = PointIndex::new(target)?;
    let mut transform = *init;
    let mut prev = f64::INFINITY;
    let mut iterations = 0;
    let mse = |t: &Sim3| source.iter().map(|p| index.nearest(&t.apply(p)).0.powi(2)).sum::<f64>() / source.len() as f64;
    for _ in 0..ICP_MAX_ITERS {
        let moved: Vec<Vec3> = source.iter().map(|p| transform.apply(p)).collect();
        let matched: Vec<Vec3> = moved.iter().map(|p| target[index.nearest(p).1]).collect();
        let err = moved
            .iter()
            .zip(&matched)
            .map(|(p, q)| (*p - *q).norm_squared())
            .sum::<f64>()
            / moved.len() as f64;
        iterations += 1;
        if (prev - err).abs() < ICP_TOLERANCE || err == 0.0 {
            break;
        }
        prev = err;
        let Ok(step) = rigid_align(&moved, &matched) else {
            break;
        };
        transform = step.compose(&transform);
    }
    Ok(IcpResult {
        transform,
        residual: mse(&transform).sqrt(),
        iterations,
    })
}

/// Chamfer between `source` moved by `init` and `target`, and after ICP
/// refinement from `init`; the refinement is dropped if it does not help.
/// Returns `(chamfer_init, chamfer_best, best_transform)`.
pub fn chamfer_with_icp(source: &[Vec3], target: &[Vec3], init: &Sim3, mode: ChamferMode) -> Result<(f64, f64, Sim3)> {
    let apply = |t: &Sim3| source.iter().map(|p| t.apply(p)).collect::<Vec<_>>();
    let base = chamfer_distance(&apply(init), target, mode)?;
    let refined = icp_refine(source, target, init)?;
    let after = chamfer_distance(&apply(&refined.transform), target, mode)?;
    if after <= base {
        Ok((base, after, refined.transform))
    } else {
        Ok((base, base, *init))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::se3_exp;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3> {
        (0..n)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-0.2..0.3),
                )
            })
            .collect()
    }

    #[test]
    fn kd_tree_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = cloud(&mut rng, 700);
        let b = cloud(&mut rng, 900);
        for mode in [ChamferMode::Sum, ChamferMode::MeanOfMeans] {
            let fast = chamfer_distance(&a, &b, mode).unwrap();
            let slow = chamfer_brute_force(&a, &b, mode).unwrap();
            assert!((fast - slow).abs() < 1e-9);
        }
        assert_eq!(chamfer_distance(&a, &a, ChamferMode::Sum).unwrap(), 0.0);
        assert!(matches!(chamfer_distance(&a, &[], ChamferMode::Sum), Err(Error::EmptyInput)));
    }

    #[test]
    fn icp_recovers_small_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let src = cloud(&mut rng, 400);
        let motion = Sim3::from_rigid(&se3_exp(&[0.02, -0.03, 0.01, 0.02, 0.01, -0.015]));
        let dst: Vec<Vec3> = src.iter().map(|p| motion.apply(p)).collect();
        let r = icp_refine(&src, &dst, &Sim3::identity()).unwrap();
        assert!(r.transform.rotation.max_abs_diff(&motion.rotation) < 1e-6);
        assert!((r.transform.translation - motion.translation).max_abs() < 1e-6);
        let fixed = icp_refine(&src, &src, &Sim3::identity()).unwrap();
        assert_eq!(fixed.residual, 0.0);
        assert!(fixed.transform.rotation.max_abs_diff(&Sim3::identity().rotation) < 1e-12);
        assert!(matches!(
            icp_refine(&src[..2], &dst, &Sim3::identity()),
            Err(Error::InsufficientPoints { .. })
        ));
    }
}
