use proptest::prelude::*;
use scsurf_core::evaluation::{chamfer_brute_force, chamfer_distance, pose_rmse, ChamferMode};
use scsurf_core::fields::EncodingConfig;
use scsurf_core::geometry::{
    apply_homography, pixel_ray, plane_homography, plane_transfer, project_with, se3_exp, so3_log, Intrinsics, Rigid,
    Sim3,
};
use scsurf_core::rendering::neus_weights;
use scsurf_core::scene_io::Normalization;
use scsurf_core::training::anneal_alpha;
use scsurf_core::Vec3;

fn vec3(r: f64) -> impl Strategy<Value = Vec3> {
    (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn twist(rot: f64, trans: f64) -> impl Strategy<Value = [f64; 6]> {
    (vec3(rot), vec3(trans)).prop_map(|(w, u)| [w.x, w.y, w.z, u.x, u.y, u.z])
}

fn max_abs_diff(a: &Rigid, b: &Rigid) -> f64 {
    let mut m: f64 = 0.0;
    for r in 0..3 {
        for c in 0..3 {
            m = m.max((a.rotation.m[r][c] - b.rotation.m[r][c]).abs());
        }
    }
    m.max((a.translation - b.translation).norm())
}

fn camera_on_ring(angle: f64, radius: f64) -> Rigid {
    let eye = Vec3::new(radius * angle.cos(), 0.4, radius * angle.sin());
    Rigid::look_at(eye, Vec3::zeros(), Vec3::new(0.0, 1.0, 0.0))
}

proptest! {
    #[test]
    fn exp_is_orthonormal(t in twist(3.0, 2.0)) {
        let r = se3_exp(&t).rotation;
        let rtr = r.transpose().mul_mat(&r);
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                prop_assert!((rtr.m[i][j] - expect).abs() < 1e-12);
            }
        }
        prop_assert!((r.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exp_of_negated_twist_inverts(t in twist(3.0, 2.0)) {
        let neg = t.map(|v| -v);
        let id = se3_exp(&t).compose(&se3_exp(&neg));
        prop_assert!(max_abs_diff(&id, &Rigid::identity()) < 1e-10);
    }

    #[test]
    fn log_inverts_rotation_exp(w in vec3(1.7)) {
        prop_assume!(w.norm() < 3.1);
        let r = se3_exp(&[w.x, w.y, w.z, 0.0, 0.0, 0.0]).rotation;
        prop_assert!((so3_log(&r) - w).norm() < 1e-9);
    }

    #[test]
    fn pixel_rays_reproject_onto_their_pixel(t in twist(0.5, 0.5), u in 0.0..96.0f64, v in 0.0..72.0f64, s in 0.5..10.0f64) {
        let k = Intrinsics::from_fov(55.0, 96, 72);
        let cam = se3_exp(&t);
        let ray = pixel_ray([u, v], &cam, &k);
        prop_assert!((ray.direction.norm() - 1.0).abs() < 1e-12);
        let back = project_with(&ray.at(s), &cam, &k).unwrap();
        prop_assert!((back[0] - u).abs() < 1e-8 && (back[1] - v).abs() < 1e-8);
    }

    #[test]
    fn homography_directions_are_mutual_inverses(a in 0.0..1.2f64, b in -1.2..0.0f64, n in vec3(1.0), p in vec3(0.3)) {
        prop_assume!(n.norm() > 0.2);
        let (ci, cj) = (camera_on_ring(a, 2.5), camera_on_ring(b, 2.5));
        let k = Intrinsics::from_fov(50.0, 96, 96);
        let n_cam = ci.rotation.mul_vec(&n.normalize());
        let d = -n_cam.dot(&ci.apply(&p));
        prop_assume!(d.abs() > 0.1);
        let g = plane_transfer(&ci, &cj, &k, &k, &n_cam, d).unwrap();
        let h = plane_homography(&ci, &cj, &k, &k, &n_cam, d).unwrap();
        let px = project_with(&p, &ci, &k).unwrap();
        let q = apply_homography(&g, px[0], px[1]);
        let direct = project_with(&p, &cj, &k).unwrap();
        prop_assert!((q[0] - direct[0]).hypot(q[1] - direct[1]) < 1e-7);
        let back = apply_homography(&h, q[0], q[1]);
        prop_assert!((back[0] - px[0]).hypot(back[1] - px[1]) < 1e-7);
    }

    #[test]
    fn neus_weights_are_a_sub_probability(sdf in prop::collection::vec(-2.0..2.0f64, 2..64), log_s in 0.0..4.0f64) {
        let w = neus_weights(&sdf, 10f64.powf(log_s));
        prop_assert_eq!(w.len(), sdf.len());
        prop_assert!(w.iter().all(|&x| x >= 0.0));
        prop_assert!(w.iter().sum::<f64>() <= 1.0 + 1e-12);
    }

    #[test]
    fn rising_sdf_gives_no_weight(mut sdf in prop::collection::vec(-2.0..2.0f64, 2..64), log_s in 0.0..4.0f64) {
        sdf.sort_by(f64::total_cmp);
        prop_assert!(neus_weights(&sdf, 10f64.powf(log_s)).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn pose_metrics_ignore_the_gauge(
        noise in prop::collection::vec(twist(0.1, 0.1), 3..6),
        gauge in twist(1.0, 1.0),
        log_scale in -0.5..0.5f64,
    ) {
        let n = noise.len();
        let gt: Vec<Rigid> = (0..n).map(|i| camera_on_ring(i as f64 * 0.5, 2.5)).collect();
        let est: Vec<Rigid> = gt.iter().zip(&noise).map(|(g, t)| se3_exp(t).compose(g)).collect();
        let base = pose_rmse(&est, &gt).unwrap();
        let g = se3_exp(&gauge);
        let sim = Sim3 { scale: log_scale.exp(), rotation: g.rotation, translation: g.translation };
        let moved: Vec<Rigid> = est.iter().map(|c| sim.transform_camera(c)).collect();
        let again = pose_rmse(&moved, &gt).unwrap();
        prop_assert!((base.rot_rmse_deg - again.rot_rmse_deg).abs() < 1e-6);
        prop_assert!((base.trans_rmse - again.trans_rmse).abs() < 1e-8);
    }

    #[test]
    fn exact_poses_have_zero_error(gauge in twist(1.0, 1.0), log_scale in -0.5..0.5f64) {
        let gt: Vec<Rigid> = (0..4).map(|i| camera_on_ring(i as f64 * 0.4, 2.5)).collect();
        let g = se3_exp(&gauge);
        let sim = Sim3 { scale: log_scale.exp(), rotation: g.rotation, translation: g.translation };
        let est: Vec<Rigid> = gt.iter().map(|c| sim.transform_camera(c)).collect();
        let m = pose_rmse(&est, &gt).unwrap();
        prop_assert!(m.rot_rmse_deg < 1e-6 && m.trans_rmse < 1e-9);
    }

    #[test]
    fn chamfer_is_symmetric_and_matches_brute_force(
        a in prop::collection::vec(vec3(1.0), 1..40),
        b in prop::collection::vec(vec3(1.0), 1..40),
    ) {
        for mode in [ChamferMode::Sum, ChamferMode::MeanOfMeans] {
            let ab = chamfer_distance(&a, &b, mode).unwrap();
            let ba = chamfer_distance(&b, &a, mode).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!((ab - chamfer_brute_force(&a, &b, mode).unwrap()).abs() < 1e-12);
            prop_assert!(chamfer_distance(&a, &a, mode).unwrap() == 0.0);
        }
    }

    #[test]
    fn annealing_is_monotone_and_bounded(start in 0usize..500, len in 0usize..2000, freqs in 1usize..10, i in 0usize..3000) {
        let sched = (start, start + len);
        let a = anneal_alpha(i, sched, freqs);
        let b = anneal_alpha(i + 1, sched, freqs);
        prop_assert!((0.0..=freqs as f64).contains(&a));
        prop_assert!(b >= a);
        let enc = EncodingConfig { alpha: a, ..EncodingConfig::full(freqs) };
        for k in 0..freqs {
            let w = enc.band_weight(k);
            prop_assert!((0.0..=1.0).contains(&w));
            if k + 1 < freqs {
                prop_assert!(enc.band_weight(k + 1) <= w);
            }
        }
    }

    #[test]
    fn normalization_round_trips(points in prop::collection::vec(vec3(50.0), 2..30), q in vec3(50.0)) {
        let norm = Normalization::fit(&points, 0.1);
        prop_assert!((norm.denormalize(norm.normalize(q)) - q).norm() < 1e-9 * (1.0 + q.norm()));
        for p in &points {
            prop_assert!(norm.normalize(*p).norm() <= 1.0 + 1e-9);
        }
    }
}
