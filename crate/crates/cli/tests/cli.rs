use std::path::Path;
use std::process::{Command, Output};

use scsurf_cli::{EXIT_MISSING_INPUT, EXIT_USAGE};
use scsurf_core::training::TrainConfig;

fn sc_surf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sc-surf"))
        .args(args)
        .env("SC_SURF_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn tiny_config(dir: &Path) -> std::path::PathBuf {
    let cfg = TrainConfig {
        iterations: 6,
        rays_per_batch: 8,
        correspondences_per_batch: 8,
        eikonal_samples: 8,
        sdf_layers: 2,
        sdf_width: 16,
        sdf_skip_at: None,
        feature_dim: 4,
        num_freqs: 4,
        prior_fit_iters: 10,
        radiance_layers: 1,
        radiance_width: 16,
        n_coarse: 8,
        n_importance: 4,
        up_sample_steps: 1,
        intersect_samples: 32,
        patch_half_extent: 2,
        log_every: 3,
        checkpoint_every: 3,
        ..TrainConfig::default()
    };
    let path = dir.join("tiny.cfg");
    std::fs::write(&path, cfg.to_kv()).unwrap();
    path
}

#[test]
fn full_pipeline_through_the_binary() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("scene");
    let run = tmp.path().join("run");
    let out = sc_surf(&["synth", "--shape", "torus", "--out", p(&scene), "--res", "40x36", "--matches", "50"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(scene.join("scene.json").exists() && scene.join("matches.txt").exists());

    let cfg = tiny_config(tmp.path());
    let out = sc_surf(&["train", "--scene", p(&scene), "--config", p(&cfg), "--out", p(&run)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("rot RMSE"));
    assert!(run.join("metrics.csv").exists() && run.join("run_info.json").exists());

    let mesh = tmp.path().join("m.ply");
    let out = sc_surf(&["extract-mesh", "--run", p(&run), "--res", "32", "--out", p(&mesh)]);
    // An untrained field may or may not cross zero inside the box.
    assert!(out.status.success() || out.status.code() == Some(scsurf_cli::EXIT_EMPTY));

    let out = sc_surf(&["eval", "--run", p(&run), "--scene", p(&scene), "--res", "32", "--samples", "2000"]);
    if out.status.success() {
        let json: serde_json::Value = serde_json::from_slice(&std::fs::read(run.join("metrics.json")).unwrap()).unwrap();
        assert!(json["rot_rmse_deg"].as_f64().unwrap() >= 0.0);
        assert_eq!(json["iteration"], 6);
    } else {
        assert_eq!(out.status.code(), Some(scsurf_cli::EXIT_EMPTY));
    }
}

#[test]
fn usage_errors_exit_with_the_usage_code() {
    let tmp = tempfile::tempdir().unwrap();
    let out = sc_surf(&["synth", "--shape", "sphere", "--out", p(tmp.path()), "--res", "ax5"]);
    assert_eq!(out.status.code(), Some(EXIT_USAGE));
    let out = sc_surf(&["synth", "--shape", "cone", "--out", p(tmp.path())]);
    assert_eq!(out.status.code(), Some(EXIT_USAGE));
    let out = sc_surf(&["synth", "--shape", "sphere", "--views", "1", "--out", p(tmp.path())]);
    assert_eq!(out.status.code(), Some(EXIT_USAGE));

    let scene = tmp.path().join("scene");
    assert!(sc_surf(&["synth", "--shape", "sphere", "--out", p(&scene), "--res", "32x32", "--matches", "20"]).status.success());
    let run = tmp.path().join("run");
    let out = sc_surf(&["train", "--scene", p(&scene), "--out", p(&run), "--threads", "4"]);
    assert_eq!(out.status.code(), Some(EXIT_USAGE));
    let bad = tmp.path().join("bad.cfg");
    std::fs::write(&bad, "no_such_key = 3\n").unwrap();
    let out = sc_surf(&["train", "--scene", p(&scene), "--config", p(&bad), "--out", p(&run)]);
    assert_eq!(out.status.code(), Some(EXIT_USAGE));
}

#[test]
fn missing_inputs_exit_with_the_missing_input_code() {
    let tmp = tempfile::tempdir().unwrap();
    let nowhere = tmp.path().join("nowhere");
    let out = sc_surf(&["train", "--scene", p(&nowhere), "--out", p(&tmp.path().join("run"))]);
    assert_eq!(out.status.code(), Some(EXIT_MISSING_INPUT));
    let out = sc_surf(&["extract-mesh", "--run", p(&nowhere), "--out", p(&tmp.path().join("m.ply"))]);
    assert_eq!(out.status.code(), Some(EXIT_MISSING_INPUT));
    let out = sc_surf(&["eval", "--run", p(&nowhere), "--scene", p(&nowhere)]);
    assert_eq!(out.status.code(), Some(EXIT_MISSING_INPUT));
}
