use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::AnalyticSdf;
use crate::geometry::{Intrinsics, Pose, Rigid};
use crate::losses::{Correspondence, CorrespondenceSet};
use crate::real::Vec3;

use super::image::Image;

pub const SCENE_FILE: &str = "scene.json";
pub const MATCHES_FILE: &str = "matches.txt";

/// Maps original coordinates into the unit-sphere scene frame:
/// `p_scene = (p − center) / scale`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub center: [f64; 3],
    pub scale: f64,
}

impl Default for Normalization {
    fn default() -> Self {
        Self {
            center: [0.0; 3],
            scale: 1.0,
        }
    }
}

impl Normalization {
    /// Fits the smallest centered ball around `points` (bounding-box center).
    pub fn fit(points: &[Vec3], margin: f64) -> Self {
        if points.is_empty() {
            return Self::default();
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in points {
            for d in 0..3 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        let center = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1]), 0.5 * (lo[2] + hi[2])];
        let c = Vec3::from_array(center);
        let radius = points.iter().map(|p| (*p - c).norm()).fold(0.0, f64::max);
        Self {
            center,
            scale: (radius * (1.0 + margin)).max(f64::MIN_POSITIVE),
        }
    }

    pub fn normalize(&self, p: Vec3) -> Vec3 {
        (p - Vec3::from_array(self.center)) * (1.0 / self.scale)
    }

    pub fn denormalize(&self, p: Vec3) -> Vec3 {
        p * self.scale + Vec3::from_array(self.center)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct View {
    /// File name relative to the scene directory.
    pub image_name: String,
    pub image: Image,
    pub intrinsics: Intrinsics,
    pub pose: Pose,
    pub pose_gt: Option<Rigid>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub views: Vec<View>,
    pub correspondences: CorrespondenceSet,
    pub normalization: Normalization,
    pub gt_shape: Option<AnalyticSdf>,
    pub gt_mesh: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
struct ViewFile {
    image: String,
    intrinsics: Intrinsics,
    pose_c2w: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pose_gt_c2w: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct SceneFile {
    #[serde(default = "default_units")]
    units: String,
    views: Vec<ViewFile>,
    #[serde(default)]
    normalization: Normalization,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gt_shape: Option<AnalyticSdf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gt_mesh: Option<PathBuf>,
}

fn default_units() -> String {
    "normalized scene units".into()
}

fn c2w_to_pose(m: &[f64], path: &Path, what: &str) -> Result<Rigid> {
    let arr: [f64; 16] = m
        .try_into()
        .map_err(|_| Error::parse(path, 0, format!("{what} must have 16 entries")))?;
    Rigid::from_matrix4(&arr)
        .map(|c2w| c2w.inverse())
        .map_err(|e| Error::parse(path, 0, format!("{what}: {e}")))
}

impl Scene {
    pub fn intrinsics(&self) -> Vec<Intrinsics> {
        self.views.iter().map(|v| v.intrinsics).collect()
    }

    pub fn poses(&self) -> Vec<Pose> {
        self.views.iter().map(|v| v.pose).collect()
    }

    /// Ground-truth world-to-camera transforms, if every view has one.
    pub fn gt_poses(&self) -> Option<Vec<Rigid>> {
        self.views.iter().map(|v| v.pose_gt).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.views.len() < 2 {
            return Err(Error::InvariantViolation(format!(
                "a scene needs at least 2 views, found {}",
                self.views.len()
            )));
        }
        for (i, v) in self.views.iter().enumerate() {
            v.intrinsics.validate()?;
            if v.image.width != v.intrinsics.width || v.image.height != v.intrinsics.height {
                return Err(Error::InvariantViolation(format!(
                    "view {i}: image is {}x{} but intrinsics say {}x{}",
                    v.image.width, v.image.height, v.intrinsics.width, v.intrinsics.height
                )));
            }
            if v.image.rgb.iter().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(Error::InvariantViolation(format!("view {i}: pixel values outside [0, 1]")));
            }
        }
        self.correspondences.validate(&self.intrinsics())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut views = Vec::with_capacity(self.views.len());
        for v in &self.views {
            v.image.save_png(&dir.join(&v.image_name))?;
            views.push(ViewFile {
                image: v.image_name.clone(),
                intrinsics: v.intrinsics,
                pose_c2w: v.pose.world_to_camera().inverse().to_matrix4().to_vec(),
                pose_gt_c2w: v.pose_gt.map(|g| g.inverse().to_matrix4().to_vec()),
            });
        }
        let file = SceneFile {
            units: default_units(),
            views,
            normalization: self.normalization,
            gt_shape: self.gt_shape.clone(),
            gt_mesh: self.gt_mesh.clone(),
        };
        let path = dir.join(SCENE_FILE);
        let json = serde_json::to_string_pretty(&file).map_err(|source| Error::Json {
            path: path.clone(),
            source,
        })?;
        fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
        let path = dir.join(MATCHES_FILE);
        fs::write(&path, format_matches(&self.correspondences)).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(SCENE_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let file: SceneFile =
            serde_json::from_str(&text).map_err(|e| Error::parse(&path, e.line(), e.to_string()))?;
        let mut views = Vec::with_capacity(file.views.len());
        for (i, v) in file.views.into_iter().enumerate() {
            let initial = c2w_to_pose(&v.pose_c2w, &path, &format!("view {i} pose_c2w"))?;
            let pose_gt = v
                .pose_gt_c2w
                .as_deref()
                .map(|m| c2w_to_pose(m, &path, &format!("view {i} pose_gt_c2w")))
                .transpose()?;
            views.push(View {
                image: Image::load_png(&dir.join(&v.image))?,
                image_name: v.image,
                intrinsics: v.intrinsics,
                pose: Pose::new(initial),
                pose_gt,
            });
        }
        let matches = dir.join(MATCHES_FILE);
        let correspondences = if matches.exists() {
            let text = fs::read_to_string(&matches).map_err(|e| Error::io(&matches, e))?;
            parse_matches(&text, &matches, views.len())?
        } else {
            CorrespondenceSet::default()
        };
        let scene = Scene {
            views,
            correspondences,
            normalization: file.normalization,
            gt_shape: file.gt_shape,
            gt_mesh: file.gt_mesh,
        };
        scene.validate()?;
        Ok(scene)
    }
}

pub fn format_matches(set: &CorrespondenceSet) -> String {
    let mut out = String::from("# i j u_i v_i u_j v_j conf\n");
    for c in &set.entries {
        let _ = writeln!(
            out,
            "{} {} {} {} {} {} {}",
            c.view_i, c.view_j, c.pixel_i[0], c.pixel_i[1], c.pixel_j[0], c.pixel_j[1], c.confidence
        );
    }
    out
}

pub fn parse_matches(text: &str, path: &Path, n_views: usize) -> Result<CorrespondenceSet> {
    let mut entries = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 7 {
            return Err(Error::parse(path, line_no, format!("expected 7 fields, found {}", fields.len())));
        }
        let view = |s: &str| -> Result<usize> {
            let v: usize = s
                .parse()
                .map_err(|_| Error::parse(path, line_no, format!("bad view index `{s}`")))?;
            if v >= n_views {
                return Err(Error::parse(
                    path,
                    line_no,
                    format!("view index {v} out of range for {n_views} views"),
                ));
            }
            Ok(v)
        };
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::parse(path, line_no, format!("bad number `{s}`")))
        };
        let (view_i, view_j) = (view(fields[0])?, view(fields[1])?);
        if view_i == view_j {
            return Err(Error::parse(path, line_no, "correspondence within a single view"));
        }
        entries.push(Correspondence {
            view_i,
            view_j,
            pixel_i: [num(fields[2])?, num(fields[3])?],
            pixel_j: [num(fields[4])?, num(fields[5])?],
            confidence: num(fields[6])?,
        });
    }
    Ok(CorrespondenceSet::new(entries))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_round_trip() {
        let pts = vec![Vec3::new(3.0, -1.0, 2.0), Vec3::new(5.0, 4.0, -7.0), Vec3::new(0.1, 0.2, 0.3)];
        let n = Normalization::fit(&pts, 0.05);
        for p in &pts {
            assert!(n.normalize(*p).norm() <= 1.0);
            assert!((n.denormalize(n.normalize(*p)) - *p).max_abs() < 1e-12);
        }
    }

    #[test]
    fn matches_reject_bad_views() {
        let p = Path::new("matches.txt");
        let ok = parse_matches("# header\n0 1 1 2 3 4 0.9\n\n2 0 5 6 7 8 1\n", p, 3).unwrap();
        assert_eq!(ok.len(), 2);
        let err = parse_matches("0 99 1 2 3 4 1\n", p, 3).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
        assert!(parse_matches("0 1 1 2 3\n", p, 3).is_err());
        assert!(parse_matches("0 1 1 2 3 x 1\n", p, 3).is_err());
    }

    #[test]
    fn matches_format_round_trips_exactly() {
        let set = CorrespondenceSet::new(vec![Correspondence {
            view_i: 1,
            view_j: 0,
            pixel_i: [10.123456789012345, 0.1 + 0.2],
            pixel_j: [3.0, 1e-7],
            confidence: 0.75,
        }]);
        let back = parse_matches(&format_matches(&set), Path::new("m"), 2).unwrap();
        assert_eq!(back, set);
    }
}
