use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::fields::{RadianceConfig, SdfConfig};
use crate::intersection::IntersectConfig;
use crate::losses::LossConfig;
use crate::rendering::RenderConfig;

/// Every optimization constant of a run. Read from flat `key = value` files;
/// values are JSON literals (`true`, `0.5`, `[0, 0, 0]`, `null`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub rays_per_batch: usize,
    pub correspondences_per_batch: usize,
    /// Warm-up length; `null` means 10% of `iterations`.
    pub warmup_iters: Option<usize>,
    /// Coarse-to-fine ramp; `null` means `warmup_iters` and 50% of `iterations`.
    pub alpha_start: Option<usize>,
    pub alpha_end: Option<usize>,

    pub lambda_r: f64,
    pub lambda_ncc: f64,
    pub lambda_reg: f64,
    pub eikonal_samples: usize,

    pub field_lr: f64,
    /// Final field learning rate as a fraction of `field_lr` (cosine decay).
    pub field_lr_floor: f64,
    pub pose_lr: f64,
    pub variance_lr: f64,
    pub optimize_poses: bool,
    pub optimize_field: bool,

    pub seed: u64,
    pub log_every: usize,
    pub checkpoint_every: usize,
    pub threads: usize,

    pub sdf_layers: usize,
    pub sdf_width: usize,
    pub sdf_skip_at: Option<usize>,
    pub feature_dim: usize,
    pub num_freqs: usize,
    pub softplus_beta: f64,
    pub init_radius: f64,
    /// Steps regressing the fresh SDF onto the `init_radius` sphere.
    pub prior_fit_iters: usize,
    pub radiance_layers: usize,
    pub radiance_width: usize,

    pub n_coarse: usize,
    pub n_importance: usize,
    pub up_sample_steps: usize,
    pub perturb: bool,
    pub bound_radius: f64,
    pub background: [f64; 3],

    pub intersect_samples: usize,
    pub newton_iters: usize,
    pub tau_surf: f64,
    pub tau_graze: f64,

    pub rho_max: f64,
    pub patch_half_extent: u32,
    pub tau_var: f64,
    pub ncc_variance_product: bool,
    pub warmup_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let sdf = SdfConfig::default();
        let rad = RadianceConfig::default();
        let render = RenderConfig::default();
        let isect = IntersectConfig::default();
        let loss = LossConfig::default();
        Self {
            iterations: 20_000,
            rays_per_batch: 512,
            correspondences_per_batch: 256,
            warmup_iters: None,
            alpha_start: None,
            alpha_end: None,
            lambda_r: loss.lambda_r,
            lambda_ncc: loss.lambda_ncc,
            lambda_reg: loss.lambda_reg,
            eikonal_samples: 512,
            field_lr: 5e-4,
            field_lr_floor: 0.05,
            pose_lr: 1e-3,
            variance_lr: 5e-4,
            optimize_poses: true,
            optimize_field: true,
            seed: 0,
            log_every: 10,
            checkpoint_every: 5000,
            threads: 1,
            sdf_layers: sdf.hidden_layers,
            sdf_width: sdf.width,
            sdf_skip_at: sdf.skip_at,
            feature_dim: sdf.feature_dim,
            num_freqs: sdf.num_freqs,
            softplus_beta: sdf.softplus_beta,
            init_radius: sdf.init_radius,
            prior_fit_iters: 300,
            radiance_layers: rad.hidden_layers,
            radiance_width: rad.width,
            n_coarse: render.n_coarse,
            n_importance: render.n_importance,
            up_sample_steps: render.up_sample_steps,
            perturb: render.perturb,
            bound_radius: render.bound_radius,
            background: render.background,
            intersect_samples: isect.n_samples,
            newton_iters: isect.newton_iters,
            tau_surf: isect.tau_surf,
            tau_graze: isect.tau_graze,
            rho_max: loss.rho_max,
            patch_half_extent: loss.patch_half_extent,
            tau_var: loss.tau_var,
            ncc_variance_product: loss.ncc_variance_product,
            warmup_threshold: loss.warmup_threshold,
        }
    }
}

impl TrainConfig {
    pub fn warmup(&self) -> usize {
        self.warmup_iters.unwrap_or(self.iterations / 10)
    }

    pub fn alpha_schedule(&self) -> (usize, usize) {
        let start = self.alpha_start.unwrap_or_else(|| self.warmup());
        let end = self.alpha_end.unwrap_or(self.iterations / 2);
        (start, end.max(start + 1))
    }

    pub fn sdf(&self) -> SdfConfig {
        SdfConfig {
            hidden_layers: self.sdf_layers,
            width: self.sdf_width,
            skip_at: self.sdf_skip_at,
            feature_dim: self.feature_dim,
            num_freqs: self.num_freqs,
            softplus_beta: self.softplus_beta,
            init_radius: self.init_radius,
            geometric_init: true,
        }
    }

    pub fn radiance(&self) -> RadianceConfig {
        RadianceConfig {
            hidden_layers: self.radiance_layers,
            width: self.radiance_width,
        }
    }

    pub fn render(&self) -> RenderConfig {
        RenderConfig {
            n_coarse: self.n_coarse,
            n_importance: self.n_importance,
            up_sample_steps: self.up_sample_steps,
            perturb: self.perturb,
            background: self.background,
            bound_radius: self.bound_radius,
            ..RenderConfig::default()
        }
    }

    pub fn intersect(&self) -> IntersectConfig {
        IntersectConfig {
            n_samples: self.intersect_samples,
            tau_surf: self.tau_surf,
            tau_graze: self.tau_graze,
            newton_iters: self.newton_iters,
            bound_radius: self.bound_radius,
        }
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            lambda_r: self.lambda_r,
            lambda_ncc: self.lambda_ncc,
            lambda_reg: self.lambda_reg,
            rho_max: self.rho_max,
            patch_half_extent: self.patch_half_extent,
            tau_var: self.tau_var,
            ncc_variance_product: self.ncc_variance_product,
            warmup_threshold: self.warmup_threshold,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.iterations > 0 && self.warmup() >= self.iterations {
            return fail(format!(
                "warmup_iters ({}) must be below iterations ({})",
                self.warmup(),
                self.iterations
            ));
        }
        for (name, lr) in [
            ("field_lr", self.field_lr),
            ("pose_lr", self.pose_lr),
            ("variance_lr", self.variance_lr),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return fail(format!("{name} must be positive, got {lr}"));
            }
        }
        for (name, v) in [
            ("lambda_r", self.lambda_r),
            ("lambda_ncc", self.lambda_ncc),
            ("lambda_reg", self.lambda_reg),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{name} must be >= 0, got {v}"));
            }
        }
        if let (Some(a), Some(b)) = (self.alpha_start, self.alpha_end) {
            if a >= b {
                return fail(format!("alpha_start ({a}) must be below alpha_end ({b})"));
            }
        }
        if self.log_every == 0 || self.checkpoint_every == 0 {
            return fail("log_every and checkpoint_every must be positive".into());
        }
        if self.n_coarse < 2 || self.intersect_samples < 2 {
            return fail("need at least 2 samples per ray".into());
        }
        if self.rays_per_batch == 0 {
            return fail("rays_per_batch must be positive".into());
        }
        if self.num_freqs == 0 {
            return fail("num_freqs must be at least 1".into());
        }
        if self.threads != 1 {
            return fail("only single-threaded training (threads = 1) is supported".into());
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`. `#` starts a comment.
    pub fn apply_overrides(&self, text: &str, path: &Path) -> Result<Self> {
        let Value::Object(mut map) = serde_json::to_value(self).expect("config serializes") else {
            unreachable!("config is a struct")
        };
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(path, n + 1, format!("expected `key = value`, found `{line}`")))?;
            let key = key.trim();
            if !map.contains_key(key) {
                return Err(Error::parse(path, n + 1, format!("unknown key `{key}`")));
            }
            let value = value.trim();
            let parsed = serde_json::from_str::<Value>(value).unwrap_or_else(|_| Value::String(value.into()));
            map.insert(key.to_string(), parsed);
        }
        let cfg: Self = serde_json::from_value(Value::Object(map)).map_err(|e| Error::parse(path, 0, e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_kv(text: &str, path: &Path) -> Result<Self> {
        Self::default().apply_overrides(text, path)
    }

    /// Every key, one `key = value` line each; parses back to `self`.
    pub fn to_kv(&self) -> String {
        let Value::Object(map) = serde_json::to_value(self).expect("config serializes") else {
            unreachable!("config is a struct")
        };
        let map: Map<String, Value> = map;
        let mut out = String::new();
        for (k, v) in map {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

/// Coarse-to-fine level: `L · clamp((iter − start) / (end − start), 0, 1)`.
pub fn anneal_alpha(iter: usize, schedule: (usize, usize), num_freqs: usize) -> f64 {
    let (start, end) = schedule;
    if end <= start {
        return if iter >= start { num_freqs as f64 } else { 0.0 };
    }
    let x = (iter as f64 - start as f64) / (end as f64 - start as f64);
    num_freqs as f64 * x.clamp(0.0, 1.0)
}
