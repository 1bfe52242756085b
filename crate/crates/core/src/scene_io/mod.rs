//! Scene directories (`scene.json`, PNG views, `matches.txt`), the reference
//! sphere tracer and the synthetic scene generator.

mod image;
mod scene;
mod synth;
mod trace;

pub use image::{GrayImage, Image};
pub use scene::{format_matches, parse_matches, Normalization, Scene, View, MATCHES_FILE, SCENE_FILE};
pub use synth::{camera_ring, generate_synthetic, perturb_pose, preset_shape, SynthConfig};
pub use trace::{sphere_trace, sphere_trace_render, trace_limit, TRACE_STEPS, TRACE_TOLERANCE};
