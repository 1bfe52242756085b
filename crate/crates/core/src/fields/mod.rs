//! Signed distance and radiance fields: the neural networks being optimized
//! and closed-form shapes used as ground truth.

mod analytic;
mod encoding;
mod mlp;
mod network;

pub use analytic::{AnalyticScene, AnalyticSdf, Texture, Wave};
pub use encoding::EncodingConfig;
pub use mlp::{Activation, LayerShape, Mlp, Trace};
pub use network::{NeuralField, RadianceConfig, RadianceField, SdfConfig, SdfField};

use crate::autodiff::{Tape, Var};
use crate::real::Vec3;

/// A scalar field whose zero level set is a surface (negative inside).
pub trait SignedDistance {
    fn eval(&self, points: &[Vec3]) -> Vec<f64>;

    /// Values and spatial gradients.
    fn eval_grad(&self, points: &[Vec3]) -> Vec<(f64, Vec3)>;

    /// Records the field at taped points. With `with_grad`, the returned
    /// gradients are themselves differentiable (second-order terms flow to
    /// both the points and the parameters); otherwise they are zero.
    fn record<'t>(
        &self,
        tape: &'t Tape,
        points: &[Vec3<Var<'t>>],
        with_grad: bool,
    ) -> Vec<(Var<'t>, Vec3<Var<'t>>)>;

    /// Length of the flat parameter-gradient buffer that recorded blocks
    /// write into.
    fn param_count(&self) -> usize {
        0
    }
}

/// A signed distance field paired with view-dependent color.
pub trait ColorField: SignedDistance {
    /// SDF value and RGB at each point seen along direction `dirs[i]`.
    fn eval_color(&self, points: &[Vec3], dirs: &[Vec3]) -> Vec<(f64, [f64; 3])>;

    fn record_color<'t>(
        &self,
        tape: &'t Tape,
        points: &[Vec3<Var<'t>>],
        dirs: &[Vec3<Var<'t>>],
    ) -> Vec<(Var<'t>, [Var<'t>; 3])>;
}
