pub mod autodiff;
pub mod error;
pub mod evaluation;
pub mod fields;
pub mod geometry;
pub mod intersection;
pub mod losses;
pub mod real;
pub mod rendering;
pub mod rng;
pub mod scene_io;
pub mod training;

pub use error::{Error, Result};
pub use real::{Mat3, Real, Vec3};
