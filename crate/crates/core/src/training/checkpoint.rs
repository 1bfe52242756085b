//! Checkpoint layout: `u64` little-endian header length, the JSON header,
//! then every field parameter as a little-endian `f64` in `[sdf | radiance]`
//! order.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{EncodingConfig, LayerShape, NeuralField, RadianceConfig, SdfConfig};
use crate::geometry::{Pose, Rigid};

pub const CHECKPOINT_FORMAT: &str = "sc-surf checkpoint v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    /// Row-major world-to-camera matrix of the frozen initial pose.
    pub initial_w2c: Vec<f64>,
    pub delta: [f64; 6],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub iteration: usize,
    pub sdf: SdfConfig,
    pub radiance: RadianceConfig,
    pub encoding: EncodingConfig,
    pub sdf_layers: Vec<LayerShape>,
    pub radiance_layers: Vec<LayerShape>,
    pub variance: f64,
    pub poses: Vec<PoseRecord>,
    pub param_count: usize,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub iteration: usize,
    pub field: NeuralField,
    pub variance: f64,
    pub poses: Vec<Pose>,
}

impl Checkpoint {
    pub fn header(&self) -> CheckpointHeader {
        CheckpointHeader {
            format: CHECKPOINT_FORMAT.into(),
            iteration: self.iteration,
            sdf: *self.field.sdf.config(),
            radiance: *self.field.radiance.config(),
            encoding: self.field.sdf.encoding,
            sdf_layers: self.field.sdf.mlp().layers().to_vec(),
            radiance_layers: self.field.radiance.mlp().layers().to_vec(),
            variance: self.variance,
            poses: self
                .poses
                .iter()
                .map(|p| PoseRecord {
                    initial_w2c: p.initial.to_matrix4().to_vec(),
                    delta: p.delta,
                })
                .collect(),
            param_count: self.field.sdf_param_count() + self.field.radiance_param_count(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header()).expect("header serializes");
        let params = self.field.flat_params();
        let mut out = Vec::with_capacity(8 + header.len() + 8 * params.len());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for p in params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |msg: &str| Error::parse(path, 0, msg.to_string());
        let len_bytes: [u8; 8] = bytes.get(..8).and_then(|b| b.try_into().ok()).ok_or_else(|| bad("truncated header length"))?;
        let hlen = u64::from_le_bytes(len_bytes) as usize;
        let header_bytes = bytes.get(8..8 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: CheckpointHeader = serde_json::from_slice(header_bytes).map_err(|e| bad(&e.to_string()))?;
        if header.format != CHECKPOINT_FORMAT {
            return Err(bad("unrecognized checkpoint format"));
        }
        let body = &bytes[8 + hlen..];
        if body.len() != 8 * header.param_count {
            return Err(bad("parameter block length does not match the header"));
        }
        let params: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        // Parameters are overwritten below; the generator only shapes them.
        let mut field = NeuralField::new(header.sdf, header.radiance, &mut ChaCha8Rng::seed_from_u64(0));
        if field.sdf.mlp().layers() != header.sdf_layers.as_slice()
            || field.radiance.mlp().layers() != header.radiance_layers.as_slice()
            || field.sdf_param_count() + field.radiance_param_count() != header.param_count
        {
            return Err(bad("layer shapes do not match the network configuration"));
        }
        field.set_flat_params(&params);
        field.set_alpha(header.encoding.alpha);
        let poses = header
            .poses
            .iter()
            .map(|r| {
                let m: [f64; 16] = r.initial_w2c.as_slice().try_into().map_err(|_| bad("pose needs 16 entries"))?;
                let initial = Rigid::from_matrix4(&m).map_err(|e| bad(&e.to_string()))?;
                Ok(Pose {
                    initial,
                    delta: r.delta,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            iteration: header.iteration,
            field,
            variance: header.variance,
            poses,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::se3_exp;

    #[test]
    fn checkpoint_round_trip() {
        let sdf = SdfConfig {
            hidden_layers: 2,
            width: 16,
            skip_at: Some(1),
            feature_dim: 4,
            num_freqs: 2,
            ..SdfConfig::default()
        };
        let rad = RadianceConfig {
            hidden_layers: 1,
            width: 8,
        };
        let mut field = NeuralField::new(sdf, rad, &mut ChaCha8Rng::seed_from_u64(9));
        field.set_alpha(1.25);
        let ck = Checkpoint {
            iteration: 42,
            field,
            variance: 0.31,
            poses: vec![Pose {
                initial: se3_exp(&[0.1, 0.2, -0.3, 1.0, 2.0, 3.0]),
                delta: [1e-3, -2e-3, 0.0, 0.5, 0.25, -1.0],
            }],
        };
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes, Path::new("c.bin")).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.field.flat_params(), ck.field.flat_params());
        assert_eq!(back.field.alpha(), 1.25);
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1], Path::new("c.bin")).is_err());
    }
}
