use serde::{Deserialize, Serialize};

use crate::real::Vec3;

/// Sinusoidal positional encoding with a coarse-to-fine frequency window.
///
/// Feature layout: `[x, y, z]` (when `include_input`), then for each band
/// `k`: `sin(2^k π x_i)` for the three axes followed by `cos(2^k π x_i)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodingConfig {
    pub num_freqs: usize,
    pub include_input: bool,
    pub alpha: f64,
}

impl EncodingConfig {
    /// Fully annealed encoding with `num_freqs` bands.
    pub fn full(num_freqs: usize) -> Self {
        Self {
            num_freqs,
            include_input: true,
            alpha: num_freqs as f64,
        }
    }

    pub fn dim(&self) -> usize {
        let raw = if self.include_input { 3 } else { 0 };
        raw + 6 * self.num_freqs
    }

    fn raw_dim(&self) -> usize {
        if self.include_input {
            3
        } else {
            0
        }
    }

    /// Window weight of band `k` at the current `alpha`.
    pub fn band_weight(&self, k: usize) -> f64 {
        window(self.alpha, k)
    }

    pub fn encode(&self, x: Vec3) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.encode_into(x, &mut out, None);
        out
    }

    /// Writes the features of `x` into `val` and, optionally, the three
    /// tangent rows `∂features/∂x_d`.
    pub(crate) fn encode_into(&self, x: Vec3, val: &mut [f64], tan: Option<[&mut [f64]; 3]>) {
        let xs = x.to_array();
        let raw = self.raw_dim();
        val[..raw].copy_from_slice(&xs[..raw]);
        let mut tan = tan;
        if let Some(t) = tan.as_mut() {
            for (d, row) in t.iter_mut().enumerate() {
                row.fill(0.0);
                if raw > 0 {
                    row[d] = 1.0;
                }
            }
        }
        for k in 0..self.num_freqs {
            let w = self.band_weight(k);
            let omega = (1u64 << k) as f64 * std::f64::consts::PI;
            let base = raw + 6 * k;
            for i in 0..3 {
                let (s, c) = (omega * xs[i]).sin_cos();
                val[base + i] = w * s;
                val[base + 3 + i] = w * c;
                if let Some(t) = tan.as_mut() {
                    t[i][base + i] = w * omega * c;
                    t[i][base + 3 + i] = -w * omega * s;
                }
            }
        }
    }

    /// Adjoint of `x` given adjoints of the value row and (optionally) the
    /// three tangent rows.
    pub(crate) fn backward(&self, x: Vec3, g_val: &[f64], g_tan: Option<[&[f64]; 3]>) -> Vec3 {
        let xs = x.to_array();
        let raw = self.raw_dim();
        let mut gx = [0.0; 3];
        gx[..raw].copy_from_slice(&g_val[..raw]);
        for k in 0..self.num_freqs {
            let w = self.band_weight(k);
            if w == 0.0 {
                continue;
            }
            let omega = (1u64 << k) as f64 * std::f64::consts::PI;
            let base = raw + 6 * k;
            for i in 0..3 {
                let (s, c) = (omega * xs[i]).sin_cos();
                gx[i] += g_val[base + i] * w * omega * c - g_val[base + 3 + i] * w * omega * s;
                if let Some(t) = g_tan {
                    let w2 = w * omega * omega;
                    gx[i] += -t[i][base + i] * w2 * s - t[i][base + 3 + i] * w2 * c;
                }
            }
        }
        Vec3::from_array(gx)
    }
}

fn window(alpha: f64, k: usize) -> f64 {
    let r = alpha - k as f64;
    if r < 0.0 {
        0.0
    } else if r < 1.0 {
        0.5 * (1.0 - (r * std::f64::consts::PI).cos())
    } else {
        1.0
    }
}
