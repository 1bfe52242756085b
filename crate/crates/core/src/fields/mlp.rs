//! Dense network with batched forward-mode input tangents and a reverse pass
//! through both the values and the tangents.
//!
//! Activations are laid out row-major. With tangents enabled a batch of `n`
//! points occupies `4n` rows: values first, then the three tangent blocks
//! `∂/∂x`, `∂/∂y`, `∂/∂z`. Backpropagating through the tangent rows is what
//! gives parameter gradients of `‖∇f‖` and Hessian-vector products w.r.t.
//! the inputs.

use serde::{Deserialize, Serialize};

use crate::real::sigmoid_f64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Relu,
    Softplus { beta: f64 },
    Sigmoid,
}

impl Activation {
    /// Value, first and second derivative.
    #[inline]
    fn eval(self, z: f64) -> (f64, f64, f64) {
        match self {
            Activation::Identity => (z, 1.0, 0.0),
            Activation::Relu => {
                if z > 0.0 {
                    (z, 1.0, 0.0)
                } else {
                    (0.0, 0.0, 0.0)
                }
            }
            Activation::Softplus { beta } => {
                let bz = beta * z;
                // exp(−|βz|) underflows relative to 1 past |βz| ≈ 37.
                if bz > 40.0 {
                    return (z, 1.0, 0.0);
                }
                if bz < -40.0 {
                    let e = bz.exp();
                    return (e / beta, e, beta * e);
                }
                let e = (-bz.abs()).exp();
                let v = z.max(0.0) + e.ln_1p() / beta;
                let s = if bz >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) };
                (v, s, beta * s * (1.0 - s))
            }
            Activation::Sigmoid => {
                let s = sigmoid_f64(z);
                let d = s * (1.0 - s);
                (s, d, d * (1.0 - 2.0 * s))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerShape {
    pub n_in: usize,
    pub n_out: usize,
    /// Input is `concat(previous activation, network input) / √2`.
    pub skip: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<LayerShape>,
    hidden: Activation,
    output: Activation,
    params: Vec<f64>,
    offsets: Vec<usize>,
}

/// Cached activations of one batched forward pass.
pub struct Trace {
    pub(crate) n: usize,
    pub(crate) tangents: bool,
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    /// Final activations, `rows × n_out`.
    pub(crate) output: Vec<f64>,
}

impl Trace {
    pub(crate) fn rows(&self) -> usize {
        if self.tangents {
            4 * self.n
        } else {
            self.n
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
    rsc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= (m - 1) * rsc + n);
    // SAFETY: the caller passes slices covering every strided element of
    // the m×k, k×n and m×n operands; `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

impl Mlp {
    pub fn new(layers: Vec<LayerShape>, hidden: Activation, output: Activation) -> Self {
        let mut offsets = Vec::with_capacity(layers.len());
        let mut total = 0;
        for l in &layers {
            offsets.push(total);
            total += l.n_out * l.n_in + l.n_out;
        }
        for w in layers.windows(2) {
            let expected = if w[1].skip {
                w[0].n_out + layers[0].n_in
            } else {
                w[0].n_out
            };
            assert_eq!(w[1].n_in, expected, "layer widths do not chain");
        }
        Self {
            layers,
            hidden,
            output,
            params: vec![0.0; total],
            offsets,
        }
    }

    pub fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    pub fn activations(&self) -> (Activation, Activation) {
        (self.hidden, self.output)
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.n_out)
    }

    /// `(weights, bias)` of layer `l`; weights are `n_out × n_in` row-major.
    pub fn layer_params_mut(&mut self, l: usize) -> (&mut [f64], &mut [f64]) {
        let shape = self.layers[l];
        let start = self.offsets[l];
        let w_len = shape.n_in * shape.n_out;
        let (w, rest) = self.params[start..start + w_len + shape.n_out].split_at_mut(w_len);
        (w, rest)
    }

    fn layer_params(&self, l: usize) -> (&[f64], &[f64]) {
        let shape = self.layers[l];
        let start = self.offsets[l];
        let w_len = shape.n_in * shape.n_out;
        self.params[start..start + w_len + shape.n_out].split_at(w_len)
    }

    fn activation(&self, l: usize) -> Activation {
        if l + 1 == self.layers.len() {
            self.output
        } else {
            self.hidden
        }
    }

    /// Batched forward pass. `input` holds `n` rows, or `4n` rows when
    /// `tangents` is set (values followed by the three input tangents).
    pub fn forward(&self, input: Vec<f64>, n: usize, tangents: bool) -> Trace {
        let rows = if tangents { 4 * n } else { n };
        let d0 = self.input_dim();
        assert_eq!(input.len(), rows * d0);
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut act = input.clone();
        for (l, shape) in self.layers.iter().enumerate() {
            let inp = if l == 0 {
                std::mem::take(&mut act)
            } else if shape.skip {
                let w = shape.n_in - d0;
                let s = std::f64::consts::FRAC_1_SQRT_2;
                let mut cat = vec![0.0; rows * shape.n_in];
                for r in 0..rows {
                    let dst = &mut cat[r * shape.n_in..(r + 1) * shape.n_in];
                    for (d, a) in dst[..w].iter_mut().zip(&act[r * w..(r + 1) * w]) {
                        *d = a * s;
                    }
                    for (d, a) in dst[w..].iter_mut().zip(&input[r * d0..(r + 1) * d0]) {
                        *d = a * s;
                    }
                }
                cat
            } else {
                std::mem::take(&mut act)
            };
            let (w, b) = self.layer_params(l);
            let (n_in, n_out) = (shape.n_in, shape.n_out);
            let mut z = vec![0.0; rows * n_out];
            gemm(rows, n_in, n_out, &inp, n_in, 1, w, 1, n_in, 0.0, &mut z, n_out);
            for row in z[..n * n_out].chunks_exact_mut(n_out) {
                for (v, bias) in row.iter_mut().zip(b) {
                    *v += bias;
                }
            }
            let phi = self.activation(l);
            let mut a = vec![0.0; rows * n_out];
            for i in 0..n * n_out {
                let (v, d1, _) = phi.eval(z[i]);
                a[i] = v;
                if tangents {
                    for d in 1..4 {
                        let j = d * n * n_out + i;
                        a[j] = d1 * z[j];
                    }
                }
            }
            inputs.push(inp);
            pre.push(z);
            act = a;
        }
        Trace {
            n,
            tangents,
            inputs,
            pre,
            output: act,
        }
    }

    /// Reverse pass. `out_adj` has the same layout as `trace.output`.
    /// Parameter gradients are added to `param_grad` (same layout as
    /// [`Mlp::params`]); returns the adjoint of the network input rows.
    pub fn backward(&self, trace: &Trace, out_adj: Vec<f64>, param_grad: &mut [f64]) -> Vec<f64> {
        let n = trace.n;
        let rows = trace.rows();
        let d0 = self.input_dim();
        let tangents = trace.tangents;
        assert_eq!(param_grad.len(), self.params.len());
        let mut g_input = vec![0.0; rows * d0];
        let mut ga = out_adj;
        for l in (0..self.layers.len()).rev() {
            let shape = self.layers[l];
            let (n_in, n_out) = (shape.n_in, shape.n_out);
            let z = &trace.pre[l];
            let phi = self.activation(l);
            let mut gz = vec![0.0; rows * n_out];
            for i in 0..n * n_out {
                let (_, d1, d2) = phi.eval(z[i]);
                let mut g = d1 * ga[i];
                if tangents {
                    for d in 1..4 {
                        let j = d * n * n_out + i;
                        g += d2 * ga[j] * z[j];
                        gz[j] = d1 * ga[j];
                    }
                }
                gz[i] = g;
            }
            let start = self.offsets[l];
            let w_len = n_in * n_out;
            let (gw, gb) = param_grad[start..start + w_len + n_out].split_at_mut(w_len);
            gemm(n_out, rows, n_in, &gz, 1, n_out, &trace.inputs[l], n_in, 1, 1.0, gw, n_in);
            for row in gz[..n * n_out].chunks_exact(n_out) {
                for (b, g) in gb.iter_mut().zip(row) {
                    *b += g;
                }
            }
            let (w, _) = self.layer_params(l);
            let mut g_in = vec![0.0; rows * n_in];
            gemm(rows, n_out, n_in, &gz, n_out, 1, w, n_in, 1, 0.0, &mut g_in, n_in);
            if l == 0 {
                for (a, g) in g_input.iter_mut().zip(&g_in) {
                    *a += g;
                }
            } else if shape.skip {
                let w_prev = n_in - d0;
                let s = std::f64::consts::FRAC_1_SQRT_2;
                let mut prev = vec![0.0; rows * w_prev];
                for r in 0..rows {
                    let src = &g_in[r * n_in..(r + 1) * n_in];
                    for (p, g) in prev[r * w_prev..(r + 1) * w_prev].iter_mut().zip(&src[..w_prev]) {
                        *p = g * s;
                    }
                    for (p, g) in g_input[r * d0..(r + 1) * d0].iter_mut().zip(&src[w_prev..]) {
                        *p += g * s;
                    }
                }
                ga = prev;
            } else {
                ga = g_in;
            }
        }
        g_input
    }
}
