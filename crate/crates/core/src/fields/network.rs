use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Block, Tape, Var};
use crate::real::Vec3;

use super::encoding::EncodingConfig;
use super::mlp::{Activation, LayerShape, Mlp, Trace};
use super::{ColorField, SignedDistance};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdfConfig {
    pub hidden_layers: usize,
    pub width: usize,
    /// Hidden layer (1-based) whose input re-concatenates the encoding.
    pub skip_at: Option<usize>,
    pub feature_dim: usize,
    pub num_freqs: usize,
    pub softplus_beta: f64,
    /// Radius of the sphere produced by geometric initialization.
    pub init_radius: f64,
    pub geometric_init: bool,
}

impl Default for SdfConfig {
    fn default() -> Self {
        Self {
            hidden_layers: 8,
            width: 256,
            skip_at: Some(4),
            feature_dim: 256,
            num_freqs: 6,
            softplus_beta: 100.0,
            init_radius: 0.5,
            geometric_init: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadianceConfig {
    pub hidden_layers: usize,
    pub width: usize,
}

impl Default for RadianceConfig {
    fn default() -> Self {
        Self {
            hidden_layers: 4,
            width: 256,
        }
    }
}

/// `f(x, θ)`: encoding followed by a softplus MLP. Output 0 is the signed
/// distance; outputs `1..` are the geometry feature fed to the radiance net.
#[derive(Clone, Debug, PartialEq)]
pub struct SdfField {
    config: SdfConfig,
    pub encoding: EncodingConfig,
    mlp: Mlp,
}

fn sdf_layers(cfg: &SdfConfig, d0: usize) -> Vec<LayerShape> {
    let mut layers = Vec::new();
    let mut prev = d0;
    for l in 0..cfg.hidden_layers {
        let skip = l > 0 && cfg.skip_at == Some(l);
        let n_in = if skip { prev + d0 } else { prev };
        layers.push(LayerShape {
            n_in,
            n_out: cfg.width,
            skip,
        });
        prev = cfg.width;
    }
    let skip = cfg.skip_at == Some(cfg.hidden_layers) && cfg.hidden_layers > 0;
    layers.push(LayerShape {
        n_in: if skip { prev + d0 } else { prev },
        n_out: 1 + cfg.feature_dim,
        skip,
    });
    layers
}

impl SdfField {
    pub fn new(config: SdfConfig, rng: &mut impl Rng) -> Self {
        let encoding = EncodingConfig::full(config.num_freqs);
        let d0 = encoding.dim();
        let layers = sdf_layers(&config, d0);
        let mut mlp = Mlp::new(
            layers.clone(),
            Activation::Softplus {
                beta: config.softplus_beta,
            },
            Activation::Identity,
        );
        let last = layers.len() - 1;
        for (l, shape) in layers.iter().enumerate() {
            let (w, b) = mlp.layer_params_mut(l);
            if config.geometric_init && l == last {
                let mean = std::f64::consts::PI.sqrt() / (shape.n_in as f64).sqrt();
                let normal = Normal::new(mean, 1e-4).expect("valid normal");
                w.iter_mut().for_each(|v| *v = normal.sample(rng));
                b.fill(0.0);
                b[0] = -config.init_radius;
            } else if config.geometric_init {
                let std = std::f64::consts::SQRT_2 / (shape.n_out as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("valid normal");
                w.iter_mut().for_each(|v| *v = normal.sample(rng));
                b.fill(0.0);
                // Only the raw coordinates reach the first layer at init; the
                // sinusoidal columns start at zero.
                let first_enc_col = if l == 0 {
                    Some(0)
                } else if shape.skip {
                    Some(shape.n_in - d0)
                } else {
                    None
                };
                if let Some(c0) = first_enc_col {
                    for row in w.chunks_exact_mut(shape.n_in) {
                        row[c0 + 3..c0 + d0].fill(0.0);
                    }
                }
            } else {
                uniform_init(w, b, shape.n_in, rng);
            }
        }
        let mut field = Self {
            config,
            encoding,
            mlp,
        };
        if config.geometric_init {
            // Softplus offsets accumulate through the layers and shift the
            // raw sphere. Fit an affine correction of the distance output so
            // that f(0) = -r0 and f averages 0 on the sphere of radius r0.
            let r0 = config.init_radius;
            let c0 = field.sdf_eval(Vec3::zeros()).0;
            let dirs = fibonacci_sphere(64);
            let shell: Vec<Vec3> = dirs.iter().map(|d| *d * r0).collect();
            let values = field.eval(&shell);
            let c1 = values.iter().sum::<f64>() / values.len() as f64;
            let a = r0 / (c1 - c0);
            let b_shift = -r0 - a * c0;
            let (w, b) = field.mlp.layer_params_mut(last);
            w[..layers[last].n_in].iter_mut().for_each(|v| *v *= a);
            b[0] = a * b[0] + b_shift;
        }
        field
    }

    pub fn config(&self) -> &SdfConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        self.mlp.params()
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        self.mlp.params_mut()
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim
    }

    fn encode_batch(&self, points: &[Vec3], tangents: bool) -> Vec<f64> {
        let d = self.encoding.dim();
        let n = points.len();
        let rows = if tangents { 4 * n } else { n };
        let mut buf = vec![0.0; rows * d];
        let (val, tan) = buf.split_at_mut(n * d);
        if tangents {
            let (t0, rest) = tan.split_at_mut(n * d);
            let (t1, t2) = rest.split_at_mut(n * d);
            for (i, p) in points.iter().enumerate() {
                let r = i * d..(i + 1) * d;
                self.encoding.encode_into(
                    *p,
                    &mut val[r.clone()],
                    Some([&mut t0[r.clone()], &mut t1[r.clone()], &mut t2[r]]),
                );
            }
        } else {
            for (i, p) in points.iter().enumerate() {
                self.encoding.encode_into(*p, &mut val[i * d..(i + 1) * d], None);
            }
        }
        buf
    }

    pub(crate) fn forward(&self, points: &[Vec3], tangents: bool) -> Trace {
        self.mlp.forward(self.encode_batch(points, tangents), points.len(), tangents)
    }

    /// Adjoints of the query points given adjoints of the trace outputs.
    pub(crate) fn backward(
        &self,
        points: &[Vec3],
        trace: &Trace,
        out_adj: Vec<f64>,
        param_grad: &mut [f64],
    ) -> Vec<Vec3> {
        let g = self.mlp.backward(trace, out_adj, param_grad);
        let d = self.encoding.dim();
        let n = points.len();
        points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let val = &g[i * d..(i + 1) * d];
                if trace.tangents {
                    let row = |k: usize| &g[(k * n + i) * d..(k * n + i + 1) * d];
                    self.encoding.backward(*p, val, Some([row(1), row(2), row(3)]))
                } else {
                    self.encoding.backward(*p, val, None)
                }
            })
            .collect()
    }

    /// Signed distance and its spatial gradient at `x`.
    pub fn sdf_eval(&self, x: Vec3) -> (f64, Vec3) {
        let t = self.forward(&[x], true);
        let s = 1 + self.config.feature_dim;
        (
            t.output[0],
            Vec3::new(t.output[s], t.output[2 * s], t.output[3 * s]),
        )
    }
}

/// Near-uniform unit directions on a Fibonacci lattice.
pub(crate) fn fibonacci_sphere(n: usize) -> Vec<Vec3> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            Vec3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

fn uniform_init(w: &mut [f64], b: &mut [f64], n_in: usize, rng: &mut impl Rng) {
    let bound = 1.0 / (n_in as f64).sqrt();
    w.iter_mut().for_each(|v| *v = rng.random_range(-bound..bound));
    b.iter_mut().for_each(|v| *v = rng.random_range(-bound..bound));
}

/// Unpacks a tangent-mode SDF trace into per-point `(f, ∇f)` and features.
fn unpack(trace: &Trace, s: usize) -> (Vec<(f64, Vec3)>, Vec<&[f64]>) {
    let n = trace.n;
    let out = &trace.output;
    let values = (0..n)
        .map(|i| {
            let g = if trace.tangents {
                Vec3::new(out[(n + i) * s], out[(2 * n + i) * s], out[(3 * n + i) * s])
            } else {
                Vec3::zeros()
            };
            (out[i * s], g)
        })
        .collect();
    let feats = (0..n).map(|i| &out[i * s + 1..(i + 1) * s]).collect();
    (values, feats)
}

/// `c(x, v, n, feature)`: ReLU MLP with a sigmoid RGB head.
#[derive(Clone, Debug, PartialEq)]
pub struct RadianceField {
    config: RadianceConfig,
    mlp: Mlp,
}

impl RadianceField {
    pub fn new(config: RadianceConfig, feature_dim: usize, rng: &mut impl Rng) -> Self {
        let d0 = 9 + feature_dim;
        let mut layers = Vec::new();
        let mut prev = d0;
        for _ in 0..config.hidden_layers {
            layers.push(LayerShape {
                n_in: prev,
                n_out: config.width,
                skip: false,
            });
            prev = config.width;
        }
        layers.push(LayerShape {
            n_in: prev,
            n_out: 3,
            skip: false,
        });
        let mut mlp = Mlp::new(layers.clone(), Activation::Relu, Activation::Sigmoid);
        for (l, shape) in layers.iter().enumerate() {
            let (w, b) = mlp.layer_params_mut(l);
            uniform_init(w, b, shape.n_in, rng);
        }
        Self { config, mlp }
    }

    pub fn config(&self) -> &RadianceConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        self.mlp.params()
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        self.mlp.params_mut()
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    fn input_row(x: Vec3, v: Vec3, normal: Vec3, feature: &[f64]) -> Vec<f64> {
        let mut row = Vec::with_capacity(9 + feature.len());
        row.extend(x.to_array());
        row.extend(v.to_array());
        row.extend(normal.to_array());
        row.extend_from_slice(feature);
        row
    }

    /// RGB for one query. `normal` is the (unnormalized) SDF gradient.
    pub fn radiance_eval(&self, x: Vec3, v: Vec3, normal: Vec3, feature: &[f64]) -> [f64; 3] {
        let t = self.mlp.forward(Self::input_row(x, v, normal, feature), 1, false);
        [t.output[0], t.output[1], t.output[2]]
    }
}

/// SDF and radiance networks with a flat parameter layout `[sdf | radiance]`.
///
/// Networks sit behind `Arc` so recorded tape blocks can keep a snapshot;
/// mutation goes through `Arc::make_mut` and is cheap once tapes are dropped.
#[derive(Clone, Debug)]
pub struct NeuralField {
    pub sdf: Arc<SdfField>,
    pub radiance: Arc<RadianceField>,
}

impl NeuralField {
    pub fn new(sdf: SdfConfig, radiance: RadianceConfig, rng: &mut impl Rng) -> Self {
        let sdf = SdfField::new(sdf, rng);
        let radiance = RadianceField::new(radiance, sdf.feature_dim(), rng);
        Self {
            sdf: Arc::new(sdf),
            radiance: Arc::new(radiance),
        }
    }

    pub fn sdf_param_count(&self) -> usize {
        self.sdf.params().len()
    }

    pub fn radiance_param_count(&self) -> usize {
        self.radiance.params().len()
    }

    /// Concatenated `[sdf | radiance]` parameters.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut p = self.sdf.params().to_vec();
        p.extend_from_slice(self.radiance.params());
        p
    }

    pub fn set_flat_params(&mut self, p: &[f64]) {
        let n = self.sdf_param_count();
        assert_eq!(p.len(), n + self.radiance_param_count());
        Arc::make_mut(&mut self.sdf).params_mut().copy_from_slice(&p[..n]);
        Arc::make_mut(&mut self.radiance).params_mut().copy_from_slice(&p[n..]);
    }

    /// Applies `f` to the sdf and radiance parameter slices.
    pub fn update_params(&mut self, mut f: impl FnMut(&mut [f64], &mut [f64])) {
        let sdf = Arc::make_mut(&mut self.sdf);
        let rad = Arc::make_mut(&mut self.radiance);
        f(sdf.params_mut(), rad.params_mut());
    }

    pub fn alpha(&self) -> f64 {
        self.sdf.encoding.alpha
    }

    pub fn set_alpha(&mut self, alpha: f64) {
        if self.sdf.encoding.alpha != alpha {
            Arc::make_mut(&mut self.sdf).encoding.alpha = alpha;
        }
    }

    fn color_forward(&self, points: &[Vec3], dirs: &[Vec3]) -> (Trace, Trace) {
        let st = self.sdf.forward(points, true);
        let s = 1 + self.sdf.feature_dim();
        let (vals, feats) = unpack(&st, s);
        let d0 = 9 + self.sdf.feature_dim();
        let mut input = Vec::with_capacity(points.len() * d0);
        for i in 0..points.len() {
            input.extend(RadianceField::input_row(points[i], dirs[i], vals[i].1, feats[i]));
        }
        let rt = self.radiance.mlp.forward(input, points.len(), false);
        (st, rt)
    }
}

fn values_of(vars: &[Vec3<Var<'_>>]) -> Vec<Vec3> {
    vars.iter().map(|p| p.value()).collect()
}

fn flatten<'t>(vars: &[Vec3<Var<'t>>]) -> Vec<Var<'t>> {
    vars.iter().flat_map(|p| p.to_array()).collect()
}

struct SdfBlock {
    sdf: Arc<SdfField>,
    points: Vec<Vec3>,
    trace: Trace,
}

impl Block for SdfBlock {
    fn backward(&self, out_adj: &[f64], param_grad: &mut [f64]) -> Vec<f64> {
        let n = self.points.len();
        let s = 1 + self.sdf.feature_dim();
        let per = if self.trace.tangents { 4 } else { 1 };
        let mut adj = vec![0.0; self.trace.rows() * s];
        for i in 0..n {
            adj[i * s] = out_adj[per * i];
            if self.trace.tangents {
                for d in 0..3 {
                    adj[((d + 1) * n + i) * s] = out_adj[per * i + 1 + d];
                }
            }
        }
        let n_sdf = self.sdf.params().len();
        let gx = self
            .sdf
            .backward(&self.points, &self.trace, adj, &mut param_grad[..n_sdf]);
        gx.iter().flat_map(|g| g.to_array()).collect()
    }
}

fn record_sdf<'t>(
    sdf: &Arc<SdfField>,
    tape: &'t Tape,
    points: &[Vec3<Var<'t>>],
    with_grad: bool,
) -> Vec<(Var<'t>, Vec3<Var<'t>>)> {
    if points.is_empty() {
        return Vec::new();
    }
    let pts = values_of(points);
    let trace = sdf.forward(&pts, with_grad);
    let (vals, _) = unpack(&trace, 1 + sdf.feature_dim());
    let outputs: Vec<f64> = vals
        .iter()
        .flat_map(|(f, g)| {
            if with_grad {
                vec![*f, g.x, g.y, g.z]
            } else {
                vec![*f]
            }
        })
        .collect();
    let block = SdfBlock {
        sdf: Arc::clone(sdf),
        points: pts,
        trace,
    };
    let out = tape.block(&flatten(points), &outputs, Box::new(block));
    if with_grad {
        out.chunks_exact(4)
            .map(|c| (c[0], Vec3::new(c[1], c[2], c[3])))
            .collect()
    } else {
        out.into_iter().map(|f| (f, Vec3::zeros())).collect()
    }
}

struct FieldBlock {
    sdf: Arc<SdfField>,
    radiance: Arc<RadianceField>,
    points: Vec<Vec3>,
    sdf_trace: Trace,
    rad_trace: Trace,
}

impl Block for FieldBlock {
    fn backward(&self, out_adj: &[f64], param_grad: &mut [f64]) -> Vec<f64> {
        let n = self.points.len();
        let feat = self.sdf.feature_dim();
        let s = 1 + feat;
        let d_rad = 9 + feat;
        let n_sdf = self.sdf.params().len();
        let (pg_sdf, pg_rad) = param_grad.split_at_mut(n_sdf);

        let rgb_adj: Vec<f64> = (0..n).flat_map(|i| out_adj[i * 7 + 4..i * 7 + 7].to_vec()).collect();
        let rad_in = self.radiance.mlp.backward(&self.rad_trace, rgb_adj, pg_rad);

        let mut adj = vec![0.0; 4 * n * s];
        for i in 0..n {
            let r = &rad_in[i * d_rad..(i + 1) * d_rad];
            adj[i * s] = out_adj[i * 7];
            adj[i * s + 1..(i + 1) * s].copy_from_slice(&r[9..]);
            for d in 0..3 {
                adj[((d + 1) * n + i) * s] = out_adj[i * 7 + 1 + d] + r[6 + d];
            }
        }
        let gx = self.sdf.backward(&self.points, &self.sdf_trace, adj, pg_sdf);

        let mut result = vec![0.0; 6 * n];
        for i in 0..n {
            let r = &rad_in[i * d_rad..(i + 1) * d_rad];
            for d in 0..3 {
                result[3 * i + d] = gx[i][d] + r[d];
                result[3 * n + 3 * i + d] = r[3 + d];
            }
        }
        result
    }
}

impl SignedDistance for NeuralField {
    fn eval(&self, points: &[Vec3]) -> Vec<f64> {
        let s = 1 + self.sdf.feature_dim();
        let t = self.sdf.forward(points, false);
        (0..points.len()).map(|i| t.output[i * s]).collect()
    }

    fn eval_grad(&self, points: &[Vec3]) -> Vec<(f64, Vec3)> {
        let t = self.sdf.forward(points, true);
        unpack(&t, 1 + self.sdf.feature_dim()).0
    }

    fn record<'t>(
        &self,
        tape: &'t Tape,
        points: &[Vec3<Var<'t>>],
        with_grad: bool,
    ) -> Vec<(Var<'t>, Vec3<Var<'t>>)> {
        record_sdf(&self.sdf, tape, points, with_grad)
    }

    fn param_count(&self) -> usize {
        self.sdf_param_count() + self.radiance_param_count()
    }
}

impl ColorField for NeuralField {
    fn eval_color(&self, points: &[Vec3], dirs: &[Vec3]) -> Vec<(f64, [f64; 3])> {
        let (st, rt) = self.color_forward(points, dirs);
        let s = 1 + self.sdf.feature_dim();
        (0..points.len())
            .map(|i| {
                let c = &rt.output[3 * i..3 * i + 3];
                (st.output[i * s], [c[0], c[1], c[2]])
            })
            .collect()
    }

    fn record_color<'t>(
        &self,
        tape: &'t Tape,
        points: &[Vec3<Var<'t>>],
        dirs: &[Vec3<Var<'t>>],
    ) -> Vec<(Var<'t>, [Var<'t>; 3])> {
        if points.is_empty() {
            return Vec::new();
        }
        let pts = values_of(points);
        let dv = values_of(dirs);
        let (st, rt) = self.color_forward(&pts, &dv);
        let s = 1 + self.sdf.feature_dim();
        let (vals, _) = unpack(&st, s);
        let mut outputs = Vec::with_capacity(7 * pts.len());
        for (i, (f, g)) in vals.iter().enumerate() {
            outputs.extend([*f, g.x, g.y, g.z]);
            outputs.extend_from_slice(&rt.output[3 * i..3 * i + 3]);
        }
        let mut inputs = flatten(points);
        inputs.extend(flatten(dirs));
        let block = FieldBlock {
            sdf: Arc::clone(&self.sdf),
            radiance: Arc::clone(&self.radiance),
            points: pts,
            sdf_trace: st,
            rad_trace: rt,
        };
        let out = tape.block(&inputs, &outputs, Box::new(block));
        out.chunks_exact(7).map(|c| (c[0], [c[4], c[5], c[6]])).collect()
    }
}

impl SignedDistance for SdfField {
    fn eval(&self, points: &[Vec3]) -> Vec<f64> {
        let s = 1 + self.feature_dim();
        let t = self.forward(points, false);
        (0..points.len()).map(|i| t.output[i * s]).collect()
    }

    fn eval_grad(&self, points: &[Vec3]) -> Vec<(f64, Vec3)> {
        unpack(&self.forward(points, true), 1 + self.feature_dim()).0
    }

    /// Snapshots the network into the tape (one parameter copy per call).
    fn record<'t>(
        &self,
        tape: &'t Tape,
        points: &[Vec3<Var<'t>>],
        with_grad: bool,
    ) -> Vec<(Var<'t>, Vec3<Var<'t>>)> {
        record_sdf(&Arc::new(self.clone()), tape, points, with_grad)
    }

    fn param_count(&self) -> usize {
        self.params().len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_sdf() -> SdfConfig {
        SdfConfig {
            hidden_layers: 4,
            width: 32,
            skip_at: Some(2),
            feature_dim: 8,
            num_freqs: 4,
            softplus_beta: 100.0,
            init_radius: 0.5,
            geometric_init: true,
        }
    }

    fn small_field(seed: u64) -> NeuralField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        NeuralField::new(
            small_sdf(),
            RadianceConfig {
                hidden_layers: 2,
                width: 16,
            },
            &mut rng,
        )
    }

    fn random_point(rng: &mut ChaCha8Rng, r: f64) -> Vec3 {
        Vec3::new(
            rng.random_range(-r..r),
            rng.random_range(-r..r),
            rng.random_range(-r..r),
        )
    }

    #[test]
    fn geometric_init_is_a_sphere() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sdf = SdfField::new(SdfConfig::default(), &mut rng);
        let (f0, _) = sdf.sdf_eval(Vec3::zeros());
        assert!((f0 + 0.5).abs() < 0.05, "f(0) = {f0}");
        // Star-shaped around the origin with the crossing near r0.
        for _ in 0..20 {
            let d = random_point(&mut rng, 1.0).normalize();
            let radii: Vec<f64> = (1..=40).map(|k| k as f64 * 0.025).collect();
            let crossing = radii
                .iter()
                .find(|&&r| sdf.sdf_eval(d * r).0 > 0.0)
                .copied();
            let r = crossing.expect("zero crossing inside the unit ball");
            assert!((0.35..=0.65).contains(&r), "crossing at {r}");
        }
    }

    #[test]
    fn spatial_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut cfg = small_sdf();
        cfg.geometric_init = false;
        cfg.softplus_beta = 5.0;
        let sdf = SdfField::new(cfg, &mut rng);
        let mut good = 0;
        let total = 1000;
        for _ in 0..total {
            let x = random_point(&mut rng, 1.0);
            let (_, g) = sdf.sdf_eval(x);
            let h = 1e-4;
            let mut ok = true;
            for d in 0..3 {
                let mut e = [0.0; 3];
                e[d] = h;
                let e = Vec3::from_array(e);
                let fd = (sdf.sdf_eval(x + e).0 - sdf.sdf_eval(x - e).0) / (2.0 * h);
                if (fd - g[d]).abs() > 1e-3 * g.norm().max(1e-3) {
                    ok = false;
                }
            }
            good += ok as usize;
        }
        assert_eq!(good, total);
    }

    /// Loss `Σ a·f + b·∇f + c·rgb` through the taped color block.
    fn taped_loss(field: &NeuralField, pts: &[Vec3], dirs: &[Vec3], w: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        let tape = Tape::new();
        let xs: Vec<Vec3<Var>> = pts
            .iter()
            .map(|p| Vec3::new(tape.var(p.x), tape.var(p.y), tape.var(p.z)))
            .collect();
        let ds: Vec<Vec3<Var>> = dirs.iter().map(|d| Vec3::from_f64(*d)).collect();
        let with_g = field.record(&tape, &xs, true);
        let col = field.record_color(&tape, &xs, &ds);
        let mut loss = Var::constant(0.0);
        for i in 0..pts.len() {
            let (f, g) = with_g[i];
            loss = loss + f * w[0] + g.norm() * w[1];
            let (f2, c) = col[i];
            loss = loss + f2 * w[2] + c[0] * w[3] + c[1] * w[4] + c[2] * w[5];
        }
        let mut pg = vec![0.0; field.param_count()];
        let adj = tape.gradient(loss, &mut pg);
        let gx = xs.iter().flat_map(|p| p.to_array().map(|v| adj.wrt(v))).collect();
        (loss.value(), pg, gx)
    }

    #[test]
    fn taped_blocks_match_finite_differences() {
        let mut field = small_field(3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        // Perturb away from the symmetric init so all paths are exercised.
        let mut p = field.flat_params();
        p.iter_mut().for_each(|v| *v += rng.random_range(-0.05..0.05));
        field.set_flat_params(&p);
        Arc::make_mut(&mut field.sdf).encoding.alpha = 2.5;
        let pts: Vec<Vec3> = (0..3).map(|_| random_point(&mut rng, 0.8)).collect();
        let dirs: Vec<Vec3> = (0..3).map(|_| random_point(&mut rng, 1.0).normalize()).collect();
        let w = [0.7, -0.4, 0.3, 1.1, -0.6, 0.9];
        let (_, pg, gx) = taped_loss(&field, &pts, &dirs, &w);

        let h = 1e-5;
        let mut checked = 0;
        let mut good = 0;
        let stride = (p.len() / 300).max(1);
        for k in (0..p.len()).step_by(stride) {
            let mut q = p.clone();
            q[k] = p[k] + h;
            field.set_flat_params(&q);
            let lp = taped_loss(&field, &pts, &dirs, &w).0;
            q[k] = p[k] - h;
            field.set_flat_params(&q);
            let lm = taped_loss(&field, &pts, &dirs, &w).0;
            let fd = (lp - lm) / (2.0 * h);
            checked += 1;
            if (fd - pg[k]).abs() <= 1e-3 * fd.abs().max(1e-2) {
                good += 1;
            }
        }
        field.set_flat_params(&p);
        assert!(good as f64 >= 0.99 * checked as f64, "{good}/{checked}");

        for i in 0..3 {
            for d in 0..3 {
                let mut e = [0.0; 3];
                e[d] = h;
                let mut pp = pts.clone();
                pp[i] = pts[i] + Vec3::from_array(e);
                let lp = taped_loss(&field, &pp, &dirs, &w).0;
                pp[i] = pts[i] - Vec3::from_array(e);
                let lm = taped_loss(&field, &pp, &dirs, &w).0;
                let fd = (lp - lm) / (2.0 * h);
                let an = gx[3 * i + d];
                assert!((fd - an).abs() < 1e-3 * fd.abs().max(1e-2), "x{i}[{d}] {fd} vs {an}");
            }
        }
    }

    #[test]
    fn radiance_is_bounded_and_pure() {
        let field = small_field(5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..200 {
            let x = random_point(&mut rng, 3.0);
            let v = random_point(&mut rng, 1.0).normalize();
            let n = random_point(&mut rng, 5.0);
            let feat: Vec<f64> = (0..8).map(|_| rng.random_range(-10.0..10.0)).collect();
            let c = field.radiance.radiance_eval(x, v, n, &feat);
            assert!(c.iter().all(|v| (0.0..=1.0).contains(v)));
            assert_eq!(c, field.radiance.radiance_eval(x, v, n, &feat));
        }
    }

    #[test]
    fn analytic_and_neural_share_record_contract() {
        let field = small_field(7);
        let pts = [Vec3::new(0.1, 0.2, 0.3), Vec3::new(-0.4, 0.0, 0.5)];
        let tape = Tape::new();
        let xs: Vec<Vec3<Var>> = pts.iter().map(|p| Vec3::from_f64(*p)).collect();
        let rec = field.record(&tape, &xs, true);
        let direct = field.eval_grad(&pts);
        for (r, d) in rec.iter().zip(&direct) {
            assert_eq!(r.0.value(), d.0);
            assert_eq!(r.1.value(), d.1);
        }
        assert_eq!(field.eval(&pts)[1], direct[1].0);
    }
}
