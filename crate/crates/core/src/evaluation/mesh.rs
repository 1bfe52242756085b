use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::fields::{AnalyticSdf, SignedDistance};
use crate::geometry::Sim3;
use crate::real::Vec3;

use super::tables::TRIANGLE_TABLE;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
}

const MIN_AREA: f64 = 1e-12;

impl Mesh {
    pub fn triangle_area(&self, t: &[u32; 3]) -> f64 {
        let [a, b, c] = t.map(|i| self.vertices[i as usize]);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len() as u32;
        for (k, t) in self.triangles.iter().enumerate() {
            if t.iter().any(|&i| i >= n) {
                return Err(Error::InvariantViolation(format!("triangle {k} has an index out of range")));
            }
        }
        Ok(())
    }

    pub fn transformed(&self, sim: &Sim3) -> Self {
        Self {
            vertices: self.vertices.iter().map(|v| sim.apply(v)).collect(),
            triangles: self.triangles.clone(),
        }
    }

    /// Undirected edges mapped to the number of incident triangles.
    pub fn edge_use(&self) -> BTreeMap<(u32, u32), usize> {
        let mut edges = BTreeMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        edges
    }

    /// `V − E + F` over the vertices referenced by triangles.
    pub fn euler_characteristic(&self) -> i64 {
        let mut used = vec![false; self.vertices.len()];
        for t in &self.triangles {
            for &i in t {
                used[i as usize] = true;
            }
        }
        let v = used.iter().filter(|&&u| u).count() as i64;
        v - self.edge_use().len() as i64 + self.triangles.len() as i64
    }

    /// `n` points distributed uniformly by area.
    pub fn sample_surface<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Vec3> {
        let mut cdf = Vec::with_capacity(self.triangles.len());
        let mut acc = 0.0;
        for t in &self.triangles {
            acc += self.triangle_area(t);
            cdf.push(acc);
        }
        if acc <= 0.0 {
            return Vec::new();
        }
        (0..n)
            .map(|_| {
                let u = rng.random::<f64>() * acc;
                let k = cdf.partition_point(|&c| c < u).min(cdf.len() - 1);
                let [a, b, c] = self.triangles[k].map(|i| self.vertices[i as usize]);
                let (r1, r2): (f64, f64) = (rng.random(), rng.random());
                let s = r1.sqrt();
                a * (1.0 - s) + b * (s * (1.0 - r2)) + c * (s * r2)
            })
            .collect()
    }

    pub fn to_ply(&self) -> String {
        let mut out = String::new();
        let _ = write!(
            out,
            "ply\nformat ascii 1.0\ncomment units: normalized scene units\nelement vertex {}\n\
             property double x\nproperty double y\nproperty double z\nelement face {}\n\
             property list uchar int vertex_indices\nend_header\n",
            self.vertices.len(),
            self.triangles.len()
        );
        for v in &self.vertices {
            let _ = writeln!(out, "{} {} {}", v.x, v.y, v.z);
        }
        for t in &self.triangles {
            let _ = writeln!(out, "3 {} {} {}", t[0], t[1], t[2]);
        }
        out
    }

    pub fn save_ply(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_ply()).map_err(|e| Error::io(path, e))
    }

    /// Reads ASCII PLY with `x y z` as the first vertex properties and
    /// triangular faces.
    pub fn parse_ply(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let bad = |line: usize, msg: &str| Error::parse(path, line + 1, msg.to_string());
        match lines.next() {
            Some((_, "ply")) => {}
            _ => return Err(bad(0, "missing `ply` magic")),
        }
        let (mut n_vert, mut n_face) = (None, None);
        for (i, line) in lines.by_ref() {
            let words: Vec<&str> = line.split_whitespace().collect();
            match words.as_slice() {
                ["format", fmt, ..] if *fmt != "ascii" => return Err(bad(i, "only ASCII PLY is supported")),
                ["element", "vertex", n] => {
                    n_vert = Some(n.parse::<usize>().map_err(|_| bad(i, "bad vertex count"))?);
                }
                ["element", "face", n] => {
                    n_face = Some(n.parse::<usize>().map_err(|_| bad(i, "bad face count"))?);
                }
                ["end_header"] => break,
                _ => {}
            }
        }
        let n_vert = n_vert.ok_or_else(|| bad(0, "no vertex element"))?;
        let n_face = n_face.unwrap_or(0);
        let mut mesh = Mesh::default();
        for _ in 0..n_vert {
            let (i, line) = lines.next().ok_or_else(|| bad(0, "truncated vertex list"))?;
            let v: Vec<f64> = line
                .split_whitespace()
                .take(3)
                .map(|w| w.parse::<f64>().map_err(|_| bad(i, "bad vertex coordinate")))
                .collect::<Result<_>>()?;
            if v.len() != 3 {
                return Err(bad(i, "vertex needs 3 coordinates"));
            }
            mesh.vertices.push(Vec3::new(v[0], v[1], v[2]));
        }
        for _ in 0..n_face {
            let (i, line) = lines.next().ok_or_else(|| bad(0, "truncated face list"))?;
            let idx: Vec<u32> = line
                .split_whitespace()
                .map(|w| w.parse::<u32>().map_err(|_| bad(i, "bad face index")))
                .collect::<Result<_>>()?;
            if idx.len() != 4 || idx[0] != 3 {
                return Err(bad(i, "only triangular faces are supported"));
            }
            mesh.triangles.push([idx[1], idx[2], idx[3]]);
        }
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn load_ply(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_ply(&text, path)
    }
}

/// Axis-aligned extraction box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bounds {
    pub min: Vec3,
    pub max: Vec3,
}

impl Bounds {
    pub fn cube(half: f64) -> Self {
        Self {
            min: Vec3::new(-half, -half, -half),
            max: Vec3::new(half, half, half),
        }
    }
}

/// Grid used to seed [`sample_analytic_surface`].
const ANALYTIC_SEED_RESOLUTION: usize = 96;

/// Area-uniform samples on the zero set of an analytic shape: marching
/// cubes seeds the distribution, then each sample is pulled onto the exact
/// surface by `x ← x − f(x)∇f(x)`.
pub fn sample_analytic_surface<R: Rng + ?Sized>(shape: &AnalyticSdf, n: usize, rng: &mut R) -> Result<Vec<Vec3>> {
    let half = 1.1 * shape.bounding_radius();
    let mesh = marching_cubes(shape, ANALYTIC_SEED_RESOLUTION, Bounds::cube(half))?;
    let mut pts = mesh.sample_surface(n, rng);
    for p in &mut pts {
        for _ in 0..4 {
            let g = shape.gradient(p);
            *p = *p - g * shape.distance(p);
        }
    }
    Ok(pts)
}

// Cube corners in table order and the twelve edges between them.
const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];
const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

pub const MIN_RESOLUTION: usize = 8;

/// Zero level set of `field` on a grid of `resolution` cells per axis.
/// Vertices on shared grid edges are merged, so closed surfaces come out
/// watertight. Triangles face away from the negative side.
pub fn marching_cubes<F: SignedDistance + ?Sized>(field: &F, resolution: usize, bounds: Bounds) -> Result<Mesh> {
    if resolution < MIN_RESOLUTION {
        return Err(Error::Config(format!(
            "marching cubes resolution must be at least {MIN_RESOLUTION}, got {resolution}"
        )));
    }
    let n = resolution + 1;
    let step = (bounds.max - bounds.min) * (1.0 / resolution as f64);
    let at = |i: usize, j: usize, k: usize| {
        bounds.min + Vec3::new(i as f64 * step.x, j as f64 * step.y, k as f64 * step.z)
    };
    let idx = |i: usize, j: usize, k: usize| (k * n + j) * n + i;

    // One z-slice per batch keeps the evaluation batched without holding
    // a second copy of the grid.
    let mut values = Vec::with_capacity(n * n * n);
    let mut slice = Vec::with_capacity(n * n);
    for k in 0..n {
        slice.clear();
        for j in 0..n {
            for i in 0..n {
                slice.push(at(i, j, k));
            }
        }
        values.extend(field.eval(&slice));
    }
    // Values at (or within rounding of) zero would put several edge vertices
    // on one grid point and collapse triangles; move them just outside.
    let nudge = 1e-3 * step.x.min(step.y).min(step.z);
    for v in values.iter_mut().filter(|v| v.abs() < nudge) {
        *v = nudge;
    }
    if values.iter().all(|&v| v >= 0.0) || values.iter().all(|&v| v < 0.0) {
        return Err(Error::EmptySurface);
    }

    let mut mesh = Mesh::default();
    let mut edge_vertex: HashMap<(usize, u8), u32> = HashMap::new();
    for k in 0..resolution {
        for j in 0..resolution {
            for i in 0..resolution {
                let corner = |c: usize| {
                    let [di, dj, dk] = CORNERS[c];
                    (i + di, j + dj, k + dk)
                };
                let mut case = 0usize;
                let mut f = [0.0; 8];
                for c in 0..8 {
                    let (a, b, d) = corner(c);
                    f[c] = values[idx(a, b, d)];
                    if f[c] < 0.0 {
                        case |= 1 << c;
                    }
                }
                if case == 0 || case == 255 {
                    continue;
                }
                let mut verts = [u32::MAX; 12];
                let row = &TRIANGLE_TABLE[case];
                for &e in row.iter().take_while(|&&e| e >= 0) {
                    let e = e as usize;
                    if verts[e] != u32::MAX {
                        continue;
                    }
                    let [c0, c1] = EDGES[e];
                    let (p0, p1) = (corner(c0), corner(c1));
                    let lo = if idx(p0.0, p0.1, p0.2) < idx(p1.0, p1.1, p1.2) { p0 } else { p1 };
                    let axis = if p0.0 != p1.0 {
                        0
                    } else if p0.1 != p1.1 {
                        1
                    } else {
                        2
                    };
                    let key = (idx(lo.0, lo.1, lo.2), axis);
                    verts[e] = *edge_vertex.entry(key).or_insert_with(|| {
                        let (f0, f1) = (f[c0], f[c1]);
                        let t = if f1 != f0 { (f0 / (f0 - f1)).clamp(0.0, 1.0) } else { 0.5 };
                        let x0 = at(p0.0, p0.1, p0.2);
                        let x1 = at(p1.0, p1.1, p1.2);
                        mesh.vertices.push(x0 + (x1 - x0) * t);
                        (mesh.vertices.len() - 1) as u32
                    });
                }
                for tri in row.chunks(3).take_while(|t| t[0] >= 0) {
                    // The table winds triangles toward the negative corners.
                    let t = [verts[tri[0] as usize], verts[tri[2] as usize], verts[tri[1] as usize]];
                    if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] || mesh.triangle_area(&t) <= MIN_AREA {
                        continue;
                    }
                    mesh.triangles.push(t);
                }
            }
        }
    }
    if mesh.triangles.is_empty() {
        return Err(Error::EmptySurface);
    }
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sphere_vertices_lie_on_the_sphere() {
        let res = 64;
        let b = Bounds::cube(1.2);
        let mesh = marching_cubes(&AnalyticSdf::sphere(1.0), res, b).unwrap();
        let voxel = 2.4 / res as f64;
        for v in &mesh.vertices {
            assert!((v.norm() - 1.0).abs() <= 2.0 * voxel);
        }
        // Outward winding.
        let outward = mesh
            .triangles
            .iter()
            .filter(|t| {
                let [a, b, c] = t.map(|i| mesh.vertices[i as usize]);
                (b - a).cross(&(c - a)).dot(&(a + b + c)) > 0.0
            })
            .count();
        assert_eq!(outward, mesh.triangles.len());
    }

    #[test]
    fn sphere_mesh_is_watertight_genus_zero() {
        let mesh = marching_cubes(&AnalyticSdf::sphere(0.7), 40, Bounds::cube(1.0)).unwrap();
        assert!(mesh.edge_use().values().all(|&c| c == 2));
        assert_eq!(mesh.euler_characteristic(), 2);
    }

    #[test]
    fn positive_field_is_empty() {
        let far = AnalyticSdf::Sphere {
            center: Vec3::new(5.0, 0.0, 0.0),
            radius: 0.5,
        };
        assert!(matches!(marching_cubes(&far, 16, Bounds::cube(1.0)), Err(Error::EmptySurface)));
        assert!(matches!(
            marching_cubes(&AnalyticSdf::sphere(0.5), 4, Bounds::cube(1.0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn ply_round_trip() {
        let mesh = marching_cubes(&AnalyticSdf::sphere(0.5), 12, Bounds::cube(1.0)).unwrap();
        let back = Mesh::parse_ply(&mesh.to_ply(), Path::new("m.ply")).unwrap();
        assert_eq!(back, mesh);
    }

    #[test]
    fn analytic_samples_lie_on_the_surface() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for shape in [AnalyticSdf::sphere(0.5), AnalyticSdf::Torus { center: Vec3::zeros(), major: 0.6, minor: 0.2 }] {
            let pts = sample_analytic_surface(&shape, 2000, &mut rng).unwrap();
            assert_eq!(pts.len(), 2000);
            let worst = pts.iter().map(|p| shape.distance(p).abs()).fold(0.0, f64::max);
            assert!(worst < 1e-9, "{worst}");
        }
    }
}
