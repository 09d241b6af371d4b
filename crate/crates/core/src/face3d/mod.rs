//! Linear blendshape face model with a deterministic software renderer.
//!
//! Meshes are `mean + basis * e` for a 30-vector `e` of expression
//! coefficients. Identity and pose are fixed, so the model carries only a
//! mean shape and an expression basis.

mod image;
mod raster;

pub use image::{Frame, MaskFrame, MASK_FACE, MASK_MOUTH};
pub use raster::{
    rasterize_masks, render_preview, render_with_masks, RenderOutput, CLEAR_COLOR, LIP_COLOR, MIN_RENDER_SIZE,
    SKIN_COLOR,
};

use std::f64::consts::TAU;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::dataset::{ExprCoeffs, EXPR_DIM};

pub const MODEL_MAGIC: [u8; 4] = *b"DFM3";
pub const MODEL_VERSION: u32 = 1;
pub const MIN_VERTICES: usize = 100;

/// Semi-axes of the half-ellipsoid face.
const AXES: [f64; 3] = [0.7, 0.9, 0.5];
/// Longitude/latitude extent of the face patch.
const MAX_ANGLE_DEG: f64 = 80.0;
/// Mouth ellipse: center y, semi-axes.
const MOUTH_Y: f64 = -0.45;
const MOUTH_AXES: [f64; 2] = [0.28, 0.12];
const MOUTH_FIELDS: usize = 12;
/// Peak vertex displacement of a unit coefficient, in units of the field's
/// Gaussian width. The steepest displacement gradient of a unit coefficient
/// is then about 0.15, so coefficients up to |c| = 6 cannot fold the surface.
const PEAK_PER_SIGMA: f64 = 0.25;

#[derive(Debug, Error)]
pub enum FaceError {
    #[error("model needs at least {MIN_VERTICES} vertices, got {0}")]
    TooFewVertices(usize),
    #[error("render size {0}x{1} below {MIN_RENDER_SIZE}x{MIN_RENDER_SIZE}")]
    RenderSize(usize, usize),
    #[error("vertex array has {found} vertices, model has {expected}")]
    VertexCount { expected: usize, found: usize },
    #[error("model invalid: {0}")]
    Invalid(String),
    #[error("model io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a model file (magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("unsupported model version {0}")]
    Version(u32),
    #[error("model file truncated in {0}")]
    Truncated(&'static str),
    #[error("image format: {0}")]
    Image(String),
}

/// Mean shape plus 30 expression blendshapes.
#[derive(Debug, Clone, PartialEq)]
pub struct BlendshapeModel {
    /// `3N` coordinates, vertex-major `x, y, z`.
    pub mean: Vec<f64>,
    /// Column-major `3N x 30`; column `j` is `basis[j*3N .. (j+1)*3N]`.
    pub basis: Vec<f64>,
    pub triangles: Vec<[u32; 3]>,
    /// Sorted vertex indices of the mouth region.
    pub mouth_vertices: Vec<u32>,
    mouth_triangle: Vec<bool>,
}

impl BlendshapeModel {
    pub fn new(
        mean: Vec<f64>,
        basis: Vec<f64>,
        triangles: Vec<[u32; 3]>,
        mut mouth_vertices: Vec<u32>,
    ) -> Result<Self, FaceError> {
        if !mean.len().is_multiple_of(3) || mean.is_empty() {
            return Err(FaceError::Invalid(format!("mean length {} not a positive multiple of 3", mean.len())));
        }
        let n = mean.len() / 3;
        if basis.len() != mean.len() * EXPR_DIM {
            return Err(FaceError::Invalid(format!("basis length {} != 3N*30", basis.len())));
        }
        if mean.iter().chain(&basis).any(|x| !x.is_finite()) {
            return Err(FaceError::Invalid("non-finite coordinates".into()));
        }
        if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i as usize >= n)) {
            return Err(FaceError::Invalid(format!("triangle {t:?} indexes past {n} vertices")));
        }
        mouth_vertices.sort_unstable();
        mouth_vertices.dedup();
        if mouth_vertices.last().is_some_and(|&i| i as usize >= n) {
            return Err(FaceError::Invalid("mouth vertex out of range".into()));
        }
        let mut in_mouth = vec![false; n];
        mouth_vertices.iter().for_each(|&i| in_mouth[i as usize] = true);
        let mouth_triangle = triangles.iter().map(|t| t.iter().all(|&i| in_mouth[i as usize])).collect();
        Ok(Self {
            mean,
            basis,
            triangles,
            mouth_vertices,
            mouth_triangle,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.mean.len() / 3
    }

    pub fn basis_column(&self, j: usize) -> &[f64] {
        let len = self.mean.len();
        &self.basis[j * len..(j + 1) * len]
    }

    /// Whether triangle `t` has all three corners in the mouth set.
    pub fn is_mouth_triangle(&self, t: usize) -> bool {
        self.mouth_triangle[t]
    }

    pub fn mouth_triangle_count(&self) -> usize {
        self.mouth_triangle.iter().filter(|&&m| m).count()
    }

    /// `mean + basis * e` as a flat `3N` array.
    pub fn eval_mesh(&self, e: &ExprCoeffs) -> Vec<f64> {
        let mut v = self.mean.clone();
        for (j, &c) in e.0.iter().enumerate() {
            if c != 0.0 {
                for (x, b) in v.iter_mut().zip(self.basis_column(j)) {
                    *x += c * b;
                }
            }
        }
        v
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), FaceError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Little-endian: magic, version, N, mean (3N f32), basis (90N f32,
    /// column-major), triangle count + triples (u32), mouth count + indices.
    pub fn write_to(&self, w: &mut impl Write) -> Result<(), FaceError> {
        w.write_all(&MODEL_MAGIC)?;
        w.write_all(&MODEL_VERSION.to_le_bytes())?;
        w.write_all(&(self.n_vertices() as u32).to_le_bytes())?;
        for &x in self.mean.iter().chain(&self.basis) {
            w.write_all(&(x as f32).to_le_bytes())?;
        }
        w.write_all(&(self.triangles.len() as u32).to_le_bytes())?;
        for i in self.triangles.iter().flatten() {
            w.write_all(&i.to_le_bytes())?;
        }
        w.write_all(&(self.mouth_vertices.len() as u32).to_le_bytes())?;
        for i in &self.mouth_vertices {
            w.write_all(&i.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, FaceError> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, FaceError> {
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic, "header")?;
        if magic != MODEL_MAGIC {
            return Err(FaceError::BadMagic(magic));
        }
        let version = read_u32s(r, 1, "header")?[0];
        if version != MODEL_VERSION {
            return Err(FaceError::Version(version));
        }
        let n = read_u32s(r, 1, "header")?[0] as usize;
        if !(1..=1 << 22).contains(&n) {
            return Err(FaceError::Invalid(format!("vertex count {n}")));
        }
        let mean = read_f32s(r, 3 * n, "mean")?;
        let basis = read_f32s(r, 3 * n * EXPR_DIM, "basis")?;
        let t = read_u32s(r, 1, "triangle count")?[0] as usize;
        let flat = read_u32s(r, 3 * t, "triangles")?;
        let triangles = flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        let m = read_u32s(r, 1, "mouth count")?[0] as usize;
        let mouth = read_u32s(r, m, "mouth vertices")?;
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(FaceError::Invalid("trailing bytes".into()));
        }
        Self::new(mean, basis, triangles, mouth)
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &'static str) -> Result<(), FaceError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => FaceError::Truncated(what),
        _ => FaceError::Io(e),
    })
}

fn read_u32s(r: &mut impl Read, n: usize, what: &'static str) -> Result<Vec<u32>, FaceError> {
    let mut buf = vec![0u8; n * 4];
    read_exact(r, &mut buf, what)?;
    Ok(buf.chunks_exact(4).map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

fn read_f32s(r: &mut impl Read, n: usize, what: &'static str) -> Result<Vec<f64>, FaceError> {
    let mut buf = vec![0u8; n * 4];
    read_exact(r, &mut buf, what)?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

/// Grid shape used for a requested vertex count: `rows = round(sqrt n)`,
/// `cols = ceil(n / rows)`. The model has `rows * cols >= n` vertices.
pub fn grid_shape(n_vertices: usize) -> (usize, usize) {
    let rows = (n_vertices as f64).sqrt().round().max(2.0) as usize;
    (rows, n_vertices.div_ceil(rows).max(2))
}

/// Deterministic synthetic face.
///
/// The mean is a half-ellipsoid patch (semi-axes 0.7, 0.9, 0.5, facing +z)
/// sampled on a longitude/latitude grid within +-80 degrees, with a Gaussian
/// nose bump. Vertices inside the ellipse
/// `(x/0.28)^2 + ((y+0.45)/0.12)^2 <= 1` form the mouth. The basis holds
/// 30 Gaussian displacement fields: 12 narrow ones centered in the mouth
/// and 18 broad, mostly depth-wise ones over the face. The fields are
/// orthogonalized by two passes of modified Gram-Schmidt, then each column
/// is scaled so its largest vertex displacement is `0.25 * sigma`.
pub fn make_synthetic_model(seed: u64, n_vertices: usize) -> Result<BlendshapeModel, FaceError> {
    if n_vertices < MIN_VERTICES {
        return Err(FaceError::TooFewVertices(n_vertices));
    }
    let (rows, cols) = grid_shape(n_vertices);
    let n = rows * cols;
    let max = MAX_ANGLE_DEG.to_radians();
    let mut mean = Vec::with_capacity(3 * n);
    for i in 0..rows {
        // Row 0 at the top of the face.
        let lat = max - 2.0 * max * i as f64 / (rows - 1) as f64;
        for j in 0..cols {
            let lon = -max + 2.0 * max * j as f64 / (cols - 1) as f64;
            let x = AXES[0] * lat.cos() * lon.sin();
            let y = AXES[1] * lat.sin();
            let nose = 0.18 * (-(x * x + (y + 0.05).powi(2)) / (2.0 * 0.08 * 0.08)).exp();
            let z = AXES[2] * lat.cos() * lon.cos() + nose;
            mean.extend_from_slice(&[x, y, z]);
        }
    }
    let mut triangles = Vec::with_capacity(2 * (rows - 1) * (cols - 1));
    for i in 0..rows - 1 {
        for j in 0..cols - 1 {
            let a = (i * cols + j) as u32;
            let b = a + 1;
            let c = a + cols as u32;
            let d = c + 1;
            triangles.push([a, c, b]);
            triangles.push([b, c, d]);
        }
    }
    let mouth: Vec<u32> = (0..n)
        .filter(|&k| in_mouth_ellipse(mean[3 * k], mean[3 * k + 1], 1.0))
        .map(|k| k as u32)
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = 3 * n;
    let mut basis = vec![0.0; len * EXPR_DIM];
    let mut sigmas = [0.0; EXPR_DIM];
    for jcol in 0..EXPR_DIM {
        let (center, sigma, dir) = if jcol < MOUTH_FIELDS {
            let rho = 0.8 * rng.random::<f64>().sqrt();
            let th = TAU * rng.random::<f64>();
            let c = [MOUTH_AXES[0] * rho * th.cos(), MOUTH_Y + MOUTH_AXES[1] * rho * th.sin()];
            (c, 0.07, unit(gauss3(&mut rng)))
        } else {
            let rho = 0.5 * rng.random::<f64>().sqrt();
            let th = TAU * rng.random::<f64>();
            let g = gauss3(&mut rng);
            (
                [rho * th.cos(), rho * th.sin()],
                0.2,
                unit([0.3 * g[0], 0.3 * g[1], 1.0 + 0.1 * g[2].abs()]),
            )
        };
        sigmas[jcol] = sigma;
        let col = &mut basis[jcol * len..(jcol + 1) * len];
        for k in 0..n {
            let dx = mean[3 * k] - center[0];
            let dy = mean[3 * k + 1] - center[1];
            let g = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
            for a in 0..3 {
                col[3 * k + a] = g * dir[a];
            }
        }
    }
    orthonormalize(&mut basis, len)?;
    for (col, sigma) in basis.chunks_exact_mut(len).zip(sigmas) {
        let peak = col
            .chunks_exact(3)
            .map(|d| (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt())
            .fold(0.0, f64::max);
        let s = PEAK_PER_SIGMA * sigma / peak;
        col.iter_mut().for_each(|x| *x *= s);
    }
    BlendshapeModel::new(mean, basis, triangles, mouth)
}

fn in_mouth_ellipse(x: f64, y: f64, scale: f64) -> bool {
    (x / (scale * MOUTH_AXES[0])).powi(2) + ((y - MOUTH_Y) / (scale * MOUTH_AXES[1])).powi(2) <= 1.0
}

fn gauss3(rng: &mut impl Rng) -> [f64; 3] {
    [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)]
}

fn unit(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if n == 0.0 {
        return [0.0, 0.0, 1.0];
    }
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Modified Gram-Schmidt, applied twice for orthogonality to rounding level.
fn orthonormalize(cols: &mut [f64], len: usize) -> Result<(), FaceError> {
    let k = cols.len() / len;
    for _ in 0..2 {
        for j in 0..k {
            let (done, rest) = cols.split_at_mut(j * len);
            let cj = &mut rest[..len];
            for i in 0..j {
                let ci = &done[i * len..(i + 1) * len];
                let d: f64 = ci.iter().zip(cj.iter()).map(|(a, b)| a * b).sum();
                cj.iter_mut().zip(ci).for_each(|(x, &c)| *x -= d * c);
            }
            let norm = cj.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-10 {
                return Err(FaceError::Invalid(format!("basis column {j} is linearly dependent")));
            }
            cj.iter_mut().for_each(|x| *x /= norm);
        }
    }
    Ok(())
}
