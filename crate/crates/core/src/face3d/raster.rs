//! Orthographic z-buffer rasterizer.
//!
//! Model coordinates `[-1, 1]^2` map onto the image with `+y` up. A pixel
//! `(ix, iy)` is sampled at its center `(ix + 0.5, iy + 0.5)` and is covered
//! by a triangle when all three edge functions agree in sign with the
//! triangle's signed area or are zero (edges inclusive, either winding).
//! Zero-area triangles are skipped. The nearest surface (largest `z`) wins;
//! on equal depth the earlier triangle is kept. Shading is flat and
//! two-sided Lambertian under a fixed directional light.

use super::{BlendshapeModel, FaceError, Frame, MaskFrame, MASK_FACE, MASK_MOUTH};
use crate::par;

pub const MIN_RENDER_SIZE: usize = 16;
pub const CLEAR_COLOR: [u8; 3] = [24, 28, 36];
pub const SKIN_COLOR: [u8; 3] = [222, 176, 150];
pub const LIP_COLOR: [u8; 3] = [178, 72, 86];

const AMBIENT: f64 = 0.25;
const LIGHT: [f64; 3] = [0.3, 0.4, 1.0];

/// A rendered frame with the number of pixels the mesh covered; zero
/// coverage means the projection missed the view entirely.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderOutput {
    pub frame: Frame,
    pub covered_pixels: usize,
}

impl RenderOutput {
    pub fn is_degenerate(&self) -> bool {
        self.covered_pixels == 0
    }
}

struct Tri {
    p: [[f64; 2]; 3],
    z: [f64; 3],
    area: f64,
    x_range: (usize, usize),
    color: [u8; 3],
    mouth: bool,
}

impl Tri {
    /// Barycentric weights of `(x, y)` if covered.
    #[inline]
    fn cover(&self, x: f64, y: f64) -> Option<[f64; 3]> {
        let [a, b, c] = self.p;
        let e = |p: [f64; 2], q: [f64; 2]| (q[0] - p[0]) * (y - p[1]) - (q[1] - p[1]) * (x - p[0]);
        let w = [e(b, c), e(c, a), e(a, b)];
        let s = self.area.signum();
        if w.iter().all(|&wi| wi * s >= 0.0) {
            Some([w[0] / self.area, w[1] / self.area, w[2] / self.area])
        } else {
            None
        }
    }
}

fn to_screen(v: &[f64], w: usize, h: usize) -> [f64; 2] {
    [(v[0] + 1.0) * 0.5 * w as f64, (1.0 - v[1]) * 0.5 * h as f64]
}

/// Pixel index range whose centers fall inside `[lo, hi]`.
fn pixel_span(lo: f64, hi: f64, n: usize) -> Option<(usize, usize)> {
    let first = (lo - 0.5).ceil().max(0.0);
    let last = (hi - 0.5).floor().min(n as f64 - 1.0);
    (first <= last).then_some((first as usize, last as usize))
}

fn shade(base: [u8; 3], v: [&[f64]; 3]) -> [u8; 3] {
    let d1 = [v[1][0] - v[0][0], v[1][1] - v[0][1], v[1][2] - v[0][2]];
    let d2 = [v[2][0] - v[0][0], v[2][1] - v[0][1], v[2][2] - v[0][2]];
    let n = [
        d1[1] * d2[2] - d1[2] * d2[1],
        d1[2] * d2[0] - d1[0] * d2[2],
        d1[0] * d2[1] - d1[1] * d2[0],
    ];
    let ln = (LIGHT[0] * LIGHT[0] + LIGHT[1] * LIGHT[1] + LIGHT[2] * LIGHT[2]).sqrt();
    let nn = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
    let lambert = if nn > 0.0 {
        ((n[0] * LIGHT[0] + n[1] * LIGHT[1] + n[2] * LIGHT[2]) / (nn * ln)).abs()
    } else {
        0.0
    };
    let k = AMBIENT + (1.0 - AMBIENT) * lambert;
    base.map(|c| (c as f64 * k).round().clamp(0.0, 255.0) as u8)
}

fn setup(model: &BlendshapeModel, vertices: &[f64], w: usize, h: usize) -> Result<(Vec<Tri>, Vec<Vec<u32>>), FaceError> {
    if w < MIN_RENDER_SIZE || h < MIN_RENDER_SIZE {
        return Err(FaceError::RenderSize(w, h));
    }
    if vertices.len() != model.mean.len() {
        return Err(FaceError::VertexCount {
            expected: model.n_vertices(),
            found: vertices.len() / 3,
        });
    }
    let mut tris = Vec::with_capacity(model.triangles.len());
    let mut rows: Vec<Vec<u32>> = vec![Vec::new(); h];
    for (ti, t) in model.triangles.iter().enumerate() {
        let v = t.map(|i| &vertices[3 * i as usize..3 * i as usize + 3]);
        let p = v.map(|vi| to_screen(vi, w, h));
        let area = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[1][1] - p[0][1]) * (p[2][0] - p[0][0]);
        if area == 0.0 || !area.is_finite() {
            continue;
        }
        let xs = p.map(|q| q[0]);
        let ys = p.map(|q| q[1]);
        let (Some(x_range), Some((y0, y1))) = (
            pixel_span(xs.iter().copied().fold(f64::INFINITY, f64::min), xs.iter().copied().fold(f64::NEG_INFINITY, f64::max), w),
            pixel_span(ys.iter().copied().fold(f64::INFINITY, f64::min), ys.iter().copied().fold(f64::NEG_INFINITY, f64::max), h),
        ) else {
            continue;
        };
        let mouth = model.is_mouth_triangle(ti);
        let idx = tris.len() as u32;
        tris.push(Tri {
            p,
            z: v.map(|vi| vi[2]),
            area,
            x_range,
            color: shade(if mouth { LIP_COLOR } else { SKIN_COLOR }, v),
            mouth,
        });
        for row in &mut rows[y0..=y1] {
            row.push(idx);
        }
    }
    Ok((tris, rows))
}

struct Row {
    rgb: Vec<u8>,
    mask: Vec<u8>,
    covered: usize,
}

fn raster_row(tris: &[Tri], bucket: &[u32], iy: usize, w: usize, color: bool) -> Row {
    let y = iy as f64 + 0.5;
    let mut depth = vec![f64::NEG_INFINITY; w];
    let mut rgb = if color { CLEAR_COLOR.repeat(w) } else { Vec::new() };
    let mut mask = vec![0u8; w];
    for &ti in bucket {
        let t = &tris[ti as usize];
        for ix in t.x_range.0..=t.x_range.1 {
            let Some(l) = t.cover(ix as f64 + 0.5, y) else { continue };
            mask[ix] |= MASK_FACE;
            if t.mouth {
                mask[ix] |= MASK_MOUTH;
            }
            if color {
                let z = l[0] * t.z[0] + l[1] * t.z[1] + l[2] * t.z[2];
                if z > depth[ix] {
                    depth[ix] = z;
                    rgb[3 * ix..3 * ix + 3].copy_from_slice(&t.color);
                }
            }
        }
    }
    let covered = mask.iter().filter(|&&m| m != 0).count();
    Row { rgb, mask, covered }
}

fn rasterize(
    model: &BlendshapeModel,
    vertices: &[f64],
    w: usize,
    h: usize,
    color: bool,
) -> Result<(Frame, MaskFrame, usize), FaceError> {
    let (tris, buckets) = setup(model, vertices, w, h)?;
    let rows = par::map_range(h, |iy| raster_row(&tris, &buckets[iy], iy, w, color));
    let mut frame = Frame {
        width: w,
        height: h,
        rgb: Vec::with_capacity(if color { 3 * w * h } else { 0 }),
    };
    let mut mask = MaskFrame {
        width: w,
        height: h,
        bits: Vec::with_capacity(w * h),
    };
    let mut covered = 0;
    for r in rows {
        frame.rgb.extend_from_slice(&r.rgb);
        mask.bits.extend_from_slice(&r.mask);
        covered += r.covered;
    }
    Ok((frame, mask, covered))
}

/// Shaded preview of `vertices` (a `3N` array, e.g. from
/// [`BlendshapeModel::eval_mesh`]).
pub fn render_preview(model: &BlendshapeModel, vertices: &[f64], w: usize, h: usize) -> Result<RenderOutput, FaceError> {
    let (frame, _, covered_pixels) = rasterize(model, vertices, w, h, true)?;
    Ok(RenderOutput { frame, covered_pixels })
}

/// Face and mouth silhouettes. The mouth mask is the coverage of triangles
/// whose corners are all mouth vertices.
pub fn rasterize_masks(model: &BlendshapeModel, vertices: &[f64], w: usize, h: usize) -> Result<MaskFrame, FaceError> {
    Ok(rasterize(model, vertices, w, h, false)?.1)
}

/// Preview and masks from a single pass.
pub fn render_with_masks(
    model: &BlendshapeModel,
    vertices: &[f64],
    w: usize,
    h: usize,
) -> Result<(RenderOutput, MaskFrame), FaceError> {
    let (frame, mask, covered_pixels) = rasterize(model, vertices, w, h, true)?;
    Ok((RenderOutput { frame, covered_pixels }, mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::ExprCoeffs;
    use crate::face3d::make_synthetic_model;

    fn tri_model(v: Vec<f64>, tris: Vec<[u32; 3]>, mouth: Vec<u32>) -> BlendshapeModel {
        let n = v.len();
        BlendshapeModel::new(v, vec![0.0; n * 30], tris, mouth).unwrap()
    }

    #[test]
    fn mean_face_at_256() {
        let m = make_synthetic_model(3, 2000).unwrap();
        let out = render_preview(&m, &m.mean, 256, 256).unwrap();
        assert!(out.covered_pixels > 256 * 256 / 4);
        let mask = rasterize_masks(&m, &m.mean, 256, 256).unwrap();
        assert_eq!(mask.count(MASK_FACE), out.covered_pixels);
        for (i, &b) in mask.bits.iter().enumerate() {
            let px = &out.frame.rgb[3 * i..3 * i + 3];
            if b == 0 {
                assert_eq!(px, CLEAR_COLOR);
            }
            if px != CLEAR_COLOR {
                assert_ne!(b & MASK_FACE, 0);
            }
            if b & MASK_MOUTH != 0 {
                assert_ne!(b & MASK_FACE, 0);
            }
        }
        assert!(mask.count(MASK_MOUTH) > 0);
    }

    #[test]
    fn deterministic() {
        let m = make_synthetic_model(3, 500).unwrap();
        let v = m.eval_mesh(&ExprCoeffs([0.4; 30]));
        assert_eq!(render_preview(&m, &v, 64, 48).unwrap(), render_preview(&m, &v, 64, 48).unwrap());
    }

    #[test]
    fn off_screen_is_degenerate() {
        let m = make_synthetic_model(3, 500).unwrap();
        let moved: Vec<f64> = m.mean.iter().enumerate().map(|(i, &x)| if i % 3 == 0 { x + 5.0 } else { x }).collect();
        let out = render_preview(&m, &moved, 32, 32).unwrap();
        assert!(out.is_degenerate());
        assert_eq!(out.frame, Frame::filled(32, 32, CLEAR_COLOR));
        assert_eq!(rasterize_masks(&m, &moved, 32, 32).unwrap().count(MASK_FACE), 0);
    }

    #[test]
    fn size_and_shape_errors() {
        let m = make_synthetic_model(3, 100).unwrap();
        assert!(matches!(render_preview(&m, &m.mean, 15, 32), Err(FaceError::RenderSize(15, 32))));
        assert!(matches!(render_preview(&m, &m.mean[3..], 32, 32), Err(FaceError::VertexCount { .. })));
    }

    #[test]
    fn nearer_triangle_wins_and_ties_keep_first() {
        // Two full-view triangles: a far one first, a near one second.
        let v = vec![
            -2.0, -2.0, 0.0, 4.0, -2.0, 0.0, -2.0, 4.0, 0.0, // far
            -2.0, -2.0, 1.0, 4.0, -2.0, 1.0, -2.0, 4.0, 1.0, // near
        ];
        let m = tri_model(v.clone(), vec![[0, 1, 2], [3, 4, 5]], vec![3, 4, 5]);
        let out = render_preview(&m, &v, 16, 16).unwrap();
        let near = shade(LIP_COLOR, [&v[9..12], &v[12..15], &v[15..18]]);
        assert!(out.frame.rgb.chunks(3).all(|p| p == near));
        // Equal depth, reversed winding for the second: the first stays.
        let v2 = vec![-2.0, -2.0, 0.0, 4.0, -2.0, 0.0, -2.0, 4.0, 0.0];
        let m2 = tri_model(v2.clone(), vec![[0, 1, 2], [0, 2, 1]], vec![]);
        let out2 = render_preview(&m2, &v2, 16, 16).unwrap();
        assert_eq!(out2.frame.pixel(3, 3), shade(SKIN_COLOR, [&v2[0..3], &v2[3..6], &v2[6..9]]));
    }

    #[test]
    fn half_plane_coverage_is_exact() {
        // Triangle whose hypotenuse passes through pixel centers: inclusive edges.
        let v = vec![-1.0, 1.0, 0.0, 1.0, -1.0, 0.0, -1.0, -1.0, 0.0];
        let m = tri_model(v.clone(), vec![[0, 1, 2]], vec![]);
        let mask = rasterize_masks(&m, &v, 16, 16).unwrap();
        // Screen: (0,0), (16,16), (0,16); covered iff center y >= center x.
        let mut expect = 0;
        for iy in 0..16 {
            for ix in 0..16 {
                let on = iy >= ix;
                expect += on as usize;
                assert_eq!(mask.bits[iy * 16 + ix] != 0, on, "{ix},{iy}");
            }
        }
        assert_eq!(mask.count(MASK_FACE), expect);
    }

    #[test]
    fn zero_area_skipped() {
        let v = vec![-1.0, -1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0];
        let m = tri_model(v.clone(), vec![[0, 1, 2]], vec![]);
        assert!(render_preview(&m, &v, 16, 16).unwrap().is_degenerate());
    }
}
