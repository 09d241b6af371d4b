use dfm_core::face3d::{make_synthetic_model, rasterize_masks, render_preview, BlendshapeModel, MASK_FACE, MASK_MOUTH};
use dfm_core::{ExprCoeffs, EXPR_DIM};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_coeffs(rng: &mut ChaCha8Rng, scale: f64) -> ExprCoeffs {
    let mut e = ExprCoeffs::zeros();
    e.0.iter_mut().for_each(|x| *x = scale * (2.0 * rng.random::<f64>() - 1.0));
    e
}

#[test]
fn eval_mesh_matches_naive_matvec() {
    let m = make_synthetic_model(11, 300).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n3 = m.mean.len();
    for _ in 0..5 {
        let e = random_coeffs(&mut rng, 2.0);
        let v = m.eval_mesh(&e);
        for (k, &vk) in v.iter().enumerate() {
            let mut acc = m.mean[k];
            for j in 0..EXPR_DIM {
                acc += m.basis[j * n3 + k] * e.0[j];
            }
            assert!((vk - acc).abs() < 1e-12);
        }
    }
}

#[test]
fn mesh_is_linear() {
    let m = make_synthetic_model(12, 300).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (e1, e2) = (random_coeffs(&mut rng, 1.0), random_coeffs(&mut rng, 1.0));
    let mut sum = ExprCoeffs::zeros();
    for j in 0..EXPR_DIM {
        sum.0[j] = e1.0[j] + e2.0[j];
    }
    let (a, b, c) = (m.eval_mesh(&e1), m.eval_mesh(&e2), m.eval_mesh(&sum));
    for k in 0..a.len() {
        assert!((c[k] - (a[k] + b[k] - m.mean[k])).abs() < 1e-12);
    }
}

/// Point-in-triangle by signs of cross products, written independently of
/// the rasterizer's edge setup.
fn inside(p: [f64; 2], t: [[f64; 2]; 3]) -> bool {
    let cross = |a: [f64; 2], b: [f64; 2]| (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
    let area = (t[1][0] - t[0][0]) * (t[2][1] - t[0][1]) - (t[1][1] - t[0][1]) * (t[2][0] - t[0][0]);
    if area == 0.0 {
        return false;
    }
    let s = [cross(t[1], t[2]), cross(t[2], t[0]), cross(t[0], t[1])];
    if area > 0.0 {
        s.iter().all(|&x| x >= 0.0)
    } else {
        s.iter().all(|&x| x <= 0.0)
    }
}

fn brute_force_counts(m: &BlendshapeModel, v: &[f64], w: usize, h: usize) -> (usize, usize) {
    let proj = |i: u32| {
        let i = i as usize;
        [(v[3 * i] + 1.0) * 0.5 * w as f64, (1.0 - v[3 * i + 1]) * 0.5 * h as f64]
    };
    let tris: Vec<([[f64; 2]; 3], bool)> = m
        .triangles
        .iter()
        .enumerate()
        .map(|(ti, t)| ([proj(t[0]), proj(t[1]), proj(t[2])], m.is_mouth_triangle(ti)))
        .collect();
    let (mut face, mut mouth) = (0, 0);
    for iy in 0..h {
        for ix in 0..w {
            let p = [ix as f64 + 0.5, iy as f64 + 0.5];
            let hit: Vec<bool> = tris.iter().filter(|(t, _)| inside(p, *t)).map(|(_, m)| *m).collect();
            face += !hit.is_empty() as usize;
            mouth += hit.iter().any(|&x| x) as usize;
        }
    }
    (face, mouth)
}

#[test]
fn mask_counts_match_brute_force() {
    let m = make_synthetic_model(5, 900).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for scale in [0.0, 1.5] {
        let v = m.eval_mesh(&random_coeffs(&mut rng, scale));
        let mask = rasterize_masks(&m, &v, 64, 64).unwrap();
        let (face, mouth) = brute_force_counts(&m, &v, 64, 64);
        assert_eq!(mask.count(MASK_FACE), face);
        assert_eq!(mask.count(MASK_MOUTH), mouth);
        assert!(mask.bits.iter().all(|&b| b & MASK_MOUTH == 0 || b & MASK_FACE != 0));
    }
}

#[test]
fn preview_pixels_lie_in_face_mask() {
    let m = make_synthetic_model(5, 900).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let v = m.eval_mesh(&random_coeffs(&mut rng, 2.0));
    let out = render_preview(&m, &v, 80, 60).unwrap();
    let mask = rasterize_masks(&m, &v, 80, 60).unwrap();
    for (i, px) in out.frame.rgb.chunks(3).enumerate() {
        if px != dfm_core::face3d::CLEAR_COLOR {
            assert_ne!(mask.bits[i] & MASK_FACE, 0);
        }
    }
    assert_eq!(out.covered_pixels, mask.count(MASK_FACE));
}

#[test]
fn model_file_round_trip() {
    let m = make_synthetic_model(4, 200).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.dfm3");
    m.save(&p).unwrap();
    let back = BlendshapeModel::load(&p).unwrap();
    assert_eq!(back.n_vertices(), m.n_vertices());
    assert_eq!(back.triangles, m.triangles);
    let size = std::fs::metadata(&p).unwrap().len() as usize;
    let n = m.n_vertices();
    assert_eq!(size, 12 + 4 * 3 * n * 31 + 4 + 12 * m.triangles.len() + 4 + 4 * m.mouth_vertices.len());
}
