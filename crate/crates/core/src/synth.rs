//! Seeded synthetic data: a smooth reference map from valence-arousal to
//! expression coefficients, datasets sampled from it, and synthetic
//! "subjects" (a video-like sequence of frames following a smooth VA orbit).
//!
//! The reference map is a per-dimension mixture of three plane waves:
//!
//! ```text
//! e_j(v, a) = sum_{m=0..3} amp_jm * sin(freq_jm * (cos(dir_jm) * v + sin(dir_jm) * a) + phase_jm)
//! ```
//!
//! Parameters are drawn from `ChaCha8Rng::seed_from_u64(seed)` in the order
//! `j = 0..30`, `m = 0..3`, and within a term `amp, freq, dir, phase`, each
//! as `lo + (hi - lo) * u` with `u = rng.random::<f64>()` and ranges
//! `amp in [0.3, 1.0)`, `freq in [0.5, 3.0)`, `dir, phase in [0, 2pi)`.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::{ExprCoeffs, ExprSample, ExpressionDataset, VaPoint, EXPR_DIM};
use crate::decoder::{DecoderError, ExpressionDecoder};
use crate::semantics::bspline::BSplineCurve;

pub const TERMS_PER_DIM: usize = 3;

/// Samples per synthetic video id in [`synth_dataset`].
const FRAMES_PER_VIDEO: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveTerm {
    pub amp: f64,
    pub freq: f64,
    pub dir: f64,
    pub phase: f64,
}

/// The seeded reference map `VA -> ExprCoeffs`.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthOracle {
    pub terms: [[WaveTerm; TERMS_PER_DIM]; EXPR_DIM],
}

impl SynthOracle {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut u = |lo: f64, hi: f64| lo + (hi - lo) * rng.random::<f64>();
        let terms = std::array::from_fn(|_| {
            std::array::from_fn(|_| WaveTerm {
                amp: u(0.3, 1.0),
                freq: u(0.5, 3.0),
                dir: u(0.0, TAU),
                phase: u(0.0, TAU),
            })
        });
        Self { terms }
    }

    pub fn eval(&self, va: VaPoint) -> ExprCoeffs {
        let mut e = ExprCoeffs::zeros();
        for (j, dim) in self.terms.iter().enumerate() {
            e.0[j] = dim
                .iter()
                .map(|t| t.amp * (t.freq * (t.dir.cos() * va.valence + t.dir.sin() * va.arousal) + t.phase).sin())
                .sum();
        }
        e
    }
}

impl ExpressionDecoder for SynthOracle {
    fn decode(&self, va: VaPoint) -> Result<ExprCoeffs, DecoderError> {
        Ok(self.eval(va))
    }
}

/// Independent stream for everything except the oracle parameters.
fn sample_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn uniform_disk(rng: &mut impl Rng, radius: f64) -> VaPoint {
    let r = radius * rng.random::<f64>().sqrt();
    let th = TAU * rng.random::<f64>();
    VaPoint::new(r * th.cos(), r * th.sin())
}

/// `n_samples` pairs with VA uniform on the unit disk and
/// `expr = oracle(va) + N(0, noise_std^2)` per coefficient.
pub fn synth_dataset(oracle_seed: u64, n_samples: usize, noise_std: f64) -> ExpressionDataset {
    let oracle = SynthOracle::new(oracle_seed);
    let mut rng = sample_rng(oracle_seed, 1);
    let noise = Normal::new(0.0, noise_std.max(0.0)).expect("finite std");
    let samples = (0..n_samples)
        .map(|i| {
            let va = uniform_disk(&mut rng, 1.0);
            let mut expr = oracle.eval(va);
            if noise_std > 0.0 {
                expr.0.iter_mut().for_each(|x| *x += noise.sample(&mut rng));
            }
            ExprSample {
                video_id: format!("synth-{oracle_seed}-{}", i / FRAMES_PER_VIDEO),
                frame_idx: (i % FRAMES_PER_VIDEO) as u64,
                va,
                expr,
            }
        })
        .collect();
    ExpressionDataset::new(samples)
}

/// A synthetic subject video: `n_frames` frames whose VA follows an
/// interpolating spline through one random keypoint per `frames_per_key`
/// frames (inside radius 0.85), with noiseless ground-truth coefficients
/// `oracle(va)`. All frames share the video id `"subject"`.
pub fn synth_subject(oracle_seed: u64, n_frames: usize, frames_per_key: usize) -> ExpressionDataset {
    let oracle = SynthOracle::new(oracle_seed);
    let mut rng = sample_rng(oracle_seed, 2);
    let keys = (n_frames.div_ceil(frames_per_key.max(1)) + 1).max(2);
    let pts: Vec<[f64; 2]> = (0..keys).map(|_| uniform_disk(&mut rng, 0.85).into()).collect();
    let curve = BSplineCurve::interpolate(&pts).expect("non-empty keypoints");
    let samples = (0..n_frames)
        .map(|f| {
            let t = if n_frames > 1 { f as f64 / (n_frames - 1) as f64 } else { 0.0 };
            let [v, a] = curve.eval(t);
            let va = VaPoint::new(v.clamp(-1.0, 1.0), a.clamp(-1.0, 1.0));
            ExprSample {
                video_id: "subject".into(),
                frame_idx: f as u64,
                va,
                expr: oracle.eval(va),
            }
        })
        .collect();
    ExpressionDataset::new(samples)
}
