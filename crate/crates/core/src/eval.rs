//! Average pixel distance metrics and the self-reenactment protocols.
//!
//! The distance between two pixels is the Euclidean norm of their RGB
//! difference in 8-bit units. Each frame contributes the mean distance over
//! the pixels it is evaluated on; a sequence's score is the mean of its frame
//! scores. All three metrics share the same per-frame sums and combine them
//! in frame order, so a full mask reproduces the unmasked value exactly.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{split_dataset, DatasetError, ExpressionDataset, SplitMode};
use crate::decoder::{decode_track, DecoderError, ExpressionDecoder};
use crate::face3d::{render_with_masks, BlendshapeModel, FaceError, Frame, MaskFrame, MASK_FACE, MASK_MOUTH};
use crate::par;
use crate::semantics::{smooth_track, CoeffTrack, VaTrajectory, DEFAULT_FPS, DEFAULT_LAMBDA};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("sequence lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("frame {index} dimensions differ: {a:?} vs {b:?}")]
    DimensionMismatch { index: usize, a: (usize, usize), b: (usize, usize) },
    #[error("empty sequence")]
    Empty,
    #[error("all {0} masks are empty")]
    AllMasksEmpty(usize),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Decoder(#[from] DecoderError),
    #[error(transparent)]
    Face(#[from] FaceError),
}

/// Which mask bit restricts a masked metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskKind {
    Face,
    Mouth,
}

impl MaskKind {
    pub fn bit(self) -> u8 {
        match self {
            Self::Face => MASK_FACE,
            Self::Mouth => MASK_MOUTH,
        }
    }
}

#[inline]
fn pixel_distance(a: &[u8], b: &[u8]) -> f64 {
    let d = |i: usize| a[i] as f64 - b[i] as f64;
    (d(0) * d(0) + d(1) * d(1) + d(2) * d(2)).sqrt()
}

/// Distance sums of one frame pair: over all pixels, face pixels and mouth
/// pixels, with the pixel counts of each.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FrameSums {
    pub all: (f64, usize),
    pub face: (f64, usize),
    pub mouth: (f64, usize),
}

pub fn frame_sums(a: &Frame, b: &Frame, mask: Option<&MaskFrame>) -> FrameSums {
    let mut s = FrameSums::default();
    for (i, (pa, pb)) in a.rgb.chunks_exact(3).zip(b.rgb.chunks_exact(3)).enumerate() {
        let d = pixel_distance(pa, pb);
        s.all.0 += d;
        s.all.1 += 1;
        if let Some(m) = mask {
            let bits = m.bits[i];
            if bits & MASK_FACE != 0 {
                s.face.0 += d;
                s.face.1 += 1;
            }
            if bits & MASK_MOUTH != 0 {
                s.mouth.0 += d;
                s.mouth.1 += 1;
            }
        }
    }
    s
}

fn check_pair(a: &[Frame], b: &[Frame]) -> Result<(), EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(EvalError::Empty);
    }
    for (i, (fa, fb)) in a.iter().zip(b).enumerate() {
        if (fa.width, fa.height) != (fb.width, fb.height) || fa.rgb.len() != fb.rgb.len() {
            return Err(EvalError::DimensionMismatch {
                index: i,
                a: (fa.width, fa.height),
                b: (fb.width, fb.height),
            });
        }
    }
    Ok(())
}

/// Mean over frames of per-frame means; frames with zero pixels are skipped.
fn mean_of_means(per_frame: impl Iterator<Item = (f64, usize)>) -> (f64, usize, usize) {
    let (mut total, mut used, mut skipped) = (0.0, 0usize, 0usize);
    for (sum, n) in per_frame {
        if n == 0 {
            skipped += 1;
        } else {
            total += sum / n as f64;
            used += 1;
        }
    }
    (if used > 0 { total / used as f64 } else { f64::NAN }, used, skipped)
}

/// Average pixel distance between two frame sequences.
pub fn apd(a: &[Frame], b: &[Frame]) -> Result<f64, EvalError> {
    check_pair(a, b)?;
    let sums = par::map_range(a.len(), |i| frame_sums(&a[i], &b[i], None));
    Ok(mean_of_means(sums.iter().map(|s| s.all)).0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskedApd {
    pub value: f64,
    pub frames_used: usize,
    pub frames_skipped: usize,
}

/// APD restricted to pixels carrying the `which` bit. Frames whose mask has
/// no such pixel are skipped and counted.
pub fn masked_apd(a: &[Frame], b: &[Frame], masks: &[MaskFrame], which: MaskKind) -> Result<MaskedApd, EvalError> {
    check_pair(a, b)?;
    if masks.len() != a.len() {
        return Err(EvalError::LengthMismatch(a.len(), masks.len()));
    }
    for (i, (m, f)) in masks.iter().zip(a).enumerate() {
        if m.bits.len() != f.width * f.height {
            return Err(EvalError::DimensionMismatch {
                index: i,
                a: (f.width, f.height),
                b: (m.width, m.height),
            });
        }
    }
    let sums = par::map_range(a.len(), |i| frame_sums(&a[i], &b[i], Some(&masks[i])));
    let (value, frames_used, frames_skipped) = mean_of_means(sums.iter().map(|s| match which {
        MaskKind::Face => s.face,
        MaskKind::Mouth => s.mouth,
    }));
    if frames_used == 0 {
        return Err(EvalError::AllMasksEmpty(a.len()));
    }
    Ok(MaskedApd {
        value,
        frames_used,
        frames_skipped,
    })
}

/// One metric triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub apd: f64,
    pub face_apd: f64,
    pub mouth_apd: f64,
    pub frames_evaluated: usize,
    #[serde(default)]
    pub face_frames_skipped: usize,
    #[serde(default)]
    pub mouth_frames_skipped: usize,
}

impl MetricsReport {
    /// Combines per-frame sums in order.
    pub fn from_sums(sums: &[FrameSums]) -> Result<Self, EvalError> {
        if sums.is_empty() {
            return Err(EvalError::Empty);
        }
        let (apd, n, _) = mean_of_means(sums.iter().map(|s| s.all));
        let (face_apd, face_used, face_frames_skipped) = mean_of_means(sums.iter().map(|s| s.face));
        let (mouth_apd, mouth_used, mouth_frames_skipped) = mean_of_means(sums.iter().map(|s| s.mouth));
        if face_used == 0 || mouth_used == 0 {
            return Err(EvalError::AllMasksEmpty(sums.len()));
        }
        Ok(Self {
            apd,
            face_apd,
            mouth_apd,
            frames_evaluated: n,
            face_frames_skipped,
            mouth_frames_skipped,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub width: usize,
    pub height: usize,
    /// Smoothing applied to both driven tracks.
    pub lambda: f64,
    pub train_fraction: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            width: 128,
            height: 128,
            lambda: DEFAULT_LAMBDA,
            train_fraction: 0.7,
        }
    }
}

/// Type A (ground-truth coefficients) and type B (coefficients decoded from
/// ground-truth VA) metrics over the held-out frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfReenactReport {
    pub type_a: MetricsReport,
    pub type_b: MetricsReport,
    pub test_frames: usize,
    pub width: usize,
    pub height: usize,
}

impl SelfReenactReport {
    /// Plain-text table with one row per protocol.
    pub fn table(&self) -> String {
        let mut s = format!("{:<28}{:>10}{:>10}{:>11}\n", "", "APD", "Face-APD", "Mouth-APD");
        for (name, r) in [("Self-reenactment (GT expr)", &self.type_a), ("Emotion self-reenactment", &self.type_b)] {
            s.push_str(&format!("{:<28}{:>10.3}{:>10.3}{:>11.3}\n", name, r.apd, r.face_apd, r.mouth_apd));
        }
        s
    }
}

/// Renders the held-out tail of `subject` three ways: from ground-truth
/// coefficients (reference), from smoothed ground-truth coefficients
/// (type A) and from smoothed decoder output on the ground-truth VA
/// (type B). Masks come from the reference mesh. Frames are processed one
/// at a time so memory stays bounded.
pub fn self_reenact_eval(
    subject: &ExpressionDataset,
    model: &BlendshapeModel,
    decoder: &dyn ExpressionDecoder,
    cfg: &EvalConfig,
) -> Result<SelfReenactReport, EvalError> {
    let (_, test) = split_dataset(subject, cfg.train_fraction, SplitMode::TemporalPrefix, 0)?;
    if test.is_empty() {
        return Err(EvalError::Empty);
    }
    let gt = CoeffTrack { frames: test.exprs() };
    let track_a = smooth_track(&gt, cfg.lambda);
    let traj = VaTrajectory {
        points: test.va_points(),
        fps: DEFAULT_FPS,
    };
    let track_b = smooth_track(&decode_track(decoder, &traj)?, cfg.lambda);
    let (w, h) = (cfg.width, cfg.height);
    let per_frame = par::map_range(test.len(), |i| -> Result<(FrameSums, FrameSums), EvalError> {
        let (reference, mask) = render_with_masks(model, &model.eval_mesh(&gt.frames[i]), w, h)?;
        let render = |e| crate::face3d::render_preview(model, &model.eval_mesh(e), w, h);
        let a = render(&track_a.frames[i])?;
        let b = render(&track_b.frames[i])?;
        Ok((
            frame_sums(&reference.frame, &a.frame, Some(&mask)),
            frame_sums(&reference.frame, &b.frame, Some(&mask)),
        ))
    });
    let mut sums_a = Vec::with_capacity(test.len());
    let mut sums_b = Vec::with_capacity(test.len());
    for r in per_frame {
        let (a, b) = r?;
        sums_a.push(a);
        sums_b.push(b);
    }
    Ok(SelfReenactReport {
        type_a: MetricsReport::from_sums(&sums_a)?,
        type_b: MetricsReport::from_sums(&sums_b)?,
        test_frames: test.len(),
        width: w,
        height: h,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::face3d::make_synthetic_model;
    use crate::synth::{synth_subject, SynthOracle};

    fn flat(w: usize, h: usize, c: [u8; 3]) -> Frame {
        Frame::filled(w, h, c)
    }

    #[test]
    fn identical_is_zero() {
        let a = vec![flat(4, 4, [10, 20, 30]), flat(4, 4, [0, 0, 0])];
        assert_eq!(apd(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn uniform_shift() {
        let a = vec![flat(5, 3, [100, 100, 100])];
        let b = vec![flat(5, 3, [110, 110, 110])];
        assert!((apd(&a, &b).unwrap() - 300f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn single_axis_pixel() {
        let a = vec![flat(1, 1, [0, 0, 0])];
        let b = vec![flat(1, 1, [255, 0, 0])];
        assert_eq!(apd(&a, &b).unwrap(), 255.0);
    }

    #[test]
    fn full_mask_equals_apd_exactly() {
        let a: Vec<Frame> = (0..3).map(|i| flat(6, 4, [i * 7, 3, 200])).collect();
        let mut b = a.clone();
        b[1].set_pixel(2, 2, [1, 2, 3]);
        b[2].set_pixel(0, 3, [250, 0, 9]);
        let masks = vec![MaskFrame::full(6, 4, MASK_FACE); 3];
        assert_eq!(masked_apd(&a, &b, &masks, MaskKind::Face).unwrap().value, apd(&a, &b).unwrap());
    }

    #[test]
    fn half_mask_doubles() {
        let a = vec![flat(4, 2, [0, 0, 0])];
        let mut b = a.clone();
        let mut m = MaskFrame::empty(4, 2);
        for x in 0..4 {
            b[0].set_pixel(x, 0, [30, 40, 0]);
            m.bits[x] = MASK_FACE;
        }
        let full = apd(&a, &b).unwrap();
        assert_eq!(full, 25.0);
        assert_eq!(masked_apd(&a, &b, &[m], MaskKind::Face).unwrap().value, 2.0 * full);
    }

    #[test]
    fn empty_masks_are_skipped_then_rejected() {
        let a = vec![flat(2, 2, [0, 0, 0]), flat(2, 2, [0, 0, 0])];
        let b = vec![flat(2, 2, [3, 4, 0]), flat(2, 2, [100, 0, 0])];
        let masks = vec![MaskFrame::full(2, 2, MASK_FACE), MaskFrame::empty(2, 2)];
        let r = masked_apd(&a, &b, &masks, MaskKind::Face).unwrap();
        assert_eq!((r.value, r.frames_used, r.frames_skipped), (5.0, 1, 1));
        assert!(matches!(
            masked_apd(&a, &b, &masks, MaskKind::Mouth),
            Err(EvalError::AllMasksEmpty(2))
        ));
    }

    #[test]
    fn mismatches() {
        let a = vec![flat(2, 2, [0; 3])];
        assert!(matches!(apd(&a, &[]), Err(EvalError::LengthMismatch(1, 0))));
        assert!(matches!(apd(&a, &[flat(3, 2, [0; 3])]), Err(EvalError::DimensionMismatch { .. })));
    }

    #[test]
    fn symmetric_and_scales() {
        let a = vec![flat(3, 3, [50, 60, 70])];
        let b = vec![flat(3, 3, [53, 56, 70])];
        let c = vec![flat(3, 3, [59, 48, 70])];
        assert_eq!(apd(&a, &b).unwrap(), apd(&b, &a).unwrap());
        assert!((apd(&a, &c).unwrap() - 3.0 * apd(&a, &b).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn type_a_without_smoothing_is_zero_and_oracle_b_matches_a() {
        let subject = synth_subject(6, 60, 15);
        let model = make_synthetic_model(6, 600).unwrap();
        let oracle = SynthOracle::new(6);
        let cfg = EvalConfig {
            width: 48,
            height: 48,
            lambda: 0.0,
            ..Default::default()
        };
        let r = self_reenact_eval(&subject, &model, &oracle, &cfg).unwrap();
        assert_eq!(r.test_frames, 18);
        assert_eq!((r.type_a.apd, r.type_a.face_apd, r.type_a.mouth_apd), (0.0, 0.0, 0.0));
        assert_eq!(r.type_b, r.type_a);
        let smoothed = self_reenact_eval(&subject, &model, &oracle, &EvalConfig { lambda: 5.0, ..cfg }).unwrap();
        assert!((smoothed.type_b.apd - smoothed.type_a.apd).abs() < 1e-9);
        assert!(r.table().contains("Mouth-APD"));
    }
}
