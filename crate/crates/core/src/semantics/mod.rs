//! From semantic edits to coefficient tracks.
//!
//! An edit names an emotion label and intensity; the label/intensity pair
//! selects a region of the valence-arousal plane, random keypoints are drawn
//! inside it, an interpolating B-spline turns them into one VA point per
//! frame, the decoder maps each point to coefficients, and a Whittaker
//! smoother removes frame-to-frame jitter.

pub mod bspline;
pub mod smooth;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ExprCoeffs, VaPoint, EXPR_DIM};
use crate::decoder::{decode_track, DecoderError, ExpressionDecoder};
use crate::par;
use bspline::BSplineCurve;
use smooth::WhittakerSmoother;

pub const DEFAULT_FPS: f64 = 30.0;
pub const DEFAULT_RAMP_FRAMES: usize = 20;
pub const DEFAULT_LAMBDA: f64 = 5.0;
pub const DEFAULT_KEYPOINTS_PER_SECOND: f64 = 1.0;

/// Rejection-sampling attempts per requested point before giving up.
const MAX_ATTEMPTS_PER_POINT: usize = 100_000;

#[derive(Debug, Error)]
pub enum SemanticsError {
    #[error("label {0} takes no intensity")]
    IntensityWithNeutral(EmotionLabel),
    #[error("label {0} requires an intensity")]
    MissingIntensity(EmotionLabel),
    #[error("no region configured for {0}")]
    MissingRegion(String),
    #[error("invalid region {key}: {reason}")]
    InvalidRegion { key: String, reason: String },
    #[error("keypoint count must be >= 1")]
    NoKeypoints,
    #[error("frame count must be >= 1")]
    NoFrames,
    #[error("rejection sampling failed to find points in region")]
    SamplingFailed,
    #[error("track lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("unknown {kind} '{value}'")]
    Unknown { kind: &'static str, value: String },
    #[error(transparent)]
    Decoder(#[from] DecoderError),
    #[error("region table io: {0}")]
    Io(#[from] std::io::Error),
    #[error("region table json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmotionLabel {
    Neutral,
    Happy,
    Sad,
    Surprise,
    Fear,
}

impl EmotionLabel {
    pub const ALL: [EmotionLabel; 5] = [Self::Neutral, Self::Happy, Self::Sad, Self::Surprise, Self::Fear];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Neutral => "neutral",
            Self::Happy => "happy",
            Self::Sad => "sad",
            Self::Surprise => "surprise",
            Self::Fear => "fear",
        }
    }

    pub fn takes_intensity(&self) -> bool {
        *self != Self::Neutral
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EmotionLabel {
    type Err = SemanticsError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| SemanticsError::Unknown { kind: "label", value: s.into() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Intensity {
    Low,
    Medium,
    High,
}

impl Intensity {
    pub const ALL: [Intensity; 3] = [Self::Low, Self::Medium, Self::High];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Low => "low",
            Self::Medium => "medium",
            Self::High => "high",
        }
    }
}

impl fmt::Display for Intensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Intensity {
    type Err = SemanticsError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| SemanticsError::Unknown { kind: "intensity", value: s.into() })
    }
}

/// Region-table key: `"neutral"` or `"<label>/<intensity>"`.
pub fn region_key(label: EmotionLabel, intensity: Option<Intensity>) -> String {
    match intensity {
        None => label.to_string(),
        Some(i) => format!("{label}/{i}"),
    }
}

/// A region of the VA plane. Angles are degrees counter-clockwise from the
/// +valence axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VaRegion {
    Disk {
        radius: f64,
    },
    AnnularSector {
        angle_min: f64,
        angle_max: f64,
        radius_min: f64,
        radius_max: f64,
    },
}

impl VaRegion {
    pub fn sector(angle_min: f64, angle_max: f64, radius_min: f64, radius_max: f64) -> Self {
        Self::AnnularSector {
            angle_min,
            angle_max,
            radius_min,
            radius_max,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match *self {
            Self::Disk { radius } => {
                if !(radius > 0.0 && radius <= 1.0) {
                    return Err(format!("disk radius {radius} not in (0, 1]"));
                }
            }
            Self::AnnularSector {
                angle_min,
                angle_max,
                radius_min,
                radius_max,
            } => {
                if !(radius_min >= 0.0 && radius_min < radius_max && radius_max <= 1.0) {
                    return Err(format!("radii [{radius_min}, {radius_max}] violate 0 <= min < max <= 1"));
                }
                let span = angle_max - angle_min;
                if !(span > 0.0 && span < 180.0) {
                    return Err(format!("angle span {span} not in (0, 180)"));
                }
            }
        }
        Ok(())
    }

    /// Exact polar membership test (boundaries inclusive).
    pub fn contains(&self, p: VaPoint) -> bool {
        let r = p.radius();
        match *self {
            Self::Disk { radius } => r <= radius,
            Self::AnnularSector {
                angle_min,
                angle_max,
                radius_min,
                radius_max,
            } => {
                if r < radius_min || r > radius_max {
                    return false;
                }
                let delta = (p.angle_deg() - angle_min).rem_euclid(360.0);
                delta <= angle_max - angle_min
            }
        }
    }

    /// Axis-aligned box `[vmin, vmax] x [amin, amax]` enclosing the region.
    pub fn bounding_box(&self) -> [f64; 4] {
        match *self {
            Self::Disk { radius } => [-radius, radius, -radius, radius],
            Self::AnnularSector {
                angle_min,
                angle_max,
                radius_min,
                radius_max,
            } => {
                let polar = |r: f64, deg: f64| {
                    let t = deg.to_radians();
                    [r * t.cos(), r * t.sin()]
                };
                let mut pts = vec![
                    polar(radius_min, angle_min),
                    polar(radius_min, angle_max),
                    polar(radius_max, angle_min),
                    polar(radius_max, angle_max),
                ];
                let mut axis = (angle_min / 90.0).ceil() * 90.0;
                while axis <= angle_max {
                    pts.push(polar(radius_max, axis));
                    axis += 90.0;
                }
                let mut bb = [f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY];
                for [x, y] in pts {
                    bb[0] = bb[0].min(x);
                    bb[1] = bb[1].max(x);
                    bb[2] = bb[2].min(y);
                    bb[3] = bb[3].max(y);
                }
                bb
            }
        }
    }
}

/// Label/intensity to region mapping; serialized as a JSON object keyed by
/// [`region_key`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RegionTable {
    pub regions: BTreeMap<String, VaRegion>,
}

impl Default for RegionTable {
    fn default() -> Self {
        let bands = [
            (Intensity::Low, 0.20, 0.40),
            (Intensity::Medium, 0.40, 0.65),
            (Intensity::High, 0.65, 0.90),
        ];
        let sectors = [
            (EmotionLabel::Happy, 10.0, 50.0),
            (EmotionLabel::Surprise, 70.0, 110.0),
            (EmotionLabel::Fear, 110.0, 150.0),
            (EmotionLabel::Sad, 185.0, 225.0),
        ];
        let mut regions = BTreeMap::new();
        regions.insert(region_key(EmotionLabel::Neutral, None), VaRegion::Disk { radius: 0.15 });
        for (label, a0, a1) in sectors {
            for (intensity, r0, r1) in bands {
                regions.insert(region_key(label, Some(intensity)), VaRegion::sector(a0, a1, r0, r1));
            }
        }
        Self { regions }
    }
}

impl RegionTable {
    pub fn validate(&self) -> Result<(), SemanticsError> {
        for (key, r) in &self.regions {
            r.validate().map_err(|reason| SemanticsError::InvalidRegion { key: key.clone(), reason })?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SemanticsError> {
        let t: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        t.validate()?;
        Ok(t)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SemanticsError> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    /// Region for a label; intensity must be given exactly when the label is not neutral.
    pub fn region_for(&self, label: EmotionLabel, intensity: Option<Intensity>) -> Result<&VaRegion, SemanticsError> {
        check_intensity(label, intensity)?;
        let key = region_key(label, intensity);
        self.regions.get(&key).ok_or(SemanticsError::MissingRegion(key))
    }
}

pub fn check_intensity(label: EmotionLabel, intensity: Option<Intensity>) -> Result<(), SemanticsError> {
    match (label.takes_intensity(), intensity) {
        (false, Some(_)) => Err(SemanticsError::IntensityWithNeutral(label)),
        (true, None) => Err(SemanticsError::MissingIntensity(label)),
        _ => Ok(()),
    }
}

/// Region lookup in the default table.
pub fn region_for(label: EmotionLabel, intensity: Option<Intensity>) -> Result<VaRegion, SemanticsError> {
    RegionTable::default().region_for(label, intensity).cloned()
}

/// `k` points uniform in `region`, by rejection sampling in its bounding box.
pub fn sample_keypoints(region: &VaRegion, k: usize, seed: u64) -> Result<Vec<VaPoint>, SemanticsError> {
    if k < 1 {
        return Err(SemanticsError::NoKeypoints);
    }
    let [v0, v1, a0, a1] = region.bounding_box();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(k);
    let mut attempts = 0usize;
    while out.len() < k {
        if attempts >= MAX_ATTEMPTS_PER_POINT * k {
            return Err(SemanticsError::SamplingFailed);
        }
        attempts += 1;
        let p = VaPoint::new(rng.random_range(v0..=v1), rng.random_range(a0..=a1));
        if region.contains(p) {
            out.push(p);
        }
    }
    Ok(out)
}

/// One VA point per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaTrajectory {
    pub points: Vec<VaPoint>,
    pub fps: f64,
}

impl VaTrajectory {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// One coefficient vector per frame.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CoeffTrack {
    pub frames: Vec<ExprCoeffs>,
}

impl CoeffTrack {
    pub fn zeros(n: usize) -> Self {
        Self {
            frames: vec![ExprCoeffs::zeros(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Values of coefficient `dim` over time.
    pub fn column(&self, dim: usize) -> Vec<f64> {
        self.frames.iter().map(|f| f.0[dim]).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.frames.iter().all(|f| f.0.iter().all(|x| x.is_finite()))
    }
}

/// Evaluates the interpolating B-spline through `keypoints` (equally spaced
/// in time) at `n_frames` uniform parameters. Coordinates are clamped into
/// [-1, 1] so overshoot near the circumplex rim stays in range.
pub fn bspline_trajectory(keypoints: &[VaPoint], n_frames: usize) -> Result<VaTrajectory, SemanticsError> {
    if keypoints.is_empty() {
        return Err(SemanticsError::NoKeypoints);
    }
    if n_frames == 0 {
        return Err(SemanticsError::NoFrames);
    }
    let pts: Vec<[f64; 2]> = keypoints.iter().map(|&p| p.into()).collect();
    let curve = BSplineCurve::interpolate(&pts).map_err(|_| SemanticsError::NoKeypoints)?;
    let points = (0..n_frames)
        .map(|f| {
            let t = if n_frames > 1 { f as f64 / (n_frames - 1) as f64 } else { 0.0 };
            let [v, a] = curve.eval(t);
            VaPoint::new(v.clamp(-1.0, 1.0), a.clamp(-1.0, 1.0))
        })
        .collect();
    Ok(VaTrajectory {
        points,
        fps: DEFAULT_FPS,
    })
}

/// Blend weight of frame `i` in a window of `len` frames with `ramp`-frame
/// linear ramps at both ends (after shortening to `len / 2`).
pub fn ramp_weight(i: usize, len: usize, ramp: usize) -> f64 {
    let ramp = ramp.min(len / 2);
    if ramp == 0 {
        return 1.0;
    }
    if i < ramp {
        i as f64 / ramp as f64
    } else if i + ramp >= len {
        (len - 1 - i) as f64 / ramp as f64
    } else {
        1.0
    }
}

/// `out[i] = (1 - w(i)) * base[i] + w(i) * edit[i]` with [`ramp_weight`].
pub fn blend_transition(base: &CoeffTrack, edit: &CoeffTrack, ramp_frames: usize) -> Result<CoeffTrack, SemanticsError> {
    if base.len() != edit.len() {
        return Err(SemanticsError::LengthMismatch(base.len(), edit.len()));
    }
    let len = base.len();
    let frames = base
        .frames
        .iter()
        .zip(&edit.frames)
        .enumerate()
        .map(|(i, (b, e))| {
            let w = ramp_weight(i, len, ramp_frames);
            // Exact copies at the ends of the ramp (keeps signed zeros).
            if w == 0.0 {
                return *b;
            }
            if w == 1.0 {
                return *e;
            }
            let mut out = ExprCoeffs::zeros();
            for d in 0..EXPR_DIM {
                out.0[d] = (1.0 - w) * b.0[d] + w * e.0[d];
            }
            out
        })
        .collect();
    Ok(CoeffTrack { frames })
}

/// Whittaker-smooths every coefficient dimension independently.
pub fn smooth_track(track: &CoeffTrack, lambda: f64) -> CoeffTrack {
    let n = track.len();
    if lambda <= 0.0 || n < 3 {
        return track.clone();
    }
    let solver = WhittakerSmoother::new(n, lambda);
    let columns = par::map_range(EXPR_DIM, |d| solver.smooth(&track.column(d)));
    let mut out = track.clone();
    for (d, col) in columns.iter().enumerate() {
        for (f, &x) in out.frames.iter_mut().zip(col) {
            f.0[d] = x;
        }
    }
    out
}

/// Knobs for turning an edit into a track.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompileConfig {
    pub keypoints_per_second: f64,
    pub ramp_frames: usize,
    pub lambda: f64,
    pub fps: f64,
}

impl Default for CompileConfig {
    fn default() -> Self {
        Self {
            keypoints_per_second: DEFAULT_KEYPOINTS_PER_SECOND,
            ramp_frames: DEFAULT_RAMP_FRAMES,
            lambda: DEFAULT_LAMBDA,
            fps: DEFAULT_FPS,
        }
    }
}

impl CompileConfig {
    /// `max(2, ceil(seconds * keypoints_per_second))`.
    pub fn keypoint_count(&self, n_frames: usize) -> usize {
        let secs = n_frames as f64 / self.fps;
        ((secs * self.keypoints_per_second).ceil() as usize).max(2)
    }
}

/// What [`compile_edit`] needs from an edit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EditSpec {
    pub label: EmotionLabel,
    pub intensity: Option<Intensity>,
    pub n_frames: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompiledEdit {
    pub trajectory: VaTrajectory,
    pub track: CoeffTrack,
}

/// region -> keypoints -> B-spline trajectory -> decoder -> smoothing.
pub fn compile_edit<D: ExpressionDecoder + ?Sized>(
    edit: &EditSpec,
    decoder: &D,
    regions: &RegionTable,
    cfg: &CompileConfig,
) -> Result<CompiledEdit, SemanticsError> {
    let region = regions.region_for(edit.label, edit.intensity)?;
    let keys = sample_keypoints(region, cfg.keypoint_count(edit.n_frames), edit.seed)?;
    let mut trajectory = bspline_trajectory(&keys, edit.n_frames)?;
    trajectory.fps = cfg.fps;
    let raw = decode_track(decoder, &trajectory)?;
    Ok(CompiledEdit {
        track: smooth_track(&raw, cfg.lambda),
        trajectory,
    })
}
