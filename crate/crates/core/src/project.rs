//! Timeline of edits over a video and its compilation into one track.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ExprCoeffs, EXPR_DIM};
use crate::decoder::ExpressionDecoder;
use crate::par;
use crate::semantics::{
    blend_transition, check_intensity, compile_edit, CoeffTrack, CompileConfig, EditSpec, EmotionLabel, Intensity,
    RegionTable, SemanticsError, VaTrajectory, DEFAULT_FPS,
};

pub const PROJECT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ProjectError {
    #[error("project invalid: {}", format_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("baseline has {found} frames, project has {expected}")]
    BaselineLength { expected: usize, found: usize },
    #[error("unsupported project schema version {0}")]
    Schema(u32),
    #[error("edit {index}: {source}")]
    Edit {
        index: usize,
        #[source]
        source: SemanticsError,
    },
    #[error("track line {line}: {message}")]
    TrackFormat { line: usize, message: String },
    #[error("track is missing frame {0}")]
    MissingFrame(usize),
    #[error("track io: {0}")]
    Io(#[from] std::io::Error),
    #[error("project json: {0}")]
    Json(#[from] serde_json::Error),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

/// One semantic manipulation over frames `[start_frame, end_frame)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edit {
    pub start_frame: usize,
    pub end_frame: usize,
    pub label: EmotionLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intensity: Option<Intensity>,
    #[serde(default)]
    pub seed: u64,
}

impl Edit {
    pub fn len(&self) -> usize {
        self.end_frame.saturating_sub(self.start_frame)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn default_schema() -> u32 {
    PROJECT_SCHEMA_VERSION
}

fn default_fps() -> f64 {
    DEFAULT_FPS
}

/// Project file contents. Paths are relative to the project file's directory
/// unless absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Project {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    #[serde(default = "default_fps")]
    pub fps: f64,
    pub n_frames: usize,
    #[serde(default)]
    pub edits: Vec<Edit>,
    /// Track JSONL to edit on top of; all zeros when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<PathBuf>,
    #[serde(default)]
    pub compile: CompileSettings,
    /// Replaces the default region table when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regions: Option<RegionTable>,
}

/// Compile knobs stored in the project; the frame rate comes from the project.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompileSettings {
    pub keypoints_per_second: f64,
    pub ramp_frames: usize,
    pub lambda: f64,
}

impl Default for CompileSettings {
    fn default() -> Self {
        let c = CompileConfig::default();
        Self {
            keypoints_per_second: c.keypoints_per_second,
            ramp_frames: c.ramp_frames,
            lambda: c.lambda,
        }
    }
}

impl Project {
    pub fn new(n_frames: usize) -> Self {
        Self {
            schema_version: PROJECT_SCHEMA_VERSION,
            fps: DEFAULT_FPS,
            n_frames,
            edits: Vec::new(),
            baseline: None,
            model: None,
            weights: None,
            compile: CompileSettings::default(),
            regions: None,
        }
    }

    pub fn compile_config(&self) -> CompileConfig {
        CompileConfig {
            keypoints_per_second: self.compile.keypoints_per_second,
            ramp_frames: self.compile.ramp_frames,
            lambda: self.compile.lambda,
            fps: self.fps,
        }
    }

    pub fn region_table(&self) -> RegionTable {
        self.regions.clone().unwrap_or_default()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ProjectError> {
        let p: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        if p.schema_version != PROJECT_SCHEMA_VERSION {
            return Err(ProjectError::Schema(p.schema_version));
        }
        Ok(p)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ProjectError> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        std::fs::write(path, s)?;
        Ok(())
    }

    /// `path` resolved against `base_dir` when relative.
    pub fn resolve(base_dir: &Path, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            base_dir.join(path)
        }
    }

    /// The baseline track: imported from [`Project::baseline`] or all zeros.
    pub fn load_baseline(&self, base_dir: &Path) -> Result<CoeffTrack, ProjectError> {
        let track = match &self.baseline {
            None => CoeffTrack::zeros(self.n_frames),
            Some(p) => import_baseline(Self::resolve(base_dir, p))?,
        };
        if track.len() != self.n_frames {
            return Err(ProjectError::BaselineLength {
                expected: self.n_frames,
                found: track.len(),
            });
        }
        Ok(track)
    }
}

/// A validation finding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    Overlap {
        first: usize,
        second: usize,
        first_range: [usize; 2],
        second_range: [usize; 2],
    },
    OutOfRange { edit: usize, range: [usize; 2], n_frames: usize },
    EmptyInterval { edit: usize, range: [usize; 2] },
    IntensityWithNeutral { edit: usize },
    MissingIntensity { edit: usize, label: EmotionLabel },
    MissingRegion { edit: usize, key: String },
    InvalidRegion { key: String, reason: String },
    InvalidFps { fps: f64 },
    InvalidCompile { reason: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Overlap {
                first,
                second,
                first_range: a,
                second_range: b,
            } => write!(f, "edit {first} [{}, {}) overlaps edit {second} [{}, {})", a[0], a[1], b[0], b[1]),
            Self::OutOfRange { edit, range, n_frames } => {
                write!(f, "edit {edit} [{}, {}) exceeds [0, {n_frames})", range[0], range[1])
            }
            Self::EmptyInterval { edit, range } => write!(f, "edit {edit} has empty interval [{}, {})", range[0], range[1]),
            Self::IntensityWithNeutral { edit } => write!(f, "edit {edit}: neutral takes no intensity"),
            Self::MissingIntensity { edit, label } => write!(f, "edit {edit}: {label} requires an intensity"),
            Self::MissingRegion { edit, key } => write!(f, "edit {edit}: no region for {key}"),
            Self::InvalidRegion { key, reason } => write!(f, "region {key}: {reason}"),
            Self::InvalidFps { fps } => write!(f, "fps {fps} must be positive"),
            Self::InvalidCompile { reason } => write!(f, "compile settings: {reason}"),
        }
    }
}

/// All findings; empty means valid.
pub fn validate_project(p: &Project) -> Vec<Violation> {
    let mut out = Vec::new();
    if !(p.fps.is_finite() && p.fps > 0.0) {
        out.push(Violation::InvalidFps { fps: p.fps });
    }
    let c = &p.compile;
    if !(c.lambda.is_finite() && c.lambda >= 0.0) {
        out.push(Violation::InvalidCompile {
            reason: format!("lambda {} must be finite and >= 0", c.lambda),
        });
    }
    if !(c.keypoints_per_second.is_finite() && c.keypoints_per_second > 0.0) {
        out.push(Violation::InvalidCompile {
            reason: format!("keypoints_per_second {} must be positive", c.keypoints_per_second),
        });
    }
    let table = p.region_table();
    for (key, r) in &table.regions {
        if let Err(reason) = r.validate() {
            out.push(Violation::InvalidRegion { key: key.clone(), reason });
        }
    }
    for (i, e) in p.edits.iter().enumerate() {
        let range = [e.start_frame, e.end_frame];
        if e.start_frame >= e.end_frame {
            out.push(Violation::EmptyInterval { edit: i, range });
        } else if e.end_frame > p.n_frames {
            out.push(Violation::OutOfRange {
                edit: i,
                range,
                n_frames: p.n_frames,
            });
        }
        match check_intensity(e.label, e.intensity) {
            Err(SemanticsError::IntensityWithNeutral(_)) => out.push(Violation::IntensityWithNeutral { edit: i }),
            Err(_) => out.push(Violation::MissingIntensity { edit: i, label: e.label }),
            Ok(()) => {
                if let Err(SemanticsError::MissingRegion(key)) = table.region_for(e.label, e.intensity) {
                    out.push(Violation::MissingRegion { edit: i, key });
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..p.edits.len()).filter(|&i| !p.edits[i].is_empty()).collect();
    order.sort_by_key(|&i| (p.edits[i].start_frame, i));
    let mut reported = HashSet::new();
    for (k, &i) in order.iter().enumerate() {
        for &j in &order[k + 1..] {
            let (a, b) = (&p.edits[i], &p.edits[j]);
            if b.start_frame >= a.end_frame {
                break;
            }
            let (first, second) = (i.min(j), i.max(j));
            if reported.insert((first, second)) {
                let (fa, fb) = (&p.edits[first], &p.edits[second]);
                out.push(Violation::Overlap {
                    first,
                    second,
                    first_range: [fa.start_frame, fa.end_frame],
                    second_range: [fb.start_frame, fb.end_frame],
                });
            }
        }
    }
    out
}

/// Where a compiled frame's coefficients came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameSource {
    Baseline,
    Edit(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditSegment {
    pub edit: usize,
    pub start_frame: usize,
    pub end_frame: usize,
    pub trajectory: VaTrajectory,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompileResult {
    pub track: CoeffTrack,
    pub segments: Vec<EditSegment>,
    pub provenance: Vec<FrameSource>,
}

/// Compiles every edit, cross-fades it against the matching baseline slice
/// and writes it into the baseline. Frames outside all edits are copied
/// from the baseline unchanged.
pub fn compile_project<D: ExpressionDecoder + ?Sized>(
    p: &Project,
    baseline: &CoeffTrack,
    decoder: &D,
) -> Result<CompileResult, ProjectError> {
    let violations = validate_project(p);
    if !violations.is_empty() {
        return Err(ProjectError::Invalid(violations));
    }
    if baseline.len() != p.n_frames {
        return Err(ProjectError::BaselineLength {
            expected: p.n_frames,
            found: baseline.len(),
        });
    }
    let cfg = p.compile_config();
    let table = p.region_table();
    let compiled = par::map(&p.edits, |e| {
        let spec = EditSpec {
            label: e.label,
            intensity: e.intensity,
            n_frames: e.len(),
            seed: e.seed,
        };
        let out = compile_edit(&spec, decoder, &table, &cfg)?;
        let base = CoeffTrack {
            frames: baseline.frames[e.start_frame..e.end_frame].to_vec(),
        };
        let blended = blend_transition(&base, &out.track, cfg.ramp_frames)?;
        Ok::<_, SemanticsError>((blended, out.trajectory))
    });
    let mut track = baseline.clone();
    let mut provenance = vec![FrameSource::Baseline; p.n_frames];
    let mut segments = Vec::with_capacity(p.edits.len());
    for (i, (e, r)) in p.edits.iter().zip(compiled).enumerate() {
        let (blended, trajectory) = r.map_err(|source| ProjectError::Edit { index: i, source })?;
        track.frames[e.start_frame..e.end_frame].copy_from_slice(&blended.frames);
        provenance[e.start_frame..e.end_frame].fill(FrameSource::Edit(i));
        segments.push(EditSegment {
            edit: i,
            start_frame: e.start_frame,
            end_frame: e.end_frame,
            trajectory,
        });
    }
    Ok(CompileResult {
        track,
        segments,
        provenance,
    })
}

#[derive(Serialize, Deserialize)]
struct TrackLine {
    frame: usize,
    expr: ExprCoeffs,
}

/// One `{"frame": i, "expr": [..30]}` line per frame.
pub fn write_track(track: &CoeffTrack, w: &mut impl Write) -> Result<(), ProjectError> {
    for (frame, expr) in track.frames.iter().enumerate() {
        serde_json::to_writer(&mut *w, &TrackLine { frame, expr: *expr })?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn export_track(track: &CoeffTrack, path: impl AsRef<Path>) -> Result<(), ProjectError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    write_track(track, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Parses a track file. Lines may come in any order but must cover frames
/// `0..n` exactly once with 30 finite coefficients each.
pub fn read_track(r: impl BufRead) -> Result<CoeffTrack, ProjectError> {
    let mut frames: Vec<Option<ExprCoeffs>> = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let n = i + 1;
        let v: serde_json::Value = serde_json::from_str(&line).map_err(|e| ProjectError::TrackFormat {
            line: n,
            message: e.to_string(),
        })?;
        let bad = |message: String| ProjectError::TrackFormat { line: n, message };
        let frame = v.get("frame").and_then(|x| x.as_u64()).ok_or_else(|| bad("missing integer \"frame\"".into()))? as usize;
        let arr = v
            .get("expr")
            .and_then(|x| x.as_array())
            .ok_or_else(|| bad("missing array \"expr\"".into()))?;
        if arr.len() != EXPR_DIM {
            return Err(bad(format!("expected {EXPR_DIM} coefficients, found {}", arr.len())));
        }
        let mut e = ExprCoeffs::zeros();
        for (d, x) in arr.iter().enumerate() {
            e.0[d] = x
                .as_f64()
                .filter(|x| x.is_finite())
                .ok_or_else(|| bad(format!("coefficient {d} is not a finite number")))?;
        }
        if frame >= frames.len() {
            frames.resize(frame + 1, None);
        }
        if frames[frame].replace(e).is_some() {
            return Err(bad(format!("duplicate frame {frame}")));
        }
    }
    let frames = frames
        .into_iter()
        .enumerate()
        .map(|(i, f)| f.ok_or(ProjectError::MissingFrame(i)))
        .collect::<Result<_, _>>()?;
    Ok(CoeffTrack { frames })
}

pub fn import_baseline(path: impl AsRef<Path>) -> Result<CoeffTrack, ProjectError> {
    read_track(BufReader::new(std::fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::SynthOracle;

    fn edit(start: usize, end: usize, label: EmotionLabel, intensity: Option<Intensity>) -> Edit {
        Edit {
            start_frame: start,
            end_frame: end,
            label,
            intensity,
            seed: 1,
        }
    }

    fn happy(start: usize, end: usize) -> Edit {
        edit(start, end, EmotionLabel::Happy, Some(Intensity::Medium))
    }

    #[test]
    fn overlap_names_both() {
        let mut p = Project::new(200);
        p.edits = vec![happy(0, 100), happy(50, 150)];
        let v = validate_project(&p);
        assert_eq!(v.len(), 1);
        assert!(matches!(v[0], Violation::Overlap { first: 0, second: 1, .. }));
        assert!(v[0].to_string().contains("edit 0") && v[0].to_string().contains("edit 1"));
    }

    #[test]
    fn boundaries() {
        let mut p = Project::new(200);
        assert!(validate_project(&p).is_empty());
        p.edits = vec![happy(100, 200), happy(0, 100)];
        assert!(validate_project(&p).is_empty());
        p.edits = vec![happy(150, 201)];
        assert!(matches!(validate_project(&p)[0], Violation::OutOfRange { .. }));
        p.edits = vec![happy(5, 5)];
        assert!(matches!(validate_project(&p)[0], Violation::EmptyInterval { .. }));
        p.edits = vec![edit(0, 10, EmotionLabel::Neutral, Some(Intensity::Low))];
        assert!(matches!(validate_project(&p)[0], Violation::IntensityWithNeutral { edit: 0 }));
        p.edits = vec![edit(0, 10, EmotionLabel::Sad, None)];
        assert!(matches!(validate_project(&p)[0], Violation::MissingIntensity { .. }));
        p.edits.clear();
        p.fps = 0.0;
        assert!(matches!(validate_project(&p)[0], Violation::InvalidFps { .. }));
    }

    #[test]
    fn no_edits_is_baseline() {
        let p = Project::new(40);
        let mut base = CoeffTrack::zeros(40);
        base.frames[3].0[2] = -0.0;
        base.frames[9].0[0] = 1.25;
        let r = compile_project(&p, &base, &SynthOracle::new(1)).unwrap();
        assert_eq!(r.track, base);
        assert!(r.provenance.iter().all(|s| *s == FrameSource::Baseline));
    }

    #[test]
    fn edit_span_and_boundary() {
        let mut p = Project::new(120);
        p.edits = vec![happy(30, 90)];
        let mut base = CoeffTrack::zeros(120);
        for (i, f) in base.frames.iter_mut().enumerate() {
            f.0[0] = i as f64 * 0.01;
        }
        let r = compile_project(&p, &base, &SynthOracle::new(2)).unwrap();
        for i in (0..30).chain(90..120) {
            assert_eq!(r.track.frames[i], base.frames[i]);
        }
        assert_eq!(r.track.frames[30], base.frames[30]);
        assert_ne!(r.track.frames[60], base.frames[60]);
        assert_eq!(r.provenance[30], FrameSource::Edit(0));
        assert_eq!(r.segments[0].trajectory.len(), 60);
    }

    #[test]
    fn invalid_project_refused() {
        let mut p = Project::new(50);
        p.edits = vec![happy(0, 30), happy(20, 40)];
        assert!(matches!(
            compile_project(&p, &CoeffTrack::zeros(50), &SynthOracle::new(1)),
            Err(ProjectError::Invalid(_))
        ));
        assert!(matches!(
            compile_project(&Project::new(50), &CoeffTrack::zeros(49), &SynthOracle::new(1)),
            Err(ProjectError::BaselineLength { .. })
        ));
    }

    #[test]
    fn seed_change_is_local() {
        let mut p = Project::new(200);
        p.edits = vec![happy(10, 80), edit(100, 190, EmotionLabel::Sad, Some(Intensity::High))];
        let base = CoeffTrack::zeros(200);
        let o = SynthOracle::new(3);
        let a = compile_project(&p, &base, &o).unwrap();
        p.edits[1].seed = 99;
        let b = compile_project(&p, &base, &o).unwrap();
        assert_eq!(a.track.frames[..100], b.track.frames[..100]);
        assert_ne!(a.track.frames[100..190], b.track.frames[100..190]);
    }

    #[test]
    fn track_round_trip_and_errors() {
        let mut t = CoeffTrack::zeros(3);
        t.frames[1].0[4] = 0.1 + 0.2;
        t.frames[2].0[29] = -1e-300;
        let mut buf = Vec::new();
        write_track(&t, &mut buf).unwrap();
        assert_eq!(buf.iter().filter(|&&b| b == b'\n').count(), 3);
        assert_eq!(read_track(buf.as_slice()).unwrap(), t);

        let zeros = vec!["0"; 30].join(",");
        let gap = format!("{{\"frame\":0,\"expr\":[{zeros}]}}\n{{\"frame\":2,\"expr\":[{zeros}]}}\n");
        assert!(matches!(read_track(gap.as_bytes()), Err(ProjectError::MissingFrame(1))));
        let short = "{\"frame\":0,\"expr\":[1,2]}\n";
        match read_track(short.as_bytes()) {
            Err(ProjectError::TrackFormat { line: 1, message }) => assert!(message.contains("expected 30")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn project_json_defaults() {
        let p: Project = serde_json::from_str(r#"{"n_frames": 300, "edits": [{"start_frame": 0, "end_frame": 30, "label": "neutral"}]}"#).unwrap();
        assert_eq!(p.fps, 30.0);
        assert_eq!(p.compile.ramp_frames, 20);
        assert_eq!(p.edits[0].intensity, None);
        let back: Project = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
        assert_eq!(back, p);
    }
}
