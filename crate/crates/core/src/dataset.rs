//! Person-specific datasets of (valence-arousal, expression-coefficient) pairs.
//!
//! On disk a dataset is UTF-8 JSONL, one sample per line:
//!
//! ```text
//! {"video_id": "v1", "frame": 0, "va": [0.1, -0.3], "expr": [30 numbers]}
//! ```
//!
//! Floats are written with shortest round-trip formatting, so save followed
//! by load reproduces every sample bit-exactly.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dimension of the expression-coefficient vector.
pub const EXPR_DIM: usize = 30;

/// Default bound on the absolute value of any expression coefficient.
pub const DEFAULT_COEFF_BOUND: f64 = 10.0;

/// Floor applied to per-dimension standard deviations.
pub const STD_FLOOR: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: expected {EXPR_DIM} coefficients, found {found}")]
    WrongLength { line: usize, found: usize },
    #[error("line {line}: valence-arousal ({valence}, {arousal}) outside [-1, 1]")]
    VaOutOfRange {
        line: usize,
        valence: f64,
        arousal: f64,
    },
    #[error("line {line}: coefficient {index} = {value} is non-finite or exceeds bound {bound}")]
    CoeffOutOfRange {
        line: usize,
        index: usize,
        value: f64,
        bound: f64,
    },
    #[error("line {line}: duplicate sample ({video_id}, frame {frame})")]
    Duplicate {
        line: usize,
        video_id: String,
        frame: u64,
    },
    #[error("dataset is empty")]
    Empty,
    #[error("train fraction {0} must lie strictly between 0 and 1")]
    BadFraction(f64),
}

/// A point on the valence-arousal circumplex.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct VaPoint {
    pub valence: f64,
    pub arousal: f64,
}

impl VaPoint {
    pub const ORIGIN: VaPoint = VaPoint {
        valence: 0.0,
        arousal: 0.0,
    };

    pub const fn new(valence: f64, arousal: f64) -> Self {
        Self { valence, arousal }
    }

    /// Both coordinates finite and inside [-1, 1].
    pub fn is_valid(&self) -> bool {
        let ok = |x: f64| x.is_finite() && (-1.0..=1.0).contains(&x);
        ok(self.valence) && ok(self.arousal)
    }

    pub fn radius(&self) -> f64 {
        self.valence.hypot(self.arousal)
    }

    /// Polar angle in degrees, counter-clockwise from the +valence axis, in [0, 360).
    pub fn angle_deg(&self) -> f64 {
        self.arousal
            .atan2(self.valence)
            .to_degrees()
            .rem_euclid(360.0)
    }

    pub fn distance(&self, other: &VaPoint) -> f64 {
        (self.valence - other.valence).hypot(self.arousal - other.arousal)
    }
}

impl From<[f64; 2]> for VaPoint {
    fn from(v: [f64; 2]) -> Self {
        Self::new(v[0], v[1])
    }
}

impl From<VaPoint> for [f64; 2] {
    fn from(p: VaPoint) -> Self {
        [p.valence, p.arousal]
    }
}

/// A 30-dimensional expression-coefficient vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ExprCoeffs(pub [f64; EXPR_DIM]);

impl Default for ExprCoeffs {
    fn default() -> Self {
        Self::zeros()
    }
}

impl ExprCoeffs {
    pub const fn zeros() -> Self {
        Self([0.0; EXPR_DIM])
    }

    pub fn from_slice(values: &[f64]) -> Option<Self> {
        <[f64; EXPR_DIM]>::try_from(values).ok().map(Self)
    }

    /// Unit vector along coefficient `i`.
    pub fn unit(i: usize) -> Self {
        let mut e = Self::zeros();
        e.0[i] = 1.0;
        e
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Index of the first entry that is non-finite or exceeds `bound` in magnitude.
    pub fn first_violation(&self, bound: f64) -> Option<usize> {
        self.0.iter().position(|x| !x.is_finite() || x.abs() > bound)
    }
}

impl std::ops::Index<usize> for ExprCoeffs {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl std::ops::IndexMut<usize> for ExprCoeffs {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExprSample {
    pub video_id: String,
    #[serde(rename = "frame")]
    pub frame_idx: u64,
    pub va: VaPoint,
    pub expr: ExprCoeffs,
}

/// Line schema used while parsing; `expr` stays a plain vector so a wrong
/// length produces a dedicated error instead of a generic serde message.
#[derive(Deserialize)]
struct RawSample {
    video_id: String,
    frame: u64,
    va: [f64; 2],
    expr: Vec<f64>,
}

/// Per-dimension mean and (floored, population) standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub expr_mean: [f64; EXPR_DIM],
    pub expr_std: [f64; EXPR_DIM],
}

impl NormStats {
    /// Zero mean, unit deviation: normalization is the identity.
    pub fn identity() -> Self {
        Self {
            expr_mean: [0.0; EXPR_DIM],
            expr_std: [1.0; EXPR_DIM],
        }
    }

    pub fn normalize(&self, e: &ExprCoeffs) -> ExprCoeffs {
        let mut out = *e;
        for i in 0..EXPR_DIM {
            out.0[i] = (e.0[i] - self.expr_mean[i]) / self.expr_std[i];
        }
        out
    }

    pub fn denormalize(&self, e: &ExprCoeffs) -> ExprCoeffs {
        let mut out = *e;
        for i in 0..EXPR_DIM {
            out.0[i] = e.0[i] * self.expr_std[i] + self.expr_mean[i];
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExpressionDataset {
    pub samples: Vec<ExprSample>,
    pub norm: Option<NormStats>,
}

/// How [`split_dataset`] partitions samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    /// Per video, the earliest frames go to the training side.
    #[default]
    TemporalPrefix,
    /// Seeded random permutation of the whole dataset.
    Shuffled,
}

impl ExpressionDataset {
    pub fn new(samples: Vec<ExprSample>) -> Self {
        Self {
            samples,
            norm: None,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn va_points(&self) -> Vec<VaPoint> {
        self.samples.iter().map(|s| s.va).collect()
    }

    pub fn exprs(&self) -> Vec<ExprCoeffs> {
        self.samples.iter().map(|s| s.expr).collect()
    }

    /// Checks every sample invariant plus `(video_id, frame)` uniqueness.
    /// Reported line numbers are 1-based sample positions.
    pub fn validate(&self, coeff_bound: f64) -> Result<(), DatasetError> {
        let mut seen = HashSet::with_capacity(self.samples.len());
        for (i, s) in self.samples.iter().enumerate() {
            check_sample(s, i + 1, coeff_bound, &mut seen)?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_jsonl(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_jsonl(&self, w: &mut impl Write) -> Result<(), DatasetError> {
        for s in &self.samples {
            serde_json::to_writer(&mut *w, s).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

fn check_sample(
    s: &ExprSample,
    line: usize,
    bound: f64,
    seen: &mut HashSet<(String, u64)>,
) -> Result<(), DatasetError> {
    if !s.va.is_valid() {
        return Err(DatasetError::VaOutOfRange {
            line,
            valence: s.va.valence,
            arousal: s.va.arousal,
        });
    }
    if let Some(index) = s.expr.first_violation(bound) {
        return Err(DatasetError::CoeffOutOfRange {
            line,
            index,
            value: s.expr.0[index],
            bound,
        });
    }
    if !seen.insert((s.video_id.clone(), s.frame_idx)) {
        return Err(DatasetError::Duplicate {
            line,
            video_id: s.video_id.clone(),
            frame: s.frame_idx,
        });
    }
    Ok(())
}

/// Loads a JSONL dataset with the default coefficient bound.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<ExpressionDataset, DatasetError> {
    load_dataset_with_bound(path, DEFAULT_COEFF_BOUND)
}

pub fn load_dataset_with_bound(
    path: impl AsRef<Path>,
    coeff_bound: f64,
) -> Result<ExpressionDataset, DatasetError> {
    let file = File::open(path)?;
    read_dataset(BufReader::new(file), coeff_bound)
}

/// Parses JSONL from any reader. Blank lines are ignored; line numbers in
/// errors are 1-based physical line numbers.
pub fn read_dataset(reader: impl BufRead, coeff_bound: f64) -> Result<ExpressionDataset, DatasetError> {
    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawSample = serde_json::from_str(&line).map_err(|e| DatasetError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let expr = ExprCoeffs::from_slice(&raw.expr).ok_or(DatasetError::WrongLength {
            line: line_no,
            found: raw.expr.len(),
        })?;
        let sample = ExprSample {
            video_id: raw.video_id,
            frame_idx: raw.frame,
            va: raw.va.into(),
            expr,
        };
        check_sample(&sample, line_no, coeff_bound, &mut seen)?;
        samples.push(sample);
    }
    Ok(ExpressionDataset::new(samples))
}

fn train_count(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64).ceil() as usize).min(n)
}

/// Splits into (train, test). Both sides keep the input's relative order.
///
/// In temporal-prefix mode each video contributes its first
/// `ceil(fraction * frames_in_video)` frames (by frame index) to the training
/// side; with a single video this is exactly `ceil(fraction * n)`. In shuffled
/// mode a seeded permutation picks `ceil(fraction * n)` training samples.
pub fn split_dataset(
    d: &ExpressionDataset,
    train_fraction: f64,
    mode: SplitMode,
    seed: u64,
) -> Result<(ExpressionDataset, ExpressionDataset), DatasetError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DatasetError::BadFraction(train_fraction));
    }
    if d.is_empty() {
        return Err(DatasetError::Empty);
    }
    let n = d.len();
    let mut in_train = vec![false; n];
    match mode {
        SplitMode::TemporalPrefix => {
            let mut by_video: Vec<(&str, Vec<usize>)> = Vec::new();
            for (i, s) in d.samples.iter().enumerate() {
                match by_video.iter_mut().find(|(v, _)| *v == s.video_id) {
                    Some((_, idx)) => idx.push(i),
                    None => by_video.push((&s.video_id, vec![i])),
                }
            }
            for (_, mut idx) in by_video {
                idx.sort_by_key(|&i| (d.samples[i].frame_idx, i));
                let k = train_count(idx.len(), train_fraction);
                for &i in &idx[..k] {
                    in_train[i] = true;
                }
            }
        }
        SplitMode::Shuffled => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            for &i in &order[..train_count(n, train_fraction)] {
                in_train[i] = true;
            }
        }
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (s, t) in d.samples.iter().zip(in_train) {
        if t {
            train.push(s.clone());
        } else {
            test.push(s.clone());
        }
    }
    Ok((ExpressionDataset::new(train), ExpressionDataset::new(test)))
}

/// Per-dimension mean and population standard deviation, floored at [`STD_FLOOR`].
pub fn compute_norm_stats(d: &ExpressionDataset) -> Result<NormStats, DatasetError> {
    if d.is_empty() {
        return Err(DatasetError::Empty);
    }
    let n = d.len() as f64;
    let mut mean = [0.0; EXPR_DIM];
    for s in &d.samples {
        for (m, x) in mean.iter_mut().zip(s.expr.0.iter()) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = [0.0; EXPR_DIM];
    for s in &d.samples {
        for i in 0..EXPR_DIM {
            let dx = s.expr.0[i] - mean[i];
            var[i] += dx * dx;
        }
    }
    let mut std = [0.0; EXPR_DIM];
    for i in 0..EXPR_DIM {
        std[i] = (var[i] / n).sqrt().max(STD_FLOOR);
    }
    Ok(NormStats {
        expr_mean: mean,
        expr_std: std,
    })
}
