//! Expression decoder: a ReLU multilayer perceptron regressing a
//! valence-arousal pair to 30 expression coefficients, trained from scratch
//! with mini-batch Adam on an RMSE loss.
//!
//! The network is generic over the scalar type. Production weights are
//! `f32` (the on-disk format); the gradient checks instantiate `f64`.

mod adam;
mod io;
mod train;

pub use adam::{adam_step, AdamState};
pub use io::{load_weights, read_weights, save_weights, write_weights, WEIGHTS_MAGIC, WEIGHTS_VERSION};
pub use train::{mean_predictor_rmse, rmse_on, train, TrainError, TrainReport};

use std::fmt::Debug;

use num_traits::Float;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ExprCoeffs, NormStats, VaPoint, EXPR_DIM};
use crate::par;
use crate::semantics::{CoeffTrack, VaTrajectory};

/// Hidden widths of the full-size network.
pub const PAPER_WIDTHS: [usize; 8] = [2, 4096, 2048, 1024, 512, 128, 64, 30];
/// Reduced network used for desk-scale runs and CI.
pub const DESK_WIDTHS: [usize; 5] = [2, 256, 128, 64, 30];

/// Samples per gradient chunk. Chunks are the unit of parallel work and are
/// reduced in index order, so results do not depend on the thread count.
const GRAD_CHUNK: usize = 8;

/// Below this loss value the RMSE gradient is treated as zero.
const RMSE_GRAD_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum DecoderError {
    #[error("invalid layer widths {0:?}: need first = 2, last = {EXPR_DIM}, all >= 1")]
    InvalidWidths(Vec<usize>),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("non-finite value in layer {layer}")]
    NonFinite { layer: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic bytes {0:?}, expected \"DFMW\"")]
    BadMagic([u8; 4]),
    #[error("unsupported weights version {0}")]
    Version(u32),
    #[error("weights file truncated in {0}")]
    Truncated(String),
    #[error("malformed weights file: {0}")]
    Malformed(String),
}

/// Scalar type the network is instantiated with.
pub trait Real: Float + Send + Sync + Debug + Default + 'static {
    fn from_f64_lossy(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    fn from_f64_lossy(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn from_f64_lossy(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub layer_widths: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Dropout probability on hidden activations during training.
    pub dropout_rate: f64,
    pub seed: u64,
    /// Train on standardized targets and de-normalize at inference.
    pub normalize_targets: bool,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl DecoderConfig {
    pub fn paper() -> Self {
        Self {
            layer_widths: PAPER_WIDTHS.to_vec(),
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 1000,
            dropout_rate: 0.2,
            seed: 0,
            normalize_targets: true,
        }
    }

    pub fn desk() -> Self {
        Self {
            layer_widths: DESK_WIDTHS.to_vec(),
            epochs: 100,
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<(), DecoderError> {
        let w = &self.layer_widths;
        if w.len() < 2 || w[0] != 2 || *w.last().unwrap() != EXPR_DIM || w.contains(&0) {
            return Err(DecoderError::InvalidWidths(w.clone()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(DecoderError::InvalidConfig(format!(
                "dropout rate {} not in [0, 1)",
                self.dropout_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(DecoderError::InvalidConfig("batch size must be >= 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(DecoderError::InvalidConfig(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// One fully connected layer. `weight` is row-major `outputs x inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Dense<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weight: vec![T::zero(); inputs * outputs],
            bias: vec![T::zero(); outputs],
        }
    }

    pub fn row(&self, o: usize) -> &[T] {
        &self.weight[o * self.inputs..(o + 1) * self.inputs]
    }

    fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn add_assign(&mut self, other: &Self) {
        for (a, &b) in self.weight.iter_mut().zip(&other.weight) {
            *a = *a + b;
        }
        for (a, &b) in self.bias.iter_mut().zip(&other.bias) {
            *a = *a + b;
        }
    }
}

/// Trained (or freshly initialized) decoder parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderWeights<T = f32> {
    pub layers: Vec<Dense<T>>,
    /// Target statistics used at training time; identity when targets were raw.
    pub norm: NormStats,
    pub normalize_targets: bool,
}

/// Gradients share the parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<Dense<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_like(w: &DecoderWeights<T>) -> Self {
        Self {
            layers: w.layers.iter().map(|l| Dense::zeros(l.inputs, l.outputs)).collect(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(&l.bias).all(|x| x.is_zero()))
    }

    fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.add_assign(b);
        }
    }
}

/// Per-hidden-layer dropout multipliers for a batch: each entry is either 0
/// or `1 / (1 - rate)` (inverted dropout). Layout per layer is row-major
/// `batch x width`.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks<T> {
    pub layers: Vec<Vec<T>>,
}

impl<T: Real> DropoutMasks<T> {
    /// Draws masks for every hidden layer of `w` for `batch` samples.
    pub fn sample(w: &DecoderWeights<T>, batch: usize, rate: f64, rng: &mut impl RngCore) -> Self {
        let keep = T::from_f64_lossy(1.0 / (1.0 - rate));
        let hidden = &w.layers[..w.layers.len() - 1];
        let layers = hidden
            .iter()
            .map(|l| {
                (0..batch * l.outputs)
                    .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
                    .collect()
            })
            .collect();
        Self { layers }
    }

    fn chunk(&self, w: &DecoderWeights<T>, start: usize, len: usize) -> Self {
        let layers = self
            .layers
            .iter()
            .zip(&w.layers)
            .map(|(m, l)| m[start * l.outputs..(start + len) * l.outputs].to_vec())
            .collect();
        Self { layers }
    }
}

/// Source of dropout decisions for a single-sample forward pass.
pub struct Dropout<'a, R: RngCore> {
    pub rate: f64,
    pub rng: &'a mut R,
}

/// Anything that maps a valence-arousal point to expression coefficients.
pub trait ExpressionDecoder: Sync {
    fn decode(&self, va: VaPoint) -> Result<ExprCoeffs, DecoderError>;
}

impl<T: Real> ExpressionDecoder for DecoderWeights<T> {
    fn decode(&self, va: VaPoint) -> Result<ExprCoeffs, DecoderError> {
        self.predict(va)
    }
}

/// He-uniform weights (`U(-sqrt(6/fan_in), sqrt(6/fan_in))`) and zero biases.
pub fn init_weights<T: Real>(cfg: &DecoderConfig) -> Result<DecoderWeights<T>, DecoderError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let layers = cfg
        .layer_widths
        .windows(2)
        .map(|w| {
            let (inputs, outputs) = (w[0], w[1]);
            let bound = (6.0 / inputs as f64).sqrt();
            let mut l = Dense::zeros(inputs, outputs);
            for x in l.weight.iter_mut() {
                *x = T::from_f64_lossy(rng.random_range(-bound..bound));
            }
            l
        })
        .collect();
    Ok(DecoderWeights {
        layers,
        norm: NormStats::identity(),
        normalize_targets: cfg.normalize_targets,
    })
}

/// Dot product with eight independent partial sums, combined in fixed order.
#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] = acc[k] + x[k] * y[k];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail = tail + x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[inline]
fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}

impl<T: Real> DecoderWeights<T> {
    pub fn layer_widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].inputs];
        w.extend(self.layers.iter().map(|l| l.outputs));
        w
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    /// Checks the layer chain and vector lengths.
    pub fn validate(&self) -> Result<(), DecoderError> {
        if self.layers.is_empty() {
            return Err(DecoderError::InvalidWidths(vec![]));
        }
        let widths = self.layer_widths();
        if widths[0] != 2 || *widths.last().unwrap() != EXPR_DIM || widths.contains(&0) {
            return Err(DecoderError::InvalidWidths(widths));
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[0].outputs != pair[1].inputs {
                return Err(DecoderError::Shape(format!("layer {i} outputs != layer {} inputs", i + 1)));
            }
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.weight.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(DecoderError::Shape(format!("layer {i} buffer sizes")));
            }
        }
        Ok(())
    }

    /// Batched forward pass. `inputs` is row-major `n x 2`. Returns the
    /// activations of every layer (index 0 is the input itself); hidden
    /// activations are post-ReLU and post-dropout, the last is linear.
    fn forward_cached(&self, inputs: &[T], masks: Option<&DropoutMasks<T>>) -> Result<Vec<Vec<T>>, DecoderError> {
        let n = inputs.len() / 2;
        let last = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(inputs.to_vec());
        for (li, layer) in self.layers.iter().enumerate() {
            let prev = &acts[li];
            let mut out = vec![T::zero(); n * layer.outputs];
            for s in 0..n {
                let x = &prev[s * layer.inputs..(s + 1) * layer.inputs];
                let y = &mut out[s * layer.outputs..(s + 1) * layer.outputs];
                for (o, yo) in y.iter_mut().enumerate() {
                    *yo = dot(layer.row(o), x) + layer.bias[o];
                }
            }
            if li < last {
                for v in out.iter_mut() {
                    // NaN is also clamped to zero.
                    #[allow(clippy::neg_cmp_op_on_partial_ord)]
                    if !(*v > T::zero()) {
                        *v = T::zero();
                    }
                }
                if let Some(m) = masks {
                    for (v, &k) in out.iter_mut().zip(&m.layers[li]) {
                        *v = *v * k;
                    }
                }
            }
            if out.iter().any(|v| !v.is_finite()) {
                return Err(DecoderError::NonFinite { layer: li });
            }
            acts.push(out);
        }
        Ok(acts)
    }

    /// Network output for one point, in training-target space. Dropout is
    /// applied only when a source is supplied.
    pub fn forward<R: RngCore>(&self, va: VaPoint, dropout: Option<Dropout<'_, R>>) -> Result<ExprCoeffs, DecoderError> {
        if !(va.valence.is_finite() && va.arousal.is_finite()) {
            return Err(DecoderError::NonFinite { layer: 0 });
        }
        let x = [T::from_f64_lossy(va.valence), T::from_f64_lossy(va.arousal)];
        let masks = dropout.map(|d| DropoutMasks::sample(self, 1, d.rate, d.rng));
        let acts = self.forward_cached(&x, masks.as_ref())?;
        let out = acts.last().unwrap();
        let mut e = ExprCoeffs::zeros();
        for (dst, v) in e.0.iter_mut().zip(out) {
            *dst = v.as_f64();
        }
        Ok(e)
    }

    /// Inference: forward without dropout, then de-normalization.
    pub fn predict(&self, va: VaPoint) -> Result<ExprCoeffs, DecoderError> {
        let raw = self.forward::<ChaCha8Rng>(va, None)?;
        Ok(if self.normalize_targets {
            self.norm.denormalize(&raw)
        } else {
            raw
        })
    }

    /// Squared-error sum and gradients for one chunk, given the global
    /// scale `1 / (B * D * rmse)` applied to residuals.
    fn chunk_backward(
        &self,
        inputs: &[T],
        targets: &[T],
        masks: Option<&DropoutMasks<T>>,
        acts: &[Vec<T>],
        scale: T,
    ) -> Gradients<T> {
        let n = inputs.len() / 2;
        let mut grads = Gradients::zeros_like(self);
        let out = acts.last().unwrap();
        let mut delta: Vec<T> = out.iter().zip(targets).map(|(&p, &t)| (p - t) * scale).collect();
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let prev = &acts[li];
            let g = &mut grads.layers[li];
            for s in 0..n {
                let d = &delta[s * layer.outputs..(s + 1) * layer.outputs];
                let x = &prev[s * layer.inputs..(s + 1) * layer.inputs];
                for (o, &dv) in d.iter().enumerate() {
                    if dv.is_zero() {
                        continue;
                    }
                    axpy(dv, x, &mut g.weight[o * layer.inputs..(o + 1) * layer.inputs]);
                    g.bias[o] = g.bias[o] + dv;
                }
            }
            if li == 0 {
                break;
            }
            // Propagate to the previous hidden layer: through the weights,
            // then dropout scaling and the ReLU gate.
            let mut next = vec![T::zero(); n * layer.inputs];
            for s in 0..n {
                let d = &delta[s * layer.outputs..(s + 1) * layer.outputs];
                let nd = &mut next[s * layer.inputs..(s + 1) * layer.inputs];
                for (o, &dv) in d.iter().enumerate() {
                    if !dv.is_zero() {
                        axpy(dv, layer.row(o), nd);
                    }
                }
            }
            let mask = masks.map(|m| &m.layers[li - 1]);
            for (i, v) in next.iter_mut().enumerate() {
                if prev[i] > T::zero() {
                    if let Some(m) = mask {
                        *v = *v * m[i];
                    }
                } else {
                    *v = T::zero();
                }
            }
            delta = next;
        }
        grads
    }
}

/// Batch RMSE: square root of the mean over samples and dimensions.
pub fn loss_rmse(pred: &[ExprCoeffs], target: &[ExprCoeffs]) -> Result<f64, DecoderError> {
    if pred.len() != target.len() {
        return Err(DecoderError::Shape(format!("{} predictions vs {} targets", pred.len(), target.len())));
    }
    if pred.is_empty() {
        return Err(DecoderError::EmptyBatch);
    }
    let sum: f64 = pred
        .iter()
        .zip(target)
        .flat_map(|(p, t)| p.0.iter().zip(t.0.iter()).map(|(a, b)| (a - b) * (a - b)))
        .sum();
    Ok((sum / (pred.len() * EXPR_DIM) as f64).sqrt())
}

/// Batch RMSE and its gradient with respect to every parameter.
///
/// `inputs` is row-major `n x 2`, `targets` row-major `n x 30` (in training
/// target space), `masks` optional dropout multipliers for the same batch.
/// When the loss is below `1e-12` the gradient is defined as zero.
pub fn backward<T: Real>(
    w: &DecoderWeights<T>,
    inputs: &[T],
    targets: &[T],
    masks: Option<&DropoutMasks<T>>,
) -> Result<(f64, Gradients<T>), DecoderError> {
    let n = inputs.len() / 2;
    if n == 0 {
        return Err(DecoderError::EmptyBatch);
    }
    let out_dim = w.layers.last().unwrap().outputs;
    if inputs.len() != 2 * n || targets.len() != n * out_dim {
        return Err(DecoderError::Shape(format!(
            "{} inputs / {} targets for batch of {n}",
            inputs.len(),
            targets.len()
        )));
    }
    let chunks: Vec<(usize, usize)> = (0..n).step_by(GRAD_CHUNK).map(|s| (s, GRAD_CHUNK.min(n - s))).collect();
    let chunk_masks: Vec<Option<DropoutMasks<T>>> =
        chunks.iter().map(|&(s, len)| masks.map(|m| m.chunk(w, s, len))).collect();

    let forwards = par::map_range(chunks.len(), |ci| {
        let (s, len) = chunks[ci];
        let acts = w.forward_cached(&inputs[2 * s..2 * (s + len)], chunk_masks[ci].as_ref())?;
        let t = &targets[s * out_dim..(s + len) * out_dim];
        let sq: f64 = acts
            .last()
            .unwrap()
            .iter()
            .zip(t)
            .map(|(&p, &t)| {
                let d = (p - t).as_f64();
                d * d
            })
            .sum();
        Ok::<_, DecoderError>((acts, sq))
    });
    let forwards: Vec<(Vec<Vec<T>>, f64)> = forwards.into_iter().collect::<Result<_, _>>()?;
    let total: f64 = forwards.iter().map(|f| f.1).sum();
    let loss = (total / (n * out_dim) as f64).sqrt();
    if !loss.is_finite() {
        return Err(DecoderError::NonFinite { layer: w.layers.len() - 1 });
    }
    if loss < RMSE_GRAD_EPS {
        return Ok((loss, Gradients::zeros_like(w)));
    }
    let scale = T::from_f64_lossy(1.0 / ((n * out_dim) as f64 * loss));
    let partials = par::map_range(chunks.len(), |ci| {
        let (s, len) = chunks[ci];
        w.chunk_backward(
            &inputs[2 * s..2 * (s + len)],
            &targets[s * out_dim..(s + len) * out_dim],
            chunk_masks[ci].as_ref(),
            &forwards[ci].0,
            scale,
        )
    });
    let mut grads = Gradients::zeros_like(w);
    for p in &partials {
        grads.add_assign(p);
    }
    Ok((loss, grads))
}

/// Frame-wise inference over a trajectory (no dropout).
pub fn decode_track<D: ExpressionDecoder + ?Sized>(decoder: &D, traj: &VaTrajectory) -> Result<CoeffTrack, DecoderError> {
    let frames = par::map(&traj.points, |&va| decoder.decode(va));
    Ok(CoeffTrack {
        frames: frames.into_iter().collect::<Result<_, _>>()?,
    })
}

/// Flattens points into the row-major `n x 2` layout used by [`backward`].
pub fn pack_inputs<T: Real>(points: &[VaPoint]) -> Vec<T> {
    points
        .iter()
        .flat_map(|p| [T::from_f64_lossy(p.valence), T::from_f64_lossy(p.arousal)])
        .collect()
}

/// Flattens coefficient vectors into row-major `n x 30`.
pub fn pack_targets<T: Real>(exprs: &[ExprCoeffs]) -> Vec<T> {
    exprs.iter().flat_map(|e| e.0.iter().map(|&x| T::from_f64_lossy(x))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(widths: &[usize]) -> DecoderConfig {
        DecoderConfig {
            layer_widths: widths.to_vec(),
            seed: 3,
            ..DecoderConfig::paper()
        }
    }

    #[test]
    fn init_shapes() {
        let w: DecoderWeights<f64> = init_weights(&cfg(&[2, 8, 30])).unwrap();
        assert_eq!(w.layers.len(), 2);
        assert_eq!((w.layers[0].outputs, w.layers[0].inputs), (8, 2));
        assert_eq!((w.layers[1].outputs, w.layers[1].inputs), (30, 8));
        assert_eq!(w.layers[0].weight.len(), 16);
        assert_eq!(w.layers[0].bias, vec![0.0; 8]);
        assert_eq!(w.layers[1].bias.len(), 30);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let c = cfg(&[2, 64, 32, 30]);
        let a: DecoderWeights<f32> = init_weights(&c).unwrap();
        let b: DecoderWeights<f32> = init_weights(&c).unwrap();
        assert_eq!(a, b);
        for l in &a.layers {
            let bound = (6.0 / l.inputs as f64).sqrt();
            assert!(l.weight.iter().all(|&x| (x as f64).abs() <= bound));
        }
    }

    #[test]
    fn invalid_widths_rejected() {
        for w in [vec![3, 8, 30], vec![2, 8, 29], vec![2, 0, 30], vec![30]] {
            assert!(matches!(init_weights::<f32>(&cfg(&w)), Err(DecoderError::InvalidWidths(_))));
        }
        let bad = DecoderConfig { dropout_rate: 1.0, ..cfg(&[2, 4, 30]) };
        assert!(init_weights::<f32>(&bad).is_err());
    }

    #[test]
    fn zero_network_outputs_zero() {
        let mut w: DecoderWeights<f64> = init_weights(&cfg(&[2, 8, 30])).unwrap();
        for l in &mut w.layers {
            l.weight.iter_mut().for_each(|x| *x = 0.0);
        }
        let out = w.forward::<ChaCha8Rng>(VaPoint::new(0.3, -0.7), None).unwrap();
        assert_eq!(out, ExprCoeffs::zeros());
    }

    #[test]
    fn one_hidden_unit_by_hand() {
        let col: Vec<f64> = (0..30).map(|i| 3.0 + i as f64).collect();
        let w = DecoderWeights {
            layers: vec![
                Dense { inputs: 2, outputs: 1, weight: vec![2.0, 0.0], bias: vec![-1.0] },
                Dense { inputs: 1, outputs: 30, weight: col.clone(), bias: vec![0.0; 30] },
            ],
            norm: NormStats::identity(),
            normalize_targets: false,
        };
        w.validate().unwrap();
        let out = w.forward::<ChaCha8Rng>(VaPoint::new(1.0, 0.0), None).unwrap();
        assert_eq!(out.0.to_vec(), col);
        // Hidden pre-activation 2*0.25 - 1 < 0: ReLU clips, output is the bias.
        let out = w.forward::<ChaCha8Rng>(VaPoint::new(0.25, 0.0), None).unwrap();
        assert_eq!(out, ExprCoeffs::zeros());
    }

    #[test]
    fn default_config_outputs_thirty() {
        let w: DecoderWeights<f32> = init_weights(&DecoderConfig::desk()).unwrap();
        let out = w.forward::<ChaCha8Rng>(VaPoint::new(0.1, 0.2), None).unwrap();
        assert_eq!(out.0.len(), EXPR_DIM);
        assert_eq!(w.layer_widths(), DESK_WIDTHS.to_vec());
        assert_eq!(DecoderConfig::paper().layer_widths, PAPER_WIDTHS.to_vec());
    }

    #[test]
    fn rmse_closed_forms() {
        let z = ExprCoeffs::zeros();
        let two = ExprCoeffs([2.0; EXPR_DIM]);
        assert_eq!(loss_rmse(&[two], &[two]).unwrap(), 0.0);
        assert_eq!(loss_rmse(&[two], &[z]).unwrap(), 2.0);
        let r = loss_rmse(&[z, two], &[z, z]).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-15);
        assert!(matches!(loss_rmse(&[z], &[z, z]), Err(DecoderError::Shape(_))));
        assert!(matches!(loss_rmse(&[], &[]), Err(DecoderError::EmptyBatch)));
    }

    #[test]
    fn zero_error_batch_has_zero_gradient() {
        let w: DecoderWeights<f64> = init_weights(&cfg(&[2, 8, 30])).unwrap();
        let pts = [VaPoint::new(0.2, 0.1), VaPoint::new(-0.5, 0.4)];
        let targets: Vec<ExprCoeffs> = pts.iter().map(|&p| w.forward::<ChaCha8Rng>(p, None).unwrap()).collect();
        let (loss, g) = backward(&w, &pack_inputs(&pts), &pack_targets(&targets), None).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.is_zero());
    }

    #[test]
    fn final_bias_gradient_single_sample() {
        // dL/db_j = (p_j - t_j) / (D * L) with L = sqrt(sum (p - t)^2 / D).
        let w: DecoderWeights<f64> = init_weights(&cfg(&[2, 8, 30])).unwrap();
        let va = VaPoint::new(0.4, -0.3);
        let p = w.forward::<ChaCha8Rng>(va, None).unwrap();
        let t = ExprCoeffs(std::array::from_fn(|j| (j as f64 * 0.37).sin()));
        let l = loss_rmse(&[p], &[t]).unwrap();
        let (loss, g) = backward(&w, &pack_inputs(&[va]), &pack_targets(&[t]), None).unwrap();
        assert!((loss - l).abs() < 1e-14);
        let gb = &g.layers[1].bias;
        for j in 0..EXPR_DIM {
            let expect = (p[j] - t[j]) / (EXPR_DIM as f64 * l);
            assert!((gb[j] - expect).abs() < 1e-14, "{j}");
        }
    }

    #[test]
    fn dropout_masks_scale() {
        let w: DecoderWeights<f64> = init_weights(&cfg(&[2, 16, 8, 30])).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = DropoutMasks::sample(&w, 4, 0.5, &mut rng);
        assert_eq!(m.layers.len(), 2);
        assert_eq!(m.layers[0].len(), 64);
        assert!(m.layers.iter().flatten().all(|&x| x == 0.0 || x == 2.0));
        assert!(m.layers[0].contains(&0.0));
    }

    #[test]
    fn inference_ignores_dropout_state() {
        let w: DecoderWeights<f32> = init_weights(&cfg(&[2, 16, 30])).unwrap();
        let va = VaPoint::new(0.1, 0.9);
        assert_eq!(w.predict(va).unwrap(), w.predict(va).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dropped = w.forward(va, Some(Dropout { rate: 0.5, rng: &mut rng })).unwrap();
        assert_ne!(dropped, w.predict(va).unwrap());
    }

    #[test]
    fn non_finite_input_rejected() {
        let w: DecoderWeights<f32> = init_weights(&cfg(&[2, 4, 30])).unwrap();
        assert!(matches!(w.predict(VaPoint::new(f64::NAN, 0.0)), Err(DecoderError::NonFinite { .. })));
    }
}
