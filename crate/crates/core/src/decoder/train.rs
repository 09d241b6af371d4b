use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    adam_step, backward, init_weights, loss_rmse, pack_inputs, pack_targets, AdamState, DecoderConfig, DecoderError,
    DecoderWeights, DropoutMasks, ExpressionDecoder, Real,
};
use crate::dataset::{compute_norm_stats, ExprCoeffs, ExpressionDataset, NormStats, EXPR_DIM};
use crate::par;

/// Per-epoch losses.
///
/// `train_rmse` is the mean mini-batch RMSE in training-target space with
/// dropout active. `val_rmse` is the inference RMSE on the validation set in
/// raw coefficient space (`NaN` when no validation data was given).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_rmse: Vec<f64>,
    pub val_rmse: Vec<f64>,
    /// Epoch (0-based) with the lowest validation RMSE so far.
    pub best_epoch: Option<usize>,
    pub best_val_rmse: Option<f64>,
}

impl TrainReport {
    pub fn epochs_run(&self) -> usize {
        self.train_rmse.len()
    }

    /// `epoch,train_rmse,val_rmse` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_rmse,val_rmse\n");
        for (i, (t, v)) in self.train_rmse.iter().zip(&self.val_rmse).enumerate() {
            s.push_str(&format!("{i},{t},{v}\n"));
        }
        s
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Decoder(#[from] DecoderError),
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("training diverged in epoch {epoch} (non-finite loss)")]
    Diverged { epoch: usize, report: TrainReport },
}

/// RMSE of `decoder` over `d` in raw coefficient space.
pub fn rmse_on<D: ExpressionDecoder + ?Sized>(decoder: &D, d: &ExpressionDataset) -> Result<f64, DecoderError> {
    let preds = par::map(&d.samples, |s| decoder.decode(s.va));
    let preds: Vec<ExprCoeffs> = preds.into_iter().collect::<Result<_, _>>()?;
    loss_rmse(&preds, &d.exprs())
}

/// RMSE on `eval` of always predicting the mean coefficient vector of `fit`.
pub fn mean_predictor_rmse(fit: &ExpressionDataset, eval: &ExpressionDataset) -> Result<f64, TrainError> {
    let stats = compute_norm_stats(fit).map_err(|_| TrainError::EmptyTrainSet)?;
    let mean = ExprCoeffs(stats.expr_mean);
    let preds = vec![mean; eval.len()];
    Ok(loss_rmse(&preds, &eval.exprs())?)
}

/// Shuffled mini-batch Adam training.
///
/// Each epoch permutes the training set with a seeded generator, keeps the
/// final short batch, and draws fresh dropout masks per batch. Everything
/// is a function of `cfg.seed`, so repeated runs are bit-identical. The
/// returned weights are those after the last epoch.
pub fn train<T: Real>(
    d_train: &ExpressionDataset,
    d_val: &ExpressionDataset,
    cfg: &DecoderConfig,
) -> Result<(DecoderWeights<T>, TrainReport), TrainError> {
    cfg.validate()?;
    if d_train.is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }
    let mut w: DecoderWeights<T> = init_weights(cfg)?;
    let norm = if cfg.normalize_targets {
        compute_norm_stats(d_train).map_err(|_| TrainError::EmptyTrainSet)?
    } else {
        NormStats::identity()
    };
    w.norm = norm.clone();
    w.normalize_targets = cfg.normalize_targets;

    let inputs: Vec<T> = pack_inputs(&d_train.va_points());
    let targets: Vec<T> = if cfg.normalize_targets {
        let normed: Vec<ExprCoeffs> = d_train.samples.iter().map(|s| norm.normalize(&s.expr)).collect();
        pack_targets(&normed)
    } else {
        pack_targets(&d_train.exprs())
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut adam = AdamState::new(&w);
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..d_train.len()).collect();
    let mut batch_in = Vec::with_capacity(cfg.batch_size * 2);
    let mut batch_tg = Vec::with_capacity(cfg.batch_size * EXPR_DIM);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for idx in order.chunks(cfg.batch_size) {
            batch_in.clear();
            batch_tg.clear();
            for &i in idx {
                batch_in.extend_from_slice(&inputs[2 * i..2 * i + 2]);
                batch_tg.extend_from_slice(&targets[i * EXPR_DIM..(i + 1) * EXPR_DIM]);
            }
            let masks = (cfg.dropout_rate > 0.0).then(|| DropoutMasks::sample(&w, idx.len(), cfg.dropout_rate, &mut rng));
            let (loss, grads) = match backward(&w, &batch_in, &batch_tg, masks.as_ref()) {
                Ok(r) => r,
                Err(DecoderError::NonFinite { .. }) => return Err(TrainError::Diverged { epoch, report }),
                Err(e) => return Err(e.into()),
            };
            adam_step(&mut w, &mut adam, &grads, cfg.learning_rate);
            loss_sum += loss;
            batches += 1;
        }
        let train_loss = loss_sum / batches as f64;
        if !train_loss.is_finite() {
            return Err(TrainError::Diverged { epoch, report });
        }
        let val = if d_val.is_empty() {
            f64::NAN
        } else {
            match rmse_on(&w, d_val) {
                Ok(v) if v.is_finite() => v,
                Ok(_) | Err(DecoderError::NonFinite { .. }) => return Err(TrainError::Diverged { epoch, report }),
                Err(e) => return Err(e.into()),
            }
        };
        report.train_rmse.push(train_loss);
        report.val_rmse.push(val);
        if val.is_finite() && report.best_val_rmse.is_none_or(|b| val < b) {
            report.best_val_rmse = Some(val);
            report.best_epoch = Some(epoch);
        }
    }
    Ok((w, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::synth_dataset;

    fn small_cfg(epochs: usize) -> DecoderConfig {
        DecoderConfig {
            layer_widths: vec![2, 32, 30],
            epochs,
            seed: 1,
            ..DecoderConfig::desk()
        }
    }

    #[test]
    fn zero_epochs_returns_init() {
        let d = synth_dataset(2, 20, 0.0);
        let cfg = small_cfg(0);
        let (w, r) = train::<f32>(&d, &d, &cfg).unwrap();
        let mut init: DecoderWeights<f32> = init_weights(&cfg).unwrap();
        init.norm = compute_norm_stats(&d).unwrap();
        assert_eq!(w, init);
        assert_eq!(r.epochs_run(), 0);
    }

    #[test]
    fn seeded_training_is_repeatable() {
        let d = synth_dataset(4, 100, 0.01);
        let cfg = small_cfg(3);
        let (wa, ra) = train::<f32>(&d, &d, &cfg).unwrap();
        let (wb, rb) = train::<f32>(&d, &d, &cfg).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(wa, wb);
        assert_eq!(ra.val_rmse.len(), 3);
    }

    #[test]
    fn empty_train_set_rejected() {
        let d = ExpressionDataset::default();
        assert!(matches!(train::<f32>(&d, &d, &small_cfg(1)), Err(TrainError::EmptyTrainSet)));
    }

    #[test]
    fn huge_learning_rate_reports_divergence() {
        let d = synth_dataset(4, 64, 0.0);
        let cfg = DecoderConfig {
            learning_rate: 1e30,
            normalize_targets: false,
            dropout_rate: 0.0,
            ..small_cfg(50)
        };
        match train::<f32>(&d, &d, &cfg) {
            Err(TrainError::Diverged { report, .. }) => assert!(report.epochs_run() < 50),
            other => panic!("expected divergence, got {:?}", other.map(|r| r.1)),
        }
    }

    #[test]
    fn csv_layout() {
        let r = TrainReport {
            train_rmse: vec![1.5, 0.5],
            val_rmse: vec![2.0, 1.0],
            ..Default::default()
        };
        assert_eq!(r.to_csv(), "epoch,train_rmse,val_rmse\n0,1.5,2\n1,0.5,1\n");
    }
}
