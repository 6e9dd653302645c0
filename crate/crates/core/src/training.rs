//! Teacher-forced NLL training with clipped Adam updates.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decoding::BeamConfig;
use crate::error::{Result, ScanError};
use crate::model::ScanModel;
use crate::parallel::Execution;
use crate::tensor::{clip_grad_norm, Adam, Gradients, Graph, ParamStore, Scalar, Tensor};
use crate::windowing::{RawImage, WindowSequence};

/// `-sum_i log softmax(logits_i)[target_i]`; `None` targets are padding.
pub fn nll_loss<T: Scalar>(logits: &Tensor<T>, targets: &[Option<usize>]) -> Result<f64> {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let x = g.constant(logits.clone())?;
    let l = g.nll(x, targets)?;
    Ok(g.value(l).item().f64())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Share of the training set visited per epoch.
    pub epoch_fraction: f64,
    pub dropout_p: f64,
    pub seed: u64,
    /// Stop once dev accuracy reaches this value.
    pub target_accuracy: Option<f64>,
    /// Beam used for dev evaluation.
    pub eval_beam: usize,
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 5e-4,
            clip_norm: 0.1,
            batch_size: 40,
            epochs: 500,
            epoch_fraction: 0.01,
            dropout_p: 0.5,
            seed: 0,
            target_accuracy: None,
            eval_beam: 5,
            execution: Execution::Parallel,
        }
    }
}

impl TrainConfig {
    pub fn desk() -> Self {
        TrainConfig {
            batch_size: 16,
            epochs: 50,
            epoch_fraction: 1.0,
            dropout_p: 0.1,
            eval_beam: 1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && self.lr.is_finite()
            && self.clip_norm > 0.0
            && self.batch_size > 0
            && self.epoch_fraction > 0.0
            && self.epoch_fraction <= 1.0
            && self.eval_beam > 0;
        if ok {
            Ok(())
        } else {
            Err(ScanError::InvalidArgument(format!("bad training config {self:?}")))
        }
    }

    /// Samples drawn per epoch from a training set of `n`.
    pub fn samples_per_epoch(&self, n: usize) -> usize {
        ((self.epoch_fraction * n as f64).ceil() as usize).min(n)
    }

    pub fn steps_per_epoch(&self, n: usize) -> usize {
        self.samples_per_epoch(n).div_ceil(self.batch_size)
    }
}

/// Windows and token ids of one training pair, ready for the model.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub windows: WindowSequence,
    pub tokens: Vec<usize>,
    pub label: String,
}

/// Window every image and encode every label up front.
pub fn prepare<T: Scalar>(
    model: &ScanModel<T>,
    samples: &[(RawImage, String)],
    exec: Execution,
) -> Result<Vec<Prepared>> {
    exec.map(samples, |_, (img, label)| {
        Ok(Prepared {
            windows: model.windows(img)?,
            tokens: model.encode_label(label)?,
            label: label.clone(),
        })
    })
    .into_iter()
    .collect()
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over the combined words
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-sample loss and gradients; dropout masks depend only on `(seed, step, index)`.
fn sample_gradients<T: Scalar>(
    model: &ScanModel<T>,
    sample: &Prepared,
    dropout_seed: Option<u64>,
) -> Result<(f64, Gradients<T>)> {
    let mut g = match dropout_seed {
        Some(s) => Graph::training(model.params(), s),
        None => Graph::new(model.params()),
    };
    let loss = model.sample_loss(&mut g, &sample.windows, &sample.tokens)?;
    let value = g.value(loss).item().f64();
    if !value.is_finite() {
        return Err(ScanError::NonFinite { op: "sample loss" });
    }
    Ok((value, g.backward(loss)?))
}

/// Optimizer state carried across steps.
pub struct Trainer {
    pub cfg: TrainConfig,
    adam: Adam,
    step: u64,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Trainer {
            adam: Adam::new(cfg.lr),
            cfg,
            step: 0,
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update on `batch`; returns the mean per-sample loss.
    ///
    /// Samples run independently (in parallel when configured) and their
    /// gradients are summed in batch order, so the result does not depend
    /// on the execution mode.
    pub fn step<T: Scalar>(&mut self, model: &mut ScanModel<T>, batch: &[&Prepared]) -> Result<f64> {
        if batch.is_empty() {
            return Err(ScanError::Empty("batch"));
        }
        let dropout = model.config().seq.dropout_p > 0.0;
        let (seed, step) = (self.cfg.seed, self.step);
        let results = self.cfg.execution.map(batch, |i, s| {
            let ds = dropout.then(|| mix(seed, step, i as u64));
            sample_gradients(model, s, ds)
        });
        let mut total = 0.0;
        let mut grads = Gradients::empty(model.params().len());
        for r in results {
            let (loss, g) = r?;
            total += loss;
            grads.merge(g);
        }
        grads.scale(T::of(1.0 / batch.len() as f64));
        let params = model.params_mut();
        params.zero_grad();
        grads.accumulate_into(params);
        clip_grad_norm(params, self.cfg.clip_norm);
        // Parameters no sample touched still need a (zero) gradient.
        for p in params.iter_mut() {
            if p.tensor.grad().is_none() {
                let zeros = vec![T::zero(); p.tensor.len()];
                p.tensor.accumulate_grad(&zeros);
            }
        }
        self.adam.step(params)?;
        params.zero_grad();
        self.step += 1;
        Ok(total / batch.len() as f64)
    }
}

/// Exact-match accuracy of beam decoding over `samples`.
pub fn sequence_accuracy<T: Scalar>(
    model: &ScanModel<T>,
    samples: &[Prepared],
    beam: BeamConfig,
    exec: Execution,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(ScanError::Empty("evaluation set"));
    }
    let hits = exec.map(samples, |_, s| {
        model.recognize_windows(&s.windows, beam).map(|r| r.text == s.label)
    });
    let mut correct = 0usize;
    for h in hits {
        correct += usize::from(h?);
    }
    Ok(correct as f64 / samples.len() as f64)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub steps: usize,
    pub mean_loss: f64,
    pub dev_accuracy: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_accuracy: f64,
    pub wall_seconds: f64,
}

/// Seeded sample order for `epoch`: a fresh shuffle truncated to the epoch size.
pub fn epoch_order(cfg: &TrainConfig, n: usize, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, 0x5eed, epoch as u64));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order.truncate(cfg.samples_per_epoch(n));
    order
}

/// Train for up to `cfg.epochs`, evaluating on `dev` after every epoch.
///
/// The model is left holding the parameters of the best dev epoch.
/// `on_epoch` sees each epoch's stats as they are produced.
pub fn train_loop<T: Scalar>(
    model: &mut ScanModel<T>,
    train: &[Prepared],
    dev: &[Prepared],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainReport> {
    if train.is_empty() {
        return Err(ScanError::Empty("training set"));
    }
    if dev.is_empty() {
        return Err(ScanError::Empty("dev set"));
    }
    model.set_dropout(cfg.dropout_p)?;
    let mut trainer = Trainer::new(cfg.clone())?;
    let beam = BeamConfig {
        width: cfg.eval_beam,
        max_len: model.config().max_label_len() + 1,
    };
    let start = Instant::now();
    let mut report = TrainReport {
        epochs: Vec::new(),
        best_epoch: 0,
        best_accuracy: -1.0,
        wall_seconds: 0.0,
    };
    let mut best: Option<ParamStore<T>> = None;
    for epoch in 1..=cfg.epochs {
        let t0 = Instant::now();
        let order = epoch_order(cfg, train.len(), epoch);
        let mut loss_sum = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Prepared> = chunk.iter().map(|&i| &train[i]).collect();
            loss_sum += trainer.step(model, &batch)?;
            steps += 1;
        }
        let dev_accuracy = sequence_accuracy(model, dev, beam, cfg.execution)?;
        let stats = EpochStats {
            epoch,
            steps,
            mean_loss: loss_sum / steps as f64,
            dev_accuracy,
            seconds: t0.elapsed().as_secs_f64(),
        };
        on_epoch(&stats);
        if dev_accuracy > report.best_accuracy {
            report.best_accuracy = dev_accuracy;
            report.best_epoch = epoch;
            best = Some(model.params().clone());
        }
        report.epochs.push(stats);
        if cfg.target_accuracy.is_some_and(|t| dev_accuracy >= t) {
            break;
        }
    }
    if let Some(best) = best {
        model.params_mut().copy_values_from(&best)?;
    }
    report.wall_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nll_examples() {
        let uniform = Tensor::<f64>::zeros(&[1, 38]);
        assert!((nll_loss(&uniform, &[Some(5)]).unwrap() - 38f64.ln()).abs() < 1e-12);

        let confident = Tensor::<f64>::from_f64(&[1, 3], &[0.0, 800.0, 0.0]).unwrap();
        assert!(nll_loss(&confident, &[Some(1)]).unwrap().abs() < 1e-12);

        // Rows with p(target) = 0.5 and 0.25.
        let (a, b) = (0.5f64.ln(), 0.25f64.ln());
        let rest = 0.25f64.ln();
        let logits = Tensor::<f64>::from_f64(&[2, 3], &[a, rest, rest, b, 0.5f64.ln(), rest]).unwrap();
        let loss = nll_loss(&logits, &[Some(0), Some(0)]).unwrap();
        assert!((loss - 8f64.ln()).abs() < 1e-12);

        let padded = nll_loss(&logits, &[Some(0), None]).unwrap();
        assert!((padded - 2f64.ln()).abs() < 1e-12);
        assert!(matches!(nll_loss(&logits, &[Some(3), None]), Err(ScanError::UnknownToken(3))));
    }

    #[test]
    fn epoch_arithmetic() {
        let cfg = TrainConfig { batch_size: 16, epoch_fraction: 1.0, ..TrainConfig::default() };
        assert_eq!(cfg.steps_per_epoch(2000), 125);
        let paper = TrainConfig::default();
        assert_eq!(paper.samples_per_epoch(1000), 10);
        assert_eq!(paper.samples_per_epoch(50), 1);
    }

    #[test]
    fn epoch_order_is_seeded_and_fresh() {
        let cfg = TrainConfig { epoch_fraction: 0.5, seed: 9, ..TrainConfig::default() };
        let a = epoch_order(&cfg, 100, 1);
        assert_eq!(a, epoch_order(&cfg, 100, 1));
        assert_ne!(a, epoch_order(&cfg, 100, 2));
        assert_eq!(a.len(), 50);
        let mut sorted = a.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 50);
    }

    #[test]
    fn empty_sets_are_rejected() {
        let mut model = ScanModel::<f32>::new(
            crate::model::ScanConfig::desk(crate::vocab::DIGITS, crate::windowing::WindowConfig::single_scale()),
            0,
        )
        .unwrap();
        let cfg = TrainConfig::desk();
        assert!(matches!(train_loop(&mut model, &[], &[], &cfg, |_| {}), Err(ScanError::Empty(_))));
        let mut trainer = Trainer::new(cfg).unwrap();
        assert!(trainer.step(&mut model, &[]).is_err());
    }

    #[test]
    fn rejects_bad_config() {
        assert!(TrainConfig { epoch_fraction: 0.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { epoch_fraction: 1.5, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..TrainConfig::default() }.validate().is_err());
    }
}
