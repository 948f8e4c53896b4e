//! Minibatch Adam training with an exponential learning-rate decay, early
//! stopping on a validation split and k-fold cross-validation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::engine::PreparedSample;
use super::params::{HagOptions, HagParams, PARAM_COUNT};
use super::HagError;
use crate::attention::AttentionMap;
use crate::bundle::{ExplanationBundle, Task};
use crate::metrics::rmse;
use crate::tensor::Map2D;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub task: Task,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub lr_init: f64,
    pub lr_final: f64,
    pub lr_decay_epochs: usize,
    pub early_stop_patience: Option<usize>,
    pub folds: usize,
    pub seed: u64,
    pub options: HagOptions,
}

impl TrainConfig {
    pub fn for_task(task: Task) -> Self {
        let (batch_size, max_epochs, early_stop_patience) = match task {
            Task::Detection => (30, 120, Some(30)),
            Task::Classification => (144, 200, None),
        };
        Self {
            task,
            batch_size,
            max_epochs,
            lr_init: 0.05,
            lr_final: 0.005,
            lr_decay_epochs: 120,
            early_stop_patience,
            folds: 5,
            seed: 0,
            options: HagOptions::for_task(task),
        }
    }

    /// Learning rate for a zero-based epoch: geometric interpolation from
    /// `lr_init` to `lr_final` over `lr_decay_epochs`, constant afterwards.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        if self.lr_decay_epochs == 0 {
            return self.lr_final;
        }
        let t = epoch.min(self.lr_decay_epochs) as f64 / self.lr_decay_epochs as f64;
        self.lr_init.powf(1.0 - t) * self.lr_final.powf(t)
    }

    fn check(&self) -> Result<(), HagError> {
        if self.batch_size == 0 {
            return Err(HagError::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr_init > 0.0 && self.lr_final > 0.0) {
            return Err(HagError::Config("learning rates must be positive".into()));
        }
        Ok(())
    }
}

/// One training example: a prepared bundle and its attention map.
pub struct TrainSample {
    pub prepared: PreparedSample,
    pub target: Map2D<f64>,
}

impl TrainSample {
    pub fn new(
        bundle: &ExplanationBundle,
        target: &AttentionMap,
        task: Task,
        options: HagOptions,
    ) -> Result<Self, HagError> {
        Self::from_map(bundle, &target.map.cast(), task, options)
    }

    pub fn from_map(
        bundle: &ExplanationBundle,
        target: &Map2D<f64>,
        task: Task,
        options: HagOptions,
    ) -> Result<Self, HagError> {
        let prepared = PreparedSample::for_training(bundle, task, options)?;
        if prepared.image_shape() != target.shape() {
            return Err(HagError::TargetShape {
                image_id: bundle.image_id.clone(),
                saliency: prepared.image_shape(),
                target: target.shape(),
            });
        }
        Ok(Self {
            prepared,
            target: target.clone(),
        })
    }

    pub fn image_id(&self) -> &str {
        self.prepared.image_id()
    }

    fn target_is_constant(&self) -> bool {
        let (lo, hi) = self.target.min_max();
        hi <= lo
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub params: [f64; PARAM_COUNT],
}

/// Loss history of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub fold: Option<usize>,
    pub epochs: Vec<EpochRecord>,
    /// Validation loss of the initial parameters, before any update.
    pub initial_val_loss: Option<f64>,
    pub best_val_loss: Option<f64>,
    /// Epoch whose parameters were kept; `None` means the initial ones.
    pub best_epoch: Option<usize>,
    pub validation_checks: usize,
    pub stopped_early: bool,
    /// Samples whose PCC term was undefined at least once.
    pub flagged_samples: Vec<String>,
}

impl TrainRecord {
    /// `epoch,train_loss,val_loss` lines with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss\n");
        for e in &self.epochs {
            let val = e.val_loss.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{}\n", e.epoch, e.train_loss, val));
        }
        out
    }
}

/// Mean plausibility of a parameter set over samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub loss: f64,
    /// Mean over samples with a defined PCC.
    pub pcc: Option<f64>,
    pub rmse: f64,
    pub samples: usize,
}

pub fn evaluate(samples: &[TrainSample], params: &HagParams) -> Evaluation {
    let refs: Vec<&TrainSample> = samples.iter().collect();
    evaluate_refs(&refs, params)
}

fn mean_loss(samples: &[&TrainSample], params: &HagParams) -> f64 {
    let losses: Vec<f64> = samples
        .par_iter()
        .map(|s| s.prepared.loss(params, &s.target).loss)
        .collect();
    losses.iter().sum::<f64>() / losses.len() as f64
}

/// Trains from `init` on `train`, early-stopping against `validation`.
///
/// The best validation loss starts at the initial parameters' loss; training
/// stops once more than `patience` consecutive epochs fail to improve on it,
/// and the best parameters seen are returned.
pub fn fit(
    train: &[&TrainSample],
    validation: &[&TrainSample],
    config: &TrainConfig,
    init: HagParams,
) -> Result<(HagParams, TrainRecord), HagError> {
    config.check()?;
    init.check_task(config.task)?;
    if train.is_empty() {
        return Err(HagError::EmptyDataset);
    }
    if train.iter().all(|s| s.target_is_constant()) {
        return Err(HagError::AllConstantTargets);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = init;
    let mut adam = AdamState::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut flagged = std::collections::BTreeSet::new();

    let mut record = TrainRecord {
        fold: None,
        epochs: Vec::new(),
        initial_val_loss: None,
        best_val_loss: None,
        best_epoch: None,
        validation_checks: 0,
        stopped_early: false,
        flagged_samples: Vec::new(),
    };
    let mut best = (!validation.is_empty()).then(|| (mean_loss(validation, &params), params));
    record.initial_val_loss = best.map(|b| b.0);
    let mut stale = 0usize;

    for epoch in 0..config.max_epochs {
        let lr = config.learning_rate(epoch);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let results: Vec<(super::LossValue, [f64; PARAM_COUNT])> = batch
                .par_iter()
                .map(|&i| train[i].prepared.loss_and_grad(&params, &train[i].target))
                .collect();
            let mut grad = [0.0f64; PARAM_COUNT];
            for (&i, (value, g)) in batch.iter().zip(&results) {
                epoch_loss += value.loss;
                if value.pcc_undefined() {
                    flagged.insert(train[i].image_id().to_string());
                }
                for k in 0..PARAM_COUNT {
                    grad[k] += g[k];
                }
            }
            let n = batch.len() as f64;
            grad.iter_mut().for_each(|g| *g /= n);
            let mut v = params.to_vector();
            adam.step(&mut v, &grad, lr);
            params = params.with_vector(v);
        }
        let train_loss = epoch_loss / train.len() as f64;

        let val_loss = (!validation.is_empty()).then(|| mean_loss(validation, &params));
        record.epochs.push(EpochRecord {
            epoch,
            learning_rate: lr,
            train_loss,
            val_loss,
            params: params.to_vector(),
        });
        if let (Some(v), Some((best_loss, best_params))) = (val_loss, best.as_mut()) {
            record.validation_checks += 1;
            if v < *best_loss {
                *best_loss = v;
                *best_params = params;
                record.best_epoch = Some(epoch);
                stale = 0;
            } else {
                stale += 1;
            }
            if let Some(patience) = config.early_stop_patience {
                if stale > patience {
                    record.stopped_early = true;
                    break;
                }
            }
        }
    }

    record.flagged_samples = flagged.into_iter().collect();
    record.best_val_loss = best.map(|b| b.0);
    let chosen = match (config.early_stop_patience, best) {
        (Some(_), Some((_, best_params))) => best_params,
        _ => {
            record.best_epoch = record.epochs.last().map(|e| e.epoch);
            params
        }
    };
    Ok((chosen, record))
}

/// Seeded partition of `0..n` into `folds` groups whose sizes differ by at
/// most one.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>, HagError> {
    if folds < 2 {
        return Err(HagError::FoldCount(folds));
    }
    if n < folds {
        return Err(HagError::TooFewSamples { samples: n, folds });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / folds, n % folds);
    let mut out = Vec::with_capacity(folds);
    let mut start = 0;
    for f in 0..folds {
        let len = base + usize::from(f < extra);
        out.push(idx[start..start + len].to_vec());
        start += len;
    }
    Ok(out)
}

/// Trains on a whole dataset, holding out the first seeded fold for
/// validation when the dataset has at least `config.folds` samples.
pub fn train(
    dataset: &[TrainSample],
    config: &TrainConfig,
) -> Result<(HagParams, TrainRecord), HagError> {
    if dataset.is_empty() {
        return Err(HagError::EmptyDataset);
    }
    let init = HagParams::initial(config.task);
    if dataset.len() < config.folds.max(2) {
        let all: Vec<&TrainSample> = dataset.iter().collect();
        return fit(&all, &[], config, init);
    }
    let folds = fold_assignment(dataset.len(), config.folds, config.seed)?;
    let (train_set, val_set) = split_fold(dataset, &folds, 0);
    fit(&train_set, &val_set, config, init)
}

fn split_fold<'a>(
    dataset: &'a [TrainSample],
    folds: &[Vec<usize>],
    holdout: usize,
) -> (Vec<&'a TrainSample>, Vec<&'a TrainSample>) {
    let mut in_val = vec![false; dataset.len()];
    for &i in &folds[holdout] {
        in_val[i] = true;
    }
    let train: Vec<&TrainSample> = (0..dataset.len())
        .filter(|&i| !in_val[i])
        .map(|i| &dataset[i])
        .collect();
    let val: Vec<&TrainSample> = folds[holdout].iter().map(|&i| &dataset[i]).collect();
    (train, val)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub params: [f64; PARAM_COUNT],
    pub train_indices: Vec<usize>,
    pub validation_indices: Vec<usize>,
    pub record: TrainRecord,
    pub validation: Evaluation,
    pub test: Option<Evaluation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValidation {
    pub folds: Vec<FoldResult>,
    pub mean_validation: Evaluation,
    pub mean_test: Option<Evaluation>,
}

fn mean_evaluation<'a>(evals: impl Iterator<Item = &'a Evaluation>) -> Option<Evaluation> {
    let evals: Vec<&Evaluation> = evals.collect();
    if evals.is_empty() {
        return None;
    }
    let n = evals.len() as f64;
    let pccs: Vec<f64> = evals.iter().filter_map(|e| e.pcc).collect();
    Some(Evaluation {
        loss: evals.iter().map(|e| e.loss).sum::<f64>() / n,
        pcc: (!pccs.is_empty()).then(|| pccs.iter().sum::<f64>() / pccs.len() as f64),
        rmse: evals.iter().map(|e| e.rmse).sum::<f64>() / n,
        samples: evals.iter().map(|e| e.samples).sum(),
    })
}

/// k-fold cross-validation; every fold's model is also scored on `test`
/// when given.
pub fn cross_validate(
    dataset: &[TrainSample],
    config: &TrainConfig,
    test: Option<&[TrainSample]>,
) -> Result<CrossValidation, HagError> {
    let assignment = fold_assignment(dataset.len(), config.folds, config.seed)?;
    let mut folds = Vec::with_capacity(config.folds);
    for fold in 0..config.folds {
        let (train_set, val_set) = split_fold(dataset, &assignment, fold);
        let fold_config = TrainConfig {
            seed: config.seed.wrapping_add(fold as u64),
            ..config.clone()
        };
        let (params, mut record) =
            fit(&train_set, &val_set, &fold_config, HagParams::initial(config.task))?;
        record.fold = Some(fold);
        let val_owned: Vec<usize> = assignment[fold].clone();
        let validation = evaluate_refs(&val_set, &params);
        let test_eval = test.filter(|t| !t.is_empty()).map(|t| evaluate(t, &params));
        let mut train_indices: Vec<usize> =
            (0..dataset.len()).filter(|i| !val_owned.contains(i)).collect();
        train_indices.sort_unstable();
        folds.push(FoldResult {
            fold,
            params: params.to_vector(),
            train_indices,
            validation_indices: val_owned,
            record,
            validation,
            test: test_eval,
        });
    }
    let mean_validation =
        mean_evaluation(folds.iter().map(|f| &f.validation)).expect("at least two folds");
    let mean_test = mean_evaluation(folds.iter().filter_map(|f| f.test.as_ref()));
    Ok(CrossValidation {
        folds,
        mean_validation,
        mean_test,
    })
}

fn evaluate_refs(samples: &[&TrainSample], params: &HagParams) -> Evaluation {
    let per: Vec<(f64, Option<f64>, f64)> = samples
        .par_iter()
        .map(|s| {
            let out = s.prepared.forward(params);
            let v = super::loss::loss_terms(&out, &s.target);
            (v.loss, v.pcc, rmse(&out, &s.target).expect("same shape"))
        })
        .collect();
    let n = per.len() as f64;
    let pccs: Vec<f64> = per.iter().filter_map(|p| p.1).collect();
    Evaluation {
        loss: per.iter().map(|p| p.0).sum::<f64>() / n,
        pcc: (!pccs.is_empty()).then(|| pccs.iter().sum::<f64>() / pccs.len() as f64),
        rmse: per.iter().map(|p| p.2).sum::<f64>() / n,
        samples: per.len(),
    }
}
