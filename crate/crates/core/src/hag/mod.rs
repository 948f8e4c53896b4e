//! The human-attention-guided explainer: forward pass, loss, analytic
//! gradient and training.

mod adam;
mod engine;
mod loss;
mod params;
mod train;

use thiserror::Error;

use crate::bundle::{BundleError, ExplanationBundle, Task};
use crate::cam::{Method, SaliencyMap};
use crate::tensor::TensorError;

pub use adam::{adam_step, AdamState};
pub use engine::PreparedSample;
pub use loss::{hag_loss, loss_and_saliency_gradient, loss_terms, LossValue};
pub use params::{
    kernel_size_for, HagOptions, HagParams, KernelParams, ObjectNorm, ParamsFile, PARAMS_SCHEMA_VERSION,
    PARAM_COUNT, PARAM_NAMES,
};
pub use train::{
    cross_validate, evaluate, fit, fold_assignment, train, CrossValidation, EpochRecord, Evaluation,
    FoldResult, TrainConfig, TrainRecord, TrainSample,
};

#[derive(Debug, Error)]
pub enum HagError {
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("classification bundle {image_id} has {count} objects, expected exactly 1")]
    ClassificationObjects { image_id: String, count: usize },
    #[error("{task} parameters need kernel size {expected}, got {actual}")]
    KernelSize {
        task: Task,
        expected: usize,
        actual: usize,
    },
    #[error("parameters contain non-finite values")]
    NonFiniteParams,
    #[error("unsupported parameter schema version {0}")]
    SchemaVersion(u32),
    #[error("image {image_id}: saliency is {saliency:?} but target is {target:?}")]
    TargetShape {
        image_id: String,
        saliency: (usize, usize),
        target: (usize, usize),
    },
    #[error("every training target is constant; nothing to fit")]
    AllConstantTargets,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("{samples} samples cannot be split into {folds} folds")]
    TooFewSamples { samples: usize, folds: usize },
    #[error("cross-validation needs at least 2 folds, got {0}")]
    FoldCount(usize),
    #[error("invalid training config: {0}")]
    Config(String),
}

/// HAG saliency for one bundle at image resolution.
pub fn hag_forward(
    bundle: &ExplanationBundle,
    params: &HagParams,
    task: Task,
    options: &HagOptions,
) -> Result<SaliencyMap, HagError> {
    params.check_task(task)?;
    let prepared = PreparedSample::new(bundle, task, *options)?;
    Ok(SaliencyMap {
        image_id: bundle.image_id.clone(),
        map: prepared.forward(params).cast(),
        method: Method::Hag,
    })
}
