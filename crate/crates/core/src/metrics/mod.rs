//! Plausibility, faithfulness and the statistics used to compare methods.

mod perturbation;
mod report;
mod stats;

use thiserror::Error;

use crate::tensor::{Dense, Element, Map2D};

pub use perturbation::{
    auc, perturbation_curve, perturbation_order, AreaLimit, Curve, CurveError, Direction,
    FillMode, PerturbationConfig, ScoreError, Scorer,
};
pub use report::{
    curves_csv, curves_svg, load_condition_labels, parse_condition_labels, results_csv,
    stratified_eval, summarize, ConditionGroup, ConditionLabel, ConditionRow, ConditionTable,
    ImageResult, MeanStd, MethodSummary,
};
pub use stats::{pearson_with_p, welch_t_test, Correlation, TTest};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("maps differ in shape: {left:?} vs {right:?}")]
    Shape {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("{0} is undefined for constant input")]
    Undefined(&'static str),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("inputs have different lengths: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("no condition label for images: {}", .0.join(", "))]
    MissingLabels(Vec<String>),
    #[error("condition labels line {line}: {message}")]
    Labels { line: u64, message: String },
}

fn check_shapes<T: Element>(a: &Map2D<T>, b: &Map2D<T>) -> Result<(), MetricError> {
    if a.shape() != b.shape() {
        return Err(MetricError::Shape {
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(())
}

/// Pearson correlation of two maps viewed as flat vectors.
pub fn pcc<T: Element>(a: &Map2D<T>, b: &Map2D<T>) -> Result<f64, MetricError> {
    check_shapes(a, b)?;
    let (ma, mb) = (a.mean(), b.mean());
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.values().iter().zip(b.values()) {
        let (dx, dy) = (x.as_f64() - ma, y.as_f64() - mb);
        ab += dx * dy;
        aa += dx * dx;
        bb += dy * dy;
    }
    if aa <= 0.0 || bb <= 0.0 {
        return Err(MetricError::Undefined("PCC"));
    }
    Ok((ab / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0))
}

/// `||a - b||_2 / (H W)`: the L2 norm over the pixel count, not its root.
pub fn rmse<T: Element>(a: &Map2D<T>, b: &Map2D<T>) -> Result<f64, MetricError> {
    check_shapes(a, b)?;
    let sq: f64 = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x.as_f64() - y.as_f64()).powi(2))
        .sum();
    Ok(sq.sqrt() / a.len() as f64)
}
