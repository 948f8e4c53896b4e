//! Oracles shared by the integration test targets.
#![allow(dead_code)]

use rand::Rng;

use hagxai::bundle::Task;
use hagxai::hag::{HagOptions, HagParams, ObjectNorm, PreparedSample, PARAM_COUNT};
use hagxai::synthetic::{random_bundle, BundleShape};
use hagxai::Map2D;

pub const FD_STEP: f64 = 1e-3;

pub fn central_difference(
    sample: &PreparedSample,
    params: &HagParams,
    target: &Map2D<f64>,
    h: f64,
) -> [f64; PARAM_COUNT] {
    let base = params.to_vector();
    std::array::from_fn(|k| {
        let mut up = base;
        let mut down = base;
        up[k] += h;
        down[k] -= h;
        let lu = sample.loss(&params.with_vector(up), target).loss;
        let ld = sample.loss(&params.with_vector(down), target).loss;
        (lu - ld) / (2.0 * h)
    })
}

/// True when no pre-ReLU entry changes sign anywhere inside the
/// finite-difference stencil.
pub fn smooth_at(sample: &PreparedSample, params: &HagParams, h: f64) -> bool {
    let pattern = sample.rectifier_pattern(params);
    if pattern.iter().any(|&s| s == 0) {
        return false;
    }
    let base = params.to_vector();
    (0..PARAM_COUNT).all(|k| {
        [h, -h].iter().all(|&d| {
            let mut v = base;
            v[k] += d;
            sample.rectifier_pattern(&params.with_vector(v)) == pattern
        })
    })
}

/// `||a - n|| / max(||a||, ||n||)` in the Euclidean norm.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

fn signed(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    let v = rng.random_range(lo..hi);
    if rng.random_bool(0.5) {
        v
    } else {
        -v
    }
}

pub fn random_params(rng: &mut impl Rng, task: Task) -> HagParams {
    HagParams::initial(task).with_vector([
        rng.random_range(0.3..1.5),
        signed(rng, 0.1, 1.0),
        rng.random_range(0.3..1.5),
        signed(rng, 0.1, 1.0),
        rng.random_range(0.5..2.0),
        rng.random_range(0.5..4.0),
        rng.random_range(0.5..2.0),
        rng.random_range(0.5..6.0),
    ])
}

pub struct GradCase {
    pub sample: PreparedSample,
    pub params: HagParams,
    pub target: Map2D<f64>,
    pub options: HagOptions,
}

/// A random bundle, parameter vector, option set and nonnegative target.
pub fn random_grad_case(rng: &mut impl Rng, index: usize) -> GradCase {
    let task = if index % 4 == 3 {
        Task::Classification
    } else {
        Task::Detection
    };
    let shape = BundleShape {
        image: (rng.random_range(8..14), rng.random_range(8..14)),
        branches: if rng.random_bool(0.5) {
            vec![(4, 5)]
        } else {
            vec![(5, 5), (3, 3)]
        },
        channels: rng.random_range(1..4),
        objects: match task {
            Task::Detection => (1, 3),
            Task::Classification => (1, 1),
        },
    };
    let bundle = random_bundle(rng, &shape, &format!("grad{index}"));
    let mut options = HagOptions::for_task(task);
    options.smoothing = index % 5 != 4;
    options.learn_activations = index % 7 != 6;
    if task == Task::Detection && index % 3 == 1 {
        options.normalization = ObjectNorm::MaxMin;
    }
    let sample = PreparedSample::for_training(&bundle, task, options).unwrap();
    let (h, w) = sample.image_shape();
    let target = Map2D::from_fn(h, w, |_, _| rng.random_range(0.0..1.0));
    GradCase {
        sample,
        params: random_params(rng, task),
        target,
        options,
    }
}
