//! Seeded synthetic bundles and attention targets for tests, benchmarks and
//! parameter-recovery experiments.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bundle::{BBox, BranchTensors, ExplanationBundle, ObjectSlot, Task};
use crate::hag::{HagOptions, HagParams, PreparedSample};
use crate::tensor::{Map2D, Stack3D};

/// Size ranges for randomly drawn bundles.
#[derive(Debug, Clone, PartialEq)]
pub struct BundleShape {
    pub image: (usize, usize),
    /// Resolution of each branch.
    pub branches: Vec<(usize, usize)>,
    pub channels: usize,
    /// Inclusive range of object counts.
    pub objects: (usize, usize),
}

impl BundleShape {
    pub fn single(image: (usize, usize), layer: (usize, usize), channels: usize, objects: usize) -> Self {
        Self {
            image,
            branches: vec![layer],
            channels,
            objects: (objects, objects),
        }
    }
}

fn blob_channel(rng: &mut impl Rng, h: usize, w: usize, noise: f64, offset: f64) -> Vec<f64> {
    let (cy, cx) = (rng.random_range(0.0..h as f64), rng.random_range(0.0..w as f64));
    let s = rng.random_range(0.6..0.25 * (h.max(w) as f64) + 0.7);
    let amp = rng.random_range(0.5..2.0) * if rng.random_bool(0.8) { 1.0 } else { -1.0 };
    (0..h * w)
        .map(|i| {
            let (y, x) = ((i / w) as f64, (i % w) as f64);
            let r2 = (y - cy).powi(2) + (x - cx).powi(2);
            amp * (-r2 / (2.0 * s * s)).exp() + offset + noise * rng.random_range(-1.0..1.0)
        })
        .collect()
}

fn stack_from(h: usize, w: usize, channels: Vec<Vec<f64>>) -> Stack3D {
    let c = channels.len();
    let mut values = vec![0.0f32; h * w * c];
    for (k, ch) in channels.iter().enumerate() {
        for (i, v) in ch.iter().enumerate() {
            values[i * c + k] = *v as f32;
        }
    }
    Stack3D::new(h, w, c, values).expect("finite synthetic values")
}

/// A random valid bundle: blob-shaped activations with both signs and
/// gradients mixing a per-channel offset, a blob and noise.
pub fn random_bundle(rng: &mut impl Rng, shape: &BundleShape, image_id: &str) -> ExplanationBundle {
    let (ih, iw) = shape.image;
    let branches: Vec<BranchTensors> = shape
        .branches
        .iter()
        .enumerate()
        .map(|(i, &(h, w))| BranchTensors {
            branch_id: i as u32,
            layer_name: format!("layer{i}"),
            activations: stack_from(
                h,
                w,
                (0..shape.channels)
                    .map(|_| blob_channel(rng, h, w, 0.3, -0.1))
                    .collect(),
            ),
        })
        .collect();
    let n_obj = rng.random_range(shape.objects.0..=shape.objects.1);
    let mut ids: Vec<u32> = (0..(n_obj as u32 * 3).max(1)).collect();
    ids.shuffle(rng);
    let objects = (0..n_obj)
        .map(|m| {
            let branch_index = rng.random_range(0..branches.len());
            let (h, w) = shape.branches[branch_index];
            let gradients = stack_from(
                h,
                w,
                (0..shape.channels)
                    .map(|_| {
                        let offset = rng.random_range(-0.5..1.0);
                        blob_channel(rng, h, w, 0.4, offset)
                    })
                    .collect(),
            );
            let x0 = rng.random_range(0.0..iw as f64 * 0.6);
            let y0 = rng.random_range(0.0..ih as f64 * 0.6);
            let x1 = rng.random_range(x0 + 1.0..=iw as f64);
            let y1 = rng.random_range(y0 + 1.0..=ih as f64);
            ObjectSlot {
                object_id: ids[m],
                branch_index,
                gradients,
                score: rng.random_range(0.3..1.0),
                bbox: BBox::new(x0, y0, x1, y1),
                class_label: format!("class{}", m % 3),
            }
        })
        .collect();
    ExplanationBundle {
        image_id: image_id.to_string(),
        image_h: ih,
        image_w: iw,
        branches,
        objects,
    }
}

/// `n` bundles from one seed, with ids `syn_0000`, `syn_0001`, ...
pub fn random_bundles(n: usize, shape: &BundleShape, seed: u64) -> Vec<ExplanationBundle> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| random_bundle(&mut rng, shape, &format!("syn_{i:04}")))
        .collect()
}

/// Parameters used to generate recovery targets: a leaky gradient
/// activation with a negative lower slope, a damped activation side and
/// kernels away from their initial variances.
pub fn hidden_params(task: Task) -> HagParams {
    HagParams::initial(task).with_vector([1.2, -0.4, 0.9, 0.35, 1.0, 1.5, 1.3, 5.0])
}

/// One synthetic training example.
pub struct SyntheticSample {
    pub bundle: ExplanationBundle,
    pub target: Map2D<f64>,
}

/// `samples` random bundles whose targets are the HAG output under
/// `generator`, all drawn from one seed.
pub fn recovery_dataset(
    samples: usize,
    shape: &BundleShape,
    task: Task,
    generator: &HagParams,
    seed: u64,
) -> Vec<SyntheticSample> {
    let options = HagOptions::for_task(task);
    random_bundles(samples, shape, seed)
        .into_iter()
        .map(|bundle| {
            let target = PreparedSample::for_training(&bundle, task, options)
                .expect("valid synthetic bundle")
                .forward(generator);
            SyntheticSample { bundle, target }
        })
        .collect()
}
