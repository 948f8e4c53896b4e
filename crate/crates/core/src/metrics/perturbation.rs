use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::MetricError;
use crate::bundle::BBox;
use crate::tensor::{Dense, Element, Map2D};

/// Failure reported by a [`Scorer`].
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoreError {
    /// Worth retrying: timeouts, dropped connections, 5xx.
    #[error("transient scorer failure: {0}")]
    Transient(String),
    #[error("scorer rejected the request: {0}")]
    Permanent(String),
}

/// Model score for perturbed copies of one image.
pub trait Scorer: Sync {
    /// One score per image, in input order.
    fn score_batch(&self, images: &[RgbImage]) -> Result<Vec<f64>, ScoreError>;

    /// Largest batch accepted by [`Scorer::score_batch`].
    fn max_batch(&self) -> usize {
        usize::MAX
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Deletion,
    Insertion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AreaLimit {
    WholeImage,
    /// Only pixels whose centre falls inside some object box.
    BboxUnion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FillMode {
    /// Independent uniform RGB per deleted pixel.
    RandomColor,
    Black,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbationConfig {
    pub steps: usize,
    pub step_area_fraction: f64,
    pub area_limit: AreaLimit,
    /// Replacement for deleted pixels; insertion always starts from black.
    pub fill_mode: FillMode,
    pub seed: u64,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            step_area_fraction: 0.01,
            area_limit: AreaLimit::WholeImage,
            fill_mode: FillMode::RandomColor,
            seed: 0,
        }
    }
}

impl PerturbationConfig {
    fn covers_limit(&self) -> bool {
        (self.steps as f64 * self.step_area_fraction - 1.0).abs() < 1e-9
    }

    /// Cumulative number of modified pixels after each step `0..=steps`.
    pub fn schedule(&self, limit_pixels: usize) -> Vec<usize> {
        let n = limit_pixels as f64;
        (0..=self.steps)
            .map(|s| {
                if s == self.steps && self.covers_limit() {
                    limit_pixels
                } else {
                    ((s as f64 * self.step_area_fraction * n).round() as usize).min(limit_pixels)
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub direction: Direction,
    /// `(fraction of the area limit modified, score)`.
    pub samples: Vec<(f64, f64)>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CurveError {
    #[error("saliency is {saliency:?} but image is {image:?}")]
    Shape {
        saliency: (usize, usize),
        image: (usize, usize),
    },
    #[error("step fraction must be positive with steps x fraction at most 1 (span {0})")]
    Schedule(f64),
    #[error("scorer returned {got} scores for {sent} images")]
    ScoreCount { sent: usize, got: usize },
    /// The samples collected before the failure are kept.
    #[error("curve aborted after {} samples: {source}", partial.samples.len())]
    Aborted { partial: Curve, source: ScoreError },
}

/// Pixel indices (row-major) inside the area limit, most salient first;
/// ties keep row-major order.
pub fn perturbation_order<T: Element>(
    saliency: &Map2D<T>,
    area_limit: AreaLimit,
    boxes: &[BBox],
) -> Vec<usize> {
    let w = saliency.width();
    let mut idx: Vec<usize> = (0..saliency.len())
        .filter(|&i| match area_limit {
            AreaLimit::WholeImage => true,
            AreaLimit::BboxUnion => boxes.iter().any(|b| b.contains_pixel(i / w, i % w)),
        })
        .collect();
    let v = saliency.values();
    idx.sort_by(|&a, &b| v[b].partial_cmp(&v[a]).expect("finite saliency"));
    idx
}

/// Deletion or insertion curve of `image` under `saliency`.
///
/// Sample 0 scores the unmodified image (deletion) or an all-black canvas
/// (insertion); sample `s` has `round(s * step_area_fraction * N)` of the
/// `N` limit pixels modified, the last step covering all of them when the
/// schedule spans the whole limit.
pub fn perturbation_curve<T: Element>(
    image: &RgbImage,
    saliency: &Map2D<T>,
    boxes: &[BBox],
    scorer: &dyn Scorer,
    cfg: &PerturbationConfig,
    direction: Direction,
) -> Result<Curve, CurveError> {
    let (ih, iw) = (image.height() as usize, image.width() as usize);
    if saliency.shape() != (ih, iw) {
        return Err(CurveError::Shape {
            saliency: saliency.shape(),
            image: (ih, iw),
        });
    }
    let span = cfg.steps as f64 * cfg.step_area_fraction;
    let positive = cfg.steps == 0 || cfg.step_area_fraction > 0.0;
    if !(positive && span <= 1.0 + 1e-9) {
        return Err(CurveError::Schedule(span));
    }
    let order = perturbation_order(saliency, cfg.area_limit, boxes);
    let schedule = cfg.schedule(order.len());

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let fills: Vec<Rgb<u8>> = order
        .iter()
        .map(|_| match (direction, cfg.fill_mode) {
            (Direction::Deletion, FillMode::RandomColor) => Rgb(rng.random::<[u8; 3]>()),
            _ => Rgb([0, 0, 0]),
        })
        .collect();

    let mut canvas = match direction {
        Direction::Deletion => image.clone(),
        Direction::Insertion => RgbImage::new(iw as u32, ih as u32),
    };
    let mut applied = 0usize;
    let mut curve = Curve {
        direction,
        samples: Vec::with_capacity(schedule.len()),
    };
    let batch = scorer.max_batch().max(1);
    for (chunk_idx, chunk) in schedule.chunks(batch).enumerate() {
        let mut images = Vec::with_capacity(chunk.len());
        for &target in chunk {
            while applied < target {
                let p = order[applied];
                let (x, y) = ((p % iw) as u32, (p / iw) as u32);
                let px = match direction {
                    Direction::Deletion => fills[applied],
                    Direction::Insertion => *image.get_pixel(x, y),
                };
                canvas.put_pixel(x, y, px);
                applied += 1;
            }
            images.push(canvas.clone());
        }
        let scores = match scorer.score_batch(&images) {
            Ok(s) => s,
            Err(source) => {
                return Err(CurveError::Aborted {
                    partial: curve,
                    source,
                })
            }
        };
        if scores.len() != images.len() {
            return Err(CurveError::ScoreCount {
                sent: images.len(),
                got: scores.len(),
            });
        }
        let first_step = chunk_idx * batch;
        for (k, score) in scores.into_iter().enumerate() {
            let step = first_step + k;
            curve
                .samples
                .push((step as f64 * cfg.step_area_fraction, score));
        }
    }
    Ok(curve)
}

/// Trapezoidal area under the curve divided by the fraction span.
pub fn auc(curve: &Curve) -> Result<f64, MetricError> {
    let s = &curve.samples;
    if s.len() < 2 {
        return Err(MetricError::TooFewSamples {
            needed: 2,
            got: s.len(),
        });
    }
    let area: f64 = s
        .windows(2)
        .map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1))
        .sum();
    Ok(area / (s[s.len() - 1].0 - s[0].0))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Constant(f64);
    impl Scorer for Constant {
        fn score_batch(&self, images: &[RgbImage]) -> Result<Vec<f64>, ScoreError> {
            Ok(vec![self.0; images.len()])
        }
    }

    /// Fails after a fixed number of calls.
    struct Flaky {
        ok_calls: usize,
        calls: std::sync::atomic::AtomicUsize,
    }
    impl Scorer for Flaky {
        fn score_batch(&self, images: &[RgbImage]) -> Result<Vec<f64>, ScoreError> {
            let n = self.calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
            if n >= self.ok_calls {
                return Err(ScoreError::Transient("down".into()));
            }
            Ok(vec![1.0; images.len()])
        }
        fn max_batch(&self) -> usize {
            10
        }
    }

    fn gray(h: u32, w: u32) -> RgbImage {
        RgbImage::from_pixel(w, h, Rgb([100, 100, 100]))
    }

    #[test]
    fn zero_steps_scores_only_the_start() {
        let cfg = PerturbationConfig {
            steps: 0,
            ..Default::default()
        };
        let sal = Map2D::<f32>::zeros(4, 4);
        let c = perturbation_curve(&gray(4, 4), &sal, &[], &Constant(0.3), &cfg, Direction::Deletion)
            .unwrap();
        assert_eq!(c.samples, vec![(0.0, 0.3)]);
    }

    #[test]
    fn schedule_exhausts_the_limit() {
        let cfg = PerturbationConfig::default();
        for n in [1, 7, 64, 99, 100, 257, 10_000] {
            let s = cfg.schedule(n);
            assert_eq!(s.len(), 101);
            assert_eq!((s[0], s[100]), (0, n));
            assert!(s.windows(2).all(|w| w[0] <= w[1]));
        }
        let half = PerturbationConfig {
            steps: 50,
            ..Default::default()
        };
        assert_eq!(*half.schedule(200).last().unwrap(), 100);
    }

    #[test]
    fn constant_scorer_gives_flat_curve() {
        let sal = Map2D::from_fn(6, 6, |i, j| (i * 6 + j) as f32);
        let c = perturbation_curve(
            &gray(6, 6),
            &sal,
            &[],
            &Constant(0.7),
            &PerturbationConfig::default(),
            Direction::Insertion,
        )
        .unwrap();
        assert_eq!(c.samples.len(), 101);
        assert!((auc(&c).unwrap() - 0.7).abs() < 1e-12);
    }

    #[test]
    fn ranking_breaks_ties_by_index() {
        let sal = Map2D::from_rows(&[[1.0f32, 2.0], [2.0, 1.0]]);
        assert_eq!(perturbation_order(&sal, AreaLimit::WholeImage, &[]), vec![1, 2, 0, 3]);
    }

    #[test]
    fn failure_keeps_partial_samples() {
        let scorer = Flaky {
            ok_calls: 2,
            calls: Default::default(),
        };
        let sal = Map2D::<f32>::zeros(5, 5);
        let err = perturbation_curve(
            &gray(5, 5),
            &sal,
            &[],
            &scorer,
            &PerturbationConfig::default(),
            Direction::Deletion,
        )
        .unwrap_err();
        match err {
            CurveError::Aborted { partial, .. } => {
                assert_eq!(partial.samples.len(), 20);
                assert!((partial.samples[19].0 - 0.19).abs() < 1e-12);
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn auc_ramp_and_too_short() {
        let c = Curve {
            direction: Direction::Insertion,
            samples: (0..=10).map(|i| (i as f64 / 10.0, i as f64 / 10.0)).collect(),
        };
        assert!((auc(&c).unwrap() - 0.5).abs() < 1e-12);
        let short = Curve {
            direction: Direction::Insertion,
            samples: vec![(0.0, 1.0)],
        };
        assert!(auc(&short).is_err());
    }
}
