//! In-memory explanation bundles: one layer's activations for an image plus a
//! gradient stack per detected object.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Stack3D;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BundleError {
    #[error("bundle {image_id}: image size must be positive")]
    EmptyImage { image_id: String },
    #[error("bundle {image_id}: object {object_id} references missing branch {branch_index}")]
    MissingBranch {
        image_id: String,
        object_id: u32,
        branch_index: usize,
    },
    #[error(
        "bundle {image_id}: object {object_id} gradient shape {gradient:?} differs from \
         branch activation shape {activation:?}"
    )]
    GradientShape {
        image_id: String,
        object_id: u32,
        gradient: (usize, usize, usize),
        activation: (usize, usize, usize),
    },
    #[error("bundle {image_id}: object {object_id} score {score} outside [0, 1]")]
    Score {
        image_id: String,
        object_id: u32,
        score: f64,
    },
    #[error("bundle {image_id}: object {object_id} box {bbox:?} is empty or outside the image")]
    BoundingBox {
        image_id: String,
        object_id: u32,
        bbox: BBox,
    },
    #[error("bundle {image_id}: duplicate object id {object_id}")]
    DuplicateObject { image_id: String, object_id: u32 },
}

/// Which kind of model produced the bundle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Detection,
    Classification,
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Task::Detection => "detection",
            Task::Classification => "classification",
        })
    }
}

impl std::str::FromStr for Task {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "detection" => Ok(Task::Detection),
            "classification" => Ok(Task::Classification),
            other => Err(format!(
                "unknown task {other:?} (expected detection or classification)"
            )),
        }
    }
}

/// Axis-aligned box `(x0, y0, x1, y1)` in image pixel coordinates; `x1`,
/// `y1` are exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0).max(0.0) * (self.y1 - self.y0).max(0.0)
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let ix = (self.x1.min(other.x1) - self.x0.max(other.x0)).max(0.0);
        let iy = (self.y1.min(other.y1) - self.y0.max(other.y0)).max(0.0);
        let inter = ix * iy;
        let union = self.area() + other.area() - inter;
        if union > 0.0 {
            inter / union
        } else {
            0.0
        }
    }

    /// Whether the pixel with top-left corner `(col, row)` has its centre
    /// inside the box.
    pub fn contains_pixel(&self, row: usize, col: usize) -> bool {
        let (x, y) = (col as f64 + 0.5, row as f64 + 0.5);
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    fn is_valid_in(&self, width: usize, height: usize) -> bool {
        [self.x0, self.y0, self.x1, self.y1].iter().all(|v| v.is_finite())
            && self.x0 >= 0.0
            && self.y0 >= 0.0
            && self.x0 < self.x1
            && self.y0 < self.y1
            && self.x1 <= width as f64
            && self.y1 <= height as f64
    }
}

/// Activations of the explained layer for one scale branch.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchTensors {
    pub branch_id: u32,
    pub layer_name: String,
    pub activations: Stack3D,
}

/// One detected object (or the predicted class, for classifiers).
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectSlot {
    pub object_id: u32,
    pub branch_index: usize,
    /// Gradient of the object's class score with respect to the branch
    /// activations.
    pub gradients: Stack3D,
    pub score: f64,
    pub bbox: BBox,
    pub class_label: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExplanationBundle {
    pub image_id: String,
    pub image_h: usize,
    pub image_w: usize,
    pub branches: Vec<BranchTensors>,
    pub objects: Vec<ObjectSlot>,
}

impl ExplanationBundle {
    pub fn validate(&self) -> Result<(), BundleError> {
        let image_id = || self.image_id.clone();
        if self.image_h == 0 || self.image_w == 0 {
            return Err(BundleError::EmptyImage {
                image_id: image_id(),
            });
        }
        let mut seen = std::collections::BTreeSet::new();
        for obj in &self.objects {
            if !seen.insert(obj.object_id) {
                return Err(BundleError::DuplicateObject {
                    image_id: image_id(),
                    object_id: obj.object_id,
                });
            }
            let branch =
                self.branches
                    .get(obj.branch_index)
                    .ok_or_else(|| BundleError::MissingBranch {
                        image_id: image_id(),
                        object_id: obj.object_id,
                        branch_index: obj.branch_index,
                    })?;
            if obj.gradients.shape() != branch.activations.shape() {
                return Err(BundleError::GradientShape {
                    image_id: image_id(),
                    object_id: obj.object_id,
                    gradient: obj.gradients.shape(),
                    activation: branch.activations.shape(),
                });
            }
            if !(0.0..=1.0).contains(&obj.score) {
                return Err(BundleError::Score {
                    image_id: image_id(),
                    object_id: obj.object_id,
                    score: obj.score,
                });
            }
            if !obj.bbox.is_valid_in(self.image_w, self.image_h) {
                return Err(BundleError::BoundingBox {
                    image_id: image_id(),
                    object_id: obj.object_id,
                    bbox: obj.bbox,
                });
            }
        }
        Ok(())
    }

    /// Objects sorted by id; all object sums run in this order.
    pub fn objects_in_order(&self) -> Vec<&ObjectSlot> {
        let mut objs: Vec<&ObjectSlot> = self.objects.iter().collect();
        objs.sort_by_key(|o| o.object_id);
        objs
    }

    pub fn activations_for(&self, obj: &ObjectSlot) -> &Stack3D {
        &self.branches[obj.branch_index].activations
    }

    /// Largest branch resolution `(h, w)` (by pixel count, first wins).
    pub fn max_branch_resolution(&self) -> Option<(usize, usize)> {
        self.branches
            .iter()
            .map(|b| (b.activations.height(), b.activations.width()))
            .fold(None, |best, hw| match best {
                Some((bh, bw)) if bh * bw >= hw.0 * hw.1 => Some((bh, bw)),
                _ => Some(hw),
            })
    }

    /// Copy of the bundle with every branch (activations and the gradients of
    /// its objects) bilinearly resized to the largest branch resolution.
    pub fn unify_branch_resolution(&self) -> Self {
        let Some((h, w)) = self.max_branch_resolution() else {
            return self.clone();
        };
        let mut out = self.clone();
        for b in &mut out.branches {
            b.activations = b.activations.resize_bilinear(h, w);
        }
        for o in &mut out.objects {
            o.gradients = o.gradients.resize_bilinear(h, w);
        }
        out
    }
}
