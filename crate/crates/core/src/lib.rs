//! Saliency explanations for image classifiers and object detectors.
//!
//! The crate computes Grad-CAM style maps from exported activation and
//! gradient tensors, trains the eight-parameter human-attention-guided
//! explainer (HAG) against eye-tracking attention maps, and scores maps for
//! plausibility (PCC, RMSE) and faithfulness (deletion / insertion AUC).

pub mod attention;
pub mod bridge;
pub mod bundle;
pub mod cam;
pub mod hag;
pub mod metrics;
pub mod synthetic;
pub mod tensor;

pub use bundle::{BBox, BranchTensors, ExplanationBundle, ObjectSlot, Task};
pub use cam::{Method, SaliencyMap};
pub use tensor::{Map2D, Stack3D};
