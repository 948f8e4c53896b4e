//! Untrained gradient-based explainers: Grad-CAM, Grad-CAM++, FullGrad-CAM
//! and FullGrad-CAM++, generalised to several detected objects.
//!
//! Each object's map is computed at the resolution of the branch it was
//! detected on, normalised to `[0, 1]`, upsampled to the image and summed
//! over objects in `object_id` order.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bundle::{BundleError, ExplanationBundle, ObjectSlot};
use crate::tensor::{max_min_normalize, resize_bilinear, Dense, Map2D, Stack3D};

#[derive(Debug, Error)]
pub enum CamError {
    #[error(transparent)]
    Bundle(#[from] BundleError),
}

/// Saliency method identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Gc,
    Gcpp,
    Fgc,
    Fgcpp,
    Hag,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Gc,
        Method::Gcpp,
        Method::Fgc,
        Method::Fgcpp,
        Method::Hag,
    ];

    pub fn code(&self) -> &'static str {
        match self {
            Method::Gc => "gc",
            Method::Gcpp => "gcpp",
            Method::Fgc => "fgc",
            Method::Fgcpp => "fgcpp",
            Method::Hag => "hag",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.code())
    }
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .iter()
            .copied()
            .find(|m| m.code() == s)
            .ok_or_else(|| {
                let valid: Vec<&str> = Method::ALL.iter().map(|m| m.code()).collect();
                format!("unknown method {s:?}; valid methods: {}", valid.join(", "))
            })
    }
}

/// A saliency map at image resolution.
///
/// `map` holds the raw object sum, which may exceed 1 where objects overlap.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub image_id: String,
    pub map: Map2D,
    pub method: Method,
}

impl SaliencyMap {
    /// Max-min normalised copy used for rendering.
    pub fn display_map(&self) -> Map2D {
        max_min_normalize(&self.map)
    }
}

/// Grad-CAM++ coefficients for one channel:
/// `g^2 / (2 g^2 + sum(A) g^3)`, zero where the denominator vanishes.
pub fn grad_cam_pp_alpha(gradients: &Map2D<f64>, activations: &Map2D<f64>) -> Map2D<f64> {
    let act_sum = activations.sum();
    gradients.map_elements(|g| alpha(g, act_sum))
}

#[inline]
fn alpha(g: f64, act_sum: f64) -> f64 {
    let g2 = g * g;
    let denom = 2.0 * g2 + act_sum * g2 * g;
    if denom != 0.0 {
        g2 / denom
    } else {
        0.0
    }
}

/// Pre-ReLU class activation map of one object at layer resolution.
fn raw_object_map(method: Method, grads: &Stack3D, acts: &Stack3D) -> Map2D<f64> {
    let (h, w, ch) = acts.shape();
    let z = (h * w) as f64;
    let g = grads.values();
    let a = acts.values();
    let channel_weighted = |weights: Vec<f64>| {
        Map2D::from_fn(h, w, |r, c| {
            let base = (r * w + c) * ch;
            (0..ch).map(|k| weights[k] * a[base + k] as f64).sum()
        })
    };
    match method {
        Method::Gc => {
            let mut weights = vec![0.0f64; ch];
            for p in 0..h * w {
                for k in 0..ch {
                    weights[k] += g[p * ch + k] as f64;
                }
            }
            channel_weighted(weights.into_iter().map(|s| s / z).collect())
        }
        Method::Gcpp => {
            let mut act_sums = vec![0.0f64; ch];
            for p in 0..h * w {
                for k in 0..ch {
                    act_sums[k] += a[p * ch + k] as f64;
                }
            }
            let mut weights = vec![0.0f64; ch];
            for p in 0..h * w {
                for k in 0..ch {
                    let gv = g[p * ch + k] as f64;
                    weights[k] += alpha(gv, act_sums[k]) * gv.max(0.0);
                }
            }
            channel_weighted(weights.into_iter().map(|s| s / z).collect())
        }
        Method::Fgc | Method::Fgcpp | Method::Hag => {
            let rectify = method != Method::Fgc;
            Map2D::from_fn(h, w, |r, c| {
                let base = (r * w + c) * ch;
                (0..ch)
                    .map(|k| {
                        let gv = g[base + k] as f64;
                        let gv = if rectify { gv.max(0.0) } else { gv };
                        gv * a[base + k] as f64
                    })
                    .sum()
            })
        }
    }
}

/// One object's normalised contribution, upsampled to image resolution.
pub fn object_contribution(
    method: Method,
    bundle: &ExplanationBundle,
    obj: &ObjectSlot,
) -> Map2D<f64> {
    let raw = raw_object_map(method, &obj.gradients, bundle.activations_for(obj));
    let normalized = max_min_normalize(&raw.relu());
    resize_bilinear(&normalized, bundle.image_h, bundle.image_w)
}

fn explain(method: Method, bundle: &ExplanationBundle) -> Result<SaliencyMap, CamError> {
    assert!(method != Method::Hag, "HAG maps are produced by the hag module");
    bundle.validate()?;
    let (h, w) = (bundle.image_h, bundle.image_w);
    if bundle.objects.is_empty() {
        log::warn!(
            "bundle {} has no objects; emitting an all-zero {} map",
            bundle.image_id,
            method
        );
    }
    let mut acc = vec![0.0f64; h * w];
    for obj in bundle.objects_in_order() {
        let contrib = object_contribution(method, bundle, obj);
        for (a, v) in acc.iter_mut().zip(contrib.values()) {
            *a += v;
        }
    }
    let map = Map2D::new(h, w, acc.into_iter().map(|v| v as f32).collect())
        .expect("finite object sum");
    Ok(SaliencyMap {
        image_id: bundle.image_id.clone(),
        map,
        method,
    })
}

/// Grad-CAM: channels weighted by spatially averaged gradients.
pub fn grad_cam(bundle: &ExplanationBundle) -> Result<SaliencyMap, CamError> {
    explain(Method::Gc, bundle)
}

/// Grad-CAM++: channel weights pool `alpha * ReLU(gradient)`.
pub fn grad_cam_pp(bundle: &ExplanationBundle) -> Result<SaliencyMap, CamError> {
    explain(Method::Gcpp, bundle)
}

/// FullGrad-CAM: gradient and activation multiplied pointwise, no pooling.
pub fn fullgrad_cam(bundle: &ExplanationBundle) -> Result<SaliencyMap, CamError> {
    explain(Method::Fgc, bundle)
}

/// FullGrad-CAM++: as FullGrad-CAM with the gradient rectified first.
pub fn fullgrad_cam_pp(bundle: &ExplanationBundle) -> Result<SaliencyMap, CamError> {
    explain(Method::Fgcpp, bundle)
}

/// Dispatches to one of the four untrained methods.
///
/// # Panics
/// Panics when called with [`Method::Hag`]; HAG needs learned parameters.
pub fn explain_with(method: Method, bundle: &ExplanationBundle) -> Result<SaliencyMap, CamError> {
    explain(method, bundle)
}
