//! Forward pass of the HAG explainer and its exact reverse-mode gradient with
//! respect to the eight parameters.
//!
//! Everything runs in `f64`. Gaussian smoothing is applied as two separable
//! passes with the unit-amplitude profile, so the amplitude enters as a plain
//! factor and the variance derivative needs two extra separable passes.

use super::params::{HagOptions, HagParams, ObjectNorm, PARAM_COUNT};
use super::{loss, HagError, LossValue};
use crate::bundle::{ExplanationBundle, Task};
use crate::tensor::{
    convolve_separable, resize_bilinear, resize_bilinear_transpose, Dense, GaussianKernelSpec,
    Map2D,
};

struct ChannelTerms {
    g_pos: Map2D<f64>,
    g_neg: Map2D<f64>,
    a_pos: Map2D<f64>,
    a_neg: Map2D<f64>,
}

struct PreparedObject {
    channels: Vec<ChannelTerms>,
    height: usize,
    width: usize,
}

/// A bundle split into the positive and negative parts of every gradient and
/// activation channel, ready for repeated evaluation under changing
/// parameters.
pub struct PreparedSample {
    image_id: String,
    image_h: usize,
    image_w: usize,
    task: Task,
    options: HagOptions,
    objects: Vec<PreparedObject>,
}

fn split(map: Map2D<f64>) -> (Map2D<f64>, Map2D<f64>) {
    let pos = map.map_elements(|v| v.max(0.0));
    let neg = map.map_elements(|v| v.min(0.0));
    (pos, neg)
}

fn sep(map: &Map2D<f64>, col: &[f64], row: &[f64]) -> Map2D<f64> {
    convolve_separable(map, col, row, 1.0).expect("odd kernel profile")
}

/// `d/dd [outer(p, p) * x]` where `p` depends on the denominator `d`.
fn sep_denominator_derivative(map: &Map2D<f64>, spec: &GaussianKernelSpec) -> Map2D<f64> {
    let p = spec.profile();
    let dp = spec.profile_denominator_derivative();
    sep(map, &dp, &p)
        .add(&sep(map, &p, &dp))
        .expect("same shape")
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn dot(a: &Map2D<f64>, b: &Map2D<f64>) -> f64 {
    a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum()
}

struct ChannelTrace {
    /// `phi_grad(g)` before smoothing.
    grad_act: Map2D<f64>,
    /// Unit-amplitude smoothed positive / negative gradient parts.
    smooth_pos: Option<Map2D<f64>>,
    smooth_neg: Option<Map2D<f64>>,
    /// Gradient term entering the product.
    grad_term: Map2D<f64>,
    act_term: Map2D<f64>,
}

struct ObjectTrace {
    channels: Vec<ChannelTrace>,
    combined: Map2D<f64>,
    rectified: Map2D<f64>,
}

struct Trace {
    objects: Vec<ObjectTrace>,
    object_sum: Map2D<f64>,
    /// Object sum convolved with the unit-amplitude global profile.
    smoothed_unit: Option<Map2D<f64>>,
    output: Map2D<f64>,
}

impl PreparedSample {
    /// Prepares a bundle for explanation; objects stay at their branch
    /// resolution.
    pub fn new(
        bundle: &ExplanationBundle,
        task: Task,
        options: HagOptions,
    ) -> Result<Self, HagError> {
        bundle.validate()?;
        if task == Task::Classification && bundle.objects.len() != 1 {
            return Err(HagError::ClassificationObjects {
                image_id: bundle.image_id.clone(),
                count: bundle.objects.len(),
            });
        }
        let objects = bundle
            .objects_in_order()
            .into_iter()
            .map(|obj| {
                let acts = bundle.activations_for(obj).cast::<f64>();
                let grads = obj.gradients.cast::<f64>();
                let channels = grads
                    .to_channels()
                    .into_iter()
                    .zip(acts.to_channels())
                    .map(|(g, a)| {
                        let (g_pos, g_neg) = split(g);
                        let (a_pos, a_neg) = split(a);
                        ChannelTerms {
                            g_pos,
                            g_neg,
                            a_pos,
                            a_neg,
                        }
                    })
                    .collect();
                PreparedObject {
                    channels,
                    height: acts.height(),
                    width: acts.width(),
                }
            })
            .collect();
        Ok(Self {
            image_id: bundle.image_id.clone(),
            image_h: bundle.image_h,
            image_w: bundle.image_w,
            task,
            options,
            objects,
        })
    }

    /// Prepares a bundle for training: all branches are first resized to the
    /// largest branch resolution.
    pub fn for_training(
        bundle: &ExplanationBundle,
        task: Task,
        options: HagOptions,
    ) -> Result<Self, HagError> {
        Self::new(&bundle.unify_branch_resolution(), task, options)
    }

    pub fn image_id(&self) -> &str {
        &self.image_id
    }

    pub fn image_shape(&self) -> (usize, usize) {
        (self.image_h, self.image_w)
    }

    pub fn options(&self) -> &HagOptions {
        &self.options
    }

    fn trace(&self, params: &HagParams) -> Trace {
        let smoothing = self.options.smoothing;
        let norm = self.options.effective_norm(self.task);
        let grad_profile = params.grad_kernel.profile();
        let (gp, gn) = (params.grad_slope_pos, params.grad_slope_neg);
        let (ap, an) = (params.act_slope_pos, params.act_slope_neg);
        let amp = params.grad_kernel.amplitude;

        let mut object_sum = Map2D::zeros(self.image_h, self.image_w);
        let mut objects = Vec::with_capacity(self.objects.len());
        for obj in &self.objects {
            let mut combined = Map2D::<f64>::zeros(obj.height, obj.width);
            let mut channels = Vec::with_capacity(obj.channels.len());
            for ch in &obj.channels {
                let grad_act = ch.g_pos.scale(gp).add(&ch.g_neg.scale(gn)).expect("shape");
                let (smooth_pos, smooth_neg, grad_term) = if smoothing {
                    let sp = sep(&ch.g_pos, &grad_profile, &grad_profile);
                    let sn = sep(&ch.g_neg, &grad_profile, &grad_profile);
                    let term = sp.scale(amp * gp).add(&sn.scale(amp * gn)).expect("shape");
                    (Some(sp), Some(sn), term)
                } else {
                    (None, None, grad_act.clone())
                };
                let act_term = ch.a_pos.scale(ap).add(&ch.a_neg.scale(an)).expect("shape");
                for ((c, g), a) in combined
                    .values_mut()
                    .iter_mut()
                    .zip(grad_term.values())
                    .zip(act_term.values())
                {
                    *c += g * a;
                }
                channels.push(ChannelTrace {
                    grad_act,
                    smooth_pos,
                    smooth_neg,
                    grad_term,
                    act_term,
                });
            }
            let rectified = combined.relu();
            let normalized = match norm {
                ObjectNorm::Area => crate::tensor::area_normalize(&rectified, self.options.epsilon),
                ObjectNorm::MaxMin => crate::tensor::max_min_normalize(&rectified),
                ObjectNorm::None => rectified.clone(),
            };
            let up = resize_bilinear(&normalized, self.image_h, self.image_w);
            for (s, u) in object_sum.values_mut().iter_mut().zip(up.values()) {
                *s += u;
            }
            objects.push(ObjectTrace {
                channels,
                combined,
                rectified,
            });
        }

        let (smoothed_unit, output) = if smoothing {
            let p = params.global_kernel.profile();
            let unit = sep(&object_sum, &p, &p);
            let out = unit.scale(params.global_kernel.amplitude);
            (Some(unit), out)
        } else {
            (None, object_sum.clone())
        };
        Trace {
            objects,
            object_sum,
            smoothed_unit,
            output,
        }
    }

    /// Saliency map at image resolution.
    pub fn forward(&self, params: &HagParams) -> Map2D<f64> {
        self.trace(params).output
    }

    /// Sign of every pre-ReLU object map entry. The loss is smooth in the
    /// parameters wherever this pattern does not change.
    pub fn rectifier_pattern(&self, params: &HagParams) -> Vec<i8> {
        self.trace(params)
            .objects
            .iter()
            .flat_map(|o| o.combined.values().iter().map(|&v| sign(v) as i8))
            .collect()
    }

    pub fn loss(&self, params: &HagParams, target: &Map2D<f64>) -> LossValue {
        loss::loss_terms(&self.forward(params), target)
    }

    /// Loss and its exact gradient with respect to
    /// [`HagParams::to_vector`]. Subgradients at kinks are 0.
    pub fn loss_and_grad(
        &self,
        params: &HagParams,
        target: &Map2D<f64>,
    ) -> (LossValue, [f64; PARAM_COUNT]) {
        let trace = self.trace(params);
        let (value, d_output) = loss::loss_and_saliency_gradient(&trace.output, target);
        (value, self.backward(params, &trace, &d_output))
    }

    fn backward(
        &self,
        params: &HagParams,
        trace: &Trace,
        d_output: &Map2D<f64>,
    ) -> [f64; PARAM_COUNT] {
        let mut grad = [0.0f64; PARAM_COUNT];
        let smoothing = self.options.smoothing;
        let norm = self.options.effective_norm(self.task);

        // Final smoothing S = A * (p p^T) * S0.
        let d_sum = if smoothing {
            let spec = &params.global_kernel;
            let unit = trace.smoothed_unit.as_ref().expect("smoothing trace");
            grad[6] = dot(d_output, unit);
            let dd = sep_denominator_derivative(&trace.object_sum, spec);
            grad[7] = spec.amplitude * 2.0 * sign(spec.variance) * dot(d_output, &dd);
            // symmetric kernel: the adjoint is the same correlation
            let p = spec.profile();
            sep(d_output, &p, &p).scale(spec.amplitude)
        } else {
            d_output.clone()
        };

        let grad_spec = &params.grad_kernel;
        for (obj, tr) in self.objects.iter().zip(&trace.objects) {
            let d_norm = resize_bilinear_transpose(&d_sum, obj.height, obj.width);
            let d_rect = normalization_backward(norm, &tr.rectified, &d_norm, self.options.epsilon);
            let d_comb: Vec<f64> = d_rect
                .values()
                .iter()
                .zip(tr.combined.values())
                .map(|(g, &c)| if c > 0.0 { *g } else { 0.0 })
                .collect();
            let d_comb = Map2D::new(obj.height, obj.width, d_comb).expect("finite");

            for (ch, ct) in obj.channels.iter().zip(&tr.channels) {
                let d_act = d_comb.hadamard(&ct.grad_term).expect("shape");
                grad[2] += dot(&d_act, &ch.a_pos);
                grad[3] += dot(&d_act, &ch.a_neg);
                let d_grad = d_comb.hadamard(&ct.act_term).expect("shape");
                if smoothing {
                    let sp = ct.smooth_pos.as_ref().expect("smoothing trace");
                    let sn = ct.smooth_neg.as_ref().expect("smoothing trace");
                    let (dp, dn) = (dot(&d_grad, sp), dot(&d_grad, sn));
                    grad[0] += grad_spec.amplitude * dp;
                    grad[1] += grad_spec.amplitude * dn;
                    grad[4] += params.grad_slope_pos * dp + params.grad_slope_neg * dn;
                    if grad_spec.variance != 0.0 {
                        let dd = sep_denominator_derivative(&ct.grad_act, grad_spec);
                        grad[5] += grad_spec.amplitude
                            * 2.0
                            * sign(grad_spec.variance)
                            * dot(&d_grad, &dd);
                    }
                } else {
                    grad[0] += dot(&d_grad, &ch.g_pos);
                    grad[1] += dot(&d_grad, &ch.g_neg);
                }
            }
        }
        if !self.options.learn_activations {
            grad[..4].iter_mut().for_each(|g| *g = 0.0);
        }
        grad
    }
}

fn normalization_backward(
    norm: ObjectNorm,
    rectified: &Map2D<f64>,
    d_norm: &Map2D<f64>,
    epsilon: f64,
) -> Map2D<f64> {
    match norm {
        ObjectNorm::None => d_norm.clone(),
        ObjectNorm::Area => {
            let denom = rectified.sum() + epsilon;
            let weighted = dot(d_norm, rectified);
            d_norm.map_elements(|g| g / denom - weighted / (denom * denom))
        }
        ObjectNorm::MaxMin => {
            let v = rectified.values();
            let (mut imin, mut imax) = (0, 0);
            for (i, &x) in v.iter().enumerate() {
                if x < v[imin] {
                    imin = i;
                }
                if x > v[imax] {
                    imax = i;
                }
            }
            let (lo, span) = (v[imin], v[imax] - v[imin]);
            if span <= 0.0 {
                return Map2D::zeros(rectified.height(), rectified.width());
            }
            let g = d_norm.values();
            let total: f64 = g.iter().sum();
            let weighted: f64 = g.iter().zip(v).map(|(g, x)| g * (x - lo)).sum();
            let mut out: Vec<f64> = g.iter().map(|g| g / span).collect();
            out[imin] += -total / span + weighted / (span * span);
            out[imax] -= weighted / (span * span);
            Map2D::new(rectified.height(), rectified.width(), out).expect("finite")
        }
    }
}
