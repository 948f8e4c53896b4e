use serde::{Deserialize, Serialize};

use super::HagError;
use crate::bundle::Task;
use crate::tensor::{GaussianKernelSpec, DEFAULT_EPSILON};

/// Number of trainable scalars.
pub const PARAM_COUNT: usize = 8;

/// Names of the entries of [`HagParams::to_vector`], in order.
pub const PARAM_NAMES: [&str; PARAM_COUNT] = [
    "grad_slope_pos",
    "grad_slope_neg",
    "act_slope_pos",
    "act_slope_neg",
    "grad_kernel_amplitude",
    "grad_kernel_variance",
    "global_kernel_amplitude",
    "global_kernel_variance",
];

pub const PARAMS_SCHEMA_VERSION: u32 = 1;

/// Side length of both smoothing kernels for a task.
pub fn kernel_size_for(task: Task) -> usize {
    match task {
        Task::Detection => 21,
        Task::Classification => 9,
    }
}

/// The eight learnable scalars of the HAG explainer.
///
/// The gradient-side activation starts as ReLU `(1, 0)` and the
/// activation-side one as the identity `(1, 1)`, so fresh parameters with
/// smoothing disabled reproduce FullGrad-CAM++.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HagParams {
    pub grad_slope_pos: f64,
    pub grad_slope_neg: f64,
    pub act_slope_pos: f64,
    pub act_slope_neg: f64,
    pub grad_kernel: GaussianKernelSpec,
    pub global_kernel: GaussianKernelSpec,
}

impl HagParams {
    pub fn initial(task: Task) -> Self {
        let size = kernel_size_for(task);
        let variance = match task {
            Task::Detection => 3.0,
            Task::Classification => 1.0,
        };
        Self {
            grad_slope_pos: 1.0,
            grad_slope_neg: 0.0,
            act_slope_pos: 1.0,
            act_slope_neg: 1.0,
            grad_kernel: GaussianKernelSpec::new(size, 1.0, variance),
            global_kernel: GaussianKernelSpec::new(size, 1.0, variance),
        }
    }

    pub fn kernel_size(&self) -> usize {
        self.grad_kernel.size
    }

    pub fn to_vector(&self) -> [f64; PARAM_COUNT] {
        [
            self.grad_slope_pos,
            self.grad_slope_neg,
            self.act_slope_pos,
            self.act_slope_neg,
            self.grad_kernel.amplitude,
            self.grad_kernel.variance,
            self.global_kernel.amplitude,
            self.global_kernel.variance,
        ]
    }

    /// Same kernel sizes and epsilons, new trainable values.
    pub fn with_vector(&self, v: [f64; PARAM_COUNT]) -> Self {
        Self {
            grad_slope_pos: v[0],
            grad_slope_neg: v[1],
            act_slope_pos: v[2],
            act_slope_neg: v[3],
            grad_kernel: GaussianKernelSpec {
                amplitude: v[4],
                variance: v[5],
                ..self.grad_kernel
            },
            global_kernel: GaussianKernelSpec {
                amplitude: v[6],
                variance: v[7],
                ..self.global_kernel
            },
        }
    }

    pub fn check_task(&self, task: Task) -> Result<(), HagError> {
        let expected = kernel_size_for(task);
        for spec in [&self.grad_kernel, &self.global_kernel] {
            if spec.size != expected {
                return Err(HagError::KernelSize {
                    task,
                    expected,
                    actual: spec.size,
                });
            }
            spec.validate()?;
        }
        if self.to_vector().iter().any(|v| !v.is_finite()) {
            return Err(HagError::NonFiniteParams);
        }
        Ok(())
    }

    pub fn to_file(&self, task: Task, seed: Option<u64>) -> ParamsFile {
        ParamsFile {
            task,
            kernel_size: self.kernel_size(),
            grad_slopes: [self.grad_slope_pos, self.grad_slope_neg],
            act_slopes: [self.act_slope_pos, self.act_slope_neg],
            grad_kernel: KernelParams {
                amplitude: self.grad_kernel.amplitude,
                variance: self.grad_kernel.variance,
            },
            global_kernel: KernelParams {
                amplitude: self.global_kernel.amplitude,
                variance: self.global_kernel.variance,
            },
            seed,
            schema_version: PARAMS_SCHEMA_VERSION,
        }
    }
}

/// Serialized form of trained parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsFile {
    pub task: Task,
    pub kernel_size: usize,
    pub grad_slopes: [f64; 2],
    pub act_slopes: [f64; 2],
    pub grad_kernel: KernelParams,
    pub global_kernel: KernelParams,
    #[serde(default)]
    pub seed: Option<u64>,
    pub schema_version: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelParams {
    #[serde(rename = "A")]
    pub amplitude: f64,
    #[serde(rename = "v")]
    pub variance: f64,
}

impl ParamsFile {
    pub fn to_params(&self) -> Result<HagParams, HagError> {
        if self.schema_version != PARAMS_SCHEMA_VERSION {
            return Err(HagError::SchemaVersion(self.schema_version));
        }
        let kernel = |k: &KernelParams| GaussianKernelSpec {
            size: self.kernel_size,
            amplitude: k.amplitude,
            variance: k.variance,
            epsilon: DEFAULT_EPSILON,
        };
        let params = HagParams {
            grad_slope_pos: self.grad_slopes[0],
            grad_slope_neg: self.grad_slopes[1],
            act_slope_pos: self.act_slopes[0],
            act_slope_neg: self.act_slopes[1],
            grad_kernel: kernel(&self.grad_kernel),
            global_kernel: kernel(&self.global_kernel),
        };
        params.check_task(self.task)?;
        Ok(params)
    }
}

/// How each object's map is normalised before the object sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectNorm {
    /// Divide by total activated mass (detection default).
    Area,
    /// Max-min rescale, as in the untrained CAM methods.
    MaxMin,
    None,
}

/// Ablation switches. Disabled components keep their parameters fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HagOptions {
    /// Apply the two Gaussian kernels (otherwise both act as a delta).
    pub smoothing: bool,
    /// Train the four activation slopes.
    pub learn_activations: bool,
    /// Object normalisation for detection; classification never normalises.
    pub normalization: ObjectNorm,
    pub epsilon: f64,
}

impl HagOptions {
    pub fn for_task(task: Task) -> Self {
        Self {
            smoothing: true,
            learn_activations: true,
            normalization: match task {
                Task::Detection => ObjectNorm::Area,
                Task::Classification => ObjectNorm::None,
            },
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub(crate) fn effective_norm(&self, task: Task) -> ObjectNorm {
        match task {
            Task::Detection => self.normalization,
            Task::Classification => ObjectNorm::None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn initialization_contract() {
        let d = HagParams::initial(Task::Detection);
        assert_eq!(d.to_vector(), [1.0, 0.0, 1.0, 1.0, 1.0, 3.0, 1.0, 3.0]);
        assert_eq!(d.kernel_size(), 21);
        let c = HagParams::initial(Task::Classification);
        assert_eq!(c.to_vector(), [1.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
        assert_eq!(c.kernel_size(), 9);
    }

    #[test]
    fn vector_round_trip_and_json_schema() {
        let p = HagParams::initial(Task::Detection)
            .with_vector([0.5, -0.2, 1.1, 0.3, 2.0, 4.0, 0.7, 1.5]);
        assert_eq!(p.with_vector(p.to_vector()), p);
        let file = p.to_file(Task::Detection, Some(7));
        let json = serde_json::to_value(&file).unwrap();
        assert_eq!(json["grad_kernel"]["A"], 2.0);
        assert_eq!(json["global_kernel"]["v"], 1.5);
        assert_eq!(json["grad_slopes"][1], -0.2);
        assert_eq!(json["kernel_size"], 21);
        assert_eq!(json["schema_version"], 1);
        let back: ParamsFile = serde_json::from_value(json).unwrap();
        assert_eq!(back.to_params().unwrap(), p);
    }

    #[test]
    fn kernel_size_must_match_task() {
        let p = HagParams::initial(Task::Classification);
        assert!(matches!(
            p.check_task(Task::Detection),
            Err(HagError::KernelSize { expected: 21, actual: 9, .. })
        ));
    }
}
