use super::params::{HagParams, PARAM_COUNT};

/// Moment estimates for Adam over the eight parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: [f64; PARAM_COUNT],
    pub second_moment: [f64; PARAM_COUNT],
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamState {
    fn default() -> Self {
        Self {
            first_moment: [0.0; PARAM_COUNT],
            second_moment: [0.0; PARAM_COUNT],
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamState {
    /// Bias-corrected Adam update of a raw parameter vector, in place.
    pub fn step(
        &mut self,
        params: &mut [f64; PARAM_COUNT],
        grads: &[f64; PARAM_COUNT],
        lr: f64,
    ) {
        self.step_count += 1;
        let t = self.step_count as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..PARAM_COUNT {
            let g = grads[i];
            self.first_moment[i] = self.beta1 * self.first_moment[i] + (1.0 - self.beta1) * g;
            self.second_moment[i] =
                self.beta2 * self.second_moment[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.first_moment[i] / c1;
            let v_hat = self.second_moment[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Functional form of one Adam step on [`HagParams`].
pub fn adam_step(
    params: &HagParams,
    grads: &[f64; PARAM_COUNT],
    state: &AdamState,
    lr: f64,
) -> (HagParams, AdamState) {
    let mut state = state.clone();
    let mut v = params.to_vector();
    state.step(&mut v, grads, lr);
    (params.with_vector(v), state)
}
