//! Bias-corrected Adam.

use crate::numerics::tensor::{ParamSet, Parameter, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            ..Default::default()
        }
    }
}

/// Per-parameter moment estimates.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub first_moment: Tensor,
    pub second_moment: Tensor,
    pub step_count: u64,
}

impl AdamState {
    pub fn for_parameter(param: &Parameter) -> Self {
        AdamState {
            first_moment: Tensor::zeros(param.value.shape().to_vec()),
            second_moment: Tensor::zeros(param.value.shape().to_vec()),
            step_count: 0,
        }
    }
}

/// One in-place update of a single parameter from its accumulated gradient.
pub fn adam_step(param: &mut Parameter, state: &mut AdamState, cfg: &AdamConfig) {
    state.step_count += 1;
    let t = state.step_count as i32;
    let bias1 = 1.0 - cfg.beta1.powi(t);
    let bias2 = 1.0 - cfg.beta2.powi(t);
    let m = state.first_moment.values_mut();
    let v = state.second_moment.values_mut();
    let g = param.grad.values();
    for (((value, m), v), &g) in param
        .value
        .values_mut()
        .iter_mut()
        .zip(m.iter_mut())
        .zip(v.iter_mut())
        .zip(g)
    {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bias1;
        let v_hat = *v / bias2;
        *value -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
}

/// Adam over a whole parameter set.
#[derive(Clone, Debug)]
pub struct Optimizer {
    pub config: AdamConfig,
    pub states: Vec<AdamState>,
}

impl Optimizer {
    pub fn new(params: &ParamSet, config: AdamConfig) -> Self {
        Optimizer {
            config,
            states: params.iter().map(AdamState::for_parameter).collect(),
        }
    }

    /// Step every parameter from its accumulated gradient, then reset grads.
    pub fn step(&mut self, params: &mut ParamSet) {
        use crate::numerics::tensor::ParamId;
        for (i, state) in self.states.iter_mut().enumerate() {
            adam_step(params.get_mut(ParamId(i)), state, &self.config);
        }
        params.reset_grads();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param_with_grad(value: f64, grad: f64) -> Parameter {
        let mut p = Parameter::new("p", Tensor::from_vec(vec![value]));
        p.grad.values_mut()[0] = grad;
        p
    }

    #[test]
    fn zero_gradient_leaves_value_unchanged() {
        let mut p = param_with_grad(0.3, 0.0);
        let mut s = AdamState::for_parameter(&p);
        for _ in 0..5 {
            adam_step(&mut p, &mut s, &AdamConfig::default());
        }
        assert_eq!(p.value.values()[0], 0.3);
        assert_eq!(s.step_count, 5);
    }

    #[test]
    fn first_step_magnitude_is_close_to_learning_rate() {
        let cfg = AdamConfig::with_learning_rate(1e-3);
        for &g in &[5.0, -0.7, 123.0] {
            let mut p = param_with_grad(1.0, g);
            let mut s = AdamState::for_parameter(&p);
            adam_step(&mut p, &mut s, &cfg);
            let delta = (p.value.values()[0] - 1.0).abs();
            assert!(
                delta >= 0.9 * cfg.learning_rate && delta <= cfg.learning_rate,
                "delta {delta} for grad {g}"
            );
            let moved_down = p.value.values()[0] < 1.0;
            assert_eq!(moved_down, g > 0.0);
        }
    }

    #[test]
    fn identical_gradients_give_identical_updates() {
        let cfg = AdamConfig::default();
        let mut a = param_with_grad(0.1, 2.5);
        let mut b = param_with_grad(0.1, 2.5);
        let mut sa = AdamState::for_parameter(&a);
        let mut sb = AdamState::for_parameter(&b);
        adam_step(&mut a, &mut sa, &cfg);
        adam_step(&mut b, &mut sb, &cfg);
        assert_eq!(a.value.values(), b.value.values());
    }

    #[test]
    fn step_count_increments() {
        let mut p = param_with_grad(0.0, 1.0);
        let mut s = AdamState::for_parameter(&p);
        adam_step(&mut p, &mut s, &AdamConfig::default());
        assert_eq!(s.step_count, 1);
        adam_step(&mut p, &mut s, &AdamConfig::default());
        assert_eq!(s.step_count, 2);
    }
}
