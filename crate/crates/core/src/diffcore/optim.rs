//! SGD and Adam over flat parameter bundles.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use super::mlp::ParamBundle;
use crate::math;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptKind {
    /// Adam with the usual 0.9 / 0.999 / 1e-8 constants.
    pub fn adam_default() -> Self {
        OptKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum OptimError {
    Shape { expected: usize, got: usize },
    /// Gradient contained a NaN or infinity; the step is refused.
    NonFiniteGradient,
}

impl fmt::Display for OptimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OptimError::Shape { expected, got } => {
                write!(f, "gradient length {got} does not match parameter length {expected}")
            }
            OptimError::NonFiniteGradient => write!(f, "non-finite gradient; step refused"),
        }
    }
}

#[cfg(any(test, feature = "std"))]
impl std::error::Error for OptimError {}

/// Optimizer state for one parameter bundle. Moment accumulators are only
/// allocated for Adam.
#[derive(Clone, Debug, PartialEq)]
pub struct OptState {
    kind: OptKind,
    lr: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl OptState {
    pub fn new(kind: OptKind, lr: f64, dim: usize) -> Self {
        let (m, v) = match kind {
            OptKind::Sgd => (Vec::new(), Vec::new()),
            OptKind::Adam { .. } => (vec![0.0; dim], vec![0.0; dim]),
        };
        OptState {
            kind,
            lr,
            step: 0,
            m,
            v,
        }
    }

    pub fn sgd(lr: f64) -> Self {
        Self::new(OptKind::Sgd, lr, 0)
    }

    pub fn adam(lr: f64, dim: usize) -> Self {
        Self::new(OptKind::adam_default(), lr, dim)
    }

    pub fn kind(&self) -> OptKind {
        self.kind
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.m, &self.v)
    }

    /// Restores accumulators and step count, e.g. when loading a checkpoint.
    pub fn restore(&mut self, step: u64, m: Vec<f64>, v: Vec<f64>) {
        self.step = step;
        self.m = m;
        self.v = v;
    }
}

/// One update. SGD: `p <- p - lr*g`. Adam: bias-corrected first/second
/// moments. Returns fresh parameters and state; non-finite gradients refuse
/// the step so a single bad batch cannot poison the parameters.
pub fn optimizer_step(
    params: &ParamBundle,
    grads: &ParamBundle,
    state: &OptState,
) -> Result<(ParamBundle, OptState), OptimError> {
    if grads.len() != params.len() {
        return Err(OptimError::Shape {
            expected: params.len(),
            got: grads.len(),
        });
    }
    if !grads.is_finite() {
        return Err(OptimError::NonFiniteGradient);
    }
    let mut next = params.clone();
    let mut next_state = state.clone();
    next_state.step = state.step + 1;
    match state.kind {
        OptKind::Sgd => {
            for (p, g) in next.values_mut().iter_mut().zip(grads.values()) {
                *p -= state.lr * g;
            }
        }
        OptKind::Adam { beta1, beta2, eps } => {
            debug_assert_eq!(state.m.len(), params.len());
            let t = next_state.step as i32;
            let bc1 = 1.0 - libm::pow(beta1, t as f64);
            let bc2 = 1.0 - libm::pow(beta2, t as f64);
            for (i, (p, g)) in next
                .values_mut()
                .iter_mut()
                .zip(grads.values())
                .enumerate()
            {
                let m = beta1 * state.m[i] + (1.0 - beta1) * g;
                let v = beta2 * state.v[i] + (1.0 - beta2) * g * g;
                next_state.m[i] = m;
                next_state.v[i] = v;
                let m_hat = m / bc1;
                let v_hat = v / bc2;
                *p -= state.lr * m_hat / (math::sqrt(v_hat) + eps);
            }
        }
    }
    Ok((next, next_state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::mlp::{Activation, MlpSpec, ParamBundle};
    use alloc::vec;

    fn scalar_bundle(p: f64) -> ParamBundle {
        // A 1->1 layer holds exactly (w, b); tests use w as the single knob.
        let spec = MlpSpec::new(vec![1, 1], vec![], Activation::Identity).unwrap();
        ParamBundle::from_values(spec.layout(), vec![p, 0.0]).unwrap()
    }

    #[test]
    fn sgd_step_by_hand() {
        let params = scalar_bundle(1.0);
        let grads = ParamBundle::from_values(params.layout().clone(), vec![2.0, 0.0]).unwrap();
        let state = OptState::sgd(0.1);
        let (next, state) = optimizer_step(&params, &grads, &state).unwrap();
        assert!((next.values()[0] - 0.8).abs() < 1e-15);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn adam_first_step_is_minus_lr() {
        // Bias correction makes m_hat = g and v_hat = g^2 on step one, so the
        // update is lr * g / (|g| + eps) ~= lr * sign(g).
        let params = scalar_bundle(0.0);
        let grads = ParamBundle::from_values(params.layout().clone(), vec![1.0, 0.0]).unwrap();
        let state = OptState::adam(0.001, params.len());
        let (next, _) = optimizer_step(&params, &grads, &state).unwrap();
        let expected = -0.001 * 1.0 / (1.0 + 1e-8);
        assert!((next.values()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let params = scalar_bundle(0.7);
        let grads = ParamBundle::zeros_like(&params);
        for state in [OptState::sgd(0.5), OptState::adam(0.5, params.len())] {
            let (next, _) = optimizer_step(&params, &grads, &state).unwrap();
            assert_eq!(next.values(), params.values());
        }
    }

    #[test]
    fn non_finite_gradient_refuses_step() {
        let params = scalar_bundle(0.7);
        let grads =
            ParamBundle::from_values(params.layout().clone(), vec![f64::NAN, 0.0]).unwrap();
        let state = OptState::sgd(0.5);
        assert_eq!(
            optimizer_step(&params, &grads, &state).unwrap_err(),
            OptimError::NonFiniteGradient
        );
    }
}
