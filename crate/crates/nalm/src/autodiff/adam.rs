//! Adam with bias correction and optional element-wise gradient clipping.

use crate::autodiff::graph::Tensor;
use crate::matrix::Matrix;

#[derive(Clone, Debug)]
pub struct AdamState {
    first: Vec<Matrix>,
    second: Vec<Matrix>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    /// Default coefficients: beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
    pub fn new(params: &[&Tensor]) -> Self {
        let first = params.iter().map(|p| Matrix::zeros(p.value.rows(), p.value.cols())).collect();
        let second = params.iter().map(|p| Matrix::zeros(p.value.rows(), p.value.cols())).collect();
        AdamState { first, second, step: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    /// Clears the moment accumulators and the step counter (used when a model
    /// is reinitialized mid-run).
    pub fn reset(&mut self) {
        for m in &mut self.first {
            m.fill(0.0);
        }
        for v in &mut self.second {
            v.fill(0.0);
        }
        self.step = 0;
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update over `params`, in place.
///
/// When `grad_clip` is set, each gradient element is clamped into the interval
/// before entering the moment estimates.
pub fn adam_step(params: &mut [&mut Tensor], state: &mut AdamState, lr: f64, grad_clip: Option<(f64, f64)>) {
    assert_eq!(params.len(), state.first.len(), "optimizer state does not match parameter list");
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        if !p.requires_grad {
            continue;
        }
        let m = &mut state.first[i];
        let v = &mut state.second[i];
        debug_assert_eq!(m.shape(), p.value.shape());
        let value = p.value.as_mut_slice();
        let grad = p.grad.as_slice();
        let ms = m.as_mut_slice();
        let vs = v.as_mut_slice();
        for j in 0..value.len() {
            let mut g = grad[j];
            if let Some((lo, hi)) = grad_clip {
                g = g.clamp(lo, hi);
            }
            ms[j] = state.beta1 * ms[j] + (1.0 - state.beta1) * g;
            vs[j] = state.beta2 * vs[j] + (1.0 - state.beta2) * g * g;
            let m_hat = ms[j] / bc1;
            let v_hat = vs[j] / bc2;
            value[j] -= lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(v: f64, grad: f64) -> Tensor {
        let mut t = Tensor::new(Matrix::filled(1, 1, v), true);
        t.grad.set(0, 0, grad);
        t
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        for &g in &[0.5, -2.0, 1e-3] {
            let mut p = scalar_param(1.0, g);
            let mut state = AdamState::new(&[&p]);
            adam_step(&mut [&mut p], &mut state, 1e-3, None);
            let delta = p.value.get(0, 0) - 1.0;
            // After bias correction the first step is -lr * g/|g| up to eps.
            assert!((delta + 1e-3 * g.signum()).abs() < 1e-6, "g={g} delta={delta}");
        }
    }

    #[test]
    fn clipped_gradient_behaves_like_boundary_value() {
        let mut clipped = scalar_param(0.0, 5.0);
        let mut boundary = scalar_param(0.0, 0.1);
        let mut s1 = AdamState::new(&[&clipped]);
        let mut s2 = AdamState::new(&[&boundary]);
        adam_step(&mut [&mut clipped], &mut s1, 1e-3, Some((-0.1, 0.1)));
        adam_step(&mut [&mut boundary], &mut s2, 1e-3, None);
        assert_eq!(clipped.value.get(0, 0), boundary.value.get(0, 0));
    }

    #[test]
    fn zero_gradient_leaves_param_unchanged() {
        let mut p = scalar_param(2.5, 0.0);
        let mut state = AdamState::new(&[&p]);
        for _ in 0..10 {
            adam_step(&mut [&mut p], &mut state, 1e-3, None);
        }
        assert_eq!(p.value.get(0, 0), 2.5);
    }

    #[test]
    fn zero_lr_freezes_params() {
        let mut p = scalar_param(2.0, 1.0);
        let mut state = AdamState::new(&[&p]);
        for _ in 0..100 {
            adam_step(&mut [&mut p], &mut state, 0.0, None);
        }
        assert_eq!(p.value.get(0, 0), 2.0);
    }
}
