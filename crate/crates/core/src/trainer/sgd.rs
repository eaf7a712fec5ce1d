//! Momentum SGD with coupled L2 weight decay:
//!
//! ```text
//! g ← ∇w + λ·w        (λ only for parameters marked for decay)
//! v ← μ·v + g
//! w ← w − η·v
//! ```

use crate::nn::{ModelState, RunningUpdate, BN_MOMENTUM};

#[derive(Debug, Clone)]
pub struct MomentumSgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<f64>>,
}

impl MomentumSgd {
    pub fn new(momentum: f64, weight_decay: f64, state: &ModelState) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: state.params.iter().map(|p| vec![0.0; p.data.len()]).collect(),
        }
    }

    pub fn step(&mut self, state: &mut ModelState, grads: &[Vec<f64>], lr: f64) {
        assert_eq!(grads.len(), state.params.len(), "one gradient per parameter");
        for ((param, grad), vel) in state.params.iter_mut().zip(grads).zip(&mut self.velocity) {
            let decay = if param.decay { self.weight_decay } else { 0.0 };
            for ((w, g), v) in param.data.iter_mut().zip(grad).zip(vel.iter_mut()) {
                let d = g + decay * *w;
                *v = self.momentum * *v + d;
                *w -= lr * *v;
            }
        }
    }
}

/// Folds batch statistics into running buffers (exponential average).
pub fn apply_running_updates(state: &mut ModelState, updates: &[RunningUpdate]) {
    for u in updates {
        for (r, m) in state.buffers[u.mean_buffer].data.iter_mut().zip(&u.mean) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
        }
        for (r, v) in state.buffers[u.var_buffer].data.iter_mut().zip(&u.unbiased_var) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamTensor;

    fn scalar_state(w: f64, decay: bool) -> ModelState {
        ModelState {
            params: vec![ParamTensor {
                name: "w".into(),
                shape: vec![1],
                data: vec![w],
                decay,
            }],
            buffers: vec![],
        }
    }

    /// Loss ½·a·(w − b)², gradient a·(w − b).
    #[test]
    fn matches_hand_computed_sequence_on_scalar_quadratic() {
        let (a, b) = (2.0, 3.0);
        let (mu, lambda, lr) = (0.9, 1e-4, 0.1);
        let mut state = scalar_state(0.5, true);
        let mut opt = MomentumSgd::new(mu, lambda, &state);

        // independently unrolled by hand
        let mut w = 0.5f64;
        let mut v = 0.0f64;
        let mut expected = Vec::new();
        for _ in 0..5 {
            let g = a * (w - b) + lambda * w;
            v = mu * v + g;
            w -= lr * v;
            expected.push(w);
        }

        for want in expected {
            let grad = a * (state.params[0].data[0] - b);
            opt.step(&mut state, &[vec![grad]], lr);
            let got = state.params[0].data[0];
            assert!(((got - want) / want).abs() <= 1e-10, "{got} vs {want}");
        }
    }

    #[test]
    fn first_steps_by_hand() {
        // w0 = 1, grad 0 → only decay acts: d = 1e-4, v = 1e-4, w = 1 - 1e-5
        let mut state = scalar_state(1.0, true);
        let mut opt = MomentumSgd::new(0.9, 1e-4, &state);
        opt.step(&mut state, &[vec![0.0]], 0.1);
        assert!((state.params[0].data[0] - (1.0 - 1e-5)).abs() < 1e-15);
        // second step: d = 1e-4·(1 − 1e-5), v = 0.9e-4 + d
        opt.step(&mut state, &[vec![0.0]], 0.1);
        let d = 1e-4 * (1.0 - 1e-5);
        let v = 0.9e-4 + d;
        assert!((state.params[0].data[0] - (1.0 - 1e-5 - 0.1 * v)).abs() < 1e-15);
    }

    #[test]
    fn normalization_params_skip_decay() {
        let mut state = scalar_state(1.0, false);
        let mut opt = MomentumSgd::new(0.9, 0.5, &state);
        opt.step(&mut state, &[vec![0.0]], 0.1);
        assert_eq!(state.params[0].data[0], 1.0);
    }
}
