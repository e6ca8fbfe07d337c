//! AdamW with decoupled weight decay, plus a plain SGD used to check update
//! rules literally.

use std::collections::HashMap;

use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Debug, Clone)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    steps: u64,
}

/// Optimizer state: moment buffers per parameter and the global step counter.
///
/// Bias correction uses each parameter's own update count, since the
/// alternating schedule updates different parameter groups on different steps.
#[derive(Debug, Clone)]
pub struct AdamWState {
    pub config: AdamWConfig,
    moments: HashMap<ParamId, Moments>,
    step: u64,
}

impl AdamWState {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            moments: HashMap::new(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, id: ParamId) -> Option<&[f64]> {
        self.moments.get(&id).map(|m| m.m.as_slice())
    }

    pub fn second_moment(&self, id: ParamId) -> Option<&[f64]> {
        self.moments.get(&id).map(|m| m.v.as_slice())
    }

    /// Applies one AdamW update to `ids` using their accumulated gradients.
    /// Parameters without an allocated gradient are treated as having a zero gradient.
    pub fn step(&mut self, store: &mut ParamStore, ids: &[ParamId]) -> Result<()> {
        check_finite(store, ids)?;
        let AdamWConfig {
            learning_rate: lr,
            beta1,
            beta2,
            epsilon,
            weight_decay,
        } = self.config;
        for &id in ids {
            let param = store.get_mut(id);
            let n = param.len();
            let grad = param.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
            let st = self.moments.entry(id).or_insert_with(|| Moments {
                m: vec![0.0; n],
                v: vec![0.0; n],
                steps: 0,
            });
            st.steps += 1;
            let bc1 = 1.0 - beta1.powi(st.steps as i32);
            let bc2 = 1.0 - beta2.powi(st.steps as i32);
            let data = param.data_mut();
            for k in 0..n {
                let g = grad[k];
                st.m[k] = beta1 * st.m[k] + (1.0 - beta1) * g;
                st.v[k] = beta2 * st.v[k] + (1.0 - beta2) * g * g;
                let m_hat = st.m[k] / bc1;
                let v_hat = st.v[k] / bc2;
                data[k] -= lr * weight_decay * data[k];
                data[k] -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        self.step += 1;
        Ok(())
    }
}

fn check_finite(store: &ParamStore, ids: &[ParamId]) -> Result<()> {
    for &id in ids {
        if let Some(g) = store.get(id).grad() {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient in parameter '{}'",
                    store.name(id)
                )));
            }
        }
    }
    Ok(())
}

/// Optimizer used by the training loop.
#[derive(Debug, Clone)]
pub enum Optimizer {
    AdamW(AdamWState),
    /// `θ ← θ − η·g`; exists to verify update rules without adaptive rescaling.
    PlainSgd { learning_rate: f64 },
}

impl Optimizer {
    pub fn step(&mut self, store: &mut ParamStore, ids: &[ParamId]) -> Result<()> {
        match self {
            Optimizer::AdamW(state) => state.step(store, ids),
            Optimizer::PlainSgd { learning_rate } => {
                check_finite(store, ids)?;
                for &id in ids {
                    let p = store.get_mut(id);
                    let Some(g) = p.grad().map(<[f64]>::to_vec) else { continue };
                    p.data_mut().iter_mut().zip(&g).for_each(|(w, gv)| *w -= *learning_rate * gv);
                }
                Ok(())
            }
        }
    }
}

/// Rescales the gradients of `ids` so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(store: &mut ParamStore, ids: &[ParamId], max_norm: f64) -> f64 {
    let sq: f64 = ids
        .iter()
        .filter_map(|&id| store.get(id).grad())
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm && norm.is_finite() {
        let factor = max_norm / norm;
        for &id in ids {
            let p = store.get_mut(id);
            if let Some(g) = p.grad().map(<[f64]>::to_vec) {
                let scaled: Vec<f64> = g.iter().map(|v| v * factor - v).collect();
                p.accumulate_grad(&scaled);
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Tensor;

    fn one_param(value: f64, grad: f64) -> (ParamStore, ParamId) {
        let mut store = ParamStore::new();
        let id = store.add("theta", Tensor::scalar(value));
        store.get_mut(id).accumulate_grad(&[grad]);
        (store, id)
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let (mut store, id) = one_param(0.75, 0.0);
        let mut st = AdamWState::new(AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        });
        st.step(&mut store, &[id]).unwrap();
        assert_eq!(store.get(id).data(), &[0.75]);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn first_step_matches_hand_computation() {
        // m = 0.1, v = 0.001, m̂ = 1, v̂ = 1 → Δθ = −0.1 / (1 + 1e-8)
        let (mut store, id) = one_param(1.0, 1.0);
        let mut st = AdamWState::new(AdamWConfig {
            learning_rate: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        });
        st.step(&mut store, &[id]).unwrap();
        let expected = 1.0 - 0.1 / (1.0 + 1e-8);
        assert!((store.get(id).data()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn decoupled_decay_shrinks_by_lr_times_decay() {
        let (mut store, id) = one_param(2.0, 0.0);
        let mut st = AdamWState::new(AdamWConfig {
            learning_rate: 0.1,
            weight_decay: 0.5,
            ..Default::default()
        });
        st.step(&mut store, &[id]).unwrap();
        let expected = 2.0 - 0.1 * 0.5 * 2.0;
        assert!((store.get(id).data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let (mut store, id) = one_param(1.0, f64::NAN);
        let mut st = AdamWState::new(AdamWConfig::default());
        let err = st.step(&mut store, &[id]).unwrap_err();
        assert!(matches!(&err, Error::Numeric(m) if m.contains("theta")), "{err}");
        assert_eq!(store.get(id).data(), &[1.0]);
    }

    #[test]
    fn step_counter_increments_once_per_step() {
        let (mut store, id) = one_param(1.0, 0.3);
        let mut st = AdamWState::new(AdamWConfig::default());
        for k in 1..=4 {
            st.step(&mut store, &[id]).unwrap();
            assert_eq!(st.step_count(), k);
        }
        assert_eq!(st.first_moment(id).unwrap().len(), 1);
    }

    #[test]
    fn clipping_caps_global_norm() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::row(vec![0.0, 0.0]));
        store.get_mut(a).accumulate_grad(&[3.0, 4.0]);
        let before = clip_grad_norm(&mut store, &[a], 1.0);
        assert!((before - 5.0).abs() < 1e-12);
        let g = store.get(a).grad().unwrap();
        assert!((g[0] - 0.6).abs() < 1e-12 && (g[1] - 0.8).abs() < 1e-12);
    }
}
