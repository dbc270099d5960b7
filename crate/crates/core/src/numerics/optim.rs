//! Adam optimizer and global-norm gradient clipping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::store::ParamStore;
use super::tensor::Tensor;

/// Per-parameter first/second moment accumulators plus step count.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(store: &ParamStore, learning_rate: f64) -> AdamState {
        let m = store.ids().map(|id| Tensor::zeros(store.value(id).shape())).collect();
        let v = store.ids().map(|id| Tensor::zeros(store.value(id).shape())).collect();
        AdamState {
            m,
            v,
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update. `grads` is indexed like the store; `None` entries are
/// treated as zero gradient (their moments still decay).
pub fn adam_step(
    store: &mut ParamStore,
    grads: &[Option<Tensor>],
    state: &mut AdamState,
) -> Result<()> {
    if grads.len() != store.len() {
        return Err(Error::InvalidArgument(format!(
            "gradient count {} does not match parameter count {}",
            grads.len(),
            store.len()
        )));
    }
    state.step += 1;
    let t = state.step as f64;
    let bias1 = 1.0 - state.beta1.powf(t);
    let bias2 = 1.0 - state.beta2.powf(t);
    for (i, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
        let zero = Tensor::zeros(store.value(id).shape());
        let grad = grads[i].as_ref().unwrap_or(&zero);
        if grad.shape() != store.value(id).shape() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                lhs: grad.shape().to_vec(),
                rhs: store.value(id).shape().to_vec(),
            });
        }
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        let param = store.value_mut(id);
        let (b1, b2, eps, lr) = (state.beta1, state.beta2, state.epsilon, state.learning_rate);
        for ((p, mi), (vi, g)) in param
            .data_mut()
            .iter_mut()
            .zip(m.data_mut())
            .zip(v.data_mut().iter_mut().zip(grad.data()))
        {
            *mi = b1 * *mi + (1.0 - b1) * g;
            *vi = b2 * *vi + (1.0 - b2) * g * g;
            let m_hat = *mi / bias1;
            let v_hat = *vi / bias2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        if !store.value(id).all_finite() {
            return Err(Error::NonFinite { op: "adam_step" });
        }
    }
    Ok(())
}

/// Scale all gradients so their global L2 norm is at most `max_norm`.
/// Returns the scaling factor that was applied (1.0 when unchanged).
pub fn clip_gradients(grads: &mut [Option<Tensor>], max_norm: f64) -> f64 {
    let total: f64 = grads
        .iter()
        .flatten()
        .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
        .sum();
    let norm = total.sqrt();
    if norm <= max_norm || norm == 0.0 {
        return 1.0;
    }
    let scale = max_norm / norm;
    for g in grads.iter_mut().flatten() {
        g.scale_assign(scale);
    }
    scale
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64) -> (ParamStore, super::super::store::ParamId) {
        let mut store = ParamStore::new();
        let id = store.alloc("x", Tensor::scalar(v));
        (store, id)
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let (mut store, id) = scalar_store(1.5);
        let mut state = AdamState::new(&store, 0.1);
        let grads = vec![Some(Tensor::scalar(0.0))];
        adam_step(&mut store, &grads, &mut state).unwrap();
        assert_eq!(store.value(id).item(), 1.5);
    }

    #[test]
    fn first_step_with_unit_gradient_moves_by_about_lr() {
        // Bias correction makes the first update ~ lr * sign(grad).
        let (mut store, id) = scalar_store(1.0);
        let mut state = AdamState::new(&store, 0.1);
        let grads = vec![Some(Tensor::scalar(1.0))];
        adam_step(&mut store, &grads, &mut state).unwrap();
        let moved = 1.0 - store.value(id).item();
        assert!((moved - 0.1).abs() < 1e-6, "moved {moved}");
    }

    #[test]
    fn quadratic_bowl_converges() {
        // f(x) = x^2, grad = 2x, 200 steps from x = 1 at lr 0.05.
        let (mut store, id) = scalar_store(1.0);
        let mut state = AdamState::new(&store, 0.05);
        for _ in 0..200 {
            let g = 2.0 * store.value(id).item();
            let grads = vec![Some(Tensor::scalar(g))];
            adam_step(&mut store, &grads, &mut state).unwrap();
        }
        assert!(store.value(id).item().abs() < 0.05, "x = {}", store.value(id).item());
    }

    #[test]
    fn clip_leaves_small_gradients_alone() {
        let mut grads = vec![Some(Tensor::from_vec(&[2], vec![0.6, 0.8]).unwrap())];
        let scale = clip_gradients(&mut grads, 2.0);
        assert_eq!(scale, 1.0);
        assert_eq!(grads[0].as_ref().unwrap().data(), &[0.6, 0.8]);
    }

    #[test]
    fn clip_scales_to_the_max_norm() {
        let mut grads = vec![Some(Tensor::from_vec(&[2], vec![3.0, 4.0]).unwrap())];
        clip_gradients(&mut grads, 2.0);
        let g = grads[0].as_ref().unwrap();
        assert!((g.data()[0] - 1.2).abs() < 1e-12);
        assert!((g.data()[1] - 1.6).abs() < 1e-12);
        assert!((g.l2_norm() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn clip_handles_all_zero_gradients() {
        let mut grads = vec![Some(Tensor::zeros(&[3]))];
        let scale = clip_gradients(&mut grads, 2.0);
        assert_eq!(scale, 1.0);
        assert!(grads[0].as_ref().unwrap().data().iter().all(|&v| v == 0.0));
    }
}
