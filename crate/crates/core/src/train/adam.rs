//! Adam with bias correction and optional decoupled weight decay.

use super::{TrainConfig, TrainError};
use crate::tensor::Tensor;

/// First/second moment buffers, aligned with the trainable tensor list.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(sizes: &[usize]) -> Self {
        AdamState {
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

/// One optimizer step over the trainable set. `grads` must hold one gradient
/// buffer per tensor, in the same order; a `None` gradient means the graph
/// never reached that tensor and is reported as a wiring bug.
pub fn adam_step(
    params: &mut [(String, &mut Tensor)],
    grads: &[Option<Vec<f64>>],
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<(), TrainError> {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());

    for ((name, tensor), grad) in params.iter().zip(grads) {
        let grad = grad.as_ref().ok_or_else(|| TrainError::MissingGradient { name: name.clone() })?;
        if grad.len() != tensor.len() {
            return Err(TrainError::Config(format!(
                "gradient for {name} has {} elements, tensor has {}",
                grad.len(),
                tensor.len()
            )));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - cfg.adam_beta1.powi(t);
    let bias2 = 1.0 - cfg.adam_beta2.powi(t);

    for (i, (_, tensor)) in params.iter_mut().enumerate() {
        let grad = grads[i].as_ref().expect("checked above");
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        for (j, value) in tensor.data_mut().iter_mut().enumerate() {
            let g = grad[j];
            m[j] = cfg.adam_beta1 * m[j] + (1.0 - cfg.adam_beta1) * g;
            v[j] = cfg.adam_beta2 * v[j] + (1.0 - cfg.adam_beta2) * g * g;
            let m_hat = m[j] / bias1;
            let v_hat = v[j] / bias2;
            *value -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps);
            if cfg.weight_decay > 0.0 {
                *value -= cfg.learning_rate * cfg.weight_decay * *value;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg_with_lr(lr: f64) -> TrainConfig {
        TrainConfig { learning_rate: lr, ..TrainConfig::default() }
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // With g = 1: m_hat = 1, v_hat = 1, so the bias-corrected first step
        // is lr / (1 + eps), within eps of lr.
        let mut w = Tensor::scalar(0.5);
        let mut params = vec![("w".to_string(), &mut w)];
        let mut state = AdamState::new(&[1]);
        adam_step(&mut params, &[Some(vec![1.0])], &mut state, &cfg_with_lr(0.1)).unwrap();
        assert!((w.item() - 0.4).abs() < 1e-8, "w = {}", w.item());
    }

    #[test]
    fn zero_gradients_leave_params_unchanged() {
        let mut w = Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let before = w.clone();
        let mut params = vec![("w".to_string(), &mut w)];
        let mut state = AdamState::new(&[3]);
        for _ in 0..5 {
            adam_step(&mut params, &[Some(vec![0.0; 3])], &mut state, &cfg_with_lr(0.1)).unwrap();
        }
        assert_eq!(*params[0].1, before);
    }

    #[test]
    fn missing_gradient_is_rejected_by_name() {
        let mut w = Tensor::scalar(1.0);
        let mut params = vec![("prototypes".to_string(), &mut w)];
        let mut state = AdamState::new(&[1]);
        let err = adam_step(&mut params, &[None], &mut state, &cfg_with_lr(0.1)).unwrap_err();
        assert!(err.to_string().contains("prototypes"));
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut w = Tensor::new(vec![2], vec![0.3, -0.7]).unwrap();
            let mut state = AdamState::new(&[2]);
            for step in 0..50 {
                let g = vec![(step as f64 * 0.01).sin(), -0.2];
                let mut params = vec![("w".to_string(), &mut w)];
                adam_step(&mut params, &[Some(g)], &mut state, &cfg_with_lr(0.01)).unwrap();
            }
            w
        };
        assert_eq!(run(), run());
    }
}
