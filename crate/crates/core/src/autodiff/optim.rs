//! Adam with bias-corrected moment estimates.

use serde::{Deserialize, Serialize};

use crate::autodiff::matrix::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment accumulators for one ordered list of parameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

impl AdamState {
    pub fn new(config: AdamConfig, shapes: &[(usize, usize)]) -> Self {
        let zeros = || shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect();
        AdamState {
            config,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Matrix] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Matrix] {
        &self.second
    }

    /// One update of every parameter from its gradient.
    pub fn step(&mut self, params: Vec<&mut Matrix>, grads: &[Matrix]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(Error::Contract(format!(
                "adam state tracks {} parameters, got {} parameters and {} gradients",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first) {
            p.same_shape(g, "adam_step")?;
            p.same_shape(m, "adam_step")?;
        }

        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);

        for (((p, g), m), v) in params
            .into_iter()
            .zip(grads)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            for (((w, &g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_is_lr_times_sign() {
        let mut w = Matrix::from_rows(&[[1.0, -2.0, 0.5]]);
        let g = Matrix::from_rows(&[[0.3, -4.0, 1e-3]]);
        let mut st = AdamState::new(AdamConfig::with_lr(0.05), &[(1, 3)]);
        st.step(vec![&mut w], std::slice::from_ref(&g)).unwrap();
        let expected = [1.0, -2.0, 0.5]
            .iter()
            .zip(g.data())
            .map(|(w0, g)| w0 - 0.05 * g / (g.abs() + 1e-8));
        for (a, b) in w.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut w = Matrix::from_rows(&[[0.7, -0.1]]);
        let before = w.clone();
        let mut st = AdamState::new(AdamConfig::default(), &[(1, 2)]);
        for _ in 0..3 {
            st.step(vec![&mut w], &[Matrix::zeros(1, 2)]).unwrap();
        }
        assert_eq!(w, before);
        assert_eq!(st.step_count(), 3);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut w = Matrix::zeros(2, 2);
        let mut st = AdamState::new(AdamConfig::default(), &[(2, 2)]);
        assert!(st.step(vec![&mut w], &[Matrix::zeros(1, 2)]).is_err());
        assert_eq!(st.step_count(), 0);
    }
}
