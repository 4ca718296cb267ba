//! Adam with bias-corrected moment estimates.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_dim, Error, Result};
use crate::math;
use crate::tensor::{DenseLayer, LayerGrads};

/// Optimizer state over a flat parameter vector.
///
/// Parameters owned by several layers are visited in a fixed order (each
/// layer's weights, then its bias), so the moment buffers line up with
/// [`AdamState::step_layers`] as long as the same layer list is passed every
/// time.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step_count: u64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
}

impl AdamState {
    pub fn new(param_count: usize, lr: f64) -> Self {
        Self::with_betas(param_count, lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(param_count: usize, lr: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            epsilon,
            step_count: 0,
            first_moment: vec![0.0; param_count],
            second_moment: vec![0.0; param_count],
        }
    }

    /// State sized for the given layers.
    pub fn for_layers(layers: &[&DenseLayer], lr: f64) -> Self {
        Self::new(layers.iter().map(|l| l.param_count()).sum(), lr)
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn param_count(&self) -> usize {
        self.first_moment.len()
    }

    /// One update over a flat parameter slice.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        check_dim("adam params", self.param_count(), params.len())?;
        check_dim("adam grads", self.param_count(), grads.len())?;
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient entry {i}")));
        }
        self.step_count += 1;
        let (c1, c2) = self.bias_corrections();
        self.update_segment(0, params, grads, c1, c2);
        Ok(())
    }

    /// One update over a list of layers and their gradients.
    pub fn step_layers(&mut self, layers: &mut [&mut DenseLayer], grads: &[&LayerGrads]) -> Result<()> {
        check_dim("adam layer grads", layers.len(), grads.len())?;
        let total: usize = layers.iter().map(|l| l.param_count()).sum();
        check_dim("adam params", self.param_count(), total)?;
        for (l, g) in grads.iter().enumerate() {
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of layer {l}")));
            }
        }
        self.step_count += 1;
        let (c1, c2) = self.bias_corrections();
        let mut offset = 0;
        for (layer, g) in layers.iter_mut().zip(grads) {
            check_dim("adam layer weight", layer.weight.data().len(), g.weight.data().len())?;
            let n = layer.weight.data().len();
            self.update_segment(offset, layer.weight.data_mut(), g.weight.data(), c1, c2);
            offset += n;
            let n = layer.bias.len();
            self.update_segment(offset, &mut layer.bias, &g.bias, c1, c2);
            offset += n;
        }
        Ok(())
    }

    fn bias_corrections(&self) -> (f64, f64) {
        let t = self.step_count as f64;
        (
            1.0 - math::powf(self.beta1, t),
            1.0 - math::powf(self.beta2, t),
        )
    }

    fn update_segment(&mut self, offset: usize, params: &mut [f64], grads: &[f64], c1: f64, c2: f64) {
        let m = &mut self.first_moment[offset..offset + params.len()];
        let v = &mut self.second_moment[offset..offset + params.len()];
        for i in 0..params.len() {
            let g = grads[i];
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            params[i] -= self.lr * m_hat / (math::sqrt(v_hat) + self.epsilon);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut s = AdamState::new(2, 1e-3);
        let mut p = [0.5, -1.0];
        s.step(&mut p, &[0.0, 0.0]).unwrap();
        assert_eq!(p, [0.5, -1.0]);
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = AdamState::new(1, 1e-3);
        let mut p = [1.0];
        s.step(&mut p, &[1.0]).unwrap();
        // m_hat = v_hat = 1, so the step is lr / (1 + eps).
        let expected = 1e-3 / (1.0 + 1e-8);
        assert!(((1.0 - p[0]) - expected).abs() < 1e-15);
        assert!(((1.0 - p[0]) - 9.99999e-4).abs() < 1e-9);
    }

    #[test]
    fn repeated_positive_gradient_descends() {
        let mut s = AdamState::new(1, 1e-3);
        let mut p = [0.0];
        s.step(&mut p, &[1.0]).unwrap();
        let after_one = p[0];
        s.step(&mut p, &[1.0]).unwrap();
        assert!(after_one < 0.0);
        assert!(p[0] < after_one);
    }

    #[test]
    fn non_finite_gradient_aborts_without_update() {
        let mut s = AdamState::new(2, 1e-3);
        let mut p = [1.0, 2.0];
        let err = s.step(&mut p, &[0.1, f64::NAN]).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
        assert_eq!(p, [1.0, 2.0]);
        assert_eq!(s.step_count(), 0);
    }
}
