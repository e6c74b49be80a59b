//! Adam optimizer state.

use super::Tensor;
use crate::error::{DmtError, Result};

/// Per-parameter first/second moment estimates plus a shared step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    /// Fresh state with the usual defaults (beta1=0.9, beta2=0.999, eps=1e-8).
    pub fn new(params: &[&Tensor], lr: f64) -> Result<Self> {
        if lr <= 0.0 {
            return Err(DmtError::config("lr", "learning rate must be positive"));
        }
        Ok(AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub(crate) fn moments(&self) -> (&[Tensor], &[Tensor]) {
        (&self.m, &self.v)
    }

    pub(crate) fn restore(lr: f64, step: u64, m: Vec<Tensor>, v: Vec<Tensor>) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step,
            m,
            v,
        }
    }

    /// One bias-corrected Adam update applied in place.
    pub fn apply(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(DmtError::domain(
                "adam_step",
                format!(
                    "parameter count mismatch: state {}, params {}, grads {}",
                    self.m.len(),
                    params.len(),
                    grads.len()
                ),
            ));
        }
        for ((p, g), (m, v)) in params
            .iter()
            .zip(grads)
            .zip(self.m.iter().zip(self.v.iter()))
        {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(DmtError::ShapeMismatch {
                    op: "adam_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            let _ = v;
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let pd = p.data_mut();
            let md = m.data_mut();
            let vd = v.data_mut();
            for i in 0..pd.len() {
                let gi = g.data()[i];
                md[i] = self.beta1 * md[i] + (1.0 - self.beta1) * gi;
                vd[i] = self.beta2 * vd[i] + (1.0 - self.beta2) * gi * gi;
                let m_hat = md[i] / bc1;
                let v_hat = vd[i] / bc2;
                pd[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grads_leave_params_unchanged() {
        let mut p = Tensor::new(vec![2], vec![1.0, -2.0]).unwrap();
        let mut state = AdamState::new(&[&p], 0.1).unwrap();
        let g = Tensor::zeros(&[2]);
        let before = p.clone();
        state.apply(&mut [&mut p], std::slice::from_ref(&g)).unwrap();
        assert_eq!(p, before);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_about_lr() {
        // bias-corrected first step is lr * g / (|g| + eps)
        let mut p = Tensor::scalar(0.5);
        let mut state = AdamState::new(&[&p], 0.1).unwrap();
        let g = Tensor::scalar(1.0);
        state.apply(&mut [&mut p], std::slice::from_ref(&g)).unwrap();
        let expected = 0.5 - 0.1 * 1.0 / (1.0 + 1e-8);
        assert!((p.as_scalar().unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn identical_params_and_grads_update_identically() {
        let mut p1 = Tensor::new(vec![3], vec![0.3, -0.7, 2.0]).unwrap();
        let mut p2 = p1.clone();
        let g = Tensor::new(vec![3], vec![0.1, -0.5, 0.9]).unwrap();
        let mut state = AdamState::new(&[&p1, &p2], 0.05).unwrap();
        state
            .apply(&mut [&mut p1, &mut p2], &[g.clone(), g])
            .unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut p = Tensor::zeros(&[2]);
        let mut state = AdamState::new(&[&p], 0.1).unwrap();
        let g = Tensor::zeros(&[3]);
        assert!(state.apply(&mut [&mut p], std::slice::from_ref(&g)).is_err());
    }
}
