//! Adam with bias correction.

use crate::error::{Result, TensorError};
use crate::nn::ParamStore;
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for one parameter group.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    /// Zeroed moments shaped like `params`.
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<T>>) -> Self {
        let m: Vec<Tensor<T>> = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        AdamState {
            step: 0,
            v: m.clone(),
            m,
        }
    }

    pub fn for_store(store: &ParamStore<T>) -> Self {
        Self::new(store.params().map(|e| &e.value))
    }
}

impl Adam {
    /// One update of `params` in place.
    pub fn step<T: Real>(
        &self,
        params: &mut [&mut Tensor<T>],
        grads: &[Tensor<T>],
        state: &mut AdamState<T>,
    ) -> Result<()> {
        if params.len() != grads.len() || params.len() != state.m.len() {
            return Err(TensorError::InvalidArgument {
                op: "adam_step",
                detail: format!(
                    "{} params, {} grads, {} state slots",
                    params.len(),
                    grads.len(),
                    state.m.len()
                ),
            });
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "adam_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
        }
        state.step += 1;
        let t = state.step as i32;
        let b1 = T::from_f64_lossy(self.beta1);
        let b2 = T::from_f64_lossy(self.beta2);
        let c1 = T::from_f64_lossy(1.0 - self.beta1.powi(t));
        let c2 = T::from_f64_lossy(1.0 - self.beta2.powi(t));
        let lr = T::from_f64_lossy(self.lr);
        let eps = T::from_f64_lossy(self.eps);
        let one = T::one();
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = b1 * *mv + (one - b1) * gv;
                *vv = b2 * *vv + (one - b2) * gv * gv;
                let mhat = *mv / c1;
                let vhat = *vv / c2;
                *pv = *pv - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Updates every learnable parameter of `store`; `grads` are in store order.
    pub fn step_store<T: Real>(
        &self,
        store: &mut ParamStore<T>,
        grads: &[Tensor<T>],
        state: &mut AdamState<T>,
    ) -> Result<()> {
        let mut params: Vec<&mut Tensor<T>> = store.params_mut().map(|e| &mut e.value).collect();
        self.step(&mut params, grads, state)
    }
}
