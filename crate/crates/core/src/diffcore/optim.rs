use super::params::ParamSet;
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    /// Heavy-ball momentum: `v = momentum·v + g; w -= lr·v`.
    SgdMomentum {
        momentum: f64,
    },
    Adam {
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
}

impl OptimizerKind {
    pub fn adam_default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer with per-parameter buffers (velocity for SGD; first and second
/// moments for Adam).
#[derive(Clone, Debug)]
pub struct OptimizerState<T: Real = f32> {
    kind: OptimizerKind,
    buffers: Vec<Vec<Tensor<T>>>,
    step: u64,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(kind: OptimizerKind) -> Self {
        OptimizerState {
            kind,
            buffers: Vec::new(),
            step: 0,
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    fn ensure_buffers(&mut self, params: &ParamSet<T>) {
        if !self.buffers.is_empty() {
            return;
        }
        let per = match self.kind {
            OptimizerKind::SgdMomentum { .. } => 1,
            OptimizerKind::Adam { .. } => 2,
        };
        self.buffers = params
            .iter()
            .map(|(_, t)| (0..per).map(|_| Tensor::zeros(t.shape())).collect())
            .collect();
    }

    /// Applies one update in place.
    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &ParamSet<T>, lr: f64) -> Result<()> {
        if !params.same_layout(grads) {
            return Err(Error::Dimension(
                "gradient set does not match parameter layout".into(),
            ));
        }
        self.ensure_buffers(params);
        if self.buffers.len() != params.len()
            || self
                .buffers
                .iter()
                .zip(params.iter())
                .any(|(b, (_, p))| b[0].shape() != p.shape())
        {
            return Err(Error::Dimension(
                "optimizer buffers do not match parameter layout".into(),
            ));
        }
        self.step += 1;
        let t = self.step as i32;
        for ((bufs, (_, p)), (_, g)) in self
            .buffers
            .iter_mut()
            .zip(params.iter_mut())
            .zip(grads.iter())
        {
            match self.kind {
                OptimizerKind::SgdMomentum { momentum } => {
                    let v = bufs[0].data_mut();
                    for ((w, v), g) in p.data_mut().iter_mut().zip(v.iter_mut()).zip(g.data()) {
                        let nv = momentum * v.to_f64() + g.to_f64();
                        *v = T::from_f64(nv);
                        *w = T::from_f64(w.to_f64() - lr * nv);
                    }
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let (m_buf, v_buf) = bufs.split_at_mut(1);
                    let c1 = 1.0 - beta1.powi(t);
                    let c2 = 1.0 - beta2.powi(t);
                    for (((w, m), v), g) in p
                        .data_mut()
                        .iter_mut()
                        .zip(m_buf[0].data_mut())
                        .zip(v_buf[0].data_mut())
                        .zip(g.data())
                    {
                        let g = g.to_f64();
                        let nm = beta1 * m.to_f64() + (1.0 - beta1) * g;
                        let nv = beta2 * v.to_f64() + (1.0 - beta2) * g * g;
                        *m = T::from_f64(nm);
                        *v = T::from_f64(nv);
                        let update = lr * (nm / c1) / ((nv / c2).sqrt() + eps);
                        *w = T::from_f64(w.to_f64() - update);
                    }
                }
            }
        }
        Ok(())
    }
}

/// One SGD-with-momentum step; `state` carries the velocity between calls.
pub fn sgd_momentum_step<T: Real>(
    state: &mut OptimizerState<T>,
    params: &mut ParamSet<T>,
    grads: &ParamSet<T>,
    lr: f64,
) -> Result<()> {
    if !matches!(state.kind, OptimizerKind::SgdMomentum { .. }) {
        return Err(Error::Contract(
            "sgd_momentum_step on a non-SGD state".into(),
        ));
    }
    state.step(params, grads, lr)
}

pub fn adam_step<T: Real>(
    state: &mut OptimizerState<T>,
    params: &mut ParamSet<T>,
    grads: &ParamSet<T>,
    lr: f64,
) -> Result<()> {
    if !matches!(state.kind, OptimizerKind::Adam { .. }) {
        return Err(Error::Contract("adam_step on a non-Adam state".into()));
    }
    state.step(params, grads, lr)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: f64) -> ParamSet<f64> {
        [("w".to_string(), Tensor::from_vec(vec![v]))]
            .into_iter()
            .collect()
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = one(1.5);
        let g = one(0.0);
        let mut st = OptimizerState::new(OptimizerKind::SgdMomentum { momentum: 0.9 });
        for _ in 0..3 {
            sgd_momentum_step(&mut st, &mut p, &g, 0.1).unwrap();
        }
        assert_eq!(p.get("w").unwrap().data(), &[1.5]);
    }

    #[test]
    fn single_sgd_step() {
        let mut p = one(1.0);
        let g = one(2.0);
        let mut st = OptimizerState::new(OptimizerKind::SgdMomentum { momentum: 0.9 });
        sgd_momentum_step(&mut st, &mut p, &g, 0.01).unwrap();
        assert!((p.get("w").unwrap().data()[0] - (1.0 - 0.01 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn two_sgd_steps_constant_gradient() {
        // Hand-rolled recurrence: v1 = g, v2 = mu*g + g; total = lr*g*(2 + mu).
        let (lr, mu, g0) = (0.05, 0.9, 3.0);
        let mut p = one(0.0);
        let g = one(g0);
        let mut st = OptimizerState::new(OptimizerKind::SgdMomentum { momentum: mu });
        sgd_momentum_step(&mut st, &mut p, &g, lr).unwrap();
        sgd_momentum_step(&mut st, &mut p, &g, lr).unwrap();
        let expected = -lr * g0 * (2.0 + mu);
        assert!((p.get("w").unwrap().data()[0] - expected).abs() < 1e-12);
        assert_eq!(st.steps_taken(), 2);
    }

    #[test]
    fn adam_first_step_is_lr_times_sign() {
        let mut p = one(1.0);
        let g = one(-4.0);
        let mut st = OptimizerState::new(OptimizerKind::adam_default());
        adam_step(&mut st, &mut p, &g, 1e-3).unwrap();
        // Bias-corrected m/sqrt(v) equals sign(g) on the first step (up to eps).
        assert!((p.get("w").unwrap().data()[0] - 1.001).abs() < 1e-9);
    }

    #[test]
    fn layout_mismatch_rejected() {
        let mut p = one(1.0);
        let g: ParamSet<f64> = [("v".to_string(), Tensor::from_vec(vec![1.0]))]
            .into_iter()
            .collect();
        let mut st = OptimizerState::new(OptimizerKind::adam_default());
        assert!(st.step(&mut p, &g, 0.1).is_err());
    }

    #[test]
    fn wrong_kind_rejected() {
        let mut p = one(1.0);
        let g = one(1.0);
        let mut st = OptimizerState::new(OptimizerKind::adam_default());
        assert!(sgd_momentum_step(&mut st, &mut p, &g, 0.1).is_err());
    }
}
