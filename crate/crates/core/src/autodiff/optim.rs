use super::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd { momentum: f64 },
}

/// Optimizer hyperparameters plus per-parameter moment buffers.
/// For SGD only `first` (the momentum buffer) is used.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub weight_decay: f64,
    pub step: u64,
    pub first: Vec<Tensor<T>>,
    pub second: Vec<Tensor<T>>,
}

impl<T: Element> OptimizerState<T> {
    pub fn adam(params: &ParamStore<T>, lr: f64, weight_decay: f64) -> Self {
        Self::with_kind(OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }, params, lr, weight_decay)
    }

    pub fn sgd(params: &ParamStore<T>, lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Self::with_kind(OptimizerKind::Sgd { momentum }, params, lr, weight_decay)
    }

    pub fn with_kind(kind: OptimizerKind, params: &ParamStore<T>, lr: f64, weight_decay: f64) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.value.shape())).collect::<Vec<_>>();
        OptimizerState { kind, lr, weight_decay, step: 0, first: zeros(), second: zeros() }
    }

    /// Step decay: multiply the learning rate by `factor`.
    pub fn decay_lr(&mut self, factor: f64) {
        self.lr *= factor;
    }

    pub fn step(&mut self, params: &mut ParamStore<T>) -> Result<()> {
        match self.kind {
            OptimizerKind::Adam { .. } => self.adam_step(params),
            OptimizerKind::Sgd { .. } => self.sgd_step(params),
        }
    }

    fn check(&self, params: &ParamStore<T>) -> Result<()> {
        let ok = self.first.len() == params.len()
            && self.second.len() == params.len()
            && params.iter().zip(&self.first).all(|(p, b)| p.value.shape() == b.shape());
        if !ok {
            return Err(Error::shape("optimizer buffers do not match the parameter set"));
        }
        Ok(())
    }

    /// Adam with L2 weight decay folded into the gradient.
    pub fn adam_step(&mut self, params: &mut ParamStore<T>) -> Result<()> {
        self.check(params)?;
        let OptimizerKind::Adam { beta1, beta2, eps } = self.kind else {
            return Err(Error::invalid("adam_step on a non-Adam optimizer"));
        };
        self.step += 1;
        let t = self.step as i32;
        let (bc1, bc2) = (1.0 - beta1.powi(t), 1.0 - beta2.powi(t));
        let c = T::from_f64;
        for ((p, m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            let wd = if p.decay { self.weight_decay } else { 0.0 };
            let (theta, grad) = (p.value.data_mut(), p.grad.data());
            for i in 0..theta.len() {
                let g = grad[i] + c(wd) * theta[i];
                let mi = c(beta1) * m.data()[i] + c(1.0 - beta1) * g;
                let vi = c(beta2) * v.data()[i] + c(1.0 - beta2) * g * g;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let mhat = mi / c(bc1);
                let vhat = vi / c(bc2);
                theta[i] = theta[i] - c(self.lr) * mhat / (vhat.sqrt() + c(eps));
            }
        }
        Ok(())
    }

    pub fn sgd_step(&mut self, params: &mut ParamStore<T>) -> Result<()> {
        self.check(params)?;
        let OptimizerKind::Sgd { momentum } = self.kind else {
            return Err(Error::invalid("sgd_step on a non-SGD optimizer"));
        };
        self.step += 1;
        let c = T::from_f64;
        for (p, buf) in params.iter_mut().zip(&mut self.first) {
            let wd = if p.decay { self.weight_decay } else { 0.0 };
            let (theta, grad) = (p.value.data_mut(), p.grad.data());
            for i in 0..theta.len() {
                let g = grad[i] + c(wd) * theta[i];
                let b = c(momentum) * buf.data()[i] + g;
                buf.data_mut()[i] = b;
                theta[i] = theta[i] - c(self.lr) * b;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("x", Tensor::scalar(value), true);
        s
    }

    #[test]
    fn sgd_zero_gradient_is_noop() {
        let mut p = single(1.5);
        let mut opt = OptimizerState::sgd(&p, 0.1, 0.9, 0.0);
        opt.step(&mut p).unwrap();
        assert_eq!(p.values()[0].data(), &[1.5]);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        for g in [0.37, -12.0] {
            let mut p = single(1.0);
            p.iter_mut().next().unwrap().grad = Tensor::scalar(g);
            let mut opt = OptimizerState::adam(&p, 1e-3, 0.0);
            opt.step(&mut p).unwrap();
            let moved = p.values()[0].data()[0] - 1.0;
            assert!((moved + 1e-3 * f64::signum(g)).abs() < 1e-8, "{moved}");
        }
    }

    #[test]
    fn adam_converges_on_quadratic() {
        // minimize (x - 3)^2 from x = 2.95; minimum at 3
        let mut p = single(2.95);
        let mut opt = OptimizerState::adam(&p, 1e-3, 0.0);
        for _ in 0..100 {
            let x = p.values()[0].data()[0];
            p.iter_mut().next().unwrap().grad = Tensor::scalar(2.0 * (x - 3.0));
            opt.step(&mut p).unwrap();
        }
        assert!((p.values()[0].data()[0] - 3.0).abs() < 1e-3);
    }

    #[test]
    fn weight_decay_only_on_eligible() {
        let mut p = ParamStore::<f64>::new();
        p.add("w", Tensor::scalar(1.0), true);
        p.add("b", Tensor::scalar(1.0), false);
        let mut opt = OptimizerState::sgd(&p, 0.1, 0.0, 0.5);
        opt.step(&mut p).unwrap();
        assert_eq!(p.values()[0].data(), &[0.95]);
        assert_eq!(p.values()[1].data(), &[1.0]);
    }
}
