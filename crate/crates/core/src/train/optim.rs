//! Parameter update rules.

use crate::error::{Error, Result};
use crate::nn::Tensor;

pub trait Optimizer: Send {
    /// Updates `params` in place from `grads` (same order and shapes).
    fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor], lr: f64) -> Result<()>;
}

fn check(params: &[&mut Tensor], grads: &[Tensor]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Invalid(format!(
            "{} parameter tensors but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        g.expect_shape(p.shape())?;
    }
    Ok(())
}

/// `acc = rho * acc + (1 - rho) * g^2; w -= lr * g / (sqrt(acc) + eps)`
#[derive(Clone, Debug, PartialEq)]
pub struct RmsProp {
    pub rho: f64,
    pub eps: f64,
    acc: Vec<Tensor>,
}

impl Default for RmsProp {
    fn default() -> Self {
        RmsProp {
            rho: 0.9,
            eps: 1e-8,
            acc: Vec::new(),
        }
    }
}

impl Optimizer for RmsProp {
    fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        check(params, grads)?;
        if self.acc.is_empty() {
            self.acc = grads.iter().map(|g| Tensor::zeros(g.shape())).collect();
        }
        if self.acc.len() != grads.len() {
            return Err(Error::Invalid("optimizer state belongs to a different model".into()));
        }
        for ((p, g), acc) in params.iter_mut().zip(grads).zip(&mut self.acc) {
            acc.expect_shape(g.shape())?;
            for ((w, &gv), a) in p.data_mut().iter_mut().zip(g.data()).zip(acc.data_mut()) {
                *a = self.rho * *a + (1.0 - self.rho) * gv * gv;
                *w -= lr * gv / (a.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Plain gradient descent.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Sgd;

impl Optimizer for Sgd {
    fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        check(params, grads)?;
        for (p, g) in params.iter_mut().zip(grads) {
            for (w, gv) in p.data_mut().iter_mut().zip(g.data()) {
                *w -= lr * gv;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn weights() -> Tensor {
        Tensor::from_vec(&[3], vec![0.5, -1.0, 2.0]).unwrap()
    }

    #[test]
    fn zero_gradient_keeps_weights() {
        let mut w = weights();
        let mut opt = RmsProp::default();
        opt.step(&mut [&mut w], &[Tensor::zeros(&[3])], 0.1).unwrap();
        assert_eq!(w, weights());
    }

    #[test]
    fn constant_gradient_step_tends_to_lr() {
        let g = Tensor::from_vec(&[3], vec![3.0, -0.02, 1e-3]).unwrap();
        let mut opt = RmsProp::default();
        let lr = 0.01;
        let mut w = weights();
        let mut prev = w.clone();
        for _ in 0..300 {
            opt.step(&mut [&mut w], std::slice::from_ref(&g), lr).unwrap();
            let steps: Vec<f64> = w.data().iter().zip(prev.data()).map(|(a, b)| b - a).collect();
            prev = w.clone();
            if opt.acc[0].data()[0] > 0.999 * 9.0 {
                for (s, gv) in steps.iter().zip(g.data()) {
                    let want = lr * gv.signum();
                    assert!((s - want).abs() < 1e-3 * lr, "{s} vs {want}");
                }
            }
        }
    }

    #[test]
    fn deterministic_and_checked() {
        let g = Tensor::from_vec(&[3], vec![0.1, 0.2, -0.3]).unwrap();
        let (mut a, mut b) = (weights(), weights());
        let (mut oa, mut ob) = (RmsProp::default(), RmsProp::default());
        oa.step(&mut [&mut a], std::slice::from_ref(&g), 0.1).unwrap();
        ob.step(&mut [&mut b], std::slice::from_ref(&g), 0.1).unwrap();
        assert_eq!(a, b);
        assert!(oa.step(&mut [&mut a], &[Tensor::zeros(&[2])], 0.1).is_err());
        assert!(Sgd.step(&mut [&mut a], &[], 0.1).is_err());
        let mut w = weights();
        Sgd.step(&mut [&mut w], std::slice::from_ref(&g), 1.0).unwrap();
        assert_eq!(w.data(), &[0.4, -1.2, 2.3]);
    }
}
