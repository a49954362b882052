//! Per-channel activation, normalization and dropout layers.

use rand::Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

fn channels_of(x: &Tensor) -> usize {
    *x.shape().last().unwrap_or(&1)
}

/// Parametric ReLU with one slope per channel (shared over spatial axes).
#[derive(Clone, Debug, PartialEq)]
pub struct Prelu {
    pub alpha: Tensor,
}

impl Prelu {
    pub fn new(alpha: Tensor) -> Result<Self> {
        alpha.expect_rank(1, "prelu alpha")?;
        Ok(Prelu { alpha })
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        if channels_of(x) != self.alpha.len() {
            return Err(Error::Geometry(format!(
                "prelu has {} channels, input shape {:?}",
                self.alpha.len(),
                x.shape()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        let c = self.alpha.len();
        let mut y = x.clone();
        for (i, v) in y.data_mut().iter_mut().enumerate() {
            if *v < 0.0 {
                *v *= self.alpha.data()[i % c];
            }
        }
        Ok(y)
    }

    /// `input` is the forward input. Returns the input gradient and `[d_alpha]`.
    pub fn backward(&self, input: &Tensor, grad: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        self.check(input)?;
        let c = self.alpha.len();
        let mut gx = grad.clone();
        let mut ga = Tensor::zeros(&[c]);
        for (i, (&x, g)) in input.data().iter().zip(gx.data_mut()).enumerate() {
            if x < 0.0 {
                ga.data_mut()[i % c] += x * *g;
                *g *= self.alpha.data()[i % c];
            }
        }
        Ok((gx, vec![ga]))
    }
}

/// Batch normalization in inference form: fixed running statistics, trainable
/// scale and shift.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: Tensor::full(&[channels], 1.0),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], 1.0),
            eps: 1e-3,
        }
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        if channels_of(x) != self.gamma.len() {
            return Err(Error::Geometry(format!(
                "batchnorm has {} channels, input shape {:?}",
                self.gamma.len(),
                x.shape()
            )));
        }
        Ok(())
    }

    fn inv_std(&self, c: usize) -> f64 {
        1.0 / (self.running_var.data()[c] + self.eps).sqrt()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        let c = self.gamma.len();
        let mut y = x.clone();
        for (i, v) in y.data_mut().iter_mut().enumerate() {
            let ch = i % c;
            let xhat = (*v - self.running_mean.data()[ch]) * self.inv_std(ch);
            *v = self.gamma.data()[ch] * xhat + self.beta.data()[ch];
        }
        Ok(y)
    }

    /// Returns the input gradient and `[d_gamma, d_beta]`.
    pub fn backward(&self, input: &Tensor, grad: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        self.check(input)?;
        let c = self.gamma.len();
        let mut gx = grad.clone();
        let mut gg = Tensor::zeros(&[c]);
        let mut gb = Tensor::zeros(&[c]);
        for (i, (&x, g)) in input.data().iter().zip(gx.data_mut()).enumerate() {
            let ch = i % c;
            let inv = self.inv_std(ch);
            gg.data_mut()[ch] += (x - self.running_mean.data()[ch]) * inv * *g;
            gb.data_mut()[ch] += *g;
            *g *= self.gamma.data()[ch] * inv;
        }
        Ok((gx, vec![gg, gb]))
    }
}

/// Inverted dropout: kept activations are scaled by `1 / (1 - rate)` at train time.
#[derive(Clone, Debug, PartialEq)]
pub struct Dropout {
    pub rate: f64,
}

impl Dropout {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} not in [0, 1)")));
        }
        Ok(Dropout { rate })
    }

    /// Returns the output and the per-element multiplier (absent at inference).
    pub fn forward<R: Rng>(&self, x: &Tensor, rng: Option<&mut R>) -> (Tensor, Option<Vec<f64>>) {
        match rng {
            Some(rng) if self.rate > 0.0 => {
                let keep = 1.0 - self.rate;
                let mask: Vec<f64> = (0..x.len())
                    .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect();
                let mut y = x.clone();
                for (v, m) in y.data_mut().iter_mut().zip(&mask) {
                    *v *= m;
                }
                (y, Some(mask))
            }
            _ => (x.clone(), None),
        }
    }

    pub fn backward(&self, mask: Option<&[f64]>, grad: &Tensor) -> Tensor {
        let mut g = grad.clone();
        if let Some(mask) = mask {
            for (v, m) in g.data_mut().iter_mut().zip(mask) {
                *v *= m;
            }
        }
        g
    }
}

/// Collapses `[H, W, C]` feature maps into a `[W, H*C]` sequence (time = width).
pub fn collapse(x: &Tensor) -> Result<Tensor> {
    x.expect_rank(3, "collapse")?;
    let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut out = Tensor::zeros(&[w, h * c]);
    let xd = x.data();
    let od = out.data_mut();
    for y in 0..h {
        for t in 0..w {
            let src = (y * w + t) * c;
            let dst = t * h * c + y * c;
            od[dst..dst + c].copy_from_slice(&xd[src..src + c]);
        }
    }
    Ok(out)
}

/// Inverse of [`collapse`], used to route gradients back into feature maps.
pub fn uncollapse(seq: &Tensor, h: usize, c: usize) -> Result<Tensor> {
    seq.expect_rank(2, "uncollapse")?;
    let w = seq.shape()[0];
    if seq.shape()[1] != h * c {
        return Err(Error::Shape {
            expected: vec![w, h * c],
            actual: seq.shape().to_vec(),
        });
    }
    let mut out = Tensor::zeros(&[h, w, c]);
    let sd = seq.data();
    let od = out.data_mut();
    for y in 0..h {
        for t in 0..w {
            let dst = (y * w + t) * c;
            let src = t * h * c + y * c;
            od[dst..dst + c].copy_from_slice(&sd[src..src + c]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dropout_is_seeded_and_inverted() {
        let x = Tensor::full(&[1000], 1.0);
        let d = Dropout::new(0.25).unwrap();
        let (a, _) = d.forward(&x, Some(&mut ChaCha8Rng::seed_from_u64(9)));
        let (b, _) = d.forward(&x, Some(&mut ChaCha8Rng::seed_from_u64(9)));
        assert_eq!(a, b);
        assert!(a.data().iter().all(|&v| v == 0.0 || (v - 1.0 / 0.75).abs() < 1e-15));
        let (c, mask) = d.forward::<ChaCha8Rng>(&x, None);
        assert_eq!(c, x);
        assert!(mask.is_none());
        assert!(Dropout::new(1.0).is_err());
    }

    #[test]
    fn collapse_round_trip() {
        let x = Tensor::from_vec(&[2, 3, 2], (0..12).map(f64::from).collect()).unwrap();
        let s = collapse(&x).unwrap();
        assert_eq!(s.shape(), &[3, 4]);
        // time step 1 holds column 1 of every row, channels innermost
        assert_eq!(s.row(1), &[x.at3(0, 1, 0), x.at3(0, 1, 1), x.at3(1, 1, 0), x.at3(1, 1, 1)]);
        assert_eq!(uncollapse(&s, 2, 2).unwrap(), x);
    }

    #[test]
    fn prelu_slopes_negatives_only() {
        let p = Prelu::new(Tensor::from_vec(&[2], vec![0.5, 0.0]).unwrap()).unwrap();
        let x = Tensor::from_vec(&[2, 2], vec![-2.0, -2.0, 3.0, 3.0]).unwrap();
        assert_eq!(p.forward(&x).unwrap().data(), &[-1.0, 0.0, 3.0, 3.0]);
    }
}
