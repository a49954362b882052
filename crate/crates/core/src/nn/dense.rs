use super::tensor::{matmul_acc, Tensor};
use crate::error::{Error, Result};
use crate::prob::ProbMatrix;

/// Fully connected layer applied to every row of a `[T, D]` sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        weight.expect_rank(2, "dense weight")?;
        bias.expect_shape(&[weight.shape()[1]])?;
        Ok(Dense { weight, bias })
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.expect_rank(2, "dense")?;
        if x.shape()[1] != self.input_dim() {
            return Err(Error::Geometry(format!(
                "dense expects {} features, got {}",
                self.input_dim(),
                x.shape()[1]
            )));
        }
        let t = x.shape()[0];
        let k = self.output_dim();
        let mut y = Tensor::zeros(&[t, k]);
        for r in 0..t {
            y.data_mut()[r * k..(r + 1) * k].copy_from_slice(self.bias.data());
        }
        matmul_acc(x.data(), self.weight.data(), y.data_mut(), t, self.input_dim(), k);
        Ok(y)
    }

    /// `input` is the forward input. Returns the input gradient and `[d_weight, d_bias]`.
    pub fn backward(&self, input: &Tensor, grad: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let (t, d, k) = (input.shape()[0], self.input_dim(), self.output_dim());
        grad.expect_shape(&[t, k])?;
        let mut gx = Tensor::zeros(&[t, d]);
        let mut gw = Tensor::zeros(&[d, k]);
        let mut gb = Tensor::zeros(&[k]);
        let (xd, gd, wd) = (input.data(), grad.data(), self.weight.data());
        for r in 0..t {
            let g = &gd[r * k..(r + 1) * k];
            for (b, gv) in gb.data_mut().iter_mut().zip(g) {
                *b += gv;
            }
            for i in 0..d {
                let xv = xd[r * d + i];
                let wrow = &wd[i * k..(i + 1) * k];
                let gwrow = &mut gw.data_mut()[i * k..(i + 1) * k];
                let mut acc = 0.0;
                for j in 0..k {
                    gwrow[j] += xv * g[j];
                    acc += wrow[j] * g[j];
                }
                gx.data_mut()[r * d + i] = acc;
            }
        }
        Ok((gx, vec![gw, gb]))
    }

    pub fn params(&self) -> Vec<(&'static str, &Tensor)> {
        vec![("weight", &self.weight), ("bias", &self.bias)]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Dense projection to `C+1` logits followed by a row softmax.
pub fn dense_softmax(x: &Tensor, layer: &Dense) -> Result<ProbMatrix> {
    ProbMatrix::softmax(&layer.forward(x)?)
}
