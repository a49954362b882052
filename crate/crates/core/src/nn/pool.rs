use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Non-overlapping max pooling over `[H, W, C]`; trailing rows/columns that do
/// not fill a window are dropped.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaxPool2d {
    pub pool_h: usize,
    pub pool_w: usize,
}

#[derive(Clone, Debug)]
pub struct PoolCache {
    input_shape: Vec<usize>,
    argmax: Vec<usize>,
}

impl MaxPool2d {
    pub fn new(pool_h: usize, pool_w: usize) -> Result<Self> {
        if pool_h == 0 || pool_w == 0 {
            return Err(Error::Geometry("pool extent must be at least 1".into()));
        }
        Ok(MaxPool2d { pool_h, pool_w })
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (h / self.pool_h, w / self.pool_w)
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, PoolCache)> {
        x.expect_rank(3, "maxpool2d")?;
        let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (oh, ow) = self.output_hw(h, w);
        if oh == 0 || ow == 0 {
            return Err(Error::Geometry(format!(
                "pool {}x{} larger than input {h}x{w}",
                self.pool_h, self.pool_w
            )));
        }
        let mut out = Tensor::zeros(&[oh, ow, c]);
        let mut argmax = vec![0usize; oh * ow * c];
        let xd = x.data();
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = 0;
                    for py in 0..self.pool_h {
                        for px in 0..self.pool_w {
                            let i = ((oy * self.pool_h + py) * w + ox * self.pool_w + px) * c + ch;
                            if xd[i] > best {
                                best = xd[i];
                                best_i = i;
                            }
                        }
                    }
                    let o = (oy * ow + ox) * c + ch;
                    out.data_mut()[o] = best;
                    argmax[o] = best_i;
                }
            }
        }
        Ok((
            out,
            PoolCache {
                input_shape: x.shape().to_vec(),
                argmax,
            },
        ))
    }

    pub fn backward(&self, cache: &PoolCache, grad: &Tensor) -> Result<Tensor> {
        let mut gx = Tensor::zeros(&cache.input_shape);
        for (&i, &g) in cache.argmax.iter().zip(grad.data()) {
            gx.data_mut()[i] += g;
        }
        Ok(gx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_by_two_max() {
        let x = Tensor::from_vec(&[2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, _) = MaxPool2d::new(2, 2).unwrap().forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.data(), &[4.0]);
    }

    #[test]
    fn constant_stays_constant() {
        let x = Tensor::full(&[6, 9, 2], 3.5);
        let (y, _) = MaxPool2d::new(2, 2).unwrap().forward(&x).unwrap();
        assert_eq!(y.shape(), &[3, 4, 2]);
        assert!(y.data().iter().all(|&v| v == 3.5));
    }

    #[test]
    fn matches_naive_windowed_max() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::from_vec(&[6, 8, 1], (0..48).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let (y, _) = MaxPool2d::new(2, 2).unwrap().forward(&x).unwrap();
        for oy in 0..3 {
            for ox in 0..4 {
                let naive = [(0, 0), (0, 1), (1, 0), (1, 1)]
                    .iter()
                    .map(|&(dy, dx)| x.at3(2 * oy + dy, 2 * ox + dx, 0))
                    .fold(f64::NEG_INFINITY, f64::max);
                assert_eq!(y.at3(oy, ox, 0), naive);
            }
        }
    }

    #[test]
    fn zero_extent_rejected() {
        assert!(MaxPool2d::new(0, 2).is_err());
    }
}
