//! Tensor type, layer kernels with hand-written backward passes, and cost accounting.

pub mod checkpoint;
pub mod conv;
pub mod cost;
pub mod dense;
pub mod gradcheck;
pub mod elementwise;
pub mod gru;
pub mod init;
pub mod pool;
pub mod tensor;

use rand_chacha::ChaCha8Rng;

pub use conv::{count_mults, ConvGeometry, ConvKind, Conv2d, DepthwiseSeparableConv2d, GatedConv2d, MulCount, Padding, Tally};
pub use cost::{CostReport, LayerCost};
pub use dense::{dense_softmax, Dense};
pub use elementwise::{collapse, uncollapse, BatchNorm, Dropout, Prelu};
pub use gru::{bgru, gru_sequence, Bgru, Gru, GruVariant};
pub use pool::MaxPool2d;
pub use tensor::Tensor;

use crate::error::{Error, Result};

/// Layer kinds, doubling as the checkpoint kind tag.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum LayerKind {
    Conv = 1,
    DwSepConv = 2,
    GatedConv = 3,
    MaxPool = 4,
    Gru = 5,
    Bgru = 6,
    Dense = 7,
    BatchNorm = 8,
    Dropout = 9,
    Activation = 10,
    Reshape = 11,
}

impl LayerKind {
    pub fn from_tag(tag: u8) -> Option<Self> {
        use LayerKind::*;
        [Conv, DwSepConv, GatedConv, MaxPool, Gru, Bgru, Dense, BatchNorm, Dropout, Activation, Reshape]
            .into_iter()
            .find(|k| *k as u8 == tag)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerOp {
    Conv(Conv2d),
    DwSep(DepthwiseSeparableConv2d),
    Gated(GatedConv2d),
    Prelu(Prelu),
    BatchNorm(BatchNorm),
    Dropout(Dropout),
    MaxPool(MaxPool2d),
    /// `[H, W, C] -> [W, H*C]`
    Collapse,
    Bgru(Bgru),
    Dense(Dense),
}

/// A named layer of the recognizer.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub name: String,
    pub op: LayerOp,
}

/// Per-call forward state: training flag plus the dropout generator.
pub struct ForwardCtx<'a> {
    pub training: bool,
    pub rng: Option<&'a mut ChaCha8Rng>,
}

impl ForwardCtx<'_> {
    pub fn inference() -> Self {
        ForwardCtx {
            training: false,
            rng: None,
        }
    }
}

/// Activations retained by a forward pass for the matching backward pass.
#[derive(Clone, Debug)]
pub enum LayerCache {
    Conv(conv::ConvCache),
    DwSep(conv::DwSepCache),
    Gated(conv::GatedCache),
    Input(Tensor),
    Dropout(Option<Vec<f64>>),
    Pool(pool::PoolCache),
    Collapse { h: usize, c: usize },
    Bgru(gru::BgruCache),
}

impl Layer {
    pub fn new(name: impl Into<String>, op: LayerOp) -> Self {
        Layer { name: name.into(), op }
    }

    pub fn kind(&self) -> LayerKind {
        match &self.op {
            LayerOp::Conv(_) => LayerKind::Conv,
            LayerOp::DwSep(_) => LayerKind::DwSepConv,
            LayerOp::Gated(_) => LayerKind::GatedConv,
            LayerOp::Prelu(_) => LayerKind::Activation,
            LayerOp::BatchNorm(_) => LayerKind::BatchNorm,
            LayerOp::Dropout(_) => LayerKind::Dropout,
            LayerOp::MaxPool(_) => LayerKind::MaxPool,
            LayerOp::Collapse => LayerKind::Reshape,
            LayerOp::Bgru(_) => LayerKind::Bgru,
            LayerOp::Dense(_) => LayerKind::Dense,
        }
    }

    pub fn forward(&self, x: &Tensor, ctx: &mut ForwardCtx<'_>) -> Result<(Tensor, LayerCache)> {
        self.forward_tallied(x, ctx, &mut ())
    }

    /// Forward pass with the convolution kernels reporting every multiplication to `tally`.
    pub fn forward_tallied<T: Tally>(
        &self,
        x: &Tensor,
        ctx: &mut ForwardCtx<'_>,
        tally: &mut T,
    ) -> Result<(Tensor, LayerCache)> {
        let out = match &self.op {
            LayerOp::Conv(l) => {
                let (y, c) = l.forward_tallied(x, tally)?;
                (y, LayerCache::Conv(c))
            }
            LayerOp::DwSep(l) => {
                let (y, c) = l.forward_tallied(x, tally)?;
                (y, LayerCache::DwSep(c))
            }
            LayerOp::Gated(l) => {
                let (y, c) = l.forward_tallied(x, tally)?;
                (y, LayerCache::Gated(c))
            }
            LayerOp::Prelu(l) => (l.forward(x)?, LayerCache::Input(x.clone())),
            LayerOp::BatchNorm(l) => (l.forward(x)?, LayerCache::Input(x.clone())),
            LayerOp::Dropout(l) => {
                let rng = if ctx.training { ctx.rng.as_deref_mut() } else { None };
                let (y, mask) = l.forward(x, rng);
                (y, LayerCache::Dropout(mask))
            }
            LayerOp::MaxPool(l) => {
                let (y, c) = l.forward(x)?;
                (y, LayerCache::Pool(c))
            }
            LayerOp::Collapse => {
                let (h, c) = (x.shape()[0], x.shape()[2]);
                (collapse(x)?, LayerCache::Collapse { h, c })
            }
            LayerOp::Bgru(l) => {
                let (y, c) = l.run(x)?;
                (y, LayerCache::Bgru(c))
            }
            LayerOp::Dense(l) => (l.forward(x)?, LayerCache::Input(x.clone())),
        };
        out.0.ensure_finite(&self.name)?;
        Ok(out)
    }

    /// Returns the input gradient and one gradient per trainable tensor, in
    /// [`Layer::params`] order.
    pub fn backward(&self, cache: &LayerCache, grad: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let missing = || Error::MissingCache(self.name.clone());
        match (&self.op, cache) {
            (LayerOp::Conv(l), LayerCache::Conv(c)) => l.backward(c, grad),
            (LayerOp::DwSep(l), LayerCache::DwSep(c)) => l.backward(c, grad),
            (LayerOp::Gated(l), LayerCache::Gated(c)) => l.backward(c, grad),
            (LayerOp::Prelu(l), LayerCache::Input(x)) => l.backward(x, grad),
            (LayerOp::BatchNorm(l), LayerCache::Input(x)) => l.backward(x, grad),
            (LayerOp::Dropout(l), LayerCache::Dropout(m)) => Ok((l.backward(m.as_deref(), grad), vec![])),
            (LayerOp::MaxPool(l), LayerCache::Pool(c)) => Ok((l.backward(c, grad)?, vec![])),
            (LayerOp::Collapse, LayerCache::Collapse { h, c }) => Ok((uncollapse(grad, *h, *c)?, vec![])),
            (LayerOp::Bgru(l), LayerCache::Bgru(c)) => l.backward_pass(c, grad),
            (LayerOp::Dense(l), LayerCache::Input(x)) => l.backward(x, grad),
            _ => Err(missing()),
        }
    }

    /// Trainable tensors.
    pub fn params(&self) -> Vec<(&'static str, &Tensor)> {
        match &self.op {
            LayerOp::Conv(l) => l.params(),
            LayerOp::DwSep(l) => l.params(),
            LayerOp::Gated(l) => l.params(),
            LayerOp::Prelu(l) => vec![("alpha", &l.alpha)],
            LayerOp::BatchNorm(l) => vec![("gamma", &l.gamma), ("beta", &l.beta)],
            LayerOp::Bgru(l) => l.params(),
            LayerOp::Dense(l) => l.params(),
            LayerOp::Dropout(_) | LayerOp::MaxPool(_) | LayerOp::Collapse => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match &mut self.op {
            LayerOp::Conv(l) => l.params_mut(),
            LayerOp::DwSep(l) => l.params_mut(),
            LayerOp::Gated(l) => l.params_mut(),
            LayerOp::Prelu(l) => vec![&mut l.alpha],
            LayerOp::BatchNorm(l) => vec![&mut l.gamma, &mut l.beta],
            LayerOp::Bgru(l) => l.params_mut(),
            LayerOp::Dense(l) => l.params_mut(),
            LayerOp::Dropout(_) | LayerOp::MaxPool(_) | LayerOp::Collapse => vec![],
        }
    }

    /// Every stored tensor, trainable or not (checkpoint contents).
    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut t: Vec<(String, &Tensor)> = self.params().into_iter().map(|(n, t)| (n.to_string(), t)).collect();
        if let LayerOp::Bgru(_) = &self.op {
            // names repeat across directions
            let half = t.len() / 2;
            for (i, (n, _)) in t.iter_mut().enumerate() {
                *n = format!("{}.{n}", if i < half { "fwd" } else { "bwd" });
            }
        }
        if let LayerOp::BatchNorm(l) = &self.op {
            t.push(("running_mean".into(), &l.running_mean));
            t.push(("running_var".into(), &l.running_var));
        }
        t
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        if !matches!(self.op, LayerOp::BatchNorm(_)) {
            return self.params_mut();
        }
        match &mut self.op {
            LayerOp::BatchNorm(l) => vec![&mut l.gamma, &mut l.beta, &mut l.running_mean, &mut l.running_var],
            _ => unreachable!(),
        }
    }

    pub fn param_count(&self) -> u64 {
        self.params().iter().map(|(_, t)| t.len() as u64).sum()
    }

    /// Output shape for an input of shape `input`.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let rank = |r: usize| {
            if input.len() != r {
                Err(Error::Geometry(format!(
                    "layer {} expects rank {r}, got shape {input:?}",
                    self.name
                )))
            } else {
                Ok(())
            }
        };
        match &self.op {
            LayerOp::Conv(_) | LayerOp::DwSep(_) | LayerOp::Gated(_) => {
                rank(3)?;
                let g = self.conv_geometry(input)?.expect("convolutional layer");
                let (oh, ow) = g.output_hw()?;
                Ok(vec![oh, ow, g.out_channels])
            }
            LayerOp::MaxPool(p) => {
                rank(3)?;
                let (oh, ow) = p.output_hw(input[0], input[1]);
                if oh == 0 || ow == 0 {
                    return Err(Error::Geometry(format!("pool larger than input {input:?}")));
                }
                Ok(vec![oh, ow, input[2]])
            }
            LayerOp::Collapse => {
                rank(3)?;
                Ok(vec![input[1], input[0] * input[2]])
            }
            LayerOp::Bgru(l) => {
                rank(2)?;
                if input[1] != l.forward.input_dim() {
                    return Err(Error::Geometry(format!(
                        "layer {} expects {} features, got {}",
                        self.name,
                        l.forward.input_dim(),
                        input[1]
                    )));
                }
                Ok(vec![input[0], 2 * l.units()])
            }
            LayerOp::Dense(l) => {
                rank(2)?;
                if input[1] != l.input_dim() {
                    return Err(Error::Geometry(format!(
                        "layer {} expects {} features, got {}",
                        self.name,
                        l.input_dim(),
                        input[1]
                    )));
                }
                Ok(vec![input[0], l.output_dim()])
            }
            LayerOp::Prelu(_) | LayerOp::BatchNorm(_) | LayerOp::Dropout(_) => Ok(input.to_vec()),
        }
    }

    /// Convolution geometry for an `[H, W, C]` input, `None` for non-convolutional layers.
    pub fn conv_geometry(&self, input: &[usize]) -> Result<Option<ConvGeometry>> {
        let (kernel, stride, padding, m, n) = match &self.op {
            LayerOp::Conv(l) => (l.kernel(), l.stride, l.padding, l.in_channels(), l.out_channels()),
            LayerOp::DwSep(l) => (l.kernel(), l.stride, l.padding, l.in_channels(), l.out_channels()),
            LayerOp::Gated(l) => (
                l.feature.kernel(),
                l.feature.stride,
                l.feature.padding,
                l.feature.in_channels(),
                l.feature.out_channels(),
            ),
            _ => return Ok(None),
        };
        if input.len() != 3 || input[2] != m {
            return Err(Error::Geometry(format!(
                "layer {} expects [H, W, {m}], got {input:?}",
                self.name
            )));
        }
        let g = ConvGeometry {
            in_h: input[0],
            in_w: input[1],
            kernel_h: kernel.0,
            kernel_w: kernel.1,
            stride_h: stride.0,
            stride_w: stride.1,
            in_channels: m,
            out_channels: n,
            padding,
        };
        g.validate()?;
        Ok(Some(g))
    }
}


#[cfg(test)]
mod tests {
    use super::gradcheck::{check_layer, REL_TOL};
    use super::testutil::{random, rng};
    use super::*;

    #[test]
    fn elementwise_and_dense_gradients() {
        let mut r = rng(11);
        let mut bn = BatchNorm::new(3);
        bn.gamma = random(&mut r, &[3]);
        bn.beta = random(&mut r, &[3]);
        bn.running_mean = random(&mut r, &[3]);
        bn.running_var = Tensor::full(&[3], 0.7);
        let layers = [
            Layer::new("prelu", LayerOp::Prelu(Prelu::new(random(&mut r, &[3])).unwrap())),
            Layer::new("bn", LayerOp::BatchNorm(bn)),
            Layer::new("pool", LayerOp::MaxPool(MaxPool2d::new(2, 1).unwrap())),
            Layer::new("dropout", LayerOp::Dropout(Dropout::new(0.5).unwrap())),
            Layer::new("collapse", LayerOp::Collapse),
        ];
        let x = random(&mut r, &[4, 5, 3]);
        for layer in &layers {
            let proj = random(&mut r, &layer.output_shape(x.shape()).unwrap());
            let err = check_layer(layer, &x, &proj, 1e-5).unwrap();
            assert!(err < REL_TOL, "{}: {err}", layer.name);
        }
        let dense = Layer::new(
            "dense",
            LayerOp::Dense(Dense::new(random(&mut r, &[4, 3]), random(&mut r, &[3])).unwrap()),
        );
        let x = random(&mut r, &[5, 4]);
        let proj = random(&mut r, &[5, 3]);
        assert!(check_layer(&dense, &x, &proj, 1e-5).unwrap() < REL_TOL);
    }

    #[test]
    fn mismatched_cache_is_an_error() {
        let layer = Layer::new("pool", LayerOp::MaxPool(MaxPool2d::new(2, 2).unwrap()));
        let err = layer.backward(&LayerCache::Dropout(None), &Tensor::zeros(&[1, 1, 1]));
        assert!(matches!(err, Err(Error::MissingCache(_))));
    }

    #[test]
    fn kind_tags_round_trip() {
        for tag in 0..=255u8 {
            if let Some(k) = LayerKind::from_tag(tag) {
                assert_eq!(k as u8, tag);
            }
        }
        assert_eq!(LayerKind::from_tag(11), Some(LayerKind::Reshape));
        assert_eq!(LayerKind::from_tag(0), None);
    }
}
