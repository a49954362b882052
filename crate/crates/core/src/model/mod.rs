//! Recognizer assembly: convolutional blocks, collapse, bidirectional GRUs and
//! the CTC output layer, built from a declarative [`ModelConfig`].

mod config;
mod layout;
pub mod table5;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{BlockConfig, ModelConfig, RecurrentConfig};
pub use layout::{BlockConv, LayoutString};
pub use table5::{table5_report, Table5Report, Table5Row, BASELINE_PUBLISHED, TABLE5};

use crate::error::{Error, Result};
use crate::nn::checkpoint::{Checkpoint, LayerRecord};
use crate::nn::cost::count_params;
use crate::nn::init::{glorot_uniform, orthogonal};
use crate::nn::{
    BatchNorm, Bgru, Conv2d, CostReport, Dense, DepthwiseSeparableConv2d, Dropout, ForwardCtx, GatedConv2d, Gru,
    GruVariant, Layer, LayerCache, LayerOp, MaxPool2d, Prelu, Tally, Tensor,
};
use crate::prob::ProbMatrix;

const CONFIG_KEY: &str = "model.config";

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    cfg: ModelConfig,
    layers: Vec<Layer>,
}

/// Activations kept by [`Model::forward_train`] for [`Model::backward`].
#[derive(Debug)]
pub struct Trace {
    caches: Vec<LayerCache>,
}

fn conv_weight(rng: &mut ChaCha8Rng, kh: usize, kw: usize, m: usize, n: usize) -> Tensor {
    glorot_uniform(rng, &[kh, kw, m, n], kh * kw * m, kh * kw * n)
}

fn gru(rng: &mut ChaCha8Rng, d: usize, u: usize, variant: GruVariant) -> Gru {
    let mut w = || glorot_uniform(rng, &[d, u], d, u);
    let (w_z, w_r, w_h) = (w(), w(), w());
    let zeros = || Tensor::zeros(&[u]);
    Gru {
        variant,
        w_z,
        w_r,
        w_h,
        u_z: orthogonal(rng, u),
        u_r: orthogonal(rng, u),
        u_h: orthogonal(rng, u),
        b_z: zeros(),
        b_r: zeros(),
        b_h: zeros(),
        recurrent_bias: (variant == GruVariant::ResetAfter).then(|| [zeros(), zeros(), zeros()]),
    }
}

fn build_layers(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Layer>> {
    cfg.validate()?;
    let mut layers = Vec::new();
    let mut channels = cfg.input[2];
    for (i, (b, kind)) in cfg.blocks.iter().zip(cfg.layout.blocks()).enumerate() {
        let name = |part: &str| format!("block{}.{part}", i + 1);
        let ([kh, kw], stride, (m, n)) = (b.kernel, (b.stride[0], b.stride[1]), (channels, b.filters));
        let op = match kind {
            BlockConv::Standard => LayerOp::Conv(Conv2d::new(
                conv_weight(rng, kh, kw, m, n),
                Tensor::zeros(&[n]),
                stride,
                cfg.padding,
            )?),
            BlockConv::Separable => {
                let dw = glorot_uniform(rng, &[kh, kw, m], kh * kw, kh * kw);
                let pw = conv_weight(rng, 1, 1, m, n);
                LayerOp::DwSep(DepthwiseSeparableConv2d::new(
                    dw,
                    Tensor::zeros(&[m]),
                    pw,
                    Tensor::zeros(&[n]),
                    stride,
                    cfg.padding,
                )?)
            }
        };
        layers.push(Layer::new(name("conv"), op));
        layers.push(Layer::new(name("prelu"), LayerOp::Prelu(Prelu::new(Tensor::zeros(&[n]))?)));
        layers.push(Layer::new(name("bn"), LayerOp::BatchNorm(BatchNorm::new(n))));
        if b.gated {
            let mut path = || Conv2d::new(conv_weight(rng, 3, 3, n, n), Tensor::zeros(&[n]), (1, 1), crate::nn::Padding::Same);
            let (f, g) = (path()?, path()?);
            layers.push(Layer::new(name("gated"), LayerOp::Gated(GatedConv2d::new(f, g)?)));
        }
        if b.dropout && cfg.dropout_rate > 0.0 {
            layers.push(Layer::new(name("dropout"), LayerOp::Dropout(Dropout::new(cfg.dropout_rate)?)));
        }
        if let Some([ph, pw]) = b.pool {
            layers.push(Layer::new(name("pool"), LayerOp::MaxPool(MaxPool2d::new(ph, pw)?)));
        }
        channels = n;
    }
    layers.push(Layer::new("collapse", LayerOp::Collapse));
    let mut shape = cfg.input.to_vec();
    for l in &layers {
        shape = l.output_shape(&shape)?;
    }
    if shape[0] == 0 {
        return Err(Error::Geometry("feature sequence is empty".into()));
    }
    let mut features = shape[1];
    let rec = &cfg.recurrent;
    for r in 0..rec.layers {
        let (f, b) = (
            gru(rng, features, rec.units, rec.variant),
            gru(rng, features, rec.units, rec.variant),
        );
        layers.push(Layer::new(format!("bgru{}", r + 1), LayerOp::Bgru(Bgru::new(f, b)?)));
        features = 2 * rec.units;
        if r + 1 < rec.layers && rec.dense_between > 0 {
            let k = rec.dense_between;
            let w = glorot_uniform(rng, &[features, k], features, k);
            layers.push(Layer::new(format!("dense{}", r + 1), LayerOp::Dense(Dense::new(w, Tensor::zeros(&[k]))?)));
            features = k;
        }
    }
    let k = cfg.charset_size + 1;
    let w = glorot_uniform(rng, &[features, k], features, k);
    layers.push(Layer::new("output", LayerOp::Dense(Dense::new(w, Tensor::zeros(&[k]))?)));
    Ok(layers)
}

impl Model {
    /// Seeded construction; equal seeds give bitwise-equal weights.
    pub fn build(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = build_layers(cfg, &mut rng)?;
        Ok(Model {
            cfg: cfg.clone(),
            layers,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn layer(&self, name: &str) -> Option<&Layer> {
        self.layers.iter().find(|l| l.name == name)
    }

    /// Output classes: characters plus blank.
    pub fn classes(&self) -> usize {
        self.cfg.charset_size + 1
    }

    /// Length of the output sequence.
    pub fn time_steps(&self) -> usize {
        self.output_shape().map(|s| s[0]).unwrap_or(0)
    }

    pub fn output_shape(&self) -> Result<Vec<usize>> {
        let mut shape = self.cfg.input.to_vec();
        for l in &self.layers {
            shape = l.output_shape(&shape)?;
        }
        Ok(shape)
    }

    /// Number of stored trainable scalars, counted from the tensors themselves.
    pub fn enumerated_params(&self) -> u64 {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Analytic cost of this model's layer list.
    pub fn cost_report(&self) -> Result<CostReport> {
        count_params(&self.layers, &self.cfg.input)
    }

    /// Inference: softmax output of shape `[T, C + 1]`.
    pub fn forward(&self, img: &Tensor) -> Result<ProbMatrix> {
        let logits = self.run(img, &mut ForwardCtx::inference(), &mut (), |_| {})?;
        ProbMatrix::softmax(&logits)
    }

    /// Inference with every convolution multiplication reported to `tally`.
    pub fn forward_tallied<T: Tally>(&self, img: &Tensor, tally: &mut T) -> Result<ProbMatrix> {
        let logits = self.run(img, &mut ForwardCtx::inference(), tally, |_| {})?;
        ProbMatrix::softmax(&logits)
    }

    /// Forward pass that keeps activations; returns pre-softmax logits `[T, C + 1]`.
    pub fn forward_train(&self, img: &Tensor, ctx: &mut ForwardCtx<'_>) -> Result<(Tensor, Trace)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let logits = self.run(img, ctx, &mut (), |c| caches.push(c))?;
        Ok((logits, Trace { caches }))
    }

    fn run<T: Tally>(
        &self,
        img: &Tensor,
        ctx: &mut ForwardCtx<'_>,
        tally: &mut T,
        mut keep: impl FnMut(LayerCache),
    ) -> Result<Tensor> {
        img.expect_shape(&self.cfg.input)?;
        let mut x = img.clone();
        for layer in &self.layers {
            let (y, cache) = layer.forward_tallied(&x, ctx, tally)?;
            keep(cache);
            x = y;
        }
        Ok(x)
    }

    /// Parameter gradients for a logit gradient, one list per layer in
    /// [`Layer::params`] order.
    pub fn backward(&self, trace: &Trace, grad_logits: &Tensor) -> Result<Vec<Vec<Tensor>>> {
        if trace.caches.len() != self.layers.len() {
            return Err(Error::MissingCache("model".into()));
        }
        let mut grads = vec![Vec::new(); self.layers.len()];
        let mut g = grad_logits.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let (gx, gp) = layer.backward(&trace.caches[i], &g)?;
            grads[i] = gp;
            if i > 0 {
                g = gx;
            }
        }
        Ok(grads)
    }

    /// Trainable tensors, flattened in layer order.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| l.params().into_iter().map(|(_, t)| t)).collect()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::default();
        ck.set_meta(CONFIG_KEY, self.cfg.to_toml());
        ck.layers = self
            .layers
            .iter()
            .map(|l| LayerRecord {
                name: l.name.clone(),
                kind: l.kind(),
                tensors: l.tensors().into_iter().map(|(n, t)| (n, t.clone())).collect(),
            })
            .collect();
        ck
    }

    /// Rebuilds the architecture from the embedded config and loads every tensor.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let text = ck
            .meta(CONFIG_KEY)
            .ok_or_else(|| Error::Format("checkpoint carries no model config".into()))?;
        let cfg = ModelConfig::from_toml(text)?;
        let mut model = Model::build(&cfg, 0)?;
        if ck.layers.len() != model.layers.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} layers, config builds {}",
                ck.layers.len(),
                model.layers.len()
            )));
        }
        for (layer, rec) in model.layers.iter_mut().zip(&ck.layers) {
            if layer.name != rec.name || layer.kind() != rec.kind {
                return Err(Error::Format(format!(
                    "checkpoint layer {} ({:?}) where {} ({:?}) was expected",
                    rec.name,
                    rec.kind,
                    layer.name,
                    layer.kind()
                )));
            }
            let names: Vec<String> = layer.tensors().into_iter().map(|(n, _)| n).collect();
            let slots = layer.tensors_mut();
            if slots.len() != rec.tensors.len() {
                return Err(Error::Format(format!("layer {}: tensor count mismatch", rec.name)));
            }
            for ((slot, name), (rname, t)) in slots.into_iter().zip(&names).zip(&rec.tensors) {
                if name != rname {
                    return Err(Error::Format(format!("layer {}: tensor {rname} where {name} was expected", rec.name)));
                }
                t.expect_shape(slot.shape())?;
                *slot = t.clone();
            }
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Analytic parameter and multiplication counts for `cfg`.
pub fn cost(cfg: &ModelConfig) -> Result<CostReport> {
    Model::build(cfg, 0)?.cost_report()
}

#[cfg(test)]
mod tests;
