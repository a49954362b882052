//! Parameter and multiplication accounting over a layer list.

use std::fmt;

use serde::Serialize;

use super::conv::{count_conv_params, count_mults, ConvKind};
use super::gru::count_gru_params;
use super::{Layer, LayerOp};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LayerCost {
    pub name: String,
    pub params: u64,
    pub mults: u64,
}

/// Totals always equal the sum of `per_layer`.
#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize)]
pub struct CostReport {
    pub params_total: u64,
    pub mults_total: u64,
    pub per_layer: Vec<LayerCost>,
}

impl CostReport {
    pub fn push(&mut self, entry: LayerCost) {
        self.params_total += entry.params;
        self.mults_total += entry.mults;
        self.per_layer.push(entry);
    }

    pub fn layer(&self, name: &str) -> Option<&LayerCost> {
        self.per_layer.iter().find(|l| l.name == name)
    }
}

impl fmt::Display for CostReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.per_layer.iter().map(|l| l.name.len()).max().unwrap_or(5).max(5);
        writeln!(f, "{:<width$}  {:>12}  {:>16}", "layer", "params", "mults")?;
        for l in &self.per_layer {
            writeln!(f, "{:<width$}  {:>12}  {:>16}", l.name, l.params, l.mults)?;
        }
        write!(f, "{:<width$}  {:>12}  {:>16}", "total", self.params_total, self.mults_total)
    }
}

/// Analytic cost of one layer for an input of shape `input`.
///
/// Parameter counts come from the closed-form formulas, not from the allocated
/// tensors, so the two can be compared.
pub fn layer_cost(layer: &Layer, input: &[usize]) -> Result<LayerCost> {
    let (params, mults) = match &layer.op {
        LayerOp::Conv(_) | LayerOp::DwSep(_) | LayerOp::Gated(_) => {
            let g = layer.conv_geometry(input)?.expect("convolutional layer");
            match &layer.op {
                LayerOp::Conv(_) => (
                    count_conv_params(&g, ConvKind::Standard),
                    count_mults(&g, ConvKind::Standard)?,
                ),
                LayerOp::DwSep(_) => (
                    count_conv_params(&g, ConvKind::DepthwiseSeparable),
                    count_mults(&g, ConvKind::DepthwiseSeparable)?,
                ),
                _ => (
                    2 * count_conv_params(&g, ConvKind::Standard),
                    2 * count_mults(&g, ConvKind::Standard)?,
                ),
            }
        }
        LayerOp::Prelu(p) => (p.alpha.len() as u64, 0),
        LayerOp::BatchNorm(b) => (2 * b.gamma.len() as u64, 0),
        LayerOp::Bgru(b) => {
            let (t, d, u) = (input[0] as u64, b.forward.input_dim(), b.units());
            let per_dir = count_gru_params(d, u, b.forward.variant);
            let step = 3 * (d * u + u * u) as u64;
            (2 * per_dir, 2 * step * t)
        }
        LayerOp::Dense(l) => {
            let (d, k) = (l.input_dim() as u64, l.output_dim() as u64);
            (d * k + k, input[0] as u64 * d * k)
        }
        LayerOp::Dropout(_) | LayerOp::MaxPool(_) | LayerOp::Collapse => (0, 0),
    };
    Ok(LayerCost {
        name: layer.name.clone(),
        params,
        mults,
    })
}

/// Cost of a layer stack fed an input of shape `input`.
pub fn count_params(layers: &[Layer], input: &[usize]) -> Result<CostReport> {
    let mut report = CostReport::default();
    let mut shape = input.to_vec();
    for layer in layers {
        report.push(layer_cost(layer, &shape)?);
        shape = layer.output_shape(&shape)?;
    }
    Ok(report)
}
