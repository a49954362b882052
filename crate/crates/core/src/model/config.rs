use std::path::Path;

use serde::{Deserialize, Serialize};

use super::LayoutString;
use crate::error::{Error, Result};
use crate::nn::{GruVariant, Padding};

/// One convolutional block: convolution, PReLU, batch norm, then the optional
/// gated convolution, dropout and max pooling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockConfig {
    pub filters: usize,
    /// `[height, width]`
    pub kernel: [usize; 2],
    /// `[height, width]`
    pub stride: [usize; 2],
    #[serde(default)]
    pub gated: bool,
    #[serde(default)]
    pub dropout: bool,
    /// `[height, width]` max-pool extents.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool: Option<[usize; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecurrentConfig {
    /// Number of bidirectional GRU layers.
    pub layers: usize,
    /// Units per direction.
    pub units: usize,
    /// Width of the dense layer between consecutive BGRU layers (0 = none).
    #[serde(default)]
    pub dense_between: usize,
    #[serde(default)]
    pub variant: GruVariant,
}

/// Declarative description of the recognizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub name: String,
    /// `[height, width, channels]`
    pub input: [usize; 3],
    pub layout: LayoutString,
    pub padding: Padding,
    pub blocks: Vec<BlockConfig>,
    pub recurrent: RecurrentConfig,
    /// Characters C; the output layer has C + 1 columns.
    pub charset_size: usize,
    pub dropout_rate: f64,
}

const FLOR_BASE: &str = include_str!("../../configs/flor_base.toml");
const MICRO: &str = include_str!("../../configs/micro.toml");

impl ModelConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ModelConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Six-block reference geometry with two BGRU layers.
    pub fn flor_base() -> Self {
        Self::from_toml(FLOR_BASE).expect("bundled config is valid")
    }

    /// Two conv blocks and one 64-unit BGRU over a five-character alphabet.
    pub fn micro() -> Self {
        Self::from_toml(MICRO).expect("bundled config is valid")
    }

    pub fn with_layout(&self, layout: LayoutString) -> Result<Self> {
        let cfg = ModelConfig {
            layout,
            ..self.clone()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_charset_size(&self, charset_size: usize) -> Result<Self> {
        let cfg = ModelConfig {
            charset_size,
            ..self.clone()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.input.contains(&0) {
            return bad(format!("input shape {:?} has an empty extent", self.input));
        }
        if self.blocks.is_empty() {
            return bad("at least one convolutional block is required".into());
        }
        if self.layout.len() != self.blocks.len() {
            return bad(format!(
                "layout {} has {} symbols but the config defines {} blocks",
                self.layout,
                self.layout.len(),
                self.blocks.len()
            ));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            if b.filters == 0 || b.kernel.contains(&0) || b.stride.contains(&0) {
                return bad(format!("block {} has a zero filter count, kernel or stride", i + 1));
            }
            if b.pool.is_some_and(|p| p.contains(&0)) {
                return bad(format!("block {} has a zero pool extent", i + 1));
            }
        }
        if self.recurrent.layers > 0 && self.recurrent.units == 0 {
            return bad("recurrent units must be positive".into());
        }
        if self.charset_size == 0 {
            return bad("charset_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        Ok(())
    }
}
