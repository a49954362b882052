use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BlockConv {
    /// `C`: standard convolution.
    Standard,
    /// `D`: depthwise-separable convolution.
    Separable,
}

/// Per-block convolution choice written as symbols joined by `--`, e.g. `C--C--C--D--D--C`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LayoutString(Vec<BlockConv>);

impl LayoutString {
    pub fn new(blocks: Vec<BlockConv>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::Config("layout needs at least one block".into()));
        }
        Ok(LayoutString(blocks))
    }

    pub fn all(kind: BlockConv, n: usize) -> Result<Self> {
        Self::new(vec![kind; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn blocks(&self) -> &[BlockConv] {
        &self.0
    }

    /// Indices of the depthwise-separable blocks.
    pub fn separable_blocks(&self) -> Vec<usize> {
        (0..self.0.len()).filter(|&i| self.0[i] == BlockConv::Separable).collect()
    }
}

impl FromStr for LayoutString {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let tokens: Vec<&str> = if s.contains('-') {
            s.split("--").collect()
        } else {
            s.split("").filter(|t| !t.is_empty()).collect()
        };
        let blocks = tokens
            .iter()
            .map(|t| match *t {
                "C" | "c" => Ok(BlockConv::Standard),
                "D" | "d" => Ok(BlockConv::Separable),
                _ => Err(Error::Config(format!(
                    "invalid layout {s:?}: expected C/D symbols joined by \"--\""
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(blocks)
    }
}

impl fmt::Display for LayoutString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = self
            .0
            .iter()
            .map(|b| match b {
                BlockConv::Standard => "C",
                BlockConv::Separable => "D",
            })
            .collect();
        f.write_str(&parts.join("--"))
    }
}

impl serde::Serialize for LayoutString {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> serde::Deserialize<'de> for LayoutString {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_display() {
        let l: LayoutString = "C--C--C--D--D--C".parse().unwrap();
        assert_eq!(l.len(), 6);
        assert_eq!(l.separable_blocks(), vec![3, 4]);
        assert_eq!(l.to_string(), "C--C--C--D--D--C");
        assert_eq!("CCD".parse::<LayoutString>().unwrap().to_string(), "C--C--D");
    }

    #[test]
    fn rejects_garbage() {
        for bad in ["", "C--X", "C-C", "C----D", "CE"] {
            assert!(bad.parse::<LayoutString>().is_err(), "{bad}");
        }
    }
}
