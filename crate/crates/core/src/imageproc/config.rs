use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocConfig {
    /// Odd side length of the Sauvola window.
    pub sauvola_window: usize,
    pub sauvola_k: f64,
    /// Dynamic range of the standard deviation.
    pub sauvola_r: f64,
    /// Shear search range and step, degrees.
    pub shear_min: f64,
    pub shear_max: f64,
    pub shear_step: f64,
    pub target_h: usize,
    pub target_w: usize,
}

impl Default for PreprocConfig {
    fn default() -> Self {
        PreprocConfig {
            sauvola_window: 25,
            sauvola_k: 0.2,
            sauvola_r: 128.0,
            shear_min: -45.0,
            shear_max: 45.0,
            shear_step: 3.0,
            target_h: 128,
            target_w: 1024,
        }
    }
}

impl PreprocConfig {
    // negated comparisons also reject NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if self.sauvola_window < 3 || self.sauvola_window.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "sauvola_window must be odd and >= 3, got {}",
                self.sauvola_window
            )));
        }
        if !(self.sauvola_r > 0.0) || !self.sauvola_k.is_finite() {
            return Err(Error::Config("sauvola_r must be positive and sauvola_k finite".into()));
        }
        if !(self.shear_min < self.shear_max) || !(self.shear_step > 0.0) {
            return Err(Error::Config(format!(
                "shear range [{}, {}] step {} is invalid",
                self.shear_min, self.shear_max, self.shear_step
            )));
        }
        if self.shear_min <= -90.0 || self.shear_max >= 90.0 {
            return Err(Error::Config("shear angles must lie strictly within (-90, 90) degrees".into()));
        }
        if self.target_h == 0 || self.target_w == 0 {
            return Err(Error::Config("target size must be positive".into()));
        }
        Ok(())
    }

    /// Candidate shear angles ordered by `|angle|`, negative before positive.
    pub fn shear_grid(&self) -> Vec<f64> {
        let n = ((self.shear_max - self.shear_min) / self.shear_step + 1e-9).floor() as usize;
        let mut grid: Vec<f64> = (0..=n).map(|i| self.shear_min + i as f64 * self.shear_step).collect();
        grid.sort_by(|a, b| a.abs().total_cmp(&b.abs()).then(a.total_cmp(b)));
        grid
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = PreprocConfig::default();
        c.validate().unwrap();
        let g = c.shear_grid();
        assert_eq!(g.len(), 31);
        assert_eq!(&g[..3], &[0.0, -3.0, 3.0]);
        assert_eq!(*g.last().unwrap(), 45.0);
    }

    #[test]
    fn rejects_bad_values() {
        let bad = [
            PreprocConfig { sauvola_window: 4, ..Default::default() },
            PreprocConfig { sauvola_window: 1, ..Default::default() },
            PreprocConfig { shear_min: 5.0, shear_max: 5.0, ..Default::default() },
            PreprocConfig { shear_step: 0.0, ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err());
        }
    }

    #[test]
    fn parses_partial_toml() {
        let c: PreprocConfig = toml::from_str("sauvola_window = 15\nsauvola_k = 0.3").unwrap();
        assert_eq!(c.sauvola_window, 15);
        assert_eq!(c.target_w, 1024);
        assert!(toml::from_str::<PreprocConfig>("window = 3").is_err());
    }
}
