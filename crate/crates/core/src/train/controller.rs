//! Early stopping combined with reduce-on-plateau, driven by the validation loss.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Decision {
    pub improved: bool,
    /// The learning rate was multiplied by the reduce factor after this epoch.
    pub reduced: bool,
    pub stop: bool,
}

/// Two patience counters sharing one best loss. The reduce counter restarts
/// after every reduction; the stop counter only restarts on improvement.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PlateauController {
    pub best: f64,
    pub since_improve: usize,
    pub since_reduce: usize,
    pub lr: f64,
    pub epoch: usize,
    stop_tolerance: usize,
    reduce_tolerance: usize,
    reduce_factor: f64,
    min_delta: f64,
}

impl PlateauController {
    pub fn new(lr: f64, stop_tolerance: usize, reduce_tolerance: usize, reduce_factor: f64, min_delta: f64) -> Self {
        PlateauController {
            best: f64::INFINITY,
            since_improve: 0,
            since_reduce: 0,
            lr,
            epoch: 0,
            stop_tolerance,
            reduce_tolerance,
            reduce_factor,
            min_delta,
        }
    }

    /// Feeds one epoch's validation loss. NaN is an error; `+inf` never improves.
    pub fn observe(&mut self, valid_loss: f64) -> Result<Decision> {
        if valid_loss.is_nan() {
            return Err(Error::Training(format!("validation loss is NaN at epoch {}", self.epoch + 1)));
        }
        self.epoch += 1;
        let improved = self.best - valid_loss >= self.min_delta;
        let mut reduced = false;
        if improved {
            self.best = valid_loss;
            self.since_improve = 0;
            self.since_reduce = 0;
        } else {
            self.since_improve += 1;
            self.since_reduce += 1;
            if self.since_reduce >= self.reduce_tolerance {
                self.lr *= self.reduce_factor;
                self.since_reduce = 0;
                reduced = true;
            }
        }
        Ok(Decision {
            improved,
            reduced,
            stop: self.since_improve >= self.stop_tolerance,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_trace() {
        let mut c = PlateauController::new(1e-3, 20, 15, 0.2, 1e-6);
        let mut reduced_at = vec![];
        let mut stop_at = None;
        for epoch in 1..=100 {
            let d = c.observe(5.0).unwrap();
            if d.reduced {
                reduced_at.push(epoch);
            }
            if d.stop {
                stop_at = Some(epoch);
                break;
            }
        }
        assert_eq!(reduced_at, vec![16]);
        assert_eq!(stop_at, Some(21));
        assert!((c.lr - 2e-4).abs() < 1e-18);
    }

    #[test]
    fn improvement_threshold() {
        let mut c = PlateauController::new(1.0, 3, 2, 0.5, 1e-6);
        assert!(c.observe(1.0).unwrap().improved);
        assert!(!c.observe(1.0 - 5e-7).unwrap().improved);
        assert!(c.observe(1.0 - 2e-6).unwrap().improved);
        assert!(!c.observe(f64::INFINITY).unwrap().improved);
        assert!(c.observe(f64::NAN).is_err());
    }
}
