use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Row tolerance used when validating that a matrix is row-stochastic.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// `T x (C+1)` per-timestep character distribution; the last column is the CTC blank.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbMatrix {
    steps: usize,
    classes: usize,
    values: Vec<f64>,
}

impl ProbMatrix {
    /// Wraps `values` after checking that every row sums to one and all entries are in `[0, 1]`.
    pub fn new(steps: usize, classes: usize, values: Vec<f64>) -> Result<Self> {
        let m = Self::new_unchecked(steps, classes, values)?;
        m.validate()?;
        Ok(m)
    }

    /// Wraps `values` checking only the shape.
    pub fn new_unchecked(steps: usize, classes: usize, values: Vec<f64>) -> Result<Self> {
        if classes < 1 {
            return Err(Error::Invalid("probability matrix needs a blank column".into()));
        }
        if values.len() != steps * classes {
            return Err(Error::Shape {
                expected: vec![steps, classes],
                actual: vec![values.len()],
            });
        }
        Ok(ProbMatrix {
            steps,
            classes,
            values,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let classes = rows.first().map_or(1, Vec::len);
        if rows.iter().any(|r| r.len() != classes) {
            return Err(Error::Invalid("ragged probability rows".into()));
        }
        Self::new(rows.len(), classes, rows.concat())
    }

    /// Row-wise softmax of a `[T, C+1]` logit tensor, stabilized by max subtraction.
    pub fn softmax(logits: &Tensor) -> Result<Self> {
        logits.expect_rank(2, "softmax")?;
        let (t, k) = (logits.shape()[0], logits.shape()[1]);
        let mut values = logits.data().to_vec();
        for row in values.chunks_mut(k.max(1)) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let m = Self::new_unchecked(t, k, values)?;
        if m.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("softmax output".into()));
        }
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        for t in 0..self.steps {
            let row = self.row(t);
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p) || p.is_nan()) {
                return Err(Error::Invalid(format!("row {t} has entries outside [0, 1]")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::Invalid(format!("row {t} sums to {s}, not 1")));
            }
        }
        Ok(())
    }

    /// Number of timesteps `T`.
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Number of columns `C + 1` (characters plus blank).
    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Index of the blank column.
    pub fn blank(&self) -> usize {
        self.classes - 1
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.classes..(t + 1) * self.classes]
    }

    pub fn get(&self, t: usize, k: usize) -> f64 {
        self.values[t * self.classes + k]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(&[self.steps, self.classes], self.values.clone())
            .expect("shape checked at construction")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_of_huge_equal_logits_is_uniform() {
        let l = Tensor::from_vec(&[1, 3], vec![1000.0, 1000.0, 1000.0]).unwrap();
        let p = ProbMatrix::softmax(&l).unwrap();
        for &v in p.row(0) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_non_stochastic_rows() {
        assert!(ProbMatrix::from_rows(&[vec![0.5, 0.4]]).is_err());
        assert!(ProbMatrix::from_rows(&[vec![1.2, -0.2]]).is_err());
        assert!(ProbMatrix::from_rows(&[vec![0.6, 0.4]]).is_ok());
    }
}
