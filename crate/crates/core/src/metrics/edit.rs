use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Edit operations turning a hypothesis into the ground truth.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditOps {
    pub substitutions: usize,
    /// Hypothesis symbols with no ground-truth counterpart.
    pub deletions: usize,
    /// Ground-truth symbols missing from the hypothesis.
    pub insertions: usize,
    /// Ground-truth length.
    pub reference_len: usize,
}

impl EditOps {
    pub fn total(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    /// `total / reference_len`; may exceed 1.
    pub fn rate(&self) -> Result<f64> {
        if self.reference_len == 0 {
            return Err(Error::Data("error rate is undefined for an empty ground truth".into()));
        }
        Ok(self.total() as f64 / self.reference_len as f64)
    }

    fn add(&mut self, other: &EditOps) {
        self.substitutions += other.substitutions;
        self.deletions += other.deletions;
        self.insertions += other.insertions;
        self.reference_len += other.reference_len;
    }
}

impl std::ops::Add for EditOps {
    type Output = EditOps;

    fn add(mut self, rhs: EditOps) -> EditOps {
        EditOps::add(&mut self, &rhs);
        self
    }
}

impl std::iter::Sum for EditOps {
    fn sum<I: Iterator<Item = EditOps>>(iter: I) -> Self {
        iter.fold(EditOps::default(), |a, b| a + b)
    }
}

/// Unit-cost Levenshtein alignment of `hyp` onto `gt`.
///
/// The operation counts come from a single traceback that prefers a diagonal
/// step (match or substitution), then a deletion, then an insertion.
pub fn edit_distance<T: PartialEq>(hyp: &[T], gt: &[T]) -> EditOps {
    let (n, m) = (hyp.len(), gt.len());
    let w = m + 1;
    let mut d = vec![0usize; (n + 1) * w];
    for j in 0..=m {
        d[j] = j;
    }
    for i in 1..=n {
        d[i * w] = i;
        for j in 1..=m {
            let diag = d[(i - 1) * w + j - 1] + usize::from(hyp[i - 1] != gt[j - 1]);
            let del = d[(i - 1) * w + j] + 1;
            let ins = d[i * w + j - 1] + 1;
            d[i * w + j] = diag.min(del).min(ins);
        }
    }
    let mut ops = EditOps {
        reference_len: m,
        ..EditOps::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 {
            let differ = hyp[i - 1] != gt[j - 1];
            if d[(i - 1) * w + j - 1] + usize::from(differ) == here {
                ops.substitutions += usize::from(differ);
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && d[(i - 1) * w + j] + 1 == here {
            ops.deletions += 1;
            i -= 1;
        } else {
            ops.insertions += 1;
            j -= 1;
        }
    }
    ops
}

pub fn char_ops(gt: &str, hyp: &str) -> EditOps {
    let g: Vec<char> = gt.chars().collect();
    let h: Vec<char> = hyp.chars().collect();
    edit_distance(&h, &g)
}

pub fn word_ops(gt: &str, hyp: &str) -> EditOps {
    let g: Vec<&str> = gt.split_whitespace().collect();
    let h: Vec<&str> = hyp.split_whitespace().collect();
    edit_distance(&h, &g)
}

/// Character error rate over Unicode scalar values.
pub fn cer(gt: &str, hyp: &str) -> Result<f64> {
    char_ops(gt, hyp).rate()
}

/// Word error rate over whitespace-separated tokens.
pub fn wer(gt: &str, hyp: &str) -> Result<f64> {
    word_ops(gt, hyp).rate()
}
