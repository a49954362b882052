//! Word beam search: CTC decoding constrained to a lexicon, optionally scored
//! with a word bigram language model.

mod charset;
mod decoder;
pub mod lm;
mod tree;

pub use charset::CharSet;
pub use decoder::{split_words, Decoded, DecoderConfig, DecoderMode, WordBeamSearch};
pub use lm::WordLM;
pub use tree::{PrefixTree, Rejected};

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::prob::ProbMatrix;

/// Splits a `[batch, T, C+1]` output into one `T x (C+1)` matrix per sample.
pub fn swap_axes_for_decoder(raw: &Tensor) -> Result<Vec<ProbMatrix>> {
    if raw.rank() != 3 {
        return Err(Error::Shape {
            expected: vec![0, 0, 0],
            actual: raw.shape().to_vec(),
        });
    }
    let (b, t, k) = (raw.shape()[0], raw.shape()[1], raw.shape()[2]);
    raw.data()
        .chunks(t * k)
        .take(b)
        .map(|chunk| ProbMatrix::new(t, k, chunk.to_vec()))
        .collect()
}

/// Inverse of [`swap_axes_for_decoder`].
pub fn stack_for_model(mats: &[ProbMatrix]) -> Result<Tensor> {
    let (t, k) = mats.first().map_or((0, 1), |m| (m.steps(), m.classes()));
    if mats.iter().any(|m| m.steps() != t || m.classes() != k) {
        return Err(Error::Invalid("matrices in a batch must share their shape".into()));
    }
    let data = mats.iter().flat_map(|m| m.values().iter().copied()).collect();
    Tensor::from_vec(&[mats.len(), t, k], data)
}

/// True when every maximal word-character run of `indices` is a word of `tree`.
pub fn is_lexically_sound(indices: &[usize], charset: &CharSet, tree: &PrefixTree) -> bool {
    indices
        .split(|&i| !charset.is_word_index(i))
        .filter(|w| !w.is_empty())
        .all(|w| tree.contains(w))
}
