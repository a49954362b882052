use std::collections::HashMap;

use super::CharSet;
use crate::error::{Error, Result};

/// Word bigram model with additive smoothing.
///
/// `P(w2 | w1) = (c(w1, w2) + k) / (c(w1, .) + k |V|)`, where `c(w1, .)` sums the
/// bigrams starting at `w1` and the first word of every line is conditioned on a
/// sentence-start context. With `k = 0` an unseen context backs off to unigram
/// relative frequencies.
#[derive(Clone, Debug, PartialEq)]
pub struct WordLM {
    vocab: HashMap<String, usize>,
    unigrams: Vec<u64>,
    // keyed by (context, word); context == vocab size is the sentence start
    bigrams: HashMap<(usize, usize), u64>,
    context_totals: HashMap<usize, u64>,
    total: u64,
    smooth: f64,
}

/// Splits `line` into maximal runs of word characters. Runs containing a
/// character outside the charset are returned separately as rejected.
pub fn tokenize(line: &str, charset: &CharSet) -> (Vec<String>, Vec<String>) {
    let mut words = Vec::new();
    let mut rejected = Vec::new();
    let mut cur = String::new();
    let mut bad = false;
    let mut flush = |cur: &mut String, bad: &mut bool| {
        if !cur.is_empty() {
            if *bad {
                rejected.push(std::mem::take(cur));
            } else {
                words.push(std::mem::take(cur));
            }
        }
        *bad = false;
    };
    for c in line.chars() {
        match charset.index_of(c) {
            Some(i) if !charset.is_word_index(i) => flush(&mut cur, &mut bad),
            None if c.is_whitespace() => flush(&mut cur, &mut bad),
            Some(_) => cur.push(c),
            None => {
                bad = true;
                cur.push(c);
            }
        }
    }
    flush(&mut cur, &mut bad);
    (words, rejected)
}

impl WordLM {
    /// Builds the model from word sequences, one per corpus line.
    pub fn from_sentences<S: AsRef<str>>(sentences: &[Vec<S>], smooth: f64) -> Result<Self> {
        if !(smooth >= 0.0 && smooth.is_finite()) {
            return Err(Error::Config(format!("smoothing constant must be >= 0, got {smooth}")));
        }
        let mut vocab = HashMap::new();
        let mut unigrams = Vec::new();
        let mut ids: Vec<Vec<usize>> = Vec::with_capacity(sentences.len());
        for s in sentences {
            let mut line = Vec::with_capacity(s.len());
            for w in s {
                let w = w.as_ref();
                let next = vocab.len();
                let id = *vocab.entry(w.to_string()).or_insert(next);
                if id == unigrams.len() {
                    unigrams.push(0);
                }
                unigrams[id] += 1;
                line.push(id);
            }
            ids.push(line);
        }
        if vocab.is_empty() {
            return Err(Error::Config("word language model needs a non-empty corpus".into()));
        }
        let start = vocab.len();
        let mut bigrams = HashMap::new();
        let mut context_totals = HashMap::new();
        for line in &ids {
            let mut prev = start;
            for &w in line {
                *bigrams.entry((prev, w)).or_insert(0) += 1;
                *context_totals.entry(prev).or_insert(0) += 1;
                prev = w;
            }
        }
        Ok(WordLM {
            vocab,
            total: unigrams.iter().sum(),
            unigrams,
            bigrams,
            context_totals,
            smooth,
        })
    }

    /// Tokenizes `corpus` line by line with [`tokenize`]; rejected tokens are logged.
    pub fn train(corpus: &str, charset: &CharSet, smooth: f64) -> Result<Self> {
        let mut sentences = Vec::new();
        for line in corpus.lines() {
            let (words, rejected) = tokenize(line, charset);
            for r in rejected {
                log::warn!("language model: skipping {r:?} (character outside the charset)");
            }
            sentences.push(words);
        }
        Self::from_sentences(&sentences, smooth)
    }

    /// Model assigning `1 / |V|` to every bigram.
    pub fn uniform<S: AsRef<str>>(vocab: &[S]) -> Result<Self> {
        let mut lm = Self::from_sentences(&[vocab.iter().map(|w| w.as_ref()).collect::<Vec<_>>()], 1.0)?;
        lm.bigrams.clear();
        lm.context_totals.clear();
        Ok(lm)
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn smooth(&self) -> f64 {
        self.smooth
    }

    pub fn contains(&self, word: &str) -> bool {
        self.vocab.contains_key(word)
    }

    pub fn words(&self) -> Vec<&str> {
        let mut w: Vec<&str> = self.vocab.keys().map(String::as_str).collect();
        w.sort_unstable();
        w
    }

    pub fn unigram_count(&self, word: &str) -> u64 {
        self.vocab.get(word).map_or(0, |&i| self.unigrams[i])
    }

    /// `P(word | prev)`, with `prev = None` meaning the start of a line.
    /// Words outside the vocabulary get probability 0.
    pub fn prob(&self, prev: Option<&str>, word: &str) -> f64 {
        let Some(&w) = self.vocab.get(word) else {
            return 0.0;
        };
        let ctx = match prev {
            None => Some(self.vocab.len()),
            Some(p) => self.vocab.get(p).copied(),
        };
        let pair = ctx.and_then(|c| self.bigrams.get(&(c, w))).copied().unwrap_or(0);
        let ctx_total = ctx.and_then(|c| self.context_totals.get(&c)).copied().unwrap_or(0);
        let denom = ctx_total as f64 + self.smooth * self.vocab.len() as f64;
        if denom == 0.0 {
            return self.unigrams[w] as f64 / self.total as f64;
        }
        (pair as f64 + self.smooth) / denom
    }

    pub fn log_prob(&self, prev: Option<&str>, word: &str) -> f64 {
        self.prob(prev, word).ln()
    }

    /// Sum of `ln P(w_i | w_{i-1})` over a line of words.
    pub fn sentence_log_prob<S: AsRef<str>>(&self, words: &[S]) -> f64 {
        let mut prev: Option<&str> = None;
        let mut acc = 0.0;
        for w in words {
            acc += self.log_prob(prev, w.as_ref());
            prev = Some(w.as_ref());
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cs() -> CharSet {
        CharSet::new("abcd .".chars().collect(), "abcd".chars().collect()).unwrap()
    }

    #[test]
    fn unsmoothed_counts() {
        let lm = WordLM::train("a b", &cs(), 0.0).unwrap();
        assert_eq!(lm.prob(Some("a"), "b"), 1.0);
        let lm = WordLM::train("a b a c", &cs(), 0.0).unwrap();
        assert_eq!(lm.prob(Some("a"), "b"), 0.5);
        assert_eq!(lm.prob(Some("a"), "c"), 0.5);
        assert_eq!(lm.prob(None, "a"), 1.0);
        // "c" never starts a bigram: unigram back-off
        assert_eq!(lm.prob(Some("c"), "a"), 0.5);
    }

    #[test]
    fn rows_normalize() {
        let lm = WordLM::train("ab cd ab\nd.a ab\ncd cd", &cs(), 0.01).unwrap();
        let words = lm.words();
        assert_eq!(words, vec!["a", "ab", "cd", "d"]);
        let mut contexts: Vec<Option<&str>> = words.iter().map(|w| Some(*w)).collect();
        contexts.push(None);
        for prev in contexts {
            let s: f64 = words.iter().map(|w| lm.prob(prev, w)).sum();
            assert!((s - 1.0).abs() < 1e-12, "{prev:?}: {s}");
        }
    }

    #[test]
    fn empty_corpus_is_config_error() {
        assert!(matches!(WordLM::train("  \n..", &cs(), 0.01), Err(Error::Config(_))));
        assert!(WordLM::train("a", &cs(), -1.0).is_err());
    }

    #[test]
    fn uniform_model() {
        let lm = WordLM::uniform(&["a", "b", "cd"]).unwrap();
        for prev in [None, Some("a"), Some("cd")] {
            for w in ["a", "b", "cd"] {
                assert!((lm.prob(prev, w) - 1.0 / 3.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn tokenizer_splits_on_nonword_and_rejects_foreign() {
        let (w, r) = tokenize("ab.cd  x9 d", &cs());
        assert_eq!(w, vec!["ab", "cd", "d"]);
        assert_eq!(r, vec!["x9"]);
    }
}
