use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{CharSet, PrefixTree, WordLM};
use crate::ctc::{self, log_add, PROB_FLOOR};
use crate::error::{Error, Result};
use crate::prob::ProbMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum DecoderMode {
    /// Lexicon constraint only.
    Words,
    /// Lexicon constraint plus the word bigram model.
    #[default]
    NGrams,
}

impl std::str::FromStr for DecoderMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "words" => Ok(DecoderMode::Words),
            "ngrams" => Ok(DecoderMode::NGrams),
            _ => Err(Error::Config(format!("unknown decoder mode {s:?} (expected Words or NGrams)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    /// Beams kept per timestep; `usize::MAX` disables pruning.
    pub beam_width: usize,
    pub mode: DecoderMode,
    /// Additive smoothing constant of the word bigram model.
    pub smooth: f64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            beam_width: 50,
            mode: DecoderMode::NGrams,
            smooth: 0.01,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_width == 0 {
            return Err(Error::Config("beam width must be at least 1".into()));
        }
        if !(self.smooth >= 0.0 && self.smooth.is_finite()) {
            return Err(Error::Config(format!("smoothing constant must be >= 0, got {}", self.smooth)));
        }
        Ok(())
    }
}

/// Best hypothesis of a decode.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    pub text: String,
    pub indices: Vec<usize>,
    /// `ln P_ctc(text)` plus the normalized language-model term.
    pub score: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Pos {
    Between,
    InWord { node: usize, start: usize },
}

#[derive(Clone, Debug)]
struct Beam {
    lp_blank: f64,
    lp_nonblank: f64,
    pos: Pos,
    lm_log: f64,
    words: usize,
    last_word: Option<String>,
}

impl Beam {
    fn total(&self) -> f64 {
        log_add(self.lp_blank, self.lp_nonblank)
    }
}

/// Word beam search over a lexicon prefix tree with an optional word bigram model.
#[derive(Clone, Debug)]
pub struct WordBeamSearch {
    charset: CharSet,
    tree: PrefixTree,
    lm: Option<WordLM>,
    cfg: DecoderConfig,
}

impl WordBeamSearch {
    pub fn new(charset: CharSet, tree: PrefixTree, lm: Option<WordLM>, cfg: DecoderConfig) -> Result<Self> {
        cfg.validate()?;
        if cfg.mode == DecoderMode::NGrams && lm.is_none() {
            return Err(Error::Config("NGrams mode needs a word language model".into()));
        }
        Ok(WordBeamSearch { charset, tree, lm, cfg })
    }

    /// Lexicon and language model from the same corpus text, one transcription per line.
    pub fn from_corpus(charset: CharSet, corpus: &str, cfg: DecoderConfig) -> Result<Self> {
        let mut words = Vec::new();
        for line in corpus.lines() {
            let (w, rejected) = super::lm::tokenize(line, &charset);
            for r in rejected {
                log::warn!("lexicon: skipping {r:?} (character outside the charset)");
            }
            words.extend(w);
        }
        let (tree, rejected) = PrefixTree::build(&words, &charset);
        for r in rejected {
            log::warn!("lexicon: skipping {:?}: {}", r.word, r.reason);
        }
        let lm = match cfg.mode {
            DecoderMode::NGrams => Some(WordLM::train(corpus, &charset, cfg.smooth)?),
            DecoderMode::Words => WordLM::train(corpus, &charset, cfg.smooth).ok(),
        };
        Self::new(charset, tree, lm, cfg)
    }

    pub fn charset(&self) -> &CharSet {
        &self.charset
    }

    pub fn tree(&self) -> &PrefixTree {
        &self.tree
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.cfg
    }

    fn lm_term(&self, lm_log: f64, words: usize) -> f64 {
        match (self.cfg.mode, &self.lm) {
            (DecoderMode::NGrams, Some(lm)) => {
                if words == 0 {
                    -(lm.vocab_size() as f64).ln()
                } else {
                    lm_log / words as f64
                }
            }
            _ => 0.0,
        }
    }

    fn word_log_prob(&self, prev: Option<&str>, word: &str) -> f64 {
        match (self.cfg.mode, &self.lm) {
            (DecoderMode::NGrams, Some(lm)) => lm.log_prob(prev, word),
            _ => 0.0,
        }
    }

    /// Exact score of a complete hypothesis: CTC log-probability plus the
    /// language-model log-probability averaged over its words.
    pub fn score_text(&self, probs: &ProbMatrix, indices: &[usize]) -> Result<f64> {
        let ctc = ctc::log_prob(probs, indices)?;
        let words = split_words(indices, &self.charset);
        let mut lm_log = 0.0;
        let mut prev: Option<String> = None;
        for w in &words {
            lm_log += self.word_log_prob(prev.as_deref(), w);
            prev = Some(w.clone());
        }
        Ok(ctc + self.lm_term(lm_log, words.len()))
    }

    fn cmp_text(&self, a: &[usize], b: &[usize]) -> Ordering {
        a.iter()
            .map(|&i| self.charset.char_at(i))
            .cmp(b.iter().map(|&i| self.charset.char_at(i)))
    }

    // descending score, then ascending text
    fn rank(&self, a: (f64, &[usize]), b: (f64, &[usize])) -> Ordering {
        b.0.total_cmp(&a.0).then_with(|| self.cmp_text(a.1, b.1))
    }

    fn extend(&self, text: &[usize], beam: &Beam, c: usize) -> Option<Beam> {
        let word_char = self.charset.is_word_index(c);
        let mut next = Beam {
            lp_blank: f64::NEG_INFINITY,
            lp_nonblank: f64::NEG_INFINITY,
            ..beam.clone()
        };
        match (beam.pos, word_char) {
            (Pos::Between, true) => {
                next.pos = Pos::InWord {
                    node: self.tree.child(PrefixTree::ROOT, c)?,
                    start: text.len(),
                };
            }
            (Pos::InWord { node, start }, true) => {
                next.pos = Pos::InWord {
                    node: self.tree.child(node, c)?,
                    start,
                };
            }
            (Pos::Between, false) => {}
            (Pos::InWord { node, start }, false) => {
                if !self.tree.is_word_end(node) {
                    return None;
                }
                let word = self.charset.decode(&text[start..]);
                next.lm_log += self.word_log_prob(beam.last_word.as_deref(), &word);
                next.words += 1;
                next.last_word = Some(word);
                next.pos = Pos::Between;
            }
        }
        Some(next)
    }

    fn allowed(&self, pos: Pos) -> Vec<usize> {
        let nonword = (0..self.charset.len()).filter(|&c| !self.charset.is_word_index(c));
        match pos {
            Pos::Between => self.tree.children(PrefixTree::ROOT).map(|(c, _)| c).chain(nonword).collect(),
            Pos::InWord { node, .. } => {
                let mut v: Vec<usize> = self.tree.children(node).map(|(c, _)| c).collect();
                if self.tree.is_word_end(node) {
                    v.extend(nonword);
                }
                v
            }
        }
    }

    pub fn decode(&self, probs: &ProbMatrix) -> Result<Decoded> {
        if probs.classes() != self.charset.len() + 1 {
            return Err(Error::Shape {
                expected: vec![probs.steps(), self.charset.len() + 1],
                actual: vec![probs.steps(), probs.classes()],
            });
        }
        probs.validate()?;
        let blank = probs.blank();
        let lnp = |t: usize, k: usize| probs.get(t, k).max(PROB_FLOOR).ln();

        let mut beams: Vec<(Vec<usize>, Beam)> = vec![(
            Vec::new(),
            Beam {
                lp_blank: 0.0,
                lp_nonblank: f64::NEG_INFINITY,
                pos: Pos::Between,
                lm_log: 0.0,
                words: 0,
                last_word: None,
            },
        )];
        for t in 0..probs.steps() {
            let mut next: HashMap<Vec<usize>, Beam> = HashMap::with_capacity(beams.len() * 4);
            for (text, beam) in &beams {
                let total = beam.total();
                // stay on the same text: blank, or repeat of the last character
                let entry = next.entry(text.clone()).or_insert_with(|| Beam {
                    lp_blank: f64::NEG_INFINITY,
                    lp_nonblank: f64::NEG_INFINITY,
                    ..beam.clone()
                });
                entry.lp_blank = log_add(entry.lp_blank, total + lnp(t, blank));
                if let Some(&last) = text.last() {
                    entry.lp_nonblank = log_add(entry.lp_nonblank, beam.lp_nonblank + lnp(t, last));
                }
                for c in self.allowed(beam.pos) {
                    let from = if text.last() == Some(&c) { beam.lp_blank } else { total };
                    if from == f64::NEG_INFINITY {
                        continue;
                    }
                    let mut extended = text.clone();
                    extended.push(c);
                    let slot = match next.entry(extended) {
                        std::collections::hash_map::Entry::Occupied(o) => o.into_mut(),
                        std::collections::hash_map::Entry::Vacant(v) => match self.extend(text, beam, c) {
                            Some(b) => v.insert(b),
                            None => continue,
                        },
                    };
                    slot.lp_nonblank = log_add(slot.lp_nonblank, from + lnp(t, c));
                }
            }
            let mut ranked: Vec<(f64, Vec<usize>, Beam)> = next
                .into_iter()
                .map(|(text, b)| (b.total() + self.lm_term(b.lm_log, b.words), text, b))
                .collect();
            ranked.sort_by(|a, b| self.rank((a.0, &a.1), (b.0, &b.1)));
            ranked.truncate(self.cfg.beam_width);
            beams = ranked.into_iter().map(|(_, text, b)| (text, b)).collect();
        }

        // complete open words, then rescore every candidate exactly
        let mut candidates: Vec<Vec<usize>> = Vec::with_capacity(beams.len());
        for (text, beam) in &beams {
            let mut cand = text.clone();
            if let Pos::InWord { node, .. } = beam.pos {
                if !self.tree.is_word_end(node) {
                    match self.tree.best_completion(node, &self.charset) {
                        Some(suffix) => cand.extend(suffix),
                        None => continue,
                    }
                }
            }
            candidates.push(cand);
        }
        candidates.sort_unstable();
        candidates.dedup();
        let mut best: Option<(f64, Vec<usize>)> = None;
        for cand in candidates {
            let score = self.score_text(probs, &cand)?;
            let better = match &best {
                None => true,
                Some((bs, bt)) => self.rank((score, &cand), (*bs, bt)) == Ordering::Less,
            };
            if better {
                best = Some((score, cand));
            }
        }
        let (score, indices) = best.unwrap_or((f64::NEG_INFINITY, Vec::new()));
        Ok(Decoded {
            text: self.charset.decode(&indices),
            indices,
            score,
        })
    }
}

/// Maximal runs of word characters in `indices`, as text.
pub fn split_words(indices: &[usize], charset: &CharSet) -> Vec<String> {
    indices
        .split(|&i| !charset.is_word_index(i))
        .filter(|w| !w.is_empty())
        .map(|w| charset.decode(w))
        .collect()
}
