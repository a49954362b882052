use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

/// Characters the model emits, in output-column order, and the subset that forms words.
///
/// The CTC blank is not a member; it is the extra column after the last character.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CharSet {
    chars: Vec<char>,
    word: Vec<bool>,
    index: HashMap<char, usize>,
}

impl CharSet {
    pub fn new(chars: Vec<char>, wordchars: Vec<char>) -> Result<Self> {
        let mut index = HashMap::with_capacity(chars.len());
        for (i, &c) in chars.iter().enumerate() {
            if index.insert(c, i).is_some() {
                return Err(Error::Config(format!("duplicate character {c:?} in charset")));
            }
        }
        let mut word = vec![false; chars.len()];
        for c in wordchars {
            match index.get(&c) {
                Some(&i) => word[i] = true,
                None => return Err(Error::Config(format!("word character {c:?} is not in the charset"))),
            }
        }
        Ok(CharSet { chars, word, index })
    }

    /// Charset whose word characters are everything except whitespace.
    pub fn with_default_wordchars(chars: Vec<char>) -> Result<Self> {
        let wordchars = chars.iter().copied().filter(|c| !c.is_whitespace()).collect();
        Self::new(chars, wordchars)
    }

    /// Sorted unique characters of `texts`.
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut chars: Vec<char> = texts.into_iter().flat_map(str::chars).collect();
        chars.sort_unstable();
        chars.dedup();
        Self::with_default_wordchars(chars)
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn wordchars(&self) -> Vec<char> {
        self.chars.iter().zip(&self.word).filter(|(_, &w)| w).map(|(&c, _)| c).collect()
    }

    /// Column index of the CTC blank.
    pub fn blank(&self) -> usize {
        self.chars.len()
    }

    pub fn index_of(&self, c: char) -> Option<usize> {
        self.index.get(&c).copied()
    }

    pub fn char_at(&self, i: usize) -> char {
        self.chars[i]
    }

    pub fn is_word_index(&self, i: usize) -> bool {
        self.word[i]
    }

    pub fn is_word_char(&self, c: char) -> bool {
        self.index_of(c).is_some_and(|i| self.word[i])
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.chars()
            .map(|c| {
                self.index_of(c)
                    .ok_or_else(|| Error::Data(format!("character {c:?} in {text:?} is not in the charset")))
            })
            .collect()
    }

    pub fn decode(&self, indices: &[usize]) -> String {
        indices.iter().map(|&i| self.chars[i]).collect()
    }

    /// Parses one character per line; `\s` is a space, `\t` a tab and `\\` a backslash.
    pub fn parse_list(text: &str) -> Result<Vec<char>> {
        let mut out = Vec::new();
        for (n, line) in text.split('\n').enumerate() {
            let line = line.strip_suffix('\r').unwrap_or(line);
            let c = match line {
                "" => continue,
                "\\s" => ' ',
                "\\t" => '\t',
                "\\\\" => '\\',
                _ => {
                    let mut it = line.chars();
                    match (it.next(), it.next()) {
                        (Some(c), None) => c,
                        _ => {
                            return Err(Error::Config(format!(
                                "line {}: expected a single character, got {line:?}",
                                n + 1
                            )))
                        }
                    }
                }
            };
            out.push(c);
        }
        Ok(out)
    }

    pub fn format_list(chars: &[char]) -> String {
        let mut s = String::new();
        for &c in chars {
            match c {
                ' ' => s.push_str("\\s"),
                '\t' => s.push_str("\\t"),
                '\\' => s.push_str("\\\\"),
                c => s.push(c),
            }
            s.push('\n');
        }
        s
    }

    /// Reads a character file and, optionally, a word-character file
    /// (defaulting to every non-whitespace character).
    pub fn load(chars_path: &Path, wordchars_path: Option<&Path>) -> Result<Self> {
        let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| Error::io(p, e));
        let chars = Self::parse_list(&read(chars_path)?)?;
        match wordchars_path {
            Some(p) => Self::new(chars, Self::parse_list(&read(p)?)?),
            None => Self::with_default_wordchars(chars),
        }
    }
}
