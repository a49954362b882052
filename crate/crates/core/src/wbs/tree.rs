use std::collections::BTreeMap;

use super::CharSet;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
struct Node {
    children: BTreeMap<usize, usize>,
    // occurrence count in the building word list, present at word ends
    count: Option<u64>,
}

/// Trie over word-character indices. Node 0 is the root.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrefixTree {
    nodes: Vec<Node>,
    words: usize,
}

impl Default for PrefixTree {
    fn default() -> Self {
        PrefixTree {
            nodes: vec![Node::default()],
            words: 0,
        }
    }
}

/// A word refused by [`PrefixTree::build`] and the reason.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rejected {
    pub word: String,
    pub reason: String,
}

impl PrefixTree {
    pub const ROOT: usize = 0;

    /// Inserts every word made only of word characters; duplicates add to the
    /// word's count and other words are returned as diagnostics.
    pub fn build<S: AsRef<str>>(words: &[S], charset: &CharSet) -> (Self, Vec<Rejected>) {
        let mut tree = PrefixTree::default();
        let mut rejected = Vec::new();
        for w in words {
            let w = w.as_ref();
            if w.is_empty() {
                continue;
            }
            match w.chars().find(|&c| !charset.is_word_char(c)) {
                Some(c) => rejected.push(Rejected {
                    word: w.to_string(),
                    reason: format!("{c:?} is not a word character"),
                }),
                None => {
                    let idx: Vec<usize> = w.chars().map(|c| charset.index_of(c).unwrap()).collect();
                    tree.insert(&idx);
                }
            }
        }
        (tree, rejected)
    }

    fn insert(&mut self, word: &[usize]) {
        let mut node = Self::ROOT;
        for &c in word {
            node = match self.nodes[node].children.get(&c) {
                Some(&n) => n,
                None => {
                    self.nodes.push(Node::default());
                    let n = self.nodes.len() - 1;
                    self.nodes[node].children.insert(c, n);
                    n
                }
            };
        }
        let slot = &mut self.nodes[node].count;
        if slot.is_none() {
            self.words += 1;
        }
        *slot = Some(slot.unwrap_or(0) + 1);
    }

    /// Number of distinct words.
    pub fn word_count(&self) -> usize {
        self.words
    }

    pub fn child(&self, node: usize, c: usize) -> Option<usize> {
        self.nodes[node].children.get(&c).copied()
    }

    pub fn children(&self, node: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.nodes[node].children.iter().map(|(&c, &n)| (c, n))
    }

    pub fn is_word_end(&self, node: usize) -> bool {
        self.nodes[node].count.is_some()
    }

    /// Node reached by spelling `prefix` from the root.
    pub fn walk(&self, prefix: &[usize]) -> Option<usize> {
        prefix.iter().try_fold(Self::ROOT, |n, &c| self.child(n, c))
    }

    pub fn contains(&self, word: &[usize]) -> bool {
        !word.is_empty() && self.walk(word).is_some_and(|n| self.is_word_end(n))
    }

    /// Suffix completing the word under `node` with the highest count, ties
    /// broken by the lexicographically smallest text.
    pub fn best_completion(&self, node: usize, charset: &CharSet) -> Option<Vec<usize>> {
        let mut best: Option<(u64, String, Vec<usize>)> = None;
        let mut stack = vec![(node, Vec::new())];
        while let Some((n, suffix)) = stack.pop() {
            if let Some(count) = self.nodes[n].count {
                let text = charset.decode(&suffix);
                let better = match &best {
                    None => true,
                    Some((bc, bt, _)) => count > *bc || (count == *bc && text < *bt),
                };
                if better {
                    best = Some((count, text, suffix.clone()));
                }
            }
            for (c, child) in self.children(n) {
                let mut s = suffix.clone();
                s.push(c);
                stack.push((child, s));
            }
        }
        best.map(|(_, _, s)| s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn cs() -> CharSet {
        CharSet::new("abc .".chars().collect(), "abc".chars().collect()).unwrap()
    }

    #[test]
    fn small_tree_shape() {
        let cs = cs();
        let (t, rej) = PrefixTree::build(&["a", "ab", "a"], &cs);
        assert!(rej.is_empty());
        assert_eq!(t.word_count(), 2);
        let a = t.child(PrefixTree::ROOT, 0).unwrap();
        assert!(t.is_word_end(a));
        let b = t.child(a, 1).unwrap();
        assert!(t.is_word_end(b));
        assert_eq!(t.children(b).count(), 0);
        // "a" occurs twice, so it beats the longer "ab"
        assert_eq!(t.best_completion(a, &cs), Some(vec![]));
    }

    #[test]
    fn empty_and_rejected() {
        let cs = cs();
        let (t, rej) = PrefixTree::build(&["a.b", "zz", "c"], &cs);
        assert_eq!(rej.len(), 2);
        assert_eq!(t.word_count(), 1);
        let (empty, _) = PrefixTree::build::<&str>(&[], &cs);
        assert_eq!(empty.children(PrefixTree::ROOT).count(), 0);
        assert_eq!(empty.best_completion(PrefixTree::ROOT, &cs), None);
    }

    #[test]
    fn completion_ties_are_lexicographic() {
        let cs = cs();
        let (t, _) = PrefixTree::build(&["acc", "abb", "ab"], &cs);
        let a = t.walk(&[0]).unwrap();
        assert_eq!(t.best_completion(a, &cs), Some(vec![1]));
        let (t, _) = PrefixTree::build(&["acc", "abb"], &cs);
        assert_eq!(t.best_completion(a, &cs), Some(vec![1, 1]));
    }

    #[test]
    fn membership_matches_set_oracle() {
        let cs = cs();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let word = |rng: &mut ChaCha8Rng| -> String {
            let n = rng.random_range(1..=6);
            (0..n).map(|_| ['a', 'b', 'c'][rng.random_range(0..3)]).collect()
        };
        let words: Vec<String> = (0..1000).map(|_| word(&mut rng)).collect();
        let set: HashSet<&String> = words.iter().collect();
        let (t, _) = PrefixTree::build(&words, &cs);
        assert_eq!(t.word_count(), set.len());
        for _ in 0..10_000 {
            let w = word(&mut rng);
            assert_eq!(t.contains(&cs.encode(&w).unwrap()), set.contains(&w));
        }
    }
}
