//! Multi-pattern byte search.
//!
//! Every detector in the crate reduces to "report every occurrence of every
//! pattern of a dictionary inside a haystack". [`Dictionary`] deduplicates
//! patterns, remembers which caller-defined owners contributed each one and
//! scans a haystack once with an Aho-Corasick automaton in overlapping mode,
//! so occurrences that overlap or nest inside each other are all reported.

use aho_corasick::{AhoCorasick, AhoCorasickBuilder, MatchKind};
use std::collections::HashMap;

/// One occurrence of a dictionary pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Hit {
    pub start: usize,
    pub pattern: usize,
}

impl Hit {
    pub fn end(&self, dict: &Dictionary<impl Sized>) -> usize {
        self.start + dict.pattern(self.pattern).len()
    }
}

pub struct Dictionary<T> {
    patterns: Vec<Vec<u8>>,
    owners: Vec<Vec<T>>,
    automaton: Option<AhoCorasick>,
}

impl<T> std::fmt::Debug for Dictionary<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Dictionary")
            .field("patterns", &self.patterns.len())
            .finish()
    }
}

impl<T> Dictionary<T> {
    /// Builds a case-sensitive dictionary. Empty patterns are ignored.
    pub fn new(entries: impl IntoIterator<Item = (Vec<u8>, T)>) -> Self {
        Self::build(entries, false)
    }

    /// Builds a dictionary that folds ASCII case on both sides.
    pub fn ascii_case_insensitive(entries: impl IntoIterator<Item = (Vec<u8>, T)>) -> Self {
        Self::build(entries, true)
    }

    fn build(entries: impl IntoIterator<Item = (Vec<u8>, T)>, fold: bool) -> Self {
        let mut index: HashMap<Vec<u8>, usize> = HashMap::new();
        let mut patterns = Vec::new();
        let mut owners: Vec<Vec<T>> = Vec::new();
        for (pattern, owner) in entries {
            if pattern.is_empty() {
                continue;
            }
            let key = if fold {
                pattern.to_ascii_lowercase()
            } else {
                pattern.clone()
            };
            match index.get(&key) {
                Some(&id) => owners[id].push(owner),
                None => {
                    index.insert(key, patterns.len());
                    patterns.push(pattern);
                    owners.push(vec![owner]);
                }
            }
        }
        let automaton = if patterns.is_empty() {
            None
        } else {
            Some(
                AhoCorasickBuilder::new()
                    .match_kind(MatchKind::Standard)
                    .ascii_case_insensitive(fold)
                    .build(&patterns)
                    .expect("dictionary automaton fits in memory"),
            )
        };
        Self {
            patterns,
            owners,
            automaton,
        }
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    pub fn pattern(&self, id: usize) -> &[u8] {
        &self.patterns[id]
    }

    pub fn owners(&self, id: usize) -> &[T] {
        &self.owners[id]
    }

    /// All occurrences of all patterns, sorted by `(start, pattern)`.
    pub fn find_all(&self, haystack: &[u8]) -> Vec<Hit> {
        let Some(ac) = &self.automaton else {
            return Vec::new();
        };
        let mut hits: Vec<Hit> = ac
            .find_overlapping_iter(haystack)
            .map(|m| Hit {
                start: m.start(),
                pattern: m.pattern().as_usize(),
            })
            .collect();
        hits.sort_unstable();
        hits
    }

    /// True when at least one pattern occurs in `haystack`.
    pub fn is_match(&self, haystack: &[u8]) -> bool {
        self.automaton
            .as_ref()
            .is_some_and(|ac| ac.is_match(haystack))
    }
}
