use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BOS: u32 = 0;
pub const EOS: u32 = 1;
pub const UNK: u32 = 2;
pub const SEP: u32 = 3;

const RESERVED: [&str; 4] = ["<bos>", "<eos>", "<unk>", "<sep>"];

/// Whitespace word-level vocabulary with reserved BOS/EOS/UNK/SEP entries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Tokenizer {
    vocab: Vec<String>,
    index: HashMap<String, u32>,
}

impl Tokenizer {
    /// Vocabulary of every distinct word in `texts`, in sorted order after the reserved tokens.
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let words: BTreeSet<&str> = texts
            .into_iter()
            .flat_map(str::split_whitespace)
            .filter(|w| !RESERVED.contains(w))
            .collect();
        let vocab = RESERVED.iter().copied().chain(words).map(str::to_owned).collect();
        Self::from_vocab(vocab).expect("vocabulary built from distinct words")
    }

    /// Rebuilds a tokenizer from a stored vocabulary table.
    pub fn from_vocab(vocab: Vec<String>) -> Result<Self> {
        if vocab.len() < RESERVED.len() || vocab[..RESERVED.len()].iter().zip(RESERVED).any(|(a, b)| a != b) {
            return Err(Error::validation("vocabulary must start with the reserved tokens"));
        }
        let mut index = HashMap::with_capacity(vocab.len());
        for (i, w) in vocab.iter().enumerate() {
            if w.is_empty() || w.chars().any(char::is_whitespace) {
                return Err(Error::validation(format!("invalid vocabulary entry {w:?}")));
            }
            if index.insert(w.clone(), i as u32).is_some() {
                return Err(Error::validation(format!("duplicate vocabulary entry `{w}`")));
            }
        }
        Ok(Tokenizer { vocab, index })
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn token_id(&self, word: &str) -> Option<u32> {
        self.index.get(word).copied()
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        text.split_whitespace()
            .map(|w| self.index.get(w).copied().unwrap_or(UNK))
            .collect()
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter()
            .map(|&i| {
                self.vocab
                    .get(i as usize)
                    .map_or(RESERVED[UNK as usize], String::as_str)
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Token sequences for scoring `completion` after `prompt`:
    /// `BOS prompt SEP` and `completion EOS`.
    pub fn encode_pair(&self, prompt: &str, completion: &str) -> (Vec<u32>, Vec<u32>) {
        let mut p = Vec::with_capacity(prompt.len() / 4 + 2);
        p.push(BOS);
        p.extend(self.encode(prompt));
        p.push(SEP);
        let mut c = self.encode(completion);
        c.push(EOS);
        (p, c)
    }
}

impl TryFrom<Vec<String>> for Tokenizer {
    type Error = Error;

    fn try_from(v: Vec<String>) -> Result<Self> {
        Tokenizer::from_vocab(v)
    }
}

impl From<Tokenizer> for Vec<String> {
    fn from(t: Tokenizer) -> Self {
        t.vocab
    }
}
