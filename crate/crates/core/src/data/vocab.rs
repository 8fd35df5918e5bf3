use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BOS_TOKEN: &str = "<bos>";
pub const EOS_TOKEN: &str = "<eos>";
pub const UNK_TOKEN: &str = "<unk>";

pub const BOS: usize = 0;
pub const EOS: usize = 1;
pub const UNK: usize = 2;

pub const DEFAULT_MIN_COUNT: usize = 5;
pub const DEFAULT_MAX_LEN: usize = 16;

/// Lowercases, drops everything outside `[a-z0-9 ]` and splits on
/// whitespace. Whitespace of any kind counts as a separator.
pub fn normalize(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .map(|c| if c.is_whitespace() { ' ' } else { c.to_ascii_lowercase() })
        .filter(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || *c == ' ')
        .collect();
    cleaned.split_whitespace().map(str::to_owned).collect()
}

/// Token to id bijection with reserved BOS, EOS and UNK ids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from a full token list. The first three entries
    /// must be the reserved tokens.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 3 || tokens[BOS] != BOS_TOKEN || tokens[EOS] != EOS_TOKEN || tokens[UNK] != UNK_TOKEN {
            return Err(Error::DataValidation(
                "vocabulary must start with <bos>, <eos>, <unk>".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::DataValidation(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    /// Counts normalized tokens over `captions`; tokens seen fewer than
    /// `min_count` times are left out and encode as UNK.
    pub fn build<S: AsRef<str>>(captions: &[S], min_count: usize) -> Result<Self> {
        if captions.is_empty() {
            return Err(Error::Domain("cannot build a vocabulary from no captions".into()));
        }
        if min_count == 0 {
            return Err(Error::Config("min_count must be at least 1".into()));
        }
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for c in captions {
            for tok in normalize(c.as_ref()) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        let mut tokens = vec![BOS_TOKEN.to_owned(), EOS_TOKEN.to_owned(), UNK_TOKEN.to_owned()];
        tokens.extend(counts.into_iter().filter(|(_, n)| *n >= min_count).map(|(t, _)| t));
        if tokens.len() == 3 {
            log::warn!("every token is below min_count={min_count}; vocabulary holds only reserved tokens");
        }
        Vocabulary::from_tokens(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> usize {
        self.id(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Normalizes, maps to ids, truncates to `max_len` and appends EOS.
    /// BOS is never stored; the decoder supplies it as its first input.
    pub fn encode(&self, text: &str, max_len: usize) -> Vec<usize> {
        let mut ids: Vec<usize> = normalize(text)
            .iter()
            .take(max_len)
            .map(|t| self.id_or_unk(t))
            .collect();
        ids.push(EOS);
        ids
    }

    /// Tokens up to (not including) the first EOS; BOS ids are skipped.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .take_while(|&&i| i != EOS)
            .filter(|&&i| i != BOS)
            .map(|&i| self.token(i).unwrap_or(UNK_TOKEN).to_owned())
            .collect()
    }
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        Vocabulary::from_tokens(tokens)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}
