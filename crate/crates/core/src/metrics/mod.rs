//! Corpus-level caption metrics following the coco-caption scorers:
//! BLEU-1..4, ROUGE-L and CIDEr-D.

mod bleu;
mod cider;
mod rouge;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::normalize;
use crate::error::{Error, Result};

pub use bleu::{bleu, bleu_all};
pub use cider::{cider, cider_per_image};
pub use rouge::{rouge_l, rouge_l_per_image};

/// One candidate caption with its references, all tokenized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusItem {
    pub candidate: Vec<String>,
    pub references: Vec<Vec<String>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvaluationCorpus {
    items: Vec<CorpusItem>,
}

impl EvaluationCorpus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, candidate: Vec<String>, references: Vec<Vec<String>>) -> Result<()> {
        if references.is_empty() {
            return Err(Error::DataValidation("every image needs at least one reference".into()));
        }
        self.items.push(CorpusItem { candidate, references });
        Ok(())
    }

    /// Tokenizes raw strings with the training caption normalization.
    pub fn push_text<S: AsRef<str>>(&mut self, candidate: &str, references: &[S]) -> Result<()> {
        self.push(
            normalize(candidate),
            references.iter().map(|r| normalize(r.as_ref())).collect(),
        )
    }

    pub fn items(&self) -> &[CorpusItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    fn non_empty(&self) -> Result<()> {
        if self.items.is_empty() {
            return Err(Error::Domain("empty evaluation corpus".into()));
        }
        Ok(())
    }
}

impl FromIterator<CorpusItem> for EvaluationCorpus {
    fn from_iter<I: IntoIterator<Item = CorpusItem>>(iter: I) -> Self {
        EvaluationCorpus {
            items: iter.into_iter().collect(),
        }
    }
}

type NgramCounts<'a> = BTreeMap<&'a [String], usize>;

/// Counts of all 1..=n-grams of a token sequence.
fn ngram_counts(tokens: &[String], n: usize) -> NgramCounts<'_> {
    let mut counts = BTreeMap::new();
    for k in 1..=n {
        for w in tokens.windows(k) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Raw metric values in [0, 1] (CIDEr unbounded).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub bleu: [f64; 4],
    pub rouge_l: f64,
    pub cider: f64,
}

impl Scores {
    pub fn compute(corpus: &EvaluationCorpus) -> Result<Self> {
        Ok(Scores {
            bleu: bleu_all(corpus)?,
            rouge_l: rouge_l(corpus)?,
            cider: cider(corpus)?,
        })
    }

    pub fn record(&self) -> MetricRecord {
        MetricRecord {
            bleu_1: 100.0 * self.bleu[0],
            bleu_2: 100.0 * self.bleu[1],
            bleu_3: 100.0 * self.bleu[2],
            bleu_4: 100.0 * self.bleu[3],
            rouge_l: 100.0 * self.rouge_l,
            cider: 100.0 * self.cider,
            cider_raw: self.cider,
        }
    }
}

/// Table-style record: every score ×100, plus the unscaled CIDEr.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    #[serde(rename = "BLEU-1")]
    pub bleu_1: f64,
    #[serde(rename = "BLEU-2")]
    pub bleu_2: f64,
    #[serde(rename = "BLEU-3")]
    pub bleu_3: f64,
    #[serde(rename = "BLEU-4")]
    pub bleu_4: f64,
    #[serde(rename = "ROUGE-L")]
    pub rouge_l: f64,
    #[serde(rename = "CIDEr")]
    pub cider: f64,
    #[serde(rename = "CIDEr-raw")]
    pub cider_raw: f64,
}
