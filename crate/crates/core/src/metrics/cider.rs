use std::collections::BTreeMap;

use super::{ngram_counts, EvaluationCorpus};
use crate::error::{Error, Result};

const N: usize = 4;
const SIGMA: f64 = 6.0;

struct TfIdf<'a> {
    vec: [BTreeMap<&'a [String], f64>; N],
    norm: [f64; N],
    /// Number of bigrams, which the reference scorer uses as the length in
    /// the Gaussian penalty.
    length: f64,
}

fn tfidf<'a>(tokens: &'a [String], df: &BTreeMap<&[String], f64>, log_images: f64) -> TfIdf<'a> {
    let mut vec: [BTreeMap<&[String], f64>; N] = Default::default();
    let mut norm = [0.0; N];
    let mut length = 0.0;
    for (g, tf) in ngram_counts(tokens, N) {
        let n = g.len() - 1;
        let d = df.get(g).copied().unwrap_or(0.0).max(1.0).ln();
        let w = tf as f64 * (log_images - d);
        vec[n].insert(g, w);
        norm[n] += w * w;
        if n == 1 {
            length += tf as f64;
        }
    }
    TfIdf {
        vec,
        norm: norm.map(f64::sqrt),
        length,
    }
}

fn similarity(hyp: &TfIdf<'_>, reference: &TfIdf<'_>) -> [f64; N] {
    let delta = hyp.length - reference.length;
    let penalty = (-(delta * delta) / (2.0 * SIGMA * SIGMA)).exp();
    let mut val = [0.0; N];
    for n in 0..N {
        for (g, &h) in &hyp.vec[n] {
            let r = reference.vec[n].get(g).copied().unwrap_or(0.0);
            val[n] += h.min(r) * r;
        }
        if hyp.norm[n] != 0.0 && reference.norm[n] != 0.0 {
            val[n] /= hyp.norm[n] * reference.norm[n];
        }
        val[n] *= penalty;
    }
    val
}

/// Per-image CIDEr-D: TF-IDF n-gram vectors for n = 1..4 with document
/// frequencies taken over the reference sets, clipped candidate weights,
/// Gaussian length penalty (σ = 6), averaged over n and references, ×10.
pub fn cider_per_image(corpus: &EvaluationCorpus) -> Result<Vec<f64>> {
    if corpus.len() < 2 {
        return Err(Error::Domain(
            "CIDEr needs at least two images to define document frequencies".into(),
        ));
    }
    let mut df: BTreeMap<&[String], f64> = BTreeMap::new();
    for item in corpus.items() {
        let mut seen = std::collections::BTreeSet::new();
        for r in &item.references {
            seen.extend(ngram_counts(r, N).into_keys());
        }
        for g in seen {
            *df.entry(g).or_insert(0.0) += 1.0;
        }
    }
    let log_images = (corpus.len() as f64).ln();

    Ok(corpus
        .items()
        .iter()
        .map(|item| {
            let hyp = tfidf(&item.candidate, &df, log_images);
            let mut total = [0.0; N];
            for r in &item.references {
                let s = similarity(&hyp, &tfidf(r, &df, log_images));
                for n in 0..N {
                    total[n] += s[n];
                }
            }
            let mean = total.iter().sum::<f64>() / N as f64;
            mean / item.references.len() as f64 * 10.0
        })
        .collect())
}

/// Mean CIDEr-D over images.
pub fn cider(corpus: &EvaluationCorpus) -> Result<f64> {
    let s = cider_per_image(corpus)?;
    Ok(s.iter().sum::<f64>() / s.len() as f64)
}
