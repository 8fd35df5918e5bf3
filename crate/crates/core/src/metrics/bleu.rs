use super::{ngram_counts, EvaluationCorpus};
use crate::error::{Error, Result};

// smoothing constants of the reference scorer
const TINY: f64 = 1e-15;
const SMALL: f64 = 1e-9;

/// Corpus-level BLEU-1..4. Clipped n-gram matches and candidate n-gram
/// counts are summed over the corpus; the reference length of each image is
/// the reference length closest to the candidate (shorter one on ties).
pub fn bleu_all(corpus: &EvaluationCorpus) -> Result<[f64; 4]> {
    corpus.non_empty()?;
    let mut correct = [0usize; 4];
    let mut guess = [0usize; 4];
    let (mut test_len, mut ref_len) = (0usize, 0usize);

    for item in corpus.items() {
        let cand = &item.candidate;
        let counts = ngram_counts(cand, 4);
        let mut max_ref = std::collections::HashMap::new();
        for r in &item.references {
            for (g, c) in ngram_counts(r, 4) {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(c);
            }
        }
        for (g, c) in &counts {
            correct[g.len() - 1] += (*c).min(max_ref.get(g).copied().unwrap_or(0));
        }
        for (k, slot) in guess.iter_mut().enumerate() {
            *slot += (cand.len() + 1).saturating_sub(k + 1);
        }
        test_len += cand.len();
        ref_len += item
            .references
            .iter()
            .map(|r| r.len())
            .min_by_key(|&l| (l.abs_diff(cand.len()), l))
            .expect("references are non-empty");
    }

    let mut out = [0.0; 4];
    let mut prod = 1.0;
    for k in 0..4 {
        prod *= (correct[k] as f64 + TINY) / (guess[k] as f64 + SMALL);
        out[k] = prod.powf(1.0 / (k + 1) as f64);
    }
    let ratio = (test_len as f64 + TINY) / (ref_len as f64 + SMALL);
    if ratio < 1.0 {
        let bp = (1.0 - 1.0 / ratio).exp();
        out.iter_mut().for_each(|b| *b *= bp);
    }
    Ok(out)
}

/// Corpus-level BLEU-n for `n` in 1..=4.
pub fn bleu(corpus: &EvaluationCorpus, n: usize) -> Result<f64> {
    if !(1..=4).contains(&n) {
        return Err(Error::Domain(format!("BLEU order {n} outside 1..=4")));
    }
    Ok(bleu_all(corpus)?[n - 1])
}
