use super::EvaluationCorpus;
use crate::error::Result;

const BETA: f64 = 1.2;

fn lcs(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS-based F-measure of one candidate. Precision and recall are each
/// maximized over the references before being combined, as the reference
/// scorer does.
fn image_score(candidate: &[String], references: &[Vec<String>]) -> f64 {
    if candidate.is_empty() {
        return 0.0;
    }
    let (mut p_max, mut r_max) = (0.0f64, 0.0f64);
    for r in references {
        if r.is_empty() {
            continue;
        }
        let l = lcs(r, candidate) as f64;
        p_max = p_max.max(l / candidate.len() as f64);
        r_max = r_max.max(l / r.len() as f64);
    }
    if p_max == 0.0 || r_max == 0.0 {
        return 0.0;
    }
    let b2 = BETA * BETA;
    (1.0 + b2) * p_max * r_max / (r_max + b2 * p_max)
}

pub fn rouge_l_per_image(corpus: &EvaluationCorpus) -> Result<Vec<f64>> {
    corpus.non_empty()?;
    Ok(corpus
        .items()
        .iter()
        .map(|i| image_score(&i.candidate, &i.references))
        .collect())
}

/// Mean ROUGE-L over images, β = 1.2.
pub fn rouge_l(corpus: &EvaluationCorpus) -> Result<f64> {
    let s = rouge_l_per_image(corpus)?;
    Ok(s.iter().sum::<f64>() / s.len() as f64)
}
