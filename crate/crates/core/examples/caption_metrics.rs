//! Scores a handful of candidate captions against their references with
//! BLEU-1..4, ROUGE-L and CIDEr-D.

use groundcap::metrics::{cider_per_image, EvaluationCorpus, Scores};

fn main() -> groundcap::Result<()> {
    let items = [
        ("a dog runs in the park", vec!["a dog runs in the park", "the dog is running on grass"]),
        ("two cats sleep", vec!["two cats sleeping on a bed", "a pair of cats asleep"]),
        ("a bird", vec!["a bird on a branch", "a small bird sits on a tree"]),
        ("a red bus on the street", vec!["a red bus driving down the street", "a bus in the city"]),
    ];
    let mut corpus = EvaluationCorpus::new();
    for (cand, refs) in &items {
        corpus.push_text(cand, refs)?;
    }

    let record = Scores::compute(&corpus)?.record();
    println!("{}", serde_json::to_string_pretty(&record)?);
    for ((cand, _), c) in items.iter().zip(cider_per_image(&corpus)?) {
        println!("{c:7.3}  {cand}");
    }
    Ok(())
}
