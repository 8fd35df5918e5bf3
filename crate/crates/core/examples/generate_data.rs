//! Generates a matched-geometry synthetic dataset, writes it to a directory
//! and prints how closely the class prototypes are reflected in the data.
//!
//! ```text
//! cargo run --example generate_data -- /tmp/groundcap-data
//! ```

use groundcap::analysis::class_centroids;
use groundcap::data::{Dataset, SyntheticSpec};
use groundcap::tensor::cosine;

fn main() -> groundcap::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("groundcap-data"));

    let synth = SyntheticSpec::default().generate(7)?;
    synth.dataset.save(&out)?;
    let data = Dataset::load(&out)?;
    println!(
        "{} train / {} val / {} test images, {} classes, {}-d features in {}",
        data.train.len(),
        data.val.len(),
        data.test.len(),
        data.classes.len(),
        data.feature_dim(),
        out.display()
    );
    for r in data.train.iter().take(2) {
        println!("  {}: {} objects, \"{}\"", r.objects.image_id, r.objects.len(), r.captions[0]);
    }

    let vectors: Vec<Vec<f64>> = data.train.iter().flat_map(|r| r.objects.features.clone()).collect();
    let labels: Vec<_> = data.train.iter().flat_map(|r| r.objects.labels.clone()).collect();
    for (c, centroid) in class_centroids(&vectors, &labels)? {
        println!(
            "  {:<14} theme {}  cos(centroid, prototype) = {:.3}",
            data.classes.name(c).unwrap_or("?"),
            synth.themes[c],
            cosine(&centroid, &synth.prototypes[c])?
        );
    }
    Ok(())
}
