//! Trains one model on synthetic data and evaluates the best checkpoint on
//! the test split.
//!
//! ```text
//! cargo run --release --example train_synthetic -- use_cluster=true max_epochs=20
//! ```

use groundcap::data::SyntheticSpec;
use groundcap::train::{evaluate, TrainConfig, Trainer};

fn main() -> groundcap::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();

    let mut cfg = TrainConfig {
        hidden: 64,
        min_count: 1,
        max_epochs: 20,
        ..TrainConfig::default()
    };
    for arg in std::env::args().skip(1) {
        cfg.apply_kv(&arg)?;
    }

    let data = SyntheticSpec::default().generate(7)?;
    let run_dir = std::env::temp_dir().join("groundcap-train-example");
    let outcome = Trainer::new(cfg.clone(), &data.dataset)?.with_run_dir(&run_dir).run()?;

    println!(
        "{} epochs, {} updates, best validation CIDEr {:.3} at epoch {}",
        outcome.epochs, outcome.steps, outcome.best_cider, outcome.best_epoch
    );
    let record = evaluate(&outcome.checkpoint, &data.dataset.test, cfg.max_len)?;
    println!("{}", serde_json::to_string_pretty(&record)?);
    println!("run directory: {}", run_dir.display());
    Ok(())
}
