//! Trains the four loss variants on matched-geometry synthetic data for
//! three seeds and prints both report tables.
//!
//! Extra `key=value` arguments override training settings, e.g.
//!
//! ```text
//! cargo run --release --example experiment_matrix -- patience=5 out=runs/matrix
//! ```

use std::path::PathBuf;

use groundcap::data::SyntheticSpec;
use groundcap::train::{run_experiment_matrix, MatrixOptions, TrainConfig};

fn main() -> groundcap::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();

    let mut cfg = TrainConfig {
        hidden: 64,
        min_count: 1,
        log_wall_clock: false,
        ..TrainConfig::default()
    };
    let mut out = None;
    for arg in std::env::args().skip(1) {
        match arg.split_once('=') {
            Some(("out", dir)) => out = Some(PathBuf::from(dir)),
            Some((k, v)) => cfg.set(k, v)?,
            None => cfg.apply_kv(&arg)?,
        }
    }

    let spec = SyntheticSpec {
        feature_dim: 64,
        ..SyntheticSpec::default()
    };
    let data = spec.generate(7)?;
    let mut options = MatrixOptions::new(cfg, vec![0, 1, 2]);
    options.out_dir = out;
    let report = run_experiment_matrix(&data.dataset, &options)?;

    println!("{}", report.caption_table());
    println!("{}", report.structure_table());
    for r in &report.runs {
        println!(
            "{:>9} seed {}: {} updates, best epoch {}, val CIDEr {:.3}",
            r.variant.label(),
            r.seed,
            r.steps,
            r.best_epoch,
            r.best_val_cider
        );
    }
    Ok(())
}
