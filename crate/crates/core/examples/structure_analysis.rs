//! Structure of the object spaces before and after a short grounded
//! training run: mNNO, ρ_vis and cluster separation, original/projected.

use groundcap::analysis::analyze_spaces;
use groundcap::data::SyntheticSpec;
use groundcap::train::{TrainConfig, Trainer};

fn main() -> groundcap::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let data = SyntheticSpec {
        images: 200,
        ..SyntheticSpec::default()
    }
    .generate(3)?
    .dataset;
    let cfg = TrainConfig {
        hidden: 32,
        min_count: 1,
        batch_size: 40,
        max_epochs: 8,
        use_perceptual: true,
        ..TrainConfig::default()
    };
    let outcome = Trainer::new(cfg, &data)?.run()?;

    for (when, params) in [("initial", &outcome.initial), ("trained", &outcome.best)] {
        let (r, _) = analyze_spaces(params, &outcome.vocab, &data.classes, &data.test, 3)?;
        println!(
            "{when}: mNNO {:.2}/{:.2}  rho_vis {:+.3}/{:+.3}  C_inter {:.1} ({:.1})  C_intra {:.1} ({:.1})",
            r.original.mnno,
            r.projected.mnno,
            r.original.rho_vis,
            r.projected.rho_vis,
            r.projected.c_inter,
            r.original.c_inter,
            r.projected.c_intra,
            r.original.c_intra
        );
    }
    Ok(())
}
