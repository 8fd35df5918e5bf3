use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use groundcap::analysis::write_vector_export;
use groundcap::data::{Dataset, Geometry, Split, SyntheticSpec};
use groundcap::labels::assign_labels_file;
use groundcap::model::Checkpoint;
use groundcap::train::{analyze_checkpoint, evaluate, run_experiment_matrix, MatrixOptions, TrainConfig, Trainer};
use groundcap::{Error, Result};

#[derive(Parser)]
#[command(name = "groundcap", version, about = "Grounded object-attention captioning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset directory.
    GenerateData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        classes: usize,
        #[arg(long, default_value_t = 500)]
        images: usize,
        #[arg(long, default_value_t = 0.3)]
        spread: f64,
        #[arg(long, default_value_t = 32)]
        feature_dim: usize,
        #[arg(long, default_value_t = 2)]
        min_objects: usize,
        #[arg(long, default_value_t = 4)]
        max_objects: usize,
        #[arg(long, default_value = "matched")]
        geometry: Geometry,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Label object boxes from detector output by IoU.
    AssignLabels {
        /// JSON-lines feature file whose boxes receive labels.
        #[arg(long)]
        input: PathBuf,
        /// JSON-lines detections, `{"id", "boxes", "labels"}` per line.
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model and keep the best checkpoint in the run directory.
    Train {
        #[command(flatten)]
        common: TrainArgs,
        #[arg(long)]
        run_dir: PathBuf,
    },
    /// Caption metrics of a checkpoint on one split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long, default_value_t = 16)]
        max_len: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Structure of the object spaces of a checkpoint on one split.
    Analyze {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Neighbor count for mNNO.
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long, default_value_t = 16)]
        max_len: usize,
        /// Directory for `analysis.json` and `vectors.jsonl`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train all four loss variants over several seeds and write the reports.
    Matrix {
        #[command(flatten)]
        common: TrainArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[arg(long, default_value_t = 3)]
        k: usize,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory with train/val/test files and classes.json.
    #[arg(long)]
    data: PathBuf,
    /// Flat `key = value` file of training settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Further settings as `--<field> <value>` (or `--<field>=<value>`),
    /// applied after the config file.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "SETTINGS")]
    settings: Vec<String>,
}

impl TrainArgs {
    fn config(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(p) => TrainConfig::from_kv_file(p)?,
            None => TrainConfig::default(),
        };
        apply_settings(&mut cfg, &self.settings)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn apply_settings(cfg: &mut TrainConfig, args: &[String]) -> Result<()> {
    let mut it = args.iter().peekable();
    while let Some(arg) = it.next() {
        let name = arg
            .strip_prefix("--")
            .ok_or_else(|| Error::Config(format!("expected --<setting>, got {arg:?}")))?;
        let (key, value) = match name.split_once('=') {
            Some((k, v)) => (k.to_owned(), v.to_owned()),
            None => match it.peek() {
                Some(v) if !v.starts_with("--") => (name.to_owned(), it.next().expect("peeked").clone()),
                _ => (name.to_owned(), "true".to_owned()),
            },
        };
        cfg.set(&key.replace('-', "_"), &value)?;
    }
    Ok(())
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenerateData {
            out,
            classes,
            images,
            spread,
            feature_dim,
            min_objects,
            max_objects,
            geometry,
            seed,
        } => {
            let spec = SyntheticSpec {
                num_classes: classes,
                spread,
                images,
                min_objects,
                max_objects,
                feature_dim,
                geometry,
            };
            let data = spec.generate(seed)?;
            data.dataset.save(&out)?;
            write_json(&out.join("prototypes.json"), &data.prototypes)?;
            println!("wrote {} images to {}", images, out.display());
        }
        Command::AssignLabels { input, detections, out } => {
            let (objects, unk) = assign_labels_file(&input, &detections, &out)?;
            println!("labeled {objects} objects, {unk} UNK");
        }
        Command::Train { common, run_dir } => {
            let cfg = common.config()?;
            let dataset = Dataset::load(&common.data)?;
            let outcome = Trainer::new(cfg, &dataset)?.with_run_dir(&run_dir).run()?;
            println!(
                "{} epochs, {} updates, best validation CIDEr {:.4} at epoch {}; checkpoint {}",
                outcome.epochs,
                outcome.steps,
                outcome.best_cider,
                outcome.best_epoch,
                run_dir.join("best.json").display()
            );
        }
        Command::Evaluate {
            checkpoint,
            data,
            split,
            max_len,
            out,
        } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let dataset = Dataset::load(&data)?;
            let record = evaluate(&ck, dataset.split(split), max_len)?;
            println!("{}", serde_json::to_string_pretty(&record)?);
            if let Some(p) = out {
                write_json(&p, &record)?;
            }
        }
        Command::Analyze {
            checkpoint,
            data,
            split,
            k,
            max_len,
            out,
        } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let dataset = Dataset::load(&data)?;
            let (report, export) = analyze_checkpoint(&ck, dataset.split(split), max_len, k)?;
            std::fs::create_dir_all(&out)?;
            report.save(&out.join("analysis.json"))?;
            write_vector_export(&out.join("vectors.jsonl"), &export)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Matrix { common, out, seeds, k } => {
            let cfg = common.config()?;
            let dataset = Dataset::load(&common.data)?;
            let mut options = MatrixOptions::new(cfg, seeds);
            options.k = k;
            options.out_dir = Some(out.clone());
            let report = run_experiment_matrix(&dataset, &options)?;
            println!("{}\n{}", report.caption_table(), report.structure_table());
            println!("reports written to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
