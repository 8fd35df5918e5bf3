use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{analyze_checkpoint, evaluate_records, TrainConfig, Trainer, Variant};
use crate::analysis::{analyze_spaces, AnalysisReport, SpaceStats};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::MetricRecord;

#[derive(Clone, Debug)]
pub struct MatrixOptions {
    /// Shared settings; the loss flags and seed are overridden per run.
    pub base: TrainConfig,
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    /// Neighbor count for mNNO.
    pub k: usize,
    /// Root of the per-run directories and the combined reports.
    pub out_dir: Option<PathBuf>,
}

impl MatrixOptions {
    pub fn new(base: TrainConfig, seeds: Vec<u64>) -> Self {
        MatrixOptions {
            base,
            variants: Variant::ALL.to_vec(),
            seeds,
            k: 3,
            out_dir: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub variant: Variant,
    pub seed: u64,
    pub epochs: usize,
    pub steps: usize,
    pub best_epoch: usize,
    pub best_val_cider: f64,
    pub epoch_ciders: Vec<f64>,
    /// Test-split metrics of the best checkpoint.
    pub metrics: MetricRecord,
    /// Test-split structure of the best checkpoint.
    pub analysis: AnalysisReport,
    /// The same analysis at initialization.
    pub initial_analysis: AnalysisReport,
}

/// Seed-averaged row of both tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantRow {
    pub variant: Variant,
    pub label: String,
    pub runs: usize,
    pub metrics: MetricRecord,
    pub original: SpaceStats,
    pub projected: SpaceStats,
    pub mean_steps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixReport {
    pub k: usize,
    pub runs: Vec<RunSummary>,
    pub rows: Vec<VariantRow>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

fn mean_stats(items: &[&SpaceStats]) -> SpaceStats {
    SpaceStats {
        mnno: mean(items.iter().map(|s| s.mnno)),
        rho_vis: mean(items.iter().map(|s| s.rho_vis)),
        c_inter: mean(items.iter().map(|s| s.c_inter)),
        c_intra: mean(items.iter().map(|s| s.c_intra)),
    }
}

impl MatrixReport {
    fn build(k: usize, runs: Vec<RunSummary>) -> Self {
        let mut rows = Vec::new();
        for v in Variant::ALL {
            let rs: Vec<&RunSummary> = runs.iter().filter(|r| r.variant == v).collect();
            if rs.is_empty() {
                continue;
            }
            let m = |f: fn(&MetricRecord) -> f64| mean(rs.iter().map(|r| f(&r.metrics)));
            rows.push(VariantRow {
                variant: v,
                label: v.label().to_owned(),
                runs: rs.len(),
                metrics: MetricRecord {
                    bleu_1: m(|r| r.bleu_1),
                    bleu_2: m(|r| r.bleu_2),
                    bleu_3: m(|r| r.bleu_3),
                    bleu_4: m(|r| r.bleu_4),
                    rouge_l: m(|r| r.rouge_l),
                    cider: m(|r| r.cider),
                    cider_raw: m(|r| r.cider_raw),
                },
                original: mean_stats(&rs.iter().map(|r| &r.analysis.original).collect::<Vec<_>>()),
                projected: mean_stats(&rs.iter().map(|r| &r.analysis.projected).collect::<Vec<_>>()),
                mean_steps: mean(rs.iter().map(|r| r.steps as f64)),
            });
        }
        MatrixReport { k, runs, rows }
    }

    pub fn run(&self, variant: Variant, seed: u64) -> Option<&RunSummary> {
        self.runs.iter().find(|r| r.variant == variant && r.seed == seed)
    }

    /// Caption metrics per variant, averaged over seeds.
    pub fn caption_table(&self) -> String {
        let mut out = String::from("| model | BLEU-1 | BLEU-2 | BLEU-3 | BLEU-4 | ROUGE-L | CIDEr | updates |\n");
        out.push_str("|---|---|---|---|---|---|---|---|\n");
        for r in &self.rows {
            let m = &r.metrics;
            let _ = writeln!(
                out,
                "| {} | {:.1} | {:.1} | {:.1} | {:.1} | {:.1} | {:.1} | {:.0} |",
                r.label, m.bleu_1, m.bleu_2, m.bleu_3, m.bleu_4, m.rouge_l, m.cider, r.mean_steps
            );
        }
        out
    }

    /// Projection-space structure per variant: original/projected pairs,
    /// separation scores with the original space in brackets.
    pub fn structure_table(&self) -> String {
        let mut out = format!("| model | CIDEr | mNNO (k={}) | rho_vis | C_inter | C_intra |\n", self.k);
        out.push_str("|---|---|---|---|---|---|\n");
        for r in &self.rows {
            let (o, p) = (&r.original, &r.projected);
            let _ = writeln!(
                out,
                "| {} | {:.1} | {:.1}/{:.1} | {:.1}/{:.1} | {:.1} ({:.1}) | {:.1} ({:.1}) |",
                r.label,
                r.metrics.cider,
                100.0 * o.mnno,
                100.0 * p.mnno,
                100.0 * o.rho_vis,
                100.0 * p.rho_vis,
                p.c_inter,
                o.c_inter,
                p.c_intra,
                o.c_intra
            );
        }
        out
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("matrix.json"), serde_json::to_string_pretty(self)? + "\n")?;
        let rows: Vec<serde_json::Value> = self
            .rows
            .iter()
            .map(|r| {
                let mut v = serde_json::to_value(r.metrics).expect("record serializes");
                v["model"] = r.label.clone().into();
                v
            })
            .collect();
        fs::write(dir.join("captions.json"), serde_json::to_string_pretty(&rows)? + "\n")?;
        let structure: Vec<serde_json::Value> = self
            .rows
            .iter()
            .map(|r| {
                serde_json::json!({
                    "model": r.label,
                    "CIDEr": r.metrics.cider,
                    "k": self.k,
                    "original": r.original,
                    "projected": r.projected,
                })
            })
            .collect();
        fs::write(dir.join("structure.json"), serde_json::to_string_pretty(&structure)? + "\n")?;
        let md = format!(
            "## Caption metrics\n\n{}\n## Projection space structure\n\n{}",
            self.caption_table(),
            self.structure_table()
        );
        fs::write(dir.join("report.md"), md)?;
        Ok(())
    }
}

/// Trains every variant for every seed on `dataset`, then evaluates and
/// analyzes each best checkpoint on the test split.
pub fn run_experiment_matrix(dataset: &Dataset, options: &MatrixOptions) -> Result<MatrixReport> {
    if options.variants.is_empty() || options.seeds.is_empty() {
        return Err(Error::Config("the experiment matrix needs at least one variant and one seed".into()));
    }
    let max_len = options.base.max_len;
    let mut runs = Vec::new();
    for &variant in &options.variants {
        for &seed in &options.seeds {
            let mut cfg = options.base.clone().with_variant(variant);
            cfg.seed = seed;
            log::info!("training {} seed {seed}", variant.label());
            let mut trainer = Trainer::new(cfg, dataset)?;
            let run_dir = options
                .out_dir
                .as_ref()
                .map(|d| d.join(format!("{}_seed{seed}", variant.slug())));
            if let Some(d) = &run_dir {
                trainer = trainer.with_run_dir(d);
            }
            let outcome = trainer.run()?;
            let (analysis, export) = analyze_checkpoint(&outcome.checkpoint, &dataset.test, max_len, options.k)?;
            let (initial_analysis, _) =
                analyze_spaces(&outcome.initial, &outcome.vocab, &dataset.classes, &dataset.test, options.k)?;
            let metrics = evaluate_records(&outcome.best, &outcome.vocab, &dataset.test, max_len)?.record();
            if let Some(d) = &run_dir {
                analysis.save(&d.join("analysis.json"))?;
                crate::analysis::write_vector_export(&d.join("vectors.jsonl"), &export)?;
                fs::write(d.join("metrics.json"), serde_json::to_string_pretty(&metrics)? + "\n")?;
            }
            runs.push(RunSummary {
                variant,
                seed,
                epochs: outcome.epochs,
                steps: outcome.steps,
                best_epoch: outcome.best_epoch,
                best_val_cider: outcome.best_cider,
                epoch_ciders: outcome.epoch_ciders,
                metrics,
                analysis,
                initial_analysis,
            });
        }
    }
    let report = MatrixReport::build(options.k, runs);
    if let Some(d) = &options.out_dir {
        report.save(d)?;
    }
    Ok(report)
}
