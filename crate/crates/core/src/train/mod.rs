//! Training loop, evaluation and the four-variant experiment matrix.
//!
//! One tape per batch carries the teacher-forced cross-entropy of every
//! caption in the batch and, when enabled, the grounding losses over the
//! pool of all projected objects of the batch's images. Gradients are
//! clipped by global norm before each Adam update. After every epoch the
//! validation CIDEr decides whether the parameters become the new best
//! checkpoint and whether training stops.

mod config;
mod matrix;
mod optim;

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::{TrainConfig, Variant};
pub use matrix::{run_experiment_matrix, MatrixOptions, MatrixReport, RunSummary, VariantRow};
pub use optim::{clip_global_norm, Adam};

use crate::analysis::{analyze_spaces, AnalysisReport, ClassVectors};
use crate::data::{CaptionBatch, ClassId, Dataset, ImageRecord, Vocabulary};
use crate::error::{Error, Result};
use crate::losses::{self, LabeledPool, Samplers};
use crate::metrics::{self, EvaluationCorpus, MetricRecord, Scores};
use crate::model::{greedy_decode, Checkpoint, DecoderGraph, Dropout, ModelConfig, ModelParams};
use crate::tape::GradientTape;

pub const LOG_HEADER: &str = "epoch,step,l_xe,l_c,l_p,total,lr,val_cider,wall_ms";

/// One optimizer step. `val_cider` is filled on the last step of an epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    pub step: usize,
    pub l_xe: f64,
    pub l_c: f64,
    pub l_p: f64,
    pub total: f64,
    pub lr: f64,
    pub val_cider: Option<f64>,
    pub wall_ms: u64,
}

impl LogRow {
    pub fn csv_line(&self) -> String {
        let cider = self.val_cider.map(|c| c.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.epoch, self.step, self.l_xe, self.l_c, self.l_p, self.total, self.lr, cider, self.wall_ms
        )
    }
}

pub fn write_log_csv(path: &Path, rows: &[LogRow]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{LOG_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.csv_line())?;
    }
    w.flush()?;
    Ok(())
}

/// Mixes a tag into the master seed so that each random consumer gets its
/// own stream.
fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Greedy-decodes every record into an evaluation corpus whose references
/// are the record captions.
pub fn decode_corpus(
    params: &ModelParams,
    vocab: &Vocabulary,
    records: &[ImageRecord],
    max_len: usize,
) -> Result<EvaluationCorpus> {
    let mut corpus = EvaluationCorpus::new();
    for r in records {
        if r.captions.is_empty() {
            return Err(Error::DataValidation(format!(
                "image {} has no reference captions",
                r.objects.image_id
            )));
        }
        let ids = greedy_decode(params, &r.objects.features, max_len)?;
        let refs: Vec<Vec<String>> = r.captions.iter().map(|c| crate::data::normalize(c)).collect();
        corpus.push(vocab.decode(&ids), refs)?;
    }
    Ok(corpus)
}

/// All caption metrics of `records` under `params`.
pub fn evaluate_records(
    params: &ModelParams,
    vocab: &Vocabulary,
    records: &[ImageRecord],
    max_len: usize,
) -> Result<Scores> {
    Scores::compute(&decode_corpus(params, vocab, records, max_len)?)
}

/// Table-style metric record of a checkpoint on `records`.
pub fn evaluate(checkpoint: &Checkpoint, records: &[ImageRecord], max_len: usize) -> Result<MetricRecord> {
    let params = checkpoint.params()?;
    Ok(evaluate_records(&params, &checkpoint.vocab, records, max_len)?.record())
}

/// Structure analysis of a checkpoint on `records`, with the CIDEr (×100)
/// of its greedy captions filled in.
pub fn analyze_checkpoint(
    checkpoint: &Checkpoint,
    records: &[ImageRecord],
    max_len: usize,
    k: usize,
) -> Result<(AnalysisReport, Vec<ClassVectors>)> {
    let params = checkpoint.params()?;
    let classes = checkpoint.class_table()?;
    let (mut report, export) = analyze_spaces(&params, &checkpoint.vocab, &classes, records, k)?;
    report.cider = Some(100.0 * evaluate_records(&params, &checkpoint.vocab, records, max_len)?.cider);
    Ok((report, export))
}

/// Validation score used for early stopping; larger is better.
pub type Validator<'a> = Box<dyn FnMut(&ModelParams, &Vocabulary) -> Result<f64> + 'a>;

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub best: ModelParams,
    pub checkpoint: Checkpoint,
    pub initial: ModelParams,
    pub vocab: Vocabulary,
    pub log: Vec<LogRow>,
    pub epochs: usize,
    /// Optimizer updates performed before stopping.
    pub steps: usize,
    pub best_epoch: usize,
    pub best_cider: f64,
    pub epoch_ciders: Vec<f64>,
}

pub struct Trainer<'a> {
    config: TrainConfig,
    dataset: &'a Dataset,
    validator: Option<Validator<'a>>,
    run_dir: Option<PathBuf>,
}

struct Step {
    l_xe: f64,
    l_c: f64,
    l_p: f64,
    total: f64,
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainConfig, dataset: &'a Dataset) -> Result<Self> {
        config.validate()?;
        Ok(Trainer {
            config,
            dataset,
            validator: None,
            run_dir: None,
        })
    }

    /// Replaces the default validation CIDEr with a custom score.
    pub fn with_validator(mut self, f: impl FnMut(&ModelParams, &Vocabulary) -> Result<f64> + 'a) -> Self {
        self.validator = Some(Box::new(f));
        self
    }

    /// Writes the config snapshot, convergence log, checkpoints and a
    /// summary into `dir`.
    pub fn with_run_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.run_dir = Some(dir.into());
        self
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    fn check_grounding(&self, vocab: &Vocabulary) -> Result<losses::LabelTokens> {
        let cfg = &self.config;
        if !(cfg.use_cluster || cfg.use_perceptual) {
            return Ok(losses::LabelTokens::new());
        }
        let labeled = self
            .dataset
            .train
            .iter()
            .any(|r| r.objects.labels.iter().any(Option::is_some));
        if !labeled {
            return Err(Error::Config(
                "grounding losses are enabled but every training object is UNK".into(),
            ));
        }
        self.dataset.classes.label_token_ids(vocab)
    }

    pub fn run(mut self) -> Result<TrainOutcome> {
        let cfg = self.config.clone();
        let ds = self.dataset;
        if ds.train.is_empty() || ds.val.is_empty() {
            return Err(Error::DataValidation("training needs non-empty train and validation splits".into()));
        }
        ds.validate()?;
        let captions: Vec<&str> = ds.train.iter().flat_map(|r| r.captions.iter().map(String::as_str)).collect();
        let vocab = Vocabulary::build(&captions, cfg.min_count)?;
        let tokens = self.check_grounding(&vocab)?;

        let mut model = ModelConfig::new(cfg.hidden, ds.feature_dim(), vocab.len());
        if cfg.attention_dim != 0 {
            model.attention_dim = cfg.attention_dim;
        }
        let mut params = ModelParams::init(model, cfg.seed)?;
        let initial = params.clone();
        let loss_cfg = cfg.loss_config();
        let examples = CaptionBatch::from_records(&ds.train, &vocab, cfg.max_len).items;
        if examples.is_empty() {
            return Err(Error::DataValidation("training split has no captions".into()));
        }

        if let Some(dir) = &self.run_dir {
            fs::create_dir_all(dir)?;
            fs::write(dir.join("config.txt"), cfg.to_kv())?;
        }

        let mut samplers = Samplers::new(derive_seed(cfg.seed, 1));
        let mut dropout = Dropout::new(cfg.dropout, derive_seed(cfg.seed, 2))?;
        let mut adam = Adam::new(cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
        let started = Instant::now();
        let mut log: Vec<LogRow> = Vec::new();
        let mut epoch_ciders = Vec::new();
        let mut best: Option<(f64, usize, ModelParams, Checkpoint)> = None;
        let mut since_best = 0usize;
        let mut step = 0usize;
        let mut epoch = 0usize;

        while epoch < cfg.max_epochs {
            epoch += 1;
            let mut order: Vec<usize> = (0..examples.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1000 + epoch as u64)));

            for chunk in order.chunks(cfg.batch_size) {
                let batch: Vec<&(usize, Vec<usize>)> = chunk.iter().map(|&i| &examples[i]).collect();
                let (values, mut grads) = {
                    let mut tape = GradientTape::new();
                    let bound = params.bind(&mut tape);
                    let graph = DecoderGraph::new(&mut tape, bound, &params)?;
                    let mut contexts = BTreeMap::new();
                    let mut projected = Vec::new();
                    for (img, _) in &batch {
                        if contexts.contains_key(img) {
                            continue;
                        }
                        let objects = &ds.train[*img].objects;
                        let z = graph.project(&mut tape, &objects.features)?;
                        projected.push((z.clone(), objects.labels.clone()));
                        contexts.insert(*img, graph.context(&mut tape, z)?);
                    }
                    let mut xes = Vec::with_capacity(batch.len());
                    for (img, targets) in &batch {
                        let lps = graph.sequence_logprob(&mut tape, &contexts[img], targets, Some(&mut dropout))?;
                        xes.push(losses::cross_entropy_loss(&mut tape, &lps)?);
                    }
                    let xe = tape.mean(&xes)?;

                    let pool = if loss_cfg.cluster_enabled() || loss_cfg.perceptual_enabled() {
                        LabeledPool::gather(&tape, &projected)
                    } else {
                        LabeledPool::default()
                    };
                    let lc = if loss_cfg.cluster_enabled() {
                        let t = losses::sample_triplets(&pool.labels, loss_cfg.samples, &mut samplers.triplets);
                        Some(losses::cluster_loss(&mut tape, &pool.vectors, &t, loss_cfg.margin)?)
                    } else {
                        None
                    };
                    let lp = if loss_cfg.perceptual_enabled() {
                        let pairs = losses::sample_pairs(&pool.labels, loss_cfg.samples, &mut samplers.pairs);
                        let w_e = if cfg.freeze_word_embeddings {
                            tape.constant_ref(&params.w_e)
                        } else {
                            bound.w_e
                        };
                        Some(losses::perceptual_loss(&mut tape, &pool, &pairs, w_e, &tokens)?)
                    } else {
                        None
                    };
                    let total = losses::total_loss(&mut tape, xe, lc, lp, &loss_cfg)?;
                    let value = |v: Option<_>| v.map(|v| tape.value(v).item()).unwrap_or(0.0);
                    let values = Step {
                        l_xe: tape.value(xe).item(),
                        l_c: value(lc),
                        l_p: value(lp),
                        total: tape.value(total).item(),
                    };
                    if !values.total.is_finite() {
                        return Err(self.numerical_failure(epoch, step, "loss is not finite"));
                    }
                    (values, tape.backward(total)?)
                };
                clip_global_norm(&mut grads, cfg.grad_clip);
                let lr = cfg.learning_rate_at(step);
                adam.step(&mut params, &grads, lr);
                step += 1;
                if params.validate().is_err() {
                    return Err(self.numerical_failure(epoch, step, "parameters became non-finite"));
                }
                log.push(LogRow {
                    epoch,
                    step,
                    l_xe: values.l_xe,
                    l_c: values.l_c,
                    l_p: values.l_p,
                    total: values.total,
                    lr,
                    val_cider: None,
                    wall_ms: if cfg.log_wall_clock {
                        started.elapsed().as_millis() as u64
                    } else {
                        0
                    },
                });
            }

            let cider = match self.validator.as_mut() {
                Some(f) => f(&params, &vocab)?,
                None => {
                    let corpus = decode_corpus(&params, &vocab, &ds.val, cfg.max_len)?;
                    metrics::cider(&corpus)?
                }
            };
            if !cider.is_finite() {
                return Err(self.numerical_failure(epoch, step, "validation score is not finite"));
            }
            if let Some(last) = log.last_mut() {
                last.val_cider = Some(cider);
            }
            epoch_ciders.push(cider);
            log::info!("epoch {epoch} step {step} val CIDEr {cider:.4}");

            if best.as_ref().is_none_or(|(b, ..)| cider > *b) {
                let mut ck = Checkpoint::new(&params, &vocab, &ds.classes);
                ck.train_config = serde_json::to_value(&cfg)?;
                ck.epoch = epoch;
                ck.step = step;
                ck.val_cider = Some(cider);
                if let Some(dir) = &self.run_dir {
                    ck.save(&dir.join("best.json"))?;
                }
                best = Some((cider, epoch, params.clone(), ck));
                since_best = 0;
            } else {
                since_best += 1;
            }
            if let Some(dir) = &self.run_dir {
                write_log_csv(&dir.join("train_log.csv"), &log)?;
            }
            if since_best >= cfg.patience {
                log::info!("no improvement for {since_best} epochs, stopping");
                break;
            }
        }

        let (best_cider, best_epoch, best_params, checkpoint) = best.expect("at least one epoch ran");
        if let Some(dir) = &self.run_dir {
            let mut last = Checkpoint::new(&params, &vocab, &ds.classes);
            last.train_config = checkpoint.train_config.clone();
            last.epoch = epoch;
            last.step = step;
            last.val_cider = epoch_ciders.last().copied();
            last.save(&dir.join("last.json"))?;
        }
        let outcome = TrainOutcome {
            best: best_params,
            checkpoint,
            initial,
            vocab,
            log,
            epochs: epoch,
            steps: step,
            best_epoch,
            best_cider,
            epoch_ciders,
        };
        if let Some(dir) = &self.run_dir {
            let summary = serde_json::json!({
                "variant": cfg.variant(),
                "seed": cfg.seed,
                "epochs": outcome.epochs,
                "steps": outcome.steps,
                "best_epoch": outcome.best_epoch,
                "best_val_cider": outcome.best_cider,
            });
            fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
        }
        Ok(outcome)
    }

    fn numerical_failure(&self, epoch: usize, step: usize, what: &str) -> Error {
        let kept = match &self.run_dir {
            Some(d) if d.join("best.json").exists() => format!("; last good checkpoint kept at {}", d.join("best.json").display()),
            _ => String::new(),
        };
        Error::Numerical(format!("{what} at epoch {epoch}, step {step}{kept}"))
    }
}

/// Trains with the default validation CIDEr and no run directory.
pub fn train(config: TrainConfig, dataset: &Dataset) -> Result<TrainOutcome> {
    Trainer::new(config, dataset)?.run()
}

/// Labels of every object in `records`, flattened.
pub fn object_labels(records: &[ImageRecord]) -> Vec<Option<ClassId>> {
    records.iter().flat_map(|r| r.objects.labels.iter().copied()).collect()
}
