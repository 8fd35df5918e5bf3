//! Training loop contracts: stopping rule, determinism, run directory layout,
//! evaluation and CLI exit codes.

use std::path::Path;
use std::process::Command;

use groundcap::data::{BoundingBox, ClassTable, Dataset, ImageRecord, ObjectFeatureSet, SyntheticSpec, Vocabulary};
use groundcap::model::{Checkpoint, ModelConfig, ModelParams};
use groundcap::train::{evaluate, run_experiment_matrix, MatrixOptions, TrainConfig, Trainer, Variant, LOG_HEADER};
use groundcap::Error;

fn small_data(seed: u64) -> Dataset {
    SyntheticSpec {
        num_classes: 6,
        images: 60,
        feature_dim: 8,
        ..SyntheticSpec::default()
    }
    .generate(seed)
    .unwrap()
    .dataset
}

fn small_config() -> TrainConfig {
    TrainConfig {
        batch_size: 16,
        hidden: 12,
        min_count: 1,
        max_epochs: 3,
        samples: 40,
        log_wall_clock: false,
        ..TrainConfig::default()
    }
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn constant_validation_score_stops_after_patience() {
    let data = small_data(1);
    let cfg = TrainConfig {
        max_epochs: 50,
        ..small_config()
    };
    let outcome = Trainer::new(cfg, &data).unwrap().with_validator(|_, _| Ok(0.5)).run().unwrap();
    assert_eq!(outcome.epochs, 11);
    assert_eq!(outcome.best_epoch, 1);
    assert_eq!(outcome.epoch_ciders, vec![0.5; 11]);
    assert_eq!(outcome.log.iter().filter(|r| r.val_cider.is_some()).count(), 11);
    assert!(outcome.log.windows(2).all(|w| w[0].step < w[1].step));
}

#[test]
fn same_seed_gives_identical_run_directories() {
    let data = small_data(2);
    let cfg = TrainConfig {
        use_cluster: true,
        use_perceptual: true,
        ..small_config()
    };
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        Trainer::new(cfg.clone(), &data).unwrap().with_run_dir(d.path()).run().unwrap();
    }
    for f in ["train_log.csv", "best.json", "last.json", "config.txt", "summary.json"] {
        assert_eq!(read(&dirs[0].path().join(f)), read(&dirs[1].path().join(f)), "{f} differs");
    }
}

#[test]
fn run_directory_layout() {
    let data = small_data(3);
    let dir = tempfile::tempdir().unwrap();
    let outcome = Trainer::new(small_config(), &data).unwrap().with_run_dir(dir.path()).run().unwrap();

    let log = String::from_utf8(read(&dir.path().join("train_log.csv"))).unwrap();
    let mut lines = log.lines();
    assert_eq!(lines.next(), Some(LOG_HEADER));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), outcome.steps);
    assert_eq!(rows.iter().filter(|r| !r[7].is_empty()).count(), outcome.epochs);

    let snapshot = TrainConfig::from_kv_file(&dir.path().join("config.txt")).unwrap();
    assert_eq!(snapshot, small_config());

    let best = Checkpoint::load(&dir.path().join("best.json")).unwrap();
    assert_eq!(best, outcome.checkpoint);
    assert_eq!(best.params().unwrap(), outcome.best);
    assert!(dir.path().join("last.json").exists());
}

#[test]
fn baseline_total_is_cross_entropy_bitwise() {
    let data = small_data(4);
    let base = Trainer::new(small_config(), &data).unwrap().run().unwrap();
    for row in &base.log {
        assert_eq!(row.total.to_bits(), row.l_xe.to_bits());
        assert_eq!((row.l_c, row.l_p), (0.0, 0.0));
    }

    let silent = TrainConfig {
        use_cluster: true,
        use_perceptual: true,
        alpha_c: 0.0,
        alpha_p: 0.0,
        ..small_config()
    };
    let muted = Trainer::new(silent, &data).unwrap().run().unwrap();
    assert_eq!(muted.log.len(), base.log.len());
    for (a, b) in base.log.iter().zip(&muted.log) {
        assert_eq!(a.total.to_bits(), b.total.to_bits(), "step {}", a.step);
    }
    assert_eq!(muted.best, base.best);
}

#[test]
fn best_checkpoint_dominates_every_epoch() {
    let data = small_data(5);
    let cfg = TrainConfig {
        max_epochs: 6,
        patience: 2,
        ..small_config()
    };
    let outcome = Trainer::new(cfg, &data).unwrap().run().unwrap();
    let best = outcome.checkpoint.val_cider.unwrap();
    assert_eq!(best, outcome.best_cider);
    assert!(outcome.epoch_ciders.iter().all(|&c| c <= best));
    assert_eq!(outcome.epoch_ciders[outcome.best_epoch - 1], best);
}

#[test]
fn grounding_without_labels_is_rejected_before_training() {
    let mut data = small_data(6);
    for r in data.train.iter_mut().chain(&mut data.val).chain(&mut data.test) {
        r.objects.labels.iter_mut().for_each(|l| *l = None);
    }
    let cfg = TrainConfig {
        use_cluster: true,
        ..small_config()
    };
    let err = Trainer::new(cfg, &data).unwrap().run().unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
    assert_eq!(err.exit_code(), 2);
    // the baseline does not need labels
    Trainer::new(small_config(), &data).unwrap().run().unwrap();
}

/// A decoder that ignores the image and follows a fixed token chain:
/// one-hot embeddings, saturated gates, and an output layer holding the
/// successor of every token.
fn chain_checkpoint(caption: &str, extra: &[&str]) -> Checkpoint {
    let mut words: Vec<&str> = caption.split(' ').collect();
    words.extend(extra);
    let mut tokens: Vec<String> = ["<bos>", "<eos>", "<unk>"].map(String::from).to_vec();
    for w in words {
        if !tokens.iter().any(|t| t == w) {
            tokens.push(w.to_owned());
        }
    }
    let vocab = Vocabulary::from_tokens(tokens).unwrap();
    let v = vocab.len();
    let mut p = ModelParams::zeros(ModelConfig::new(v, 2, v));
    let (big, gain) = (30.0, 5.0);
    let set = |t: &mut groundcap::tensor::Tensor, r: usize, c: usize, x: f64| {
        let cols = t.shape()[1];
        t.data_mut()[r * cols + c] = x;
    };
    for i in 0..v {
        set(&mut p.w_e, i, i, 1.0);
        // gates: input open, forget shut, candidate copies x / h1, output open
        for lstm in [&mut p.lstm1, &mut p.lstm2] {
            lstm.bias.data_mut()[i] = big;
            lstm.bias.data_mut()[v + i] = -big;
            lstm.bias.data_mut()[3 * v + i] = big;
        }
        set(&mut p.lstm1.w_ih, 2 * v + i, i, gain);
        set(&mut p.lstm2.w_ih, 2 * v + i, v + i, gain);
    }
    let ids: Vec<usize> = caption.split(' ').map(|w| vocab.id(w).unwrap()).collect();
    let mut prev = 0;
    for &next in ids.iter().chain(std::iter::once(&1)) {
        set(&mut p.w_o, next, prev, 10.0);
        prev = next;
    }
    let classes = ClassTable::new([(0, "thing")]).unwrap();
    Checkpoint::new(&p, &vocab, &classes)
}

fn record(id: usize, captions: &[&str]) -> ImageRecord {
    ImageRecord {
        objects: ObjectFeatureSet {
            image_id: format!("img{id}"),
            features: vec![vec![id as f64, 1.0]],
            boxes: vec![BoundingBox::new(0.0, 0.0, 1.0, 1.0).unwrap()],
            labels: vec![Some(0)],
        },
        captions: captions.iter().map(|s| s.to_string()).collect(),
    }
}

#[test]
fn decoder_reproducing_first_reference_scores_perfect_bleu() {
    let first = "a red kite over the sea";
    let records = vec![
        record(0, &[first, "kite flying above water"]),
        record(1, &[first, "a kite in the sky"]),
        record(2, &[first, "the sea with one kite"]),
    ];
    let ck = chain_checkpoint(first, &["kite", "flying", "above", "water", "in", "sky", "with", "one"]);
    let m = evaluate(&ck, &records, 16).unwrap();
    // the reference scorer smooths precisions by 1e-9
    assert!((m.bleu_1 - 100.0).abs() < 1e-6, "{m:?}");
    assert!((m.bleu_4 - 100.0).abs() < 1e-6, "{m:?}");
    assert_eq!(m.rouge_l, 100.0);
    assert_eq!(evaluate(&ck, &records, 16).unwrap(), m);

    let unreferenced = vec![record(0, &[])];
    let err = evaluate(&ck, &unreferenced, 16).unwrap_err();
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn two_variant_table_is_filled() {
    let data = small_data(8);
    let mut options = MatrixOptions::new(small_config(), vec![0]);
    options.variants = vec![Variant::Baseline, Variant::Cluster];
    let report = run_experiment_matrix(&data, &options).unwrap();
    assert_eq!(report.rows.len(), 2);
    let table = report.caption_table();
    let body: Vec<&str> = table.lines().filter(|l| l.starts_with("| ") && !l.contains("---")).collect();
    assert_eq!(body.len(), 3, "{table}");
    assert!(body[1].contains("baseline") && body[2].contains("+L_C"), "{table}");
    assert!(!table.contains("NaN"));
    let structure = report.structure_table();
    assert!(structure.contains("+L_C") && !structure.contains("NaN"), "{structure}");
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_groundcap"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let data_s = data.to_str().unwrap();
    let out = cli(&["generate-data", "--out", data_s, "--images", "40", "--classes", "4", "--feature-dim", "6"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let cfg = dir.path().join("train.cfg");
    std::fs::write(&cfg, "# tiny\nhidden = 8\nbatch_size = 10\nmax_epochs = 1\nmin_count = 1\n").unwrap();
    let run = dir.path().join("run");
    let run_s = run.to_str().unwrap();
    let cfg_s = cfg.to_str().unwrap();
    let out = cli(&["train", "--data", data_s, "--run-dir", run_s, "--config", cfg_s, "--use-cluster"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["config.txt", "train_log.csv", "best.json", "summary.json"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let snapshot = TrainConfig::from_kv_file(&run.join("config.txt")).unwrap();
    assert!(snapshot.use_cluster && snapshot.hidden == 8);

    let ck = run.join("best.json");
    let out = cli(&["evaluate", "--checkpoint", ck.to_str().unwrap(), "--data", data_s]);
    assert_eq!(out.status.code(), Some(0));
    let out = cli(&["analyze", "--checkpoint", ck.to_str().unwrap(), "--data", data_s, "--k", "2", "--out", run_s]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(run.join("analysis.json").exists() && run.join("vectors.jsonl").exists());

    let bad = cli(&["train", "--data", data_s, "--run-dir", run_s, "--no-such-setting", "1"]);
    assert_eq!(bad.status.code(), Some(2));
    let bad = cli(&["train", "--data", data_s, "--run-dir", run_s, "--patience", "0"]);
    assert_eq!(bad.status.code(), Some(2));

    std::fs::write(data.join("val.jsonl"), "{\"id\": \"x\", \"features\": [[1.0, NaN]]}\n").unwrap();
    let bad = cli(&["train", "--data", data_s, "--run-dir", run_s, "--config", cfg_s]);
    assert_eq!(bad.status.code(), Some(3));

    std::fs::write(data.join("val.jsonl"), "{\"id\": \"x\", \"features\": [[1.0, 2.0]], \"captions\": [\"a\"]}\n").unwrap();
    let bad = cli(&["train", "--data", data_s, "--run-dir", run_s, "--config", cfg_s]);
    assert_eq!(bad.status.code(), Some(3));
}

#[test]
fn diverging_run_exits_with_numerical_code() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let data_s = data.to_str().unwrap();
    assert_eq!(
        cli(&["generate-data", "--out", data_s, "--images", "20", "--classes", "3", "--feature-dim", "4"]).status.code(),
        Some(0)
    );
    let run = dir.path().join("run");
    let out = cli(&[
        "train", "--data", data_s, "--run-dir", run.to_str().unwrap(), "--hidden", "4", "--batch-size", "5",
        "--learning-rate", "1e308", "--min-count", "1",
    ]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}
