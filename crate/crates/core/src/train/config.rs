use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::vocab::{DEFAULT_MAX_LEN, DEFAULT_MIN_COUNT};
use crate::error::{Error, Result};
use crate::losses::LossConfig;

/// Which grounding losses a run adds to the caption cross-entropy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Baseline,
    Cluster,
    Perceptual,
    ClusterPerceptual,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Baseline,
        Variant::Cluster,
        Variant::Perceptual,
        Variant::ClusterPerceptual,
    ];

    pub fn flags(self) -> (bool, bool) {
        match self {
            Variant::Baseline => (false, false),
            Variant::Cluster => (true, false),
            Variant::Perceptual => (false, true),
            Variant::ClusterPerceptual => (true, true),
        }
    }

    pub fn from_flags(cluster: bool, perceptual: bool) -> Self {
        match (cluster, perceptual) {
            (false, false) => Variant::Baseline,
            (true, false) => Variant::Cluster,
            (false, true) => Variant::Perceptual,
            (true, true) => Variant::ClusterPerceptual,
        }
    }

    /// Short name used in file names.
    pub fn slug(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Cluster => "lc",
            Variant::Perceptual => "lp",
            Variant::ClusterPerceptual => "lc_lp",
        }
    }

    /// Row label in report tables.
    pub fn label(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Cluster => "+L_C",
            Variant::Perceptual => "+L_P",
            Variant::ClusterPerceptual => "+L_C+L_P",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiplicative decay applied every `decay_steps` optimizer steps.
    pub decay_factor: f64,
    pub decay_steps: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Global gradient norm limit.
    pub grad_clip: f64,
    pub dropout: f64,
    pub max_len: usize,
    /// Epochs without a validation CIDEr improvement before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    pub hidden: usize,
    /// Attention size; 0 means equal to `hidden`.
    pub attention_dim: usize,
    pub min_count: usize,
    pub use_cluster: bool,
    pub use_perceptual: bool,
    pub margin: f64,
    pub alpha_c: f64,
    pub alpha_p: f64,
    pub samples: usize,
    /// Keeps the grounding losses from updating the word embeddings.
    pub freeze_word_embeddings: bool,
    pub seed: u64,
    /// Writes 0 in the `wall_ms` log column when false, making logs
    /// byte-reproducible.
    pub log_wall_clock: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 100,
            learning_rate: 2e-3,
            decay_factor: 0.8,
            decay_steps: 6000,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: 1.0,
            dropout: 0.2,
            max_len: DEFAULT_MAX_LEN,
            patience: 10,
            max_epochs: 100,
            hidden: 512,
            attention_dim: 0,
            min_count: DEFAULT_MIN_COUNT,
            use_cluster: false,
            use_perceptual: false,
            margin: 0.5,
            alpha_c: 1.0,
            alpha_p: 1.0,
            samples: 500,
            freeze_word_embeddings: false,
            seed: 0,
            log_wall_clock: true,
        }
    }
}

impl TrainConfig {
    pub fn variant(&self) -> Variant {
        Variant::from_flags(self.use_cluster, self.use_perceptual)
    }

    pub fn with_variant(mut self, v: Variant) -> Self {
        (self.use_cluster, self.use_perceptual) = v.flags();
        self
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            margin: self.margin,
            alpha_c: if self.use_cluster { self.alpha_c } else { 0.0 },
            alpha_p: if self.use_perceptual { self.alpha_p } else { 0.0 },
            samples: self.samples,
            seed: self.seed,
        }
    }

    /// Learning rate after `step` optimizer updates.
    pub fn learning_rate_at(&self, step: usize) -> f64 {
        self.learning_rate * self.decay_factor.powi((step / self.decay_steps) as i32)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("decay_factor", self.decay_factor),
            ("grad_clip", self.grad_clip),
            ("adam_eps", self.adam_eps),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must be in [0, 1), got {v}")));
            }
        }
        let counts = [
            ("batch_size", self.batch_size),
            ("decay_steps", self.decay_steps),
            ("max_len", self.max_len),
            ("patience", self.patience),
            ("max_epochs", self.max_epochs),
            ("hidden", self.hidden),
            ("min_count", self.min_count),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        self.loss_config().validate()
    }

    /// Sets one field from its textual value. Unknown keys and unparsable
    /// values are configuration errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut json = serde_json::to_value(&*self).expect("config serializes");
        let obj = json.as_object_mut().expect("config is an object");
        let current = obj
            .get(key)
            .ok_or_else(|| Error::Config(format!("unknown configuration key {key:?}")))?;
        let bad = || Error::Config(format!("invalid value {value:?} for {key}"));
        let parsed = match current {
            serde_json::Value::Bool(_) => serde_json::Value::Bool(value.parse().map_err(|_| bad())?),
            serde_json::Value::Number(n) if n.is_f64() => serde_json::json!(value.parse::<f64>().map_err(|_| bad())?),
            serde_json::Value::Number(_) => serde_json::json!(value.parse::<u64>().map_err(|_| bad())?),
            _ => serde_json::Value::String(value.to_owned()),
        };
        obj.insert(key.to_owned(), parsed);
        *self = serde_json::from_value(json).map_err(|e| Error::Config(format!("{key}: {e}")))?;
        Ok(())
    }

    /// Applies a flat `key = value` text; blank lines and `#` comments are
    /// ignored.
    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {raw:?}", lineno + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn from_kv_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = TrainConfig::default();
        cfg.apply_kv(&text)?;
        Ok(cfg)
    }

    /// The configuration as `key = value` lines, readable by [`apply_kv`].
    ///
    /// [`apply_kv`]: TrainConfig::apply_kv
    pub fn to_kv(&self) -> String {
        let json = serde_json::to_value(self).expect("config serializes");
        let mut out = String::new();
        for (k, v) in json.as_object().expect("config is an object") {
            let _ = writeln!(out, "{k} = {}", v.to_string().trim_matches('"'));
        }
        out
    }
}
