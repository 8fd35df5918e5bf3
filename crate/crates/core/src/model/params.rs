//! Trainable parameters of the captioner and the checkpoint container.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ClassTable, Vocabulary};
use crate::error::{Error, Result};
use crate::tape::{GradientTape, ParamId, Var};
use crate::tensor::Tensor;

pub const INIT_RANGE: f64 = 0.08;
pub const FORGET_BIAS: f64 = 1.0;

/// Dimensions that fix every parameter shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Width of the projection, embeddings and both LSTMs.
    pub hidden: usize,
    pub feature_dim: usize,
    pub vocab_size: usize,
    pub attention_dim: usize,
}

impl ModelConfig {
    pub fn new(hidden: usize, feature_dim: usize, vocab_size: usize) -> Self {
        ModelConfig {
            hidden,
            feature_dim,
            vocab_size,
            attention_dim: hidden,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.feature_dim == 0 || self.attention_dim == 0 || self.vocab_size < 4 {
            return Err(Error::Config(format!("invalid model dimensions {self:?}")));
        }
        Ok(())
    }
}

/// One LSTM layer; gate rows are ordered input, forget, candidate, output.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    /// `4h × input`
    pub w_ih: Tensor,
    /// `4h × h`
    pub w_hh: Tensor,
    /// One bias per gate row.
    pub bias: Tensor,
}

/// Concat attention `e_i = w_vᵀ tanh(W_a [h; z_i])`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    /// `d_a × 2d`
    pub w_a: Tensor,
    /// `d_a`
    pub w_v: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    /// Input projection `d × d_in`.
    pub w_in: Tensor,
    /// Word embeddings `d × |V|`; column `j` embeds token `j`.
    pub w_e: Tensor,
    /// Top-down attention LSTM over `[x_t, z̄, h²]`.
    pub lstm1: LstmParams,
    pub attention: AttentionParams,
    /// Language LSTM over `[c_t, h¹]`.
    pub lstm2: LstmParams,
    /// Output projection `|V| × d`.
    pub w_o: Tensor,
    pub b_o: Tensor,
}

pub const W_IN: ParamId = ParamId(0);
pub const W_E: ParamId = ParamId(1);
pub const LSTM1_W_IH: ParamId = ParamId(2);
pub const LSTM1_W_HH: ParamId = ParamId(3);
pub const LSTM1_BIAS: ParamId = ParamId(4);
pub const ATT_W_A: ParamId = ParamId(5);
pub const ATT_W_V: ParamId = ParamId(6);
pub const LSTM2_W_IH: ParamId = ParamId(7);
pub const LSTM2_W_HH: ParamId = ParamId(8);
pub const LSTM2_BIAS: ParamId = ParamId(9);
pub const W_O: ParamId = ParamId(10);
pub const B_O: ParamId = ParamId(11);

pub const PARAM_NAMES: [&str; 12] = [
    "w_in",
    "w_e",
    "lstm1.w_ih",
    "lstm1.w_hh",
    "lstm1.bias",
    "attention.w_a",
    "attention.w_v",
    "lstm2.w_ih",
    "lstm2.w_hh",
    "lstm2.bias",
    "w_o",
    "b_o",
];

/// Handles to the parameters registered on one tape.
#[derive(Clone, Copy, Debug)]
pub struct BoundLstm {
    pub w_ih: Var,
    pub w_hh: Var,
    pub bias: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct BoundParams {
    pub w_in: Var,
    pub w_e: Var,
    pub lstm1: BoundLstm,
    pub w_a: Var,
    pub w_v: Var,
    pub lstm2: BoundLstm,
    pub w_o: Var,
    pub b_o: Var,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-INIT_RANGE..=INIT_RANGE)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

impl LstmParams {
    fn init(rng: &mut ChaCha8Rng, input: usize, hidden: usize) -> Self {
        let mut bias = Tensor::zeros(&[4 * hidden]);
        bias.data_mut()[hidden..2 * hidden].fill(FORGET_BIAS);
        LstmParams {
            w_ih: uniform(rng, &[4 * hidden, input]),
            w_hh: uniform(rng, &[4 * hidden, hidden]),
            bias,
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        LstmParams {
            w_ih: Tensor::zeros(&[4 * hidden, input]),
            w_hh: Tensor::zeros(&[4 * hidden, hidden]),
            bias: Tensor::zeros(&[4 * hidden]),
        }
    }
}

impl ModelParams {
    /// Uniform `[-0.08, 0.08]` weights, zero biases, forget-gate bias 1.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, d_in, v, d_a) = (config.hidden, config.feature_dim, config.vocab_size, config.attention_dim);
        Ok(ModelParams {
            config,
            w_in: uniform(&mut rng, &[d, d_in]),
            w_e: uniform(&mut rng, &[d, v]),
            lstm1: LstmParams::init(&mut rng, 3 * d, d),
            attention: AttentionParams {
                w_a: uniform(&mut rng, &[d_a, 2 * d]),
                w_v: uniform(&mut rng, &[d_a]),
            },
            lstm2: LstmParams::init(&mut rng, 2 * d, d),
            w_o: uniform(&mut rng, &[v, d]),
            b_o: Tensor::zeros(&[v]),
        })
    }

    /// All-zero parameters, handy for rigging tests.
    pub fn zeros(config: ModelConfig) -> Self {
        let (d, d_in, v, d_a) = (config.hidden, config.feature_dim, config.vocab_size, config.attention_dim);
        ModelParams {
            config,
            w_in: Tensor::zeros(&[d, d_in]),
            w_e: Tensor::zeros(&[d, v]),
            lstm1: LstmParams::zeros(3 * d, d),
            attention: AttentionParams {
                w_a: Tensor::zeros(&[d_a, 2 * d]),
                w_v: Tensor::zeros(&[d_a]),
            },
            lstm2: LstmParams::zeros(2 * d, d),
            w_o: Tensor::zeros(&[v, d]),
            b_o: Tensor::zeros(&[v]),
        }
    }

    pub fn blocks(&self) -> [(ParamId, &Tensor); 12] {
        [
            (W_IN, &self.w_in),
            (W_E, &self.w_e),
            (LSTM1_W_IH, &self.lstm1.w_ih),
            (LSTM1_W_HH, &self.lstm1.w_hh),
            (LSTM1_BIAS, &self.lstm1.bias),
            (ATT_W_A, &self.attention.w_a),
            (ATT_W_V, &self.attention.w_v),
            (LSTM2_W_IH, &self.lstm2.w_ih),
            (LSTM2_W_HH, &self.lstm2.w_hh),
            (LSTM2_BIAS, &self.lstm2.bias),
            (W_O, &self.w_o),
            (B_O, &self.b_o),
        ]
    }

    pub fn block_mut(&mut self, id: ParamId) -> &mut Tensor {
        match id {
            W_IN => &mut self.w_in,
            W_E => &mut self.w_e,
            LSTM1_W_IH => &mut self.lstm1.w_ih,
            LSTM1_W_HH => &mut self.lstm1.w_hh,
            LSTM1_BIAS => &mut self.lstm1.bias,
            ATT_W_A => &mut self.attention.w_a,
            ATT_W_V => &mut self.attention.w_v,
            LSTM2_W_IH => &mut self.lstm2.w_ih,
            LSTM2_W_HH => &mut self.lstm2.w_hh,
            LSTM2_BIAS => &mut self.lstm2.bias,
            W_O => &mut self.w_o,
            B_O => &mut self.b_o,
            ParamId(other) => panic!("unknown parameter block {other}"),
        }
    }

    pub fn expected_shapes(config: &ModelConfig) -> [Vec<usize>; 12] {
        let (d, d_in, v, d_a) = (config.hidden, config.feature_dim, config.vocab_size, config.attention_dim);
        [
            vec![d, d_in],
            vec![d, v],
            vec![4 * d, 3 * d],
            vec![4 * d, d],
            vec![4 * d],
            vec![d_a, 2 * d],
            vec![d_a],
            vec![4 * d, 2 * d],
            vec![4 * d, d],
            vec![4 * d],
            vec![v, d],
            vec![v],
        ]
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let expected = Self::expected_shapes(&self.config);
        for ((id, t), shape) in self.blocks().iter().zip(expected.iter()) {
            if t.shape() != shape.as_slice() {
                return Err(Error::DataValidation(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    PARAM_NAMES[id.0],
                    t.shape(),
                    shape
                )));
            }
            if !t.is_finite() {
                return Err(Error::Numerical(format!("parameter {} is not finite", PARAM_NAMES[id.0])));
            }
        }
        Ok(())
    }

    /// Registers every block on `tape`.
    pub fn bind<'p>(&'p self, tape: &mut GradientTape<'p>) -> BoundParams {
        BoundParams {
            w_in: tape.param(W_IN, &self.w_in),
            w_e: tape.param(W_E, &self.w_e),
            lstm1: BoundLstm {
                w_ih: tape.param(LSTM1_W_IH, &self.lstm1.w_ih),
                w_hh: tape.param(LSTM1_W_HH, &self.lstm1.w_hh),
                bias: tape.param(LSTM1_BIAS, &self.lstm1.bias),
            },
            w_a: tape.param(ATT_W_A, &self.attention.w_a),
            w_v: tape.param(ATT_W_V, &self.attention.w_v),
            lstm2: BoundLstm {
                w_ih: tape.param(LSTM2_W_IH, &self.lstm2.w_ih),
                w_hh: tape.param(LSTM2_W_HH, &self.lstm2.w_hh),
                bias: tape.param(LSTM2_BIAS, &self.lstm2.bias),
            },
            w_o: tape.param(W_O, &self.w_o),
            b_o: tape.param(B_O, &self.b_o),
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.blocks().iter().map(|(_, t)| t.numel()).sum()
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Versioned JSON container: dimensions, vocabulary, class table, the
/// training configuration that produced the weights, and the weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub model: ModelConfig,
    pub vocab: Vocabulary,
    pub classes: std::collections::BTreeMap<usize, String>,
    #[serde(default)]
    pub train_config: serde_json::Value,
    pub epoch: usize,
    pub step: usize,
    pub val_cider: Option<f64>,
    pub params: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn new(params: &ModelParams, vocab: &Vocabulary, classes: &ClassTable) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            model: params.config,
            vocab: vocab.clone(),
            classes: classes.iter().map(|(k, v)| (k, v.to_owned())).collect(),
            train_config: serde_json::Value::Null,
            epoch: 0,
            step: 0,
            val_cider: None,
            params: params
                .blocks()
                .iter()
                .map(|(id, t)| NamedTensor {
                    name: PARAM_NAMES[id.0].to_owned(),
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                })
                .collect(),
        }
    }

    pub fn class_table(&self) -> Result<ClassTable> {
        ClassTable::new(self.classes.iter().map(|(k, v)| (*k, v.clone())))
    }

    /// Rebuilds the parameters, checking every shape against the stored
    /// dimensions.
    pub fn params(&self) -> Result<ModelParams> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::DataValidation(format!(
                "unsupported checkpoint version {}",
                self.version
            )));
        }
        if self.model.vocab_size != self.vocab.len() {
            return Err(Error::DataValidation(format!(
                "checkpoint vocabulary has {} tokens but the model expects {}",
                self.vocab.len(),
                self.model.vocab_size
            )));
        }
        let mut params = ModelParams::zeros(self.model);
        if self.params.len() != PARAM_NAMES.len() {
            return Err(Error::DataValidation(format!(
                "checkpoint has {} parameter blocks, expected {}",
                self.params.len(),
                PARAM_NAMES.len()
            )));
        }
        for (i, named) in self.params.iter().enumerate() {
            if named.name != PARAM_NAMES[i] {
                return Err(Error::DataValidation(format!(
                    "checkpoint block {i} is {:?}, expected {:?}",
                    named.name, PARAM_NAMES[i]
                )));
            }
            *params.block_mut(ParamId(i)) = Tensor::new(named.shape.clone(), named.data.clone())
                .map_err(|e| Error::DataValidation(format!("block {}: {e}", named.name)))?;
        }
        params.validate()?;
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, self)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_reader(BufReader::new(File::open(path)?))
            .map_err(|e| Error::DataValidation(format!("{}: {e}", path.display())))?;
        ck.params()?;
        Ok(ck)
    }
}
