//! Two-layer top-down attention decoder.
//!
//! Per step `t`:
//!
//! ```text
//! x_t  = W_e φ(y_{t-1})
//! h¹_t = LSTM¹([x_t, z̄, h²_{t-1}], h¹_{t-1})
//! c_t  = Σ α_i z_i,   α = softmax_i(w_vᵀ tanh(W_a [h¹_t; z_i]))
//! h²_t = LSTM²([c_t, h¹_t], h²_{t-1})
//! p_t  = softmax(W_o h²_t + b_o)
//! ```
//!
//! with `z_i = W_in v_i` and `z̄` the mean of the projected objects. Hidden
//! and cell states start at zero; `y_0` is BOS.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{AttentionParams, BoundLstm, BoundParams, LstmParams, ModelParams};
use crate::data::vocab::{BOS, EOS};
use crate::error::{Error, Result};
use crate::tape::{GradientTape, ParamId, Var};
use crate::tensor::{self, Tensor};

/// Inverted dropout with its own random stream.
pub struct Dropout {
    rate: f64,
    rng: ChaCha8Rng,
}

impl Dropout {
    pub fn new(rate: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        Ok(Dropout {
            rate,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn apply(&mut self, tape: &mut GradientTape<'_>, x: Var) -> Result<Var> {
        if self.rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - self.rate);
        let n = tape.value(x).numel();
        let mask: Vec<f64> = (0..n)
            .map(|_| if self.rng.random::<f64>() < self.rate { 0.0 } else { keep })
            .collect();
        let m = tape.constant(Tensor::vector(mask));
        tape.mul(x, m)
    }
}

/// Recurrent state of both layers as tape nodes.
#[derive(Clone, Copy, Debug)]
pub struct TapeState {
    pub h1: Var,
    pub c1: Var,
    pub h2: Var,
    pub c2: Var,
}

impl TapeState {
    pub fn zeros(tape: &mut GradientTape<'_>, hidden: usize) -> Self {
        let z = tape.constant(Tensor::zeros(&[hidden]));
        TapeState {
            h1: z,
            c1: z,
            h2: z,
            c2: z,
        }
    }
}

/// Projected objects of one image, prepared once per sequence.
#[derive(Clone, Debug)]
pub struct ImageContext {
    pub z: Vec<Var>,
    pub z_mean: Var,
    /// `d × k` matrix whose columns are the `z_i`.
    z_cols: Var,
    /// Object half of the attention projection, `d_a × k`.
    att_z: Var,
    /// Input-gate contribution of `z̄` to the first LSTM.
    lstm1_z: Var,
}

/// LSTM update from the already projected input `wx = W_ih x`.
fn lstm_gates(tape: &mut GradientTape<'_>, lstm: &BoundLstm, wx: Var, h: Var, c: Var) -> Result<(Var, Var)> {
    let hidden = tape.value(h).numel();
    let wh = tape.matmul(lstm.w_hh, h)?;
    let pre = tape.add(wx, wh)?;
    let pre = tape.add(pre, lstm.bias)?;
    let i = tape.slice(pre, 0, hidden)?;
    let f = tape.slice(pre, hidden, hidden)?;
    let g = tape.slice(pre, 2 * hidden, hidden)?;
    let o = tape.slice(pre, 3 * hidden, hidden)?;
    let i = tape.sigmoid(i)?;
    let f = tape.sigmoid(f)?;
    let g = tape.tanh(g)?;
    let o = tape.sigmoid(o)?;
    let fc = tape.mul(f, c)?;
    let ig = tape.mul(i, g)?;
    let c_next = tape.add(fc, ig)?;
    let tc = tape.tanh(c_next)?;
    let h_next = tape.mul(o, tc)?;
    Ok((h_next, c_next))
}

/// Gate order i, f, g, o; one bias per gate.
pub fn lstm_cell(tape: &mut GradientTape<'_>, lstm: &BoundLstm, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
    let wx = tape.matmul(lstm.w_ih, x)?;
    lstm_gates(tape, lstm, wx, h, c)
}

/// The decoder graph over a set of bound parameters. The weight matrices
/// that multiply concatenated inputs are split once per tape so that
/// per-image terms are computed once per sequence instead of every step.
#[derive(Clone, Copy, Debug)]
pub struct DecoderGraph {
    pub params: BoundParams,
    pub hidden: usize,
    pub vocab_size: usize,
    lstm1_x: Var,
    lstm1_z: Var,
    lstm1_h: Var,
    att_h: Var,
    att_z: Var,
}

impl DecoderGraph {
    pub fn new(tape: &mut GradientTape<'_>, params: BoundParams, model: &ModelParams) -> Result<Self> {
        let d = model.config.hidden;
        Ok(DecoderGraph {
            params,
            hidden: d,
            vocab_size: model.config.vocab_size,
            lstm1_x: tape.column_block(params.lstm1.w_ih, 0, d)?,
            lstm1_z: tape.column_block(params.lstm1.w_ih, d, d)?,
            lstm1_h: tape.column_block(params.lstm1.w_ih, 2 * d, d)?,
            att_h: tape.column_block(params.w_a, 0, d)?,
            att_z: tape.column_block(params.w_a, d, d)?,
        })
    }

    /// `z_i = W_in v_i` for every object (linear, no bias).
    pub fn project(&self, tape: &mut GradientTape<'_>, features: &[Vec<f64>]) -> Result<Vec<Var>> {
        features
            .iter()
            .map(|v| {
                let vv = tape.constant(Tensor::vector(v.clone()));
                tape.matmul(self.params.w_in, vv)
            })
            .collect()
    }

    pub fn context(&self, tape: &mut GradientTape<'_>, z: Vec<Var>) -> Result<ImageContext> {
        if z.is_empty() {
            return Err(Error::Domain("an image needs at least one object vector".into()));
        }
        let z_mean = tape.mean(&z)?;
        let stacked = tape.stack(&z)?;
        let z_cols = tape.transpose(stacked)?;
        let att_z = tape.matmul(self.att_z, z_cols)?;
        let lstm1_z = tape.matmul(self.lstm1_z, z_mean)?;
        Ok(ImageContext {
            z,
            z_mean,
            z_cols,
            att_z,
            lstm1_z,
        })
    }

    /// Concat attention `α = softmax_i(w_vᵀ tanh(W_a [h; z_i]))`; returns the
    /// context vector and `α`.
    pub fn attention(&self, tape: &mut GradientTape<'_>, h: Var, ctx: &ImageContext) -> Result<(Var, Var)> {
        let hp = tape.matmul(self.att_h, h)?;
        let pre = tape.add_column(ctx.att_z, hp)?;
        let act = tape.tanh(pre)?;
        let act_t = tape.transpose(act)?;
        let scores = tape.matmul(act_t, self.params.w_v)?;
        let alpha = tape.softmax(scores)?;
        let context = tape.matmul(ctx.z_cols, alpha)?;
        Ok((context, alpha))
    }

    /// One decoding step; returns the output logits and the next state.
    pub fn step(
        &self,
        tape: &mut GradientTape<'_>,
        y_prev: usize,
        state: TapeState,
        ctx: &ImageContext,
        mut dropout: Option<&mut Dropout>,
    ) -> Result<(Var, TapeState)> {
        if y_prev >= self.vocab_size {
            return Err(Error::Domain(format!(
                "token id {y_prev} outside vocabulary of size {}",
                self.vocab_size
            )));
        }
        let p = &self.params;
        let mut x = tape.column(p.w_e, y_prev)?;
        if let Some(d) = dropout.as_deref_mut() {
            x = d.apply(tape, x)?;
        }
        // W_ih [x; z̄; h²] split by blocks
        let wx = tape.matmul(self.lstm1_x, x)?;
        let wh = tape.matmul(self.lstm1_h, state.h2)?;
        let in1 = tape.add(wx, wh)?;
        let in1 = tape.add(in1, ctx.lstm1_z)?;
        let (h1, c1) = lstm_gates(tape, &p.lstm1, in1, state.h1, state.c1)?;
        let h1_out = match dropout.as_deref_mut() {
            Some(d) => d.apply(tape, h1)?,
            None => h1,
        };
        let (context, _) = self.attention(tape, h1_out, ctx)?;
        let in2 = tape.concat(&[context, h1_out])?;
        let (h2, c2) = lstm_cell(tape, &p.lstm2, in2, state.h2, state.c2)?;
        let h2_out = match dropout {
            Some(d) => d.apply(tape, h2)?,
            None => h2,
        };
        let logits = tape.matmul(p.w_o, h2_out)?;
        let logits = tape.add(logits, p.b_o)?;
        Ok((logits, TapeState { h1, c1, h2, c2 }))
    }

    /// Teacher-forced log-probabilities `log p(y*_t | y*_{<t})`, one scalar
    /// node per target token.
    pub fn sequence_logprob(
        &self,
        tape: &mut GradientTape<'_>,
        ctx: &ImageContext,
        targets: &[usize],
        mut dropout: Option<&mut Dropout>,
    ) -> Result<Vec<Var>> {
        let mut state = TapeState::zeros(tape, self.hidden);
        let mut prev = BOS;
        let mut out = Vec::with_capacity(targets.len());
        for &y in targets {
            if y >= self.vocab_size {
                return Err(Error::Domain(format!("target token {y} outside vocabulary")));
            }
            let (logits, next) = self.step(tape, prev, state, ctx, dropout.as_deref_mut())?;
            let lp = tape.log_softmax(logits)?;
            out.push(tape.index(lp, y)?);
            state = next;
            prev = y;
        }
        Ok(out)
    }
}

/// Hidden and cell vectors of both layers.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderState {
    pub h1: Vec<f64>,
    pub c1: Vec<f64>,
    pub h2: Vec<f64>,
    pub c2: Vec<f64>,
}

impl DecoderState {
    pub fn zeros(hidden: usize) -> Self {
        DecoderState {
            h1: vec![0.0; hidden],
            c1: vec![0.0; hidden],
            h2: vec![0.0; hidden],
            c2: vec![0.0; hidden],
        }
    }
}

pub fn project_features(params: &ModelParams, features: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    features
        .iter()
        .map(|v| {
            if v.len() != params.config.feature_dim {
                return Err(Error::shape("project_features", params.w_in.shape(), &[v.len()]));
            }
            Ok(tensor::matmul(&params.w_in, &Tensor::vector(v.clone()))?.into_data())
        })
        .collect()
}

pub fn mean_pool(z: &[Vec<f64>]) -> Result<Vec<f64>> {
    let refs: Vec<&[f64]> = z.iter().map(Vec::as_slice).collect();
    tensor::mean_vector(&refs)
}

/// A single LSTM cell update on plain vectors.
pub fn lstm_step(lstm: &LstmParams, x: &[f64], h: &[f64], c: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if h.len() != c.len() || lstm.w_hh.shape() != [4 * h.len(), h.len()] {
        return Err(Error::shape("lstm_step", lstm.w_hh.shape(), &[h.len()]));
    }
    let mut tape = GradientTape::new();
    let bound = BoundLstm {
        w_ih: tape.param(ParamId(0), &lstm.w_ih),
        w_hh: tape.param(ParamId(1), &lstm.w_hh),
        bias: tape.param(ParamId(2), &lstm.bias),
    };
    let xv = tape.constant(Tensor::vector(x.to_vec()));
    let hv = tape.constant(Tensor::vector(h.to_vec()));
    let cv = tape.constant(Tensor::vector(c.to_vec()));
    let (h2, c2) = lstm_cell(&mut tape, &bound, xv, hv, cv)?;
    Ok((tape.value(h2).data().to_vec(), tape.value(c2).data().to_vec()))
}

/// Concat attention on plain vectors; returns the context vector.
pub fn attend(att: &AttentionParams, h: &[f64], z: &[Vec<f64>]) -> Result<Vec<f64>> {
    if z.is_empty() {
        return Err(Error::Domain("attention over an empty set".into()));
    }
    let d = h.len();
    if att.w_a.shape().len() != 2 || att.w_a.cols() != 2 * d {
        return Err(Error::shape("attend", att.w_a.shape(), &[d]));
    }
    let mut scores = Vec::with_capacity(z.len());
    for zi in z {
        let hz: Vec<f64> = h.iter().chain(zi).copied().collect();
        let pre = tensor::matmul(&att.w_a, &Tensor::vector(hz))?;
        let act: Vec<f64> = pre.data().iter().map(|x| x.tanh()).collect();
        scores.push(tensor::dot(att.w_v.data(), &act));
    }
    let alpha = tensor::softmax(&scores)?;
    let mut out = vec![0.0; z[0].len()];
    for (a, zi) in alpha.iter().zip(z) {
        for (o, x) in out.iter_mut().zip(zi) {
            *o += a * x;
        }
    }
    Ok(out)
}

/// One decoding step on plain vectors; returns the output distribution over
/// the vocabulary and the next state.
pub fn decode_step(
    params: &ModelParams,
    y_prev: usize,
    state: &DecoderState,
    z: &[Vec<f64>],
) -> Result<(Vec<f64>, DecoderState)> {
    let mut tape = GradientTape::new();
    let bound = params.bind(&mut tape);
    let graph = DecoderGraph::new(&mut tape, bound, params)?;
    let zv: Vec<Var> = z.iter().map(|v| tape.constant(Tensor::vector(v.clone()))).collect();
    let ctx = graph.context(&mut tape, zv)?;
    let ts = TapeState {
        h1: tape.constant(Tensor::vector(state.h1.clone())),
        c1: tape.constant(Tensor::vector(state.c1.clone())),
        h2: tape.constant(Tensor::vector(state.h2.clone())),
        c2: tape.constant(Tensor::vector(state.c2.clone())),
    };
    let (logits, next) = graph.step(&mut tape, y_prev, ts, &ctx, None)?;
    let probs = tensor::softmax(tape.value(logits).data())?;
    let vec_of = |v: Var| tape.value(v).data().to_vec();
    Ok((
        probs,
        DecoderState {
            h1: vec_of(next.h1),
            c1: vec_of(next.c1),
            h2: vec_of(next.h2),
            c2: vec_of(next.c2),
        },
    ))
}

/// Teacher-forced per-step log-probabilities of `targets` given raw object
/// features. Dropout is applied when `dropout_rate > 0`.
pub fn sequence_logprob(
    params: &ModelParams,
    features: &[Vec<f64>],
    targets: &[usize],
    dropout_rate: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut tape = GradientTape::new();
    let bound = params.bind(&mut tape);
    let graph = DecoderGraph::new(&mut tape, bound, params)?;
    let z = graph.project(&mut tape, features)?;
    let ctx = graph.context(&mut tape, z)?;
    let mut dropout = Dropout::new(dropout_rate, seed)?;
    let lps = graph.sequence_logprob(&mut tape, &ctx, targets, Some(&mut dropout))?;
    Ok(lps.iter().map(|&v| tape.value(v).item()).collect())
}

/// Greedy decoding from BOS: argmax token per step (ties to the lowest id),
/// stopping at EOS (not emitted) or after `max_len` tokens.
pub fn greedy_decode(params: &ModelParams, features: &[Vec<f64>], max_len: usize) -> Result<Vec<usize>> {
    if max_len == 0 {
        return Err(Error::Domain("max_len must be at least 1".into()));
    }
    let mut tape = GradientTape::new();
    let bound = params.bind(&mut tape);
    let graph = DecoderGraph::new(&mut tape, bound, params)?;
    let z = graph.project(&mut tape, features)?;
    let ctx = graph.context(&mut tape, z)?;
    let mut state = TapeState::zeros(&mut tape, graph.hidden);
    let mut prev = BOS;
    let mut out = Vec::new();
    while out.len() < max_len {
        let (logits, next) = graph.step(&mut tape, prev, state, &ctx, None)?;
        let y = tensor::argmax(tape.value(logits).data());
        if y == EOS {
            break;
        }
        out.push(y);
        state = next;
        prev = y;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::ModelConfig;
    use approx::assert_abs_diff_eq;

    #[test]
    fn projection_cases() {
        let mut p = ModelParams::zeros(ModelConfig::new(2, 2, 6));
        p.w_in = Tensor::identity(2);
        let v = vec![vec![3.0, 4.0], vec![-1.0, 0.5]];
        assert_eq!(project_features(&p, &v).unwrap(), v);
        p.w_in = Tensor::zeros(&[2, 2]);
        assert_eq!(project_features(&p, &v).unwrap(), vec![vec![0.0; 2]; 2]);
        p.w_in = Tensor::matrix(&[vec![1.0, 1.0], vec![0.0, 2.0]]).unwrap();
        assert_eq!(project_features(&p, &[vec![3.0, 4.0]]).unwrap(), vec![vec![7.0, 8.0]]);
        assert!(project_features(&p, &[vec![1.0, 2.0, 3.0]]).is_err());
    }

    #[test]
    fn mean_pool_cases() {
        assert_eq!(mean_pool(&[vec![1.0, -2.0]]).unwrap(), vec![1.0, -2.0]);
        assert_eq!(mean_pool(&[vec![1.5, -2.0], vec![-1.5, 2.0]]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(mean_pool(&[vec![1.0, 3.0], vec![3.0, 5.0]]).unwrap(), vec![2.0, 4.0]);
        assert!(matches!(mean_pool(&[]), Err(Error::Domain(_))));
    }

    #[test]
    fn zero_lstm_stays_zero() {
        let lstm = LstmParams::zeros(3, 2);
        let (h, c) = lstm_step(&lstm, &[1.0, 2.0, 3.0], &[0.0; 2], &[0.0; 2]).unwrap();
        assert_eq!(h, vec![0.0; 2]);
        assert_eq!(c, vec![0.0; 2]);
    }

    #[test]
    fn saturated_forget_gate_keeps_cell() {
        let mut lstm = LstmParams::zeros(3, 2);
        lstm.bias.data_mut()[2..4].fill(20.0);
        let c = [0.7, -1.3];
        let (_, c2) = lstm_step(&lstm, &[1.0, 2.0, 3.0], &[0.1, 0.2], &c).unwrap();
        for (a, b) in c2.iter().zip(&c) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-8);
        }
    }

    #[test]
    fn attention_special_cases() {
        let params = ModelParams::init(ModelConfig::new(3, 2, 6), 4).unwrap();
        let h = [0.3, -0.2, 0.9];
        let z1 = vec![vec![1.0, 2.0, -1.0]];
        assert_eq!(attend(&params.attention, &h, &z1).unwrap(), z1[0]);
        let same = vec![z1[0].clone(); 3];
        for (a, b) in attend(&params.attention, &h, &same).unwrap().iter().zip(&z1[0]) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
        let mut att = params.attention.clone();
        att.w_v = Tensor::zeros(&[3]);
        let zs = vec![vec![1.0, 0.0, 2.0], vec![3.0, 4.0, 0.0]];
        assert_eq!(attend(&att, &h, &zs).unwrap(), mean_pool(&zs).unwrap());
        assert!(attend(&att, &h, &[]).is_err());
    }

    #[test]
    fn zero_output_layer_gives_uniform_distribution() {
        let mut p = ModelParams::init(ModelConfig::new(4, 3, 6), 2).unwrap();
        p.w_o = Tensor::zeros(&[6, 4]);
        let z = project_features(&p, &[vec![1.0, 0.5, -0.5]]).unwrap();
        let (probs, _) = decode_step(&p, BOS, &DecoderState::zeros(4), &z).unwrap();
        for q in probs {
            assert_abs_diff_eq!(q, 1.0 / 6.0, epsilon = 1e-15);
        }
        assert!(decode_step(&p, 6, &DecoderState::zeros(4), &z).is_err());
    }

    #[test]
    fn greedy_stops_immediately_when_eos_dominates() {
        let mut p = ModelParams::init(ModelConfig::new(4, 3, 6), 2).unwrap();
        p.w_o = Tensor::zeros(&[6, 4]);
        p.b_o.data_mut()[EOS] = 5.0;
        assert!(greedy_decode(&p, &[vec![1.0, 1.0, 1.0]], 16).unwrap().is_empty());
        p.b_o.data_mut()[EOS] = -5.0;
        p.b_o.data_mut()[4] = 5.0;
        assert_eq!(greedy_decode(&p, &[vec![1.0, 1.0, 1.0]], 16).unwrap(), vec![4; 16]);
    }

    #[test]
    fn dropout_free_logprob_is_deterministic() {
        let p = ModelParams::init(ModelConfig::new(4, 3, 6), 7).unwrap();
        let f = vec![vec![0.1, 0.2, 0.3], vec![-0.4, 0.0, 0.9]];
        let a = sequence_logprob(&p, &f, &[3, 4, EOS], 0.0, 1).unwrap();
        let b = sequence_logprob(&p, &f, &[3, 4, EOS], 0.0, 99).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|v| *v < 0.0));
        let c = sequence_logprob(&p, &f, &[3, 4, EOS], 0.5, 1).unwrap();
        assert_ne!(a, c);
    }
}
