//! The captioning decoder and its parameters.

pub mod decoder;
pub mod params;

pub use decoder::{
    attend, decode_step, greedy_decode, lstm_step, mean_pool, project_features, sequence_logprob, DecoderGraph,
    DecoderState, Dropout, ImageContext, TapeState,
};
pub use params::{Checkpoint, LstmParams, ModelConfig, ModelParams, PARAM_NAMES};
