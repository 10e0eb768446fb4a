//! Tokenized multi-metric prediction chains.
//!
//! Metric values of mixed kinds are mapped to discrete tokens, arranged into
//! interleaved `<metric>, value` chains, scored by an autoregressive model
//! and decoded with a two-step confidence-oriented beam search.

pub mod chain;
pub mod dataset;
pub mod decoder;
pub mod eval;
pub mod model;
pub mod registry;
pub mod synthetic;
pub mod tokenizer;
pub mod vocab;

pub use chain::{build_target, parse, ChainSequence, LabelSet, OrderPolicy, OrderPreset};
pub use dataset::UtteranceRecord;
pub use decoder::{decode, decode_teacher_forced, DecodeRequest, OrderMode, PredictionSet};
pub use model::{sequence_loglik, ModelConfig, ModelKind, SequenceModel, TrainedModel};
pub use registry::{Direction, MetricKind, MetricSpec, MetricValue, Registry};
pub use tokenizer::{Codec, NumericCodec, Strategy};
pub use vocab::{Token, TokenVocabulary, Tokenizer};
