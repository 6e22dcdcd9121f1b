//! Heterogeneous-EEG representation learning.
//!
//! Stage one pre-trains a univariate encoder with a contrastive objective on
//! single-channel slices pooled across datasets whose channel sets and
//! sampling rates differ; a channel-union vocabulary gives every electrode a
//! global identity. Stage two fine-tunes, per subject, a graph-attention plus
//! Transformer classifier on top of that encoder and evaluates it with
//! top-k checkpoint ensembling.

pub mod augment;
pub mod checkpoint;
pub mod classifier;
pub mod dataio;
pub mod encoder;
pub mod error;
pub mod finetune;
pub mod interpret;
pub mod layers;
pub mod numerics;
pub mod pretrain;
pub mod rng;
pub mod schema;
pub mod selfcheck;

pub use classifier::{Classifier, ClassifierConfig, GraphMode};
pub use dataio::{EpochRecord, SynthSpec};
pub use encoder::{ArtConfig, ArtEncoder, TokenizerMode};
pub use error::{Error, FormatError, Result};
pub use finetune::{CheckpointSet, FinetuneConfig, InitMode};
pub use numerics::{Real, Tensor};
pub use pretrain::PretrainConfig;
pub use schema::{ChannelName, ChannelVocabulary, VocabMode};
