//! Automated essay scoring with a multichannel convolutional network feeding
//! bidirectional GRUs.
//!
//! The pipeline: tokenize and index essays, look up word vectors, run one
//! convolution + max-pool + BiGRU channel per window size, concatenate the
//! final states, and map them through a sigmoid unit to a normalized score.

pub mod artifact;
pub mod cli;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod network;
pub mod tensor;
pub mod training;

pub use artifact::ModelArtifact;
pub use corpus::{build_vocabulary, load_dataset, tokenize, Essay, EssaySet, ScoreRange, Vocabulary};
pub use embedding::{load_embeddings, EmbeddingTable};
pub use error::{Error, Result};
pub use harness::{run_cv, CvOptions, CvReport};
pub use metrics::qwk;
pub use network::{forward, Architecture, ModelParameters, Summary};
pub use training::{train, TrainConfig};
