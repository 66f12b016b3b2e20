//! Fake-news detection over dependency graphs: a subgraph aggregation
//! attention encoder, a position-biased semantic encoder, attention pooling
//! and a keyword debiasing branch, all on a small reverse-mode tape.

pub mod check;
pub mod config;
pub mod data;
pub mod graph;
pub mod head;
pub mod model;
pub mod params;
pub mod saa;
pub mod semantic;
pub mod tensor;
pub mod train;

pub use config::{Ablation, ConfigError, GateBackward, ModelConfig, RunConfig, TrainConfig};
pub use data::{DataError, NewsExample, Vocab};
pub use graph::{build_hop_stack, DepParse, HopStack, ParseError};
pub use head::Prediction;
pub use model::{EncodedExample, Mode, Model};
pub use tensor::{Tape, Tensor, TensorError, Var};
pub use train::{MetricsReport, TrainError};
