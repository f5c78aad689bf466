//! Structural-semantic graph tokenization: a graph encoder whose node
//! embeddings are quantized onto a frozen vocabulary of word embeddings, so
//! that nodes can be read, prompted and classified as token sequences.

// `!(x > 0.0)` rejects NaN along with nonpositive values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod autodiff;
pub mod codebook;
pub mod error;
pub mod eval;
pub mod gnn;
pub mod http;
pub mod infer;
pub mod linalg;
pub mod optim;
pub mod params;
pub mod pretrain;
pub mod prompting;
pub mod quantizer;
pub mod synthetic;
pub mod tagdata;
pub mod tensor_io;

pub use autodiff::{EdgeIndex, Mat};
pub use codebook::{ClassCodebook, Codebook};
pub use error::{Result, StagError};
pub use eval::{BenchReport, EvalConfig, EvalReport, InferencePath, Variant};
pub use gnn::{ModelConfig, StagModel};
pub use infer::{LinearProbe, PromptBundle};
pub use pretrain::{TrainConfig, TrainReport};
pub use prompting::{PromptNetParams, PromptTuneConfig};
pub use quantizer::{QuantizationResult, QuantizerConfig};
pub use tagdata::{FewShotTask, Subgraph, TextAttributedGraph};
