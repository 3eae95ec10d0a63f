//! Tiny transformer language models: a causal decoder and a bidirectional
//! encoder with an added generation head, plus vocabulary construction,
//! training objectives, decoding, and checkpoints.

pub mod checkpoint;
pub mod decode;
pub mod forward;
pub mod state;
pub mod train;
pub mod vocab;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use decode::{argmax_token, generate_usage, generate_with, next_token_topk};
pub use forward::{next_logits, BatchInput};
pub use state::{ModelConfig, ModelKind, ModelState};
pub use train::{pretrain, PretrainOutcome, TrainSchedule};
pub use vocab::{build_vocab, Vocab, BOS, EOS, MASK, PAD, UNK};
