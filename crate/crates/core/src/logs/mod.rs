//! Log messages to fixed-size vectors: template mining, token normalization,
//! hashed sentence embedding and per-channel sum pooling.

pub mod drain;
pub mod embed;
pub mod normalize;

pub use drain::{DrainConfig, LogTemplate, TemplateId, TemplateKey, TemplateStore, WILDCARD};
pub use embed::{embed_log_sequence, embed_sentence, LogChannelVector, SentenceVector, MIN_LOG_DIM};
pub use normalize::normalize_tokens;
