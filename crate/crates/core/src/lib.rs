//! Anomaly scoring for EPICS event-logger streams.
//!
//! Events are tokenized, embedded as sums of skip-gram token vectors, and fed
//! through a bias-free GRU trained with a deep one-class objective; each
//! event's score is the distance of its latent vector from a fixed center.

pub mod channel_grammar;
pub mod event_log;
pub mod math;
pub mod pipeline;
pub mod sequence_detector;
pub mod synth_oracle;
pub mod token_embeddings;
