//! Video-to-command translation at desk scale.
//!
//! A feature sequence extracted from a short demonstration clip is mapped to
//! a grammar-free command ("hand verb object ...") by an RNN encoder-decoder,
//! while a temporal convolutional branch classifies the fine-grained action.
//! Both branches are trained jointly with a single loss. The crate also ships
//! the full captioning-metric evaluation (BLEU, ROUGE-L, CIDEr, an
//! exact-match METEOR variant, action success rate), a synthetic-data
//! generator, and binary formats for features and checkpoints.

pub mod data;
pub mod error;
pub mod gradsuite;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod recurrent;
pub mod tcn;
pub mod translator;

pub use error::{Error, Result};
