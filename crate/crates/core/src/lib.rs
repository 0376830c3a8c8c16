//! Masked multiscale reconstruction (MMR) pretraining for PPG-like signals.
//!
//! The pipeline runs, in order:
//!
//! 1. [`synth`] generates labelled synthetic pulse segments.
//! 2. [`preprocess`] bandpass-filters (zero phase), z-scores, resamples and
//!    quality-gates each segment.
//! 3. [`wavelet`] decomposes the segment with a periodized multilevel DWT.
//! 4. [`coeffmap`] turns the decomposition into an aligned `[bands x T]` map.
//! 5. [`tokenizer`] cuts the map into patches, builds positional embeddings
//!    and draws mask plans.
//! 6. [`model`] is a small ViT masked autoencoder built on the reverse-mode
//!    autodiff in [`tensor`].
//! 7. [`train`] pretrains it with AdamW and a warmup + cosine schedule.
//! 8. [`eval`] probes frozen embeddings with grouped cross-validation.
//!
//! [`io`] holds the on-disk formats (segment JSONL and the `MMRC` tensor
//! container) and [`pipeline`] glues the signal stages to the model input.

pub mod coeffmap;
pub mod error;
pub mod eval;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod preprocess;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod tokenizer;
pub mod train;
pub mod wavelet;

pub use error::{Error, Result};
