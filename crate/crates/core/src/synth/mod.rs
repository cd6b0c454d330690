//! Synthetic ground truth: trainable bigram language models, fingerprinted
//! toy generators with temperature and nucleus sampling, and Gaussian feature
//! sources for detection, attribution and two-sample benchmarks.
//!
//! Every sampler is a pure function of its spec and seed.

mod benchmarks;
mod bigram;
mod embedding;
mod sampling;

pub use benchmarks::*;
pub use bigram::{fit_bigram, BigramLm};
pub use embedding::{
    random_unit, sample_embedding, sample_vector, simplex_means, AuthorSource, EmbeddingSourceSpec,
    PromptMixture, QuantizedSourceLm, Quantizer, SYNTHETIC_EXTRACTOR,
};
pub use sampling::{
    nucleus_filter, sample_sequence, tempered_softmax, ToyPlg, ToyPlgSpec, DEFAULT_NUCLEUS_P,
    DEFAULT_TEMPERATURE,
};
