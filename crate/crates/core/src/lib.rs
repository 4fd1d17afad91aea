//! Episodic prototype generation for few-shot classification in embedding space.
//!
//! The crate is `no_std` (it needs `alloc`) and contains every numeric piece of
//! the pipeline:
//!
//! * [`densemath`]: row-major `f64` matrices, kernels and a reverse-mode tape.
//! * [`embeddings`]: labelled embeddings, synthetic contaminated datasets and
//!   global class prototypes.
//! * [`sampler`]: reproducible N-way K-shot episodes.
//! * [`generator`]: the multi-head self-attention prototype generator.
//! * [`training`]: distance loss, SGD and the plateau learning-rate schedule.
//! * [`eval`]: nearest-prototype classification and episodic accuracy reports.
//!
//! File formats, configuration and the command-line tool live in the `protogen`
//! crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod densemath;
pub mod embeddings;
pub mod error;
pub mod eval;
pub mod generator;
pub mod rng;
pub mod sampler;
pub mod training;

pub use densemath::{Matrix, Tape, Var};
pub use embeddings::{Dataset, Embedding, GlobalPrototypeTable, SyntheticSpec};
pub use error::{Error, Result};
pub use eval::{EvalReport, PrototypeStrategy, StrategyKind};
pub use generator::{AttentionConfig, GeneratorParams, Mode};
pub use sampler::{Episode, EpisodeSampler, EpisodeSpec};
pub use training::{DistanceKind, TrainConfig, TrainLog};
