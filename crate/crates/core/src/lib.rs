//! Speaker generation at desk scale.
//!
//! A toy multi-speaker synthesizer is trained jointly with a per-speaker
//! embedding table and a metadata-conditioned mixture-of-Gaussians prior over
//! those embeddings. New voices are spawned by sampling the prior. A
//! variational alternative with KL-capacity control is provided alongside,
//! together with the nearest-neighbour cosine-distance metrics used to judge
//! whether generated speakers are distributed like the training speakers.
//!
//! Module map:
//!
//! - [`corpus`]: data model, synthetic oracle corpus, on-disk format, eval split
//! - [`prior`]: the conditional mixture prior, its log-density, sampling and loss
//! - [`synth`]: the synthesizer, its ℓ1 loss and the speaker-vector extractor
//! - [`train`]: Adam, both training objectives, the β controller, gradient checks
//! - [`evalmetrics`]: speaker-level vectors, distance metrics, reports, probe
//! - [`cli`]: experiment configuration and the `spawnlab` command implementations

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod corpus;
pub mod error;
pub mod evalmetrics;
pub mod linalg;
pub mod prior;
pub mod rng;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
