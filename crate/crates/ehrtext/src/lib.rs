//! Contrastive alignment of tabular clinical records with narrative notes,
//! plus transfer of the pretrained tabular encoder to downstream
//! classification. Everything runs single-machine with optional
//! data-parallel gradient computation; no GPU, no external ML runtime.

pub mod align;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod numerics;
pub mod pipeline;
pub mod rng;
pub mod tabular;
pub mod text;

pub use error::{Error, Result};
