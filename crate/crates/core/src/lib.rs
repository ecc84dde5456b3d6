//! Masked-embedding autoencoding over sequences of short-video segment
//! embeddings.
//!
//! A long video is represented as the ordered list of embeddings of its
//! consecutive short segments. A transformer encoder sees only the visible
//! subset, a narrower decoder reconstructs every slot from the encoded
//! latents plus a shared mask token, and the loss is the mean squared error
//! on the masked slots. The frozen encoder then feeds linear, attentive and
//! regression probes, and reconstructions can be interpreted by nearest
//! caption retrieval.

pub mod cli;
pub mod corpus;
pub mod error;
pub mod masking;
pub mod model;
pub mod numerics;
pub mod par;
pub mod probing;
pub mod retrieval;
pub mod training;

pub use error::{Error, Result};
