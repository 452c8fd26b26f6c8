//! Meta-entity extraction from radiology reports, meta-entity similarity
//! scoring, batch triplet mining and triplet alignment of image and text
//! embeddings.

pub mod align;
pub mod checkpoint;
pub mod embed;
pub mod error;
pub mod evalx;
pub mod lemma;
pub mod miner;
pub mod ober;
pub mod ontology;
pub mod records;
pub mod scoring;
pub mod seed;
pub mod textfmt;

pub use error::{Error, Result};
