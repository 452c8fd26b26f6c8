//! Toy transformer encoders for images and report tokens.
//!
//! Both modalities share one architecture: a learnable input map plus learned
//! position vectors, `depth` pre-norm transformer blocks, global average
//! pooling over positions, and a per-modality `c×c` projection head. The trunk
//! is seeded-random and frozen; only the heads are trained.

mod image;
mod layers;
mod trunk;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use image::{patchify, read_image, write_pgm, write_raw_grid, ImageSample};
pub use layers::{gelu, layer_norm, softmax_rows};
pub use trunk::{Block, Head, Heads, InputMap, Trunk};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Image,
    Text,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub patch_size: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub ln_epsilon: f64,
    pub max_seq_len: usize,
    pub vocab_size: usize,
    pub init_scale: f64,
    /// Apply layer norm inside blocks. Off only for testing the residual path.
    pub layer_norm: bool,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            patch_size: 8,
            embed_dim: 64,
            depth: 2,
            heads: 4,
            mlp_ratio: 4,
            ln_epsilon: 1e-5,
            max_seq_len: 64,
            vocab_size: 4096,
            init_scale: 0.02,
            layer_norm: true,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Validation(msg));
        if self.embed_dim == 0 || self.heads == 0 || self.embed_dim % self.heads != 0 {
            return fail(format!("embed_dim {} must be a positive multiple of heads {}", self.embed_dim, self.heads));
        }
        if self.depth == 0 {
            return fail("depth must be at least 1".into());
        }
        if !(self.ln_epsilon > 0.0) {
            return fail(format!("ln_epsilon must be positive, got {}", self.ln_epsilon));
        }
        if self.patch_size == 0 || self.max_seq_len == 0 || self.mlp_ratio == 0 {
            return fail("patch_size, max_seq_len and mlp_ratio must be positive".into());
        }
        if self.vocab_size < 2 {
            return fail(format!("vocab_size must be at least 2, got {}", self.vocab_size));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    pub fn hidden_dim(&self) -> usize {
        self.embed_dim * self.mlp_ratio
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size
    }
}

/// Report tokens mapped into the hashed vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    ids: Vec<usize>,
}

/// FNV-1a, stable across platforms and releases.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl TokenSequence {
    /// Hash lemmatized words into ids `1..vocab`; id 0 stands in for an empty
    /// report. Sequences are truncated to `max_len`.
    pub fn from_words<S: AsRef<str>>(words: &[S], vocab_size: usize, max_len: usize) -> TokenSequence {
        let mut ids: Vec<usize> = words
            .iter()
            .take(max_len)
            .map(|w| 1 + (fnv1a(w.as_ref().as_bytes()) % (vocab_size as u64 - 1)) as usize)
            .collect();
        if ids.is_empty() {
            ids.push(0);
        }
        TokenSequence { ids }
    }

    pub fn from_text(text: &str, cfg: &EncoderConfig) -> TokenSequence {
        TokenSequence::from_words(&crate::lemma::lemmatize(text), cfg.vocab_size, cfg.max_seq_len)
    }

    pub fn from_ids(ids: Vec<usize>) -> Result<TokenSequence> {
        if ids.is_empty() {
            return Err(Error::Dimension("token sequence must not be empty".into()));
        }
        Ok(TokenSequence { ids })
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub vector: Vec<f64>,
    pub modality: Modality,
}

/// Encoder input of either modality.
#[derive(Debug, Clone, Copy)]
pub enum Input<'a> {
    Image(&'a ImageSample),
    Text(&'a TokenSequence),
}

impl Input<'_> {
    pub fn modality(&self) -> Modality {
        match self {
            Input::Image(_) => Modality::Image,
            Input::Text(_) => Modality::Text,
        }
    }
}

/// Frozen trunks plus trainable heads for both modalities.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoders {
    pub image: Trunk,
    pub text: Trunk,
    pub heads: Heads,
}

impl Encoders {
    pub fn init(cfg: &EncoderConfig) -> Result<Encoders> {
        cfg.validate()?;
        Ok(Encoders {
            image: Trunk::init(cfg, Modality::Image),
            text: Trunk::init(cfg, Modality::Text),
            heads: Heads::identity(cfg.embed_dim),
        })
    }

    pub fn trunk(&self, modality: Modality) -> &Trunk {
        match modality {
            Modality::Image => &self.image,
            Modality::Text => &self.text,
        }
    }

    /// Pooled trunk output, before the projection head.
    pub fn features(&self, input: Input<'_>) -> Result<Vec<f64>> {
        self.trunk(input.modality()).features(input)
    }

    /// Full forward pass: trunk, pooling, projection head.
    pub fn encode(&self, input: Input<'_>) -> Result<Embedding> {
        let modality = input.modality();
        let g = self.features(input)?;
        Ok(Embedding {
            vector: self.heads.get(modality).apply(&g),
            modality,
        })
    }
}
