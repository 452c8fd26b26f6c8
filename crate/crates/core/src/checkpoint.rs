//! Binary checkpoints of encoder weights and optimizer state.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic    8 bytes  "MTRIPCK\0"
//! version  u32      1
//! hlen     u32      length of the header in bytes
//! header   hlen     UTF-8 JSON: {"encoder": EncoderConfig, "adam_step": u64}
//! body     f64 × n  image trunk, text trunk, image head, text head,
//!                   Adam m (image, text), Adam v (image, text)
//! ```
//!
//! Trunk arrays follow [`Trunk::params`](crate::embed::Trunk::params). The
//! array shapes are implied by the encoder config, so `n` is checked on load.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::align::AdamState;
use crate::embed::{EncoderConfig, Encoders};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"MTRIPCK\0";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    encoder: EncoderConfig,
    adam_step: u64,
}

fn arrays_mut<'a>(enc: &'a mut Encoders, opt: &'a mut AdamState) -> Vec<&'a mut [f64]> {
    let mut out = enc.image.params_mut();
    out.extend(enc.text.params_mut());
    for a in [
        &mut enc.heads.image.w,
        &mut enc.heads.text.w,
        &mut opt.m.image,
        &mut opt.m.text,
        &mut opt.v.image,
        &mut opt.v.text,
    ] {
        out.push(a.as_slice_mut().expect("standard layout"));
    }
    out
}

pub fn to_bytes(enc: &Encoders, opt: &AdamState) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&Header {
        encoder: enc.image.cfg.clone(),
        adam_step: opt.step,
    })?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    let mut arrays = enc.image.params();
    arrays.extend(enc.text.params());
    for a in [
        &enc.heads.image.w,
        &enc.heads.text.w,
        &opt.m.image,
        &opt.m.text,
        &opt.v.image,
        &opt.v.text,
    ] {
        arrays.push(a.as_slice().expect("standard layout"));
    }
    for a in arrays {
        for v in a {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<(Encoders, AdamState)> {
    let bad = |msg: String| Error::parse(origin, 0, msg);
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let hlen = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let body_start = 16 + hlen;
    if bytes.len() < body_start {
        return Err(bad("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[16..body_start])?;
    let mut enc = Encoders::init(&header.encoder)?;
    let mut opt = AdamState::new(header.encoder.embed_dim);
    opt.step = header.adam_step;
    let body = &bytes[body_start..];
    let mut values = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut expected = 0;
    for a in arrays_mut(&mut enc, &mut opt) {
        expected += a.len();
        for slot in a.iter_mut() {
            *slot = values
                .next()
                .ok_or_else(|| bad("checkpoint body shorter than the config implies".into()))?;
        }
    }
    if body.len() != expected * 8 {
        return Err(bad(format!(
            "checkpoint body holds {} bytes, config implies {}",
            body.len(),
            expected * 8
        )));
    }
    Ok((enc, opt))
}

pub fn save(path: &Path, enc: &Encoders, opt: &AdamState) -> Result<()> {
    fs::write(path, to_bytes(enc, opt)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(Encoders, AdamState)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> EncoderConfig {
        EncoderConfig {
            patch_size: 4,
            embed_dim: 8,
            heads: 2,
            max_seq_len: 8,
            vocab_size: 32,
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let mut enc = Encoders::init(&small()).unwrap();
        enc.heads.image.w[[0, 1]] = 0.123_456_789;
        enc.text.blocks[1].b2[3] = -7.5;
        let mut opt = AdamState::new(8);
        opt.step = 42;
        opt.v.text[[2, 2]] = 1e-9;
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ck.bin");
        save(&p, &enc, &opt).unwrap();
        let (e2, o2) = load(&p).unwrap();
        assert_eq!(e2, enc);
        assert_eq!(o2, opt);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let enc = Encoders::init(&small()).unwrap();
        let bytes = to_bytes(&enc, &AdamState::new(8)).unwrap();
        assert!(from_bytes(&bytes[..bytes.len() - 8], "x").is_err());
        let mut extra = bytes.clone();
        extra.extend_from_slice(&[0; 8]);
        assert!(from_bytes(&extra, "x").is_err());
        assert!(from_bytes(b"garbage garbage garbage", "x").is_err());
    }
}
