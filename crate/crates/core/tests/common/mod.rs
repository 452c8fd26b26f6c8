//! Test support shared by the integration suites: an independent score
//! oracle over bitmask-encoded entities and random generators.

#![allow(dead_code)]

use metatrip_core::ober::{DiseaseEntry, MetaEntities};
use rand::Rng;

pub const DISEASES: [&str; 6] = ["atelectasis", "cardiomegaly", "edema", "fracture", "pneumonia", "pneumothorax"];
pub const ADJECTIVES: [&str; 6] = ["acute", "large", "mild", "moderate", "severe", "small"];
pub const DIRECTIONS: [&str; 4] = ["left", "lower", "right", "upper"];

/// Entity set as one optional `(adj mask, dir mask)` per disease slot.
pub type Masks = Vec<Option<(u32, u32)>>;

pub fn to_entities(m: &Masks) -> MetaEntities {
    let pick = |mask: u32, pool: &[&'static str]| -> Vec<&'static str> {
        (0..pool.len()).filter(|b| mask >> b & 1 == 1).map(|b| pool[b]).collect()
    };
    let entries: Vec<DiseaseEntry> = m
        .iter()
        .enumerate()
        .filter_map(|(d, slot)| {
            slot.map(|(a, r)| DiseaseEntry::new(DISEASES[d], &pick(a, &ADJECTIVES), &pick(r, &DIRECTIONS)))
        })
        .collect();
    MetaEntities::from(entries)
}

fn ratio(a: u32, b: u32) -> f64 {
    let union = (a | b).count_ones();
    if union == 0 {
        0.0
    } else {
        (a & b).count_ones() as f64 / union as f64
    }
}

fn indicator(a: u32, b: u32, union: bool) -> f64 {
    let set = if union { a | b } else { a & b };
    if set != 0 {
        1.0
    } else {
        0.0
    }
}

/// Direct transcription of the weighted score from set masks.
pub fn oracle_score(x: &Masks, y: &Masks, g: (f64, f64, f64), union: bool) -> f64 {
    let n = x.len().max(y.len());
    let get = |m: &Masks, d: usize| m.get(d).copied().flatten();
    let mut shared = 0usize;
    let mut either = 0usize;
    let mut sum = 0.0;
    for d in 0..n {
        match (get(x, d), get(y, d)) {
            (Some((a1, r1)), Some((a2, r2))) => {
                shared += 1;
                either += 1;
                let num = g.0 + g.1 * ratio(a1, a2) + g.2 * ratio(r1, r2);
                let den = g.0 + g.1 * indicator(a1, a2, union) + g.2 * indicator(r1, r2, union);
                sum += num / den;
            }
            (None, None) => {}
            _ => either += 1,
        }
    }
    if shared == 0 {
        0.0
    } else {
        sum / either as f64
    }
}

/// Random masks over `nd` disease slots with adjective and direction pools of the given sizes.
pub fn random_masks(r: &mut impl Rng, nd: usize, na: usize, nr: usize) -> Masks {
    (0..nd)
        .map(|_| {
            r.random_bool(0.5)
                .then(|| (r.random_range(0..1u32 << na), r.random_range(0..1u32 << nr)))
        })
        .collect()
}
