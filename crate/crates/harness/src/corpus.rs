//! Byte corpora: loading from disk or generating a deterministic synthetic
//! English-like text. Documents are separated by 0x00.

use std::path::Path;

use anyhow::Context;
use eggroll::prng::{derive_stream, StreamTag};
use rand::Rng;

const SUBJECTS: &[&str] = &[
    "the cat", "a dog", "the old man", "my sister", "the farmer", "a small bird", "the teacher", "our neighbour",
    "the children", "a stranger", "the captain", "the baker",
];
const VERBS: &[&str] = &[
    "saw", "found", "painted", "carried", "opened", "followed", "remembered", "sold", "watched", "built", "lost",
    "cleaned",
];
const OBJECTS: &[&str] = &[
    "the red door", "a wooden box", "the river", "an apple", "the long road", "a letter", "the garden",
    "a blue boat", "the market", "an old map", "the bridge", "a warm loaf",
];
const TAILS: &[&str] = &[
    "in the morning", "after the rain", "near the station", "before dinner", "with great care", "at night",
    "on the hill", "without a word",
];

pub fn generate_synthetic(seed: u64, target_len: usize) -> Vec<u8> {
    let mut rng = derive_stream(seed, 0, 0, 0, StreamTag::Data).with_layer(u32::MAX).rng();
    let mut out = Vec::with_capacity(target_len + 256);
    while out.len() < target_len {
        let sentences = rng.random_range(3..9);
        for k in 0..sentences {
            if k > 0 {
                out.push(b' ');
            }
            let mut s = format!(
                "{} {} {}",
                SUBJECTS[rng.random_range(0..SUBJECTS.len())],
                VERBS[rng.random_range(0..VERBS.len())],
                OBJECTS[rng.random_range(0..OBJECTS.len())]
            );
            if rng.random_bool(0.5) {
                s.push(' ');
                s.push_str(TAILS[rng.random_range(0..TAILS.len())]);
            }
            s.push('.');
            let mut bytes = s.into_bytes();
            bytes[0] = bytes[0].to_ascii_uppercase();
            out.extend_from_slice(&bytes);
        }
        out.push(b'\n');
        out.push(0);
    }
    out.truncate(target_len);
    out
}

pub fn load(path: &Path) -> anyhow::Result<Vec<u8>> {
    std::fs::read(path).with_context(|| format!("reading corpus {}", path.display()))
}

/// `(train, held_out)`: the last `held_out` bytes are never trained on.
pub fn split(corpus: &[u8], held_out: usize) -> anyhow::Result<(&[u8], &[u8])> {
    anyhow::ensure!(
        held_out < corpus.len(),
        "held-out slice of {held_out} bytes leaves nothing of a {}-byte corpus",
        corpus.len()
    );
    Ok(corpus.split_at(corpus.len() - held_out))
}
