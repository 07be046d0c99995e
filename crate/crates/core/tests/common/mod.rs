#![allow(dead_code)]

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skge::data::EncodedSplit;
use skge::{Dataset, RawTriple, Triple};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n` distinct random triples over the given vocabulary sizes.
pub fn random_triples(rng: &mut impl Rng, ne: usize, nr: usize, n: usize) -> Vec<Triple> {
    let n = n.min(ne * ne * nr);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let t = Triple::new(
            rng.random_range(0..ne),
            rng.random_range(0..nr),
            rng.random_range(0..ne),
        );
        if seen.insert(t) {
            out.push(t);
        }
    }
    out
}

pub fn encoded(triples: Vec<Triple>) -> EncodedSplit {
    EncodedSplit::new(triples).unwrap()
}

/// Labelled triples `e{h}\tr{r}\te{t}`.
pub fn labelled(triples: &[Triple]) -> Vec<RawTriple> {
    triples
        .iter()
        .map(|t| {
            RawTriple::new(
                format!("e{}", t.head),
                format!("r{}", t.relation),
                format!("e{}", t.tail),
            )
        })
        .collect()
}

/// 20 random distinct triples over 12 entities and 3 relations; valid and
/// test reuse train.
pub fn memorization_dataset() -> Dataset {
    let triples = random_triples(&mut rng(20), 12, 3, 20);
    let raw = labelled(&triples);
    Dataset::from_raw(&raw, &raw, &raw).unwrap()
}

pub fn write_split(dir: &Path, name: &str, triples: &[RawTriple]) {
    let text: String = triples
        .iter()
        .map(|t| format!("{}\t{}\t{}\n", t.head, t.relation, t.tail))
        .collect();
    fs::write(dir.join(name), text).unwrap();
}

/// Writes a small random KG with disjoint train/valid/test to `dir`.
pub fn write_toy_dataset(dir: &Path, seed: u64, ne: usize, nr: usize, n: usize) {
    let mut r = rng(seed);
    let mut all = random_triples(&mut r, ne, nr, n);
    // make sure every entity and relation occurs in train
    let mut train: Vec<Triple> = (0..ne).map(|e| Triple::new(e, e % nr, (e + 1) % ne)).collect();
    all.retain(|t| !train.contains(t));
    let n_hold = all.len() / 10;
    let test: Vec<Triple> = all.drain(..n_hold).collect();
    let valid: Vec<Triple> = all.drain(..n_hold).collect();
    train.extend(all);
    fs::create_dir_all(dir).unwrap();
    write_split(dir, "train.txt", &labelled(&train));
    write_split(dir, "valid.txt", &labelled(&valid));
    write_split(dir, "test.txt", &labelled(&test));
}
