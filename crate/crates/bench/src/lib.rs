//! Seeded inputs shared by the benches.

use bookend_core::Story;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

const WORDS: [&str; 24] = [
    "the", "dog", "ran", "home", "a", "cat", "sat", "on", "mat", "she", "found", "old", "key", "he", "lost", "his",
    "way", "rain", "fell", "all", "day", "we", "went", "out",
];

pub fn sentence(rng: &mut impl Rng, len: usize) -> String {
    let words: Vec<&str> = (0..len).map(|_| *WORDS.choose(rng).unwrap()).collect();
    let mut s = words.join(" ");
    s[..1].make_ascii_uppercase();
    s.push('.');
    s
}

/// `count` stories of `len` sentences each.
pub fn stories(seed: u64, count: usize, len: usize) -> Vec<Story> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let texts: Vec<String> = (0..len)
                .map(|_| {
                    let n = rng.random_range(4..12);
                    sentence(&mut rng, n)
                })
                .collect();
            Story::from_texts(texts).unwrap()
        })
        .collect()
}
