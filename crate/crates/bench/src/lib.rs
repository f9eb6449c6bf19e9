//! Shared fixtures for the benchmarks. Everything is seeded so runs are
//! comparable.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use postscore::model::TrainingSet;
use postscore::{EmbeddingTable, LinearModel, TokenizedPost};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `words` rows named `w0, w1, ...` with uniform(-1, 1) components.
pub fn random_table(rng: &mut ChaCha8Rng, words: usize, dim: usize) -> EmbeddingTable {
    EmbeddingTable::from_rows(
        dim,
        (0..words).map(|i| {
            let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            (format!("w{i}"), v)
        }),
    )
    .expect("valid table")
}

/// The table in the text vector format.
pub fn vec_text(table: &EmbeddingTable) -> Vec<u8> {
    let mut out = Vec::new();
    table.write_vec(&mut out).expect("in-memory write");
    out
}

pub fn random_model(rng: &mut ChaCha8Rng, d: usize) -> LinearModel {
    LinearModel {
        weights: (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
        bias: 500.0,
        lambda: 0.0,
        d,
        training_meta: Default::default(),
    }
}

/// Posts of `len` tokens drawn from `w0..w{vocab}`; ids past the table's
/// size are out of vocabulary.
pub fn random_posts(
    rng: &mut ChaCha8Rng,
    n: usize,
    len: usize,
    vocab: usize,
) -> Vec<TokenizedPost> {
    (0..n)
        .map(|i| TokenizedPost {
            user_id: format!("u{}", i / 20),
            post_id: i.to_string(),
            tokens: (0..len)
                .map(|_| format!("w{}", rng.random_range(0..vocab)))
                .collect(),
            n_capitalized: 0,
            n_emoji: 0,
            n_exclaim: 0,
            n_latin_chars: 0,
            n_alpha_chars: 0,
            char_len: 0,
        })
        .collect()
}

/// `users × per_user` rows of dimension `d` with a linear target.
pub fn training_set(rng: &mut ChaCha8Rng, users: usize, per_user: usize, d: usize) -> TrainingSet {
    let w: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut ts = TrainingSet::new(d);
    for u in 0..users {
        let id = format!("u{u}");
        for _ in 0..per_user {
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y = x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + rng.random_range(-0.5..0.5);
            ts.push(&id, &x, y).expect("finite row");
        }
    }
    ts
}
