#![allow(dead_code)]

use lookmatch_core::embedding::{BlockKind, EmbeddingBlock, RowKey};
use lookmatch_core::table::{Completeness, ScoreTable};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn unit_vector(rng: &mut impl Rng, dim: usize) -> Vec<f32> {
    loop {
        let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let n = v.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>().sqrt();
        if n > 1e-3 {
            return v.iter().map(|x| (*x as f64 / n) as f32).collect();
        }
    }
}

pub fn qid(i: usize) -> String {
    format!("q{i:04}")
}

pub fn gid(j: usize) -> String {
    format!("g{j:04}")
}

pub fn image_block(rng: &mut impl Rng, kind: BlockKind, ids: &[String], dim: usize) -> EmbeddingBlock {
    let mut vectors = Vec::with_capacity(ids.len() * dim);
    for _ in ids {
        vectors.extend(unit_vector(rng, dim));
    }
    let keys = ids.iter().map(|id| RowKey::image(id.clone())).collect();
    EmbeddingBlock::new(kind, dim, vectors, keys).unwrap()
}

/// Part block with `counts[j]` parts for gallery `ids[j]`, ordinals from 0.
pub fn part_block(rng: &mut impl Rng, kind: BlockKind, ids: &[String], counts: &[usize], dim: usize) -> EmbeddingBlock {
    let mut vectors = Vec::new();
    let mut keys = Vec::new();
    for (id, &n) in ids.iter().zip(counts) {
        for o in 0..n {
            vectors.extend(unit_vector(rng, dim));
            keys.push(RowKey::part(id.clone(), o as u32));
        }
    }
    EmbeddingBlock::new(kind, dim, vectors, keys).unwrap()
}

pub fn naive_dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum()
}

pub fn dense_table(rng: &mut impl Rng, model: &str, nq: usize, ng: usize) -> ScoreTable {
    let mut entries = Vec::new();
    for i in 0..nq {
        for j in 0..ng {
            entries.push(((qid(i), gid(j)), rng.random_range(-1.0..1.0)));
        }
    }
    ScoreTable::from_entries(model, Completeness::Dense, entries).unwrap()
}

pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

/// Quadratic LCS table, the textbook recurrence.
pub fn lcs_dp(a: &[char], b: &[char]) -> usize {
    let mut dp = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            dp[i][j] = if a[i - 1] == b[j - 1] {
                dp[i - 1][j - 1] + 1
            } else {
                dp[i - 1][j].max(dp[i][j - 1])
            };
        }
    }
    dp[a.len()][b.len()]
}

pub fn canon(s: &str) -> Vec<char> {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
        .chars()
        .collect()
}

pub fn similarity_oracle(a: &str, b: &str) -> f64 {
    let (a, b) = (canon(a), canon(b));
    let total = a.len() + b.len();
    if total == 0 {
        return 100.0;
    }
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let d = total - 2 * lcs_dp(&a, &b);
    (100 * (total - d)) as f64 / total as f64
}

/// Random brand-like string over a small alphabet so near-duplicates are common.
pub fn brand_string(rng: &mut impl Rng) -> String {
    const ALPHABET: &[u8] = b"aabcdeEilLmnoOrsSt  ";
    let len = rng.random_range(0..14);
    (0..len)
        .map(|_| ALPHABET[rng.random_range(0..ALPHABET.len())] as char)
        .collect()
}

/// Average ranks, 1-based, by brute force: each value's rank is the mean of
/// the positions it would occupy.
pub fn brute_average_ranks(xs: &[f64]) -> Vec<f64> {
    xs.iter()
        .map(|&x| {
            let below = xs.iter().filter(|&&y| y < x).count();
            let equal = xs.iter().filter(|&&y| y == x).count();
            below as f64 + (equal as f64 + 1.0) / 2.0
        })
        .collect()
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}
