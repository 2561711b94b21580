//! Normalized indel similarity for brand names.
//!
//! `ratio(a, b) = 100 * (1 - indel(a, b) / (|a| + |b|))`, where `indel` counts
//! the insertions and deletions turning `a` into `b`. Since
//! `indel = |a| + |b| - 2 * lcs(a, b)`, the distance comes from a
//! bit-parallel longest-common-subsequence scan over 64-bit words.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Canonicalization {
    pub lowercase: bool,
    pub trim: bool,
    pub collapse_whitespace: bool,
}

impl Default for Canonicalization {
    fn default() -> Self {
        Self {
            lowercase: true,
            trim: true,
            collapse_whitespace: true,
        }
    }
}

impl Canonicalization {
    pub const NONE: Canonicalization = Canonicalization {
        lowercase: false,
        trim: false,
        collapse_whitespace: false,
    };

    pub fn apply(&self, s: &str) -> Vec<char> {
        let s = if self.trim { s.trim() } else { s };
        let mut out = Vec::with_capacity(s.len());
        let mut prev_space = false;
        for c in s.chars() {
            if self.collapse_whitespace && c.is_whitespace() {
                if !prev_space {
                    out.push(' ');
                }
                prev_space = true;
                continue;
            }
            prev_space = false;
            if self.lowercase {
                out.extend(c.to_lowercase());
            } else {
                out.push(c);
            }
        }
        out
    }
}

/// Length of the longest common subsequence.
pub fn lcs_len(a: &[char], b: &[char]) -> usize {
    // Pattern bits go over the shorter string.
    let (a, b) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    if a.is_empty() {
        return 0;
    }
    let words = a.len().div_ceil(64);
    let mut peq: HashMap<char, Vec<u64>> = HashMap::new();
    for (i, &c) in a.iter().enumerate() {
        peq.entry(c).or_insert_with(|| vec![0; words])[i / 64] |= 1 << (i % 64);
    }

    let mut s = vec![u64::MAX; words];
    for c in b {
        let Some(m) = peq.get(c) else { continue };
        let mut carry = false;
        for (sw, &mw) in s.iter_mut().zip(m) {
            let u = *sw & mw;
            let (sum, c1) = sw.overflowing_add(u);
            let (sum, c2) = sum.overflowing_add(carry as u64);
            carry = c1 || c2;
            *sw = sum | (*sw & !mw);
        }
    }

    let tail_bits = a.len() % 64;
    s.iter()
        .enumerate()
        .map(|(i, &w)| {
            let live = if i + 1 == words && tail_bits != 0 {
                (1u64 << tail_bits) - 1
            } else {
                u64::MAX
            };
            (!w & live).count_ones() as usize
        })
        .sum()
}

pub fn indel_distance(a: &[char], b: &[char]) -> usize {
    a.len() + b.len() - 2 * lcs_len(a, b)
}

/// Normalized indel similarity of two already-canonical strings, in [0, 100].
pub fn ratio(a: &[char], b: &[char]) -> f64 {
    let total = a.len() + b.len();
    if total == 0 {
        return 100.0;
    }
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let d = indel_distance(a, b);
    // An exact quotient keeps threshold comparisons consistent with integer arithmetic.
    (100 * (total - d)) as f64 / total as f64
}

/// Brand similarity under full canonicalization (trim, lowercase, collapse whitespace).
pub fn brand_similarity(a: &str, b: &str) -> f64 {
    brand_similarity_with(a, b, Canonicalization::default())
}

pub fn brand_similarity_with(a: &str, b: &str, canon: Canonicalization) -> f64 {
    ratio(&canon.apply(a), &canon.apply(b))
}
