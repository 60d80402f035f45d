//! Deterministic featurization of (context, step) pairs.
//!
//! A hashed bag of tokens (256 buckets, L2-normalized) plus four bounded
//! numeric signals. Cheap, pure, and expressive enough that linearly
//! separable training sets exist for the toy tasks.

use crate::det;

pub const HASH_DIM: usize = 256;
pub const NUMERIC_DIM: usize = 4;
pub const FEATURE_DIM: usize = HASH_DIM + NUMERIC_DIM;

/// Maps a context and candidate step to a fixed `FEATURE_DIM`-length vector.
pub fn featurize(context: &[String], step: &str) -> Vec<f64> {
    let mut features = vec![0.0f64; FEATURE_DIM];
    for token in context
        .iter()
        .flat_map(|s| s.split_whitespace())
        .chain(step.split_whitespace())
    {
        let bucket = (det::fnv1a(token.as_bytes()) % HASH_DIM as u64) as usize;
        features[bucket] += 1.0;
    }
    let norm = features[..HASH_DIM]
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if norm > 0.0 {
        for x in &mut features[..HASH_DIM] {
            *x /= norm;
        }
    }

    let char_len = step.chars().count() as f64;
    let digits = step.chars().filter(|c| c.is_ascii_digit()).count() as f64;
    let tokens = step.split_whitespace().count() as f64;
    features[HASH_DIM] = (char_len / 80.0).min(1.0);
    features[HASH_DIM + 1] = (context.len() as f64 / 16.0).min(1.0);
    features[HASH_DIM + 2] = if char_len > 0.0 { digits / char_len } else { 0.0 };
    features[HASH_DIM + 3] = (tokens / 20.0).min(1.0);
    features
}
