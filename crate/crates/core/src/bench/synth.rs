//! Synthetic keyed record streams.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bench::zipf::ZipfMandelbrot;
use crate::bounding::Record;
use crate::engine::window::SECONDS_PER_DAY;
use crate::error::Result;
use crate::noise::{indexed_seed, rng_from};

/// Parameters of a Zipf-Mandelbrot law (support is set by the caller).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZipfParams {
    pub q: f64,
    pub s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub users: u64,
    /// Records per user, over `[1, record_max]`.
    pub records: ZipfParams,
    pub record_max: u64,
    /// Key ranks, over `[1, key_space]`.
    pub keys: ZipfParams,
    pub key_space: u64,
    pub seed: u64,
    /// Records are spread uniformly over `[start, start + span)`.
    pub start: i64,
    pub span: i64,
}

impl SynthParams {
    /// The full-size configuration: 10⁷ users, 10⁶ keys.
    pub fn full_scale(seed: u64) -> Self {
        SynthParams {
            users: 10_000_000,
            records: ZipfParams { q: 26.0, s: 6.738 },
            record_max: 100_000,
            keys: ZipfParams { q: 1000.0, s: 1.4 },
            key_space: 1_000_000,
            seed,
            start: 0,
            span: SECONDS_PER_DAY,
        }
    }

    /// A laptop-sized configuration: 10⁴ users over 10³ keys with the same
    /// record-count law. The key offset `q` is scaled down with the key
    /// space so the head keys keep a comparable share of the records.
    pub fn desk_scale(seed: u64) -> Self {
        SynthParams {
            users: 10_000,
            keys: ZipfParams { q: 1.0, s: 1.4 },
            key_space: 1_000,
            ..Self::full_scale(seed)
        }
    }
}

/// Generates the stream sorted by timestamp. Each user draws from its own
/// seeded generator, so output is reproducible and independent of
/// iteration order.
pub fn generate_synthetic(p: &SynthParams) -> Result<Vec<Record>> {
    let record_dist = ZipfMandelbrot::new(p.records.q, p.records.s, p.record_max)?;
    let key_dist = ZipfMandelbrot::new(p.keys.q, p.keys.s, p.key_space)?;
    let mut tagged: Vec<(i64, u64, u64, Record)> = Vec::new();
    for user in 0..p.users {
        let mut rng = rng_from(indexed_seed(p.seed, "synthetic-user", user));
        let n = record_dist.sample(&mut rng);
        let uid = format!("u{user}");
        for j in 0..n {
            let key = key_dist.sample(&mut rng);
            let t = p.start + rng.random_range(0..p.span.max(1));
            tagged.push((t, user, j, Record::new(format!("k{key}"), 1.0, t, uid.clone())));
        }
    }
    tagged.sort_by(|a, b| (a.0, a.1, a.2).cmp(&(b.0, b.1, b.2)));
    Ok(tagged.into_iter().map(|t| t.3).collect())
}
