//! Exact Zipf-Mandelbrot sampling over `[1, N]` with `P(x) ∝ (x + q)^-s`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Supports up to this size get a full cumulative table.
const DENSE_LIMIT: u64 = 1 << 22;
/// Block width of the piecewise table used beyond `DENSE_LIMIT`.
const BLOCK: u64 = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Table {
    /// `cdf[x - 1]` is the unnormalized mass of `[1, x]`.
    Dense(Vec<f64>),
    /// `head` as in `Dense` for `[1, DENSE_LIMIT]`; `blocks[b]` is the
    /// unnormalized mass up to the end of block `b` after the head.
    Blocked { head: Vec<f64>, blocks: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZipfMandelbrot {
    q: f64,
    s: f64,
    n: u64,
    total: f64,
    table: Table,
}

fn cumulative(q: f64, s: f64, from: u64, to: u64, start: f64) -> Vec<f64> {
    let mut acc = start;
    (from..=to)
        .map(|x| {
            acc += (x as f64 + q).powf(-s);
            acc
        })
        .collect()
}

impl ZipfMandelbrot {
    pub fn new(q: f64, s: f64, n: u64) -> Result<Self> {
        if !(q >= 0.0) || !q.is_finite() {
            return Err(Error::invalid(format!("q must be finite and >= 0, got {q}")));
        }
        if !(s > 0.0) {
            return Err(Error::invalid(format!("s must be positive, got {s}")));
        }
        if n < 1 {
            return Err(Error::invalid("support must contain at least one value"));
        }
        let table = if n <= DENSE_LIMIT {
            Table::Dense(cumulative(q, s, 1, n, 0.0))
        } else {
            let head = cumulative(q, s, 1, DENSE_LIMIT, 0.0);
            let mut acc = *head.last().unwrap();
            let mut blocks = Vec::new();
            let mut lo = DENSE_LIMIT + 1;
            while lo <= n {
                let hi = (lo + BLOCK - 1).min(n);
                acc = *cumulative(q, s, lo, hi, acc).last().unwrap();
                blocks.push(acc);
                lo = hi + 1;
            }
            Table::Blocked { head, blocks }
        };
        let total = match &table {
            Table::Dense(c) => *c.last().unwrap(),
            Table::Blocked { blocks, .. } => *blocks.last().unwrap(),
        };
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::invalid("distribution mass underflows; lower s"));
        }
        Ok(ZipfMandelbrot { q, s, n, total, table })
    }

    pub fn support(&self) -> u64 {
        self.n
    }

    pub fn pmf(&self, x: u64) -> f64 {
        if x < 1 || x > self.n {
            return 0.0;
        }
        (x as f64 + self.q).powf(-self.s) / self.total
    }

    /// Exact mean by summation over the support.
    pub fn mean(&self) -> f64 {
        (1..=self.n).map(|x| x as f64 * self.pmf(x)).sum()
    }

    /// Probability mass of `[1, x]`.
    pub fn cdf(&self, x: u64) -> f64 {
        if x < 1 {
            return 0.0;
        }
        let x = x.min(self.n);
        let mass = match &self.table {
            Table::Dense(c) => c[(x - 1) as usize],
            Table::Blocked { head, blocks } => {
                if x <= DENSE_LIMIT {
                    head[(x - 1) as usize]
                } else {
                    let b = (x - DENSE_LIMIT - 1) / BLOCK;
                    let lo = DENSE_LIMIT + 1 + b * BLOCK;
                    let base = if b == 0 { *head.last().unwrap() } else { blocks[(b - 1) as usize] };
                    *cumulative(self.q, self.s, lo, x, base).last().unwrap()
                }
            }
        };
        mass / self.total
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let u = rng.random::<f64>() * self.total;
        let first_above = |c: &[f64]| c.partition_point(|&m| m <= u);
        match &self.table {
            Table::Dense(c) => (first_above(c) as u64 + 1).min(self.n),
            Table::Blocked { head, blocks } => {
                if u < *head.last().unwrap() {
                    return first_above(head) as u64 + 1;
                }
                let b = first_above(blocks).min(blocks.len() - 1) as u64;
                let lo = DENSE_LIMIT + 1 + b * BLOCK;
                let hi = (lo + BLOCK - 1).min(self.n);
                let mut acc = if b == 0 { *head.last().unwrap() } else { blocks[(b - 1) as usize] };
                for x in lo..=hi {
                    acc += (x as f64 + self.q).powf(-self.s);
                    if u < acc {
                        return x;
                    }
                }
                hi
            }
        }
    }
}
