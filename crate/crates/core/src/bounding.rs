//! Global per-user contribution bounding and value clamping.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One stream element. `timestamp` is event time in epoch seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub key: String,
    pub value: f64,
    pub timestamp: i64,
    pub user_id: String,
}

impl Record {
    pub fn new(key: impl Into<String>, value: f64, timestamp: i64, user_id: impl Into<String>) -> Self {
        Record {
            key: key.into(),
            value,
            timestamp,
            user_id: user_id.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityConfig {
    /// Maximum records per user in the stream.
    pub c: u32,
    /// Per-record clamp bound.
    pub l_m: f64,
}

impl SensitivityConfig {
    pub fn new(c: u32, l_m: f64) -> Result<Self> {
        if c < 1 {
            return Err(Error::invalid("contribution bound C must be >= 1"));
        }
        if !(l_m > 0.0) || !l_m.is_finite() {
            return Err(Error::invalid(format!("clamp bound must be positive, got {l_m}")));
        }
        Ok(SensitivityConfig { c, l_m })
    }

    /// Per-user L1 sensitivity of the whole stream.
    pub fn l1_sensitivity(&self) -> f64 {
        self.c as f64 * self.l_m
    }
}

/// Records admitted so far, per user.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UserBudgetTable {
    used: BTreeMap<String, u32>,
}

impl UserBudgetTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records_used(&self, user: &str) -> u32 {
        self.used.get(user).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.used.len()
    }

    pub fn is_empty(&self) -> bool {
        self.used.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u32)> {
        self.used.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn clear(&mut self) {
        self.used.clear();
    }

    pub(crate) fn set(&mut self, user: String, used: u32) {
        self.used.insert(user, used);
    }
}

pub fn clamp_value(v: f64, l_m: f64) -> f64 {
    v.clamp(-l_m, l_m)
}

/// Keeps each user's records while they have budget left, in processing
/// order, clamping kept values. Excess records are dropped.
pub fn bound_contributions(
    batch: &[Record],
    table: &mut UserBudgetTable,
    cfg: &SensitivityConfig,
) -> Vec<Record> {
    let mut kept = Vec::with_capacity(batch.len());
    for r in batch {
        let used = table.used.entry(r.user_id.clone()).or_insert(0);
        if *used < cfg.c {
            *used += 1;
            let mut r = r.clone();
            r.value = clamp_value(r.value, cfg.l_m);
            kept.push(r);
        }
    }
    kept
}

/// The `p`-th percentile of per-user record counts. This reads raw data and
/// is not differentially private; use it only on public or sample data.
pub fn contribution_percentile(records: &[Record], p: f64) -> u32 {
    let mut counts: BTreeMap<&str, u32> = BTreeMap::new();
    for r in records {
        *counts.entry(r.user_id.as_str()).or_insert(0) += 1;
    }
    let mut v: Vec<u32> = counts.into_values().collect();
    if v.is_empty() {
        return 0;
    }
    v.sort_unstable();
    let rank = ((p / 100.0) * v.len() as f64).ceil() as usize;
    v[rank.clamp(1, v.len()) - 1]
}
