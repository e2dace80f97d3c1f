//! Utility of a released histogram against the exact totals.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::perturb::Release;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UtilityReport {
    /// Number of released keys.
    pub retained_keys: f64,
    pub l_inf: f64,
    pub l1: f64,
    pub l2: f64,
}

impl UtilityReport {
    /// Componentwise mean.
    pub fn mean(reports: &[UtilityReport]) -> UtilityReport {
        let n = reports.len().max(1) as f64;
        let sum = |f: fn(&UtilityReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        UtilityReport {
            retained_keys: sum(|r| r.retained_keys),
            l_inf: sum(|r| r.l_inf),
            l1: sum(|r| r.l1),
            l2: sum(|r| r.l2),
        }
    }
}

/// Norms of the error vector over the union of released and true keys. A
/// key that is not released counts as an estimate of zero.
pub fn utility_metrics<K: Ord>(dp: &BTreeMap<K, f64>, truth: &BTreeMap<K, f64>) -> UtilityReport {
    let mut report = UtilityReport { retained_keys: dp.len() as f64, ..Default::default() };
    let mut sq = 0.0;
    let mut add = |e: f64| {
        let e = e.abs();
        report.l_inf = report.l_inf.max(e);
        report.l1 += e;
        sq += e * e;
    };
    for (k, v) in dp {
        add(v - truth.get(k).copied().unwrap_or(0.0));
    }
    for (k, m) in truth {
        if !dp.contains_key(k) {
            add(*m);
        }
    }
    report.l2 = sq.sqrt();
    report
}

/// The latest released value of each `(window, key)` for one column.
pub fn latest_histogram(releases: &[Release], column: &str) -> BTreeMap<(Option<i64>, String), f64> {
    let mut out = BTreeMap::new();
    let mut at: BTreeMap<(Option<i64>, String), u64> = BTreeMap::new();
    for r in releases.iter().filter(|r| r.column == column) {
        let id = (r.window_start, r.key.clone());
        let newer = at.get(&id).is_none_or(|t| r.trigger >= *t);
        if newer {
            at.insert(id.clone(), r.trigger);
            out.insert(id, r.value);
        }
    }
    out
}
