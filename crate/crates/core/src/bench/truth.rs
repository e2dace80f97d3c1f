//! Exact, unbounded GROUP-BY totals per trigger.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::bounding::Record;
use crate::engine::window::{split_into_batches, WindowSpec};

pub type Totals = BTreeMap<String, f64>;

/// Cumulative per-key totals of one window after one trigger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthSnapshot {
    pub window_start: i64,
    pub trigger: u64,
    pub totals: Totals,
}

/// Hash aggregation: running per-key sums updated batch by batch. Records
/// are assigned to triggers exactly as the engine assigns them; late
/// records are excluded.
pub fn ground_truth(records: &[Record], window: &WindowSpec, triggers: u64) -> Vec<TruthSnapshot> {
    let (batches, _) = split_into_batches(records, window, triggers);
    let mut running: HashMap<i64, HashMap<String, f64>> = HashMap::new();
    batches
        .iter()
        .map(|b| {
            let acc = running.entry(b.window_start).or_default();
            for r in &b.records {
                *acc.entry(r.key.clone()).or_insert(0.0) += r.value;
            }
            TruthSnapshot {
                window_start: b.window_start,
                trigger: b.trigger_index,
                totals: acc.iter().map(|(k, v)| (k.clone(), *v)).collect(),
            }
        })
        .collect()
}

/// Sort-merge aggregation: flattens to `(window, trigger, key, value)`,
/// sorts, and sums each key over the prefix of triggers.
pub fn ground_truth_sort_merge(records: &[Record], window: &WindowSpec, triggers: u64) -> Vec<TruthSnapshot> {
    let (batches, _) = split_into_batches(records, window, triggers);
    let mut rows: Vec<(i64, u64, &str, f64)> = batches
        .iter()
        .flat_map(|b| b.records.iter().map(move |r| (b.window_start, b.trigger_index, r.key.as_str(), r.value)))
        .collect();
    rows.sort_by(|a, b| (a.0, a.1, a.2).cmp(&(b.0, b.1, b.2)));
    let mut out = Vec::with_capacity(batches.len());
    let mut idx = 0;
    for b in &batches {
        let mut totals = match out.last() {
            Some(TruthSnapshot { window_start, totals, .. }) if *window_start == b.window_start => {
                Totals::clone(totals)
            }
            _ => Totals::new(),
        };
        while idx < rows.len() && (rows[idx].0, rows[idx].1) == (b.window_start, b.trigger_index) {
            let key = rows[idx].2;
            let mut sum = 0.0;
            while idx < rows.len() && (rows[idx].0, rows[idx].1, rows[idx].2) == (b.window_start, b.trigger_index, key) {
                sum += rows[idx].3;
                idx += 1;
            }
            *totals.entry(key.to_string()).or_insert(0.0) += sum;
        }
        out.push(TruthSnapshot { window_start: b.window_start, trigger: b.trigger_index, totals });
    }
    out
}

/// Totals at the last trigger of every window.
pub fn final_truth(records: &[Record], window: &WindowSpec, triggers: u64) -> BTreeMap<i64, Totals> {
    ground_truth(records, window, triggers)
        .into_iter()
        .map(|s| (s.window_start, s.totals))
        .collect()
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn spec() -> WindowSpec {
        WindowSpec { length: 100, allowed_lateness: 0 }
    }

    #[test]
    fn empty_stream() {
        assert!(final_truth(&[], &spec(), 5).is_empty());
    }

    #[test]
    fn three_records_sum() {
        let recs: Vec<_> = (1..=3).map(|v| Record::new("k", v as f64, v, "u")).collect();
        let t = final_truth(&recs, &spec(), 4);
        assert_eq!(t[&0]["k"], 6.0);
    }

    #[test]
    fn every_trigger_is_present_and_cumulative() {
        let recs: Vec<_> = (0..50).map(|i| Record::new(format!("k{}", i % 4), 1.0, i * 2, "u")).collect();
        let snaps = ground_truth(&recs, &spec(), 10);
        assert_eq!(snaps.len(), 10);
        for w in snaps.windows(2) {
            for (k, v) in &w[0].totals {
                assert!(w[1].totals[k] >= *v);
            }
        }
        assert_eq!(snaps.last().unwrap().totals.values().sum::<f64>(), 50.0);
    }

    proptest! {
        #[test]
        fn hash_and_sort_merge_agree(
            rows in prop::collection::vec((0u8..6, -3i32..10, 0i64..350), 0..200),
            triggers in 1u64..12,
        ) {
            let recs: Vec<_> = rows
                .iter()
                .enumerate()
                .map(|(i, (k, v, t))| Record::new(format!("k{k}"), *v as f64 * 0.5, *t, format!("u{}", i % 7)))
                .collect();
            prop_assert_eq!(ground_truth(&recs, &spec(), triggers), ground_truth_sort_merge(&recs, &spec(), triggers));
        }
    }
}
