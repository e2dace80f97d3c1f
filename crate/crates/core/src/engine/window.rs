//! Fixed event-time windows and trigger assignment.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bounding::Record;
use crate::error::{Error, Result};

pub const SECONDS_PER_DAY: i64 = 86_400;

/// Fixed windows of `length` seconds aligned to the epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub length: i64,
    /// How far behind the watermark a window may still accept records.
    pub allowed_lateness: i64,
}

impl WindowSpec {
    pub fn days(days: u32) -> Self {
        WindowSpec {
            length: days as i64 * SECONDS_PER_DAY,
            allowed_lateness: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.length <= 0 {
            return Err(Error::invalid("window length must be positive"));
        }
        if self.allowed_lateness < 0 {
            return Err(Error::invalid("allowed lateness must be >= 0"));
        }
        Ok(())
    }

    /// Start of the window containing `t` (windows are half-open).
    pub fn window_start(&self, t: i64) -> i64 {
        t.div_euclid(self.length) * self.length
    }
}

/// Records of one trigger of one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicroBatch {
    pub window_start: i64,
    pub trigger_index: u64,
    pub records: Vec<Record>,
}

/// Per-window record streams, in arrival order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Windowed {
    pub windows: BTreeMap<i64, Vec<Record>>,
    pub dropped_late: u64,
}

fn is_late(spec: &WindowSpec, window_start: i64, watermark: Option<i64>) -> bool {
    match watermark {
        Some(wm) => window_start + spec.length + spec.allowed_lateness <= wm,
        None => false,
    }
}

/// Routes each record to its window. The watermark is the largest event
/// time seen so far; a record whose window closed (plus lateness) at or
/// before the watermark is dropped and counted.
pub fn assign_windows(records: &[Record], spec: &WindowSpec) -> Windowed {
    let mut out = Windowed::default();
    let mut watermark: Option<i64> = None;
    for r in records {
        let ws = spec.window_start(r.timestamp);
        if is_late(spec, ws, watermark) {
            out.dropped_late += 1;
            continue;
        }
        out.windows.entry(ws).or_default().push(r.clone());
        watermark = Some(watermark.map_or(r.timestamp, |w| w.max(r.timestamp)));
    }
    out
}

/// Splits the input into micro-batches. Trigger `i` of a window fires when
/// the watermark passes `(i / T)` of the window, so a record arriving while
/// the watermark sits at `wm` lands in trigger
/// `min(T, floor((wm - start)·T / length) + 1)`. Every window gets all `T`
/// batches, empty ones included.
pub fn split_into_batches(records: &[Record], spec: &WindowSpec, triggers: u64) -> (Vec<MicroBatch>, u64) {
    let mut per: BTreeMap<i64, Vec<Vec<Record>>> = BTreeMap::new();
    let mut dropped = 0u64;
    let mut watermark: Option<i64> = None;
    for r in records {
        let ws = spec.window_start(r.timestamp);
        if is_late(spec, ws, watermark) {
            dropped += 1;
            continue;
        }
        let wm = watermark.map_or(r.timestamp, |w| w.max(r.timestamp));
        watermark = Some(wm);
        let offset = (wm - ws) as i128;
        let idx = (offset * triggers as i128 / spec.length as i128) as u64 + 1;
        let trigger = idx.min(triggers);
        per.entry(ws)
            .or_insert_with(|| vec![Vec::new(); triggers as usize])[(trigger - 1) as usize]
            .push(r.clone());
    }
    let mut batches = Vec::new();
    for (ws, slots) in per {
        for (i, records) in slots.into_iter().enumerate() {
            batches.push(MicroBatch {
                window_start: ws,
                trigger_index: i as u64 + 1,
                records,
            });
        }
    }
    (batches, dropped)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(t: i64) -> Record {
        Record::new("k", 1.0, t, "u")
    }

    #[test]
    fn single_day_window() {
        let spec = WindowSpec::days(1);
        let w = assign_windows(&[at(10), at(5000), at(86_399)], &spec);
        assert_eq!(w.windows.len(), 1);
        assert_eq!(w.windows[&0].len(), 3);
    }

    #[test]
    fn end_boundary_goes_to_next_window() {
        let spec = WindowSpec::days(1);
        let w = assign_windows(&[at(86_400)], &spec);
        assert_eq!(w.windows.keys().copied().collect::<Vec<_>>(), vec![86_400]);
    }

    #[test]
    fn empty_input() {
        let w = assign_windows(&[], &WindowSpec::days(1));
        assert!(w.windows.is_empty());
        assert_eq!(split_into_batches(&[], &WindowSpec::days(1), 10).0.len(), 0);
    }

    #[test]
    fn late_records_dropped() {
        let spec = WindowSpec::days(1);
        let w = assign_windows(&[at(100), at(50_000), at(200)], &spec);
        assert_eq!(w.dropped_late, 0);
        // The first window closes once the watermark reaches its end.
        let w = assign_windows(&[at(100), at(86_400), at(200)], &spec);
        assert_eq!(w.dropped_late, 1);
        let lenient = WindowSpec { allowed_lateness: 3600, ..spec };
        assert_eq!(assign_windows(&[at(100), at(86_400), at(200)], &lenient).dropped_late, 0);
    }

    #[test]
    fn triggers_follow_watermark() {
        let spec = WindowSpec { length: 100, allowed_lateness: 0 };
        let (b, dropped) = split_into_batches(&[at(0), at(9), at(10), at(55), at(30), at(99)], &spec, 10);
        assert_eq!(dropped, 0);
        assert_eq!(b.len(), 10);
        let sizes: Vec<usize> = b.iter().map(|m| m.records.len()).collect();
        // at(30) arrives after the watermark reached 55.
        assert_eq!(sizes, vec![2, 1, 0, 0, 0, 2, 0, 0, 0, 1]);
        assert!(b.windows(2).all(|w| w[0].trigger_index < w[1].trigger_index));
    }
}
