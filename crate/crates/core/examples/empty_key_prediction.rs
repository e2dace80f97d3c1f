//! Predicted releases for keys that stop receiving data, and the
//! equivalence with scanning every key at every trigger.

use dpsqlp::bounding::Record;
use dpsqlp::engine::{run_pipeline, NoiseOverrides, PipelineConfig, WindowSpec};

fn main() -> dpsqlp::Result<()> {
    // Keys burst once and then go quiet.
    let records: Vec<Record> = (0..120)
        .flat_map(|k| (0..4).map(move |u| Record::new(format!("k{k}"), 1.0, (k * 7) % 1000, format!("u{k}-{u}"))))
        .collect::<Vec<_>>();
    let mut records = records;
    records.sort_by_key(|r| r.timestamp);
    let cfg = PipelineConfig {
        triggers: 50,
        c: 2,
        window: WindowSpec { length: 1000, allowed_lateness: 0 },
        overrides: NoiseOverrides { selection_sigma: Some(1.5), tau: Some(3.0), aggregation_sigma: None },
        beta: Some(1e-3),
        seed: 3,
        ..PipelineConfig::default()
    };
    let (with, rw) = run_pipeline(&records, &cfg)?;
    let (scan, rs) = run_pipeline(&records, &PipelineConfig { prediction: false, ..cfg })?;
    assert_eq!(serde_json::to_string(&with)?, serde_json::to_string(&scan)?);
    println!("releases: {} (identical in both modes)", with.len());
    println!("key reads with prediction: {}, with full scan: {}", rw.key_reads, rs.key_reads);
    Ok(())
}
