//! Reading a CSV with custom column names, skipping malformed rows.

use dpsqlp::bench::ingest::{ingest_reader, ColumnMapping, ErrorPolicy, Format};
use dpsqlp::engine::{run_pipeline, PipelineConfig, WindowSpec};

const INPUT: &str = "\
subreddit,author,created_utc
cats,alice,1500000000
dogs,bob,1500000100
cats,carol,not-a-time
cats,dave,1500000200
";

fn main() -> dpsqlp::Result<()> {
    let mapping = ColumnMapping {
        key: "subreddit".into(),
        value: None,
        timestamp: "created_utc".into(),
        user_id: "author".into(),
    };
    let out = ingest_reader(INPUT.as_bytes(), Format::Csv, &mapping, ErrorPolicy::Skip)?;
    for (line, msg) in &out.skipped {
        println!("skipped line {line}: {msg}");
    }
    println!("{} records", out.records.len());
    let cfg = PipelineConfig { triggers: 4, window: WindowSpec::days(1), ..PipelineConfig::default() };
    let (releases, report) = run_pipeline(&out.records, &cfg)?;
    println!("{} releases, {} records admitted", releases.len(), report.records_admitted);
    Ok(())
}
