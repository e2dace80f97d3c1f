//! End-to-end private histogram over a small synthetic stream.

use dpsqlp::bench::{generate_synthetic, SynthParams};
use dpsqlp::engine::{run_pipeline, PipelineConfig};

fn main() -> dpsqlp::Result<()> {
    let records = generate_synthetic(&SynthParams { users: 3000, ..SynthParams::desk_scale(5) })?;
    let cfg = PipelineConfig { triggers: 24, seed: 5, ..PipelineConfig::default() };
    let (releases, report) = run_pipeline(&records, &cfg)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    for r in releases.iter().filter(|r| r.trigger == cfg.triggers) {
        println!("{}", serde_json::to_string(r)?);
    }
    Ok(())
}
