//! Injected crash mid-trigger, then resume from the persistent store.

use dpsqlp::bench::{generate_synthetic, SynthParams};
use dpsqlp::engine::{run_pipeline, Engine, FaultPlan, FaultPoint, JsonLinesSink, PipelineConfig, StateStore};

fn main() -> dpsqlp::Result<()> {
    let records = generate_synthetic(&SynthParams { users: 1000, ..SynthParams::desk_scale(8) })?;
    let cfg = PipelineConfig { triggers: 10, seed: 8, ..PipelineConfig::default() };
    let (reference, _) = run_pipeline(&records, &cfg)?;

    let dir = std::env::temp_dir().join(format!("dpsqlp-crash-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    let out = dir.join("releases.jsonl");
    let state = dir.join("state");
    std::fs::create_dir_all(&dir)?;

    let plan = FaultPlan { point: FaultPoint::AfterSinkWrite, window_start: None, trigger: 6 };
    let mut engine = Engine::new(cfg.clone(), StateStore::open(&state)?, JsonLinesSink::open(&out)?)?.with_fault(plan);
    let err = engine.run(&records).unwrap_err();
    println!("first run stopped: {err}");
    drop(engine);

    let mut engine = Engine::new(cfg, StateStore::open(&state)?, JsonLinesSink::open(&out)?)?;
    let report = engine.run(&records)?;
    println!("resumed: {} triggers skipped, {} processed", report.triggers_skipped, report.triggers_processed);
    let recovered = JsonLinesSink::read_all(&out)?;
    println!("recovered output matches uninterrupted run: {}", recovered == reference);
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
