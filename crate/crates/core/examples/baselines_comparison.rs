//! Desk-scale comparison of the streaming engine against both baselines.
//!
//! `cargo run --release --example baselines_comparison -- [triggers] [seed]`

use dpsqlp::bench::{compare_engines, generate_synthetic, EngineKind, SynthParams};
use dpsqlp::engine::PipelineConfig;

fn main() -> dpsqlp::Result<()> {
    let mut args = std::env::args().skip(1);
    let triggers: u64 = args.next().map_or(100, |a| a.parse().expect("triggers"));
    let seed: u64 = args.next().map_or(1, |a| a.parse().expect("seed"));

    let records = generate_synthetic(&SynthParams::desk_scale(seed))?;
    let cfg = PipelineConfig { triggers, seed, ..PipelineConfig::default() };
    println!("{} records, T = {triggers}, C = {}, eps = {}, delta = {}", records.len(), cfg.c, cfg.epsilon, cfg.delta);
    println!("{:<10} {:>8} {:>12} {:>12} {:>12}", "engine", "keys", "l_inf", "l1", "l2");
    for (kind, r) in compare_engines(&records, &cfg, &EngineKind::ALL)? {
        println!("{:<10} {:>8} {:>12.1} {:>12.1} {:>12.1}", kind.to_string(), r.retained_keys, r.l_inf, r.l1, r.l2);
    }
    Ok(())
}
