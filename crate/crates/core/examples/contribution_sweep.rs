//! Utility as a function of the per-user contribution bound `C`.
//!
//! `cargo run --release --example contribution_sweep -- [seed]`

use dpsqlp::bench::{generate_synthetic, sweep_contribution_bound, EngineKind, SynthParams};
use dpsqlp::engine::PipelineConfig;

fn main() -> dpsqlp::Result<()> {
    let seed: u64 = std::env::args().nth(1).map_or(1, |a| a.parse().expect("seed"));
    let records = generate_synthetic(&SynthParams::desk_scale(seed))?;
    let cfg = PipelineConfig { seed, ..PipelineConfig::default() };
    let c_values = [1, 2, 5, 10, 17, 25, 32, 50];
    println!("{:>4} {:>8} {:>12} {:>12} {:>12}", "C", "keys", "l_inf", "l1", "l2");
    for row in sweep_contribution_bound(&records, &cfg, EngineKind::DpSqlp, &c_values, 1)? {
        let m = row.mean;
        println!("{:>4} {:>8} {:>12.1} {:>12.1} {:>12.1}", row.c, m.retained_keys, m.l_inf, m.l1, m.l2);
    }
    Ok(())
}
