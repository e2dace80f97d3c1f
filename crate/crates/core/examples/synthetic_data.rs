//! Zipf-Mandelbrot synthetic workload and its exact totals.

use dpsqlp::bench::{final_truth, generate_synthetic, SynthParams, ZipfMandelbrot};
use dpsqlp::engine::WindowSpec;

fn main() -> dpsqlp::Result<()> {
    let per_user = ZipfMandelbrot::new(26.0, 6.738, 100_000)?;
    println!("records per user: mean {:.4}, P(> 10) = {:.4}", per_user.mean(), 1.0 - per_user.cdf(10));
    let params = SynthParams::desk_scale(1);
    let records = generate_synthetic(&params)?;
    println!("{} users, {} records", params.users, records.len());
    let truth = final_truth(&records, &WindowSpec::days(1), 100);
    let mut top: Vec<(&String, &f64)> = truth.values().flat_map(|t| t.iter()).collect();
    top.sort_by(|a, b| b.1.total_cmp(a.1));
    for (k, v) in top.iter().take(5) {
        println!("{k:>6} {v:>8}");
    }
    Ok(())
}
