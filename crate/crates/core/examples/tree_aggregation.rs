//! Continual prefix sums from a noisy binary tree.

use dpsqlp::dptree::TreeState;

fn main() -> dpsqlp::Result<()> {
    let inputs = [3.0, 0.0, 5.0, 1.0, 2.0, 0.0, 4.0, 1.0];
    let mut tree = TreeState::new(inputs.len() as u64, 1.5, 42)?;
    let mut exact = 0.0;
    println!("{:>4} {:>8} {:>10} {:>8}", "step", "exact", "noisy", "stddev");
    for (i, x) in inputs.iter().enumerate() {
        let step = i as u64 + 1;
        tree.add(step, *x)?;
        exact += x;
        let est = tree.total_sum(step)?;
        println!("{step:>4} {exact:>8.1} {:>10.3} {:>8.3}", est.value, est.variance.sqrt());
    }
    let bytes = tree.to_compact_bytes();
    let back = TreeState::from_compact_bytes(&bytes)?;
    assert_eq!(back, tree);
    println!("compact encoding: {} bytes", bytes.len());
    Ok(())
}
