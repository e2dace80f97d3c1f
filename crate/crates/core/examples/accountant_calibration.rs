//! Budget split, noise calibration and privacy conversions.

use dpsqlp::accountant::{
    calibrate_sigma, calibrate_tau, group_privacy, split_budget, zcdp_to_dp_closed, zcdp_to_dp_tight, DpBudget,
    SplitRatios, ZcdpBudget,
};
use dpsqlp::keyselect::plan_selection;

fn main() -> dpsqlp::Result<()> {
    let total = DpBudget::new(6.0, 1e-9)?;
    let split = split_budget(total, SplitRatios::default());
    println!("key selection: {:?}", split.key_selection);
    println!("aggregation:   {:?}", split.aggregation);

    let rho = ZcdpBudget::new(0.1)?;
    println!(
        "rho = 0.1 at delta = 1e-6: closed form eps = {:.4}, tight eps = {:.4}",
        zcdp_to_dp_closed(rho, 1e-6)?,
        zcdp_to_dp_tight(rho, 1e-6)?
    );
    println!("group of 2 at (0.1, 1e-9): {:?}", group_privacy(0.1, 1e-9, 2)?);

    for t in [10u64, 100, 1000] {
        let cal = calibrate_sigma(t, split.aggregation, 32.0)?;
        println!("T = {t:>4}: {} levels, aggregation sigma = {:.2}", cal.levels, cal.sigma);
    }
    let plan = plan_selection(split.key_selection, 32, 100, None)?;
    println!("selection: sigma = {:.2}, beta = {:.3e} via {:?}", plan.sigma, plan.beta, plan.route);
    println!("tau for unit variance at beta = 0.01: {:.4}", calibrate_tau(1.0, 0.01)?);
    Ok(())
}
