//! Thresholded release of one key as its distinct-user count grows.

use dpsqlp::keyselect::{KeySelectionState, SelectionParams};

fn main() -> dpsqlp::Result<()> {
    let params = SelectionParams::new(20, 2.0, 1.0, 1e-3)?;
    let mut state = KeySelectionState::new(7, 3);
    let mut next_user = 0;
    for trigger in 1..=20u64 {
        let users: Vec<String> = (0..3).map(|_| {
            next_user += 1;
            format!("u{next_user}")
        }).collect();
        if state.is_permanent() {
            println!("trigger {trigger:>2}: permanently selected");
            continue;
        }
        state.observe(trigger, users.iter().map(String::as_str), &params)?;
        let out = state.test_threshold(trigger, &params)?;
        println!(
            "trigger {trigger:>2}: round {} users {:>2} noisy {:>7.2} threshold {:>6.2} {}",
            state.rounds_completed(),
            state.cumulative_count(),
            out.noisy_count,
            params.threshold(trigger),
            if out.selected { "SELECTED" } else { "" }
        );
        if out.selected {
            state.restart_after_selection(&out)?;
        }
    }
    Ok(())
}
