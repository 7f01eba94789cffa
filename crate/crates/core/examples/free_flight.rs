//! Two AMs fly to their pre-grasp poses with nothing to hold.
//!
//! `cargo run --release --example free_flight`

use amgrasp::sim::{self, Scenario, SimSettings};

fn main() -> amgrasp::Result<()> {
    let out = sim::run_scenario(Scenario::preset("free_flight", SimSettings::default())?)?;
    for (i, am) in out.summary.ams.iter().enumerate() {
        println!(
            "AM {i}: at the end of the approach ‖r̃_c‖ = {:.2e} m, ‖e_R‖ = {:.2e}, ‖ỹ‖ = {:.2e}; largest storage increase per step {:.2e} J",
            am.approach_r_c_err, am.approach_e_r, am.approach_y_err, am.max_free_flight_storage_increase
        );
    }
    println!("monitors passed: {}", out.summary.passed);
    Ok(())
}
