//! The two-AM grasp with the contact-force feed-forward switched off.
//!
//! The CoM and attitude springs now carry the contact wrench, so their
//! errors settle at a non-zero offset instead of vanishing.
//!
//! `cargo run --release --example no_force_compensation`

use amgrasp::sim::{self, Scenario, SimSettings};

fn main() -> amgrasp::Result<()> {
    let with = sim::run_scenario(Scenario::preset("two_am_grasp", SimSettings::default())?)?;
    let without = sim::run_scenario(Scenario::preset("two_am_grasp_nocomp", SimSettings::default())?)?;
    for (label, run) in [("compensated", &with), ("uncompensated", &without)] {
        let am = &run.summary.ams[0];
        let lift = run.summary.object.as_ref().map(|o| o.final_height - o.target_height).unwrap_or(f64::NAN);
        println!("{label:>14}: final ‖r̃_c‖ = {:.3e} m, ‖e_R‖ = {:.3e}, lift error {lift:+.3} m", am.final_r_c_err, am.final_e_r);
    }
    Ok(())
}
