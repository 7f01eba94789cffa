//! Two AMs squeeze a 1 kg box between their end-effectors and lift it 10 cm.
//!
//! Writes telemetry to `out/two_am_grasp` unless `AMGRASP_OUT` says otherwise.
//!
//! `cargo run --release --example two_am_grasp`

use std::path::PathBuf;

use amgrasp::sim::{self, Scenario, SimSettings};

fn main() -> amgrasp::Result<()> {
    let scenario = Scenario::preset("two_am_grasp", SimSettings::default())?;
    let out = sim::run_scenario(scenario)?;
    let dir = std::env::var_os("AMGRASP_OUT").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("out/two_am_grasp"));
    out.telemetry.write_csv(&dir)?;

    let s = &out.summary;
    for (i, am) in s.ams.iter().enumerate() {
        // Each AM carries half the weight, and its x-impedance settles where K_y ỹ balances F_y.
        println!(
            "AM {i}: hover f_e,z = {:.3} N, ỹ_x = {:.4} m (K_y⁻¹F_y predicts {:.4} m)",
            am.hover_f_e_z, am.final_y_err_x, am.predicted_y_err_x
        );
    }
    if let Some(o) = &s.object {
        println!("object at {:.4} m, target {:.4} m", o.final_height, o.target_height);
    }
    for m in &s.monitors {
        println!("{:<22} {} ({:.3e}, limit {:.1e})", m.name, if m.passed { "ok" } else { "FAIL" }, m.value, m.limit);
    }
    println!("telemetry in {}", dir.display());
    Ok(())
}
