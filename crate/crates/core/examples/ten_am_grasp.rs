//! Ten AMs on a ring lift a 5 kg cylinder. Each runs its own controller and
//! only measures its own contact force.
//!
//! `cargo run --release --example ten_am_grasp` (about half a minute)

use std::time::Instant;

use amgrasp::sim::{self, Scenario, SimSettings};

fn main() -> amgrasp::Result<()> {
    let started = Instant::now();
    let out = sim::run_scenario(Scenario::preset("ten_am_grasp", SimSettings::default())?)?;
    let s = &out.summary;
    let forces: Vec<String> = s.ams.iter().map(|a| format!("{:.2}", a.hover_f_e_z)).collect();
    println!("hover f_e,z per AM: [{}] N", forces.join(", "));
    if let Some(o) = &s.object {
        println!("object height {:.4} m against target {:.4} m", o.final_height, o.target_height);
    }
    let c = &s.convergence;
    println!("∫‖ẏ̄‖² over the hover {:.3e}, bound {:.3e}", c.integral, 1.1 * c.bound);
    println!("passed: {} in {:.1} s", s.passed, started.elapsed().as_secs_f64());
    Ok(())
}
