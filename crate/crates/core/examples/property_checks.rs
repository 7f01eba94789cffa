//! Runs the model-level property suites that back `amgrasp check`.
//!
//! `cargo run --release --example property_checks`

use amgrasp::verify::{self, CheckOptions, Suite};

fn main() -> amgrasp::Result<()> {
    let opts = CheckOptions { samples: 50, ..CheckOptions::default() };
    for suite in [Suite::Dynamics, Suite::Decoupling, Suite::Energy, Suite::Control] {
        println!("[{}]", suite.name());
        for p in verify::run_suite(suite, &opts)? {
            println!("  {} {:<32} {:.3e} (limit {:.1e})", if p.passed { "ok  " } else { "FAIL" }, p.name, p.worst, p.limit);
        }
    }
    Ok(())
}
