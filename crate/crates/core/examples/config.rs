//! Builds a run from TOML, shows the resolved configuration and what a
//! schema error looks like.
//!
//! `cargo run --release --example config`

use amgrasp::config::RunConfig;

fn main() -> amgrasp::Result<()> {
    let text = r#"
seed = 7
duration = 6.0

[scenario]
preset = "free_flight"

[gains]
k_y = [150.0, 150.0, 2.0]
"#;
    let config = RunConfig::from_toml_str(text)?;
    print!("{}", config.resolved()?.to_toml()?);

    let scenario = config.build_scenario()?;
    println!("# {} AMs, {} s, K_y,x = {}", scenario.spec.n_ams, scenario.spec.duration, scenario.gains.k_y[(0, 0)]);

    match RunConfig::from_toml_str("[gains]\nk_y = [150.0, \"stiff\", 2.0]") {
        Err(e) => println!("# rejected: {e}"),
        Ok(_) => unreachable!("a string is not a gain"),
    }
    Ok(())
}
