//! Checks the model assumptions for a config and prints a short report.
//!
//! cargo run --release --example validate_assumptions -- [config.toml]

use smheston::config::Config;
use smheston::workflow;

fn main() -> smheston::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/configs/semi_markov_two_regime.toml").to_string());
    let cfg = Config::load(&path)?;
    let report = workflow::validate(&cfg, 20_000, cfg.simulation().seed)?;

    println!("config {} (hash {})", path, report.provenance.config_hash);
    for r in &report.a1 {
        println!(
            "  regime {}: sigma {:.4} <= {:.4} ({})",
            r.regime,
            r.lhs,
            r.rhs,
            if r.pass { "ok" } else { "violated" }
        );
    }
    if let Some(e) = &report.a1_error {
        println!("  {e}");
    }
    println!(
        "  hazards: irreducible {}, regimes without exit {:?}",
        report.hazards.irreducible, report.hazards.states_without_exit
    );
    for m in &report.a2_messages {
        println!("  {m}");
    }
    println!(
        "  integrability estimate {:.5} +- {:.5} ({})",
        report.a3.estimate,
        report.a3.std_error,
        if report.a3.stable { "stable" } else { "unstable" }
    );
    println!("passed: {}", report.passed);
    Ok(())
}
