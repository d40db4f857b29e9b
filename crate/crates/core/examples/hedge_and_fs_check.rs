//! Hedge ratios from a solved field and an empirical check of the hedging
//! residual: its mean and its correlation with the stock's martingale part
//! should both vanish.
//!
//! cargo run --release --example hedge_and_fs_check -- [config.toml]

use smheston::config::Config;
use smheston::hedging;
use smheston::ie::{IeSolver, SolverSettings};
use smheston::model::MarketState;

fn main() -> smheston::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/configs/single_regime.toml").to_string());
    let cfg = Config::load(&path)?;
    let init = cfg.initial_state();
    let settings = SolverSettings {
        gauss_nodes: 8,
        ..cfg.solver_settings()
    };
    let solver = IeSolver::new(&cfg.params, &cfg.hazard, cfg.horizon(), &init, settings)?;
    let field = solver.solve(&cfg.payoff())?.field;

    println!("{:>6} {:>8} {:>8} {:>9} {:>9}", "s", "phi", "xi", "eps", "dphi/dv");
    for s in [80.0, 90.0, 100.0, 110.0, 120.0] {
        let state = MarketState::new(0.0, s, init.v, init.regime, init.age);
        let q = hedging::hedge_at(&field, &cfg.params, &state, 1.0)?;
        println!("{s:6.1} {:8.4} {:8.4} {:9.4} {:9.4}", q.phi, q.xi, q.eps, q.d_phi_dv);
    }

    let n = 10_000;
    let sim = cfg.simulation();
    let fs = hedging::fs_residual(&field, &cfg.params, &cfg.hazard, &init, n, sim.dt, sim.seed)?;
    println!(
        "residual over {n} paths: mean {:.4} (3 se {:.4}), std {:.4} ({:.1}% of price), corr with stock noise {:.4} (bound {:.4})",
        fs.mean_lt,
        3.0 * fs.se,
        fs.std_lt,
        100.0 * fs.std_lt / fs.phi0,
        fs.corr_with_m,
        3.0 / (n as f64).sqrt()
    );
    println!("E[∫ V (dphi/dv)^2 dt] = {:.4}", fs.vega_integral);
    Ok(())
}
