//! Prices a call and a put with the integral equation and with Monte Carlo at
//! a few states and reports whether each solver value lies inside the 99%
//! confidence interval.
//!
//! cargo run --release --example mc_cross_check -- [config.toml]

use smheston::config::Config;
use smheston::ie::{IeSolver, SolverSettings};
use smheston::mc;
use smheston::model::{MarketState, PayoffSpec};

fn main() -> smheston::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/configs/markov_two_regime.toml").to_string());
    let cfg = Config::load(&path)?;
    let init = cfg.initial_state();
    let settings = SolverSettings {
        n_s: 81,
        gauss_nodes: 8,
        ..cfg.solver_settings()
    };
    let solver = IeSolver::new(&cfg.params, &cfg.hazard, cfg.horizon(), &init, settings)?;
    // probes snapped to grid nodes, where the solution carries no
    // interpolation error
    let g = solver.grid();
    let snap = |t: f64, s: f64, v: f64, i: usize, y: f64| {
        let near = |xs: &[f64], x: f64| xs.iter().cloned().min_by(|a, b| (a - x).abs().total_cmp(&(b - x).abs())).unwrap();
        MarketState::new(near(&g.times, t), near(&g.spots, s), near(&g.variances, v), i, near(&g.ages, y))
    };
    let states = [
        snap(0.0, 100.0, 0.04, 0, 0.0),
        snap(0.0, 100.0, 0.04, 1, 0.0),
        snap(0.5, 90.0, 0.06, 0, 0.1),
    ];
    for payoff in [PayoffSpec::Call { strike: 100.0 }, PayoffSpec::Put { strike: 100.0 }] {
        let field = solver.solve(&payoff)?.field;
        for (k, st) in states.iter().enumerate() {
            let ie = field.value_at(st.t, st.s, st.v, st.regime, st.age)?;
            let est = mc::price_mc(&cfg.params, &cfg.hazard, st, &payoff, cfg.horizon(), 50_000, 1.0 / 256.0, 100 + k as u64)?;
            println!(
                "{payoff:?} at t {:.3} s {:.2} v {:.4} regime {}: solver {ie:.4}, mc {:.4} [{:.4}, {:.4}] {}",
                st.t,
                st.s,
                st.v,
                st.regime,
                est.price,
                est.ci99[0],
                est.ci99[1],
                if est.contains(ie) { "inside" } else { "outside" }
            );
        }
    }
    Ok(())
}
