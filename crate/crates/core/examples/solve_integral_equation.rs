//! Solves the pricing integral equation for a call on the semi-Markov
//! two-regime model and prints the convergence history, prices across spots
//! and ages, and node uncertainties.
//!
//! cargo run --release --example solve_integral_equation -- [config.toml]

use smheston::config::Config;
use smheston::ie::{IeSolver, SolverSettings};

fn main() -> smheston::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/configs/semi_markov_two_regime.toml").to_string());
    let cfg = Config::load(&path)?;
    let init = cfg.initial_state();
    let settings = SolverSettings {
        n_s: 81,
        gauss_nodes: 8,
        ..cfg.solver_settings()
    };
    let solver = IeSolver::new(&cfg.params, &cfg.hazard, cfg.horizon(), &init, settings)?;
    let solution = solver.solve(&cfg.payoff())?;
    let report = &solution.report;
    println!(
        "{} iterations in {:.1?}, converged {}, empirical ratio {:.3}, grid bound {:.3}",
        report.iterations, report.wall_time, report.converged, report.empirical_ratio, report.q_bound
    );
    for (k, norm) in report.norms.iter().enumerate() {
        println!("  step {:2}: {norm:.3e}", k + 1);
    }

    let field = &solution.field;
    println!("price at t = 0, v = {}:", init.v);
    println!("{:>8} {:>10} {:>10}", "s", "regime 0", "regime 1");
    for s in [70.0, 85.0, 100.0, 115.0, 130.0] {
        let p0 = field.value_at(0.0, s, init.v, 0, init.age)?;
        let p1 = field.value_at(0.0, s, init.v, 1, init.age)?;
        println!("{s:8.1} {p0:10.4} {p1:10.4}");
    }
    println!("age dependence at s = {}, regime 0:", init.s);
    for &y in field.grid.ages.iter().step_by(2) {
        println!("  y {y:5.3}: {:.4}", field.value_at(0.0, init.s, init.v, 0, y)?);
    }

    let g = solver.grid();
    let a = g.spots.iter().position(|&s| s >= init.s).unwrap_or(0);
    let c = g.variances.iter().position(|&v| v >= init.v).unwrap_or(0);
    for i in 0..g.regimes {
        println!(
            "node (s {:.2}, v {:.4}, regime {i}): {:.4} +- {:.4}",
            g.spots[a],
            g.variances[c],
            field.node(0, i, 0, c, a),
            solver.node_uncertainty(&solution, 0, i, 0, c, a)
        );
    }
    Ok(())
}
