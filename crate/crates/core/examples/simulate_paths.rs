//! Simulates the model under both measures and checks two moment identities:
//! the discounted stock is a martingale under the pricing measure, and the
//! single-regime variance mean follows its closed form.
//!
//! cargo run --release --example simulate_paths

use smheston::config::Config;
use smheston::mc;
use smheston::sde::{self, Measure, SimulationSpec};

fn main() -> smheston::Result<()> {
    let cfg = Config::load(concat!(env!("CARGO_MANIFEST_DIR"), "/configs/semi_markov_two_regime.toml"))?;
    let init = cfg.initial_state();

    let est = mc::discounted_stock_mc(&cfg.params, &cfg.hazard, &init, cfg.horizon(), 50_000, 1.0 / 256.0, 3)?;
    println!(
        "E[D_T S_T] under the pricing measure: {:.4} +- {:.4} (s0 = {})",
        est.price, est.std_error, init.s
    );

    for measure in [Measure::Physical, Measure::MinimalMartingale] {
        let spec = SimulationSpec {
            s0: init.s,
            v0: init.v,
            regime0: init.regime,
            age0: init.age,
            horizon: cfg.horizon(),
            dt: 1.0 / 256.0,
            measure,
        };
        let bundle = sde::simulate(&cfg.params, &cfg.hazard, spec, 2_000, 5)?;
        let last = bundle.times.len() - 1;
        let n = bundle.path_count() as f64;
        let mean_s: f64 = (0..bundle.path_count()).map(|p| bundle.stock[p][last]).sum::<f64>() / n;
        println!("{measure:?}: mean S_T {mean_s:.3} over {} paths", bundle.path_count());
    }

    let single = Config::load(concat!(env!("CARGO_MANIFEST_DIR"), "/configs/single_regime.toml"))?;
    let c = single.params.regime(0);
    let theta = single.params.effective_theta(0);
    let spec = SimulationSpec {
        s0: 100.0,
        v0: 0.09,
        regime0: 0,
        age0: 0.0,
        horizon: 1.0,
        dt: 1.0 / 256.0,
        measure: Measure::MinimalMartingale,
    };
    let bundle = sde::simulate(&single.params, &single.hazard, spec, 20_000, 9)?;
    for k in [64, 128, 256] {
        let t = bundle.times[k];
        let n = bundle.path_count() as f64;
        let m: f64 = (0..bundle.path_count()).map(|p| bundle.variance[p][k]).sum::<f64>() / n;
        let exact = theta + (0.09 - theta) * (-c.kappa * t).exp();
        println!("t = {t:.2}: E[V] {m:.5} vs {exact:.5}");
    }
    Ok(())
}
