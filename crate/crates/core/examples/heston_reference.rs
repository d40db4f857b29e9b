//! Frozen-regime Heston prices: a strike ladder per regime, put-call parity
//! and the characteristic function at a few arguments.
//!
//! cargo run --release --example heston_reference

use num_complex::Complex64;
use smheston::config::Config;
use smheston::heston;
use smheston::model::PayoffSpec;

fn main() -> smheston::Result<()> {
    let cfg = Config::load(concat!(env!("CARGO_MANIFEST_DIR"), "/configs/markov_two_regime.toml"))?;
    let (s, v, tau) = (100.0, 0.04, cfg.horizon());

    for i in 0..cfg.params.state_count() {
        let c = cfg.params.regime(i);
        println!("regime {i}: r {} kappa {} theta {} sigma {}", c.r, c.kappa, c.theta, c.sigma);
        let strikes = [80.0, 90.0, 100.0, 110.0, 120.0];
        let calls = heston::call_prices(&cfg.params, i, tau, &strikes, &[s], &[v])?;
        for (k, call) in strikes.iter().zip(&calls) {
            let put = heston::hest(&cfg.params, i, 0.0, s, v, &PayoffSpec::Put { strike: *k }, tau)?;
            let parity = call - put - (s - k * (-c.r * tau).exp());
            println!("  K {k:5.1}: call {call:8.4} put {put:8.4} parity gap {parity:.1e}");
        }
        for u in [0.5, 2.0, 10.0] {
            let phi = heston::char_fn(&cfg.params, i, Complex64::new(u, 0.0), tau, s, v)?;
            println!("  E[exp(iu ln S_T)] at u = {u}: {:.6}", phi.value);
        }
    }
    Ok(())
}
