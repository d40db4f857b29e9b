//! Samples holding times from an age-dependent hazard, compares them with the
//! closed-form distribution and prints one regime path.
//!
//! cargo run --release --example semi_markov_sampling

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use smheston::semi_markov::{HazardFamily, HazardSpec};

fn main() -> smheston::Result<()> {
    let hazard = HazardSpec::new(
        2,
        [
            (0, 1, HazardFamily::Saturating { rate: 1.0, amplitude: 1.0, timescale: 0.5 }),
            (1, 0, HazardFamily::Saturating { rate: 0.8, amplitude: 2.0, timescale: 0.3 }),
        ],
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);

    for i in 0..2 {
        let n = 50_000;
        let mut sample: Vec<f64> = (0..n).map(|_| hazard.sample_holding(i, 0.0, &mut rng)).collect::<Result<_, _>>()?;
        sample.sort_by(f64::total_cmp);
        let ks = sample
            .iter()
            .enumerate()
            .map(|(k, &x)| {
                let f = hazard.holding_cdf(i, x);
                (f - k as f64 / n as f64).abs().max(((k + 1) as f64 / n as f64 - f).abs())
            })
            .fold(0.0, f64::max);
        let mean = sample.iter().sum::<f64>() / n as f64;
        println!("regime {i}: mean holding {mean:.4}, KS distance {ks:.5} (1% critical {:.5})", 1.628 / (n as f64).sqrt());
        for y in [0.0, 0.25, 0.5, 1.0, 2.0] {
            println!(
                "  age {y:4.2}: hazard {:.4}, survival over next 0.5 {:.4}",
                hazard.total_rate(i, y),
                hazard.survival(i, y, 0.5)
            );
        }
    }

    let path = hazard.sample_regime_path(0, 0.25, 5.0, &mut rng)?;
    println!("regime path over [0, 5] with {} jumps", path.jump_count());
    print!("{}", path.to_csv());
    Ok(())
}
