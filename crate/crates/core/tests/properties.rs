use proptest::prelude::*;

use smheston::field::cell_weight;
use smheston::heston;
use smheston::model::{PayoffSpec, RegimeCoefficients, RegimeParams};
use smheston::rng::Moments;
use smheston::sde::full_truncation_step;
use smheston::semi_markov::{HazardFamily, HazardSpec};
use smheston::workflow::{parse_payoff, parse_state};

fn family() -> impl Strategy<Value = HazardFamily> {
    prop_oneof![
        (0.05f64..5.0).prop_map(|rate| HazardFamily::Constant { rate }),
        (0.05f64..5.0, -0.9f64..4.0, 0.05f64..3.0)
            .prop_map(|(rate, amplitude, timescale)| HazardFamily::Saturating { rate, amplitude, timescale }),
    ]
}

fn two_state(a: HazardFamily, b: HazardFamily) -> HazardSpec {
    HazardSpec::new(2, [(0, 1, a), (1, 0, b)]).unwrap()
}

proptest! {
    #[test]
    fn survival_is_multiplicative(f in family(), y in 0.0f64..3.0, a in 0.0f64..2.0, b in 0.0f64..2.0) {
        let h = two_state(f, f);
        let whole = h.survival(0, y, a + b);
        let split = h.survival(0, y, a) * h.survival(0, y + a, b);
        prop_assert!((whole - split).abs() <= 1e-12 * (1.0 + whole));
        prop_assert!((0.0..=1.0).contains(&whole));
    }

    #[test]
    fn holding_cdf_is_a_distribution(f in family(), y in 0.0f64..5.0, dy in 0.0f64..1.0) {
        let h = two_state(f, f);
        let (lo, hi) = (h.holding_cdf(0, y), h.holding_cdf(0, y + dy));
        prop_assert!((0.0..=1.0).contains(&lo));
        prop_assert!(hi >= lo);
        prop_assert!(h.holding_density(0, y) >= 0.0);
    }

    #[test]
    fn residual_holding_inverts_cumulative_hazard(f in family(), g in family(), y0 in 0.0f64..3.0, e in 1e-6f64..8.0) {
        let h = two_state(f, g);
        for i in 0..2 {
            let u = h.residual_holding(i, y0, e).unwrap();
            let got = h.cumulative_hazard(i, y0 + u) - h.cumulative_hazard(i, y0);
            prop_assert!(u >= 0.0);
            prop_assert!((got - e).abs() <= 1e-9 * e.max(1.0), "{} vs {}", got, e);
        }
    }

    #[test]
    fn transition_probabilities_sum_to_one(f in family(), g in family(), y in 0.0f64..4.0) {
        let h = HazardSpec::new(3, [(0, 1, f), (0, 2, g), (1, 0, f), (2, 1, g)]).unwrap();
        for i in 0..3 {
            let p = h.transition_probs(i, y);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert_eq!(p[i], 0.0);
        }
    }

    #[test]
    fn full_truncation_freezes_negative_variance(v in -0.5f64..0.0, kappa in 0.1f64..5.0, mean in 0.01f64..0.3, sigma in 0.0f64..1.0, dw in -0.2f64..0.2) {
        let dt = 1.0 / 256.0;
        let next = full_truncation_step(v, kappa, mean, sigma, dt, dw);
        // diffusion and mean reversion both act on v+ = 0
        prop_assert!((next - (v + kappa * mean * dt)).abs() < 1e-15);
    }

    #[test]
    fn cell_weight_is_a_monotone_fraction(f in 0.0f64..1.0, df in 0.0f64..0.5, h in 1e-4f64..1.0) {
        let w = cell_weight(f, h);
        prop_assert!((0.0..=1.0).contains(&w));
        prop_assert!(cell_weight((f + df).min(1.0), h) >= w);
        prop_assert!(w <= f + 1e-15);
    }

    #[test]
    fn moments_merge_in_any_split(xs in prop::collection::vec(-1e3f64..1e3, 2..200), cut in 0usize..200) {
        let cut = cut.min(xs.len());
        let mut all = Moments::default();
        xs.iter().for_each(|&x| all.push(x));
        let (mut a, mut b) = (Moments::default(), Moments::default());
        xs[..cut].iter().for_each(|&x| a.push(x));
        xs[cut..].iter().for_each(|&x| b.push(x));
        a.merge(&b);
        prop_assert_eq!(a.count, all.count);
        prop_assert!((a.mean - all.mean).abs() < 1e-9);
        prop_assert!((a.variance() - all.variance()).abs() < 1e-7 * (1.0 + all.variance()));
    }

    #[test]
    fn payoff_text_round_trips(k in 1.0f64..500.0, w in 0.5f64..50.0) {
        for p in [PayoffSpec::Call { strike: k }, PayoffSpec::Put { strike: k }, PayoffSpec::Butterfly { center: k + w, half_width: w }] {
            let text = match p {
                PayoffSpec::Call { strike } => format!("call:{strike}"),
                PayoffSpec::Put { strike } => format!("put:{strike}"),
                PayoffSpec::Butterfly { center, half_width } => format!("butterfly:{center}:{half_width}"),
                PayoffSpec::Unit => unreachable!(),
            };
            prop_assert_eq!(parse_payoff(&text).unwrap(), p);
        }
    }

    #[test]
    fn state_text_round_trips(t in 0.0f64..1.0, s in 1.0f64..300.0, v in 0.0f64..1.0, i in 0usize..4, y in 0.0f64..2.0) {
        let st = parse_state(&format!("{t},{s},{v},{i},{y}")).unwrap();
        prop_assert_eq!((st.t, st.s, st.v, st.regime, st.age), (t, s, v, i, y));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn heston_calls_respect_static_arbitrage_bounds(
        kappa in 0.5f64..5.0,
        theta in 0.01f64..0.2,
        sigma_frac in 0.05f64..0.9,
        rho in -0.9f64..0.5,
        tau in 0.05f64..2.0,
        v in 0.005f64..0.3,
    ) {
        // vol of vol below the Feller scale keeps the regime admissible
        let sigma = sigma_frac * (2.0 * kappa * theta).sqrt();
        let params = RegimeParams::new(vec![RegimeCoefficients { mu: 0.06, r: 0.02, kappa, theta, sigma }], rho).unwrap();
        let strikes = [60.0, 80.0, 95.0, 100.0, 105.0, 120.0, 160.0];
        let s = 100.0;
        let calls = heston::call_prices(&params, 0, tau, &strikes, &[s], &[v]).unwrap();
        let disc = (-0.02 * tau).exp();
        for (k, c) in strikes.iter().zip(&calls) {
            prop_assert!(*c >= (s - k * disc).max(0.0) - 1e-9 && *c <= s + 1e-9);
        }
        for w in calls.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9);
        }
        for (j, w) in calls.windows(3).enumerate() {
            let (k0, k1, k2) = (strikes[j], strikes[j + 1], strikes[j + 2]);
            let interp = w[0] + (w[2] - w[0]) * (k1 - k0) / (k2 - k0);
            prop_assert!(w[1] <= interp + 1e-8, "convexity at {}", k1);
        }
    }
}
