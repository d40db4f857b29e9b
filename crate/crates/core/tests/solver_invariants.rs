use smheston::config::Config;
use smheston::field::{FieldGrid, GridSpec, PriceField};
use smheston::ie::{inner_expectation, IeSolver, InitialField, SolverSettings};
use smheston::model::PayoffSpec;
use smheston::sde::conditional_cloud;

fn semi_markov() -> Config {
    Config::load(concat!(env!("CARGO_MANIFEST_DIR"), "/configs/semi_markov_two_regime.toml")).unwrap()
}

fn coarse(init: InitialField) -> SolverSettings {
    SolverSettings {
        n_t: 11,
        n_s: 41,
        n_v: 9,
        n_y: 5,
        gauss_nodes: 4,
        inner_samples: 1024,
        init,
        ..SolverSettings::default()
    }
}

fn grid() -> FieldGrid {
    FieldGrid::new(&GridSpec {
        horizon: 1.0,
        s_center: 100.0,
        s_ratio: 5.0,
        v_min: 1e-4,
        v_max: 0.72,
        v_anchor: Some(0.04),
        y_max: 1.25,
        n_t: 11,
        n_s: 41,
        n_v: 9,
        n_y: 3,
        regimes: 2,
    })
    .unwrap()
}

#[test]
fn inner_expectation_examples() {
    let cfg = semi_markov();
    let cloud = conditional_cloud(&cfg.params, 1, 0.06, 0.3, 20_000, 4).unwrap();
    let logs: Vec<f64> = cloud.ratios.iter().map(|r| r.ln()).collect();

    let unit = PriceField::from_payoff(grid(), PayoffSpec::Unit);
    assert_eq!(inner_expectation(&unit, &logs, &cloud.variances, 0, 0.5, 100.0), 1.0);

    // a call with a negligible strike is the spot itself up to that strike
    let k = 1e-9;
    let spot = PriceField::from_payoff(grid(), PayoffSpec::Call { strike: k });
    let (mean_r, se) = cloud.mean_ratio();
    for s in [30.0, 100.0, 400.0, 800.0] {
        let got = inner_expectation(&spot, &logs, &cloud.variances, 0, 0.5, s) + k;
        assert!((got - s * mean_r).abs() < 1e-9 * s, "{got} vs {}", s * mean_r);
        let target = s * (cfg.params.regime(1).r * 0.3).exp();
        assert!((got - target).abs() < 3.0 * s * se, "{got} vs {target}");
    }
}

#[test]
fn converged_call_field_respects_structural_bounds() {
    let cfg = semi_markov();
    let init = cfg.initial_state();
    let strike = 100.0;
    let payoff = PayoffSpec::Call { strike };
    let solver = IeSolver::new(&cfg.params, &cfg.hazard, cfg.horizon(), &init, coarse(InitialField::Payoff)).unwrap();
    let sol = solver.solve(&payoff).unwrap();
    let field = &sol.field;
    let g = solver.grid();
    let [n_t, k, ny, nv, ns] = g.dims();
    let eps = sol.report.band_excess;
    assert!(sol.report.converged);
    // negative only within the fixed-point tolerance
    assert!(sol.report.min_value > -1e-7 * strike, "{}", sol.report.min_value);
    assert!(eps < 0.05 * strike);

    let mut regime_gap: f64 = 0.0;
    let mut delta_range = (f64::INFINITY, f64::NEG_INFINITY);
    for n in 0..n_t - 1 {
        for y in 0..ny {
            for c in 0..nv {
                for a in 0..ns {
                    regime_gap = regime_gap.max((field.node(n, 0, y, c, a) - field.node(n, 1, y, c, a)).abs());
                }
                for i in 0..k {
                    for a in 1..ns - 1 {
                        let d = (field.node(n, i, y, c, a + 1) - field.node(n, i, y, c, a - 1)) / (g.spots[a + 1] - g.spots[a - 1]);
                        delta_range = (delta_range.0.min(d), delta_range.1.max(d));
                    }
                }
            }
        }
    }
    assert!(regime_gap <= 2.0 * strike + eps, "{regime_gap}");
    assert!(delta_range.0 > -0.01 && delta_range.1 < 1.01, "{delta_range:?}");

    // both starting fields reach the same fixed point
    let from_heston = IeSolver::new(&cfg.params, &cfg.hazard, cfg.horizon(), &init, coarse(InitialField::Heston))
        .unwrap()
        .solve(&payoff)
        .unwrap();
    assert!(from_heston.report.iterations <= sol.report.iterations);
    let worst = field
        .values
        .iter()
        .zip(&from_heston.field.values)
        .enumerate()
        .map(|(idx, (a, b))| (a - b).abs() / (1.0 + g.spots[idx % ns]))
        .fold(0.0, f64::max);
    assert!(worst < 1e-6, "{worst}");
    let norms = &sol.report.norms;
    assert!(norms.windows(2).all(|w| w[1] < w[0]));
}
