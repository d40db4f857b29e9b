//! Locally risk-minimizing hedge from a solved price field and an empirical
//! check of the resulting Föllmer-Schweizer decomposition.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::PriceField;
use crate::model::{MarketState, RegimeParams};
use crate::rng::{self, CoMoments, Moments, StreamDomain};
use crate::sde::{Measure, PathNode, PathSimulator, SimulationSpec};
use crate::semi_markov::HazardSpec;

/// Hedge position at one state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HedgeQuote {
    /// Units of stock.
    pub xi: f64,
    /// Units of the money-market account.
    pub eps: f64,
    pub phi: f64,
    pub d_phi_ds: f64,
    pub d_phi_dv: f64,
    /// Money-market account value `B_t`.
    pub bank: f64,
}

impl HedgeQuote {
    /// `xi s + eps B - phi`, zero up to rounding.
    pub fn book_value_gap(&self, s: f64) -> f64 {
        self.xi * s + self.eps * self.bank - self.phi
    }
}

/// Value and first derivatives in `s` and `v` by finite differences of the
/// interpolated field: one log-spot cell and the local variance cell,
/// central inside the grid and one-sided at its edges. Off-grid states are
/// clamped (in `v`) or extrapolated (in `s`).
pub fn field_greeks(field: &PriceField, t: f64, s: f64, v: f64, i: usize, y: f64) -> (f64, f64, f64) {
    let g = &field.grid;
    let phi = field.value_extended(t, s, v, i, y);
    let h = g.log_step();
    let (s_lo, s_hi) = (g.spots[0], *g.spots.last().unwrap());
    let mut up = s * h.exp();
    let mut dn = s * (-h).exp();
    if up > s_hi && s <= s_hi {
        up = s;
    }
    if dn < s_lo && s >= s_lo {
        dn = s;
    }
    let d_s = (field.value_extended(t, up, v, i, y) - field.value_extended(t, dn, v, i, y)) / (up - dn);

    let vs = &g.variances;
    let vc = v.clamp(vs[0], *vs.last().unwrap());
    let (c, _) = g.variance_bracket(vc);
    let dv = vs[c + 1] - vs[c];
    let v_up = (vc + dv).min(*vs.last().unwrap());
    let v_dn = (vc - dv).max(vs[0]);
    let d_v = (field.value_extended(t, s, v_up, i, y) - field.value_extended(t, s, v_dn, i, y)) / (v_up - v_dn);
    (phi, d_s, d_v)
}

/// `xi = dφ/ds + rho sigma(i) / s * dφ/dv` and `eps = (φ - xi s) / B`.
pub fn hedge_at(field: &PriceField, params: &RegimeParams, state: &MarketState, bank: f64) -> Result<HedgeQuote> {
    if !(bank > 0.0) {
        return Err(Error::param("bank", "money-market value must be positive"));
    }
    if state.regime >= params.state_count() {
        return Err(Error::OutOfRange(format!("regime {}", state.regime)));
    }
    field.check_inside(state.t, state.s, state.v, state.regime, state.age)?;
    let (phi, d_s, d_v) = field_greeks(field, state.t, state.s, state.v, state.regime, state.age);
    let xi = d_s + params.rho() * params.regime(state.regime).sigma / state.s * d_v;
    Ok(HedgeQuote {
        xi,
        eps: (phi - xi * state.s) / bank,
        phi,
        d_phi_ds: d_s,
        d_phi_dv: d_v,
        bank,
    })
}

/// Empirical Föllmer-Schweizer residual under the physical measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FsReport {
    /// Sample mean of `L_T = K(S_T)/B_T - φ_0 - Σ xi ΔS*`.
    pub mean_lt: f64,
    pub se: f64,
    pub std_lt: f64,
    /// Sample correlation of `L_T` with `M_T = Σ S √V ΔW1`.
    pub corr_with_m: f64,
    pub n_paths: usize,
    pub phi0: f64,
    /// Sample mean of `∫ V (dφ/dv)^2 dt` along the paths.
    pub vega_integral: f64,
    pub dt: f64,
    pub seed: u64,
}

#[derive(Default, Clone, Copy)]
struct FsAcc {
    lt: Moments,
    lm: CoMoments,
    vega: Moments,
}

/// Simulates physical paths from `state`, rebalancing `xi` at every step
/// with `xi` read at the left end of the step.
#[allow(clippy::too_many_arguments)]
pub fn fs_residual(
    field: &PriceField,
    params: &RegimeParams,
    hazard: &HazardSpec,
    state: &MarketState,
    n_paths: usize,
    dt: f64,
    seed: u64,
) -> Result<FsReport> {
    if n_paths < 2 {
        return Err(Error::param("paths", "need at least two paths"));
    }
    let horizon = field.grid.horizon();
    field.check_inside(state.t, state.s, state.v, state.regime, state.age)?;
    let phi0 = field.value_extended(state.t, state.s, state.v, state.regime, state.age);
    let rho = params.rho();
    let spec = SimulationSpec {
        s0: state.s,
        v0: state.v,
        regime0: state.regime,
        age0: state.age,
        horizon: horizon - state.t,
        dt,
        measure: Measure::Physical,
    };
    let sim = PathSimulator::new(params, hazard, spec)?;
    let t0 = state.t;
    let batches: Vec<Result<FsAcc>> = rng::batched(n_paths, |range| {
        let mut acc = FsAcc::default();
        for p in range {
            let mut rng = rng::stream(seed, StreamDomain::Hedging, p as u64);
            let mut prev: Option<(PathNode, f64)> = None;
            let mut gains = 0.0;
            let mut mart = 0.0;
            let mut vega = 0.0;
            let mut payoff = 0.0;
            sim.run(&mut rng, |node| {
                let disc_s = node.s * node.log_discount.exp();
                if let Some((left, xi)) = prev {
                    let left_disc_s = left.s * left.log_discount.exp();
                    gains += xi * (disc_s - left_disc_s);
                    mart += left.s * left.v.sqrt() * node.dw1;
                }
                if node.t < spec.horizon {
                    let t = t0 + node.t;
                    let (_, d_s, d_v) = field_greeks(field, t, node.s, node.v, node.regime, node.age);
                    let xi = d_s + rho * params.regime(node.regime).sigma / node.s * d_v;
                    if let Some((left, _)) = prev {
                        vega += left.v * d_v * d_v * (node.t - left.t);
                    }
                    prev = Some((*node, xi));
                } else {
                    payoff = node.log_discount.exp() * field.payoff.value(node.s);
                }
            })
            .map_err(|e| Error::Numerical(format!("path {p}: {e}")))?;
            let lt = payoff - phi0 - gains;
            acc.lt.push(lt);
            acc.lm.push(lt, mart);
            acc.vega.push(vega);
        }
        Ok(acc)
    });
    let mut total = FsAcc::default();
    for b in batches {
        let b = b?;
        total.lt.merge(&b.lt);
        total.lm.merge(&b.lm);
        total.vega.merge(&b.vega);
    }
    Ok(FsReport {
        mean_lt: total.lt.mean,
        se: total.lt.std_error(),
        std_lt: total.lt.std_dev(),
        corr_with_m: total.lm.correlation(),
        n_paths,
        phi0,
        vega_integral: total.vega.mean,
        dt,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{FieldGrid, GridSpec};
    use crate::model::{PayoffSpec, RegimeCoefficients};

    fn grid() -> FieldGrid {
        FieldGrid::new(&GridSpec {
            horizon: 1.0,
            s_center: 100.0,
            s_ratio: 5.0,
            v_min: 1e-4,
            v_max: 0.32,
            v_anchor: None,
            y_max: 1.0,
            n_t: 5,
            n_s: 41,
            n_v: 9,
            n_y: 2,
            regimes: 1,
        })
        .unwrap()
    }

    fn params(rho: f64) -> RegimeParams {
        RegimeParams::new(vec![RegimeCoefficients { mu: 0.08, r: 0.03, kappa: 2.0, theta: 0.04, sigma: 0.3 }], rho).unwrap()
    }

    /// Field `a s + b v` (plus a constant) on every node.
    fn affine(a: f64, b: f64, payoff: PayoffSpec) -> PriceField {
        let g = grid();
        let [_, _, _, nv, ns] = g.dims();
        let values = (0..g.len()).map(|k| 1.0 + a * g.spots[k % ns] + b * g.variances[(k / ns) % nv]).collect();
        PriceField::new(g, payoff, values).unwrap()
    }

    #[test]
    fn affine_field_gives_exact_greeks_and_book_identity() {
        let f = affine(0.6, 5.0, PayoffSpec::Call { strike: 100.0 });
        let p = params(-0.5);
        for &(s, v) in &[(100.0, 0.04), (20.5, 1e-4), (499.0, 0.32), (61.0, 0.2)] {
            let q = hedge_at(&f, &p, &MarketState::new(0.3, s, v, 0, 0.1), 1.02).unwrap();
            assert!((q.d_phi_ds - 0.6).abs() < 1e-9, "{s}: {}", q.d_phi_ds);
            assert!((q.d_phi_dv - 5.0).abs() < 1e-9);
            assert!((q.xi - (0.6 - 0.5 * 0.3 / s * 5.0)).abs() < 1e-9);
            assert!(q.book_value_gap(s).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_correlation_drops_vega_term() {
        let f = affine(0.3, 7.0, PayoffSpec::Call { strike: 100.0 });
        let q = hedge_at(&f, &params(0.0), &MarketState::new(0.0, 100.0, 0.04, 0, 0.0), 1.0).unwrap();
        assert_eq!(q.xi, q.d_phi_ds);
        assert!((q.eps - (q.phi - q.xi * 100.0)).abs() < 1e-12);
    }

    #[test]
    fn outside_grid_is_rejected() {
        let f = affine(0.3, 7.0, PayoffSpec::Unit);
        let p = params(-0.5);
        assert!(hedge_at(&f, &p, &MarketState::new(0.0, 600.0, 0.04, 0, 0.0), 1.0).is_err());
        assert!(hedge_at(&f, &p, &MarketState::new(0.0, 100.0, 0.04, 1, 0.0), 1.0).is_err());
    }
}
