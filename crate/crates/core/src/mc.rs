//! Monte Carlo evaluation of discounted terminal payoffs.
//!
//! This is the independent reference for the integral-equation solver: it
//! simulates the full regime-switching dynamics under the minimal martingale
//! measure and never touches the solver's clouds (it draws from its own
//! stream domain).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{MarketState, PayoffSpec, RegimeParams};
use crate::rng::{self, Moments, StreamDomain};
use crate::sde::{Measure, PathNode, PathSimulator, SimulationSpec};
use crate::semi_markov::HazardSpec;

/// Two-sided 99% standard normal quantile.
pub const Z99: f64 = 2.575_829_303_548_901;

/// Sample mean with its standard error and 99% normal interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub price: f64,
    pub std_error: f64,
    pub ci99: [f64; 2],
    pub n_paths: usize,
    pub seed: u64,
}

impl McEstimate {
    pub fn from_moments(m: &Moments, seed: u64) -> Self {
        let se = m.std_error();
        Self {
            price: m.mean,
            std_error: se,
            ci99: [m.mean - Z99 * se, m.mean + Z99 * se],
            n_paths: m.count as usize,
            seed,
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.ci99[0] && x <= self.ci99[1]
    }
}

/// Runs `n_paths` paths from `state` to `horizon` and averages the `m`
/// values written by `f` at the terminal node. Path `p` uses stream `p` of
/// `domain`; batch results are merged in a fixed order.
#[allow(clippy::too_many_arguments)]
pub fn terminal_mc<F>(
    params: &RegimeParams,
    hazard: &HazardSpec,
    state: &MarketState,
    horizon: f64,
    n_paths: usize,
    dt: f64,
    seed: u64,
    measure: Measure,
    domain: StreamDomain,
    m: usize,
    f: F,
) -> Result<Vec<Moments>>
where
    F: Fn(&PathNode, &mut [f64]) + Sync,
{
    if n_paths < 2 {
        return Err(Error::param("paths", "need at least two paths"));
    }
    if !(state.t < horizon) {
        return Err(Error::OutOfRange(format!("state time {} is not before the horizon {horizon}", state.t)));
    }
    let spec = SimulationSpec {
        s0: state.s,
        v0: state.v,
        regime0: state.regime,
        age0: state.age,
        horizon: horizon - state.t,
        dt,
        measure,
    };
    let sim = PathSimulator::new(params, hazard, spec)?;
    let batches: Vec<Result<Vec<Moments>>> = rng::batched(n_paths, |range| {
        let mut acc = vec![Moments::default(); m];
        let mut buf = vec![0.0; m];
        for p in range {
            let mut rng = rng::stream(seed, domain, p as u64);
            let mut last = None;
            sim.run(&mut rng, |node| last = Some(*node))
                .map_err(|e| Error::Numerical(format!("path {p}: {e}")))?;
            let node = last.expect("a path has at least one node");
            f(&node, &mut buf);
            for (a, &x) in acc.iter_mut().zip(&buf) {
                a.push(x);
            }
        }
        Ok(acc)
    });
    let mut total = vec![Moments::default(); m];
    for batch in batches {
        for (t, b) in total.iter_mut().zip(batch?) {
            t.merge(&b);
        }
    }
    Ok(total)
}

/// Prices several payoffs on common paths.
#[allow(clippy::too_many_arguments)]
pub fn price_mc_many(
    params: &RegimeParams,
    hazard: &HazardSpec,
    state: &MarketState,
    payoffs: &[PayoffSpec],
    horizon: f64,
    n_paths: usize,
    dt: f64,
    seed: u64,
) -> Result<Vec<McEstimate>> {
    for p in payoffs {
        p.validate()?;
    }
    state.validate(horizon, f64::INFINITY, params.state_count())?;
    let moments = terminal_mc(
        params,
        hazard,
        state,
        horizon,
        n_paths,
        dt,
        seed,
        Measure::MinimalMartingale,
        StreamDomain::Oracle,
        payoffs.len(),
        |node, out| {
            let d = node.log_discount.exp();
            for (o, p) in out.iter_mut().zip(payoffs) {
                *o = d * p.value(node.s);
            }
        },
    )?;
    Ok(moments.iter().map(|m| McEstimate::from_moments(m, seed)).collect())
}

/// `E[D_T K(S_T)]` from `state` under the minimal martingale measure.
#[allow(clippy::too_many_arguments)]
pub fn price_mc(
    params: &RegimeParams,
    hazard: &HazardSpec,
    state: &MarketState,
    payoff: &PayoffSpec,
    horizon: f64,
    n_paths: usize,
    dt: f64,
    seed: u64,
) -> Result<McEstimate> {
    Ok(price_mc_many(params, hazard, state, std::slice::from_ref(payoff), horizon, n_paths, dt, seed)?[0])
}

/// `E[D_T S_T]`, which equals the starting spot when the discounted price
/// is a martingale.
#[allow(clippy::too_many_arguments)]
pub fn discounted_stock_mc(
    params: &RegimeParams,
    hazard: &HazardSpec,
    state: &MarketState,
    horizon: f64,
    n_paths: usize,
    dt: f64,
    seed: u64,
) -> Result<McEstimate> {
    let m = terminal_mc(
        params,
        hazard,
        state,
        horizon,
        n_paths,
        dt,
        seed,
        Measure::MinimalMartingale,
        StreamDomain::Oracle,
        1,
        |node, out| out[0] = node.log_discount.exp() * node.s,
    )?;
    Ok(McEstimate::from_moments(&m[0], seed))
}

/// Zero-coupon bond `E[exp(-∫_t^T r(X_u) du)]` from regime `i` with age `y`.
/// Only the regime path is simulated; the discount integral is exact.
#[allow(clippy::too_many_arguments)]
pub fn zero_coupon_mc(
    params: &RegimeParams,
    hazard: &HazardSpec,
    i: usize,
    y: f64,
    t: f64,
    horizon: f64,
    n_paths: usize,
    seed: u64,
) -> Result<McEstimate> {
    if i >= params.state_count() || params.state_count() != hazard.state_count() {
        return Err(Error::OutOfRange(format!("regime {i}")));
    }
    if !(t <= horizon) || y < 0.0 {
        return Err(Error::OutOfRange(format!("time {t} / age {y}")));
    }
    if n_paths < 2 {
        return Err(Error::param("paths", "need at least two paths"));
    }
    let gap = horizon - t;
    let batches: Vec<Result<Moments>> = rng::batched(n_paths, |range| {
        let mut acc = Moments::default();
        for p in range {
            let mut rng = rng::stream(seed, StreamDomain::Oracle, p as u64);
            let path = hazard.sample_regime_path(i, y, gap, &mut rng)?;
            acc.push((-path.integrate(0.0, gap, |j| params.regime(j).r)).exp());
        }
        Ok(acc)
    });
    let mut total = Moments::default();
    for b in batches {
        total.merge(&b?);
    }
    Ok(McEstimate::from_moments(&total, seed))
}
