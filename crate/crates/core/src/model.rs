//! Market parameters, payoffs, and the checks on them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Moments, StreamDomain};
use crate::sde::{Measure, PathSimulator, SimulationSpec};
use crate::semi_markov::HazardSpec;

/// Coefficients of one regime, all annualised.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeCoefficients {
    /// Stock drift under the physical measure.
    pub mu: f64,
    /// Short rate.
    pub r: f64,
    /// Mean-reversion speed of the variance.
    pub kappa: f64,
    /// Long-run variance.
    pub theta: f64,
    /// Volatility of variance.
    pub sigma: f64,
}

/// Regime-dependent coefficients plus the global correlation between the
/// stock and variance noises.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeParams {
    regimes: Vec<RegimeCoefficients>,
    rho: f64,
}

impl RegimeParams {
    /// Structural checks only: finite values, `kappa, theta > 0`,
    /// `sigma, r >= 0` and `rho` in `[-1, 1]`. Degenerate choices such as
    /// `sigma = 0` are accepted here so that closed-form limits stay
    /// reachable; [`validate_a1`] enforces the strict assumptions.
    pub fn new(regimes: Vec<RegimeCoefficients>, rho: f64) -> Result<Self> {
        if regimes.is_empty() {
            return Err(Error::param("regimes", "at least one regime is required"));
        }
        if !rho.is_finite() || !(-1.0..=1.0).contains(&rho) {
            return Err(Error::param("rho", format!("must lie in [-1, 1], got {rho}")));
        }
        for (i, c) in regimes.iter().enumerate() {
            let fields = [("mu", c.mu), ("r", c.r), ("kappa", c.kappa), ("theta", c.theta), ("sigma", c.sigma)];
            for (name, value) in fields {
                if !value.is_finite() {
                    return Err(Error::param(format!("regimes[{i}].{name}"), "must be finite"));
                }
            }
            if c.kappa <= 0.0 {
                return Err(Error::param(format!("regimes[{i}].kappa"), "must be positive"));
            }
            if c.theta <= 0.0 {
                return Err(Error::param(format!("regimes[{i}].theta"), "must be positive"));
            }
            if c.sigma < 0.0 {
                return Err(Error::param(format!("regimes[{i}].sigma"), "must be non-negative"));
            }
            if c.r < 0.0 {
                return Err(Error::param(format!("regimes[{i}].r"), "must be non-negative"));
            }
        }
        Ok(Self { regimes, rho })
    }

    pub fn state_count(&self) -> usize {
        self.regimes.len()
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn regime(&self, i: usize) -> &RegimeCoefficients {
        &self.regimes[i]
    }

    pub fn regimes(&self) -> &[RegimeCoefficients] {
        &self.regimes
    }

    /// Long-run variance of regime `i` under the minimal martingale measure,
    /// `theta - rho * sigma * (mu - r) / kappa`.
    pub fn effective_theta(&self, i: usize) -> f64 {
        let c = &self.regimes[i];
        c.theta - self.rho * c.sigma * (c.mu - c.r) / c.kappa
    }

    pub fn max_theta(&self) -> f64 {
        (0..self.state_count())
            .map(|i| self.regimes[i].theta.max(self.effective_theta(i)))
            .fold(0.0, f64::max)
    }

    pub fn max_rate(&self) -> f64 {
        self.regimes.iter().map(|c| c.r).fold(0.0, f64::max)
    }
}

/// Free-function form of [`RegimeParams::effective_theta`].
pub fn effective_theta(params: &RegimeParams, i: usize) -> f64 {
    params.effective_theta(i)
}

/// Per-regime outcome of [`validate_a1`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct A1Report {
    pub regime: usize,
    /// The vol-of-vol being tested.
    pub lhs: f64,
    /// `min(positivity bound, integrability bound)`.
    pub rhs: f64,
    pub positivity_bound: f64,
    /// `+inf` when `2 rho + sqrt(2) <= 0`.
    pub integrability_bound: f64,
    pub pass: bool,
}

/// Evaluates the vol-of-vol bound for every regime.
///
/// Errors if any of `mu, r, kappa, theta, sigma` is not strictly positive or
/// if `mu < r`.
pub fn validate_a1(params: &RegimeParams) -> Result<Vec<A1Report>> {
    let rho = params.rho();
    let mut out = Vec::with_capacity(params.state_count());
    for (i, c) in params.regimes().iter().enumerate() {
        let fields = [("mu", c.mu), ("r", c.r), ("kappa", c.kappa), ("theta", c.theta), ("sigma", c.sigma)];
        for (name, value) in fields {
            if value <= 0.0 {
                return Err(Error::param(format!("regimes[{i}].{name}"), format!("must be strictly positive, got {value}")));
            }
        }
        if c.mu < c.r {
            return Err(Error::param(format!("regimes[{i}].mu"), format!("must be at least r = {}", c.r)));
        }
        let excess = c.mu - c.r;
        let positivity = (2.0 * c.kappa * c.theta + rho * rho * excess * excess).sqrt() - rho * excess;
        let denom = 2.0 * rho + std::f64::consts::SQRT_2;
        let integrability = if denom > 0.0 { c.kappa / denom } else { f64::INFINITY };
        let rhs = positivity.min(integrability);
        out.push(A1Report {
            regime: i,
            lhs: c.sigma,
            rhs,
            positivity_bound: positivity,
            integrability_bound: integrability,
            pass: c.sigma < rhs,
        });
    }
    Ok(out)
}

/// Supported European payoffs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PayoffSpec {
    Call { strike: f64 },
    Put { strike: f64 },
    /// Tent of height `half_width` centred on `center`.
    Butterfly { center: f64, half_width: f64 },
    /// Pays one unit of currency.
    Unit,
}

impl PayoffSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            PayoffSpec::Call { strike } | PayoffSpec::Put { strike } => {
                if !(strike > 0.0 && strike.is_finite()) {
                    return Err(Error::param("payoff.strike", "must be positive"));
                }
            }
            PayoffSpec::Butterfly { center, half_width } => {
                if !(half_width > 0.0 && half_width.is_finite()) {
                    return Err(Error::param("payoff.half_width", "must be positive"));
                }
                if !(center > half_width && center.is_finite()) {
                    return Err(Error::param("payoff.center", "must exceed the half width"));
                }
            }
            PayoffSpec::Unit => {}
        }
        Ok(())
    }

    pub fn value(&self, s: f64) -> f64 {
        match *self {
            PayoffSpec::Call { strike } => (s - strike).max(0.0),
            PayoffSpec::Put { strike } => (strike - s).max(0.0),
            PayoffSpec::Butterfly { center, half_width } => (half_width - (s - center).abs()).max(0.0),
            PayoffSpec::Unit => 1.0,
        }
    }

    /// Slope of the linear-growth envelope: `|K(s) - c1 s| <= c2`.
    pub fn c1(&self) -> f64 {
        match self {
            PayoffSpec::Call { .. } => 1.0,
            _ => 0.0,
        }
    }

    /// Width of the linear-growth envelope.
    pub fn c2(&self) -> f64 {
        match *self {
            PayoffSpec::Call { strike } | PayoffSpec::Put { strike } => strike,
            PayoffSpec::Butterfly { half_width, .. } => half_width,
            PayoffSpec::Unit => 1.0,
        }
    }

    /// Representative strike used to centre grids.
    pub fn reference_strike(&self) -> Option<f64> {
        match *self {
            PayoffSpec::Call { strike } | PayoffSpec::Put { strike } => Some(strike),
            PayoffSpec::Butterfly { center, .. } => Some(center),
            PayoffSpec::Unit => None,
        }
    }
}

/// A point `(t, s, v, i, y)` of the pricing domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketState {
    pub t: f64,
    pub s: f64,
    pub v: f64,
    pub regime: usize,
    pub age: f64,
}

impl MarketState {
    pub fn new(t: f64, s: f64, v: f64, regime: usize, age: f64) -> Self {
        Self { t, s, v, regime, age }
    }

    /// Checks `s, v > 0`, `0 <= t <= horizon`, `0 <= y <= t + initial_age`
    /// and that the regime exists.
    pub fn validate(&self, horizon: f64, initial_age: f64, state_count: usize) -> Result<()> {
        if !(self.s > 0.0 && self.s.is_finite()) {
            return Err(Error::OutOfRange(format!("stock price must be positive, got {}", self.s)));
        }
        if !(self.v > 0.0 && self.v.is_finite()) {
            return Err(Error::OutOfRange(format!("variance must be positive, got {}", self.v)));
        }
        if !(0.0..=horizon).contains(&self.t) {
            return Err(Error::OutOfRange(format!("time {} outside [0, {horizon}]", self.t)));
        }
        if self.age < 0.0 || self.age > self.t + initial_age + 1e-12 {
            return Err(Error::OutOfRange(format!(
                "age {} outside [0, t + y0] = [0, {}]",
                self.age,
                self.t + initial_age
            )));
        }
        if self.regime >= state_count {
            return Err(Error::OutOfRange(format!("regime {} but only {state_count} regimes", self.regime)));
        }
        Ok(())
    }
}

/// Outcome of [`estimate_a3`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct A3Estimate {
    /// Monte Carlo estimate of `E[exp(c * integral of 1/V)]`.
    pub estimate: f64,
    pub std_error: f64,
    /// The exponent constant `c = max_i (mu_i - r_i)^2 / 2`.
    pub exponent: f64,
    /// Running estimates over doubling sample sizes.
    pub running: Vec<f64>,
    pub stable: bool,
}

/// Heuristic check of the exponential moment of the integrated inverse
/// variance under the physical dynamics.
///
/// Paths are split into doubling cumulative sample sizes; the estimate is
/// flagged unstable when it is not finite or when it grows at every doubling
/// by more than its own sampling noise would explain.
pub fn estimate_a3(
    params: &RegimeParams,
    hazard: &HazardSpec,
    initial: &MarketState,
    horizon: f64,
    n_paths: usize,
    seed: u64,
) -> Result<A3Estimate> {
    let exponent = params
        .regimes()
        .iter()
        .map(|c| 0.5 * (c.mu - c.r).powi(2))
        .fold(0.0, f64::max);
    if exponent == 0.0 {
        return Ok(A3Estimate {
            estimate: 1.0,
            std_error: 0.0,
            exponent,
            running: vec![1.0],
            stable: true,
        });
    }
    let spec = SimulationSpec {
        s0: initial.s,
        v0: initial.v,
        regime0: initial.regime,
        age0: initial.age,
        horizon,
        dt: (horizon / 512.0).min(1.0 / 512.0),
        measure: Measure::Physical,
    };
    let sim = PathSimulator::new(params, hazard, spec)?;
    let values: Vec<Vec<f64>> = rng::batched(n_paths, |range| {
        range
            .map(|p| {
                let mut rng = rng::stream(seed, StreamDomain::Assumption, p as u64);
                let mut integral = 0.0;
                let mut prev: Option<(f64, f64)> = None;
                let res = sim.run(&mut rng, |node| {
                    let inv = if node.v > 0.0 { 1.0 / node.v } else { f64::INFINITY };
                    if let Some((t0, i0)) = prev {
                        integral += 0.5 * (inv + i0) * (node.t - t0);
                    }
                    prev = Some((node.t, inv));
                });
                match res {
                    Ok(()) => (exponent * integral).exp(),
                    Err(_) => f64::NAN,
                }
            })
            .collect()
    });
    let flat: Vec<f64> = values.into_iter().flatten().collect();

    let mut running = Vec::new();
    let mut moments = Moments::default();
    let mut checkpoint = (flat.len() / 16).max(1);
    for (idx, &x) in flat.iter().enumerate() {
        moments.push(x);
        if idx + 1 == checkpoint || idx + 1 == flat.len() {
            running.push(moments.mean);
            checkpoint *= 2;
        }
    }
    running.dedup();
    let estimate = moments.mean;
    let std_error = moments.std_error();
    let finite = estimate.is_finite() && std_error.is_finite();
    let monotone_growth = running.len() >= 3
        && running.windows(2).all(|w| w[1] > w[0])
        && running[running.len() - 1] - running[0] > 5.0 * std_error;
    Ok(A3Estimate {
        estimate,
        std_error,
        exponent,
        running,
        stable: finite && !monotone_growth,
    })
}
