//! Time-stepping of the regime-switching Heston system.
//!
//! The variance uses full-truncation Euler (the negative part is cut inside
//! both drift and diffusion), the log-price is advanced exactly given the
//! truncated variance, and the two noises are correlated through
//! `W2 = rho W1 + sqrt(1 - rho^2) W⊥`. Regime transitions are never snapped
//! to the grid: a step that straddles one is split at the transition instant.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::RegimeParams;
use crate::rng::{self, StreamDomain};
use crate::semi_markov::{HazardSpec, RegimePath};

/// Probability measure the dynamics are written under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    /// Stock drift `mu(i)`, variance mean `theta(i)`.
    Physical,
    /// Stock drift `r(i)`, variance mean `effective_theta(i)`.
    MinimalMartingale,
}

/// Coefficients used while regime `i` is active.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepCoefficients {
    pub drift: f64,
    pub kappa: f64,
    pub mean: f64,
    pub sigma: f64,
    pub rate: f64,
}

impl StepCoefficients {
    pub fn new(params: &RegimeParams, i: usize, measure: Measure) -> Self {
        let c = params.regime(i);
        match measure {
            Measure::Physical => Self {
                drift: c.mu,
                kappa: c.kappa,
                mean: c.theta,
                sigma: c.sigma,
                rate: c.r,
            },
            Measure::MinimalMartingale => Self {
                drift: c.r,
                kappa: c.kappa,
                mean: params.effective_theta(i),
                sigma: c.sigma,
                rate: c.r,
            },
        }
    }
}

/// One full-truncation Euler step of the variance driven by the Brownian
/// increment `dw`.
#[inline]
pub fn full_truncation_step(v: f64, kappa: f64, mean: f64, sigma: f64, dt: f64, dw: f64) -> f64 {
    let vp = v.max(0.0);
    v + kappa * (mean - vp) * dt + sigma * vp.sqrt() * dw
}

/// Start point, horizon and discretisation of a simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub s0: f64,
    pub v0: f64,
    pub regime0: usize,
    pub age0: f64,
    /// Terminal time; paths start at time zero.
    pub horizon: f64,
    pub dt: f64,
    pub measure: Measure,
}

/// State reported at every grid node of a path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathNode {
    pub index: usize,
    pub t: f64,
    pub s: f64,
    pub v: f64,
    pub regime: usize,
    pub age: f64,
    /// `-∫_0^t r(X_u) du`.
    pub log_discount: f64,
    /// Increment of `W1` over the step ending at this node.
    pub dw1: f64,
    /// Increment of `W2` over the step ending at this node.
    pub dw2: f64,
}

/// Streams paths of `(S, V, X, Y, D)` one node at a time. The internal
/// variance iterate may dip below zero; nodes report its positive part.
#[derive(Debug, Clone)]
pub struct PathSimulator<'a> {
    params: &'a RegimeParams,
    hazard: &'a HazardSpec,
    spec: SimulationSpec,
    grid: Vec<f64>,
    coeffs: Vec<StepCoefficients>,
}

impl<'a> PathSimulator<'a> {
    pub fn new(params: &'a RegimeParams, hazard: &'a HazardSpec, spec: SimulationSpec) -> Result<Self> {
        if params.state_count() != hazard.state_count() {
            return Err(Error::Config(format!(
                "{} regimes in the parameters but {} in the hazard specification",
                params.state_count(),
                hazard.state_count()
            )));
        }
        if !(spec.horizon > 0.0) {
            return Err(Error::Config(format!("horizon must be positive, got {}", spec.horizon)));
        }
        if !(spec.dt > 0.0) || spec.dt >= spec.horizon {
            return Err(Error::Config(format!(
                "time step {} must be positive and smaller than the horizon {}",
                spec.dt, spec.horizon
            )));
        }
        if !(spec.s0 > 0.0) || !(spec.v0 >= 0.0) || spec.age0 < 0.0 {
            return Err(Error::Config("initial price must be positive, variance and age non-negative".into()));
        }
        if spec.regime0 >= params.state_count() {
            return Err(Error::OutOfRange(format!("initial regime {}", spec.regime0)));
        }
        let steps = (spec.horizon / spec.dt - 1e-9).ceil() as usize;
        let mut grid: Vec<f64> = (0..steps).map(|k| k as f64 * spec.dt).collect();
        grid.push(spec.horizon);
        let coeffs = (0..params.state_count())
            .map(|i| StepCoefficients::new(params, i, spec.measure))
            .collect();
        Ok(Self {
            params,
            hazard,
            spec,
            grid,
            coeffs,
        })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn spec(&self) -> &SimulationSpec {
        &self.spec
    }

    /// Samples a regime path and then the diffusion along it.
    pub fn run<R: Rng + ?Sized>(&self, rng: &mut R, visitor: impl FnMut(&PathNode)) -> Result<()> {
        let regimes = self
            .hazard
            .sample_regime_path(self.spec.regime0, self.spec.age0, self.spec.horizon, rng)?;
        self.run_along(&regimes, rng, visitor)
    }

    /// Simulates the diffusion along a given regime path.
    pub fn run_along<R: Rng + ?Sized>(
        &self,
        regimes: &RegimePath,
        rng: &mut R,
        mut visitor: impl FnMut(&PathNode),
    ) -> Result<()> {
        let rho = self.params.rho();
        let rho_perp = (1.0 - rho * rho).max(0.0).sqrt();
        let transitions = &regimes.transitions;
        let mut next = 0usize;
        let mut regime = regimes.initial_state;
        let mut last_jump = -regimes.initial_age;
        let mut log_s = self.spec.s0.ln();
        let mut v = self.spec.v0;
        let mut log_d = 0.0;
        visitor(&PathNode {
            index: 0,
            t: 0.0,
            s: self.spec.s0,
            v,
            regime,
            age: regimes.initial_age,
            log_discount: 0.0,
            dw1: 0.0,
            dw2: 0.0,
        });
        for k in 0..self.grid.len() - 1 {
            let b = self.grid[k + 1];
            let mut cur = self.grid[k];
            let mut dw1_sum = 0.0;
            let mut dw2_sum = 0.0;
            loop {
                let jump = transitions.get(next).map(|tr| tr.time).filter(|&tj| tj <= b);
                let seg_end = jump.unwrap_or(b).max(cur);
                let h = seg_end - cur;
                if h > 0.0 {
                    let c = &self.coeffs[regime];
                    let z1: f64 = rng.sample(StandardNormal);
                    let z2: f64 = rng.sample(StandardNormal);
                    let sq = h.sqrt();
                    let dw1 = sq * z1;
                    let dw2 = rho * dw1 + rho_perp * sq * z2;
                    let vp = v.max(0.0);
                    log_s += (c.drift - 0.5 * vp) * h + vp.sqrt() * dw1;
                    v = full_truncation_step(v, c.kappa, c.mean, c.sigma, h, dw2);
                    log_d -= c.rate * h;
                    dw1_sum += dw1;
                    dw2_sum += dw2;
                }
                cur = seg_end;
                match jump {
                    Some(tj) => {
                        regime = transitions[next].state;
                        last_jump = tj;
                        next += 1;
                    }
                    None => break,
                }
            }
            if !(log_s.is_finite() && v.is_finite()) {
                return Err(Error::Numerical(format!("non-finite state at t = {b}")));
            }
            visitor(&PathNode {
                index: k + 1,
                t: b,
                s: log_s.exp(),
                v: v.max(0.0),
                regime,
                age: b - last_jump,
                log_discount: log_d,
                dw1: dw1_sum,
                dw2: dw2_sum,
            });
        }
        Ok(())
    }
}

/// Stored trajectories on the simulation grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathBundle {
    pub seed: u64,
    pub measure: Measure,
    pub dt: f64,
    pub times: Vec<f64>,
    pub stock: Vec<Vec<f64>>,
    pub variance: Vec<Vec<f64>>,
    pub regime: Vec<Vec<usize>>,
    pub age: Vec<Vec<f64>>,
    /// `D_t = exp(-∫_0^t r(X_u) du)`.
    pub discount: Vec<Vec<f64>>,
}

impl PathBundle {
    pub fn path_count(&self) -> usize {
        self.stock.len()
    }

    /// CSV with columns `path,t,S,V,regime,age,discount` for the first
    /// `max_paths` paths.
    pub fn to_csv(&self, max_paths: usize) -> String {
        let mut out = String::from("path,t,S,V,regime,age,discount\n");
        for p in 0..self.path_count().min(max_paths) {
            for (k, t) in self.times.iter().enumerate() {
                out.push_str(&format!(
                    "{p},{t},{},{},{},{},{}\n",
                    self.stock[p][k], self.variance[p][k], self.regime[p][k], self.age[p][k], self.discount[p][k]
                ));
            }
        }
        out
    }
}

/// Simulates and stores `n_paths` paths. Path `p` always uses stream `p` of
/// the simulation domain, so results do not depend on the thread count.
pub fn simulate(
    params: &RegimeParams,
    hazard: &HazardSpec,
    spec: SimulationSpec,
    n_paths: usize,
    seed: u64,
) -> Result<PathBundle> {
    let sim = PathSimulator::new(params, hazard, spec)?;
    let n_nodes = sim.grid().len();
    type Stored = (Vec<f64>, Vec<f64>, Vec<usize>, Vec<f64>, Vec<f64>);
    let batches: Vec<Result<Vec<Stored>>> = rng::batched(n_paths, |range| {
        range
            .map(|p| {
                let mut rng = rng::stream(seed, StreamDomain::Simulation, p as u64);
                let mut rec: Stored = (
                    Vec::with_capacity(n_nodes),
                    Vec::with_capacity(n_nodes),
                    Vec::with_capacity(n_nodes),
                    Vec::with_capacity(n_nodes),
                    Vec::with_capacity(n_nodes),
                );
                sim.run(&mut rng, |node| {
                    rec.0.push(node.s);
                    rec.1.push(node.v);
                    rec.2.push(node.regime);
                    rec.3.push(node.age);
                    rec.4.push(node.log_discount.exp());
                })
                .map_err(|e| Error::Numerical(format!("path {p}: {e}")))?;
                Ok(rec)
            })
            .collect()
    });
    let mut bundle = PathBundle {
        seed,
        measure: spec.measure,
        dt: spec.dt,
        times: sim.grid().to_vec(),
        stock: Vec::with_capacity(n_paths),
        variance: Vec::with_capacity(n_paths),
        regime: Vec::with_capacity(n_paths),
        age: Vec::with_capacity(n_paths),
        discount: Vec::with_capacity(n_paths),
    };
    for batch in batches {
        for (s, v, x, y, d) in batch? {
            bundle.stock.push(s);
            bundle.variance.push(v);
            bundle.regime.push(x);
            bundle.age.push(y);
            bundle.discount.push(d);
        }
    }
    Ok(bundle)
}

/// Empirical surrogate for the frozen-regime transition law of `(Ŝ, V̂)`:
/// samples of `R = Ŝ_u / Ŝ_0` and `V̂_u` started from `V̂_0 = v` with the
/// regime held at `i` under the minimal-martingale dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalCloud {
    pub regime: usize,
    pub horizon: f64,
    pub start_variance: f64,
    pub ratios: Vec<f64>,
    pub variances: Vec<f64>,
}

impl ConditionalCloud {
    pub fn len(&self) -> usize {
        self.ratios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ratios.is_empty()
    }

    pub fn mean_ratio(&self) -> (f64, f64) {
        let mut m = rng::Moments::default();
        self.ratios.iter().for_each(|&x| m.push(x));
        (m.mean, m.std_error())
    }
}

/// Default sub-step used by cloud simulation.
pub const CLOUD_DT: f64 = 1.0 / 512.0;

/// Simulates `n` frozen-regime paths in lock step and hands the cloud at
/// each of the increasing `horizons` to `sink(index, log_ratios, variances)`.
pub fn frozen_regime_clouds<R: Rng + ?Sized>(
    params: &RegimeParams,
    i: usize,
    v0: f64,
    horizons: &[f64],
    n: usize,
    max_dt: f64,
    rng: &mut R,
    mut sink: impl FnMut(usize, &[f64], &[f64]),
) -> Result<()> {
    if horizons.windows(2).any(|w| w[1] < w[0]) || horizons.first().is_some_and(|&h| h < 0.0) {
        return Err(Error::Internal("cloud horizons must be non-negative and increasing".into()));
    }
    if !(max_dt > 0.0) {
        return Err(Error::Config("cloud time step must be positive".into()));
    }
    let c = StepCoefficients::new(params, i, Measure::MinimalMartingale);
    let rho = params.rho();
    let rho_perp = (1.0 - rho * rho).max(0.0).sqrt();
    let mut log_r = vec![0.0; n];
    let mut var = vec![v0; n];
    let mut now = 0.0;
    for (idx, &target) in horizons.iter().enumerate() {
        let span = target - now;
        if span > 0.0 {
            let steps = (span / max_dt - 1e-9).ceil().max(1.0) as usize;
            let h = span / steps as f64;
            let sq = h.sqrt();
            for _ in 0..steps {
                for m in 0..n {
                    let z1: f64 = rng.sample(StandardNormal);
                    let z2: f64 = rng.sample(StandardNormal);
                    let dw1 = sq * z1;
                    let dw2 = rho * dw1 + rho_perp * sq * z2;
                    let vp = var[m].max(0.0);
                    log_r[m] += (c.drift - 0.5 * vp) * h + vp.sqrt() * dw1;
                    var[m] = full_truncation_step(var[m], c.kappa, c.mean, c.sigma, h, dw2);
                }
            }
            if let Some(bad) = log_r.iter().zip(&var).position(|(a, b)| !(a.is_finite() && b.is_finite())) {
                return Err(Error::Numerical(format!("non-finite cloud sample {bad} in regime {i}")));
            }
            now = target;
        }
        let reported: Vec<f64> = var.iter().map(|x| x.max(0.0)).collect();
        sink(idx, &log_r, &reported);
    }
    Ok(())
}

/// Single-horizon frozen-regime cloud with sub-step [`CLOUD_DT`].
pub fn conditional_cloud(
    params: &RegimeParams,
    i: usize,
    v: f64,
    u: f64,
    n_inner: usize,
    seed: u64,
) -> Result<ConditionalCloud> {
    if !(u > 0.0) {
        return Err(Error::Config(format!("cloud horizon must be positive, got {u}")));
    }
    if i >= params.state_count() {
        return Err(Error::OutOfRange(format!("regime {i}")));
    }
    let mut rng = rng::stream(seed, StreamDomain::Cloud, i as u64);
    let mut cloud = ConditionalCloud {
        regime: i,
        horizon: u,
        start_variance: v,
        ratios: Vec::new(),
        variances: Vec::new(),
    };
    frozen_regime_clouds(params, i, v, &[u], n_inner, CLOUD_DT, &mut rng, |_, lr, vv| {
        cloud.ratios = lr.iter().map(|x| x.exp()).collect();
        cloud.variances = vv.to_vec();
    })?;
    Ok(cloud)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::RegimeCoefficients;
    use crate::rng::Moments;
    use crate::semi_markov::HazardFamily;

    fn heston(sigma: f64, kappa: f64, theta: f64) -> RegimeParams {
        RegimeParams::new(
            vec![RegimeCoefficients { mu: 0.08, r: 0.03, kappa, theta, sigma }],
            -0.5,
        )
        .unwrap()
    }

    fn spec(v0: f64, dt: f64, measure: Measure) -> SimulationSpec {
        SimulationSpec {
            s0: 100.0,
            v0,
            regime0: 0,
            age0: 0.0,
            horizon: 1.0,
            dt,
            measure,
        }
    }

    #[test]
    fn zero_vol_of_vol_keeps_variance_at_mean() {
        let p = RegimeParams::new(
            vec![
                RegimeCoefficients { mu: 0.08, r: 0.03, kappa: 2.0, theta: 0.04, sigma: 0.0 },
                RegimeCoefficients { mu: 0.10, r: 0.05, kappa: 5.0, theta: 0.04, sigma: 0.0 },
            ],
            0.3,
        )
        .unwrap();
        let h = HazardSpec::new(2, [(0, 1, HazardFamily::Constant { rate: 3.0 }), (1, 0, HazardFamily::Constant { rate: 3.0 })]).unwrap();
        let bundle = simulate(&p, &h, spec(0.04, 1.0 / 64.0, Measure::Physical), 16, 3).unwrap();
        for path in &bundle.variance {
            assert!(path.iter().all(|&v| v == 0.04));
        }
    }

    #[test]
    fn rejects_step_not_below_horizon() {
        let p = heston(0.2, 2.0, 0.04);
        let h = HazardSpec::frozen();
        assert!(PathSimulator::new(&p, &h, spec(0.04, 1.0, Measure::Physical)).is_err());
        assert!(PathSimulator::new(&p, &h, spec(0.04, 2.0, Measure::Physical)).is_err());
    }

    #[test]
    fn discount_is_monotone_and_starts_at_one() {
        let p = heston(0.3, 1.0, 0.04);
        let h = HazardSpec::frozen();
        let b = simulate(&p, &h, spec(0.04, 1.0 / 32.0, Measure::MinimalMartingale), 8, 1).unwrap();
        for d in &b.discount {
            assert_eq!(d[0], 1.0);
            assert!(d.windows(2).all(|w| w[1] < w[0]));
        }
        let csv = b.to_csv(2);
        assert_eq!(csv.lines().count(), 1 + 2 * b.times.len());
    }

    #[test]
    fn variance_nodes_are_never_negative() {
        // far outside the Feller region, truncation must still keep nodes at or above zero
        let p = heston(1.5, 0.5, 0.01);
        let h = HazardSpec::frozen();
        let b = simulate(&p, &h, spec(0.01, 1.0 / 64.0, Measure::Physical), 256, 11).unwrap();
        let min = b.variance.iter().flatten().fold(f64::INFINITY, |a, &x| a.min(x));
        assert!(min >= 0.0, "min node variance {min}");
    }

    #[test]
    fn regime_switch_is_split_inside_steps() {
        // with a deterministic jump time the discount must integrate the rate exactly
        let p = RegimeParams::new(
            vec![
                RegimeCoefficients { mu: 0.08, r: 0.02, kappa: 2.0, theta: 0.04, sigma: 0.2 },
                RegimeCoefficients { mu: 0.08, r: 0.07, kappa: 2.0, theta: 0.04, sigma: 0.2 },
            ],
            -0.5,
        )
        .unwrap();
        let h = HazardSpec::new(2, [(0, 1, HazardFamily::Constant { rate: 1.0 }), (1, 0, HazardFamily::Constant { rate: 1.0 })]).unwrap();
        let sim = PathSimulator::new(&p, &h, spec(0.04, 0.25, Measure::Physical)).unwrap();
        let regimes = RegimePath {
            initial_state: 0,
            initial_age: 0.0,
            horizon: 1.0,
            transitions: vec![crate::semi_markov::Transition { time: 0.3, state: 1 }],
        };
        let mut last = None;
        let mut rng = rng::stream(0, StreamDomain::Simulation, 0);
        sim.run_along(&regimes, &mut rng, |n| last = Some(*n)).unwrap();
        let node = last.unwrap();
        assert!((node.log_discount + (0.3 * 0.02 + 0.7 * 0.07)).abs() < 1e-14);
        assert_eq!(node.regime, 1);
        assert!((node.age - 0.7).abs() < 1e-14);
    }

    #[test]
    fn cloud_mean_ratio_grows_at_short_rate() {
        let p = heston(0.2, 2.0, 0.04);
        let u = 0.5;
        let cloud = conditional_cloud(&p, 0, 0.04, u, 50_000, 17).unwrap();
        let (mean, se) = cloud.mean_ratio();
        let target = (0.03f64 * u).exp();
        assert!((mean - target).abs() < 3.0 * se, "{mean} vs {target} (se {se})");
    }

    #[test]
    fn cloud_degenerates_at_zero_horizon() {
        let p = heston(0.2, 2.0, 0.04);
        let cloud = conditional_cloud(&p, 0, 0.04, 1e-6, 4096, 2).unwrap();
        let dr = cloud.ratios.iter().map(|r| (r - 1.0).abs()).fold(0.0, f64::max);
        let dv = cloud.variances.iter().map(|v| (v - 0.04).abs()).fold(0.0, f64::max);
        assert!(dr < 1e-3 && dv < 1e-3, "{dr} {dv}");
    }

    #[test]
    fn cloud_log_variance_matches_deterministic_profile() {
        let p = heston(0.0, 2.0, 0.04);
        let u = 1.0;
        let cloud = conditional_cloud(&p, 0, 0.09, u, 100_000, 5).unwrap();
        let mut m = Moments::default();
        cloud.ratios.iter().for_each(|r| m.push(r.ln()));
        // oracle: integrate the deterministic variance ODE v' = kappa (theta - v) by RK4
        let (kappa, theta) = (2.0, p.effective_theta(0));
        let mut v: f64 = 0.09;
        let mut integral = 0.0;
        let n = 10_000;
        let h = u / n as f64;
        for _ in 0..n {
            let f = |x: f64| kappa * (theta - x);
            let k1 = f(v);
            let k2 = f(v + 0.5 * h * k1);
            let k3 = f(v + 0.5 * h * k2);
            let k4 = f(v + h * k3);
            let v_next = v + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            integral += 0.5 * h * (v + v_next);
            v = v_next;
        }
        // sampling error of a variance estimate is about sqrt(2 / n) relative,
        // plus the O(dt) bias of the Euler variance profile
        let tol = integral * (3.0 * (2.0f64 / 100_000.0).sqrt() + 2.0 * CLOUD_DT);
        assert!((m.variance() - integral).abs() < tol, "{} vs {integral}", m.variance());
    }
}
