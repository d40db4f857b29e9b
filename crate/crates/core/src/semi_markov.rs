//! Age-dependent transition rates and exact sampling of the regime process
//! together with its age.
//!
//! A regime `i` entered at age zero is left after a holding time with
//! survival `exp(-Λ_i(y))`, where `Λ_i` integrates the total exit rate
//! `λ_i = Σ_j λ_ij`. Given an exit at age `y`, the destination is `j` with
//! probability `λ_ij(y) / λ_i(y)`.

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{self, AdaptiveOptions};

/// Jumps allowed in one sampled path before sampling is aborted.
pub const MAX_JUMPS: usize = 1_000_000;

/// Parametric hazard families with closed-form cumulative hazards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum HazardFamily {
    /// `λ(y) = rate`.
    Constant { rate: f64 },
    /// `λ(y) = rate * (1 + amplitude * (1 - exp(-y / timescale)))`, moving
    /// from `rate` at age zero to `rate * (1 + amplitude)` for old regimes.
    Saturating { rate: f64, amplitude: f64, timescale: f64 },
}

impl HazardFamily {
    fn validate(&self) -> Result<()> {
        match *self {
            HazardFamily::Constant { rate } => {
                if !(rate > 0.0 && rate.is_finite()) {
                    return Err(Error::param("hazard.rate", format!("must be positive, got {rate}")));
                }
            }
            HazardFamily::Saturating { rate, amplitude, timescale } => {
                if !(rate > 0.0 && rate.is_finite()) {
                    return Err(Error::param("hazard.rate", format!("must be positive, got {rate}")));
                }
                if !(amplitude > -1.0 && amplitude.is_finite()) {
                    return Err(Error::param("hazard.amplitude", format!("must exceed -1, got {amplitude}")));
                }
                if !(timescale > 0.0 && timescale.is_finite()) {
                    return Err(Error::param("hazard.timescale", format!("must be positive, got {timescale}")));
                }
            }
        }
        Ok(())
    }

    pub fn rate(&self, y: f64) -> f64 {
        match *self {
            HazardFamily::Constant { rate } => rate,
            HazardFamily::Saturating { rate, amplitude, timescale } => {
                rate * (1.0 - amplitude * (-y / timescale).exp_m1())
            }
        }
    }

    /// `∫_0^y λ`.
    pub fn cumulative(&self, y: f64) -> f64 {
        match *self {
            HazardFamily::Constant { rate } => rate * y,
            HazardFamily::Saturating { rate, amplitude, timescale } => {
                rate * (y + amplitude * (y + timescale * (-y / timescale).exp_m1()))
            }
        }
    }

    fn bounds(&self) -> (f64, f64) {
        match *self {
            HazardFamily::Constant { rate } => (rate, rate),
            HazardFamily::Saturating { rate, amplitude, .. } => {
                let tail = rate * (1.0 + amplitude);
                (rate.min(tail), rate.max(tail))
            }
        }
    }
}

/// Transition rates for every ordered pair of distinct regimes. Missing
/// pairs carry a zero rate.
#[derive(Debug, Clone, PartialEq)]
pub struct HazardSpec {
    states: usize,
    rates: Vec<Option<HazardFamily>>,
}

impl HazardSpec {
    pub fn new(states: usize, entries: impl IntoIterator<Item = (usize, usize, HazardFamily)>) -> Result<Self> {
        if states == 0 {
            return Err(Error::param("hazards", "state space must be non-empty"));
        }
        let mut rates = vec![None; states * states];
        for (i, j, family) in entries {
            if i >= states || j >= states {
                return Err(Error::param("hazards", format!("pair ({i}, {j}) outside {states} regimes")));
            }
            if i == j {
                return Err(Error::param("hazards", format!("self-transition ({i}, {i}) is not allowed")));
            }
            family.validate()?;
            if rates[i * states + j].replace(family).is_some() {
                return Err(Error::param("hazards", format!("pair ({i}, {j}) declared twice")));
            }
        }
        Ok(Self { states, rates })
    }

    /// Single-regime specification without any transitions.
    pub fn frozen() -> Self {
        Self::frozen_states(1)
    }

    /// `states` regimes with no transitions at all.
    pub fn frozen_states(states: usize) -> Self {
        Self {
            states,
            rates: vec![None; states * states],
        }
    }

    pub fn state_count(&self) -> usize {
        self.states
    }

    pub fn family(&self, i: usize, j: usize) -> Option<&HazardFamily> {
        self.rates[i * self.states + j].as_ref()
    }

    fn row(&self, i: usize) -> impl Iterator<Item = (usize, &HazardFamily)> {
        self.rates[i * self.states..(i + 1) * self.states]
            .iter()
            .enumerate()
            .filter_map(|(j, f)| f.as_ref().map(|f| (j, f)))
    }

    /// `true` when regime `i` has at least one outgoing rate.
    pub fn has_exits(&self, i: usize) -> bool {
        self.row(i).next().is_some()
    }

    /// `true` when no transition can ever happen.
    pub fn is_frozen(&self) -> bool {
        self.rates.iter().all(Option::is_none)
    }

    /// `true` when every declared rate is age independent.
    pub fn is_markov(&self) -> bool {
        self.rates
            .iter()
            .flatten()
            .all(|f| matches!(f, HazardFamily::Constant { .. }))
    }

    pub fn rate(&self, i: usize, j: usize, y: f64) -> f64 {
        self.family(i, j).map_or(0.0, |f| f.rate(y))
    }

    /// Total exit rate `λ_i(y)`.
    pub fn total_rate(&self, i: usize, y: f64) -> f64 {
        self.row(i).map(|(_, f)| f.rate(y)).sum()
    }

    /// `Λ_i(y)`, exact for both families.
    pub fn cumulative_hazard(&self, i: usize, y: f64) -> f64 {
        self.row(i).map(|(_, f)| f.cumulative(y)).sum()
    }

    /// Holding-time distribution `F(y|i) = 1 - exp(-Λ_i(y))`.
    pub fn holding_cdf(&self, i: usize, y: f64) -> f64 {
        -(-self.cumulative_hazard(i, y)).exp_m1()
    }

    /// Holding-time density `f(y|i) = λ_i(y) exp(-Λ_i(y))`.
    pub fn holding_density(&self, i: usize, y: f64) -> f64 {
        self.total_rate(i, y) * (-self.cumulative_hazard(i, y)).exp()
    }

    /// Probability of still being in `i` after `delta` more years, given age
    /// `y`: `exp(-(Λ_i(y + delta) - Λ_i(y)))`.
    pub fn survival(&self, i: usize, y: f64, delta: f64) -> f64 {
        (-(self.cumulative_hazard(i, y + delta) - self.cumulative_hazard(i, y))).exp()
    }

    /// Destination probabilities `p_ij(y)` for an exit from `i` at age `y`.
    /// The row is all zeros when `i` has no exits.
    pub fn transition_probs(&self, i: usize, y: f64) -> Vec<f64> {
        let mut p = vec![0.0; self.states];
        let total = self.total_rate(i, y);
        if total > 0.0 {
            for (j, f) in self.row(i) {
                p[j] = f.rate(y) / total;
            }
        }
        p
    }

    /// Residual holding time `u` solving `Λ_i(y0 + u) - Λ_i(y0) = e`.
    pub fn residual_holding(&self, i: usize, y0: f64, e: f64) -> Result<f64> {
        if !self.has_exits(i) {
            return Ok(f64::INFINITY);
        }
        let (lo_rate, hi_rate) = self
            .row(i)
            .map(|(_, f)| f.bounds())
            .fold((0.0, 0.0), |acc, b| (acc.0 + b.0, acc.1 + b.1));
        if self.row(i).all(|(_, f)| matches!(f, HazardFamily::Constant { .. })) {
            return Ok(e / lo_rate);
        }
        let base = self.cumulative_hazard(i, y0);
        let target = base + e;
        let tol = 1e-12 * target.max(1.0);
        let mut lo = e / hi_rate;
        let mut hi = e / lo_rate;
        let mut u = 0.5 * (lo + hi);
        for _ in 0..200 {
            let g = self.cumulative_hazard(i, y0 + u) - target;
            if g.abs() <= tol {
                return Ok(u);
            }
            if g > 0.0 {
                hi = u;
            } else {
                lo = u;
            }
            let newton = u - g / self.total_rate(i, y0 + u);
            u = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
            if hi - lo <= f64::EPSILON * hi {
                return Ok(u);
            }
        }
        Err(Error::Numerical(format!(
            "holding-time root finder failed for regime {i} at age {y0}"
        )))
    }

    /// Draws the residual holding time in `i` given the current age `y0`.
    pub fn sample_holding<R: Rng + ?Sized>(&self, i: usize, y0: f64, rng: &mut R) -> Result<f64> {
        let e: f64 = rng.sample(Exp1);
        self.residual_holding(i, y0, e)
    }

    fn sample_destination<R: Rng + ?Sized>(&self, i: usize, age: f64, rng: &mut R) -> usize {
        let probs = self.transition_probs(i, age);
        let x: f64 = rng.gen();
        let mut acc = 0.0;
        let mut last = i;
        for (j, p) in probs.iter().enumerate() {
            if *p > 0.0 {
                acc += p;
                last = j;
                if x < acc {
                    return j;
                }
            }
        }
        last
    }

    /// Samples `(X, Y)` on `[0, horizon]` started in `i0` with age `y0`.
    pub fn sample_regime_path<R: Rng + ?Sized>(
        &self,
        i0: usize,
        y0: f64,
        horizon: f64,
        rng: &mut R,
    ) -> Result<RegimePath> {
        if i0 >= self.states {
            return Err(Error::OutOfRange(format!("initial regime {i0} of {}", self.states)));
        }
        if !(horizon > 0.0) || y0 < 0.0 {
            return Err(Error::Config(format!("need horizon > 0 and age >= 0, got {horizon}, {y0}")));
        }
        let mut transitions = Vec::new();
        let mut t = 0.0;
        let mut state = i0;
        let mut age = y0;
        loop {
            let u = self.sample_holding(state, age, rng)?;
            if !(t + u <= horizon) {
                break;
            }
            t += u;
            let next = self.sample_destination(state, age + u, rng);
            transitions.push(Transition { time: t, state: next });
            if transitions.len() > MAX_JUMPS {
                return Err(Error::Numerical(format!("more than {MAX_JUMPS} regime jumps before {horizon}")));
            }
            state = next;
            age = 0.0;
        }
        Ok(RegimePath {
            initial_state: i0,
            initial_age: y0,
            horizon,
            transitions,
        })
    }

    /// Embedded jump-chain matrix `p̂_ij = ∫ p_ij dF(·|i)`, integrated up to
    /// the age where the survival drops below `1e-12`.
    pub fn embedded_matrix(&self) -> Result<Vec<Vec<f64>>> {
        let k = self.states;
        let mut out = vec![vec![0.0; k]; k];
        let target = -(1e-12f64).ln();
        for (i, row) in out.iter_mut().enumerate() {
            if !self.has_exits(i) {
                continue;
            }
            let mut upper = 1.0;
            while self.cumulative_hazard(i, upper) < target {
                upper *= 2.0;
            }
            let opts = AdaptiveOptions {
                abs_tol: 1e-13,
                rel_tol: 1e-12,
                ..AdaptiveOptions::default()
            };
            let vals = quadrature::integrate_vec(
                |y, buf| {
                    let surv = (-self.cumulative_hazard(i, y)).exp();
                    for (j, slot) in buf.iter_mut().enumerate() {
                        *slot = self.rate(i, j, y) * surv;
                    }
                },
                0.0,
                upper,
                k,
                opts,
            )?;
            row.copy_from_slice(&vals);
        }
        Ok(out)
    }

    /// Strong connectivity of the support of the embedded matrix.
    pub fn is_irreducible(&self) -> Result<bool> {
        let p = self.embedded_matrix()?;
        Ok(strongly_connected(&p))
    }

    /// Summary of the structural assumptions on the rates.
    pub fn check(&self) -> Result<HazardReport> {
        let exits: Vec<bool> = (0..self.states).map(|i| self.has_exits(i)).collect();
        let divergent = self.states == 1 || exits.iter().all(|&e| e);
        let embedded = self.embedded_matrix()?;
        let irreducible = strongly_connected(&embedded);
        Ok(HazardReport {
            rates_positive: true,
            cumulative_diverges: divergent,
            states_without_exit: exits.iter().enumerate().filter(|(_, e)| !**e).map(|(i, _)| i).collect(),
            irreducible,
            embedded,
        })
    }
}

fn strongly_connected(p: &[Vec<f64>]) -> bool {
    let k = p.len();
    if k <= 1 {
        return true;
    }
    let reach = |forward: bool| {
        let mut seen = vec![false; k];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(a) = stack.pop() {
            for b in 0..k {
                let w = if forward { p[a][b] } else { p[b][a] };
                if w > 0.0 && !seen[b] {
                    seen[b] = true;
                    stack.push(b);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(true) && reach(false)
}

/// Outcome of [`HazardSpec::check`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HazardReport {
    pub rates_positive: bool,
    pub cumulative_diverges: bool,
    pub states_without_exit: Vec<usize>,
    pub irreducible: bool,
    pub embedded: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Transition {
    pub time: f64,
    pub state: usize,
}

/// One realisation of the regime process on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegimePath {
    pub initial_state: usize,
    /// Age at time zero; the last transition before the start happened at
    /// `-initial_age`.
    pub initial_age: f64,
    pub horizon: f64,
    pub transitions: Vec<Transition>,
}

impl RegimePath {
    /// `(X_t, Y_t)` for `t` in `[0, horizon]`.
    pub fn state_at(&self, t: f64) -> (usize, f64) {
        let n = self.transitions.partition_point(|tr| tr.time <= t);
        if n == 0 {
            (self.initial_state, t + self.initial_age)
        } else {
            let last = &self.transitions[n - 1];
            (last.state, t - last.time)
        }
    }

    /// Constant-regime stretches `(start, end, regime)` covering `[0, horizon]`.
    pub fn segments(&self) -> Vec<(f64, f64, usize)> {
        let mut out = Vec::with_capacity(self.transitions.len() + 1);
        let mut start = 0.0;
        let mut state = self.initial_state;
        for tr in &self.transitions {
            out.push((start, tr.time, state));
            start = tr.time;
            state = tr.state;
        }
        out.push((start, self.horizon, state));
        out
    }

    /// `∫_from^to f(X_u) du` for a regime-indexed rate.
    pub fn integrate(&self, from: f64, to: f64, f: impl Fn(usize) -> f64) -> f64 {
        self.segments()
            .into_iter()
            .map(|(a, b, i)| {
                let lo = a.max(from);
                let hi = b.min(to);
                if hi > lo {
                    f(i) * (hi - lo)
                } else {
                    0.0
                }
            })
            .sum()
    }

    pub fn jump_count(&self) -> usize {
        self.transitions.len()
    }

    /// Diagnostics CSV with columns `transition_time,new_state`; the first
    /// row records the entry into the initial regime.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("transition_time,new_state\n");
        out.push_str(&format!("{},{}\n", -self.initial_age, self.initial_state));
        for tr in &self.transitions {
            out.push_str(&format!("{},{}\n", tr.time, tr.state));
        }
        out
    }
}
