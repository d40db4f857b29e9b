//! Frozen-regime Heston reference prices.
//!
//! With the regime held at `i`, the minimal-martingale dynamics are a plain
//! Heston model with short rate `r(i)` and variance mean `effective_theta(i)`.
//! Calls are priced from the characteristic function, every other payoff is
//! reduced to calls.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{PayoffSpec, RegimeParams};
use crate::quadrature::{integrate_vec, AdaptiveOptions};

/// Exponents above this are clipped before exponentiation.
const EXP_CLIP: f64 = 700.0;
/// Largest admissible upper limit of the Fourier integral.
const MAX_UPPER: f64 = 1.0e6;
/// Below this `|g|` the logarithm difference is expanded in a series.
const SERIES_SWITCH: f64 = 1e-6;

/// Value of the characteristic function and whether the exponent was clipped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CharFnValue {
    pub value: Complex64,
    pub clipped: bool,
}

/// Heston coefficients of one frozen regime under the martingale measure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrozenHeston {
    pub kappa: f64,
    pub mean: f64,
    pub sigma: f64,
    pub rho: f64,
    pub rate: f64,
}

impl FrozenHeston {
    pub fn new(params: &RegimeParams, i: usize) -> Self {
        let c = params.regime(i);
        Self {
            kappa: c.kappa,
            mean: params.effective_theta(i),
            sigma: c.sigma,
            rho: params.rho(),
            rate: c.r,
        }
    }

    /// `(C, D)` with `log E[exp(i u log S_T)] = C + D v + i u log s`.
    ///
    /// Written so that no term divides by `sigma`, which keeps the
    /// `sigma -> 0` limit exact, and so that the complex logarithm never
    /// crosses its branch cut.
    pub fn exponents(&self, u: Complex64, tau: f64) -> (Complex64, Complex64) {
        let i = Complex64::i();
        let q = u * u + i * u;
        let beta = self.kappa - self.rho * self.sigma * i * u;
        let s2 = self.sigma * self.sigma;
        let mut d = (beta * beta + s2 * q).sqrt();
        if d.re < 0.0 {
            d = -d;
        }
        let bd = beta + d;
        let gamma = -q / (bd * bd);
        let g = s2 * gamma;
        let e = (-d * tau).exp();
        let d_coef = -q / bd * (1.0 - e) / (1.0 - g * e);
        let log_term = if g.norm() < SERIES_SWITCH {
            // (2 / sigma^2) [log(1 - g e) - log(1 - g)] expanded in g
            2.0 * gamma * ((1.0 - e) + 0.5 * g * (1.0 - e * e) + g * g * (1.0 - e * e * e) / 3.0)
        } else {
            2.0 / s2 * ((1.0 - g * e).ln() - (1.0 - g).ln())
        };
        let c_coef = self.rate * i * u * tau + self.kappa * self.mean * (-q * tau / bd - log_term);
        (c_coef, d_coef)
    }
}

fn clipped_exp(z: Complex64) -> (Complex64, bool) {
    if z.re > EXP_CLIP {
        (Complex64::from_polar(EXP_CLIP.exp(), z.im), true)
    } else {
        (z.exp(), false)
    }
}

/// Characteristic function of `log S_T` given `S_t = s`, `V_t = v` and a gap
/// `t_gap = T - t`, with regime `i` frozen.
pub fn char_fn(params: &RegimeParams, i: usize, arg: Complex64, t_gap: f64, s: f64, v: f64) -> Result<CharFnValue> {
    if !(t_gap >= 0.0) {
        return Err(Error::param("t_gap", "must be non-negative"));
    }
    if i >= params.state_count() {
        return Err(Error::OutOfRange(format!("regime {i}")));
    }
    let (c, d) = FrozenHeston::new(params, i).exponents(arg, t_gap);
    let (value, clipped) = clipped_exp(c + d * v + Complex64::i() * arg * s.ln());
    Ok(CharFnValue { value, clipped })
}

/// A priced claim in a frozen regime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HestonQuote {
    pub price: f64,
    pub regime: usize,
    pub maturity_gap: f64,
    pub payoff: PayoffSpec,
}

/// Call prices for every `(strike, v, s)` combination, laid out with `s`
/// fastest and `strike` slowest.
///
/// Uses `C = e^{-r tau} [ (s e^{r tau} - K) / 2 + (1/pi) ∫_0^∞ Re( e^{-i u log K}
/// (φ(u - i) - K φ(u)) / (i u) ) du ]`, the two classical probability integrals
/// merged under one integral sign.
pub fn call_prices(
    params: &RegimeParams,
    i: usize,
    tau: f64,
    strikes: &[f64],
    spots: &[f64],
    variances: &[f64],
) -> Result<Vec<f64>> {
    if i >= params.state_count() {
        return Err(Error::OutOfRange(format!("regime {i}")));
    }
    if !(tau >= 0.0) {
        return Err(Error::param("maturity gap", "must be non-negative"));
    }
    if spots.iter().any(|&s| !(s > 0.0)) || variances.iter().any(|&v| !(v >= 0.0)) || strikes.iter().any(|&k| !(k > 0.0)) {
        return Err(Error::param("call inputs", "spots and strikes must be positive, variances non-negative"));
    }
    let model = FrozenHeston::new(params, i);
    let disc = (-model.rate * tau).exp();
    let (ns, nv, nk) = (spots.len(), variances.len(), strikes.len());
    let dim = ns * nv * nk;
    if tau == 0.0 || dim == 0 {
        let mut out = Vec::with_capacity(dim);
        for &k in strikes {
            for _ in variances {
                out.extend(spots.iter().map(|&s| (s - k).max(0.0)));
            }
        }
        return Ok(out);
    }
    let log_k: Vec<f64> = strikes.iter().map(|k| k.ln()).collect();
    let log_s: Vec<f64> = spots.iter().map(|s| s.ln()).collect();
    let s_max = spots.iter().cloned().fold(0.0, f64::max);
    let k_max = strikes.iter().cloned().fold(0.0, f64::max);
    let v_min = variances.iter().cloned().fold(f64::INFINITY, f64::min);
    let scale = s_max.max(k_max);

    let envelope = |u: f64| -> f64 {
        let z = Complex64::new(u, 0.0);
        let (c1, d1) = model.exponents(z - Complex64::i(), tau);
        let (c0, d0) = model.exponents(z, tau);
        let a1 = (c1.re + d1.re * v_min).min(EXP_CLIP).exp();
        let a0 = (c0.re + d0.re * v_min).min(EXP_CLIP).exp();
        (s_max * a1 + k_max * a0) / u
    };
    let mut upper = 8.0;
    while envelope(upper) > 1e-14 * scale || envelope(2.0 * upper) > 1e-14 * scale {
        upper *= 2.0;
        if upper > MAX_UPPER {
            return Err(Error::Quadrature {
                achieved: envelope(upper),
                target: 1e-14 * scale,
            });
        }
    }

    let mut rot = vec![Complex64::new(0.0, 0.0); ns * nk];
    let integrand = |u: f64, out: &mut [f64]| {
        let z = Complex64::new(u, 0.0);
        let (c1, d1) = model.exponents(z - Complex64::i(), tau);
        let (c0, d0) = model.exponents(z, tau);
        let inv_iu = Complex64::new(0.0, -1.0 / u);
        for (kk, &lk) in log_k.iter().enumerate() {
            for (a, &ls) in log_s.iter().enumerate() {
                // e^{-i u log(K/s)}
                rot[kk * ns + a] = Complex64::from_polar(1.0, -u * (lk - ls));
            }
        }
        for (b, &v) in variances.iter().enumerate() {
            let a1 = clipped_exp(c1 + d1 * v).0;
            let a0 = clipped_exp(c0 + d0 * v).0;
            for (kk, &k) in strikes.iter().enumerate() {
                let base = (kk * nv + b) * ns;
                for a in 0..ns {
                    let w = (spots[a] * a1 - k * a0) * inv_iu;
                    out[base + a] = (rot[kk * ns + a] * w).re;
                }
            }
        }
    };
    let opts = AdaptiveOptions {
        abs_tol: 1e-10 * scale,
        rel_tol: 1e-12,
        max_panels: 200_000,
        initial_panels: ((upper / 2.0) as usize).clamp(8, 4096),
    };
    let integral = integrate_vec(integrand, 0.0, upper, dim, opts)?;
    let mut out = Vec::with_capacity(dim);
    for (kk, &k) in strikes.iter().enumerate() {
        for b in 0..nv {
            for (a, &s) in spots.iter().enumerate() {
                let raw = disc * (0.5 * (s / disc - k) + integral[(kk * nv + b) * ns + a] / PI);
                let lower = (s - k * disc).max(0.0);
                out.push(raw.clamp(lower, s));
            }
        }
    }
    Ok(out)
}

/// Prices of `payoff` on the `(v, s)` grid at maturity gap `tau`, laid out
/// with `s` fastest.
pub fn hest_grid(
    params: &RegimeParams,
    i: usize,
    tau: f64,
    spots: &[f64],
    variances: &[f64],
    payoff: &PayoffSpec,
) -> Result<Vec<f64>> {
    payoff.validate()?;
    if i >= params.state_count() {
        return Err(Error::OutOfRange(format!("regime {i}")));
    }
    let disc = (-params.regime(i).r * tau).exp();
    let n = spots.len() * variances.len();
    match *payoff {
        PayoffSpec::Unit => Ok(vec![disc; n]),
        PayoffSpec::Call { strike } => call_prices(params, i, tau, &[strike], spots, variances),
        PayoffSpec::Put { strike } => {
            let calls = call_prices(params, i, tau, &[strike], spots, variances)?;
            Ok(calls
                .iter()
                .enumerate()
                .map(|(idx, c)| (c - spots[idx % spots.len()] + strike * disc).max(0.0))
                .collect())
        }
        PayoffSpec::Butterfly { center, half_width } => {
            let calls = call_prices(params, i, tau, &[center - half_width, center, center + half_width], spots, variances)?;
            Ok((0..n)
                .map(|idx| (calls[idx] - 2.0 * calls[n + idx] + calls[2 * n + idx]).max(0.0))
                .collect())
        }
    }
}

/// `Hest(t, s, v, i)`: the time-`t` value of `payoff` paid at `horizon`
/// with the regime frozen at `i`.
pub fn hest(params: &RegimeParams, i: usize, t: f64, s: f64, v: f64, payoff: &PayoffSpec, horizon: f64) -> Result<f64> {
    if !(t <= horizon) {
        return Err(Error::OutOfRange(format!("time {t} beyond horizon {horizon}")));
    }
    Ok(hest_grid(params, i, horizon - t, &[s], &[v], payoff)?[0])
}

pub fn quote(params: &RegimeParams, i: usize, t: f64, s: f64, v: f64, payoff: &PayoffSpec, horizon: f64) -> Result<HestonQuote> {
    Ok(HestonQuote {
        price: hest(params, i, t, s, v, payoff, horizon)?,
        regime: i,
        maturity_gap: horizon - t,
        payoff: *payoff,
    })
}
