//! Fixed-point solution of the pricing integral equation on a tensor grid.
//!
//! For a node `(t, s, v, i, y)` the operator is
//!
//! ```text
//! (Aφ) = w_surv(i, y, T - t) Hest(t, s, v, i)
//!      + Σ_{j≠i} ∫_0^{T-t} e^{-r(i) u} λ_ij(y + u) e^{-(Λ_i(y+u) - Λ_i(y))}
//!                  E[φ(t + u, s R_u, V_u, j, 0)] du
//! ```
//!
//! where `(R_u, V_u)` follow the frozen-regime minimal-martingale dynamics
//! started at `(1, v)`. The expectation is taken over a fixed Monte Carlo
//! cloud per `(i, v-node, u-node)`. Because the spot grid is log-uniform a
//! cloud acts on every spot node by the same shift pattern, so each cloud is
//! stored once as a sparse kernel of `(spot shift, variance node, weight)`.
//! Reusing the clouds across iterations makes the discrete operator a
//! deterministic affine map.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{cell_weight, extend, FieldGrid, GridSpec, PriceField};
use crate::heston;
use crate::model::{MarketState, PayoffSpec, RegimeParams};
use crate::quadrature::gauss_legendre_unit;
use crate::rng::{self, StreamDomain};
use crate::sde::frozen_regime_clouds;
use crate::semi_markov::HazardSpec;

/// How the iteration is started.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitialField {
    /// The payoff, constant in time.
    #[default]
    Payoff,
    /// The frozen-regime Heston price.
    Heston,
}

/// Resolution and iteration controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    pub n_t: usize,
    pub n_s: usize,
    pub n_v: usize,
    pub n_y: usize,
    /// Spot range is `[s0 / s_ratio, s0 * s_ratio]`.
    pub s_ratio: f64,
    pub v_min: f64,
    /// `v_max = v_max_factor * max theta`.
    pub v_max_factor: f64,
    /// Gauss-Legendre nodes per time panel for the `u` integral.
    pub gauss_nodes: usize,
    pub inner_samples: usize,
    pub cloud_dt: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub init: InitialField,
    pub seed: u64,
    /// Rescale each cloud so that `E[R_u] = e^{r u}` holds exactly.
    pub martingale_correction: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            n_t: 41,
            n_s: 81,
            n_v: 21,
            n_y: 11,
            s_ratio: 5.0,
            v_min: 1e-4,
            v_max_factor: 8.0,
            gauss_nodes: 16,
            inner_samples: 4096,
            cloud_dt: 1.0 / 512.0,
            tol: 1e-7,
            max_iter: 200,
            init: InitialField::Payoff,
            seed: 0,
            martingale_correction: true,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        if self.gauss_nodes == 0 || self.gauss_nodes > 64 {
            return Err(Error::param("solver.gauss_nodes", "must be between 1 and 64"));
        }
        if self.inner_samples < 2 {
            return Err(Error::param("solver.inner_samples", "must be at least 2"));
        }
        if !(self.cloud_dt > 0.0) {
            return Err(Error::param("solver.cloud_dt", "must be positive"));
        }
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::param("solver.tol", "tolerance and iteration cap must be positive"));
        }
        if !(self.v_min > 0.0 && self.v_max_factor > 0.0) {
            return Err(Error::param("solver.v_min", "variance range must be positive"));
        }
        Ok(())
    }
}

/// `(1 - F(y + Δ | i)) / (1 - F(y | i))`, formed from cumulative hazards.
pub fn survival_weight(hazard: &HazardSpec, i: usize, y: f64, delta: f64) -> f64 {
    hazard.survival(i, y, delta)
}

/// `f(y + u | i) / (1 - F(y | i))`.
pub fn density_weight(hazard: &HazardSpec, i: usize, y: f64, u: f64) -> f64 {
    hazard.total_rate(i, y + u) * hazard.survival(i, y, u)
}

/// Diagnostics of a solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub iterations: usize,
    /// `sup |φ_{k+1} - φ_k| / (1 + s)` after each application.
    pub norms: Vec<f64>,
    /// Ratios of successive norms.
    pub ratios: Vec<f64>,
    /// Largest observed ratio; zero when fewer than two differences exist.
    pub empirical_ratio: f64,
    /// Grid surrogate of the analytic contraction bound.
    pub q_bound: f64,
    pub inner_samples: usize,
    pub u_nodes_per_panel: usize,
    pub converged: bool,
    /// Smallest node value.
    pub min_value: f64,
    /// `max (|φ - c1 s| - c2)^+` over the nodes.
    pub band_excess: f64,
    #[serde(skip)]
    pub wall_time: Duration,
}

/// Converged field together with its report.
#[derive(Debug, Clone)]
pub struct Solution {
    pub field: PriceField,
    pub report: SolverReport,
}

/// One sparse cloud kernel entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelEntry {
    pub shift: i32,
    pub v_node: u32,
    pub weight: f64,
}

/// Cloud for one `(i, v-node, u-node)` in histogram form.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Kernel {
    pub entries: Vec<KernelEntry>,
    pub min_shift: i32,
    pub max_shift: i32,
}

impl Kernel {
    /// Spreads every sample `(log R, V)` over its interpolation nodes.
    pub fn from_cloud(grid: &FieldGrid, log_ratios: &[f64], variances: &[f64]) -> Self {
        let h = grid.log_step();
        let nv = grid.variances.len();
        let n = log_ratios.len();
        if n == 0 {
            return Self::default();
        }
        let positions: Vec<(i32, f64, usize, f64)> = log_ratios
            .iter()
            .zip(variances)
            .map(|(&lr, &v)| {
                let x = lr / h;
                let node = x.floor();
                let (c, wv) = grid.variance_bracket(v);
                (node as i32, cell_weight(x - node, h), c, wv)
            })
            .collect();
        let lo = positions.iter().map(|p| p.0).min().unwrap();
        let hi = positions.iter().map(|p| p.0).max().unwrap() + 1;
        let width = (hi - lo + 1) as usize;
        let mut dense = vec![0.0; width * nv];
        let inv = 1.0 / n as f64;
        for &(node, ws, c, wv) in &positions {
            let k = (node - lo) as usize;
            dense[c * width + k] += (1.0 - ws) * (1.0 - wv) * inv;
            dense[c * width + k + 1] += ws * (1.0 - wv) * inv;
            if wv > 0.0 {
                dense[(c + 1) * width + k] += (1.0 - ws) * wv * inv;
                dense[(c + 1) * width + k + 1] += ws * wv * inv;
            }
        }
        let mut entries = Vec::new();
        for c in 0..nv {
            for k in 0..width {
                let w = dense[c * width + k];
                if w != 0.0 {
                    entries.push(KernelEntry {
                        shift: lo + k as i32,
                        v_node: c as u32,
                        weight: w,
                    });
                }
            }
        }
        let min_shift = entries.iter().map(|e| e.shift).min().unwrap_or(0);
        let max_shift = entries.iter().map(|e| e.shift).max().unwrap_or(0);
        Self {
            entries,
            min_shift,
            max_shift,
        }
    }

    /// Adds the kernel applied to padded spot slices into `out`.
    /// `rows[c]` holds the slice for variance node `c`, padded by `pad`
    /// virtual nodes on the left.
    #[inline]
    pub fn apply(&self, rows: &[&[f64]], pad: usize, out: &mut [f64]) {
        let ns = out.len();
        for e in &self.entries {
            let start = (pad as i64 + e.shift as i64) as usize;
            let row = &rows[e.v_node as usize][start..start + ns];
            let w = e.weight;
            for (o, r) in out.iter_mut().zip(row) {
                *o += w * r;
            }
        }
    }
}

/// Monte Carlo average of `φ(t', s R_m, V_m, j, 0)` over a cloud.
pub fn inner_expectation(field: &PriceField, log_ratios: &[f64], variances: &[f64], j: usize, t_prime: f64, s: f64) -> f64 {
    let sum: f64 = log_ratios
        .iter()
        .zip(variances)
        .map(|(&lr, &v)| field.value_extended(t_prime, s * lr.exp(), v, j, 0.0))
        .sum();
    sum / log_ratios.len() as f64
}

/// Precomputed grids, weights and cloud kernels for one model.
pub struct IeSolver<'a> {
    params: &'a RegimeParams,
    hazard: &'a HazardSpec,
    settings: SolverSettings,
    grid: FieldGrid,
    /// `u` offsets within a panel, as fractions of the panel.
    fractions: Vec<f64>,
    /// `[i][y][n]`
    survival: Vec<f64>,
    /// `[i][j][y][p]` with `p = panel * gauss_nodes + q`.
    weights: Vec<f64>,
    /// `[i][c][p]`; empty for regimes without exits.
    kernels: Vec<Kernel>,
    pad_lo: usize,
    pad_hi: usize,
}

impl<'a> IeSolver<'a> {
    /// Builds grids around the initial state, which is placed on a spot and
    /// a variance node, and simulates every cloud.
    pub fn new(
        params: &'a RegimeParams,
        hazard: &'a HazardSpec,
        horizon: f64,
        initial: &MarketState,
        settings: SolverSettings,
    ) -> Result<Self> {
        let (s0, initial_age) = (initial.s, initial.age);
        settings.validate()?;
        if params.state_count() != hazard.state_count() {
            return Err(Error::Config("regime and hazard state counts differ".into()));
        }
        let k = params.state_count();
        let theta_max = (0..k)
            .map(|i| params.regime(i).theta.max(params.effective_theta(i)))
            .fold(0.0, f64::max);
        let grid = FieldGrid::new(&GridSpec {
            horizon,
            s_center: s0,
            s_ratio: settings.s_ratio,
            v_min: settings.v_min,
            v_max: settings.v_max_factor * theta_max,
            v_anchor: Some(initial.v),
            y_max: horizon + initial_age,
            n_t: settings.n_t,
            n_s: settings.n_s,
            n_v: settings.n_v,
            n_y: settings.n_y,
            regimes: k,
        })?;
        let (fractions, gl) = gauss_legendre_unit(settings.gauss_nodes);
        let q_n = fractions.len();
        let n_t = grid.times.len();
        let dt = grid.time_step();
        let panels = n_t - 1;
        let n_p = panels * q_n;
        let ny = grid.ages.len();
        let nv = grid.variances.len();

        let mut survival = vec![0.0; k * ny * n_t];
        for i in 0..k {
            for (yy, &y) in grid.ages.iter().enumerate() {
                for (n, &t) in grid.times.iter().enumerate() {
                    survival[(i * ny + yy) * n_t + n] = survival_weight(hazard, i, y, horizon - t);
                }
            }
        }
        let mut weights = vec![0.0; k * k * ny * n_p];
        for i in 0..k {
            let r = params.regime(i).r;
            for j in (0..k).filter(|&j| j != i) {
                if hazard.family(i, j).is_none() {
                    continue;
                }
                for (yy, &y) in grid.ages.iter().enumerate() {
                    for p in 0..n_p {
                        let (panel, q) = (p / q_n, p % q_n);
                        let u = (panel as f64 + fractions[q]) * dt;
                        let w = dt * gl[q] * (-r * u).exp() * hazard.rate(i, j, y + u) * hazard.survival(i, y, u);
                        weights[((i * k + j) * ny + yy) * n_p + p] = w;
                    }
                }
            }
        }

        let horizons: Vec<f64> = (0..n_p)
            .map(|p| (((p / q_n) as f64) + fractions[p % q_n]) * dt)
            .collect();
        let tasks: Vec<(usize, usize)> = (0..k)
            .filter(|&i| hazard.has_exits(i))
            .flat_map(|i| (0..nv).map(move |c| (i, c)))
            .collect();
        let built: Vec<Result<Vec<Kernel>>> = tasks
            .par_iter()
            .map(|&(i, c)| {
                let mut rng = rng::stream(settings.seed, StreamDomain::Cloud, (i * nv + c) as u64);
                let r = params.regime(i).r;
                let mut kernels = Vec::with_capacity(n_p);
                let mut shifted = vec![0.0; settings.inner_samples];
                frozen_regime_clouds(
                    params,
                    i,
                    grid.variances[c],
                    &horizons,
                    settings.inner_samples,
                    settings.cloud_dt,
                    &mut rng,
                    |p, log_r, var| {
                        let adjust = if settings.martingale_correction {
                            let mean = log_r.iter().map(|x| x.exp()).sum::<f64>() / log_r.len() as f64;
                            r * horizons[p] - mean.ln()
                        } else {
                            0.0
                        };
                        for (dst, &x) in shifted.iter_mut().zip(log_r) {
                            *dst = x + adjust;
                        }
                        kernels.push(Kernel::from_cloud(&grid, &shifted, var));
                    },
                )?;
                Ok(kernels)
            })
            .collect();
        let mut kernels = vec![Kernel::default(); k * nv * n_p];
        for (&(i, c), ks) in tasks.iter().zip(built) {
            for (p, kern) in ks?.into_iter().enumerate() {
                kernels[(i * nv + c) * n_p + p] = kern;
            }
        }
        let pad_lo = kernels.iter().map(|k| (-k.min_shift).max(0)).max().unwrap_or(0) as usize;
        let pad_hi = kernels.iter().map(|k| k.max_shift.max(0)).max().unwrap_or(0) as usize;
        Ok(Self {
            params,
            hazard,
            settings,
            grid,
            fractions,
            survival,
            weights,
            kernels,
            pad_lo,
            pad_hi,
        })
    }

    pub fn grid(&self) -> &FieldGrid {
        &self.grid
    }

    pub fn settings(&self) -> &SolverSettings {
        &self.settings
    }

    fn n_p(&self) -> usize {
        (self.grid.times.len() - 1) * self.fractions.len()
    }

    /// Kernel of the cloud for regime `i`, variance node `c` and `u`-node `p`.
    pub fn kernel(&self, i: usize, c: usize, p: usize) -> &Kernel {
        &self.kernels[(i * self.grid.variances.len() + c) * self.n_p() + p]
    }

    /// `u` value of node `p`.
    pub fn u_node(&self, p: usize) -> f64 {
        let q_n = self.fractions.len();
        ((p / q_n) as f64 + self.fractions[p % q_n]) * self.grid.time_step()
    }

    fn weight(&self, i: usize, j: usize, y: usize, p: usize) -> f64 {
        let k = self.grid.regimes;
        let ny = self.grid.ages.len();
        self.weights[((i * k + j) * ny + y) * self.n_p() + p]
    }

    /// Frozen-regime prices at `[n][i][c][a]`; the last time slice holds the
    /// payoff.
    pub fn heston_table(&self, payoff: &PayoffSpec) -> Result<Vec<f64>> {
        payoff.validate()?;
        let g = &self.grid;
        let [n_t, k, _, nv, ns] = g.dims();
        let horizon = g.horizon();
        let jobs: Vec<(usize, usize)> = (0..n_t).flat_map(|n| (0..k).map(move |i| (n, i))).collect();
        let slabs: Vec<Result<Vec<f64>>> = jobs
            .par_iter()
            .map(|&(n, i)| {
                if n + 1 == n_t {
                    let mut slab = Vec::with_capacity(nv * ns);
                    for _ in 0..nv {
                        slab.extend(g.spots.iter().map(|&s| payoff.value(s)));
                    }
                    Ok(slab)
                } else {
                    heston::hest_grid(self.params, i, horizon - g.times[n], &g.spots, &g.variances, payoff)
                }
            })
            .collect();
        let mut out = Vec::with_capacity(n_t * k * nv * ns);
        for slab in slabs {
            out.extend(slab?);
        }
        Ok(out)
    }

    /// Padded `y = 0` slices `[j][m][c]` of `field`.
    fn padded_slices(&self, field: &PriceField) -> Vec<Vec<f64>> {
        let g = &self.grid;
        let [n_t, k, _, nv, ns] = g.dims();
        let width = self.pad_lo + ns + self.pad_hi;
        let c1 = field.payoff.c1();
        let mut rows = Vec::with_capacity(k * n_t * nv);
        for j in 0..k {
            for m in 0..n_t {
                for c in 0..nv {
                    let slice = field.slice(m, j, 0, c);
                    rows.push(
                        (0..width)
                            .map(|e| extend(slice, e as isize - self.pad_lo as isize, g, c1))
                            .collect(),
                    );
                }
            }
        }
        rows
    }

    /// One application of the operator.
    pub fn apply_operator(&self, hest: &[f64], input: &PriceField) -> Result<PriceField> {
        let g = &self.grid;
        let [n_t, k, ny, nv, ns] = g.dims();
        if input.grid != *g || hest.len() != n_t * k * nv * ns {
            return Err(Error::Internal("operator input does not match the solver grid".into()));
        }
        let rows = self.padded_slices(input);
        let q_n = self.fractions.len();
        let n_p = self.n_p();
        let tasks: Vec<(usize, usize)> = (0..k).flat_map(|i| (0..nv).map(move |c| (i, c))).collect();
        let jump_parts: Vec<Vec<f64>> = tasks
            .par_iter()
            .map(|&(i, c)| {
                let mut acc = vec![0.0; n_t * ny * ns];
                if !self.hazard.has_exits(i) {
                    return acc;
                }
                let mut h = vec![0.0; n_t * ns];
                let mut mix = vec![0.0; ns];
                for j in (0..k).filter(|&j| j != i && self.hazard.family(i, j).is_some()) {
                    for p in 0..n_p {
                        let (panel, q) = (p / q_n, p % q_n);
                        let xi = self.fractions[q];
                        let kernel = self.kernel(i, c, p);
                        for m in panel..n_t {
                            let row_refs: Vec<&[f64]> =
                                (0..nv).map(|cc| rows[(j * n_t + m) * nv + cc].as_slice()).collect();
                            let hm = &mut h[m * ns..(m + 1) * ns];
                            hm.iter_mut().for_each(|x| *x = 0.0);
                            kernel.apply(&row_refs, self.pad_lo, hm);
                        }
                        for n in 0..n_t - 1 - panel {
                            let (lo, hi) = (&h[(n + panel) * ns..(n + panel + 1) * ns], &h[(n + panel + 1) * ns..(n + panel + 2) * ns]);
                            for a in 0..ns {
                                mix[a] = (1.0 - xi) * lo[a] + xi * hi[a];
                            }
                            for yy in 0..ny {
                                let w = self.weight(i, j, yy, p);
                                if w == 0.0 {
                                    continue;
                                }
                                let dst = &mut acc[(n * ny + yy) * ns..(n * ny + yy + 1) * ns];
                                for a in 0..ns {
                                    dst[a] += w * mix[a];
                                }
                            }
                        }
                    }
                }
                acc
            })
            .collect();
        let mut values = vec![0.0; g.len()];
        for (&(i, c), acc) in tasks.iter().zip(&jump_parts) {
            for n in 0..n_t {
                for yy in 0..ny {
                    let dst = g.index(n, i, yy, c, 0);
                    if n + 1 == n_t {
                        for a in 0..ns {
                            values[dst + a] = input.payoff.value(g.spots[a]);
                        }
                        continue;
                    }
                    let surv = self.survival[(i * ny + yy) * n_t + n];
                    let hrow = ((n * k + i) * nv + c) * ns;
                    for a in 0..ns {
                        values[dst + a] = surv * hest[hrow + a] + acc[(n * ny + yy) * ns + a];
                    }
                }
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("operator produced a non-finite value".into()));
        }
        PriceField::new(g.clone(), input.payoff, values)
    }

    /// Starting field selected by the settings.
    pub fn initial_field(&self, payoff: &PayoffSpec, hest: &[f64]) -> PriceField {
        let g = &self.grid;
        match self.settings.init {
            InitialField::Payoff => PriceField::from_payoff(g.clone(), *payoff),
            InitialField::Heston => {
                let [n_t, k, ny, nv, ns] = g.dims();
                let mut values = vec![0.0; g.len()];
                for n in 0..n_t {
                    for i in 0..k {
                        for yy in 0..ny {
                            for c in 0..nv {
                                let src = ((n * k + i) * nv + c) * ns;
                                let dst = g.index(n, i, yy, c, 0);
                                values[dst..dst + ns].copy_from_slice(&hest[src..src + ns]);
                            }
                        }
                    }
                }
                PriceField {
                    grid: g.clone(),
                    payoff: *payoff,
                    values,
                }
            }
        }
    }

    /// `sup |a - b| / (1 + s)` over the nodes.
    pub fn u_norm_distance(&self, a: &PriceField, b: &PriceField) -> f64 {
        let ns = self.grid.spots.len();
        a.values
            .iter()
            .zip(&b.values)
            .enumerate()
            .map(|(idx, (x, y))| (x - y).abs() / (1.0 + self.grid.spots[idx % ns]))
            .fold(0.0, f64::max)
    }

    /// Grid surrogate of the contraction bound: the largest
    /// `∫ e^{-r u} dens(u) (1 + s e^{r u}) / (1 + s) du` over the nodes.
    pub fn q_bound(&self) -> f64 {
        let g = &self.grid;
        let [n_t, k, ny, _, _] = g.dims();
        let s = *g.spots.last().unwrap();
        let q_n = self.fractions.len();
        let mut best: f64 = 0.0;
        for i in 0..k {
            let r = self.params.regime(i).r;
            for yy in 0..ny {
                for n in 0..n_t - 1 {
                    let mut total = 0.0;
                    for j in (0..k).filter(|&j| j != i) {
                        for p in 0..(n_t - 1 - n) * q_n {
                            let u = self.u_node(p);
                            total += self.weight(i, j, yy, p) * (1.0 + s * (r * u).exp()) / (1.0 + s);
                        }
                    }
                    best = best.max(total);
                }
            }
        }
        best
    }

    /// Iterates the operator from `init` until the U-norm step falls below
    /// the tolerance.
    pub fn solve_from(&self, hest: &[f64], init: PriceField) -> Result<Solution> {
        let start = Instant::now();
        let mut current = init;
        let mut norms = Vec::new();
        let mut ratios = Vec::new();
        let frozen = (0..self.grid.regimes).all(|i| !self.hazard.has_exits(i));
        let mut converged = false;
        for _ in 0..self.settings.max_iter {
            let next = self.apply_operator(hest, &current)?;
            let norm = self.u_norm_distance(&next, &current);
            if let Some(&prev) = norms.last() {
                if prev > 0.0 {
                    ratios.push(norm / prev);
                }
            }
            norms.push(norm);
            current = next;
            // without transitions the operator is constant, one application is exact
            if frozen || norm < self.settings.tol {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NonConvergence {
                iterations: norms.len(),
                ratios,
            });
        }
        let report = SolverReport {
            iterations: norms.len(),
            empirical_ratio: ratios.iter().cloned().fold(0.0, f64::max),
            norms,
            ratios,
            q_bound: self.q_bound(),
            inner_samples: self.settings.inner_samples,
            u_nodes_per_panel: self.fractions.len(),
            converged,
            min_value: current.values.iter().cloned().fold(f64::INFINITY, f64::min),
            band_excess: band_excess(&current),
            wall_time: start.elapsed(),
        };
        Ok(Solution { field: current, report })
    }

    /// Solves for `payoff` from the configured initial field.
    pub fn solve(&self, payoff: &PayoffSpec) -> Result<Solution> {
        let hest = self.heston_table(payoff)?;
        let init = self.initial_field(payoff, &hest);
        self.solve_from(&hest, init)
    }

    /// Numerical uncertainty of node `(n, i, y, c, a)`: the standard error
    /// of the cloud averages feeding it, the `u`-quadrature defect measured
    /// on the affine part of the field, and the remaining fixed-point error
    /// implied by the report.
    pub fn node_uncertainty(&self, solution: &Solution, n: usize, i: usize, y: usize, c: usize, a: usize) -> f64 {
        let g = &self.grid;
        let [n_t, k, ny, _, _] = g.dims();
        let field = &solution.field;
        let q_n = self.fractions.len();
        let (c1, c2) = (field.payoff.c1(), field.payoff.c2());
        let mut se = 0.0;
        let mut mass = 0.0;
        if n + 1 < n_t && self.hazard.has_exits(i) {
            let r = self.params.regime(i).r;
            for j in (0..k).filter(|&j| j != i) {
                for p in 0..(n_t - 1 - n) * q_n {
                    let w = self.weight(i, j, y, p);
                    if w == 0.0 {
                        continue;
                    }
                    mass += w * (r * self.u_node(p)).exp();
                    let panel = p / q_n;
                    let xi = self.fractions[p % q_n];
                    let (m0, m1) = (n + panel, n + panel + 1);
                    let (mut s1, mut s2) = (0.0, 0.0);
                    for e in &self.kernel(i, c, p).entries {
                        let node = a as isize + e.shift as isize;
                        let cc = e.v_node as usize;
                        let val = (1.0 - xi) * extend(field.slice(m0, j, 0, cc), node, g, c1)
                            + xi * extend(field.slice(m1, j, 0, cc), node, g, c1);
                        s1 += e.weight * val;
                        s2 += e.weight * val * val;
                    }
                    se += w * ((s2 - s1 * s1).max(0.0) / self.settings.inner_samples as f64).sqrt();
                }
            }
            let exact = 1.0 - self.survival[(i * ny + y) * n_t + n];
            se += (mass - exact).abs() * (c1 * g.spots[a] + c2);
        }
        let report = &solution.report;
        let last = report.norms.last().cloned().unwrap_or(0.0);
        let rho = report.empirical_ratio.min(0.99);
        se + last * rho / (1.0 - rho) * (1.0 + g.spots[a])
    }
}

/// `max (|φ - c1 s| - c2)^+` over the nodes of a field.
pub fn band_excess(field: &PriceField) -> f64 {
    let ns = field.grid.spots.len();
    let (c1, c2) = (field.payoff.c1(), field.payoff.c2());
    field
        .values
        .iter()
        .enumerate()
        .map(|(idx, &phi)| ((phi - c1 * field.grid.spots[idx % ns]).abs() - c2).max(0.0))
        .fold(0.0, f64::max)
}
