//! End-to-end operations on a [`Config`], producing serializable results
//! that carry the config hash, seed and crate version.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::field::PriceField;
use crate::hedging::{self, FsReport, HedgeQuote};
use crate::heston;
use crate::ie::{IeSolver, SolverReport, SolverSettings};
use crate::mc::{self, McEstimate};
use crate::model::{self, A1Report, A3Estimate, MarketState, PayoffSpec};
use crate::sde::{self, Measure, SimulationSpec};
use crate::semi_markov::HazardReport;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
}

impl Provenance {
    pub fn new(cfg: &Config, seed: u64) -> Self {
        Self {
            config_hash: cfg.hash().to_string(),
            seed,
            version: VERSION.to_string(),
        }
    }
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Internal(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

/// Parses `call:K`, `put:K`, `butterfly:C:W` or `unit`.
pub fn parse_payoff(text: &str) -> Result<PayoffSpec> {
    let parts: Vec<&str> = text.split(':').map(str::trim).collect();
    let num = |s: &str| s.parse::<f64>().map_err(|_| Error::Parse(format!("bad number '{s}' in payoff '{text}'")));
    let payoff = match parts.as_slice() {
        ["call", k] => PayoffSpec::Call { strike: num(k)? },
        ["put", k] => PayoffSpec::Put { strike: num(k)? },
        ["butterfly", c, w] => PayoffSpec::Butterfly {
            center: num(c)?,
            half_width: num(w)?,
        },
        ["unit"] => PayoffSpec::Unit,
        _ => return Err(Error::Parse(format!("unknown payoff '{text}'; use call:K, put:K, butterfly:C:W or unit"))),
    };
    payoff.validate()?;
    Ok(payoff)
}

/// Parses `t,s,v,i,y`.
pub fn parse_state(text: &str) -> Result<MarketState> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != 5 {
        return Err(Error::Parse(format!("state '{text}' must have the form t,s,v,i,y")));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|_| Error::Parse(format!("bad number '{s}' in state '{text}'")));
    let regime = parts[3]
        .parse::<usize>()
        .map_err(|_| Error::Parse(format!("bad regime '{}' in state '{text}'", parts[3])))?;
    Ok(MarketState::new(num(parts[0])?, num(parts[1])?, num(parts[2])?, regime, num(parts[4])?))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub provenance: Provenance,
    pub a1: Vec<A1Report>,
    pub a1_error: Option<String>,
    pub a1_pass: bool,
    pub hazards: HazardReport,
    pub a2_pass: bool,
    pub a2_messages: Vec<String>,
    /// Advisory only.
    pub a3: A3Estimate,
    pub passed: bool,
}

/// Assumption checks; `passed` ignores the advisory integrability flag.
pub fn validate(cfg: &Config, a3_paths: usize, seed: u64) -> Result<ValidationReport> {
    let (a1, a1_error) = match model::validate_a1(&cfg.params) {
        Ok(r) => (r, None),
        Err(e) => (Vec::new(), Some(e.to_string())),
    };
    let a1_pass = a1_error.is_none() && a1.iter().all(|r| r.pass);
    let hazards = cfg.hazard.check()?;
    let mut a2_messages = Vec::new();
    if cfg.params.state_count() > 1 {
        if !hazards.states_without_exit.is_empty() {
            a2_messages.push(format!(
                "assumption A2(ii): regimes {:?} have no exit rate, so their cumulative hazard stays bounded",
                hazards.states_without_exit
            ));
        }
        if !hazards.irreducible {
            a2_messages.push("assumption A2(iii): the embedded jump chain is reducible".to_string());
        }
    }
    let a2_pass = a2_messages.is_empty();
    let a3 = model::estimate_a3(&cfg.params, &cfg.hazard, &cfg.initial_state(), cfg.horizon(), a3_paths, seed)?;
    Ok(ValidationReport {
        provenance: Provenance::new(cfg, seed),
        a1,
        a1_error,
        a1_pass,
        hazards,
        a2_pass,
        a2_messages,
        a3,
        passed: a1_pass && a2_pass,
    })
}

/// A solved field with its report, possibly read back from the cache.
#[derive(Debug, Clone)]
pub struct SolvedField {
    pub field: PriceField,
    pub report: SolverReport,
    pub from_cache: bool,
}

fn cache_key(cfg: &Config, payoff: &PayoffSpec, settings: &SolverSettings) -> Result<String> {
    let payload = serde_json::to_string(&(cfg.hash(), payoff, settings)).map_err(|e| Error::Internal(e.to_string()))?;
    Ok(Sha256::digest(payload.as_bytes()).iter().take(12).map(|b| format!("{b:02x}")).collect())
}

/// Solves the integral equation for `payoff`, reusing a cached field under
/// `cache_dir` when one with the same key exists.
pub fn solve_field(cfg: &Config, payoff: &PayoffSpec, seed: u64, cache_dir: Option<&Path>) -> Result<SolvedField> {
    let settings = SolverSettings {
        seed,
        ..cfg.solver_settings()
    };
    let key = cache_key(cfg, payoff, &settings)?;
    let paths = cache_dir.map(|d| (d.join(format!("{key}.field")), d.join(format!("{key}.report.json"))));
    if let Some((field_path, report_path)) = &paths {
        if field_path.exists() && report_path.exists() {
            let field = PriceField::read_cache(&key, fs::File::open(field_path)?)?;
            let report: Option<SolverReport> = serde_json::from_str(&fs::read_to_string(report_path)?).ok();
            if let (Some(field), Some(report)) = (field, report) {
                return Ok(SolvedField {
                    field,
                    report,
                    from_cache: true,
                });
            }
        }
    }
    let initial = cfg.initial_state();
    let solver = IeSolver::new(&cfg.params, &cfg.hazard, cfg.horizon(), &initial, settings)?;
    let solution = solver.solve(payoff)?;
    if let Some((field_path, report_path)) = &paths {
        if let Some(dir) = field_path.parent() {
            fs::create_dir_all(dir)?;
        }
        solution.field.write_cache(&key, std::io::BufWriter::new(fs::File::create(field_path)?))?;
        fs::write(report_path, to_json(&solution.report)?)?;
    }
    Ok(SolvedField {
        field: solution.field,
        report: solution.report,
        from_cache: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriceMethod {
    Ie,
    Mc,
    Heston,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriceResult {
    pub provenance: Provenance,
    pub method: PriceMethod,
    pub state: MarketState,
    pub payoff: PayoffSpec,
    pub price: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mc: Option<McEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heston_regime: Option<usize>,
}

/// Options for [`price`] beyond the config.
#[derive(Debug, Clone, Default)]
pub struct PriceOptions {
    pub payoff: Option<PayoffSpec>,
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub dt: Option<f64>,
    pub regime: Option<usize>,
    pub cache_dir: Option<PathBuf>,
}

/// Prices at `state` with the chosen method. For the integral equation the
/// solved field is returned as well.
pub fn price(cfg: &Config, method: PriceMethod, state: &MarketState, opts: &PriceOptions) -> Result<(PriceResult, Option<PriceField>)> {
    let payoff = opts.payoff.unwrap_or(cfg.payoff());
    payoff.validate()?;
    let sim = cfg.simulation();
    let seed = opts.seed.unwrap_or(match method {
        PriceMethod::Ie => cfg.solver_settings().seed,
        _ => sim.seed,
    });
    state.validate(cfg.horizon(), cfg.file.initial.age, cfg.params.state_count())?;
    let mut result = PriceResult {
        provenance: Provenance::new(cfg, seed),
        method,
        state: *state,
        payoff,
        price: 0.0,
        mc: None,
        solver: None,
        heston_regime: None,
    };
    match method {
        PriceMethod::Ie => {
            let solved = solve_field(cfg, &payoff, seed, opts.cache_dir.as_deref())?;
            result.price = solved.field.value_at(state.t, state.s, state.v, state.regime, state.age)?;
            result.solver = Some(solved.report);
            Ok((result, Some(solved.field)))
        }
        PriceMethod::Mc => {
            let est = mc::price_mc(
                &cfg.params,
                &cfg.hazard,
                state,
                &payoff,
                cfg.horizon(),
                opts.paths.unwrap_or(sim.paths),
                opts.dt.unwrap_or(sim.dt),
                seed,
            )?;
            result.price = est.price;
            result.mc = Some(est);
            Ok((result, None))
        }
        PriceMethod::Heston => {
            let regime = opts.regime.unwrap_or(state.regime);
            result.price = heston::hest(&cfg.params, regime, state.t, state.s, state.v, &payoff, cfg.horizon())?;
            result.heston_regime = Some(regime);
            Ok((result, None))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HedgeResult {
    pub provenance: Provenance,
    pub state: MarketState,
    pub payoff: PayoffSpec,
    pub quote: HedgeQuote,
    /// `xi s + eps B - phi`.
    pub book_value_gap: f64,
}

pub fn hedge(
    cfg: &Config,
    state: &MarketState,
    payoff: Option<PayoffSpec>,
    bank: f64,
    seed: Option<u64>,
    cache_dir: Option<&Path>,
) -> Result<HedgeResult> {
    let payoff = payoff.unwrap_or(cfg.payoff());
    let seed = seed.unwrap_or(cfg.solver_settings().seed);
    let solved = solve_field(cfg, &payoff, seed, cache_dir)?;
    let quote = hedging::hedge_at(&solved.field, &cfg.params, state, bank)?;
    Ok(HedgeResult {
        provenance: Provenance::new(cfg, seed),
        state: *state,
        payoff,
        book_value_gap: quote.book_value_gap(state.s),
        quote,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FsCheckResult {
    pub provenance: Provenance,
    pub state: MarketState,
    pub payoff: PayoffSpec,
    pub solver_seed: u64,
    pub residual: FsReport,
}

#[allow(clippy::too_many_arguments)]
pub fn fs_check(
    cfg: &Config,
    state: &MarketState,
    payoff: Option<PayoffSpec>,
    paths: usize,
    dt: f64,
    seed: u64,
    solver_seed: Option<u64>,
    cache_dir: Option<&Path>,
) -> Result<FsCheckResult> {
    let payoff = payoff.unwrap_or(cfg.payoff());
    let solver_seed = solver_seed.unwrap_or(cfg.solver_settings().seed);
    let solved = solve_field(cfg, &payoff, solver_seed, cache_dir)?;
    let residual = hedging::fs_residual(&solved.field, &cfg.params, &cfg.hazard, state, paths, dt, seed)?;
    Ok(FsCheckResult {
        provenance: Provenance::new(cfg, seed),
        state: *state,
        payoff,
        solver_seed,
        residual,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulateResult {
    pub provenance: Provenance,
    pub measure: Measure,
    pub n_paths: usize,
    pub dt: f64,
    pub mean_terminal_stock: f64,
    pub mean_discounted_stock: f64,
    pub mean_terminal_variance: f64,
    pub mean_discount: f64,
    /// Fraction of time spent in each regime, averaged over paths and nodes.
    pub regime_occupancy: Vec<f64>,
    pub mean_transitions: f64,
}

/// Simulates from the configured initial state and summarizes the paths;
/// returns the stored bundle for optional dumping.
pub fn simulate(cfg: &Config, measure: Measure, paths: usize, dt: f64, seed: u64) -> Result<(SimulateResult, sde::PathBundle)> {
    let init = cfg.initial_state();
    let spec = SimulationSpec {
        s0: init.s,
        v0: init.v,
        regime0: init.regime,
        age0: init.age,
        horizon: cfg.horizon(),
        dt,
        measure,
    };
    let bundle = sde::simulate(&cfg.params, &cfg.hazard, spec, paths, seed)?;
    let n = bundle.path_count() as f64;
    let last = bundle.times.len() - 1;
    let mean = |f: &dyn Fn(usize) -> f64| (0..bundle.path_count()).map(f).sum::<f64>() / n;
    let k = cfg.params.state_count();
    let mut occupancy = vec![0.0; k];
    let mut transitions = 0.0;
    for p in 0..bundle.path_count() {
        for w in bundle.regime[p].windows(2) {
            if w[0] != w[1] {
                transitions += 1.0;
            }
        }
        for &x in &bundle.regime[p] {
            occupancy[x] += 1.0;
        }
    }
    let nodes = n * bundle.times.len() as f64;
    occupancy.iter_mut().for_each(|o| *o /= nodes);
    let result = SimulateResult {
        provenance: Provenance::new(cfg, seed),
        measure,
        n_paths: paths,
        dt,
        mean_terminal_stock: mean(&|p| bundle.stock[p][last]),
        mean_discounted_stock: mean(&|p| bundle.stock[p][last] * bundle.discount[p][last]),
        mean_terminal_variance: mean(&|p| bundle.variance[p][last]),
        mean_discount: mean(&|p| bundle.discount[p][last]),
        regime_occupancy: occupancy,
        mean_transitions: transitions / n,
    };
    Ok((result, bundle))
}
