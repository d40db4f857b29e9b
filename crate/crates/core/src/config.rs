//! TOML configuration.
//!
//! ```toml
//! horizon = 1.0
//! rho = -0.5
//!
//! [initial]
//! s = 100.0
//! v = 0.04
//! regime = 0
//! age = 0.0            # optional
//!
//! [[regimes]]
//! mu = 0.08
//! r = 0.03
//! kappa = 2.0
//! theta = 0.04
//! sigma = 0.2
//!
//! [[hazards]]          # pairs that are not listed never transition
//! from = 0
//! to = 1
//! family = "saturating"
//! rate = 1.0
//! amplitude = 1.0
//! timescale = 0.5
//!
//! [payoff]
//! kind = "call"
//! strike = 100.0
//!
//! [solver]             # optional, see SolverSettings
//! [simulation]         # optional: dt, paths, seed
//! ```
//!
//! Regime indices are zero-based.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ie::SolverSettings;
use crate::model::{MarketState, PayoffSpec, RegimeCoefficients, RegimeParams};
use crate::semi_markov::{HazardFamily, HazardSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    pub s: f64,
    pub v: f64,
    pub regime: usize,
    #[serde(default)]
    pub age: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HazardEntry {
    pub from: usize,
    pub to: usize,
    #[serde(flatten)]
    pub family: HazardFamily,
}

/// Monte Carlo controls shared by the oracle, the hedge check and path dumps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSettings {
    pub dt: f64,
    pub paths: usize,
    pub seed: u64,
}

impl Default for SimulationSettings {
    fn default() -> Self {
        Self {
            dt: 1.0 / 512.0,
            paths: 100_000,
            seed: 0,
        }
    }
}

/// The file as written by the user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub horizon: f64,
    pub rho: f64,
    pub initial: InitialSpec,
    pub regimes: Vec<RegimeCoefficients>,
    #[serde(default)]
    pub hazards: Vec<HazardEntry>,
    pub payoff: PayoffSpec,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default)]
    pub simulation: SimulationSettings,
}

/// A parsed and structurally checked configuration.
#[derive(Debug, Clone)]
pub struct Config {
    pub file: ConfigFile,
    pub params: RegimeParams,
    pub hazard: HazardSpec,
    hash: String,
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        Self::from_file(file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let file: ConfigFile = toml::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        Self::from_file(file)
    }

    pub fn from_file(file: ConfigFile) -> Result<Self> {
        if !(file.horizon > 0.0 && file.horizon.is_finite()) {
            return Err(Error::param("horizon", "must be positive"));
        }
        let params = RegimeParams::new(file.regimes.clone(), file.rho)?;
        let hazard = HazardSpec::new(params.state_count(), file.hazards.iter().map(|h| (h.from, h.to, h.family)))?;
        file.payoff.validate()?;
        file.solver.validate()?;
        let sim = &file.simulation;
        if !(sim.dt > 0.0 && sim.dt < file.horizon) {
            return Err(Error::param("simulation.dt", "must be positive and smaller than the horizon"));
        }
        if sim.paths < 2 {
            return Err(Error::param("simulation.paths", "must be at least 2"));
        }
        if file.initial.age < 0.0 {
            return Err(Error::param("initial.age", "must be non-negative"));
        }
        let hash = digest(&file)?;
        let cfg = Self {
            file,
            params,
            hazard,
            hash,
        };
        cfg.initial_state()
            .validate(cfg.file.horizon, cfg.file.initial.age, cfg.params.state_count())?;
        Ok(cfg)
    }

    /// Hex prefix of the SHA-256 of the canonical JSON form of the file.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn horizon(&self) -> f64 {
        self.file.horizon
    }

    pub fn payoff(&self) -> PayoffSpec {
        self.file.payoff
    }

    pub fn initial_state(&self) -> MarketState {
        let i = &self.file.initial;
        MarketState::new(0.0, i.s, i.v, i.regime, i.age)
    }

    pub fn solver_settings(&self) -> SolverSettings {
        self.file.solver
    }

    pub fn simulation(&self) -> SimulationSettings {
        self.file.simulation
    }
}

fn digest(file: &ConfigFile) -> Result<String> {
    let bytes = serde_json::to_vec(file).map_err(|e| Error::Internal(e.to_string()))?;
    let sum = Sha256::digest(&bytes);
    Ok(sum.iter().take(8).map(|b| format!("{b:02x}")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO: &str = r#"
horizon = 1.0
rho = -0.5
[initial]
s = 100.0
v = 0.04
regime = 0
[[regimes]]
mu = 0.08
r = 0.03
kappa = 2.0
theta = 0.04
sigma = 0.2
[[regimes]]
mu = 0.12
r = 0.05
kappa = 3.0
theta = 0.09
sigma = 0.3
[[hazards]]
from = 0
to = 1
family = "constant"
rate = 1.0
[[hazards]]
from = 1
to = 0
family = "saturating"
rate = 1.0
amplitude = 1.0
timescale = 0.5
[payoff]
kind = "call"
strike = 100.0
[solver]
n_t = 21
"#;

    #[test]
    fn parses_full_schema() {
        let c = Config::from_toml_str(TWO).unwrap();
        assert_eq!(c.params.state_count(), 2);
        assert!(!c.hazard.is_markov());
        assert_eq!(c.solver_settings().n_t, 21);
        assert_eq!(c.solver_settings().n_s, 81);
        assert_eq!(c.simulation().paths, 100_000);
        assert_eq!(c.payoff(), PayoffSpec::Call { strike: 100.0 });
        assert_eq!(c.hash().len(), 16);
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = Config::from_toml_str(TWO).unwrap();
        let b = Config::from_toml_str(&TWO.replace("# nothing", "")).unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = Config::from_toml_str(&TWO.replace("strike = 100.0", "strike = 101.0")).unwrap();
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn parse_errors_carry_line_context() {
        let broken = TWO.replace("kappa = 3.0", "kappa = three");
        let err = Config::from_toml_str(&broken).unwrap_err().to_string();
        assert!(err.contains("line"), "{err}");
        let unknown = TWO.replace("n_t = 21", "n_tt = 21");
        assert!(Config::from_toml_str(&unknown).is_err());
    }

    #[test]
    fn structural_errors() {
        assert!(Config::from_toml_str(&TWO.replace("to = 1", "to = 0")).is_err());
        assert!(Config::from_toml_str(&TWO.replace("regime = 0", "regime = 2")).is_err());
        assert!(Config::from_toml_str(&TWO.replace("horizon = 1.0", "horizon = -1.0")).is_err());
    }
}
