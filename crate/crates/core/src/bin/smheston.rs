use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use smheston::config::Config;
use smheston::sde::Measure;
use smheston::workflow::{self, PriceMethod, PriceOptions};
use smheston::{Error, Result};

#[derive(Parser)]
#[command(name = "smheston", version, about = "Semi-Markov regime-switching Heston pricer")]
struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Ie,
    Mc,
    Heston,
}

#[derive(Clone, Copy, ValueEnum)]
enum MeasureArg {
    Physical,
    Mmm,
}

#[derive(Subcommand)]
enum Command {
    /// Check the model assumptions; exits with 1 if a hard check fails.
    Validate {
        config: PathBuf,
        #[arg(long, default_value_t = 20_000)]
        a3_paths: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Price at a state with the integral equation, Monte Carlo or the frozen-regime Heston kernel.
    Price {
        config: PathBuf,
        #[arg(long, value_enum)]
        method: Method,
        /// t,s,v,i,y
        #[arg(long)]
        state: String,
        /// call:K, put:K, butterfly:C:W or unit (default: from the config)
        #[arg(long)]
        payoff: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        paths: Option<usize>,
        #[arg(long)]
        dt: Option<f64>,
        /// Frozen regime for the Heston method (default: the state's regime).
        #[arg(long)]
        regime: Option<usize>,
        /// Write the solved field as CSV (integral-equation method only).
        #[arg(long)]
        field_out: Option<PathBuf>,
        #[arg(long)]
        cache_dir: Option<PathBuf>,
    },
    /// Locally risk-minimizing hedge at a state.
    Hedge {
        config: PathBuf,
        #[arg(long)]
        state: String,
        #[arg(long)]
        payoff: Option<String>,
        /// Money-market account value at the state.
        #[arg(long, default_value_t = 1.0)]
        bank: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        cache_dir: Option<PathBuf>,
    },
    /// Empirical check of the hedging residual under the physical measure.
    FsCheck {
        config: PathBuf,
        /// Default: the configured initial state.
        #[arg(long)]
        state: Option<String>,
        #[arg(long)]
        payoff: Option<String>,
        #[arg(long, default_value_t = 10_000)]
        paths: usize,
        /// Default: the configured simulation step.
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        solver_seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        cache_dir: Option<PathBuf>,
    },
    /// Simulate paths from the initial state.
    Simulate {
        config: PathBuf,
        #[arg(long)]
        paths: Option<usize>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value = "physical")]
        measure: MeasureArg,
        /// CSV path dump (t, S, V, regime, age, discount per path).
        #[arg(long)]
        dump: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        max_dump: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(path) => Ok(std::fs::write(path, text)?),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn payoff_arg(text: &Option<String>) -> Result<Option<smheston::model::PayoffSpec>> {
    text.as_deref().map(workflow::parse_payoff).transpose()
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Internal(e.to_string()))?;
    }
    match cli.command {
        Command::Validate { config, a3_paths, seed, out } => {
            let cfg = Config::load(&config)?;
            let report = workflow::validate(&cfg, a3_paths, seed.unwrap_or(cfg.simulation().seed))?;
            emit(&out, &workflow::to_json(&report)?)?;
            if !report.passed {
                for r in report.a1.iter().filter(|r| !r.pass) {
                    eprintln!("regime {}: sigma {} violates A1 bound {}", r.regime, r.lhs, r.rhs);
                }
                if let Some(e) = &report.a1_error {
                    eprintln!("{e}");
                }
                for m in &report.a2_messages {
                    eprintln!("{m}");
                }
                return Ok(ExitCode::from(1));
            }
        }
        Command::Price { config, method, state, payoff, seed, out, paths, dt, regime, field_out, cache_dir } => {
            let cfg = Config::load(&config)?;
            let state = workflow::parse_state(&state)?;
            let method = match method {
                Method::Ie => PriceMethod::Ie,
                Method::Mc => PriceMethod::Mc,
                Method::Heston => PriceMethod::Heston,
            };
            if field_out.is_some() && method != PriceMethod::Ie {
                return Err(Error::Config("--field-out needs --method ie".into()));
            }
            let opts = PriceOptions {
                payoff: payoff_arg(&payoff)?,
                seed,
                paths,
                dt,
                regime,
                cache_dir,
            };
            let (result, field) = workflow::price(&cfg, method, &state, &opts)?;
            if let (Some(path), Some(field)) = (field_out, field) {
                std::fs::write(path, field.to_csv())?;
            }
            emit(&out, &workflow::to_json(&result)?)?;
        }
        Command::Hedge { config, state, payoff, bank, seed, out, cache_dir } => {
            let cfg = Config::load(&config)?;
            let state = workflow::parse_state(&state)?;
            let result = workflow::hedge(&cfg, &state, payoff_arg(&payoff)?, bank, seed, cache_dir.as_deref())?;
            emit(&out, &workflow::to_json(&result)?)?;
        }
        Command::FsCheck { config, state, payoff, paths, dt, seed, solver_seed, out, cache_dir } => {
            let cfg = Config::load(&config)?;
            let state = match state {
                Some(s) => workflow::parse_state(&s)?,
                None => cfg.initial_state(),
            };
            let sim = cfg.simulation();
            let seed = seed.unwrap_or(sim.seed);
            let dt = dt.unwrap_or(sim.dt);
            let result = workflow::fs_check(&cfg, &state, payoff_arg(&payoff)?, paths, dt, seed, solver_seed, cache_dir.as_deref())?;
            emit(&out, &workflow::to_json(&result)?)?;
        }
        Command::Simulate { config, paths, dt, seed, measure, dump, max_dump, out } => {
            let cfg = Config::load(&config)?;
            let sim = cfg.simulation();
            let measure = match measure {
                MeasureArg::Physical => Measure::Physical,
                MeasureArg::Mmm => Measure::MinimalMartingale,
            };
            let (result, bundle) = workflow::simulate(
                &cfg,
                measure,
                paths.unwrap_or(sim.paths),
                dt.unwrap_or(sim.dt),
                seed.unwrap_or(sim.seed),
            )?;
            if let Some(path) = dump {
                std::fs::write(path, bundle.to_csv(max_dump))?;
            }
            emit(&out, &workflow::to_json(&result)?)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
