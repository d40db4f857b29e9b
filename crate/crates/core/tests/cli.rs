use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_smheston"))
}

fn config(name: &str) -> String {
    format!("{}/configs/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli");
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "status {:?}, stderr {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

const TWO_REGIMES: &str = r#"
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
sigma = SIGMA

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
family = "constant"
rate = 1.0

[payoff]
kind = "call"
strike = 100.0
"#;

#[test]
fn validate_accepts_shipped_configs() {
    for name in ["single_regime.toml", "markov_two_regime.toml", "semi_markov_two_regime.toml", "complete_market.toml"] {
        let out = run(&["validate", &config(name), "--a3-paths", "2000"]);
        let report = json(&out);
        assert_eq!(report["passed"], true, "{name}");
        assert_eq!(report["provenance"]["version"], env!("CARGO_PKG_VERSION"));
    }
}

#[test]
fn validate_rejects_large_vol_of_vol_per_regime() {
    let path = scratch("a1_violation.toml");
    std::fs::write(&path, TWO_REGIMES.replace("SIGMA", "0.9")).unwrap();
    let out = run(&["validate", path.to_str().unwrap(), "--a3-paths", "1000"]);
    assert_eq!(out.status.code(), Some(1));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["a1_pass"], false);
    assert_eq!(report["a1"][0]["pass"], false);
    assert_eq!(report["a1"][1]["pass"], true);
    assert!(String::from_utf8_lossy(&out.stderr).contains("regime 0"));
}

#[test]
fn validate_rejects_reducible_chain() {
    let text = TWO_REGIMES.replace("SIGMA", "0.2")
        + r#"
[[regimes]]
mu = 0.05
r = 0.02
kappa = 2.0
theta = 0.05
sigma = 0.2

[[hazards]]
from = 2
to = 0
family = "constant"
rate = 1.0
"#;
    let path = scratch("reducible.toml");
    std::fs::write(&path, text).unwrap();
    let out = run(&["validate", path.to_str().unwrap(), "--a3-paths", "1000"]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("A2(iii)"), "{stderr}");
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["hazards"]["irreducible"], false);
}

#[test]
fn malformed_config_reports_location() {
    let path = scratch("malformed.toml");
    std::fs::write(&path, "horizon = 1.0\nrho = \n").unwrap();
    let out = run(&["validate", path.to_str().unwrap()]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line 2"), "{stderr}");
}

#[test]
fn price_without_state_is_a_usage_error() {
    let out = run(&["price", &config("single_regime.toml"), "--method", "mc"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--state"));
}

#[test]
fn single_regime_solver_matches_heston_kernel() {
    let state = "0,100,0.04,0,0";
    let ie = json(&run(&["price", &config("single_regime.toml"), "--method", "ie", "--state", state]));
    let hest = json(&run(&["price", &config("single_regime.toml"), "--method", "heston", "--state", state]));
    let (a, b) = (ie["price"].as_f64().unwrap(), hest["price"].as_f64().unwrap());
    assert!((a - b).abs() < 1e-4 * b, "{a} vs {b}");
    assert_eq!(ie["provenance"]["config_hash"], hest["provenance"]["config_hash"]);
    assert_eq!(ie["solver"]["converged"], true);
}

#[test]
fn mc_price_reports_interval_and_provenance() {
    let out = json(&run(&[
        "price",
        &config("markov_two_regime.toml"),
        "--method",
        "mc",
        "--state",
        "0.5,95,0.05,1,0.2",
        "--payoff",
        "put:100",
        "--paths",
        "2000",
        "--seed",
        "5",
    ]));
    assert_eq!(out["provenance"]["seed"], 5);
    let ci = out["mc"]["ci99"].as_array().unwrap();
    let p = out["price"].as_f64().unwrap();
    assert!(ci[0].as_f64().unwrap() <= p && p <= ci[1].as_f64().unwrap());
    assert_eq!(out["payoff"]["kind"], "put");
}

#[test]
fn state_outside_horizon_is_rejected() {
    let out = run(&["price", &config("single_regime.toml"), "--method", "heston", "--state", "2,100,0.04,0,0"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn hedge_output_satisfies_book_identity() {
    let cache = scratch("hedge_cache");
    for s in ["80", "100", "130"] {
        let state = format!("0.25,{s},0.05,0,0.25");
        let out = json(&run(&[
            "hedge",
            &config("single_regime.toml"),
            "--state",
            &state,
            "--bank",
            "1.0075",
            "--cache-dir",
            cache.to_str().unwrap(),
        ]));
        let q = &out["quote"];
        let (xi, eps, phi, bank) = (
            q["xi"].as_f64().unwrap(),
            q["eps"].as_f64().unwrap(),
            q["phi"].as_f64().unwrap(),
            q["bank"].as_f64().unwrap(),
        );
        let s: f64 = s.parse().unwrap();
        assert!((xi * s + eps * bank - phi).abs() < 1e-10 * (1.0 + phi));
        assert!(out["book_value_gap"].as_f64().unwrap().abs() < 1e-10 * (1.0 + phi));
        assert!((-0.05..=1.05).contains(&xi), "xi {xi}");
    }
}

#[test]
fn fs_check_emits_residual_fields() {
    let out = json(&run(&["fs-check", &config("single_regime.toml"), "--paths", "400", "--dt", "0.0078125"]));
    let r = &out["residual"];
    for key in ["mean_lt", "se", "corr_with_m", "std_lt", "vega_integral", "phi0"] {
        assert!(r[key].is_number(), "missing {key}");
    }
    assert_eq!(r["n_paths"], 400);
    assert!(out["provenance"]["config_hash"].is_string());
}

#[test]
fn simulate_dump_has_monotone_discount() {
    let dump = scratch("paths.csv");
    let out = json(&run(&[
        "simulate",
        &config("semi_markov_two_regime.toml"),
        "--paths",
        "50",
        "--dt",
        "0.015625",
        "--measure",
        "mmm",
        "--dump",
        dump.to_str().unwrap(),
    ]));
    assert_eq!(out["n_paths"], 50);
    let text = std::fs::read_to_string(&dump).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "path,t,S,V,regime,age,discount");
    let mut prev: Option<(String, f64)> = None;
    let mut rows = 0;
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        let d: f64 = cols[6].parse().unwrap();
        let v: f64 = cols[3].parse().unwrap();
        assert!(v >= 0.0 && d > 0.0 && d <= 1.0);
        if let Some((p, last)) = &prev {
            if p == cols[0] {
                assert!(d <= *last, "discount increased on path {p}");
            }
        }
        prev = Some((cols[0].to_string(), d));
        rows += 1;
    }
    assert_eq!(rows, 50 * 65);
}

fn with_threads(threads: &str, args: &[&str]) -> Vec<u8> {
    let mut full = vec!["--threads", threads];
    full.extend_from_slice(args);
    let out = run(&full);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let markov = config("markov_two_regime.toml");
    let single = config("single_regime.toml");
    let cases: Vec<Vec<&str>> = vec![
        vec!["price", &markov, "--method", "mc", "--state", "0,100,0.04,0,0", "--paths", "3000", "--seed", "9"],
        vec!["simulate", &markov, "--paths", "300", "--dt", "0.0078125"],
        vec!["price", &single, "--method", "ie", "--state", "0.1,104,0.05,0,0.1"],
        vec!["validate", &markov, "--a3-paths", "1500"],
    ];
    for args in cases {
        let one = with_threads("1", &args);
        let again = with_threads("1", &args);
        let four = with_threads("4", &args);
        assert_eq!(one, again, "{args:?}");
        assert_eq!(one, four, "{args:?}");
    }
}
