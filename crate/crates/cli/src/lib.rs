//! Command line driver: configuration, orchestration and output files.

pub mod commands;
pub mod config;
pub mod emit;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde_json::json;
use thiserror::Error;

use crate::config::{ExperimentConfig, Suite};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Solver(#[from] dirac_ibvp::Error),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Solver(_) | CliError::Io(_) => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "dirac-ibvp", version, about = "Dirac initial-boundary value problems with nonlocal boundary conditions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Run a single check suite.
    #[arg(long, global = true)]
    pub only: Option<String>,
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Evolve the configured data; writes trajectory.csv and summary.json.
    Simulate,
    /// Run the configured analysis suites; writes check.json.
    Check,
    /// Explicit transmission solution; writes exact.csv.
    Exact,
    /// Green operator axioms; writes green.json.
    Green,
    /// Boundary and operator spectra; writes spectrum.json.
    Spectrum,
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Runs one invocation; `Ok(false)` means a check failed.
pub fn run(cli: &Cli) -> Result<bool, CliError> {
    let path = cli.config.as_ref().ok_or_else(|| CliError::Config("--config is required".into()))?;
    let cfg = ExperimentConfig::load(path)?;
    let only = match &cli.only {
        None => None,
        Some(s) => Some(Suite::parse(s).ok_or_else(|| CliError::Config(format!("unknown suite {s:?}")))?),
    };
    let out = &cli.out;
    let say = |msg: String| {
        if !cli.quiet {
            println!("{msg}");
        }
    };
    match cli.command {
        Command::Simulate => {
            let res = match commands::simulate(&cfg) {
                Err(CliError::Solver(dirac_ibvp::Error::Inadmissible(rep))) => {
                    let body = json!({ "command": "simulate", "error": "boundary family is not admissible", "admissibility": rep, "pass": false });
                    write(out, "summary.json", &emit::json(&body))?;
                    return Err(CliError::Solver(dirac_ibvp::Error::Inadmissible(rep)));
                }
                other => other?,
            };
            write(out, "trajectory.csv", &res.csv)?;
            write(out, "summary.json", &emit::json(&res.summary))?;
            write(out, "timings.json", &emit::json(&res.timings))?;
            say(format!(
                "simulate: {} steps, max flux {:.3e}, support {}, pass = {}",
                res.summary.steps,
                res.summary.max_flux,
                if res.summary.support.passed { "ok" } else { "violated" },
                res.summary.pass
            ));
            Ok(res.summary.pass)
        }
        Command::Exact => {
            let csv = commands::exact(&cfg)?;
            write(out, "exact.csv", &csv)?;
            say("exact: wrote exact.csv".into());
            Ok(true)
        }
        Command::Check => {
            let (summary, timings) = commands::check(&cfg, only)?;
            write(out, "check.json", &emit::json(&summary))?;
            write(out, "timings.json", &emit::json(&timings))?;
            for c in &summary.checks {
                let verdict = if c.skipped { "skipped" } else if c.passed { "pass" } else { "FAIL" };
                say(format!("{:<14} {verdict}", c.name));
            }
            Ok(summary.pass)
        }
        Command::Green => {
            let setup = commands::Setup::new(&cfg)?;
            let (rep, passed) = commands::green_report(&setup, &cfg)?;
            write(out, "green.json", &emit::json(&json!({ "command": "green", "report": rep, "pass": passed })))?;
            say(format!("green: residual {:.3e} / {:.3e}, pass = {passed}", rep.residual_plus, rep.residual_minus));
            Ok(passed)
        }
        Command::Spectrum => {
            let s = commands::spectrum(&cfg)?;
            write(out, "spectrum.json", &emit::json(&s))?;
            say(format!("spectrum: pass = {}", s.pass));
            Ok(s.pass)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn configs() -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
    }

    fn scratch(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("dirac-ibvp-cli-{}-{name}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn cli(command: Command, config: PathBuf, out: PathBuf, only: Option<&str>) -> Cli {
        Cli { command, config: Some(config), out, only: only.map(String::from), quiet: true }
    }

    fn edited(name: &str, dir: &Path, edit: impl FnOnce(&mut serde_json::Value)) -> PathBuf {
        let text = std::fs::read_to_string(configs().join(name)).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        edit(&mut v);
        let path = dir.join(name);
        std::fs::write(&path, v.to_string()).unwrap();
        path
    }

    #[test]
    fn unknown_key_is_a_config_error() {
        let dir = scratch("unknown");
        let path = edited("strip_transmission.json", &dir, |v| {
            v["grid"]["nxx"] = 3.into();
        });
        let err = run(&cli(Command::Simulate, path, dir.clone(), None)).unwrap_err();
        assert_eq!(err.exit_code(), 2, "{err}");
        assert!(!dir.join("trajectory.csv").exists());
    }

    #[test]
    fn zero_width_bump_is_a_config_error() {
        let dir = scratch("zerowidth");
        let path = edited("strip_transmission.json", &dir, |v| {
            v["data"]["initial"][0]["half_width"] = 0.0.into();
        });
        let err = run(&cli(Command::Simulate, path, dir, None)).unwrap_err();
        assert_eq!(err.exit_code(), 2, "{err}");
    }

    #[test]
    fn missing_config_and_unknown_suite() {
        let dir = scratch("missing");
        let mut c = cli(Command::Check, configs().join("strip_transmission.json"), dir, Some("everything"));
        assert_eq!(run(&c).unwrap_err().exit_code(), 2);
        c.config = None;
        assert_eq!(run(&c).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn simulate_is_deterministic() {
        let (a, b) = (scratch("det-a"), scratch("det-b"));
        let path = configs().join("strip_transmission.json");
        assert!(run(&cli(Command::Simulate, path.clone(), a.clone(), None)).unwrap());
        assert!(run(&cli(Command::Simulate, path, b.clone(), None)).unwrap());
        for f in ["trajectory.csv", "summary.json"] {
            let (x, y) = (std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
            assert!(x == y, "{f} differs between runs");
        }
    }

    #[test]
    fn inadmissible_family_is_gated() {
        let dir = scratch("gate");
        let path = edited("negative_control.json", &dir, |v| {
            v["run"]["unchecked"] = false.into();
        });
        let err = run(&cli(Command::Simulate, path, dir.clone(), None)).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap();
        assert_eq!(summary["pass"], false);
        assert_eq!(summary["admissibility"]["passed"], false);
    }

    #[test]
    fn negative_control_fails_checks() {
        let dir = scratch("negative");
        let path = configs().join("negative_control.json");
        assert!(!run(&cli(Command::Check, path.clone(), dir.clone(), Some("flux"))).unwrap());
        let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("check.json")).unwrap()).unwrap();
        assert_eq!(report["checks"].as_array().unwrap().len(), 1);
        assert_eq!(report["checks"][0]["name"], "flux");
        assert!(!run(&cli(Command::Check, path, dir, None)).unwrap());
    }

    #[test]
    fn exact_writes_csv() {
        let dir = scratch("exact");
        assert!(run(&cli(Command::Exact, configs().join("strip_transmission.json"), dir.clone(), None)).unwrap());
        let text = std::fs::read_to_string(dir.join("exact.csv")).unwrap();
        let rows = emit::parse_csv(&text).unwrap();
        assert_eq!(rows.len(), 11 * 256);
    }

    #[test]
    fn bundled_configs_parse() {
        for entry in std::fs::read_dir(configs()).unwrap() {
            let path = entry.unwrap().path();
            ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        }
    }
}
