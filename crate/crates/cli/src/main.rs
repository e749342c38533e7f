//! `nehari` command line: direct solves, parameter sweeps, invariant
//! checks, and the radial reference table, all driven by one sectioned
//! config file.
//!
//! Exit codes: 0 success, 2 configuration or I/O problem, 3 solver
//! failure, 4 failed invariant or consistency check. Every nonzero exit
//! writes a single-line machine-readable record to stderr.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};

use nehari_cli::checks;
use nehari_cli::config::{parse_config, ConfigError, RunConfig};
use nehari_cli::report;
use nehari_core::grid::Grid;
use nehari_core::model::ProblemKind;
use nehari_core::solver::{init_bumps, minimize};
use nehari_core::study::{self, StudyError};
use nehari_core::radial;

/// Environment variable overriding the output directory.
const OUT_DIR_ENV: &str = "NEHARI_OUT_DIR";

#[derive(Parser)]
#[command(
    name = "nehari",
    about = "Least-energy solutions of a competitive weighted elliptic system",
    version
)]
struct Cli {
    /// Path to a config file; omit to run with built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config and the NEHARI_OUT_DIR
    /// environment variable).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Minimize the configured problem once and write a manifest.
    Solve,
    /// Sweep the concentration parameter and write eps_sweep.csv.
    SweepEps,
    /// Sweep the coupling strength and write lambda_sweep.csv.
    SweepLambda,
    /// Run the invariant suite and report pass/fail per property.
    Check,
    /// Print the radial reference table for the configured coefficients.
    OracleRadial,
}

/// Failure classified by exit code.
enum Failure {
    /// Exit 2: bad config, unreadable file, bad output location.
    Config { message: String, line: Option<usize> },
    /// Exit 3: a minimization or sweep row did not converge.
    Solver { message: String },
    /// Exit 4: an invariant check failed.
    Check { message: String },
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config { .. } => 2,
            Failure::Solver { .. } => 3,
            Failure::Check { .. } => 4,
        }
    }

    /// Single-line JSON record for stderr.
    fn record(&self) -> String {
        let (kind, message, line) = match self {
            Failure::Config { message, line } => ("config", message, *line),
            Failure::Solver { message } => ("solver", message, None),
            Failure::Check { message } => ("check", message, None),
        };
        let mut out = format!("{{\"error\":\"{}\",\"message\":\"{}\"", kind, json_escape(message));
        if let Some(l) = line {
            out.push_str(&format!(",\"line\":{l}"));
        }
        out.push('}');
        out
    }
}

fn json_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => out.push_str(&format!("\\u{:04x}", c as u32)),
            c => out.push(c),
        }
    }
    out
}

fn config_failure(e: ConfigError) -> Failure {
    let line = match &e {
        ConfigError::Parse { line, .. } => Some(*line),
        ConfigError::Invalid(_) => None,
    };
    Failure::Config { message: e.to_string(), line }
}

fn study_failure(e: StudyError) -> Failure {
    match e {
        StudyError::BadSweep { .. } => Failure::Config { message: e.to_string(), line: None },
        other => Failure::Solver { message: other.to_string() },
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, Failure> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::Config {
                message: format!("cannot read {}: {e}", p.display()),
                line: None,
            })?;
            parse_config(&text).map_err(config_failure)
        }
    }
}

/// Resolution order: command-line flag, then environment, then config.
fn resolve_out_dir(cli: &Cli, cfg: &RunConfig) -> PathBuf {
    if let Some(d) = &cli.out_dir {
        return d.clone();
    }
    if let Ok(d) = std::env::var(OUT_DIR_ENV) {
        if !d.is_empty() {
            return PathBuf::from(d);
        }
    }
    PathBuf::from(&cfg.output.directory)
}

fn write_artifact(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::Config {
        message: format!("cannot create output directory {}: {e}", dir.display()),
        line: None,
    })?;
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| Failure::Config {
        message: format!("cannot write {}: {e}", path.display()),
        line: None,
    })?;
    Ok(path)
}

fn run_solve(cfg: &RunConfig, out_dir: &Path) -> Result<(), Failure> {
    let grid = Grid::new(cfg.params.dim, cfg.grid_n, cfg.grid_half_width)
        .map(Arc::new)
        .map_err(|e| Failure::Config { message: e.to_string(), line: None })?;
    let state0 = init_bumps(&grid, &cfg.params, ProblemKind::RescaledU, cfg.solver.seed)
        .map_err(|e| Failure::Solver { message: e.to_string() })?;
    let report = minimize(&state0, &cfg.solver)
        .map_err(|e| Failure::Solver { message: e.to_string() })?;

    let manifest = report::solve_manifest(cfg, &report);
    let path = write_artifact(out_dir, "manifest.txt", &manifest)?;
    println!("wrote {}", path.display());

    if cfg.output.dump_fields {
        for k in 0..report.state.component_count() {
            let dump = report::field_dump(
                report.state.component(k),
                report.state.kind(),
                report.state.component_id(k),
            );
            let name = format!("field_{}.txt", report.state.component_id(k));
            let path = write_artifact(out_dir, &name, &dump)?;
            println!("wrote {}", path.display());
        }
    }
    println!(
        "energy = {}  stationarity = {}  iterations = {}",
        report::fmt_float(report.energy),
        report::fmt_float(report.stationarity),
        report.iterations
    );
    Ok(())
}

fn count_failed_rows(rows: &[study::SweepRow]) -> usize {
    rows.iter().filter(|r| r.outcome.is_err()).count()
}

fn run_sweep_eps(cfg: &RunConfig, out_dir: &Path) -> Result<(), Failure> {
    let sweep = study::sweep_eps(
        &cfg.params,
        &cfg.study.eps_list,
        cfg.study.mode,
        &cfg.study.deltas,
        cfg.study.theta,
        &cfg.solver,
    )
    .map_err(study_failure)?;

    let csv = report::eps_sweep_csv(cfg, &sweep);
    let path = write_artifact(out_dir, "eps_sweep.csv", &csv)?;
    println!("wrote {}", path.display());
    if cfg.output.emit_plots {
        let path = write_artifact(out_dir, "plot.py", report::plot_script())?;
        println!("wrote {}", path.display());
    }
    if let Ok(slopes) = study::blowup_exponent_fit(&sweep) {
        for (i, s) in slopes.iter().enumerate() {
            println!("blowup_exponent_{i} = {}", report::fmt_float(*s));
        }
    }

    let failed = count_failed_rows(&sweep.rows);
    if failed > 0 {
        return Err(Failure::Solver {
            message: format!("{failed} of {} sweep rows failed; see CSV comments", sweep.rows.len()),
        });
    }
    Ok(())
}

fn run_sweep_lambda(cfg: &RunConfig, out_dir: &Path) -> Result<(), Failure> {
    let sweep = study::sweep_lambda(
        &cfg.params,
        &cfg.study.lambda_list,
        cfg.study.theta,
        &cfg.solver,
    )
    .map_err(study_failure)?;

    let csv = report::lambda_sweep_csv(cfg, &sweep);
    let path = write_artifact(out_dir, "lambda_sweep.csv", &csv)?;
    println!("wrote {}", path.display());
    if cfg.output.emit_plots {
        let path = write_artifact(out_dir, "plot.py", report::plot_script())?;
        println!("wrote {}", path.display());
    }

    let failed = count_failed_rows(&sweep.rows);
    if failed > 0 {
        return Err(Failure::Solver {
            message: format!("{failed} of {} sweep rows failed; see CSV comments", sweep.rows.len()),
        });
    }
    Ok(())
}

fn run_check(cfg: &RunConfig) -> Result<(), Failure> {
    let outcomes = checks::run_all(cfg);
    let mut failed = Vec::new();
    for o in &outcomes {
        let verdict = if o.passed { "PASS" } else { "FAIL" };
        println!("{verdict} {} ({})", o.name, o.detail);
        if !o.passed {
            failed.push(o.name);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Check { message: format!("failed checks: {}", failed.join(", ")) })
    }
}

fn run_oracle_radial(cfg: &RunConfig) -> Result<(), Failure> {
    // The radial reference lives on [0, L] with the same outer radius as the
    // configured box.
    let radius = cfg.grid_half_width;
    let cells = 2048;
    println!("i mu kappa norm_sq stationarity iterations");
    for (i, &mu) in cfg.params.mu.iter().enumerate() {
        let sol = radial::solve_radial_limit_equation(
            mu,
            cfg.params.p,
            cfg.params.dim,
            radius,
            cells,
            &cfg.solver,
        )
        .map_err(|e| Failure::Solver { message: format!("component {i}: {e}") })?;
        println!(
            "{i} {} {} {} {} {}",
            report::fmt_float(mu),
            report::fmt_float(sol.kappa),
            report::fmt_float(sol.norm_sq),
            report::fmt_float(sol.stationarity),
            sol.iterations
        );
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let cfg = load_config(cli.config.as_deref())?;
    let out_dir = resolve_out_dir(cli, &cfg);
    match cli.cmd {
        Cmd::Solve => run_solve(&cfg, &out_dir),
        Cmd::SweepEps => run_sweep_eps(&cfg, &out_dir),
        Cmd::SweepLambda => run_sweep_lambda(&cfg, &out_dir),
        Cmd::Check => run_check(&cfg),
        Cmd::OracleRadial => run_oracle_radial(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.record());
            ExitCode::from(f.code())
        }
    }
}
