use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use epirk::integrator::Strategy;
use epirk_cli::{
    run_adaptive_sweep, run_check_order, run_convergence, run_order_reduction, run_single,
    run_strategy_compare, ExperimentConfig, Mode, ReferenceSpec, KRYLOV_TOL_DEFAULT,
};

/// Experiment harness for stiffly accurate EPIRK exponential integrators.
#[derive(Parser, Debug)]
#[command(name = "epirk", version, about)]
struct Cli {
    /// Experiment mode: convergence | strategy-compare | order-reduction |
    /// adaptive-sweep | single-run | check-order
    #[arg(long)]
    mode: String,

    /// Problem name (allen-cahn[-nonhomog], adr, brusselator[-nonhomog],
    /// gray-scott, semilinear-parabolic, degenerate-diffusion,
    /// linear-diffusion)
    #[arg(long, default_value = "allen-cahn")]
    problem: String,

    /// Grid points per side (2D) or interior points (1D)
    #[arg(long, default_value_t = 32)]
    n: usize,

    /// Built-in method name (EPIRK4s3A, EPIRK4s3B, EPIRK5s3, EXPRB53s3)
    #[arg(long, default_value = "EPIRK4s3A")]
    method: String,

    /// Tableau description file overriding --method
    #[arg(long)]
    tableau_file: Option<PathBuf>,

    /// Execution strategy: vertical | horizontal | mixed
    #[arg(long, default_value = "mixed")]
    strategy: String,

    /// Comma-separated step sizes, strictly decreasing
    #[arg(long, value_delimiter = ',')]
    h_list: Vec<f64>,

    /// Comma-separated tolerances for adaptive sweeps
    #[arg(long, value_delimiter = ',')]
    tol_list: Vec<f64>,

    /// Krylov evaluation tolerance
    #[arg(long, default_value_t = KRYLOV_TOL_DEFAULT)]
    krylov_tol: f64,

    /// Override the problem's integration end time
    #[arg(long)]
    t_end: Option<f64>,

    /// Reference step size (default: exact solution when available, else
    /// h_min/8)
    #[arg(long)]
    h_ref: Option<f64>,

    /// Seed for order-condition probe matrices
    #[arg(long, default_value_t = 42)]
    seed: u64,

    /// Number of probe matrices for check-order
    #[arg(long, default_value_t = 8)]
    probes: usize,

    /// CSV output path (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,

    /// Write run reports as JSON to this path
    #[arg(long)]
    report_json: Option<PathBuf>,

    /// Fail (exit 2) when the measured convergence slope deviates from this
    /// value by more than --slope-band
    #[arg(long)]
    expect_slope: Option<f64>,

    /// Allowed deviation for --expect-slope
    #[arg(long, default_value_t = 0.4)]
    slope_band: f64,
}

fn emit(out: &Option<PathBuf>, content: &str) -> anyhow::Result<()> {
    match out {
        Some(path) => std::fs::write(path, content)?,
        None => print!("{content}"),
    }
    Ok(())
}

fn write_reports(path: &Option<PathBuf>, reports: &[epirk::report::RunReport]) -> anyhow::Result<()> {
    if let Some(path) = path {
        let json = serde_json::to_string_pretty(reports)?;
        std::fs::write(path, json)?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let mode = Mode::from_name(&cli.mode)
        .ok_or_else(|| anyhow::anyhow!("unknown mode `{}`", cli.mode))?;
    let strategy = Strategy::from_name(&cli.strategy)
        .ok_or_else(|| anyhow::anyhow!("unknown strategy `{}`", cli.strategy))?;
    let config = ExperimentConfig {
        problem: cli.problem,
        n: cli.n,
        method: cli.method,
        tableau_file: cli.tableau_file,
        strategy,
        mode,
        h_list: cli.h_list,
        tol_list: if cli.tol_list.is_empty() {
            vec![1e-2, 1e-3, 1e-4, 1e-5, 1e-6]
        } else {
            cli.tol_list
        },
        krylov_tol: cli.krylov_tol,
        t_end: cli.t_end,
        reference: match cli.h_ref {
            Some(h_ref) => ReferenceSpec::TightStep { h_ref },
            None => ReferenceSpec::Auto,
        },
        seed: cli.seed,
        out: cli.out.clone(),
        report_json: cli.report_json.clone(),
        probes: cli.probes,
    };

    match mode {
        Mode::FixedSweep => {
            let result = run_convergence(&config)?;
            emit(&config.out, &result.to_csv())?;
            write_reports(&config.report_json, &result.reports)?;
            if let Some(slope) = result.slope {
                eprintln!("slope: {slope:.3}");
                if let Some(expect) = cli.expect_slope {
                    if (slope - expect).abs() > cli.slope_band {
                        eprintln!(
                            "slope {slope:.3} outside {expect} +- {}",
                            cli.slope_band
                        );
                        return Ok(ExitCode::from(2));
                    }
                }
            }
        }
        Mode::StrategyCompare => {
            let result = run_strategy_compare(&config)?;
            emit(&config.out, &result.to_csv())?;
            if !result.contract_ok {
                eprintln!("projection-count contract violated");
                return Ok(ExitCode::from(2));
            }
        }
        Mode::OrderReduction => {
            let result = run_order_reduction(&config)?;
            emit(&config.out, &result.to_csv())?;
            eprint!("{}", result.slope_table());
        }
        Mode::AdaptiveSweep => {
            let result = run_adaptive_sweep(&config)?;
            emit(&config.out, &result.to_csv())?;
            write_reports(&config.report_json, &result.reports)?;
        }
        Mode::SingleRun => {
            let report = run_single(&config)?;
            emit(&config.out, &(report.to_json() + "\n"))?;
            write_reports(&config.report_json, std::slice::from_ref(&report))?;
        }
        Mode::CheckOrder => {
            let result = run_check_order(&config)?;
            emit(&config.out, &result.render())?;
            if !result.passed() {
                return Ok(ExitCode::from(2));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            // Exit 3 marks numeric failures, 1 everything else.
            let numeric = err
                .downcast_ref::<epirk::Error>()
                .map(|e| {
                    matches!(
                        e,
                        epirk::Error::NumericFailure(_)
                            | epirk::Error::StiffnessFailure { .. }
                            | epirk::Error::BudgetExceeded { .. }
                            | epirk::Error::StepFailed { .. }
                    )
                })
                .unwrap_or(false);
            if numeric {
                ExitCode::from(3)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
