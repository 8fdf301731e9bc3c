//! Experiment harness: convergence studies, strategy comparisons,
//! order-condition checks, and adaptive-tolerance sweeps, emitting CSV and
//! JSON run reports.

use std::path::PathBuf;

use nalgebra::DVector;

use epirk::error::{Error, Result};
use epirk::integrator::{integrate_adaptive, integrate_fixed, plan, Strategy};
use epirk::order::{check_conditions, ConditionReport};
use epirk::problems::{problem_by_name, Problem};
use epirk::report::RunReport;
use epirk::schemes::{builtin, parse_tableau, validate, BuiltinScheme, MethodDefinition};

pub const KRYLOV_TOL_DEFAULT: f64 = 1e-10;
/// Krylov tolerance used for tight-step reference runs.
pub const REFERENCE_KRYLOV_TOL: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    FixedSweep,
    AdaptiveSweep,
    SingleRun,
    CheckOrder,
    StrategyCompare,
    OrderReduction,
}

impl Mode {
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "convergence" | "fixed-sweep" => Some(Mode::FixedSweep),
            "adaptive-sweep" => Some(Mode::AdaptiveSweep),
            "single-run" => Some(Mode::SingleRun),
            "check-order" => Some(Mode::CheckOrder),
            "strategy-compare" => Some(Mode::StrategyCompare),
            "order-reduction" => Some(Mode::OrderReduction),
            _ => None,
        }
    }
}

/// How the reference solution for error measurement is obtained.
#[derive(Debug, Clone, Copy)]
pub enum ReferenceSpec {
    /// Use the problem's exact solution.
    Exact,
    /// Tight-step self-reference at the given step size with the reference
    /// Krylov tolerance.
    TightStep { h_ref: f64 },
    /// Exact when available, else tight-step at `h_min / 8`.
    Auto,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub problem: String,
    pub n: usize,
    pub method: String,
    pub tableau_file: Option<PathBuf>,
    pub strategy: Strategy,
    pub mode: Mode,
    pub h_list: Vec<f64>,
    pub tol_list: Vec<f64>,
    pub krylov_tol: f64,
    pub t_end: Option<f64>,
    pub reference: ReferenceSpec,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub report_json: Option<PathBuf>,
    pub probes: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            problem: "allen-cahn".into(),
            n: 32,
            method: "EPIRK4s3A".into(),
            tableau_file: None,
            strategy: Strategy::Mixed,
            mode: Mode::SingleRun,
            h_list: vec![0.1],
            tol_list: vec![1e-3, 1e-4, 1e-5, 1e-6],
            krylov_tol: KRYLOV_TOL_DEFAULT,
            t_end: None,
            reference: ReferenceSpec::Auto,
            seed: 42,
            out: None,
            report_json: None,
            probes: 8,
        }
    }
}

impl ExperimentConfig {
    pub fn resolve_method(&self) -> Result<MethodDefinition> {
        if let Some(path) = &self.tableau_file {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Error::InvalidArgument(format!("cannot read {}: {e}", path.display()))
            })?;
            return parse_tableau(&text);
        }
        BuiltinScheme::from_name(&self.method)
            .map(builtin)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown method `{}`; builtins: EPIRK4s3A, EPIRK4s3B, EPIRK5s3, EXPRB53s3",
                    self.method
                ))
            })
    }

    pub fn resolve_problem(&self) -> Result<Box<dyn Problem + Send>> {
        problem_by_name(&self.problem, self.n, self.t_end)
    }

    fn span(&self, problem: &dyn Problem) -> (f64, f64) {
        let (t0, t1) = problem.t_span();
        (t0, self.t_end.unwrap_or(t1))
    }

    fn validate_mode_fields(&self) -> Result<()> {
        match self.mode {
            Mode::FixedSweep | Mode::OrderReduction => {
                if self.h_list.is_empty() {
                    return Err(Error::invalid_pub("h list must not be empty"));
                }
                if self.h_list.windows(2).any(|w| w[1] >= w[0]) {
                    return Err(Error::invalid_pub("h list must be strictly decreasing"));
                }
            }
            Mode::AdaptiveSweep => {
                if self.tol_list.is_empty() {
                    return Err(Error::invalid_pub("tolerance list must not be empty"));
                }
            }
            Mode::SingleRun | Mode::StrategyCompare => {
                if self.h_list.is_empty() {
                    return Err(Error::invalid_pub("an h value is required"));
                }
            }
            Mode::CheckOrder => {}
        }
        Ok(())
    }
}

/// Runs independent sweep points in a worker pool, preserving input order.
/// `EPIRK_THREADS` caps the pool size.
fn run_pool<T: Send, F: Fn(usize) -> T + Sync>(count: usize, f: F) -> Vec<T> {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(
            std::env::var("EPIRK_THREADS")
                .ok()
                .and_then(|v| v.parse().ok())
                .unwrap_or(0),
        )
        .build()
        .expect("worker pool");
    pool.install(|| (0..count).into_par_iter().map(&f).collect())
}

fn infinity_error(state: &[f64], reference: &DVector<f64>) -> f64 {
    state
        .iter()
        .zip(reference.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// Least-squares slope of ln(error) against ln(h).
pub fn least_squares_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(h, e)| *h > 0.0 && *e > 0.0)
        .map(|&(h, e)| (h.ln(), e.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    Some((n * sxy - sx * sy) / (n * sxx - sx * sx))
}

#[derive(Debug, Clone)]
pub struct ConvergenceRow {
    pub h: f64,
    pub error: f64,
    pub matvecs: usize,
    pub projections: usize,
    pub wall_s: f64,
}

#[derive(Debug)]
pub struct ConvergenceResult {
    pub rows: Vec<ConvergenceRow>,
    pub slope: Option<f64>,
    pub reports: Vec<RunReport>,
}

impl ConvergenceResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("h,error,matvecs,projections,wall_s\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{:.12e},{:.12e},{},{},{:.6}\n",
                r.h, r.error, r.matvecs, r.projections, r.wall_s
            ));
        }
        out
    }
}

/// Computes the reference state at the span end for error measurement.
pub fn reference_state(
    config: &ExperimentConfig,
    problem: &dyn Problem,
    method: &MethodDefinition,
) -> Result<DVector<f64>> {
    let span = config.span(problem);
    let auto_href = config.h_list.last().copied().unwrap_or(span.1 - span.0) / 8.0;
    match config.reference {
        ReferenceSpec::Exact => problem
            .exact_solution(span.1)
            .ok_or_else(|| Error::invalid_pub("problem has no exact solution")),
        ReferenceSpec::TightStep { h_ref } => {
            let report = integrate_fixed(
                problem,
                method,
                config.strategy,
                span,
                h_ref,
                REFERENCE_KRYLOV_TOL,
            )?;
            Ok(DVector::from_vec(report.final_state))
        }
        ReferenceSpec::Auto => {
            if let Some(exact) = problem.exact_solution(span.1) {
                Ok(exact)
            } else {
                let report = integrate_fixed(
                    problem,
                    method,
                    config.strategy,
                    span,
                    auto_href,
                    REFERENCE_KRYLOV_TOL,
                )?;
                Ok(DVector::from_vec(report.final_state))
            }
        }
    }
}

/// Fixed-step convergence sweep: one integration per `h`, errors against the
/// reference, and the least-squares order slope.
pub fn run_convergence(config: &ExperimentConfig) -> Result<ConvergenceResult> {
    config.validate_mode_fields()?;
    let method = config.resolve_method()?;
    let problem = config.resolve_problem()?;
    let span = config.span(problem.as_ref());
    let reference = reference_state(config, problem.as_ref(), &method)?;

    let outcomes = run_pool(config.h_list.len(), |i| {
        let h = config.h_list[i];
        integrate_fixed(
            problem.as_ref(),
            &method,
            config.strategy,
            span,
            h,
            config.krylov_tol,
        )
    });
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for (h, outcome) in config.h_list.iter().zip(outcomes) {
        let mut report = outcome?;
        let error = infinity_error(&report.final_state, &reference);
        report.final_error = Some(error);
        rows.push(ConvergenceRow {
            h: *h,
            error,
            matvecs: report.total_matvecs,
            projections: report.total_projections,
            wall_s: report.wall_time_s,
        });
        reports.push(report);
    }
    let slope = if rows.len() >= 2 {
        least_squares_slope(&rows.iter().map(|r| (r.h, r.error)).collect::<Vec<_>>())
    } else {
        None
    };
    Ok(ConvergenceResult {
        rows,
        slope,
        reports,
    })
}

#[derive(Debug, Clone)]
pub struct StrategyCompareRow {
    pub strategy: Strategy,
    pub steps: usize,
    pub projections_per_step: f64,
    pub expected_projections_per_step: usize,
    pub total_matvecs: usize,
    pub wall_s: f64,
    /// Infinity-norm final-state difference against the first feasible
    /// strategy.
    pub max_diff: f64,
}

#[derive(Debug)]
pub struct StrategyCompareResult {
    pub rows: Vec<StrategyCompareRow>,
    pub contract_ok: bool,
}

impl StrategyCompareResult {
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("strategy,steps,projections_per_step,total_matvecs,wall_s,max_diff\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{:.3},{},{:.6},{:.12e}\n",
                r.strategy.name(),
                r.steps,
                r.projections_per_step,
                r.total_matvecs,
                r.wall_s,
                r.max_diff
            ));
        }
        out
    }
}

/// Runs the identical (problem, method, h) under every feasible strategy and
/// checks the projection-count contract against the plan.
pub fn run_strategy_compare(config: &ExperimentConfig) -> Result<StrategyCompareResult> {
    config.validate_mode_fields()?;
    let method = config.resolve_method()?;
    let problem = config.resolve_problem()?;
    let span = config.span(problem.as_ref());
    let h = config.h_list[0];

    let feasible: Vec<(Strategy, usize)> = Strategy::ALL
        .into_iter()
        .filter_map(|s| match plan(&method, s) {
            Ok(p) => Some((s, p.expected_projection_count)),
            Err(_) => None,
        })
        .collect();

    let outcomes = run_pool(feasible.len(), |i| {
        integrate_fixed(
            problem.as_ref(),
            &method,
            feasible[i].0,
            span,
            h,
            config.krylov_tol,
        )
    });
    let mut rows: Vec<StrategyCompareRow> = Vec::new();
    let mut first_state: Option<Vec<f64>> = None;
    let mut contract_ok = true;
    for ((strategy, expected), outcome) in feasible.into_iter().zip(outcomes) {
        let report = outcome?;
        let steps = report.accepted_steps();
        let projections_per_step = report.total_projections as f64 / steps as f64;
        if report.total_projections != expected * steps {
            contract_ok = false;
        }
        let max_diff = match &first_state {
            None => {
                first_state = Some(report.final_state.clone());
                0.0
            }
            Some(first) => first
                .iter()
                .zip(&report.final_state)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
        };
        rows.push(StrategyCompareRow {
            strategy,
            steps,
            projections_per_step,
            expected_projections_per_step: expected,
            total_matvecs: report.total_matvecs,
            wall_s: report.wall_time_s,
            max_diff,
        });
    }
    Ok(StrategyCompareResult { rows, contract_ok })
}

#[derive(Debug)]
pub struct OrderReductionResult {
    /// (variant label, convergence result)
    pub variants: Vec<(String, ConvergenceResult)>,
}

impl OrderReductionResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,h,error,matvecs,projections,wall_s\n");
        for (label, res) in &self.variants {
            for r in &res.rows {
                out.push_str(&format!(
                    "{label},{:.12e},{:.12e},{},{},{:.6}\n",
                    r.h, r.error, r.matvecs, r.projections, r.wall_s
                ));
            }
        }
        out
    }

    pub fn slope_table(&self) -> String {
        let mut out = String::from("variant,slope\n");
        for (label, res) in &self.variants {
            out.push_str(&format!(
                "{label},{}\n",
                res.slope.map(|s| format!("{s:.3}")).unwrap_or_default()
            ));
        }
        out
    }
}

/// Convergence sweep on a nonhomogeneous-boundary problem together with its
/// homogeneous control, for order-reduction studies.
pub fn run_order_reduction(config: &ExperimentConfig) -> Result<OrderReductionResult> {
    config.validate_mode_fields()?;
    let base = config
        .problem
        .strip_suffix("-nonhomog")
        .unwrap_or(&config.problem);
    let mut variants = Vec::new();
    for label in [format!("{base}-nonhomog"), base.to_string()] {
        let mut sub = config.clone();
        sub.problem = label.clone();
        let result = run_convergence(&sub)?;
        variants.push((label, result));
    }
    Ok(OrderReductionResult { variants })
}

#[derive(Debug, Clone)]
pub struct AdaptiveRow {
    pub tol: f64,
    pub achieved_error: f64,
    pub steps: usize,
    pub rejections: usize,
    pub matvecs: usize,
    pub wall_s: f64,
}

#[derive(Debug)]
pub struct AdaptiveSweepResult {
    pub rows: Vec<AdaptiveRow>,
    pub reports: Vec<RunReport>,
}

impl AdaptiveSweepResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("tol,achieved_error,steps,rejections,matvecs,wall_s\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{:.12e},{:.12e},{},{},{},{:.6}\n",
                r.tol, r.achieved_error, r.steps, r.rejections, r.matvecs, r.wall_s
            ));
        }
        out
    }
}

/// Tolerance-ladder sweep of the adaptive driver.
pub fn run_adaptive_sweep(config: &ExperimentConfig) -> Result<AdaptiveSweepResult> {
    config.validate_mode_fields()?;
    let method = config.resolve_method()?;
    let problem = config.resolve_problem()?;
    let span = config.span(problem.as_ref());
    let reference = reference_state(config, problem.as_ref(), &method)?;

    let outcomes = run_pool(config.tol_list.len(), |i| {
        let tol = config.tol_list[i];
        let h0 = (span.1 - span.0) / 100.0;
        integrate_adaptive(
            problem.as_ref(),
            &method,
            config.strategy,
            span,
            tol,
            tol,
            h0,
        )
    });
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for (tol, outcome) in config.tol_list.iter().zip(outcomes) {
        let mut report = outcome?;
        let error = infinity_error(&report.final_state, &reference);
        report.final_error = Some(error);
        rows.push(AdaptiveRow {
            tol: *tol,
            achieved_error: error,
            steps: report.accepted_steps(),
            rejections: report.rejected_steps(),
            matvecs: report.total_matvecs,
            wall_s: report.wall_time_s,
        });
        reports.push(report);
    }
    Ok(AdaptiveSweepResult { rows, reports })
}

/// One integration with the configured parameters.
pub fn run_single(config: &ExperimentConfig) -> Result<RunReport> {
    config.validate_mode_fields()?;
    let method = config.resolve_method()?;
    let problem = config.resolve_problem()?;
    let span = config.span(problem.as_ref());
    let mut report = integrate_fixed(
        problem.as_ref(),
        &method,
        config.strategy,
        span,
        config.h_list[0],
        config.krylov_tol,
    )?;
    if let Some(exact) = problem.exact_solution(span.1) {
        report.final_error = Some(infinity_error(&report.final_state, &exact));
    }
    Ok(report)
}

pub struct CheckOrderResult {
    pub report: ConditionReport,
    pub declared: u32,
    pub violations: Vec<String>,
}

impl CheckOrderResult {
    pub fn passed(&self) -> bool {
        self.report.certified_order >= self.declared
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str("condition  residual      satisfied\n");
        for c in &self.report.conditions {
            out.push_str(&format!(
                "{:<10} {:<13.3e} {}\n",
                c.label, c.residual, c.satisfied
            ));
        }
        out.push_str(&format!(
            "certified order: {} (declared {})\n",
            self.report.certified_order, self.declared
        ));
        for v in &self.violations {
            out.push_str(&format!("structural violation: {v}\n"));
        }
        out
    }
}

/// Order-condition verification of the configured method.
pub fn run_check_order(config: &ExperimentConfig) -> Result<CheckOrderResult> {
    let method = config.resolve_method()?;
    let violations: Vec<String> = validate(&method).iter().map(|v| v.to_string()).collect();
    let report = check_conditions(&method, config.probes, config.seed)?;
    Ok(CheckOrderResult {
        report,
        declared: method.stiff_order,
        violations,
    })
}

// Small shim so config validation can construct the library's error type.
trait InvalidExt {
    fn invalid_pub(msg: &str) -> Error;
}

impl InvalidExt for Error {
    fn invalid_pub(msg: &str) -> Error {
        Error::InvalidArgument(msg.to_string())
    }
}
