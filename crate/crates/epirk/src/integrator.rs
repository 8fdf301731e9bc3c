//! Executes EPIRK time steps under the vertical, horizontal, or mixed
//! exponential-Krylov strategy, with fixed-step and adaptive-step drivers.
//!
//! All three strategies compute the same residual-form update
//!
//! ```text
//! U_ni   = u_n + alpha_{i1} psi_{i1}(g_{i1} hJ) h f(u_n) + h sum_j a_ij(hJ) r(U_nj)
//! u_{n+1}= u_n + beta_1 psi_{s+1,1}(hJ) h f(u_n)         + h sum_j b_j(hJ) r(U_nj)
//! ```
//!
//! and differ only in how the phi-function products are grouped into
//! adaptive-Krylov evaluations:
//!
//! - vertical: one evaluation per shared vector "column", using the identity
//!   `phi_k(gA)b = u(g)/g^k` at the column's waypoint scales, with lower phi
//!   orders recovered by the downward recurrence (one operator apply each);
//! - horizontal: one evaluation per stage "row", after rewriting all of the
//!   row's terms into a single phi order with the row's common scale;
//! - mixed: internal stages vertical, final stage as one horizontal row,
//!   which shaves a whole evaluation off schemes built for it.

use std::time::Instant;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::krylov::{
    eval_single_phi_with_waypoints_opts, CountingOperator, KrylovOptions, KrylovReport,
    LinearOperator, ScaledOperator,
};
use crate::problems::Problem;
use crate::report::{RunReport, StepRecord};
use crate::schemes::{
    embedded_difference, group_row, rat_f64, to_residual_form, MethodDefinition, PhiCombination,
    PhiSum, Rat,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Vertical,
    Horizontal,
    Mixed,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Vertical, Strategy::Horizontal, Strategy::Mixed];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Vertical => "vertical",
            Strategy::Horizontal => "horizontal",
            Strategy::Mixed => "mixed",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|s| s.name().eq_ignore_ascii_case(name))
    }
}

/// How the Jacobian action is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JacobianMode {
    /// The problem's analytic `J(u) v`.
    Analytic,
    /// Directional finite difference
    /// `(f(u + eps v) - f(u_n)) / eps`, `eps = sqrt(eps_mach)(1+||u||)/||v||`.
    FiniteDifference,
}

/// Jacobian-at-`u_n` as a linear operator.
pub struct JacobianOp<'a> {
    problem: &'a (dyn Problem + 'a),
    u_n: DVector<f64>,
    f_n: DVector<f64>,
    mode: JacobianMode,
}

impl LinearOperator for JacobianOp<'_> {
    fn dim(&self) -> usize {
        self.problem.dimension()
    }

    fn apply(&self, v: &DVector<f64>, out: &mut DVector<f64>) {
        match self.mode {
            JacobianMode::Analytic => self.problem.jac_apply(&self.u_n, v, out),
            JacobianMode::FiniteDifference => {
                let vnorm = v.norm();
                if vnorm == 0.0 {
                    out.fill(0.0);
                    return;
                }
                let eps = f64::EPSILON.sqrt() * (1.0 + self.u_n.norm()) / vnorm;
                let shifted = &self.u_n + v * eps;
                self.problem.rhs(&shifted, out);
                *out -= &self.f_n;
                *out /= eps;
            }
        }
    }
}

/// Everything a single step needs: the state, the (freshly recomputed)
/// right-hand side, and the Jacobian operator at `u_n`.
pub struct StepContext<'a> {
    pub problem: &'a (dyn Problem + 'a),
    pub u_n: DVector<f64>,
    pub h: f64,
    pub f_n: DVector<f64>,
    pub jacobian: JacobianOp<'a>,
}

impl<'a> StepContext<'a> {
    pub fn new(
        problem: &'a (dyn Problem + 'a),
        u_n: DVector<f64>,
        h: f64,
        mode: JacobianMode,
    ) -> Result<Self> {
        let f_n = problem.rhs_vec(&u_n);
        if f_n.iter().any(|x| !x.is_finite()) {
            return Err(Error::numeric("rhs produced NaN/Inf at step start"));
        }
        Ok(Self {
            problem,
            u_n: u_n.clone(),
            h,
            f_n: f_n.clone(),
            jacobian: JacobianOp {
                problem,
                u_n,
                f_n,
                mode,
            },
        })
    }
}

/// The nonlinear remainder `r(u) = f(u) - f(u_n) - J_n (u - u_n)`; one rhs
/// evaluation and one Jacobian apply.
pub fn remainder(u: &DVector<f64>, ctx: &StepContext) -> Result<DVector<f64>> {
    let mut f = DVector::zeros(u.len());
    ctx.problem.rhs(u, &mut f);
    if f.iter().any(|x| !x.is_finite()) {
        return Err(Error::numeric("rhs produced NaN/Inf in remainder"));
    }
    let mut jdu = DVector::zeros(u.len());
    ctx.jacobian.apply(&(u - &ctx.u_n), &mut jdu);
    Ok(f - &ctx.f_n - jdu)
}

/// Which stage-update a task output feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowId {
    /// Stage row `i` (internal `2..=s`, final `s+1`).
    Stage(usize),
    /// The embedded-estimator difference row.
    Embedded,
}

/// A vector shared across tableau entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VecSource {
    /// `h f(u_n)`.
    ScaledF,
    /// `h r(U_nj)`.
    Residual(usize),
}

#[derive(Debug, Clone)]
pub struct Need {
    pub row: RowId,
    pub k: usize,
    pub coeff: f64,
}

#[derive(Debug, Clone)]
pub struct Waypoint {
    pub g: f64,
    pub needs: Vec<Need>,
}

/// One adaptive-Krylov traversal serving every stage that shares a vector.
#[derive(Debug, Clone)]
pub struct ColumnTask {
    pub source: VecSource,
    pub k_top: usize,
    pub waypoints: Vec<Waypoint>,
    first_consumer: usize,
}

#[derive(Debug, Clone)]
pub struct TaskTerm {
    pub source: VecSource,
    pub power: usize,
    pub coeff: f64,
}

/// One stage row grouped (per the recurrence rewriting) into a single phi
/// order at a common scale.
#[derive(Debug, Clone)]
pub struct RowTask {
    pub row: RowId,
    pub scale: f64,
    pub phi_order: usize,
    pub phi_terms: Vec<TaskTerm>,
    pub poly_terms: Vec<TaskTerm>,
    first_consumer: usize,
}

#[derive(Debug, Clone)]
pub enum KrylovTask {
    Column(ColumnTask),
    Row(RowTask),
}

impl KrylovTask {
    fn first_consumer(&self) -> usize {
        match self {
            KrylovTask::Column(c) => c.first_consumer,
            KrylovTask::Row(r) => r.first_consumer,
        }
    }
}

/// Ordered Krylov tasks realizing one strategy for one method.
#[derive(Debug, Clone)]
pub struct ExecutionPlan {
    pub strategy: Strategy,
    pub stages: usize,
    pub tasks: Vec<KrylovTask>,
    pub expected_projection_count: usize,
    /// Extra row evaluating the (main - embedded) difference coefficients;
    /// `None` either when no estimate was requested or when the vertical
    /// columns already carry the difference needs at zero extra projections.
    pub embedded_row: Option<RowTask>,
    /// Whether the plan computes an embedded error estimate at all.
    pub with_embedded: bool,
}

/// Builds the execution plan for a method under a strategy (no error
/// estimator).
pub fn plan(method: &MethodDefinition, strategy: Strategy) -> Result<ExecutionPlan> {
    plan_with_embedded(method, strategy, false)
}

/// As [`plan`], optionally wiring in the embedded error estimator: vertical
/// plans fold the difference coefficients into the existing columns (zero
/// extra projections), horizontal and mixed plans append one extra row task.
pub fn plan_with_embedded(
    method: &MethodDefinition,
    strategy: Strategy,
    with_embedded: bool,
) -> Result<ExecutionPlan> {
    let s = method.stages;
    let rf = to_residual_form(method);
    let delta = if with_embedded {
        Some(embedded_difference(method)?)
    } else {
        None
    };

    let source_of = |id: usize| -> VecSource {
        if id == 0 {
            VecSource::ScaledF
        } else {
            VecSource::Residual(id + 1)
        }
    };

    // Weighted first-term coefficient function of row i.
    let f_entry = |i: usize| -> Result<(Rat, Vec<(usize, Rat)>)> {
        let (w, g, p) = method.first_term(i)?;
        Ok((g, p.into_iter().map(|(k, c)| (k, c * w)).collect()))
    };

    // Column needs per source: scale -> [(row, k, coeff)].
    type Needs = std::collections::BTreeMap<Rat, Vec<(RowId, usize, f64)>>;
    let mut f_needs: Needs = Needs::new();
    let mut r_needs: Vec<Needs> = vec![Needs::new(); s.saturating_sub(1)]; // j = 2..=s

    let add_sum = |needs: &mut Needs, row: RowId, sum: &PhiSum| {
        for combo in &sum.0 {
            if combo.terms.is_empty() {
                continue;
            }
            let slot = needs.entry(combo.scale).or_default();
            for &(k, c) in &combo.terms {
                slot.push((row, k, rat_f64(c)));
            }
        }
    };

    let f_rows: Vec<usize> = match strategy {
        Strategy::Vertical => (2..=s + 1).collect(),
        Strategy::Mixed => (2..=s).collect(),
        Strategy::Horizontal => Vec::new(),
    };
    for &i in &f_rows {
        let (g, terms) = f_entry(i)?;
        let sum = PhiSum::single(PhiCombination::new(g, terms));
        add_sum(&mut f_needs, RowId::Stage(i), &sum);
    }
    if strategy != Strategy::Horizontal {
        for (&(i, j), aij) in &rf.a {
            add_sum(&mut r_needs[j - 2], RowId::Stage(i), aij);
        }
        if strategy == Strategy::Vertical {
            for (&j, bj) in &rf.b {
                add_sum(&mut r_needs[j - 2], RowId::Stage(s + 1), bj);
            }
            if let Some(delta) = &delta {
                for (&j, dj) in delta {
                    add_sum(&mut r_needs[j - 2], RowId::Embedded, dj);
                }
            }
        }
    }

    let build_column = |source: VecSource, needs: &Needs| -> Option<ColumnTask> {
        if needs.values().all(|v| v.is_empty()) {
            return None;
        }
        let k_top = needs
            .values()
            .flatten()
            .map(|&(_, k, _)| k)
            .max()
            .unwrap_or(0);
        let waypoints: Vec<Waypoint> = needs
            .iter()
            .map(|(&g, list)| Waypoint {
                g: rat_f64(g),
                needs: list
                    .iter()
                    .map(|&(row, k, coeff)| Need { row, k, coeff })
                    .collect(),
            })
            .collect();
        let first_consumer = needs
            .values()
            .flatten()
            .map(|&(row, _, _)| match row {
                RowId::Stage(i) => i,
                RowId::Embedded => s + 1,
            })
            .min()
            .unwrap_or(2);
        Some(ColumnTask {
            source,
            k_top,
            waypoints,
            first_consumer,
        })
    };

    // Stage-row entries for horizontal grouping: (source id, coefficient fn).
    let row_entries = |i: usize| -> Result<Vec<(usize, PhiSum)>> {
        let mut entries = Vec::new();
        let (g, terms) = f_entry(i)?;
        entries.push((0usize, PhiSum::single(PhiCombination::new(g, terms))));
        let hi = if i == s + 1 { s } else { i - 1 };
        for j in 2..=hi {
            let sum = if i == s + 1 {
                rf.b.get(&j).cloned()
            } else {
                rf.a.get(&(i, j)).cloned()
            };
            if let Some(sum) = sum {
                entries.push((j - 1, sum));
            }
        }
        Ok(entries)
    };

    let build_row = |row: RowId, entries: &[(usize, PhiSum)], consumer: usize| -> Result<RowTask> {
        let grouped = group_row(entries).map_err(|e| match e {
            Error::PlanInfeasible(msg) => {
                let label = match row {
                    RowId::Stage(i) if i == s + 1 => "final stage".to_string(),
                    RowId::Stage(i) => format!("stage {i}"),
                    RowId::Embedded => "embedded row".to_string(),
                };
                Error::PlanInfeasible(format!("{label}: {msg}"))
            }
            other => other,
        })?;
        let map_terms = |terms: &[crate::schemes::GroupedTerm]| -> Vec<TaskTerm> {
            terms
                .iter()
                .map(|t| TaskTerm {
                    source: source_of(t.source),
                    power: t.power,
                    coeff: rat_f64(t.coeff),
                })
                .collect()
        };
        Ok(RowTask {
            row,
            scale: rat_f64(grouped.scale),
            phi_order: grouped.phi_order,
            phi_terms: map_terms(&grouped.phi_terms),
            poly_terms: map_terms(&grouped.poly_terms),
            first_consumer: consumer,
        })
    };

    let mut tasks: Vec<KrylovTask> = Vec::new();
    match strategy {
        Strategy::Vertical | Strategy::Mixed => {
            if let Some(col) = build_column(VecSource::ScaledF, &f_needs) {
                tasks.push(KrylovTask::Column(col));
            }
            for j in 2..=s {
                if let Some(col) = build_column(VecSource::Residual(j), &r_needs[j - 2]) {
                    tasks.push(KrylovTask::Column(col));
                }
            }
            if strategy == Strategy::Mixed {
                let entries = row_entries(s + 1)?;
                tasks.push(KrylovTask::Row(build_row(
                    RowId::Stage(s + 1),
                    &entries,
                    s + 1,
                )?));
            }
        }
        Strategy::Horizontal => {
            for i in 2..=s + 1 {
                let entries = row_entries(i)?;
                if entries.iter().all(|(_, sum)| sum.is_zero()) {
                    continue;
                }
                tasks.push(KrylovTask::Row(build_row(RowId::Stage(i), &entries, i)?));
            }
        }
    }
    tasks.sort_by_key(|t| t.first_consumer());
    let expected_projection_count = tasks.len();

    let embedded_row = match (&delta, strategy) {
        (Some(delta), Strategy::Horizontal | Strategy::Mixed) => {
            let entries: Vec<(usize, PhiSum)> = delta
                .iter()
                .map(|(&j, sum)| (j - 1, sum.clone()))
                .collect();
            Some(build_row(RowId::Embedded, &entries, s + 1)?)
        }
        _ => None,
    };

    Ok(ExecutionPlan {
        strategy,
        stages: s,
        tasks,
        expected_projection_count,
        embedded_row,
        with_embedded,
    })
}

/// Result of one EPIRK step.
#[derive(Debug)]
pub struct StepResult {
    pub u_next: DVector<f64>,
    /// Infinity norm of (main - embedded), when the plan carries the
    /// estimator.
    pub err_estimate: Option<f64>,
    pub err_vector: Option<DVector<f64>>,
    /// Per-evaluation Krylov reports, in execution order.
    pub krylov: Vec<KrylovReport>,
    /// Cached stage residuals `r(U_nj)`, `j = 2..=s`.
    pub residual_vectors: Vec<DVector<f64>>,
    /// Number of adaptive-Krylov evaluations (the paper's "projections").
    pub projections: usize,
    /// Matvecs consumed inside those evaluations.
    pub matvecs: usize,
    /// Extra operator applications: downshifts, grouped-row power chains,
    /// remainder Jacobian products.
    pub aux_applies: usize,
}

struct TaskExecutor<'a> {
    op: &'a CountingOperator<'a>,
    krylov_tol: f64,
    options: &'a KrylovOptions,
    sources: Vec<Option<DVector<f64>>>, // 0 = h f, j-1 = h r_j
    accum: Vec<Option<DVector<f64>>>,   // rows 2..=s+1 then embedded
    stages: usize,
    reports: Vec<KrylovReport>,
}

impl TaskExecutor<'_> {
    fn row_index(&self, row: RowId) -> usize {
        match row {
            RowId::Stage(i) => i - 2,
            RowId::Embedded => self.stages,
        }
    }

    fn source(&self, source: VecSource) -> Result<&DVector<f64>> {
        let idx = match source {
            VecSource::ScaledF => 0,
            VecSource::Residual(j) => j - 1,
        };
        self.sources[idx]
            .as_ref()
            .ok_or_else(|| Error::numeric("task scheduled before its source vector exists"))
    }

    fn add_to_row(&mut self, row: RowId, value: DVector<f64>, coeff: f64) {
        let idx = self.row_index(row);
        match &mut self.accum[idx] {
            Some(acc) => acc.axpy(coeff, &value, 1.0),
            slot @ None => *slot = Some(value * coeff),
        }
    }

    fn run_column(&mut self, task: &ColumnTask) -> Result<()> {
        let src = self.source(task.source)?.clone();
        let gs: Vec<f64> = task.waypoints.iter().map(|w| w.g).collect();
        let (values, report) = eval_single_phi_with_waypoints_opts(
            self.op,
            task.k_top,
            &src,
            &gs,
            self.krylov_tol,
            self.options,
        )?;
        self.reports.push(report);
        for (wp, top_value) in task.waypoints.iter().zip(values) {
            // Downward recurrence at this waypoint:
            // phi_k(gA)b = gA phi_{k+1}(gA)b + b/k!.
            let min_k = wp.needs.iter().map(|n| n.k).min().unwrap_or(task.k_top);
            let mut by_k: Vec<DVector<f64>> = Vec::with_capacity(task.k_top - min_k + 1);
            by_k.push(top_value);
            for k in (min_k..task.k_top).rev() {
                let higher = by_k.last().unwrap();
                let mut shifted = self.op.apply_vec(higher) * wp.g;
                shifted.axpy(1.0 / crate::phi::factorial(k), &src, 1.0);
                by_k.push(shifted);
            }
            for need in &wp.needs {
                let value = by_k[task.k_top - need.k].clone();
                self.add_to_row(need.row, value, need.coeff);
            }
        }
        Ok(())
    }

    fn run_row(&mut self, task: &RowTask) -> Result<()> {
        let n = self.op.dim();
        // Power chains (g A)^p src, shared between the phi vector and the
        // polynomial part.
        let mut chains: std::collections::HashMap<usize, Vec<DVector<f64>>> =
            std::collections::HashMap::new();
        let slot_of = |s: VecSource| match s {
            VecSource::ScaledF => 0usize,
            VecSource::Residual(j) => j - 1,
        };
        for term in task.phi_terms.iter().chain(&task.poly_terms) {
            let slot = slot_of(term.source);
            let chain = match chains.entry(slot) {
                std::collections::hash_map::Entry::Occupied(e) => e.into_mut(),
                std::collections::hash_map::Entry::Vacant(e) => {
                    e.insert(vec![self.source(term.source)?.clone()])
                }
            };
            while chain.len() <= term.power {
                let next = self.op.apply_vec(chain.last().unwrap()) * task.scale;
                chain.push(next);
            }
        }
        let mut b = DVector::<f64>::zeros(n);
        for term in &task.phi_terms {
            b.axpy(term.coeff, &chains[&slot_of(term.source)][term.power], 1.0);
        }
        let (values, report) = eval_single_phi_with_waypoints_opts(
            self.op,
            task.phi_order,
            &b,
            &[task.scale],
            self.krylov_tol,
            self.options,
        )?;
        self.reports.push(report);
        let mut row_value = values.into_iter().next().expect("one waypoint");
        for term in &task.poly_terms {
            row_value.axpy(term.coeff, &chains[&slot_of(term.source)][term.power], 1.0);
        }
        self.add_to_row(task.row, row_value, 1.0);
        Ok(())
    }

    fn run(&mut self, task: &KrylovTask) -> Result<()> {
        match task {
            KrylovTask::Column(c) => self.run_column(c),
            KrylovTask::Row(r) => self.run_row(r),
        }
    }
}

/// Executes one EPIRK step according to a plan. All strategies produce the
/// same `u_next` up to the Krylov tolerance.
pub fn step(
    ctx: &StepContext,
    plan: &ExecutionPlan,
    krylov_tol: f64,
    options: &KrylovOptions,
) -> Result<StepResult> {
    let s = plan.stages;
    let n = ctx.u_n.len();
    let scaled = ScaledOperator::new(&ctx.jacobian, ctx.h);
    let counting = CountingOperator::new(&scaled);

    let mut exec = TaskExecutor {
        op: &counting,
        krylov_tol,
        options,
        sources: vec![None; s],
        accum: vec![None; s + 1],
        stages: s,
        reports: Vec::new(),
    };
    exec.sources[0] = Some(&ctx.f_n * ctx.h);

    let mut residual_vectors: Vec<DVector<f64>> = Vec::with_capacity(s - 1);
    let mut task_idx = 0;
    let mut u_next = ctx.u_n.clone();
    for i in 2..=s + 1 {
        while task_idx < plan.tasks.len() && plan.tasks[task_idx].first_consumer() <= i {
            exec.run(&plan.tasks[task_idx])?;
            task_idx += 1;
        }
        let update = exec.accum[i - 2]
            .take()
            .unwrap_or_else(|| DVector::zeros(n));
        if i <= s {
            let u_stage = &ctx.u_n + update;
            let r = remainder(&u_stage, ctx)?;
            exec.sources[i - 1] = Some(&r * ctx.h);
            residual_vectors.push(r);
        } else {
            u_next += update;
        }
    }
    debug_assert_eq!(task_idx, plan.tasks.len());
    let main_projections = exec.reports.len();
    assert_eq!(
        main_projections, plan.expected_projection_count,
        "projection count deviates from the plan"
    );

    let (err_estimate, err_vector) = if plan.with_embedded {
        let err_vec = if let Some(row) = &plan.embedded_row {
            exec.run_row(row)?;
            exec.accum[s].take().unwrap_or_else(|| DVector::zeros(n))
        } else {
            exec.accum[s].take().unwrap_or_else(|| DVector::zeros(n))
        };
        (Some(err_vec.amax()), Some(err_vec))
    } else {
        (None, None)
    };

    if u_next.iter().any(|x| !x.is_finite()) {
        return Err(Error::numeric("step produced NaN/Inf"));
    }

    let matvecs: usize = exec.reports.iter().map(|r| r.total_matvecs).sum();
    let total_applies = counting.count();
    Ok(StepResult {
        u_next,
        err_estimate,
        err_vector,
        projections: main_projections,
        matvecs,
        aux_applies: total_applies.saturating_sub(matvecs),
        krylov: exec.reports,
        residual_vectors,
    })
}

/// Options shared by the integration drivers.
#[derive(Debug, Clone)]
pub struct IntegrateOptions {
    pub krylov: KrylovOptions,
    pub jacobian: JacobianMode,
    /// Record per-step detail in the run report.
    pub record_steps: bool,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        Self {
            krylov: KrylovOptions::default(),
            jacobian: JacobianMode::Analytic,
            record_steps: true,
        }
    }
}

fn base_report(
    problem: &dyn Problem,
    method: &MethodDefinition,
    strategy: Strategy,
) -> RunReport {
    RunReport {
        method: method.name.clone(),
        strategy: strategy.name().to_string(),
        problem: problem.name().to_string(),
        n: problem.dimension(),
        h: None,
        atol: None,
        rtol: None,
        steps: Vec::new(),
        final_error: None,
        total_matvecs: 0,
        total_projections: 0,
        wall_time_s: 0.0,
        final_state: Vec::new(),
        t_final: 0.0,
    }
}

/// Fixed-step integration over `t_span`; the last step is shortened to hit
/// the endpoint exactly.
pub fn integrate_fixed(
    problem: &dyn Problem,
    method: &MethodDefinition,
    strategy: Strategy,
    t_span: (f64, f64),
    h: f64,
    krylov_tol: f64,
) -> Result<RunReport> {
    integrate_fixed_opts(
        problem,
        method,
        strategy,
        t_span,
        h,
        krylov_tol,
        &IntegrateOptions::default(),
    )
}

pub fn integrate_fixed_opts(
    problem: &dyn Problem,
    method: &MethodDefinition,
    strategy: Strategy,
    t_span: (f64, f64),
    h: f64,
    krylov_tol: f64,
    opts: &IntegrateOptions,
) -> Result<RunReport> {
    if h <= 0.0 || h.is_nan() || t_span.1 <= t_span.0 {
        return Err(Error::invalid("integrate_fixed needs h > 0 and t1 > t0"));
    }
    let started = Instant::now();
    let the_plan = plan(method, strategy)?;
    let mut report = base_report(problem, method, strategy);
    report.h = Some(h);

    let span = t_span.1 - t_span.0;
    let mut t = t_span.0;
    let mut u = problem.initial();
    let mut step_count = 0usize;
    while t < t_span.1 - 1e-12 * span {
        let h_step = h.min(t_span.1 - t);
        let ctx = StepContext::new(problem, u.clone(), h_step, opts.jacobian)?;
        match step(&ctx, &the_plan, krylov_tol, &opts.krylov) {
            Ok(result) => {
                report.total_matvecs += result.matvecs + result.aux_applies;
                report.total_projections += result.projections;
                if opts.record_steps {
                    report.steps.push(StepRecord {
                        t,
                        h: h_step,
                        accepted: true,
                        projections: result.projections,
                        matvecs: result.matvecs,
                        aux_applies: result.aux_applies,
                        err_estimate: result.err_estimate,
                        err_weighted: None,
                    });
                }
                u = result.u_next;
                step_count += 1;
                t = t_span.0 + step_count as f64 * h;
                if t > t_span.1 {
                    t = t_span.1;
                }
            }
            Err(e) => {
                report.wall_time_s = started.elapsed().as_secs_f64();
                report.final_state = u.as_slice().to_vec();
                report.t_final = t;
                return Err(Error::StepFailed {
                    t,
                    source: Box::new(e),
                    report: Box::new(report),
                });
            }
        }
    }
    report.wall_time_s = started.elapsed().as_secs_f64();
    report.final_state = u.as_slice().to_vec();
    report.t_final = t_span.1;
    Ok(report)
}

/// Adaptive integration with the embedded third-order estimator:
/// `err = ||(main - embedded) / (atol + rtol |u|)||_inf`, accept when <= 1,
/// `h <- h min(5, max(0.2, 0.9 err^{-1/4}))`.
pub fn integrate_adaptive(
    problem: &dyn Problem,
    method: &MethodDefinition,
    strategy: Strategy,
    t_span: (f64, f64),
    atol: f64,
    rtol: f64,
    h0: f64,
) -> Result<RunReport> {
    integrate_adaptive_opts(
        problem,
        method,
        strategy,
        t_span,
        atol,
        rtol,
        h0,
        &IntegrateOptions::default(),
    )
}

#[allow(clippy::too_many_arguments)]
pub fn integrate_adaptive_opts(
    problem: &dyn Problem,
    method: &MethodDefinition,
    strategy: Strategy,
    t_span: (f64, f64),
    atol: f64,
    rtol: f64,
    h0: f64,
    opts: &IntegrateOptions,
) -> Result<RunReport> {
    if atol <= 0.0 || rtol < 0.0 || h0 <= 0.0 || atol.is_nan() || rtol.is_nan() || h0.is_nan() {
        return Err(Error::invalid("integrate_adaptive needs atol > 0, h0 > 0"));
    }
    let started = Instant::now();
    let the_plan = plan_with_embedded(method, strategy, true)?;
    let mut report = base_report(problem, method, strategy);
    report.atol = Some(atol);
    report.rtol = Some(rtol);

    let span = t_span.1 - t_span.0;
    let mut t = t_span.0;
    let mut u = problem.initial();
    let mut h = h0.min(span);
    let max_attempts = 1_000_000usize;
    let mut attempts = 0usize;
    while t < t_span.1 - 1e-12 * span {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::numeric("adaptive driver exceeded attempt budget"));
        }
        if h < 1e-14 * span {
            return Err(Error::StiffnessFailure { t, h });
        }
        let h_step = h.min(t_span.1 - t);
        let unorm = u.amax();
        // 0.01x the stepping tolerance, floored at what the linear algebra
        // can actually deliver.
        let krylov_tol =
            (0.01 * atol.min(rtol * unorm)).max(40.0 * f64::EPSILON * unorm.max(1.0));
        let ctx = StepContext::new(problem, u.clone(), h_step, opts.jacobian)?;
        let result = match step(&ctx, &the_plan, krylov_tol, &opts.krylov) {
            Ok(r) => r,
            Err(e) => {
                report.wall_time_s = started.elapsed().as_secs_f64();
                report.final_state = u.as_slice().to_vec();
                report.t_final = t;
                return Err(Error::StepFailed {
                    t,
                    source: Box::new(e),
                    report: Box::new(report),
                });
            }
        };
        let err_vec = result.err_vector.as_ref().expect("embedded plan");
        let err_weighted = err_vec
            .iter()
            .zip(u.iter())
            .map(|(e, ui)| (e / (atol + rtol * ui.abs())).abs())
            .fold(0.0f64, f64::max);
        let accepted = err_weighted <= 1.0;
        report.total_matvecs += result.matvecs + result.aux_applies;
        report.total_projections += result.projections + 1; // embedded row or shared columns
        if opts.record_steps {
            report.steps.push(StepRecord {
                t,
                h: h_step,
                accepted,
                projections: result.projections,
                matvecs: result.matvecs,
                aux_applies: result.aux_applies,
                err_estimate: result.err_estimate,
                err_weighted: Some(err_weighted),
            });
        }
        if accepted {
            u = result.u_next;
            t += h_step;
        }
        let factor = if err_weighted > 0.0 {
            (0.9 * err_weighted.powf(-0.25)).clamp(0.2, 5.0)
        } else {
            5.0
        };
        h = (h_step * factor).min(span);
    }
    report.wall_time_s = started.elapsed().as_secs_f64();
    report.final_state = u.as_slice().to_vec();
    report.t_final = t_span.1;
    Ok(report)
}
