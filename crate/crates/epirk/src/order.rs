//! Numerical verification of the stiff order conditions against a
//! [`MethodDefinition`].
//!
//! Conditions C1-C8 are operator identities in an arbitrary square matrix
//! `Z` (and a second arbitrary matrix `K` for C8); they are checked on a set
//! of small random probe matrices. The simplified conditions C4*-C8* are the
//! same identities evaluated at `Z = 0`; together with C1-C3 they certify
//! order five for methods (such as three-stage schemes) for which the full
//! fifth-order set has no solution.
//!
//! Two printed-source discrepancies are resolved here by cross-checking the
//! built-in schemes exactly: the C6 right-hand side is `12 phi_5` (not
//! `4! phi_5`), and the C8 weight is `b_i alpha_{i1} P_{i1}` with the
//! `alpha_{i1}` factor kept inside the second term of `Psi_i` — the unique
//! reading under which C8 reduces to the known EXPRB condition C4' for
//! residual-form methods.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::phi;
use crate::schemes::{rat_f64, to_residual_form, MethodDefinition, PhiSum, Rat};

/// Pass threshold on condition residuals (absolute, max-entry norm). The
/// identities are exact; the slack covers float roundoff through the phi
/// evaluations.
pub const RESIDUAL_THRESHOLD: f64 = 1e-10;

/// Probe matrix dimension: large enough to separate phi_3 from phi_4 as
/// operators, small enough for exact dense evaluation.
const PROBE_DIM: usize = 6;

/// The aggregated first-term moments of one stage:
/// `P_{i,m} = sum_k p_{i1k} / (k+m-1)!`.
#[derive(Debug, Clone, Copy)]
pub struct PCoefficients {
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
}

/// Per-condition outcome.
#[derive(Debug, Clone)]
pub struct ConditionResult {
    pub label: String,
    /// Max over probes of the residual (max-entry norm).
    pub residual: f64,
    pub satisfied: bool,
    /// Order certified by this condition (together with the lower ones).
    pub order: u32,
}

#[derive(Debug, Clone)]
pub struct ConditionReport {
    pub conditions: Vec<ConditionResult>,
    /// Largest p such that all conditions of order <= p pass. The simplified
    /// conditions certify order 5 only jointly with C1-C3.
    pub certified_order: u32,
    pub threshold: f64,
}

impl ConditionReport {
    pub fn residual(&self, label: &str) -> Option<f64> {
        self.conditions
            .iter()
            .find(|c| c.label == label)
            .map(|c| c.residual)
    }
}

struct StageData {
    alpha: f64,
    g: f64,
    pc: PCoefficients,
}

/// `P_{i1}, P_{i2}, P_{i3}` for internal stage `i`.
pub fn p_coefficients(method: &MethodDefinition, stage_i: usize) -> Result<PCoefficients> {
    let (_, _, p) = method.first_term(stage_i)?;
    Ok(p_from_terms(&p))
}

fn p_from_terms(p: &[(usize, Rat)]) -> PCoefficients {
    let moment = |shift: usize| -> f64 {
        p.iter()
            .map(|&(k, c)| rat_f64(c) / phi::factorial(k + shift))
            .sum()
    };
    PCoefficients {
        p1: moment(0),
        p2: moment(1),
        p3: moment(2),
    }
}

fn stage_data(method: &MethodDefinition) -> Result<Vec<StageData>> {
    (2..=method.stages)
        .map(|i| {
            let (alpha, g, p) = method.first_term(i)?;
            Ok(StageData {
                alpha: rat_f64(alpha),
                g: rat_f64(g),
                pc: p_from_terms(&p),
            })
        })
        .collect()
}

/// `Psi_i(Z)` of the fifth-order remainder condition:
///
/// `Psi_i(Z) = 1/2 sum_{j<i} alpha_{j1}^2 P_{j1}^2 a_{ij}(Z)
///             - alpha_{i1} g_{i1}^2 sum_k p_{i1k} phi_{k+2}(g_{i1} Z)`.
pub fn big_psi(method: &MethodDefinition, stage_i: usize, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if stage_i < 2 || stage_i > method.stages {
        return Err(Error::invalid(format!(
            "big_psi stage {stage_i} out of range 2..={}",
            method.stages
        )));
    }
    let residual = to_residual_form(method);
    let n = z.nrows();
    let mut out = DMatrix::<f64>::zeros(n, n);
    for j in 2..stage_i {
        if let Some(aij) = residual.a.get(&(stage_i, j)) {
            let (alpha_j, _, pj) = method.first_term(j)?;
            let w = 0.5 * rat_f64(alpha_j).powi(2) * p_from_terms(&pj).p1.powi(2);
            out += aij.eval_dense(z)? * w;
        }
    }
    let (alpha_i, g_i, p_i) = method.first_term(stage_i)?;
    let gz = z * rat_f64(g_i);
    let kmax = p_i.iter().map(|&(k, _)| k).max().unwrap_or(0) + 2;
    let table = phi::phi_dense(kmax, &gz)?;
    let lead = rat_f64(alpha_i) * rat_f64(g_i).powi(2);
    for &(k, c) in &p_i {
        out -= table.entry(k + 2).expect("within table") * (lead * rat_f64(c));
    }
    Ok(out)
}

fn scalar_big_psi_at_zero(method: &MethodDefinition) -> Result<Vec<f64>> {
    // Psi_i(0) per internal stage, using a_ij(0) values.
    let residual = to_residual_form(method);
    (2..=method.stages)
        .map(|i| {
            let mut acc = 0.0;
            for j in 2..i {
                if let Some(aij) = residual.a.get(&(i, j)) {
                    let (alpha_j, _, pj) = method.first_term(j)?;
                    acc += 0.5
                        * rat_f64(alpha_j).powi(2)
                        * p_from_terms(&pj).p1.powi(2)
                        * rat_f64(aij.value_at_zero());
                }
            }
            let (alpha_i, g_i, p_i) = method.first_term(i)?;
            acc -= rat_f64(alpha_i) * rat_f64(g_i).powi(2) * p_from_terms(&p_i).p3;
            Ok(acc)
        })
        .collect()
}

fn probe_matrix(rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(PROBE_DIM, PROBE_DIM, |_, _| rng.gen_range(-1.0..1.0))
}

/// Evaluates the stiff order conditions on `probes` random probe matrices.
pub fn check_conditions(
    method: &MethodDefinition,
    probes: usize,
    seed: u64,
) -> Result<ConditionReport> {
    if probes == 0 {
        return Err(Error::invalid("check_conditions requires probes >= 1"));
    }
    let stages = stage_data(method)?;
    let residual_form = to_residual_form(method);
    let b: Vec<Option<&PhiSum>> = (2..=method.stages)
        .map(|j| residual_form.b.get(&j))
        .collect();

    // Full conditions: (label, weight(stage), rhs coefficient, rhs phi index, order)
    type WeightFn = fn(&StageData) -> f64;
    let full: [(&str, WeightFn, f64, usize, u32); 7] = [
        ("C1", |s| s.alpha.powi(2) * s.pc.p1.powi(2), 2.0, 3, 3),
        ("C2", |s| s.alpha.powi(2) * s.g * s.pc.p1 * s.pc.p2, 3.0, 4, 4),
        ("C3", |s| s.alpha.powi(3) * s.pc.p1.powi(3), 6.0, 4, 4),
        ("C4", |s| s.g.powi(2) * s.alpha.powi(2) * s.pc.p1 * s.pc.p3, 4.0, 5, 5),
        ("C5", |s| s.alpha.powi(2) * s.g.powi(2) * s.pc.p2.powi(2), 6.0, 5, 5),
        ("C6", |s| s.g * s.alpha.powi(3) * s.pc.p1.powi(2) * s.pc.p2, 12.0, 5, 5),
        ("C7", |s| s.alpha.powi(4) * s.pc.p1.powi(4), 24.0, 5, 5),
    ];

    let mut residuals: Vec<f64> = vec![0.0; full.len()];
    let mut c0_residual: f64 = 0.0;
    let mut c8_residual: f64 = 0.0;

    // Order-2 normalization: beta_1 psi_{s+1,1}(g_{s+1,1} Z) = phi_1(Z).
    let (final_w, final_g, final_p) = method.first_term(method.stages + 1)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..probes {
        let z = probe_matrix(&mut rng);
        let k_mat = probe_matrix(&mut rng);
        let rhs_table = phi::phi_dense(5, &z)?;

        {
            let kmax = final_p.iter().map(|&(k, _)| k).max().unwrap_or(1);
            let table = phi::phi_dense(kmax, &(&z * rat_f64(final_g)))?;
            let mut lhs = DMatrix::<f64>::zeros(PROBE_DIM, PROBE_DIM);
            for &(k, c) in &final_p {
                lhs += table.entry(k).unwrap() * (rat_f64(final_w) * rat_f64(c));
            }
            let resid = (lhs - rhs_table.entry(1).unwrap()).amax();
            c0_residual = c0_residual.max(resid);
        }
        let b_vals: Vec<Option<DMatrix<f64>>> = b
            .iter()
            .map(|sum| sum.map(|s| s.eval_dense(&z)).transpose())
            .collect::<Result<_>>()?;

        for (ci, (_, weight, rhs_c, rhs_k, _)) in full.iter().enumerate() {
            let mut lhs = DMatrix::<f64>::zeros(PROBE_DIM, PROBE_DIM);
            for (sd, bv) in stages.iter().zip(&b_vals) {
                if let Some(bv) = bv {
                    lhs += bv * weight(sd);
                }
            }
            let resid = (&lhs - rhs_table.entry(*rhs_k).unwrap() * *rhs_c).amax();
            residuals[ci] = residuals[ci].max(resid);
        }

        // C8: sum_i b_i(Z) alpha_i P_{i1} K Psi_i(Z) = 0.
        let mut lhs = DMatrix::<f64>::zeros(PROBE_DIM, PROBE_DIM);
        for (i, (sd, bv)) in stages.iter().zip(&b_vals).enumerate() {
            if let Some(bv) = bv {
                let psi_i = big_psi(method, i + 2, &z)?;
                lhs += bv * sd.alpha * sd.pc.p1 * &k_mat * psi_i;
            }
        }
        c8_residual = c8_residual.max(lhs.amax());
    }

    // Simplified conditions at z = 0: the same weights against
    // c * phi_t(0) = c / t!.
    let b0: Vec<f64> = b
        .iter()
        .map(|s| s.map(|s| rat_f64(s.value_at_zero())).unwrap_or(0.0))
        .collect();
    let mut star_results: Vec<(String, f64)> = Vec::new();
    for (label, weight, rhs_c, rhs_k, _) in full.iter().skip(3) {
        let lhs: f64 = stages
            .iter()
            .zip(&b0)
            .map(|(sd, b0j)| b0j * weight(sd))
            .sum();
        let resid = (lhs - rhs_c / phi::factorial(*rhs_k)).abs();
        star_results.push((format!("{label}*"), resid));
    }
    // C8*: the scalar identity at Z = 0 (the Z-dependent remainder is what
    // the extra regularity assumption absorbs, so only the value at zero is a
    // solvable condition for general-psi methods).
    let psi0 = scalar_big_psi_at_zero(method)?;
    let c8_star: f64 = stages
        .iter()
        .zip(&b0)
        .zip(&psi0)
        .map(|((sd, b0j), p0)| b0j * sd.alpha * sd.pc.p1 * p0)
        .sum::<f64>()
        .abs();
    star_results.push(("C8*".into(), c8_star));

    let mut conditions = Vec::new();
    conditions.push(ConditionResult {
        label: "C0".into(),
        residual: c0_residual,
        satisfied: c0_residual <= RESIDUAL_THRESHOLD,
        order: 2,
    });
    for (ci, (label, _, _, _, order)) in full.iter().enumerate() {
        conditions.push(ConditionResult {
            label: label.to_string(),
            residual: residuals[ci],
            satisfied: residuals[ci] <= RESIDUAL_THRESHOLD,
            order: *order,
        });
    }
    conditions.push(ConditionResult {
        label: "C8".into(),
        residual: c8_residual,
        satisfied: c8_residual <= RESIDUAL_THRESHOLD,
        order: 5,
    });
    for (label, resid) in star_results {
        conditions.push(ConditionResult {
            label,
            residual: resid,
            satisfied: resid <= RESIDUAL_THRESHOLD,
            order: 5,
        });
    }

    let pass = |label: &str| {
        conditions
            .iter()
            .find(|c| c.label == label)
            .map(|c| c.satisfied)
            .unwrap_or(false)
    };
    let order3 = pass("C0") && pass("C1");
    let order4 = order3 && pass("C2") && pass("C3");
    let full5 = ["C4", "C5", "C6", "C7", "C8"].iter().all(|l| pass(l));
    let star5 = ["C4*", "C5*", "C6*", "C7*", "C8*"].iter().all(|l| pass(l));
    let certified_order = if order4 && (full5 || star5) {
        5
    } else if order4 {
        4
    } else if order3 {
        3
    } else {
        2
    };

    Ok(ConditionReport {
        conditions,
        certified_order,
        threshold: RESIDUAL_THRESHOLD,
    })
}

/// Alternate rule set: the exponential-Rosenbrock conditions C1'-C4', valid
/// for residual-form methods whose internal first terms are
/// `c_i phi_1(c_i z)`. Cross-validates the EPIRK-form checker.
pub fn check_exprb_conditions(
    method: &MethodDefinition,
    probes: usize,
    seed: u64,
) -> Result<ConditionReport> {
    if probes == 0 {
        return Err(Error::invalid("check_exprb_conditions requires probes >= 1"));
    }
    let mut c: Vec<f64> = Vec::new();
    for i in 2..=method.stages {
        let (alpha, g, p) = method.first_term(i)?;
        if alpha != g || p != vec![(1, Rat::from_integer(1))] {
            return Err(Error::NotAvailable(format!(
                "method {} is not in c_i*phi_1(c_i z) form at stage {i}",
                method.name
            )));
        }
        c.push(rat_f64(g));
    }
    let residual_form = to_residual_form(method);
    let labels = ["C1'", "C2'", "C3'*", "C4'"];
    let mut residuals = [0.0f64; 4];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..probes {
        let z = probe_matrix(&mut rng);
        let k_mat = probe_matrix(&mut rng);
        let rhs = phi::phi_dense(5, &z)?;
        let b_vals: Vec<Option<DMatrix<f64>>> = (2..=method.stages)
            .map(|j| residual_form.b.get(&j).map(|s| s.eval_dense(&z)).transpose())
            .collect::<Result<_>>()?;
        for (t, (pow, rhs_c, rhs_k)) in [(2u32, 2.0, 3usize), (3, 6.0, 4)].iter().enumerate() {
            let mut lhs = DMatrix::<f64>::zeros(PROBE_DIM, PROBE_DIM);
            for (ci, bv) in c.iter().zip(&b_vals) {
                if let Some(bv) = bv {
                    lhs += bv * ci.powi(*pow as i32);
                }
            }
            let resid = (&lhs - rhs.entry(*rhs_k).unwrap() * *rhs_c).amax();
            residuals[t] = residuals[t].max(resid);
        }
        // C3' holds only at Z = 0 for three-stage methods, like the
        // simplified EPIRK set.
        let b0_sum: f64 = c
            .iter()
            .zip(2..=method.stages)
            .map(|(ci, j)| {
                residual_form
                    .b
                    .get(&j)
                    .map(|s| rat_f64(s.value_at_zero()) * ci.powi(4))
                    .unwrap_or(0.0)
            })
            .sum();
        residuals[2] = residuals[2].max((b0_sum - 24.0 / phi::factorial(5)).abs());
        // C4' in weak form: sum_i c_i b_i(0) K psi_{3,i}(Z) = 0 with
        // psi_{3,i}(Z) = sum_j a_ij(Z) c_j^2/2 - c_i^3 phi_3(c_i Z). The
        // strong form (b_i at Z) has no three-stage solution.
        let mut lhs = DMatrix::<f64>::zeros(PROBE_DIM, PROBE_DIM);
        for (idx, ci) in c.iter().enumerate() {
            let i = idx + 2;
            let b0 = residual_form
                .b
                .get(&i)
                .map(|s| rat_f64(s.value_at_zero()))
                .unwrap_or(0.0);
            if b0 == 0.0 {
                continue;
            }
            let mut psi3 = DMatrix::<f64>::zeros(PROBE_DIM, PROBE_DIM);
            for j in 2..i {
                if let Some(aij) = residual_form.a.get(&(i, j)) {
                    psi3 += aij.eval_dense(&z)? * (c[j - 2].powi(2) / 2.0);
                }
            }
            let table = phi::phi_dense(3, &(&z * *ci))?;
            psi3 -= table.entry(3).unwrap() * ci.powi(3);
            lhs += (&k_mat * psi3) * (b0 * *ci);
        }
        residuals[3] = residuals[3].max(lhs.amax());
    }
    let orders = [3u32, 4, 5, 5];
    let conditions: Vec<ConditionResult> = labels
        .iter()
        .zip(residuals)
        .zip(orders)
        .map(|((label, residual), order)| ConditionResult {
            label: label.to_string(),
            residual,
            satisfied: residual <= RESIDUAL_THRESHOLD,
            order,
        })
        .collect();
    let pass = |i: usize| conditions[i].satisfied;
    let certified_order = if pass(0) && pass(1) && pass(2) && pass(3) {
        5
    } else if pass(0) && pass(1) {
        4
    } else if pass(0) {
        3
    } else {
        2
    };
    Ok(ConditionReport {
        conditions,
        certified_order,
        threshold: RESIDUAL_THRESHOLD,
    })
}
