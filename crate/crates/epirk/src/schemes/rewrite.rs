//! Recurrence rewriting of a stage row into a single phi order.
//!
//! The horizontal execution strategy computes all terms of one stage with a
//! single Krylov evaluation. That requires every term to share one scale `g`,
//! and uses the recurrence `phi_k(x) = x phi_{k+1}(x) + 1/k!` iterated to
//!
//! ```text
//! phi_k(x) = x^{K-k} phi_K(x) + sum_{i=0}^{K-k-1} x^i / (k+i)!
//! ```
//!
//! so a row `sum_j c_j phi_{k_j}(g z) w_j` becomes one `phi_K(g z) B` with
//! `B = sum_j c_j (g z)^{K-k_j} w_j` plus a polynomial part evaluated with
//! plain operator applications.

use super::{rat_factorial, PhiSum, Rat};
use crate::error::{Error, Result};
use num_traits::Zero;

/// `coeff * (g z)^power` applied to the vector identified by `source`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedTerm {
    pub source: usize,
    pub power: usize,
    pub coeff: Rat,
}

/// A stage row rewritten to a single phi order with common scale.
#[derive(Debug, Clone)]
pub struct GroupedRow {
    pub scale: Rat,
    pub phi_order: usize,
    /// Terms assembled into the vector fed to `phi_K(g z)`.
    pub phi_terms: Vec<GroupedTerm>,
    /// Terms added directly (no phi function).
    pub poly_terms: Vec<GroupedTerm>,
}

/// Rewrites a row given as `(source, coefficient function)` pairs. Fails if
/// the nonzero terms do not share a single scale, naming the offending
/// scales.
pub fn group_row(entries: &[(usize, PhiSum)]) -> Result<GroupedRow> {
    let mut scale: Option<Rat> = None;
    let mut flat: Vec<(usize, usize, Rat)> = Vec::new(); // (source, k, coeff)
    for (source, sum) in entries {
        for combo in &sum.0 {
            if combo.terms.is_empty() {
                continue;
            }
            match scale {
                None => scale = Some(combo.scale),
                Some(g) if g == combo.scale => {}
                Some(g) => {
                    return Err(Error::PlanInfeasible(format!(
                        "row mixes scales {} and {}",
                        g, combo.scale
                    )))
                }
            }
            for &(k, c) in &combo.terms {
                flat.push((*source, k, c));
            }
        }
    }
    let scale = scale.ok_or_else(|| Error::invalid("row has no nonzero terms"))?;
    let phi_order = flat.iter().map(|&(_, k, _)| k).max().unwrap();
    let mut phi_terms = Vec::new();
    let mut poly_terms = Vec::new();
    for (source, k, coeff) in flat {
        phi_terms.push(GroupedTerm {
            source,
            power: phi_order - k,
            coeff,
        });
        for i in 0..phi_order - k {
            let c = coeff / rat_factorial(k + i);
            if !c.is_zero() {
                poly_terms.push(GroupedTerm {
                    source,
                    power: i,
                    coeff: c,
                });
            }
        }
    }
    Ok(GroupedRow {
        scale,
        phi_order,
        phi_terms,
        poly_terms,
    })
}
