//! EPIRK tableau representation, the psi/a/b coefficient algebra, and the
//! built-in stiffly accurate schemes.
//!
//! A method is stored as stage coefficients `alpha_{ij}` / `beta_j` together
//! with per-entry functions `psi_{ij}(z) = sum_k p_{ijk} phi_k(g_{ij} z)`.
//! Two structural forms exist: the forward-difference form, whose internal
//! coefficients act on `Delta^{(j-1)} r(u_n)`, and the residual form acting on
//! `r(U_{nj})` directly. The residual form is canonical for execution; the
//! forward-difference form is accepted on input and converted.
//!
//! All coefficients are exact rationals and converted to floating point only
//! at evaluation time.

mod builtin;
mod rewrite;
mod tableau_text;

pub use builtin::{builtin, BuiltinScheme};
pub use rewrite::{group_row, GroupedRow, GroupedTerm};
pub use tableau_text::{parse_tableau, write_tableau};

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_rational::Ratio;
use num_traits::{One, Zero};

use crate::error::{Error, Result};
use crate::phi;

/// Exact rational coefficient.
pub type Rat = Ratio<i64>;

/// `(weight, scale, p-coefficients)` of a stage's first term.
pub type FirstTerm = (Rat, Rat, Vec<(usize, Rat)>);

pub fn rat(n: i64, d: i64) -> Rat {
    Rat::new(n, d)
}

pub fn rat_f64(r: Rat) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

fn rat_factorial(n: usize) -> Rat {
    let mut acc: i64 = 1;
    for i in 2..=n as i64 {
        acc *= i;
    }
    Rat::from_integer(acc)
}

/// A formal linear combination `z -> sum_k coeff_k * phi_k(g * z)` with one
/// common scale `g`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiCombination {
    /// Scale `g` in `(0, 1]`.
    pub scale: Rat,
    /// `(k, coeff)` pairs with distinct `k >= 1`, sorted by `k`.
    pub terms: Vec<(usize, Rat)>,
}

impl PhiCombination {
    pub fn new(scale: Rat, mut terms: Vec<(usize, Rat)>) -> Self {
        terms.retain(|(_, c)| !c.is_zero());
        terms.sort_by_key(|&(k, _)| k);
        Self { scale, terms }
    }

    pub fn single(scale: Rat, k: usize, coeff: Rat) -> Self {
        Self::new(scale, vec![(k, coeff)])
    }

    /// Highest phi index present (0 when empty).
    pub fn max_index(&self) -> usize {
        self.terms.last().map(|&(k, _)| k).unwrap_or(0)
    }

    /// Value at `z = 0`: `sum_k coeff_k / k!`.
    pub fn value_at_zero(&self) -> Rat {
        self.terms
            .iter()
            .map(|&(k, c)| c / rat_factorial(k))
            .sum()
    }

    /// Dense evaluation `sum_k coeff_k * phi_k(g * Z)`.
    pub fn eval_dense(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let n = z.nrows();
        let mut out = DMatrix::<f64>::zeros(n, n);
        if self.terms.is_empty() {
            return Ok(out);
        }
        let table = phi::phi_dense(self.max_index(), &(z * rat_f64(self.scale)))?;
        for &(k, c) in &self.terms {
            out += table.entry(k).expect("within table") * rat_f64(c);
        }
        Ok(out)
    }
}

/// Sum of [`PhiCombination`]s with (possibly) different scales. Coefficient
/// functions `a_{ij}(z)` and `b_j(z)` take this shape: collecting forward
/// differences mixes psi entries whose `g` values differ.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PhiSum(pub Vec<PhiCombination>);

impl PhiSum {
    pub fn empty() -> Self {
        PhiSum(Vec::new())
    }

    pub fn single(combo: PhiCombination) -> Self {
        PhiSum(vec![combo])
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|c| c.terms.is_empty())
    }

    /// Adds `coeff * combo`, merging with an existing combination of the same
    /// scale.
    pub fn add_scaled(&mut self, combo: &PhiCombination, coeff: Rat) {
        if coeff.is_zero() || combo.terms.is_empty() {
            return;
        }
        if let Some(existing) = self.0.iter_mut().find(|c| c.scale == combo.scale) {
            for &(k, c) in &combo.terms {
                match existing.terms.iter_mut().find(|(ek, _)| *ek == k) {
                    Some((_, ec)) => *ec += c * coeff,
                    None => existing.terms.push((k, c * coeff)),
                }
            }
            existing.terms.retain(|(_, c)| !c.is_zero());
            existing.terms.sort_by_key(|&(k, _)| k);
        } else {
            self.0.push(PhiCombination::new(
                combo.scale,
                combo.terms.iter().map(|&(k, c)| (k, c * coeff)).collect(),
            ));
        }
    }

    pub fn value_at_zero(&self) -> Rat {
        self.0.iter().map(|c| c.value_at_zero()).sum()
    }

    pub fn eval_dense(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let n = z.nrows();
        let mut out = DMatrix::<f64>::zeros(n, n);
        for combo in &self.0 {
            out += combo.eval_dense(z)?;
        }
        Ok(out)
    }

    /// Distinct scales present.
    pub fn scales(&self) -> Vec<Rat> {
        let mut out: Vec<Rat> = self
            .0
            .iter()
            .filter(|c| !c.terms.is_empty())
            .map(|c| c.scale)
            .collect();
        out.sort();
        out.dedup();
        out
    }

    pub fn max_index(&self) -> usize {
        self.0.iter().map(|c| c.max_index()).max().unwrap_or(0)
    }
}

/// Whether internal coefficients act on forward differences of the remainder
/// or on the per-stage residuals directly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Form {
    EpirkForwardDifference,
    ExprbResidual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyHint {
    Vertical,
    Horizontal,
    Mixed,
}

/// Full tableau of an s-stage EPIRK scheme.
#[derive(Debug, Clone)]
pub struct MethodDefinition {
    pub name: String,
    /// Number of internal stages `s` (the final combination is row `s+1`).
    pub stages: usize,
    /// `alpha_{ij}` for `i = 2..=s`, `j = 1..=i-1`; absent entries are zero.
    pub alpha: BTreeMap<(usize, usize), Rat>,
    /// `beta_j` for `j = 1..=s`.
    pub beta: Vec<Rat>,
    /// `psi_{ij}` for rows `i = 2..=s+1`; row `s+1` holds the final-stage
    /// functions. Entries may sum several scales (multi-`g` coefficients).
    pub psi: BTreeMap<(usize, usize), PhiSum>,
    pub form: Form,
    pub stiff_order: u32,
    pub strategy_hint: StrategyHint,
    /// Embedded lower-order final stage: `j -> bhat_j(z)` for `j >= 2`. The
    /// `phi_1(h J) h f` term is shared with the main method.
    pub embedded: Option<BTreeMap<usize, PhiSum>>,
}

impl MethodDefinition {
    pub fn alpha_at(&self, i: usize, j: usize) -> Rat {
        self.alpha.get(&(i, j)).copied().unwrap_or_else(Rat::zero)
    }

    pub fn beta_at(&self, j: usize) -> Rat {
        self.beta.get(j - 1).copied().unwrap_or_else(Rat::zero)
    }

    pub fn psi_at(&self, i: usize, j: usize) -> PhiSum {
        self.psi.get(&(i, j)).cloned().unwrap_or_default()
    }

    /// The `(alpha_{i1}, g_{i1}, p_{i1k})` data of an internal stage's first
    /// term. Errors if `psi_{i1}` mixes scales (a well-formed tableau never
    /// does for the `f(u_n)` column entries).
    pub fn first_term(&self, i: usize) -> Result<FirstTerm> {
        let psi = self.psi_at(i, 1);
        let nonzero: Vec<&PhiCombination> =
            psi.0.iter().filter(|c| !c.terms.is_empty()).collect();
        match nonzero.len() {
            0 => Err(Error::invalid(format!(
                "method {}: psi_({i},1) is empty",
                self.name
            ))),
            1 => {
                let combo = nonzero[0];
                let weight = if i == self.stages + 1 {
                    self.beta_at(1)
                } else {
                    self.alpha_at(i, 1)
                };
                Ok((weight, combo.scale, combo.terms.clone()))
            }
            _ => Err(Error::invalid(format!(
                "method {}: psi_({i},1) mixes scales",
                self.name
            ))),
        }
    }
}

/// Residual-form coefficient functions with the tableau weights folded in:
/// stage `i` uses `h * a_{ij}(hJ) r(U_nj)` and the final combination uses
/// `h * b_j(hJ) r(U_nj)`.
#[derive(Debug, Clone)]
pub struct ResidualFormCoefficients {
    pub stages: usize,
    pub a: BTreeMap<(usize, usize), PhiSum>,
    pub b: BTreeMap<usize, PhiSum>,
}

fn binomial(n: usize, k: usize) -> Rat {
    if k > n {
        return Rat::zero();
    }
    let mut acc = Rat::one();
    for i in 0..k {
        acc *= Rat::new((n - i) as i64, (i + 1) as i64);
    }
    acc
}

/// Expands forward differences into signed binomial combinations of the stage
/// residuals and regroups per-stage coefficient functions:
///
/// ```text
/// Delta^{(j-1)} r(u_n) = sum_{i=2}^{j} C(j-1, i-1) (-1)^{j-i} r(U_ni)
/// ```
///
/// so the coefficient collecting on `r(U_nj)` in stage `i` is
/// `a_{ij}(z) = sum_{k=j}^{i-1} C(k-1, j-1) (-1)^{k-j} alpha_{ik} psi_{ik}(g_{ik} z)`
/// (and the same with `beta`/row `s+1` for `b_j`). For a method already in
/// residual form the stored entries are returned with weights folded in.
pub fn to_residual_form(method: &MethodDefinition) -> ResidualFormCoefficients {
    let s = method.stages;
    let mut a = BTreeMap::new();
    let mut b = BTreeMap::new();
    let weight = |i: usize, k: usize| -> Rat {
        if i == s + 1 {
            method.beta_at(k)
        } else {
            method.alpha_at(i, k)
        }
    };
    for i in 2..=s + 1 {
        let hi = if i == s + 1 { s } else { i - 1 };
        for j in 2..=hi {
            let mut sum = PhiSum::empty();
            match method.form {
                Form::ExprbResidual => {
                    let psi = method.psi_at(i, j);
                    for combo in &psi.0 {
                        sum.add_scaled(combo, weight(i, j));
                    }
                }
                Form::EpirkForwardDifference => {
                    for k in j..=hi {
                        let sign = if (k - j) % 2 == 0 { Rat::one() } else { -Rat::one() };
                        let coeff = binomial(k - 1, j - 1) * sign * weight(i, k);
                        let psi = method.psi_at(i, k);
                        for combo in &psi.0 {
                            sum.add_scaled(combo, coeff);
                        }
                    }
                }
            }
            if !sum.is_zero() {
                if i == s + 1 {
                    b.insert(j, sum);
                } else {
                    a.insert((i, j), sum);
                }
            }
        }
    }
    ResidualFormCoefficients { stages: s, a, b }
}

/// The embedded lower-order final stage of a method, as `j -> bhat_j(z)`.
pub fn embedded_estimator(method: &MethodDefinition) -> Result<BTreeMap<usize, PhiSum>> {
    method.embedded.clone().ok_or_else(|| {
        Error::NotAvailable(format!(
            "method {} has no embedded error estimator",
            method.name
        ))
    })
}

/// Difference coefficients `b_j - bhat_j` of the main and embedded final
/// stages; evaluating these on the stage residuals gives the local error
/// estimate directly.
pub fn embedded_difference(method: &MethodDefinition) -> Result<BTreeMap<usize, PhiSum>> {
    let embedded = embedded_estimator(method)?;
    let residual = to_residual_form(method);
    let mut delta = BTreeMap::new();
    for j in 2..=method.stages {
        let mut sum = PhiSum::empty();
        if let Some(bj) = residual.b.get(&j) {
            for combo in &bj.0 {
                sum.add_scaled(combo, Rat::one());
            }
        }
        if let Some(bhat) = embedded.get(&j) {
            for combo in &bhat.0 {
                sum.add_scaled(combo, -Rat::one());
            }
        }
        if !sum.is_zero() {
            delta.insert(j, sum);
        }
    }
    Ok(delta)
}

/// A structural constraint breach found by [`validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// `beta_1 = 1` with `psi_{s+1,1} = phi_1` at `g = 1` is required for
    /// stiff order >= 2.
    Normalization(String),
    /// `g_{s+1,k} = 1` is required for all final-stage `k >= 2` when the
    /// declared stiff order is >= 3.
    Lemma3 { column: usize, scale: f64 },
    /// None of the convergence-assumption coefficient relations hold for a
    /// stage's first term.
    Assumption3 { stage: usize, detail: String },
    /// A scale outside `(0, 1]`.
    ScaleRange { i: usize, j: usize, scale: f64 },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::Normalization(msg) => write!(f, "normalization: {msg}"),
            Violation::Lemma3 { column, scale } => write!(
                f,
                "final-stage scale g_(s+1,{column}) = {scale} must equal 1 for stiff order >= 3"
            ),
            Violation::Assumption3 { stage, detail } => {
                write!(f, "stage {stage} first-term coefficients: {detail}")
            }
            Violation::ScaleRange { i, j, scale } => {
                write!(f, "psi_({i},{j}) scale {scale} outside (0, 1]")
            }
        }
    }
}

/// Checks the structural invariants of a tableau; an empty list means all
/// constraints pass. Violations are data, not errors.
pub fn validate(method: &MethodDefinition) -> Vec<Violation> {
    let s = method.stages;
    let mut out = Vec::new();

    for (&(i, j), psi) in &method.psi {
        for combo in &psi.0 {
            if combo.terms.is_empty() {
                continue;
            }
            let g = combo.scale;
            if g <= Rat::zero() || g > Rat::one() {
                out.push(Violation::ScaleRange {
                    i,
                    j,
                    scale: rat_f64(g),
                });
            }
        }
    }

    if method.stiff_order >= 2 {
        let ok = method.beta_at(1).is_one()
            && match method.first_term(s + 1) {
                Ok((_, g, p)) => g.is_one() && p == vec![(1, Rat::one())],
                Err(_) => false,
            };
        if !ok {
            out.push(Violation::Normalization(
                "stiff order >= 2 requires beta_1 = 1 and psi_(s+1,1) = phi_1 at g = 1".into(),
            ));
        }
    }

    if method.stiff_order >= 3 {
        let residual = to_residual_form(method);
        for (&j, bj) in &residual.b {
            for g in bj.scales() {
                if !g.is_one() {
                    out.push(Violation::Lemma3 {
                        column: j,
                        scale: rat_f64(g),
                    });
                }
            }
        }
    }

    // Convergence-assumption relations on each internal stage's first term.
    // Accepted forms (the (alpha, p) split is only determined up to a common
    // rescaling, so equal nonzero p's count as the "p = g" branch, and the
    // aggregated alpha*P_1 = g form covers the general-psi constructions):
    for i in 2..=s {
        let Ok((alpha, g, p)) = method.first_term(i) else {
            out.push(Violation::Assumption3 {
                stage: i,
                detail: "first term missing or mixes scales".into(),
            });
            continue;
        };
        let nonzero: Vec<Rat> = p.iter().map(|&(_, c)| c).filter(|c| !c.is_zero()).collect();
        let branch_alpha_p = !nonzero.is_empty() && nonzero.iter().all(|&c| alpha * c == g);
        let branch_alpha = alpha == g;
        let branch_p = !nonzero.is_empty()
            && nonzero.windows(2).all(|w| w[0] == w[1]);
        let p1: Rat = p.iter().map(|&(k, c)| c / rat_factorial(k)).sum();
        let branch_aggregate = alpha * p1 == g;
        if !(branch_alpha_p || branch_alpha || branch_p || branch_aggregate) {
            out.push(Violation::Assumption3 {
                stage: i,
                detail: format!(
                    "alpha = {alpha}, g = {g}, p = {:?} satisfy no convergence-assumption branch",
                    p
                ),
            });
        }
    }

    out
}
