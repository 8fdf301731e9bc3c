//! Line-oriented text format for user-supplied tableaus.
//!
//! ```text
//! NAME MyScheme
//! STAGES 3
//! FORM residual            # or: forward_difference
//! ORDER 4
//! HINT mixed               # vertical | horizontal | mixed
//! ALPHA
//! 2 1 1/2
//! 3 1 2/3
//! BETA
//! 1 1
//! 2 1
//! 3 1
//! PSI 2 1 = 1/2 ; 1*phi1
//! PSI 4 2 = 1 ; 32*phi3 + -144*phi4
//! EMBEDDED 2 = 1 ; 8*phi3
//! ```
//!
//! Rationals are written `p/q` (or plain integers). Repeated `PSI i j` lines
//! accumulate, which is how multi-scale coefficients such as the EXPRB53s3
//! `a_32` are written. `#` starts a comment.

use std::collections::BTreeMap;

use num_traits::{One, Zero};

use super::{Form, MethodDefinition, PhiCombination, PhiSum, Rat, StrategyHint};
use crate::error::{Error, Result};

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::TableauParse {
        line,
        msg: msg.into(),
    }
}

fn parse_rat(tok: &str, line: usize) -> Result<Rat> {
    let parse_int = |s: &str| -> Result<i64> {
        s.parse::<i64>()
            .map_err(|_| parse_err(line, format!("`{s}` is not an integer")))
    };
    match tok.split_once('/') {
        Some((n, d)) => {
            let den = parse_int(d)?;
            if den == 0 {
                return Err(parse_err(line, "zero denominator"));
            }
            Ok(Rat::new(parse_int(n)?, den))
        }
        None => Ok(Rat::from_integer(parse_int(tok)?)),
    }
}

/// Parses `g ; c1*phiK1 + c2*phiK2 + ...` into a [`PhiCombination`].
fn parse_combo(spec: &str, line: usize) -> Result<PhiCombination> {
    let (g_str, terms_str) = spec
        .split_once(';')
        .ok_or_else(|| parse_err(line, "expected `g ; terms`"))?;
    let scale = parse_rat(g_str.trim(), line)?;
    let mut terms = Vec::new();
    for part in terms_str.split('+') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let (c_str, phi_str) = part
            .split_once('*')
            .ok_or_else(|| parse_err(line, format!("term `{part}` is not `coeff*phiK`")))?;
        let coeff = parse_rat(c_str.trim(), line)?;
        let phi_str = phi_str.trim();
        let k: usize = phi_str
            .strip_prefix("phi")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err(line, format!("`{phi_str}` is not phiK")))?;
        if k == 0 {
            return Err(parse_err(line, "phi0 is not a valid tableau entry"));
        }
        terms.push((k, coeff));
    }
    if terms.is_empty() {
        return Err(parse_err(line, "combination has no terms"));
    }
    Ok(PhiCombination::new(scale, terms))
}

#[derive(PartialEq)]
enum Section {
    None,
    Alpha,
    Beta,
}

/// Parses the tableau text format. Rejects malformed input with
/// line-numbered diagnostics.
pub fn parse_tableau(text: &str) -> Result<MethodDefinition> {
    let mut name = String::from("user-scheme");
    let mut stages: Option<usize> = None;
    let mut form = Form::ExprbResidual;
    let mut order: u32 = 2;
    let mut hint = StrategyHint::Vertical;
    let mut alpha = BTreeMap::new();
    let mut beta_entries: BTreeMap<usize, Rat> = BTreeMap::new();
    let mut psi: BTreeMap<(usize, usize), PhiSum> = BTreeMap::new();
    let mut embedded: BTreeMap<usize, PhiSum> = BTreeMap::new();
    let mut section = Section::None;

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut words = line.split_whitespace();
        let head = words.next().unwrap();
        match head.to_ascii_uppercase().as_str() {
            "NAME" => {
                name = words.collect::<Vec<_>>().join(" ");
                section = Section::None;
            }
            "STAGES" => {
                let tok = words
                    .next()
                    .ok_or_else(|| parse_err(lineno, "STAGES needs a count"))?;
                let s: usize = tok
                    .parse()
                    .map_err(|_| parse_err(lineno, format!("bad stage count `{tok}`")))?;
                if s < 2 {
                    return Err(parse_err(lineno, "STAGES must be at least 2"));
                }
                stages = Some(s);
                section = Section::None;
            }
            "FORM" => {
                let tok = words
                    .next()
                    .ok_or_else(|| parse_err(lineno, "FORM needs a value"))?;
                form = match tok.to_ascii_lowercase().as_str() {
                    "residual" => Form::ExprbResidual,
                    "forward_difference" => Form::EpirkForwardDifference,
                    other => {
                        return Err(parse_err(lineno, format!("unknown form `{other}`")))
                    }
                };
                section = Section::None;
            }
            "ORDER" => {
                let tok = words
                    .next()
                    .ok_or_else(|| parse_err(lineno, "ORDER needs a value"))?;
                order = tok
                    .parse()
                    .map_err(|_| parse_err(lineno, format!("bad order `{tok}`")))?;
                section = Section::None;
            }
            "HINT" => {
                let tok = words
                    .next()
                    .ok_or_else(|| parse_err(lineno, "HINT needs a value"))?;
                hint = match tok.to_ascii_lowercase().as_str() {
                    "vertical" => StrategyHint::Vertical,
                    "horizontal" => StrategyHint::Horizontal,
                    "mixed" => StrategyHint::Mixed,
                    other => {
                        return Err(parse_err(lineno, format!("unknown hint `{other}`")))
                    }
                };
                section = Section::None;
            }
            "ALPHA" => section = Section::Alpha,
            "BETA" => section = Section::Beta,
            "PSI" | "EMBEDDED" => {
                section = Section::None;
                let rest: Vec<&str> = words.collect();
                let eq_pos = rest
                    .iter()
                    .position(|w| *w == "=")
                    .ok_or_else(|| parse_err(lineno, "missing `=`"))?;
                let spec = rest[eq_pos + 1..].join(" ");
                let combo = parse_combo(&spec, lineno)?;
                if head.eq_ignore_ascii_case("PSI") {
                    if eq_pos != 2 {
                        return Err(parse_err(lineno, "PSI needs `PSI i j = ...`"));
                    }
                    let i: usize = rest[0]
                        .parse()
                        .map_err(|_| parse_err(lineno, format!("bad row `{}`", rest[0])))?;
                    let j: usize = rest[1]
                        .parse()
                        .map_err(|_| parse_err(lineno, format!("bad column `{}`", rest[1])))?;
                    if j >= i {
                        return Err(parse_err(lineno, "PSI requires j < i"));
                    }
                    psi.entry((i, j))
                        .or_insert_with(PhiSum::empty)
                        .add_scaled(&combo, Rat::one());
                } else {
                    if eq_pos != 1 {
                        return Err(parse_err(lineno, "EMBEDDED needs `EMBEDDED j = ...`"));
                    }
                    let j: usize = rest[0]
                        .parse()
                        .map_err(|_| parse_err(lineno, format!("bad column `{}`", rest[0])))?;
                    embedded
                        .entry(j)
                        .or_insert_with(PhiSum::empty)
                        .add_scaled(&combo, Rat::one());
                }
            }
            _ => match section {
                Section::Alpha => {
                    let toks: Vec<&str> = std::iter::once(head).chain(words).collect();
                    if toks.len() != 3 {
                        return Err(parse_err(lineno, "ALPHA rows are `i j value`"));
                    }
                    let i: usize = toks[0]
                        .parse()
                        .map_err(|_| parse_err(lineno, format!("bad row `{}`", toks[0])))?;
                    let j: usize = toks[1]
                        .parse()
                        .map_err(|_| parse_err(lineno, format!("bad column `{}`", toks[1])))?;
                    alpha.insert((i, j), parse_rat(toks[2], lineno)?);
                }
                Section::Beta => {
                    let toks: Vec<&str> = std::iter::once(head).chain(words).collect();
                    if toks.len() != 2 {
                        return Err(parse_err(lineno, "BETA rows are `j value`"));
                    }
                    let j: usize = toks[0]
                        .parse()
                        .map_err(|_| parse_err(lineno, format!("bad index `{}`", toks[0])))?;
                    beta_entries.insert(j, parse_rat(toks[1], lineno)?);
                }
                Section::None => {
                    return Err(parse_err(lineno, format!("unexpected token `{head}`")))
                }
            },
        }
    }

    let stages = stages.ok_or_else(|| parse_err(0, "missing STAGES declaration"))?;
    let beta = (1..=stages)
        .map(|j| beta_entries.get(&j).copied().unwrap_or_else(Rat::zero))
        .collect();
    for &(i, j) in psi.keys() {
        if i > stages + 1 || j > stages {
            return Err(parse_err(0, format!("PSI index ({i},{j}) out of range")));
        }
    }
    Ok(MethodDefinition {
        name,
        stages,
        alpha,
        beta,
        psi,
        form,
        stiff_order: order,
        strategy_hint: hint,
        embedded: if embedded.is_empty() {
            None
        } else {
            Some(embedded)
        },
    })
}

/// Writes a method back into the text format accepted by [`parse_tableau`].
pub fn write_tableau(method: &MethodDefinition) -> String {
    let mut out = String::new();
    out.push_str(&format!("NAME {}\n", method.name));
    out.push_str(&format!("STAGES {}\n", method.stages));
    out.push_str(&format!(
        "FORM {}\n",
        match method.form {
            Form::ExprbResidual => "residual",
            Form::EpirkForwardDifference => "forward_difference",
        }
    ));
    out.push_str(&format!("ORDER {}\n", method.stiff_order));
    out.push_str(&format!(
        "HINT {}\n",
        match method.strategy_hint {
            StrategyHint::Vertical => "vertical",
            StrategyHint::Horizontal => "horizontal",
            StrategyHint::Mixed => "mixed",
        }
    ));
    out.push_str("ALPHA\n");
    for (&(i, j), &v) in &method.alpha {
        out.push_str(&format!("{i} {j} {v}\n"));
    }
    out.push_str("BETA\n");
    for (j, &v) in method.beta.iter().enumerate() {
        out.push_str(&format!("{} {v}\n", j + 1));
    }
    let combo_str = |c: &PhiCombination| {
        let terms = c
            .terms
            .iter()
            .map(|(k, v)| format!("{v}*phi{k}"))
            .collect::<Vec<_>>()
            .join(" + ");
        format!("{} ; {terms}", c.scale)
    };
    for (&(i, j), sum) in &method.psi {
        for combo in &sum.0 {
            if !combo.terms.is_empty() {
                out.push_str(&format!("PSI {i} {j} = {}\n", combo_str(combo)));
            }
        }
    }
    if let Some(embedded) = &method.embedded {
        for (&j, sum) in embedded {
            for combo in &sum.0 {
                if !combo.terms.is_empty() {
                    out.push_str(&format!("EMBEDDED {j} = {}\n", combo_str(combo)));
                }
            }
        }
    }
    out
}
