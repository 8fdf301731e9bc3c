//! The built-in stiffly accurate schemes, stored in residual form with exact
//! rational coefficients.

use std::collections::BTreeMap;

use num_rational::Ratio;
use num_traits::One;

use super::{rat, Form, MethodDefinition, PhiCombination, PhiSum, Rat, StrategyHint};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuiltinScheme {
    Epirk4s3a,
    Epirk4s3b,
    Epirk5s3,
    Exprb53s3,
}

impl BuiltinScheme {
    pub const ALL: [BuiltinScheme; 4] = [
        BuiltinScheme::Epirk4s3a,
        BuiltinScheme::Epirk4s3b,
        BuiltinScheme::Epirk5s3,
        BuiltinScheme::Exprb53s3,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BuiltinScheme::Epirk4s3a => "EPIRK4s3A",
            BuiltinScheme::Epirk4s3b => "EPIRK4s3B",
            BuiltinScheme::Epirk5s3 => "EPIRK5s3",
            BuiltinScheme::Exprb53s3 => "EXPRB53s3",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|s| s.name().eq_ignore_ascii_case(name))
    }
}

fn phi1(scale: Rat) -> PhiSum {
    PhiSum::single(PhiCombination::single(scale, 1, Rat::one()))
}

fn combo(scale: Rat, terms: &[(usize, Rat)]) -> PhiSum {
    PhiSum::single(PhiCombination::new(scale, terms.to_vec()))
}

/// Returns the published tableau of one of the four built-in schemes.
///
/// One published value is corrected here: the phi_4 coefficient of the
/// EPIRK5s3 final-stage `b_3` must be -120285/1696 for the third-order
/// condition set to close (solving C1/C2 for the printed stage data
/// reproduces the printed `b_2` exactly and forces this `b_3`).
pub fn builtin(scheme: BuiltinScheme) -> MethodDefinition {
    let one = Rat::one();
    match scheme {
        BuiltinScheme::Epirk4s3a => {
            let mut alpha = BTreeMap::new();
            alpha.insert((2, 1), rat(1, 2));
            alpha.insert((3, 1), rat(2, 3));
            let mut psi = BTreeMap::new();
            psi.insert((2, 1), phi1(rat(1, 2)));
            psi.insert((3, 1), phi1(rat(2, 3)));
            psi.insert((4, 1), phi1(one));
            psi.insert((4, 2), combo(one, &[(3, rat(32, 1)), (4, rat(-144, 1))]));
            psi.insert((4, 3), combo(one, &[(3, rat(-27, 2)), (4, rat(81, 1))]));
            let mut embedded = BTreeMap::new();
            embedded.insert(2, combo(one, &[(3, rat(8, 1))]));
            MethodDefinition {
                name: "EPIRK4s3A".into(),
                stages: 3,
                alpha,
                beta: vec![one, one, one],
                psi,
                form: Form::ExprbResidual,
                stiff_order: 4,
                strategy_hint: StrategyHint::Mixed,
                embedded: Some(embedded),
            }
        }
        BuiltinScheme::Epirk4s3b => {
            let mut alpha = BTreeMap::new();
            alpha.insert((2, 1), rat(2, 3));
            alpha.insert((3, 1), one);
            let mut psi = BTreeMap::new();
            psi.insert((2, 1), combo(rat(1, 2), &[(2, one)]));
            psi.insert((3, 1), combo(rat(3, 4), &[(2, one)]));
            psi.insert((4, 1), phi1(one));
            psi.insert((4, 2), combo(one, &[(3, rat(54, 1)), (4, rat(-324, 1))]));
            psi.insert((4, 3), combo(one, &[(3, rat(-16, 1)), (4, rat(144, 1))]));
            MethodDefinition {
                name: "EPIRK4s3B".into(),
                stages: 3,
                alpha,
                beta: vec![one, one, one],
                psi,
                form: Form::ExprbResidual,
                stiff_order: 4,
                strategy_hint: StrategyHint::Mixed,
                embedded: None,
            }
        }
        BuiltinScheme::Epirk5s3 => {
            let mut alpha = BTreeMap::new();
            alpha.insert((2, 1), rat(288, 55));
            alpha.insert((3, 1), rat(212, 45));
            alpha.insert((3, 2), rat(32065, 13122));
            let mut psi = BTreeMap::new();
            psi.insert((2, 1), combo(rat(48, 55), &[(2, one), (3, rat(-2, 1))]));
            psi.insert(
                (3, 1),
                combo(
                    rat(4, 9),
                    &[(1, one), (2, rat(-288, 53)), (3, rat(576, 53))],
                ),
            );
            psi.insert((3, 2), combo(rat(4, 9), &[(3, one)]));
            psi.insert((4, 1), phi1(one));
            psi.insert(
                (4, 2),
                combo(
                    one,
                    &[(3, rat(-166375, 61056)), (4, rat(499125, 27136))],
                ),
            );
            psi.insert(
                (4, 3),
                combo(one, &[(3, rat(2187, 106)), (4, rat(-120285, 1696))]),
            );
            MethodDefinition {
                name: "EPIRK5s3".into(),
                stages: 3,
                alpha,
                beta: vec![one, one, one],
                psi,
                form: Form::ExprbResidual,
                stiff_order: 5,
                strategy_hint: StrategyHint::Horizontal,
                embedded: None,
            }
        }
        BuiltinScheme::Exprb53s3 => {
            let mut alpha = BTreeMap::new();
            alpha.insert((2, 1), rat(1, 2));
            alpha.insert((3, 1), rat(9, 10));
            alpha.insert((3, 2), one);
            let mut psi = BTreeMap::new();
            psi.insert((2, 1), phi1(rat(1, 2)));
            psi.insert((3, 1), phi1(rat(9, 10)));
            psi.insert(
                (3, 2),
                PhiSum(vec![
                    PhiCombination::single(rat(1, 2), 3, rat(27, 25)),
                    PhiCombination::single(rat(9, 10), 3, rat(729, 125)),
                ]),
            );
            psi.insert((4, 1), phi1(one));
            psi.insert((4, 2), combo(one, &[(3, rat(18, 1)), (4, rat(-60, 1))]));
            psi.insert(
                (4, 3),
                combo(one, &[(3, rat(-250, 81)), (4, rat(500, 27))]),
            );
            MethodDefinition {
                name: "EXPRB53s3".into(),
                stages: 3,
                alpha,
                beta: vec![one, one, one],
                psi,
                form: Form::ExprbResidual,
                stiff_order: 5,
                strategy_hint: StrategyHint::Mixed,
                embedded: None,
            }
        }
    }
}

#[allow(unused)]
fn _ratio_type_is_small(_: Ratio<i64>) {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epirk4s3a_scales_as_published() {
        let m = builtin(BuiltinScheme::Epirk4s3a);
        let (a21, g21, p21) = m.first_term(2).unwrap();
        assert_eq!((a21, g21), (rat(1, 2), rat(1, 2)));
        assert_eq!(p21, vec![(1, rat(1, 1))]);
        let (_, g31, _) = m.first_term(3).unwrap();
        assert_eq!(g31, rat(2, 3));
        let (_, g41, _) = m.first_term(4).unwrap();
        assert_eq!(g41, rat(1, 1));
    }

    #[test]
    fn epirk5s3_stage_two_combination() {
        let m = builtin(BuiltinScheme::Epirk5s3);
        let (a21, g21, p21) = m.first_term(2).unwrap();
        assert_eq!(a21, rat(288, 55));
        assert_eq!(g21, rat(48, 55));
        assert_eq!(p21, vec![(2, rat(1, 1)), (3, rat(-2, 1))]);
        assert_eq!(m.alpha_at(3, 2), rat(32065, 13122));
    }

    #[test]
    fn exprb53s3_internal_stage_three() {
        let m = builtin(BuiltinScheme::Exprb53s3);
        let (a31, g31, p31) = m.first_term(3).unwrap();
        assert_eq!(a31, rat(9, 10));
        assert_eq!(g31, rat(9, 10));
        assert_eq!(p31, vec![(1, rat(1, 1))]);
        let a32 = m.psi_at(3, 2);
        assert_eq!(a32.0.len(), 2);
        assert_eq!(a32.0[0].scale, rat(1, 2));
        assert_eq!(a32.0[0].terms, vec![(3, rat(27, 25))]);
        assert_eq!(a32.0[1].scale, rat(9, 10));
        assert_eq!(a32.0[1].terms, vec![(3, rat(729, 125))]);
    }

    #[test]
    fn builtin_lookup_by_name() {
        assert_eq!(
            BuiltinScheme::from_name("epirk5s3"),
            Some(BuiltinScheme::Epirk5s3)
        );
        assert_eq!(BuiltinScheme::from_name("nope"), None);
    }
}
