//! Logic losses over probabilistic truth assignments, with analytic
//! gradients with respect to the probability vectors.
//!
//! The semantic loss treats the factorized prediction p(verb)·p(noun) as a
//! joint distribution and charges the mass that falls on invalid pairs:
//! `-log Σ_{(i,j) valid} verb_probs[i] · noun_probs[j]`, clamped at
//! `clamp_eps` inside the log. The formula loss is the mean of
//! `-log(max(eval(f), eps))` over a constraint set. Under product semantics
//! a `ValidDisjunction` set of verb-noun pairs is recognized and routed to
//! the exact semantic form.

use crate::cooccur::ValidityMask;
use crate::formula::{Atom, Branch, ConstraintMode, ConstraintSet, Formula, LogicError};
use crate::scalar::Scalar;
use crate::semantics::{eval_negated, eval_node, Semantics, TNorm, TruthAssignment};

/// `-log(max(Σ_{valid} p_v[i]·p_n[j], clamp_eps))`.
pub fn semantic_loss<T: Scalar>(
    mask: &ValidityMask,
    t: &TruthAssignment<T>,
    s: &Semantics,
) -> Result<T, LogicError> {
    let mass = valid_mass(mask, t)?;
    Ok(neg_log_clamped(mass, s.clamp_eps))
}

/// Gradient of [`semantic_loss`] w.r.t. (verb_probs, noun_probs).
///
/// Inside the clamp (`valid mass <= clamp_eps`) the loss is constant and the
/// gradient is zero.
pub fn semantic_loss_grad<T: Scalar>(
    mask: &ValidityMask,
    t: &TruthAssignment<T>,
    s: &Semantics,
) -> Result<(Vec<T>, Vec<T>), LogicError> {
    let mass = valid_mass(mask, t)?;
    let mut dv = vec![T::zero(); t.verbs()];
    let mut dn = vec![T::zero(); t.nouns()];
    let eps = T::from_f64_lossy(s.clamp_eps);
    if mass > eps {
        let scale = -T::one() / mass;
        for (i, j) in mask.valid_pairs() {
            dv[i] += scale * t.noun_probs[j];
            dn[j] += scale * t.verb_probs[i];
        }
    }
    Ok((dv, dn))
}

fn valid_mass<T: Scalar>(mask: &ValidityMask, t: &TruthAssignment<T>) -> Result<T, LogicError> {
    check_dims(mask.verbs(), mask.nouns(), t)?;
    let mut mass = T::zero();
    for (i, j) in mask.valid_pairs() {
        mass += t.verb_probs[i] * t.noun_probs[j];
    }
    Ok(mass)
}

fn check_dims<T: Scalar>(
    verbs: usize,
    nouns: usize,
    t: &TruthAssignment<T>,
) -> Result<(), LogicError> {
    if t.verbs() != verbs {
        return Err(LogicError::DimensionMismatch {
            context: "verb_probs",
            expected: verbs,
            got: t.verbs(),
        });
    }
    if t.nouns() != nouns {
        return Err(LogicError::DimensionMismatch {
            context: "noun_probs",
            expected: nouns,
            got: t.nouns(),
        });
    }
    Ok(())
}

fn neg_log_clamped<T: Scalar>(value: T, clamp_eps: f64) -> T {
    let eps = T::from_f64_lossy(clamp_eps);
    -(value.max(eps).ln())
}

/// Loss of a constraint set against one truth assignment.
///
/// `ValidDisjunction` sets of pure verb-noun pairs under product semantics
/// take the exact mutually-exclusive route (equal to [`semantic_loss`] on
/// the corresponding mask); everything else is the mean of per-formula
/// `-log(max(eval, eps))` terms.
pub fn logic_loss<T: Scalar>(
    set: &ConstraintSet,
    t: &TruthAssignment<T>,
    s: &Semantics,
) -> Result<T, LogicError> {
    precheck(set, t)?;
    if let Some(pairs) = exact_pair_route(set, s) {
        let mut mass = T::zero();
        for &(i, j) in &pairs {
            mass += atom_pair_mass(i, j, t)?;
        }
        return Ok(neg_log_clamped(mass, s.clamp_eps));
    }
    let mut total = T::zero();
    for f in &set.formulas {
        let v = eval_node(f, t, s.tnorm)?;
        total += neg_log_clamped(v, s.clamp_eps);
    }
    Ok(total / T::from_f64_lossy(set.formulas.len() as f64))
}

/// Gradient of [`logic_loss`] w.r.t. (verb_probs, noun_probs).
///
/// Analytic for product and Łukasiewicz semantics; Gödel min/max ties take
/// the left-operand subgradient, matching the forward tie-break.
pub fn logic_loss_grad<T: Scalar>(
    set: &ConstraintSet,
    t: &TruthAssignment<T>,
    s: &Semantics,
) -> Result<(Vec<T>, Vec<T>), LogicError> {
    precheck(set, t)?;
    let eps = T::from_f64_lossy(s.clamp_eps);
    let mut dv = vec![T::zero(); t.verbs()];
    let mut dn = vec![T::zero(); t.nouns()];

    if let Some(pairs) = exact_pair_route(set, s) {
        let mut mass = T::zero();
        for &(i, j) in &pairs {
            mass += atom_pair_mass(i, j, t)?;
        }
        if mass > eps {
            let scale = -T::one() / mass;
            for &(i, j) in &pairs {
                dv[i] += scale * t.noun_probs[j];
                dn[j] += scale * t.verb_probs[i];
            }
        }
        return Ok((dv, dn));
    }

    let inv_count = T::one() / T::from_f64_lossy(set.formulas.len() as f64);
    for f in &set.formulas {
        let v = eval_node(f, t, s.tnorm)?;
        if v > eps {
            // d/dv of -log(v), averaged over the set
            let adj = -inv_count / v;
            push_grad(f, t, s.tnorm, adj, &mut dv, &mut dn)?;
        }
    }
    Ok((dv, dn))
}

fn precheck<T: Scalar>(set: &ConstraintSet, t: &TruthAssignment<T>) -> Result<(), LogicError> {
    if set.formulas.is_empty() {
        return Err(LogicError::InvalidConstraintSet);
    }
    if let Some(v) = set.vocab {
        check_dims(v.verbs, v.nouns, t)?;
    }
    Ok(())
}

fn atom_pair_mass<T: Scalar>(
    i: usize,
    j: usize,
    t: &TruthAssignment<T>,
) -> Result<T, LogicError> {
    let p = t.verb_probs.get(i).ok_or(LogicError::DimensionMismatch {
        context: "verb_probs",
        expected: i + 1,
        got: t.verbs(),
    })?;
    let q = t.noun_probs.get(j).ok_or(LogicError::DimensionMismatch {
        context: "noun_probs",
        expected: j + 1,
        got: t.nouns(),
    })?;
    Ok(*p * *q)
}

/// Pairs of a `ValidDisjunction` set when every formula is an or-chain of
/// `verb & noun` conjunctions and the semantics is product.
fn exact_pair_route(set: &ConstraintSet, s: &Semantics) -> Option<Vec<(usize, usize)>> {
    if set.mode != ConstraintMode::ValidDisjunction || s.tnorm != TNorm::Product {
        return None;
    }
    let mut pairs = Vec::new();
    for f in &set.formulas {
        collect_pairs(f, &mut pairs)?;
    }
    Some(pairs)
}

fn collect_pairs(f: &Formula, out: &mut Vec<(usize, usize)>) -> Option<()> {
    match f {
        Formula::Or(l, r) => {
            collect_pairs(l, out)?;
            collect_pairs(r, out)
        }
        Formula::And(l, r) => match (l.as_ref(), r.as_ref()) {
            (
                Formula::Atom(Atom { branch: Branch::Verb, index: i }),
                Formula::Atom(Atom { branch: Branch::Noun, index: j }),
            ) => {
                out.push((*i, *j));
                Some(())
            }
            (
                Formula::Atom(Atom { branch: Branch::Noun, index: j }),
                Formula::Atom(Atom { branch: Branch::Verb, index: i }),
            ) => {
                out.push((*i, *j));
                Some(())
            }
            _ => None,
        },
        _ => None,
    }
}

/// Reverse pass over the formula tree. Mirrors `eval_node` structurally so
/// subgradient tie-breaks agree with the forward values.
fn push_grad<T: Scalar>(
    f: &Formula,
    t: &TruthAssignment<T>,
    tn: TNorm,
    adj: T,
    dv: &mut [T],
    dn: &mut [T],
) -> Result<(), LogicError> {
    match f {
        Formula::Atom(a) => {
            match a.branch {
                Branch::Verb => dv[a.index] += adj,
                Branch::Noun => dn[a.index] += adj,
            }
            Ok(())
        }
        Formula::Not(inner) => push_negated(inner, t, tn, adj, dv, dn),
        Formula::And(l, r) => {
            let vl = eval_node(l, t, tn)?;
            let vr = eval_node(r, t, tn)?;
            match tn {
                TNorm::Product => {
                    push_grad(l, t, tn, adj * vr, dv, dn)?;
                    push_grad(r, t, tn, adj * vl, dv, dn)
                }
                TNorm::Goedel => {
                    if vl <= vr {
                        push_grad(l, t, tn, adj, dv, dn)
                    } else {
                        push_grad(r, t, tn, adj, dv, dn)
                    }
                }
                TNorm::Lukasiewicz => {
                    if vl + vr - T::one() > T::zero() {
                        push_grad(l, t, tn, adj, dv, dn)?;
                        push_grad(r, t, tn, adj, dv, dn)
                    } else {
                        Ok(())
                    }
                }
            }
        }
        Formula::Or(l, r) => {
            let vl = eval_node(l, t, tn)?;
            let vr = eval_node(r, t, tn)?;
            push_or(
                (l, vl, false),
                (r, vr, false),
                t,
                tn,
                adj,
                dv,
                dn,
            )
        }
        Formula::Implies(l, r) => {
            let vl = eval_negated(l, t, tn)?;
            let vr = eval_node(r, t, tn)?;
            push_or(
                (l, vl, true),
                (r, vr, false),
                t,
                tn,
                adj,
                dv,
                dn,
            )
        }
    }
}

/// Shared or-rule used by `Or` and by `Implies` (as `!a | b`). The `negated`
/// flag says whether the operand enters through a negation.
#[allow(clippy::too_many_arguments)]
fn push_or<T: Scalar>(
    left: (&Formula, T, bool),
    right: (&Formula, T, bool),
    t: &TruthAssignment<T>,
    tn: TNorm,
    adj: T,
    dv: &mut [T],
    dn: &mut [T],
) -> Result<(), LogicError> {
    let (lf, vl, lneg) = left;
    let (rf, vr, rneg) = right;
    let push = |f: &Formula, neg: bool, a: T, dv: &mut [T], dn: &mut [T]| {
        if neg {
            push_negated(f, t, tn, a, dv, dn)
        } else {
            push_grad(f, t, tn, a, dv, dn)
        }
    };
    match tn {
        TNorm::Product => {
            push(lf, lneg, adj * (T::one() - vr), dv, dn)?;
            push(rf, rneg, adj * (T::one() - vl), dv, dn)
        }
        TNorm::Goedel => {
            if vl >= vr {
                push(lf, lneg, adj, dv, dn)
            } else {
                push(rf, rneg, adj, dv, dn)
            }
        }
        TNorm::Lukasiewicz => {
            if vl + vr < T::one() {
                push(lf, lneg, adj, dv, dn)?;
                push(rf, rneg, adj, dv, dn)
            } else {
                Ok(())
            }
        }
    }
}

// ¬¬f short-circuits exactly as in evaluation.
fn push_negated<T: Scalar>(
    f: &Formula,
    t: &TruthAssignment<T>,
    tn: TNorm,
    adj: T,
    dv: &mut [T],
    dn: &mut [T],
) -> Result<(), LogicError> {
    match f {
        Formula::Not(inner) => push_grad(inner, t, tn, adj, dv, dn),
        _ => push_grad(f, t, tn, -adj, dv, dn),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cooccur::ValidityMask;
    use crate::formula::{verb, ConstraintMode, ConstraintSet};
    use crate::test_rand::{random_assignment, random_formula};
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform_assignment(verbs: usize, nouns: usize) -> TruthAssignment<f64> {
        TruthAssignment::new(
            vec![1.0 / verbs as f64; verbs],
            vec![1.0 / nouns as f64; nouns],
        )
    }

    #[test]
    fn zero_loss_when_all_mass_is_valid() {
        let mask = ValidityMask::from_pairs(&[(1, 2)], 3, 4).unwrap();
        let t = TruthAssignment::<f64>::one_hot(1, 2, 3, 4);
        let loss = semantic_loss(&mask, &t, &Semantics::default()).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn clamped_loss_when_all_mass_is_invalid() {
        let mask = ValidityMask::from_pairs(&[(0, 0)], 3, 4).unwrap();
        let t = TruthAssignment::<f64>::one_hot(1, 2, 3, 4);
        let loss = semantic_loss(&mask, &t, &Semantics::default()).unwrap();
        assert!((loss - 27.631021115928547).abs() < 1e-9); // -ln(1e-12)
    }

    #[test]
    fn uniform_assignment_matches_counting() {
        // 6 valid pairs out of 4*5 = 20 under uniform probs
        let pairs = [(0, 0), (0, 1), (1, 2), (2, 3), (3, 4), (3, 0)];
        let mask = ValidityMask::from_pairs(&pairs, 4, 5).unwrap();
        let t = uniform_assignment(4, 5);
        let loss = semantic_loss(&mask, &t, &Semantics::default()).unwrap();
        assert!((loss - (-(6.0f64 / 20.0).ln())).abs() < 1e-12);
    }

    #[test]
    fn semantic_loss_matches_brute_force_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let verbs = rng.random_range(1..10usize);
            let nouns = rng.random_range(1..10usize);
            let valid: Vec<bool> = (0..verbs * nouns).map(|_| rng.random_range(0..2u32) == 0).collect();
            let Ok(mask) = ValidityMask::new(valid, verbs, nouns) else { continue };
            let t = random_assignment(&mut rng, verbs, nouns, 0.0, 1.0);
            // independent oracle: scan all V*N combinations
            let mut mass = 0.0;
            for i in 0..verbs {
                for j in 0..nouns {
                    if mask.is_valid(i, j) {
                        mass += t.verb_probs[i] * t.noun_probs[j];
                    }
                }
            }
            let expected = -(mass.max(1e-12)).ln();
            let got = semantic_loss(&mask, &t, &Semantics::default()).unwrap();
            assert!((got - expected).abs() <= 1e-9);
        }
    }

    #[test]
    fn single_valid_pair_gradient_closed_form() {
        let mask = ValidityMask::from_pairs(&[(1, 2)], 3, 4).unwrap();
        let t = TruthAssignment::new(vec![0.2f64, 0.5, 0.3], vec![0.1, 0.2, 0.4, 0.3]);
        let (dv, dn) = semantic_loss_grad(&mask, &t, &Semantics::default()).unwrap();
        assert!((dv[1] - (-1.0 / 0.5)).abs() < 1e-12);
        assert!((dn[2] - (-1.0 / 0.4)).abs() < 1e-12);
        assert_eq!(dv[0], 0.0);
        assert_eq!(dn[0], 0.0);
    }

    #[test]
    fn invalid_negations_loss_is_mean_of_neg_logs() {
        // two atoms whose probabilities are e^-1 and e^-3
        let set = ConstraintSet::new(
            vec![verb(0), verb(1)],
            ConstraintMode::InvalidNegations,
            None,
        )
        .unwrap();
        let t = TruthAssignment::new(vec![(-1.0f64).exp(), (-3.0f64).exp()], vec![1.0]);
        let loss = logic_loss(&set, &t, &Semantics::default()).unwrap();
        assert!((loss - 2.0).abs() < 1e-12);
    }

    #[test]
    fn satisfied_formula_has_zero_loss_and_zero_gradient() {
        let set =
            ConstraintSet::new(vec![verb(0)], ConstraintMode::InvalidNegations, None).unwrap();
        let t = TruthAssignment::new(vec![1.0f64, 0.0], vec![1.0]);
        let s = Semantics::default();
        assert_eq!(logic_loss(&set, &t, &s).unwrap(), 0.0);

        // constant-1 formula under Lukasiewicz: a | !a
        let tautology = ConstraintSet::new(
            vec![crate::formula::or(verb(0), crate::formula::not(verb(0)))],
            ConstraintMode::InvalidNegations,
            None,
        )
        .unwrap();
        let t2 = TruthAssignment::new(vec![0.37f64, 0.63], vec![1.0]);
        let s2 = Semantics::lukasiewicz();
        assert_eq!(logic_loss(&tautology, &t2, &s2).unwrap(), 0.0);
        let (dv, dn) = logic_loss_grad(&tautology, &t2, &s2).unwrap();
        assert!(dv.iter().all(|&g| g == 0.0));
        assert!(dn.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn valid_disjunction_product_equals_semantic_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..50 {
            let verbs = rng.random_range(2..7usize);
            let nouns = rng.random_range(2..7usize);
            let valid: Vec<bool> = (0..verbs * nouns).map(|_| rng.random_range(0..3u32) == 0).collect();
            let Ok(mask) = ValidityMask::new(valid, verbs, nouns) else { continue };
            let set = mask.to_constraints(ConstraintMode::ValidDisjunction).unwrap();
            let t = random_assignment(&mut rng, verbs, nouns, 0.01, 0.99);
            let s = Semantics::default();
            let a = logic_loss(&set, &t, &s).unwrap();
            let b = semantic_loss(&mask, &t, &s).unwrap();
            assert!((a - b).abs() <= 1e-9, "exact route diverged: {a} vs {b}");
        }
    }

    #[test]
    fn losses_are_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        for _ in 0..300 {
            let f = random_formula(&mut rng, 5, 5, 4);
            let set = ConstraintSet::new(
                vec![f],
                ConstraintMode::InvalidNegations,
                None,
            )
            .unwrap();
            let t = random_assignment(&mut rng, 5, 5, 0.0, 1.0);
            for s in [Semantics::product(), Semantics::goedel(), Semantics::lukasiewicz()] {
                let loss: f64 = logic_loss(&set, &t, &s).unwrap();
                assert!(loss >= 0.0);
                if loss == 0.0 {
                    // zero loss only when every formula is (numerically) satisfied
                    for f in &set.formulas {
                        let v: f64 = crate::semantics::evaluate(f, &t, &s).unwrap();
                        assert!(v >= 1.0 - 1e-9);
                    }
                }
            }
        }
    }

    /// Relative comparison with a floor: gradients below FD noise are
    /// compared absolutely.
    fn assert_grad_close(analytic: f64, fd: f64, ctx: &str) {
        let scale = analytic.abs().max(fd.abs());
        if scale < 1e-6 {
            assert!((analytic - fd).abs() <= 1e-6, "{ctx}: analytic {analytic} vs fd {fd}");
        } else {
            assert!(
                (analytic - fd).abs() / scale <= 1e-4,
                "{ctx}: analytic {analytic} vs fd {fd}"
            );
        }
    }

    fn finite_difference_check(tnorms: &[TNorm], cases: usize, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = 1e-6;
        for case in 0..cases {
            let verbs = rng.random_range(2..6usize);
            let nouns = rng.random_range(2..6usize);
            let n_formulas = rng.random_range(1..4usize);
            let formulas: Vec<_> = (0..n_formulas)
                .map(|_| random_formula(&mut rng, verbs, nouns, 4))
                .collect();
            let mode = if rng.random_range(0..2u32) == 0 {
                ConstraintMode::InvalidNegations
            } else {
                ConstraintMode::ValidDisjunction
            };
            let set = ConstraintSet::new(formulas, mode, None).unwrap();
            let t = random_assignment(&mut rng, verbs, nouns, 0.05, 0.95);
            for &tnorm in tnorms {
                let s = Semantics::new(tnorm, 1e-12);
                let (dv, dn) = logic_loss_grad(&set, &t, &s).unwrap();
                let check = |branch: usize, idx: usize, analytic: f64| {
                    let mut plus = t.clone();
                    let mut minus = t.clone();
                    if branch == 0 {
                        plus.verb_probs[idx] += h;
                        minus.verb_probs[idx] -= h;
                    } else {
                        plus.noun_probs[idx] += h;
                        minus.noun_probs[idx] -= h;
                    }
                    let lp: f64 = logic_loss(&set, &plus, &s).unwrap();
                    let lm: f64 = logic_loss(&set, &minus, &s).unwrap();
                    let fd = (lp - lm) / (2.0 * h);
                    assert_grad_close(analytic, fd, &format!("case {case} {tnorm:?}"));
                };
                for i in 0..verbs {
                    check(0, i, dv[i]);
                }
                for j in 0..nouns {
                    check(1, j, dn[j]);
                }
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences_product_lukasiewicz() {
        finite_difference_check(&[TNorm::Product, TNorm::Lukasiewicz], 60, 31);
    }

    #[test]
    fn gradients_match_finite_differences_goedel_off_ties() {
        finite_difference_check(&[TNorm::Goedel], 40, 32);
    }

    #[test]
    fn semantic_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let h = 1e-6;
        for _ in 0..40 {
            let verbs = rng.random_range(2..8usize);
            let nouns = rng.random_range(2..8usize);
            let valid: Vec<bool> = (0..verbs * nouns).map(|_| rng.random_range(0..2u32) == 0).collect();
            let Ok(mask) = ValidityMask::new(valid, verbs, nouns) else { continue };
            let t = random_assignment(&mut rng, verbs, nouns, 0.05, 0.95);
            let s = Semantics::default();
            let (dv, dn) = semantic_loss_grad(&mask, &t, &s).unwrap();
            for i in 0..verbs {
                let mut plus = t.clone();
                let mut minus = t.clone();
                plus.verb_probs[i] += h;
                minus.verb_probs[i] -= h;
                let fd = (semantic_loss(&mask, &plus, &s).unwrap()
                    - semantic_loss(&mask, &minus, &s).unwrap())
                    / (2.0 * h);
                assert_grad_close(dv[i], fd, "semantic grad");
            }
            let _ = dn;
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let mask = ValidityMask::from_pairs(&[(0, 0)], 2, 2).unwrap();
        let t = TruthAssignment::new(vec![1.0f64], vec![0.5, 0.5]);
        assert!(matches!(
            semantic_loss(&mask, &t, &Semantics::default()),
            Err(LogicError::DimensionMismatch { .. })
        ));
    }
}
