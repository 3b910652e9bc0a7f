//! Seeded random generators and brute-force oracles shared by unit tests.

use crate::formula::{and, implies, noun, not, or, verb, Formula};
use crate::semantics::TruthAssignment;
use rand::RngExt;
use rand_chacha::ChaCha8Rng;

pub(crate) fn random_formula(
    rng: &mut ChaCha8Rng,
    verbs: usize,
    nouns: usize,
    depth: usize,
) -> Formula {
    if depth == 0 || rng.random_range(0..5u32) == 0 {
        if rng.random_range(0..2u32) == 0 {
            verb(rng.random_range(0..verbs))
        } else {
            noun(rng.random_range(0..nouns))
        }
    } else {
        match rng.random_range(0..4u32) {
            0 => not(random_formula(rng, verbs, nouns, depth - 1)),
            1 => and(
                random_formula(rng, verbs, nouns, depth - 1),
                random_formula(rng, verbs, nouns, depth - 1),
            ),
            2 => or(
                random_formula(rng, verbs, nouns, depth - 1),
                random_formula(rng, verbs, nouns, depth - 1),
            ),
            _ => implies(
                random_formula(rng, verbs, nouns, depth - 1),
                random_formula(rng, verbs, nouns, depth - 1),
            ),
        }
    }
}

/// Assignment with entries drawn uniformly from [lo, hi); not normalized,
/// matching the loss gradients' view of probabilities as free variables.
pub(crate) fn random_assignment(
    rng: &mut ChaCha8Rng,
    verbs: usize,
    nouns: usize,
    lo: f64,
    hi: f64,
) -> TruthAssignment<f64> {
    TruthAssignment::new(
        (0..verbs).map(|_| rng.random_range(lo..hi)).collect(),
        (0..nouns).map(|_| rng.random_range(lo..hi)).collect(),
    )
}

/// Classical two-valued evaluation; the boolean-soundness oracle.
pub(crate) fn bool_eval(f: &Formula, verb_bits: &[bool], noun_bits: &[bool]) -> bool {
    use crate::formula::Branch;
    match f {
        Formula::Atom(a) => match a.branch {
            Branch::Verb => verb_bits[a.index],
            Branch::Noun => noun_bits[a.index],
        },
        Formula::Not(x) => !bool_eval(x, verb_bits, noun_bits),
        Formula::And(l, r) => {
            bool_eval(l, verb_bits, noun_bits) && bool_eval(r, verb_bits, noun_bits)
        }
        Formula::Or(l, r) => {
            bool_eval(l, verb_bits, noun_bits) || bool_eval(r, verb_bits, noun_bits)
        }
        Formula::Implies(l, r) => {
            !bool_eval(l, verb_bits, noun_bits) || bool_eval(r, verb_bits, noun_bits)
        }
    }
}
