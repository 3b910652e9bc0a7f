//! Differentiable evaluation of formulas against probabilistic truth values.
//!
//! The classifier's softmax outputs are the truth assignment: atom
//! `verb:i` evaluates to `verb_probs[i]`. Connectives are relaxed by a
//! t-norm. Negation is `1 - a` under every t-norm, with a structural
//! short-circuit so that `!!f` evaluates bit-identically to `f`, and
//! `a -> b` evaluates bit-identically to `!a | b`.

use crate::formula::{Atom, Branch, Formula, LogicError};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};

/// T-norm family used to relax the connectives onto [0,1].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TNorm {
    /// a∧b = ab, a∨b = a+b−ab. Smooth; the default.
    Product,
    /// a∧b = min(a,b), a∨b = max(a,b). Subgradients at ties go left.
    Goedel,
    /// a∧b = max(0, a+b−1), a∨b = min(1, a+b).
    Lukasiewicz,
}

impl TNorm {
    pub(crate) fn and_t<T: Scalar>(self, a: T, b: T) -> T {
        match self {
            TNorm::Product => a * b,
            TNorm::Goedel => {
                if a <= b {
                    a
                } else {
                    b
                }
            }
            TNorm::Lukasiewicz => (a + b - T::one()).max(T::zero()),
        }
    }

    pub(crate) fn or_t<T: Scalar>(self, a: T, b: T) -> T {
        match self {
            TNorm::Product => a + b - a * b,
            TNorm::Goedel => {
                if a >= b {
                    a
                } else {
                    b
                }
            }
            TNorm::Lukasiewicz => (a + b).min(T::one()),
        }
    }
}

/// Evaluation/loss configuration: t-norm plus the log clamp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Semantics {
    pub tnorm: TNorm,
    /// Loss terms use `-log(max(value, clamp_eps))`; must lie in (0, 1e-3).
    #[serde(default = "default_clamp_eps")]
    pub clamp_eps: f64,
}

fn default_clamp_eps() -> f64 {
    1e-12
}

impl Default for Semantics {
    fn default() -> Self {
        Semantics { tnorm: TNorm::Product, clamp_eps: default_clamp_eps() }
    }
}

impl Semantics {
    pub fn new(tnorm: TNorm, clamp_eps: f64) -> Self {
        assert!(
            clamp_eps > 0.0 && clamp_eps < 1e-3,
            "clamp_eps must lie in (0, 1e-3), got {clamp_eps}"
        );
        Semantics { tnorm, clamp_eps }
    }

    pub fn product() -> Self {
        Self::new(TNorm::Product, default_clamp_eps())
    }

    pub fn goedel() -> Self {
        Self::new(TNorm::Goedel, default_clamp_eps())
    }

    pub fn lukasiewicz() -> Self {
        Self::new(TNorm::Lukasiewicz, default_clamp_eps())
    }
}

/// Per-sample verb and noun probability vectors, treated as truth values.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthAssignment<T> {
    pub verb_probs: Vec<T>,
    pub noun_probs: Vec<T>,
}

impl<T: Scalar> TruthAssignment<T> {
    pub fn new(verb_probs: Vec<T>, noun_probs: Vec<T>) -> Self {
        TruthAssignment { verb_probs, noun_probs }
    }

    /// One-hot assignment; entries are exactly 0 or 1.
    pub fn one_hot(verb: usize, noun: usize, verbs: usize, nouns: usize) -> Self {
        let mut v = vec![T::zero(); verbs];
        let mut n = vec![T::zero(); nouns];
        v[verb] = T::one();
        n[noun] = T::one();
        TruthAssignment { verb_probs: v, noun_probs: n }
    }

    pub fn verbs(&self) -> usize {
        self.verb_probs.len()
    }

    pub fn nouns(&self) -> usize {
        self.noun_probs.len()
    }

    /// Checks the softmax-output invariant: entries in [0,1], sums ≈ 1.
    pub fn validate(&self, tol: f64) -> Result<(), LogicError> {
        for (probs, context) in [
            (&self.verb_probs, "verb_probs"),
            (&self.noun_probs, "noun_probs"),
        ] {
            if probs.is_empty() {
                return Err(LogicError::DimensionMismatch { context, expected: 1, got: 0 });
            }
            let mut sum = T::zero();
            for &p in probs.iter() {
                if p < T::zero() || p > T::one() {
                    return Err(LogicError::DimensionMismatch {
                        context,
                        expected: 1,
                        got: probs.len(),
                    });
                }
                sum += p;
            }
            if (sum.to_f64_lossy() - 1.0).abs() > tol {
                return Err(LogicError::DimensionMismatch {
                    context,
                    expected: 1,
                    got: probs.len(),
                });
            }
        }
        Ok(())
    }

    fn atom_value(&self, atom: Atom) -> Result<T, LogicError> {
        let (probs, context) = match atom.branch {
            Branch::Verb => (&self.verb_probs, "verb_probs"),
            Branch::Noun => (&self.noun_probs, "noun_probs"),
        };
        probs
            .get(atom.index)
            .copied()
            .ok_or(LogicError::DimensionMismatch {
                context,
                expected: atom.index + 1,
                got: probs.len(),
            })
    }
}

/// Evaluate a formula to a truth degree in [0,1].
pub fn evaluate<T: Scalar>(
    f: &Formula,
    t: &TruthAssignment<T>,
    s: &Semantics,
) -> Result<T, LogicError> {
    eval_node(f, t, s.tnorm)
}

pub(crate) fn eval_node<T: Scalar>(
    f: &Formula,
    t: &TruthAssignment<T>,
    tn: TNorm,
) -> Result<T, LogicError> {
    match f {
        Formula::Atom(a) => t.atom_value(*a),
        Formula::Not(inner) => eval_negated(inner, t, tn),
        Formula::And(l, r) => Ok(tn.and_t(eval_node(l, t, tn)?, eval_node(r, t, tn)?)),
        Formula::Or(l, r) => Ok(tn.or_t(eval_node(l, t, tn)?, eval_node(r, t, tn)?)),
        // a -> b is evaluated exactly as !a | b.
        Formula::Implies(l, r) => Ok(tn.or_t(eval_negated(l, t, tn)?, eval_node(r, t, tn)?)),
    }
}

// ¬¬f short-circuits to f, which keeps double negation exact.
pub(crate) fn eval_negated<T: Scalar>(
    f: &Formula,
    t: &TruthAssignment<T>,
    tn: TNorm,
) -> Result<T, LogicError> {
    match f {
        Formula::Not(inner) => eval_node(inner, t, tn),
        _ => Ok(T::one() - eval_node(f, t, tn)?),
    }
}
