//! Propositional logic AST over verb/noun atoms.
//!
//! A [`Formula`] is a finite tree whose leaves name a verb or noun class.
//! Constraint files parse into a [`ConstraintSet`]; rendering is the exact
//! inverse of parsing (precedence-aware, minimal parentheses).

use std::fmt;

use thiserror::Error;

/// Which classifier branch an atom refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Branch {
    Verb,
    Noun,
}

impl Branch {
    pub fn label(self) -> &'static str {
        match self {
            Branch::Verb => "verb",
            Branch::Noun => "noun",
        }
    }
}

/// Atomic proposition: "class `index` of `branch` is predicted".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Atom {
    pub branch: Branch,
    pub index: usize,
}

/// Propositional formula over verb/noun atoms.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Formula {
    Atom(Atom),
    Not(Box<Formula>),
    And(Box<Formula>, Box<Formula>),
    Or(Box<Formula>, Box<Formula>),
    Implies(Box<Formula>, Box<Formula>),
}

pub fn verb(index: usize) -> Formula {
    Formula::Atom(Atom { branch: Branch::Verb, index })
}

pub fn noun(index: usize) -> Formula {
    Formula::Atom(Atom { branch: Branch::Noun, index })
}

pub fn not(f: Formula) -> Formula {
    Formula::Not(Box::new(f))
}

pub fn and(a: Formula, b: Formula) -> Formula {
    Formula::And(Box::new(a), Box::new(b))
}

pub fn or(a: Formula, b: Formula) -> Formula {
    Formula::Or(Box::new(a), Box::new(b))
}

pub fn implies(a: Formula, b: Formula) -> Formula {
    Formula::Implies(Box::new(a), Box::new(b))
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Side {
    Left,
    Right,
}

impl Formula {
    fn is_binary(&self) -> bool {
        matches!(
            self,
            Formula::And(_, _) | Formula::Or(_, _) | Formula::Implies(_, _)
        )
    }

    // Canonical form: binary operands are parenthesized except along the
    // operator's own chain side (left for & and |, right for ->), so
    // `(verb:0 & noun:0) | (verb:1 & noun:1)` and `a -> b -> c`.
    fn write(&self, out: &mut String) {
        match self {
            Formula::Atom(a) => {
                out.push_str(a.branch.label());
                out.push(':');
                out.push_str(&a.index.to_string());
            }
            Formula::Not(inner) => {
                out.push('!');
                Self::write_operand(inner, out, inner.is_binary());
            }
            Formula::And(l, r) => {
                self.write_binary(l, r, " & ", out);
            }
            Formula::Or(l, r) => {
                self.write_binary(l, r, " | ", out);
            }
            Formula::Implies(l, r) => {
                self.write_binary(l, r, " -> ", out);
            }
        }
    }

    fn write_binary(&self, l: &Formula, r: &Formula, op: &str, out: &mut String) {
        Self::write_operand(l, out, Self::needs_parens(self, l, Side::Left));
        out.push_str(op);
        Self::write_operand(r, out, Self::needs_parens(self, r, Side::Right));
    }

    fn needs_parens(parent: &Formula, child: &Formula, side: Side) -> bool {
        if !child.is_binary() {
            return false;
        }
        let chains = match (parent, side) {
            (Formula::And(_, _), Side::Left) => matches!(child, Formula::And(_, _)),
            (Formula::Or(_, _), Side::Left) => matches!(child, Formula::Or(_, _)),
            (Formula::Implies(_, _), Side::Right) => matches!(child, Formula::Implies(_, _)),
            _ => false,
        };
        !chains
    }

    fn write_operand(child: &Formula, out: &mut String, parens: bool) {
        if parens {
            out.push('(');
            child.write(out);
            out.push(')');
        } else {
            child.write(out);
        }
    }

    /// Visit every atom in the tree, left to right.
    pub fn for_each_atom(&self, f: &mut impl FnMut(Atom)) {
        match self {
            Formula::Atom(a) => f(*a),
            Formula::Not(x) => x.for_each_atom(f),
            Formula::And(l, r) | Formula::Or(l, r) | Formula::Implies(l, r) => {
                l.for_each_atom(f);
                r.for_each_atom(f);
            }
        }
    }

    /// Checks every atom index against the given vocabulary sizes.
    pub fn check_bounds(&self, verbs: usize, nouns: usize) -> Result<(), LogicError> {
        let mut err = None;
        self.for_each_atom(&mut |a| {
            let size = match a.branch {
                Branch::Verb => verbs,
                Branch::Noun => nouns,
            };
            if a.index >= size && err.is_none() {
                err = Some(LogicError::AtomOutOfBounds {
                    branch: a.branch.label(),
                    index: a.index,
                    size,
                });
            }
        });
        match err {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        self.write(&mut s);
        f.write_str(&s)
    }
}

/// How a constraint set encodes the co-occurrence mask.
///
/// `InvalidNegations` carries one `!(verb:i & noun:j)` per invalid pair;
/// `ValidDisjunction` carries a single disjunction over the valid pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintMode {
    InvalidNegations,
    ValidDisjunction,
}

impl Default for ConstraintMode {
    fn default() -> Self {
        ConstraintMode::ValidDisjunction
    }
}

/// Declared vocabulary sizes, from a `#! vocab` header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VocabSize {
    pub verbs: usize,
    pub nouns: usize,
}

/// An ordered list of formulas plus the mode they were generated under.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    pub formulas: Vec<Formula>,
    pub mode: ConstraintMode,
    /// Vocabulary bounds when declared; atoms are checked against them.
    pub vocab: Option<VocabSize>,
}

impl ConstraintSet {
    pub fn new(
        formulas: Vec<Formula>,
        mode: ConstraintMode,
        vocab: Option<VocabSize>,
    ) -> Result<Self, LogicError> {
        if formulas.is_empty() {
            return Err(LogicError::InvalidConstraintSet);
        }
        if let Some(v) = vocab {
            for f in &formulas {
                f.check_bounds(v.verbs, v.nouns)?;
            }
        }
        Ok(ConstraintSet { formulas, mode, vocab })
    }

    pub fn len(&self) -> usize {
        self.formulas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.formulas.is_empty()
    }
}

/// Errors raised by formula evaluation and loss computation.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LogicError {
    #[error("constraint set must contain at least one formula")]
    InvalidConstraintSet,
    #[error("validity mask has no valid entry")]
    EmptyMask,
    #[error("{branch} index {index} out of range for vocabulary size {size}")]
    AtomOutOfBounds {
        branch: &'static str,
        index: usize,
        size: usize,
    },
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_negated_pair_like_the_dsl() {
        let f = not(and(verb(3), noun(7)));
        assert_eq!(f.to_string(), "!(verb:3 & noun:7)");
    }

    #[test]
    fn renders_implication_with_grouped_disjunction() {
        let f = implies(verb(0), or(noun(1), noun(2)));
        assert_eq!(f.to_string(), "verb:0 -> (noun:1 | noun:2)");
    }

    #[test]
    fn implies_chains_render_right_associative() {
        let right = implies(verb(0), implies(noun(1), noun(2)));
        assert_eq!(right.to_string(), "verb:0 -> noun:1 -> noun:2");
        let left = implies(implies(verb(0), noun(1)), noun(2));
        assert_eq!(left.to_string(), "(verb:0 -> noun:1) -> noun:2");
    }

    #[test]
    fn double_negation_renders_without_parens() {
        let f = not(not(verb(1)));
        assert_eq!(f.to_string(), "!!verb:1");
    }

    #[test]
    fn bounds_check_reports_offending_atom() {
        let f = and(verb(2), noun(9));
        assert_eq!(f.check_bounds(3, 10), Ok(()));
        assert_eq!(
            f.check_bounds(2, 10),
            Err(LogicError::AtomOutOfBounds { branch: "verb", index: 2, size: 2 })
        );
    }

    #[test]
    fn empty_set_is_rejected() {
        let err = ConstraintSet::new(vec![], ConstraintMode::InvalidNegations, None);
        assert_eq!(err, Err(LogicError::InvalidConstraintSet));
    }
}
