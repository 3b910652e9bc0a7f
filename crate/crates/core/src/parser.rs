//! Constraint DSL parsing and rendering.
//!
//! Grammar, one formula per line:
//!
//! ```text
//! #! vocab verbs=<V> nouns=<N>     (optional header)
//! #! mode <invalid|valid>          (optional header, default valid)
//! formula := or ( "->" formula )?          right-associative
//! or      := and ( "|" and )*
//! and     := unary ( "&" unary )*
//! unary   := "!" unary | atom | "(" formula ")"
//! atom    := ("verb" | "noun") ":" <u32>
//! ```
//!
//! `#` starts a comment. Precedence `!` > `&` > `|` > `->`.

use crate::formula::{
    Atom, Branch, ConstraintMode, ConstraintSet, Formula, LogicError, VocabSize,
};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("line {line}: {source}")]
    Bounds {
        line: usize,
        #[source]
        source: LogicError,
    },
    #[error("constraint source contains no formulas")]
    EmptySet,
}

fn syntax(line: usize, column: usize, message: impl Into<String>) -> ParseError {
    ParseError::Syntax { line, column, message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tok {
    Atom(Atom),
    Not,
    And,
    Or,
    Implies,
    LParen,
    RParen,
}

/// Tokenize one line. Columns are 1-based character positions.
fn tokenize(line_no: usize, line: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let chars: Vec<char> = line.chars().collect();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let col = i + 1;
        let c = chars[i];
        match c {
            ' ' | '\t' | '\r' => i += 1,
            '#' => break, // trailing comment
            '!' => {
                toks.push((Tok::Not, col));
                i += 1;
            }
            '&' => {
                toks.push((Tok::And, col));
                i += 1;
            }
            '|' => {
                toks.push((Tok::Or, col));
                i += 1;
            }
            '(' => {
                toks.push((Tok::LParen, col));
                i += 1;
            }
            ')' => {
                toks.push((Tok::RParen, col));
                i += 1;
            }
            '-' => {
                if chars.get(i + 1) == Some(&'>') {
                    toks.push((Tok::Implies, col));
                    i += 2;
                } else {
                    return Err(syntax(line_no, col, "expected '->'"));
                }
            }
            c if c.is_ascii_alphabetic() => {
                let start = i;
                while i < chars.len() && chars[i].is_ascii_alphabetic() {
                    i += 1;
                }
                let word: String = chars[start..i].iter().collect();
                let branch = match word.as_str() {
                    "verb" => Branch::Verb,
                    "noun" => Branch::Noun,
                    _ => {
                        return Err(syntax(
                            line_no,
                            start + 1,
                            format!("unknown keyword `{word}`, expected `verb` or `noun`"),
                        ))
                    }
                };
                if chars.get(i) != Some(&':') {
                    return Err(syntax(line_no, i + 1, format!("expected ':' after `{word}`")));
                }
                i += 1;
                let digits_start = i;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                if digits_start == i {
                    return Err(syntax(
                        line_no,
                        i + 1,
                        format!("expected class index after `{word}:`"),
                    ));
                }
                let digits: String = chars[digits_start..i].iter().collect();
                let index: u32 = digits.parse().map_err(|_| {
                    syntax(line_no, digits_start + 1, format!("class index `{digits}` too large"))
                })?;
                toks.push((Tok::Atom(Atom { branch, index: index as usize }), start + 1));
            }
            other => {
                return Err(syntax(line_no, col, format!("unexpected character `{other}`")));
            }
        }
    }
    Ok(toks)
}

struct LineParser<'a> {
    toks: &'a [(Tok, usize)],
    pos: usize,
    line: usize,
    line_len: usize,
}

impl<'a> LineParser<'a> {
    fn peek(&self) -> Option<Tok> {
        self.toks.get(self.pos).map(|(t, _)| *t)
    }

    fn col(&self) -> usize {
        self.toks
            .get(self.pos)
            .map(|(_, c)| *c)
            .unwrap_or(self.line_len + 1)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.peek();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn formula(&mut self) -> Result<Formula, ParseError> {
        let lhs = self.or_expr()?;
        if self.peek() == Some(Tok::Implies) {
            self.bump();
            let rhs = self.formula()?; // right-associative
            Ok(Formula::Implies(Box::new(lhs), Box::new(rhs)))
        } else {
            Ok(lhs)
        }
    }

    fn or_expr(&mut self) -> Result<Formula, ParseError> {
        let mut lhs = self.and_expr()?;
        while self.peek() == Some(Tok::Or) {
            self.bump();
            let rhs = self.and_expr()?;
            lhs = Formula::Or(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> Result<Formula, ParseError> {
        let mut lhs = self.unary()?;
        while self.peek() == Some(Tok::And) {
            self.bump();
            let rhs = self.unary()?;
            lhs = Formula::And(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Formula, ParseError> {
        match self.peek() {
            Some(Tok::Not) => {
                self.bump();
                Ok(Formula::Not(Box::new(self.unary()?)))
            }
            Some(Tok::Atom(a)) => {
                self.bump();
                Ok(Formula::Atom(a))
            }
            Some(Tok::LParen) => {
                self.bump();
                let inner = self.formula()?;
                if self.peek() == Some(Tok::RParen) {
                    self.bump();
                    Ok(inner)
                } else {
                    Err(syntax(self.line, self.col(), "expected ')'"))
                }
            }
            Some(_) | None => Err(syntax(self.line, self.col(), "expected formula")),
        }
    }
}

fn parse_directive(
    line_no: usize,
    body: &str,
    vocab: &mut Option<VocabSize>,
    mode: &mut ConstraintMode,
) -> Result<(), ParseError> {
    let mut words = body.split_whitespace();
    match words.next() {
        Some("vocab") => {
            let mut verbs = None;
            let mut nouns = None;
            for w in words {
                if let Some(v) = w.strip_prefix("verbs=") {
                    verbs = v.parse::<usize>().ok();
                } else if let Some(n) = w.strip_prefix("nouns=") {
                    nouns = n.parse::<usize>().ok();
                } else {
                    return Err(syntax(line_no, 1, format!("bad vocab field `{w}`")));
                }
            }
            match (verbs, nouns) {
                (Some(v), Some(n)) if v >= 1 && n >= 1 => {
                    *vocab = Some(VocabSize { verbs: v, nouns: n });
                    Ok(())
                }
                _ => Err(syntax(line_no, 1, "vocab header needs verbs=<V> nouns=<N>")),
            }
        }
        Some("mode") => match words.next() {
            Some("invalid") => {
                *mode = ConstraintMode::InvalidNegations;
                Ok(())
            }
            Some("valid") => {
                *mode = ConstraintMode::ValidDisjunction;
                Ok(())
            }
            other => Err(syntax(
                line_no,
                1,
                format!("mode must be `invalid` or `valid`, got `{}`", other.unwrap_or("")),
            )),
        },
        other => Err(syntax(
            line_no,
            1,
            format!("unknown directive `{}`", other.unwrap_or("")),
        )),
    }
}

/// Parse DSL source into a constraint set.
///
/// When no `#! mode` header is present the mode defaults to
/// [`ConstraintMode::ValidDisjunction`]. When a `#! vocab` header is present
/// every atom is bounds-checked against it.
pub fn parse(text: &str) -> Result<ConstraintSet, ParseError> {
    let mut vocab: Option<VocabSize> = None;
    let mut mode = ConstraintMode::default();
    let mut formulas: Vec<(usize, Formula)> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = raw.trim_start();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(body) = trimmed.strip_prefix("#!") {
            parse_directive(line_no, body, &mut vocab, &mut mode)?;
            continue;
        }
        if trimmed.starts_with('#') {
            continue;
        }
        let toks = tokenize(line_no, raw)?;
        if toks.is_empty() {
            continue; // line was only a trailing comment
        }
        let mut p = LineParser {
            toks: &toks,
            pos: 0,
            line: line_no,
            line_len: raw.chars().count(),
        };
        let f = p.formula()?;
        if p.pos != p.toks.len() {
            return Err(syntax(line_no, p.col(), "unexpected trailing tokens"));
        }
        formulas.push((line_no, f));
    }

    if formulas.is_empty() {
        return Err(ParseError::EmptySet);
    }
    if let Some(v) = vocab {
        for (line, f) in &formulas {
            f.check_bounds(v.verbs, v.nouns)
                .map_err(|source| ParseError::Bounds { line: *line, source })?;
        }
    }
    Ok(ConstraintSet {
        formulas: formulas.into_iter().map(|(_, f)| f).collect(),
        mode,
        vocab,
    })
}

/// Render a constraint set back to DSL source. Inverse of [`parse`]:
/// `parse(render(s))` structurally equals `s`.
pub fn render(set: &ConstraintSet) -> Result<String, LogicError> {
    if set.formulas.is_empty() {
        return Err(LogicError::InvalidConstraintSet);
    }
    let mut out = String::new();
    if let Some(v) = set.vocab {
        out.push_str(&format!("#! vocab verbs={} nouns={}\n", v.verbs, v.nouns));
    }
    let mode = match set.mode {
        ConstraintMode::InvalidNegations => "invalid",
        ConstraintMode::ValidDisjunction => "valid",
    };
    out.push_str(&format!("#! mode {mode}\n"));
    for f in &set.formulas {
        out.push_str(&f.to_string());
        out.push('\n');
    }
    Ok(out)
}
