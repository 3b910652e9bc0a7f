//! Verb-noun co-occurrence: counting, binarization, constraint generation,
//! prediction refinement, CSV serialization, and heatmap rendering.
//!
//! File formats:
//! - Matrix CSV: first line `verbs=<V>,nouns=<N>`, then V rows of N counts.
//! - Mask CSV: same layout with 0/1 entries.
//! - Annotations CSV: header `uid,verb_id,noun_id`, one record per line.
//! - Heatmap: binary PGM (P5), one `cell_px`-square block per selected cell,
//!   intensity proportional to log(1+count).

use std::fmt::Write as _;
use std::path::Path;

use crate::formula::{
    and, noun, not, or, verb, ConstraintMode, ConstraintSet, Formula, LogicError, VocabSize,
};
use crate::scalar::Scalar;
use crate::semantics::TruthAssignment;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CooccurError {
    #[error("record {record}: pair ({verb}, {noun}) outside vocabulary {verbs}x{nouns}")]
    Bounds {
        record: usize,
        verb: usize,
        noun: usize,
        verbs: usize,
        nouns: usize,
    },
    #[error("no entry passes the threshold; mask would be empty")]
    EmptyMask,
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("vocabulary mismatch: file declares {got_verbs}x{got_nouns}, expected {verbs}x{nouns}")]
    VocabMismatch {
        verbs: usize,
        nouns: usize,
        got_verbs: usize,
        got_nouns: usize,
    },
    #[error("{what} id {index} out of range for size {size}")]
    IdOutOfBounds {
        what: &'static str,
        index: usize,
        size: usize,
    },
    #[error("selection must contain at least one verb and one noun id")]
    EmptySelection,
    #[error("invalid vocabulary: {0}")]
    InvalidVocab(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Ordered verb and noun class names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub verbs: Vec<String>,
    pub nouns: Vec<String>,
}

impl Vocabulary {
    pub fn new(verbs: Vec<String>, nouns: Vec<String>) -> Result<Self, CooccurError> {
        for (names, what) in [(&verbs, "verb"), (&nouns, "noun")] {
            if names.is_empty() {
                return Err(CooccurError::InvalidVocab(format!("{what} list is empty")));
            }
            let mut seen = std::collections::HashSet::new();
            for n in names.iter() {
                if !seen.insert(n) {
                    return Err(CooccurError::InvalidVocab(format!(
                        "duplicate {what} name `{n}`"
                    )));
                }
            }
        }
        Ok(Vocabulary { verbs, nouns })
    }

    pub fn size(&self) -> VocabSize {
        VocabSize { verbs: self.verbs.len(), nouns: self.nouns.len() }
    }

    pub fn load_json(path: &Path) -> Result<Self, CooccurError> {
        let text = std::fs::read_to_string(path)?;
        let v: Vocabulary = serde_json::from_str(&text)
            .map_err(|e| CooccurError::Parse { line: e.line(), message: e.to_string() })?;
        Vocabulary::new(v.verbs, v.nouns)
    }

    pub fn save_json(&self, path: &Path) -> Result<(), CooccurError> {
        let text = serde_json::to_string_pretty(self).expect("vocabulary serializes");
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// One labeled verb-noun annotation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationRecord {
    pub uid: String,
    pub verb_id: usize,
    pub noun_id: usize,
}

/// Reads an annotations CSV (`uid,verb_id,noun_id` header required).
pub fn load_annotations(path: &Path) -> Result<Vec<AnnotationRecord>, CooccurError> {
    let text = std::fs::read_to_string(path)?;
    parse_annotations(&text)
}

pub fn parse_annotations(text: &str) -> Result<Vec<AnnotationRecord>, CooccurError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "uid,verb_id,noun_id" => {}
        _ => {
            return Err(CooccurError::Parse {
                line: 1,
                message: "expected header `uid,verb_id,noun_id`".into(),
            })
        }
    }
    let mut out = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let uid = parts.next().unwrap_or("").trim().to_string();
        let verb_id = parts
            .next()
            .and_then(|s| s.trim().parse::<usize>().ok())
            .ok_or_else(|| CooccurError::Parse {
                line: line_no,
                message: "bad verb_id".into(),
            })?;
        let noun_id = parts
            .next()
            .and_then(|s| s.trim().parse::<usize>().ok())
            .ok_or_else(|| CooccurError::Parse {
                line: line_no,
                message: "bad noun_id".into(),
            })?;
        if uid.is_empty() || parts.next().is_some() {
            return Err(CooccurError::Parse {
                line: line_no,
                message: "expected exactly `uid,verb_id,noun_id`".into(),
            });
        }
        out.push(AnnotationRecord { uid, verb_id, noun_id });
    }
    Ok(out)
}

/// V×N matrix of verb-noun pair counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CooccurrenceMatrix {
    verbs: usize,
    nouns: usize,
    counts: Vec<u64>,
}

impl CooccurrenceMatrix {
    pub fn zeros(verbs: usize, nouns: usize) -> Self {
        CooccurrenceMatrix { verbs, nouns, counts: vec![0; verbs * nouns] }
    }

    pub fn verbs(&self) -> usize {
        self.verbs
    }

    pub fn nouns(&self) -> usize {
        self.nouns
    }

    pub fn count(&self, verb: usize, noun: usize) -> u64 {
        self.counts[verb * self.nouns + noun]
    }

    pub fn set_count(&mut self, verb: usize, noun: usize, c: u64) {
        self.counts[verb * self.nouns + noun] = c;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Counts each (verb_id, noun_id) record into a fresh matrix.
    pub fn build_from_annotations(
        records: &[(usize, usize)],
        verbs: usize,
        nouns: usize,
    ) -> Result<Self, CooccurError> {
        let mut m = CooccurrenceMatrix::zeros(verbs, nouns);
        for (record, &(v, n)) in records.iter().enumerate() {
            if v >= verbs || n >= nouns {
                return Err(CooccurError::Bounds { record, verb: v, noun: n, verbs, nouns });
            }
            m.counts[v * nouns + n] += 1;
        }
        Ok(m)
    }

    /// Threshold counts into a validity mask: valid iff count >= min_count.
    pub fn binarize(&self, min_count: u64) -> Result<ValidityMask, CooccurError> {
        let valid: Vec<bool> = self.counts.iter().map(|&c| c >= min_count).collect();
        ValidityMask::new(valid, self.verbs, self.nouns)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = format!("verbs={},nouns={}\n", self.verbs, self.nouns);
        for i in 0..self.verbs {
            let row = &self.counts[i * self.nouns..(i + 1) * self.nouns];
            let mut first = true;
            for c in row {
                if !first {
                    out.push(',');
                }
                let _ = write!(out, "{c}");
                first = false;
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv_str(text: &str) -> Result<Self, CooccurError> {
        let (verbs, nouns, rows) = parse_grid(text, "matrix")?;
        let mut counts = Vec::with_capacity(verbs * nouns);
        for (line_no, row) in rows {
            for cell in row.split(',') {
                let c: u64 = cell.trim().parse().map_err(|_| CooccurError::Parse {
                    line: line_no,
                    message: format!("bad count `{cell}`"),
                })?;
                counts.push(c);
            }
        }
        Ok(CooccurrenceMatrix { verbs, nouns, counts })
    }

    pub fn save_csv(&self, path: &Path) -> Result<(), CooccurError> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    pub fn load_csv(path: &Path) -> Result<Self, CooccurError> {
        Self::from_csv_str(&std::fs::read_to_string(path)?)
    }

    /// Fails with `VocabMismatch` when the matrix shape disagrees with `vocab`.
    pub fn check_vocab(&self, vocab: VocabSize) -> Result<(), CooccurError> {
        if self.verbs != vocab.verbs || self.nouns != vocab.nouns {
            return Err(CooccurError::VocabMismatch {
                verbs: vocab.verbs,
                nouns: vocab.nouns,
                got_verbs: self.verbs,
                got_nouns: self.nouns,
            });
        }
        Ok(())
    }
}

/// Shared grid-CSV parsing: header line plus V rows of N cells.
fn parse_grid(text: &str, what: &'static str) -> Result<(usize, usize, Vec<(usize, String)>), CooccurError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(CooccurError::Parse {
        line: 1,
        message: format!("empty {what} file"),
    })?;
    let dims = parse_header(header).ok_or_else(|| CooccurError::Parse {
        line: 1,
        message: "expected header `verbs=<V>,nouns=<N>`".into(),
    })?;
    let (verbs, nouns) = dims;
    if verbs == 0 || nouns == 0 {
        return Err(CooccurError::Parse {
            line: 1,
            message: "vocabulary sizes must be at least 1".into(),
        });
    }
    let mut rows = Vec::with_capacity(verbs);
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cells = line.split(',').count();
        if cells != nouns {
            return Err(CooccurError::Parse {
                line: line_no,
                message: format!("expected {nouns} cells, found {cells}"),
            });
        }
        rows.push((line_no, line.to_string()));
    }
    if rows.len() != verbs {
        return Err(CooccurError::Parse {
            line: rows.len() + 1,
            message: format!("expected {verbs} rows, found {}", rows.len()),
        });
    }
    Ok((verbs, nouns, rows))
}

fn parse_header(header: &str) -> Option<(usize, usize)> {
    let mut parts = header.trim().split(',');
    let v = parts.next()?.strip_prefix("verbs=")?.parse().ok()?;
    let n = parts.next()?.strip_prefix("nouns=")?.parse().ok()?;
    if parts.next().is_some() {
        return None;
    }
    Some((v, n))
}

/// V×N boolean mask of valid verb-noun pairs. Always has at least one
/// valid entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidityMask {
    verbs: usize,
    nouns: usize,
    valid: Vec<bool>,
}

impl ValidityMask {
    pub fn new(valid: Vec<bool>, verbs: usize, nouns: usize) -> Result<Self, CooccurError> {
        if valid.len() != verbs * nouns {
            return Err(CooccurError::DimensionMismatch {
                context: "validity mask",
                expected: verbs * nouns,
                got: valid.len(),
            });
        }
        if !valid.iter().any(|&b| b) {
            return Err(CooccurError::EmptyMask);
        }
        Ok(ValidityMask { verbs, nouns, valid })
    }

    pub fn from_pairs(
        pairs: &[(usize, usize)],
        verbs: usize,
        nouns: usize,
    ) -> Result<Self, CooccurError> {
        let mut valid = vec![false; verbs * nouns];
        for (record, &(v, n)) in pairs.iter().enumerate() {
            if v >= verbs || n >= nouns {
                return Err(CooccurError::Bounds { record, verb: v, noun: n, verbs, nouns });
            }
            valid[v * nouns + n] = true;
        }
        ValidityMask::new(valid, verbs, nouns)
    }

    pub fn verbs(&self) -> usize {
        self.verbs
    }

    pub fn nouns(&self) -> usize {
        self.nouns
    }

    pub fn is_valid(&self, verb: usize, noun: usize) -> bool {
        self.valid[verb * self.nouns + noun]
    }

    pub fn num_valid(&self) -> usize {
        self.valid.iter().filter(|&&b| b).count()
    }

    /// Valid (verb, noun) pairs in row-major order.
    pub fn valid_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let nouns = self.nouns;
        self.valid
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(k, _)| (k / nouns, k % nouns))
    }

    /// Pair-wise OR of two masks over the same vocabulary.
    pub fn union(&self, other: &ValidityMask) -> Result<ValidityMask, CooccurError> {
        if self.verbs != other.verbs || self.nouns != other.nouns {
            return Err(CooccurError::VocabMismatch {
                verbs: self.verbs,
                nouns: self.nouns,
                got_verbs: other.verbs,
                got_nouns: other.nouns,
            });
        }
        let valid = self
            .valid
            .iter()
            .zip(&other.valid)
            .map(|(&a, &b)| a || b)
            .collect();
        ValidityMask::new(valid, self.verbs, self.nouns)
    }

    /// Converts the mask into logic formulas.
    ///
    /// `InvalidNegations`: one `!(verb:i & noun:j)` per invalid pair, row-major.
    /// `ValidDisjunction`: a single left-deep or-chain of `(verb:i & noun:j)`
    /// over the valid pairs, row-major.
    pub fn to_constraints(&self, mode: ConstraintMode) -> Result<ConstraintSet, LogicError> {
        let vocab = Some(VocabSize { verbs: self.verbs, nouns: self.nouns });
        match mode {
            ConstraintMode::InvalidNegations => {
                let mut formulas = Vec::new();
                for i in 0..self.verbs {
                    for j in 0..self.nouns {
                        if !self.is_valid(i, j) {
                            formulas.push(not(and(verb(i), noun(j))));
                        }
                    }
                }
                ConstraintSet::new(formulas, mode, vocab)
            }
            ConstraintMode::ValidDisjunction => {
                let mut chain: Option<Formula> = None;
                for (i, j) in self.valid_pairs() {
                    let pair = and(verb(i), noun(j));
                    chain = Some(match chain {
                        None => pair,
                        Some(acc) => or(acc, pair),
                    });
                }
                let f = chain.ok_or(LogicError::EmptyMask)?;
                ConstraintSet::new(vec![f], mode, vocab)
            }
        }
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = format!("verbs={},nouns={}\n", self.verbs, self.nouns);
        for i in 0..self.verbs {
            let row = &self.valid[i * self.nouns..(i + 1) * self.nouns];
            let cells: Vec<&str> = row.iter().map(|&b| if b { "1" } else { "0" }).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv_str(text: &str) -> Result<Self, CooccurError> {
        let (verbs, nouns, rows) = parse_grid(text, "mask")?;
        let mut valid = Vec::with_capacity(verbs * nouns);
        for (line_no, row) in rows {
            for cell in row.split(',') {
                match cell.trim() {
                    "0" => valid.push(false),
                    "1" => valid.push(true),
                    other => {
                        return Err(CooccurError::Parse {
                            line: line_no,
                            message: format!("mask cell must be 0 or 1, got `{other}`"),
                        })
                    }
                }
            }
        }
        ValidityMask::new(valid, verbs, nouns)
    }

    pub fn save_csv(&self, path: &Path) -> Result<(), CooccurError> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    pub fn load_csv(path: &Path) -> Result<Self, CooccurError> {
        Self::from_csv_str(&std::fs::read_to_string(path)?)
    }

    pub fn check_vocab(&self, vocab: VocabSize) -> Result<(), CooccurError> {
        if self.verbs != vocab.verbs || self.nouns != vocab.nouns {
            return Err(CooccurError::VocabMismatch {
                verbs: vocab.verbs,
                nouns: vocab.nouns,
                got_verbs: self.verbs,
                got_nouns: self.nouns,
            });
        }
        Ok(())
    }
}

/// Dense V×N action-score matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix<T> {
    verbs: usize,
    nouns: usize,
    data: Vec<T>,
}

impl<T: Scalar> ScoreMatrix<T> {
    pub fn zeros(verbs: usize, nouns: usize) -> Self {
        ScoreMatrix { verbs, nouns, data: vec![T::zero(); verbs * nouns] }
    }

    pub fn from_vec(data: Vec<T>, verbs: usize, nouns: usize) -> Self {
        assert_eq!(data.len(), verbs * nouns);
        ScoreMatrix { verbs, nouns, data }
    }

    /// score[i][j] = verb_probs[i] * noun_probs[j].
    pub fn outer(verb_probs: &[T], noun_probs: &[T]) -> Self {
        let mut data = Vec::with_capacity(verb_probs.len() * noun_probs.len());
        for &p in verb_probs {
            for &q in noun_probs {
                data.push(p * q);
            }
        }
        ScoreMatrix { verbs: verb_probs.len(), nouns: noun_probs.len(), data }
    }

    pub fn verbs(&self) -> usize {
        self.verbs
    }

    pub fn nouns(&self) -> usize {
        self.nouns
    }

    pub fn at(&self, verb: usize, noun: usize) -> T {
        self.data[verb * self.nouns + noun]
    }

    pub fn at_mut(&mut self, verb: usize, noun: usize) -> &mut T {
        &mut self.data[verb * self.nouns + noun]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &x| acc + x)
    }

    pub fn scale(&mut self, factor: T) {
        for x in &mut self.data {
            *x = *x * factor;
        }
    }

    /// Highest-scoring pair; ties broken toward the lowest flattened index.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0usize;
        for (k, &x) in self.data.iter().enumerate() {
            if x > self.data[best] {
                best = k;
            }
        }
        (best / self.nouns, best % self.nouns)
    }

    /// The k highest-scoring pairs, ties broken toward lower flattened indices.
    pub fn top_k(&self, k: usize) -> Vec<(usize, usize)> {
        let mut idx: Vec<usize> = (0..self.data.len()).collect();
        idx.sort_by(|&a, &b| {
            self.data[b]
                .partial_cmp(&self.data[a])
                .expect("scores are finite")
                .then(a.cmp(&b))
        });
        idx.truncate(k);
        idx.into_iter()
            .map(|f| (f / self.nouns, f % self.nouns))
            .collect()
    }
}

/// Masked, renormalized action scores.
///
/// Zeroes invalid pairs of the verb⊗noun outer product and renormalizes to
/// sum 1. When the valid mass is exactly zero the unrefined outer product is
/// returned and the flag is true.
pub fn refine_action_scores<T: Scalar>(
    mask: &ValidityMask,
    t: &TruthAssignment<T>,
) -> Result<(ScoreMatrix<T>, bool), CooccurError> {
    if t.verbs() != mask.verbs {
        return Err(CooccurError::DimensionMismatch {
            context: "verb_probs",
            expected: mask.verbs,
            got: t.verbs(),
        });
    }
    if t.nouns() != mask.nouns {
        return Err(CooccurError::DimensionMismatch {
            context: "noun_probs",
            expected: mask.nouns,
            got: t.nouns(),
        });
    }
    let outer = ScoreMatrix::outer(&t.verb_probs, &t.noun_probs);
    let mut masked = outer.clone();
    for i in 0..mask.verbs {
        for j in 0..mask.nouns {
            if !mask.is_valid(i, j) {
                *masked.at_mut(i, j) = T::zero();
            }
        }
    }
    let mass = masked.sum();
    if mass > T::zero() {
        masked.scale(T::one() / mass);
        Ok((masked, false))
    } else {
        Ok((outer, true))
    }
}

/// Renders a selection of the matrix as a binary PGM (P5) image.
///
/// Each selected cell becomes a `cell_px`-square block; intensity is
/// `255 * log(1+count) / log(1+max_count)` over the selection.
pub fn render_heatmap(
    m: &CooccurrenceMatrix,
    verb_ids: &[usize],
    noun_ids: &[usize],
    cell_px: usize,
) -> Result<Vec<u8>, CooccurError> {
    if verb_ids.is_empty() || noun_ids.is_empty() {
        return Err(CooccurError::EmptySelection);
    }
    for &v in verb_ids {
        if v >= m.verbs() {
            return Err(CooccurError::IdOutOfBounds { what: "verb", index: v, size: m.verbs() });
        }
    }
    for &n in noun_ids {
        if n >= m.nouns() {
            return Err(CooccurError::IdOutOfBounds { what: "noun", index: n, size: m.nouns() });
        }
    }
    let cell_px = cell_px.max(1);
    let max_count = verb_ids
        .iter()
        .flat_map(|&v| noun_ids.iter().map(move |&n| m.count(v, n)))
        .max()
        .unwrap_or(0);
    let denom = ((1 + max_count) as f64).ln();
    let width = noun_ids.len() * cell_px;
    let height = verb_ids.len() * cell_px;
    let mut pixels = vec![0u8; width * height];
    for (bi, &v) in verb_ids.iter().enumerate() {
        for (bj, &n) in noun_ids.iter().enumerate() {
            let c = m.count(v, n);
            let level = if max_count == 0 || c == 0 {
                0u8
            } else {
                (255.0 * ((1 + c) as f64).ln() / denom).round() as u8
            };
            for dy in 0..cell_px {
                let row = bi * cell_px + dy;
                let base = row * width + bj * cell_px;
                for px in &mut pixels[base..base + cell_px] {
                    *px = level;
                }
            }
        }
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(&pixels);
    Ok(out)
}
