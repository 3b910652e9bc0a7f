//! Combining per-sample action probabilities from multiple models.
//!
//! Prediction files are JSON-lines: a header line declaring the vocabulary
//! and model name, then one record per sample carrying either branch
//! probabilities or a full V×N action-score matrix. Aggregation composes
//! each record into action scores (outer product for branch records),
//! optionally refines with a validity mask, then takes the weighted mean
//! across models per uid.

use std::collections::BTreeMap;
use std::path::Path;

use crate::cooccur::{refine_action_scores, CooccurError, ScoreMatrix, ValidityMask};
use crate::semantics::TruthAssignment;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("vocabulary mismatch: {context}")]
    VocabMismatch { context: String },
    #[error("uid sets differ: {missing_count} uid(s) not shared, e.g. `{example}`")]
    UidMismatch { missing_count: usize, example: String },
    #[error("record `{uid}`: probabilities sum to {sum}, expected 1 within {tol}")]
    BadProbabilities { uid: String, sum: f64, tol: f64 },
    #[error("ensemble weights must be non-negative with a positive sum")]
    BadWeights,
    #[error("no prediction files given")]
    Empty,
    #[error(transparent)]
    Mask(#[from] CooccurError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

const PROB_SUM_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    verbs: usize,
    nouns: usize,
    model: String,
}

/// One per-sample record: branch probabilities or composed action scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PredictionRecord {
    Branch {
        uid: String,
        verb_probs: Vec<f64>,
        noun_probs: Vec<f64>,
    },
    Action {
        uid: String,
        action_scores: Vec<Vec<f64>>,
    },
}

impl PredictionRecord {
    pub fn uid(&self) -> &str {
        match self {
            PredictionRecord::Branch { uid, .. } | PredictionRecord::Action { uid, .. } => uid,
        }
    }
}

/// All predictions of one model over an evaluation set.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionFile {
    pub model: String,
    pub verbs: usize,
    pub nouns: usize,
    pub records: Vec<PredictionRecord>,
}

impl PredictionFile {
    pub fn new(model: String, verbs: usize, nouns: usize) -> Self {
        PredictionFile { model, verbs, nouns, records: Vec::new() }
    }

    pub fn push_branch(&mut self, uid: String, verb_probs: Vec<f64>, noun_probs: Vec<f64>) {
        self.records.push(PredictionRecord::Branch { uid, verb_probs, noun_probs });
    }

    pub fn push_action(&mut self, uid: String, scores: &ScoreMatrix<f64>) {
        let rows = (0..scores.verbs())
            .map(|i| (0..scores.nouns()).map(|j| scores.at(i, j)).collect())
            .collect();
        self.records.push(PredictionRecord::Action { uid, action_scores: rows });
    }

    /// Validates record shapes and probability sums against the header.
    pub fn validate(&self) -> Result<(), EnsembleError> {
        for r in &self.records {
            match r {
                PredictionRecord::Branch { uid, verb_probs, noun_probs } => {
                    if verb_probs.len() != self.verbs || noun_probs.len() != self.nouns {
                        return Err(EnsembleError::VocabMismatch {
                            context: format!(
                                "record `{uid}` has {}x{} probs, header says {}x{}",
                                verb_probs.len(),
                                noun_probs.len(),
                                self.verbs,
                                self.nouns
                            ),
                        });
                    }
                    for probs in [verb_probs, noun_probs] {
                        let sum: f64 = probs.iter().sum();
                        if (sum - 1.0).abs() > PROB_SUM_TOL || probs.iter().any(|&p| p < 0.0) {
                            return Err(EnsembleError::BadProbabilities {
                                uid: uid.clone(),
                                sum,
                                tol: PROB_SUM_TOL,
                            });
                        }
                    }
                }
                PredictionRecord::Action { uid, action_scores } => {
                    if action_scores.len() != self.verbs
                        || action_scores.iter().any(|row| row.len() != self.nouns)
                    {
                        return Err(EnsembleError::VocabMismatch {
                            context: format!("record `{uid}` action matrix shape mismatch"),
                        });
                    }
                    let sum: f64 = action_scores.iter().flatten().sum();
                    if (sum - 1.0).abs() > PROB_SUM_TOL
                        || action_scores.iter().flatten().any(|&p| p < 0.0)
                    {
                        return Err(EnsembleError::BadProbabilities {
                            uid: uid.clone(),
                            sum,
                            tol: PROB_SUM_TOL,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let header = Header { verbs: self.verbs, nouns: self.nouns, model: self.model.clone() };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, EnsembleError> {
        let mut lines = text.lines().enumerate();
        let (_, header_line) = lines.next().ok_or(EnsembleError::Parse {
            line: 1,
            message: "empty prediction file".into(),
        })?;
        let header: Header = serde_json::from_str(header_line).map_err(|e| EnsembleError::Parse {
            line: 1,
            message: format!("bad header: {e}"),
        })?;
        let mut file = PredictionFile::new(header.model, header.verbs, header.nouns);
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let record: PredictionRecord =
                serde_json::from_str(line).map_err(|e| EnsembleError::Parse {
                    line: idx + 1,
                    message: e.to_string(),
                })?;
            file.records.push(record);
        }
        file.validate()?;
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<(), EnsembleError> {
        std::fs::write(path, self.to_jsonl())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, EnsembleError> {
        Self::from_jsonl(&std::fs::read_to_string(path)?)
    }
}

/// How per-model action scores are averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    #[default]
    ArithmeticMean,
    /// Weighted geometric mean, renormalized per sample.
    GeometricMean,
}

#[derive(Debug, Clone)]
pub struct EnsembleConfig {
    /// One non-negative weight per model; normalized to sum 1.
    pub weights: Vec<f64>,
    pub mask: Option<ValidityMask>,
    pub mode: AggregationMode,
}

/// Composes one record into V×N action scores: identity for action
/// records, verb⊗noun outer product for branch records, optional mask
/// refinement last.
pub fn compose_action_scores(
    record: &PredictionRecord,
    verbs: usize,
    nouns: usize,
    mask: Option<&ValidityMask>,
) -> Result<ScoreMatrix<f64>, EnsembleError> {
    let scores = match record {
        PredictionRecord::Branch { uid, verb_probs, noun_probs } => {
            if verb_probs.len() != verbs || noun_probs.len() != nouns {
                return Err(EnsembleError::VocabMismatch {
                    context: format!("record `{uid}` does not match {verbs}x{nouns}"),
                });
            }
            match mask {
                None => ScoreMatrix::outer(verb_probs, noun_probs),
                Some(m) => {
                    let t = TruthAssignment::new(verb_probs.clone(), noun_probs.clone());
                    refine_action_scores(m, &t)?.0
                }
            }
        }
        PredictionRecord::Action { uid, action_scores } => {
            if action_scores.len() != verbs || action_scores.iter().any(|r| r.len() != nouns) {
                return Err(EnsembleError::VocabMismatch {
                    context: format!("record `{uid}` does not match {verbs}x{nouns}"),
                });
            }
            let flat: Vec<f64> = action_scores.iter().flatten().copied().collect();
            let composed = ScoreMatrix::from_vec(flat, verbs, nouns);
            match mask {
                None => composed,
                Some(m) => masked_renormalized(&composed, m)?,
            }
        }
    };
    Ok(scores)
}

fn masked_renormalized(
    scores: &ScoreMatrix<f64>,
    mask: &ValidityMask,
) -> Result<ScoreMatrix<f64>, EnsembleError> {
    if mask.verbs() != scores.verbs() || mask.nouns() != scores.nouns() {
        return Err(EnsembleError::VocabMismatch {
            context: format!(
                "mask is {}x{}, scores are {}x{}",
                mask.verbs(),
                mask.nouns(),
                scores.verbs(),
                scores.nouns()
            ),
        });
    }
    let mut out = scores.clone();
    for i in 0..out.verbs() {
        for j in 0..out.nouns() {
            if !mask.is_valid(i, j) {
                *out.at_mut(i, j) = 0.0;
            }
        }
    }
    let mass = out.sum();
    if mass > 0.0 {
        out.scale(1.0 / mass);
        Ok(out)
    } else {
        Ok(scores.clone())
    }
}

/// Weighted mean of composed action scores across models, per uid.
///
/// Weight normalization makes the result invariant under uniform weight
/// rescaling; record order follows sorted uids, so permuting the input
/// files does not change the output.
pub fn aggregate(
    files: &[PredictionFile],
    cfg: &EnsembleConfig,
) -> Result<PredictionFile, EnsembleError> {
    if files.is_empty() {
        return Err(EnsembleError::Empty);
    }
    if cfg.weights.len() != files.len() {
        return Err(EnsembleError::BadWeights);
    }
    let weight_sum: f64 = cfg.weights.iter().sum();
    if cfg.weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) || weight_sum <= 0.0 {
        return Err(EnsembleError::BadWeights);
    }
    let (verbs, nouns) = (files[0].verbs, files[0].nouns);
    for f in files {
        if f.verbs != verbs || f.nouns != nouns {
            return Err(EnsembleError::VocabMismatch {
                context: format!(
                    "`{}` declares {}x{}, expected {verbs}x{nouns}",
                    f.model, f.verbs, f.nouns
                ),
            });
        }
        f.validate()?;
    }

    // uid -> per-model records; uid sets must coincide exactly
    let mut by_uid: BTreeMap<&str, Vec<&PredictionRecord>> = BTreeMap::new();
    for f in files {
        for r in &f.records {
            by_uid.entry(r.uid()).or_default().push(r);
        }
    }
    let mismatched: Vec<&str> = by_uid
        .iter()
        .filter(|(_, records)| records.len() != files.len())
        .map(|(uid, _)| *uid)
        .collect();
    if let Some(example) = mismatched.first() {
        return Err(EnsembleError::UidMismatch {
            missing_count: mismatched.len(),
            example: example.to_string(),
        });
    }

    let mode_weights: Vec<f64> = cfg.weights.iter().map(|w| w / weight_sum).collect();
    let model_names: Vec<&str> = files.iter().map(|f| f.model.as_str()).collect();
    let mut out = PredictionFile::new(
        format!("ensemble({})", model_names.join("+")),
        verbs,
        nouns,
    );
    for (uid, records) in by_uid {
        let mut acc = ScoreMatrix::zeros(verbs, nouns);
        match cfg.mode {
            AggregationMode::ArithmeticMean => {
                for (r, &w) in records.iter().zip(&mode_weights) {
                    let scores = compose_action_scores(r, verbs, nouns, cfg.mask.as_ref())?;
                    for i in 0..verbs {
                        for j in 0..nouns {
                            *acc.at_mut(i, j) += w * scores.at(i, j);
                        }
                    }
                }
            }
            AggregationMode::GeometricMean => {
                const FLOOR: f64 = 1e-30;
                for i in 0..verbs {
                    for j in 0..nouns {
                        *acc.at_mut(i, j) = 0.0;
                    }
                }
                let mut logs = vec![0.0f64; verbs * nouns];
                for (r, &w) in records.iter().zip(&mode_weights) {
                    let scores = compose_action_scores(r, verbs, nouns, cfg.mask.as_ref())?;
                    for i in 0..verbs {
                        for j in 0..nouns {
                            logs[i * nouns + j] += w * scores.at(i, j).max(FLOOR).ln();
                        }
                    }
                }
                let mut mass = 0.0;
                for i in 0..verbs {
                    for j in 0..nouns {
                        let e = logs[i * nouns + j].exp();
                        *acc.at_mut(i, j) = e;
                        mass += e;
                    }
                }
                acc.scale(1.0 / mass);
            }
        }
        out.push_action(uid.to_string(), &acc);
    }
    Ok(out)
}
