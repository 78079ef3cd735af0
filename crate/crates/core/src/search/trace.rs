//! Per-iteration records and their flat line form.

use serde::{Deserialize, Serialize};

use crate::backend::ParseFailure;
use crate::memory::ScoredProgram;
use crate::prompt::InstructionVariant;
use crate::sandbox::DisqualifyReason;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoRef {
    pub identity: String,
    pub version: usize,
    pub score: f64,
    pub island: Option<usize>,
}

impl From<&ScoredProgram> for DemoRef {
    fn from(p: &ScoredProgram) -> Self {
        Self {
            identity: p.program.identity(),
            version: p.program.version,
            score: p.score,
            island: p.program.provenance.island,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CandidateOutcome {
    ParseFailure { reason: ParseFailure },
    Disqualified { source_hash: String, reason: DisqualifyReason, detail: String },
    Valid { source_hash: String, score: f64, raw_metric: f64, admitted: bool },
}

impl CandidateOutcome {
    pub fn score(&self) -> Option<f64> {
        match self {
            CandidateOutcome::Valid { score, .. } => Some(*score),
            _ => None,
        }
    }

    pub fn source_hash(&self) -> Option<&str> {
        match self {
            CandidateOutcome::ParseFailure { .. } => None,
            CandidateOutcome::Disqualified { source_hash, .. } | CandidateOutcome::Valid { source_hash, .. } => {
                Some(source_hash)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    /// Position within the batch.
    pub index: usize,
    pub request_id: String,
    pub outcome: CandidateOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub island: usize,
    pub variant: InstructionVariant,
    pub demonstrations: Vec<DemoRef>,
    pub prompt: String,
    /// Completions requested from the backend.
    pub requested: usize,
    pub candidates: Vec<CandidateRecord>,
    /// Best score after this iteration.
    pub best_score: f64,
}

/// One line of `trace.jsonl`. Wall-clock times are kept out so reruns
/// produce identical files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceLine {
    pub split: usize,
    pub iteration: usize,
    pub island: usize,
    pub index: usize,
    pub request_id: String,
    #[serde(flatten)]
    pub outcome: CandidateOutcome,
    pub best_score: f64,
}

pub(super) fn lines(trace: &[IterationRecord], split: usize) -> Vec<TraceLine> {
    trace
        .iter()
        .flat_map(|it| {
            it.candidates.iter().map(move |c| TraceLine {
                split,
                iteration: it.iteration,
                island: it.island,
                index: c.index,
                request_id: c.request_id.clone(),
                outcome: c.outcome.clone(),
                best_score: it.best_score,
            })
        })
        .collect()
}
