//! Confidence scores, class-adaptive thresholds and pseudo-label selection,
//! plus the supervised cross-entropy terms.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradcore::{Real, Tape, Tensor, Var};
use crate::graphdata::{Dataset, Graph};

/// Default base threshold τ.
pub const DEFAULT_TAU: Real = 0.95;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: usize,
    pub probs: Vec<Real>,
    pub confidence: Real,
    pub predicted: usize,
}

impl PredictionRecord {
    /// Argmax with ties going to the lowest class index.
    pub fn from_probs(id: usize, probs: Vec<Real>) -> Result<Self> {
        let (mut predicted, mut confidence) = (0, Real::NEG_INFINITY);
        for (c, &p) in probs.iter().enumerate() {
            if !p.is_finite() {
                return Err(Error::NonFinite(format!("probability for graph {id}")));
            }
            if p > confidence {
                predicted = c;
                confidence = p;
            }
        }
        if probs.is_empty() {
            return Err(Error::InvalidInput(format!("graph {id} has an empty probability vector")));
        }
        Ok(Self { id, probs, confidence, predicted })
    }
}

/// Anything that maps graphs to class probabilities from their causal part.
pub trait CausalPredictor {
    fn num_classes(&self) -> usize;
    /// Row `i` holds the class probabilities of `graphs[i]`.
    fn predict_proba(&self, graphs: &[&Graph]) -> Result<Tensor>;
}

pub fn score_target(ds: &Dataset, model: &impl CausalPredictor) -> Result<Vec<PredictionRecord>> {
    if ds.is_empty() {
        return Err(Error::InvalidInput(format!("dataset `{}` is empty", ds.name)));
    }
    let graphs: Vec<&Graph> = ds.graphs().iter().collect();
    let probs = model.predict_proba(&graphs)?;
    graphs
        .iter()
        .enumerate()
        .map(|(i, g)| PredictionRecord::from_probs(g.id, probs.row(i).to_vec()))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdTable {
    pub tau: Real,
    /// `ℳ_c`; `None` for classes with no predicted record.
    pub max_confidence: Vec<Option<Real>>,
    /// `τ_c = ℳ_c · τ`, or `τ` where `ℳ_c` is undefined.
    pub class_tau: Vec<Real>,
}

fn check_tau(tau: Real) -> Result<()> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::config("tau", format!("{tau} outside (0, 1]")));
    }
    Ok(())
}

pub fn build_thresholds(records: &[PredictionRecord], tau: Real, num_classes: usize) -> Result<ThresholdTable> {
    check_tau(tau)?;
    if records.is_empty() {
        return Err(Error::InvalidInput("cannot build thresholds from zero records".into()));
    }
    let mut max_confidence: Vec<Option<Real>> = vec![None; num_classes];
    for r in records {
        let slot = max_confidence
            .get_mut(r.predicted)
            .ok_or(Error::IndexOutOfRange { index: r.predicted, len: num_classes })?;
        *slot = Some(slot.map_or(r.confidence, |m| m.max(r.confidence)));
    }
    let class_tau = max_confidence.iter().map(|m| m.map_or(tau, |m| m * tau)).collect();
    Ok(ThresholdTable { tau, max_confidence, class_tau })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidentMember {
    pub id: usize,
    /// Position of the record in the scored sequence.
    pub index: usize,
    pub pseudo_label: usize,
    pub confidence: Real,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfidentSet {
    pub members: Vec<ConfidentMember>,
}

impl ConfidentSet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn count_class(&self, c: usize) -> usize {
        self.members.iter().filter(|m| m.pseudo_label == c).count()
    }

    /// Position → pseudo-label lookup over `n` scored records.
    pub fn pseudo_labels(&self, n: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; n];
        for m in &self.members {
            out[m.index] = Some(m.pseudo_label);
        }
        out
    }
}

fn select_by(records: &[PredictionRecord], threshold: impl Fn(usize) -> Real) -> ConfidentSet {
    ConfidentSet {
        members: records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.confidence > threshold(r.predicted))
            .map(|(index, r)| ConfidentMember {
                id: r.id,
                index,
                pseudo_label: r.predicted,
                confidence: r.confidence,
            })
            .collect(),
    }
}

/// Records with `s > τ_ŷ`, strictly.
pub fn select_confident(records: &[PredictionRecord], table: &ThresholdTable) -> Result<ConfidentSet> {
    if let Some(r) = records.iter().find(|r| r.predicted >= table.class_tau.len()) {
        return Err(Error::IndexOutOfRange { index: r.predicted, len: table.class_tau.len() });
    }
    Ok(select_by(records, |c| table.class_tau[c]))
}

/// Records with `s > τ` for a single class-independent threshold.
pub fn select_fixed(records: &[PredictionRecord], tau: Real) -> ConfidentSet {
    select_by(records, |_| tau)
}

/// Mean `−log p[y]` over rows of `logits`; every label must be present.
pub fn source_loss<'t>(logits: Var<'t>, labels: &[Option<usize>]) -> Result<Var<'t>> {
    let ys = labels
        .iter()
        .enumerate()
        .map(|(i, y)| y.ok_or_else(|| Error::InvalidInput(format!("source row {i} has no label"))))
        .collect::<Result<Vec<_>>>()?;
    logits.nll_log_softmax(&ys)?.mean_all()
}

/// Mean `−log p[ŷ]` over the selected `rows` of `logits`; 0 when empty.
pub fn target_loss<'t>(tape: &'t Tape, logits: Var<'t>, rows: &[usize], pseudo: &[usize]) -> Result<Var<'t>> {
    if rows.len() != pseudo.len() {
        return Err(Error::shape("target_loss", &[rows.len()], &[pseudo.len()]));
    }
    if rows.is_empty() {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    logits.gather_rows(rows)?.nll_log_softmax(pseudo)?.mean_all()
}

pub fn sup_loss<'t>(source: Var<'t>, target: Var<'t>) -> Result<Var<'t>> {
    source.add(target)
}

/// CSV snapshot: `id,predicted,confidence,admitted`.
pub fn confident_snapshot_csv(records: &[PredictionRecord], set: &ConfidentSet) -> String {
    let admitted = set.pseudo_labels(records.len());
    let mut out = String::from("id,predicted,confidence,admitted\n");
    for (r, a) in records.iter().zip(admitted) {
        let _ = writeln!(out, "{},{},{},{}", r.id, r.predicted, r.confidence, u8::from(a.is_some()));
    }
    out
}

pub fn write_confident_snapshot(path: impl AsRef<Path>, records: &[PredictionRecord], set: &ConfidentSet) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, confident_snapshot_csv(records, set)).map_err(|e| Error::io(path, e))
}
