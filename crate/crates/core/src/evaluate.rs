//! Corpus-level Precision/Recall/F1 over a ground-truth file and a
//! prediction file, with a per-diagram-type breakdown.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::idmap::{resolve, IdentifierMap};
use crate::lines::PredictionRecord;
use crate::matching::{match_sets, Counts, MatchConfig, Prf1, Thresholds};
use crate::model::{DiagramAnnotation, DiagramType};
use crate::prediction::{parse_prediction, OutputFormat, ParseFailure};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("duplicate image_id {0:?} in ground truth")]
    DuplicateGroundTruth(String),
    #[error("duplicate image_id {0:?} in predictions")]
    DuplicatePrediction(String),
    #[error("prediction for image_id {0:?} has no ground truth")]
    UnknownImage(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageResult {
    pub image_id: String,
    pub diagram_type: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub format: Option<OutputFormat>,
    pub predicted: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<ParseFailure>,
    pub soft: Counts,
    pub hybrid: Counts,
    pub unresolved: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TypeRow {
    pub images: usize,
    pub soft: Prf1,
    pub hybrid: Prf1,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchReport {
    pub iou_threshold: f64,
    pub ned_threshold: f64,
    pub images: usize,
    pub predicted_images: usize,
    pub parse_failures: usize,
    pub soft: Prf1,
    pub hybrid: Prf1,
    pub by_type: BTreeMap<&'static str, TypeRow>,
    pub per_image: Vec<ImageResult>,
}

/// Scores one image. `pred` is `None` when the prediction file has no line
/// for it, which counts every ground-truth reaction as missed.
pub fn evaluate_image(
    gt: &DiagramAnnotation,
    pred: Option<&PredictionRecord>,
    map: Option<&IdentifierMap>,
    t: Thresholds,
) -> ImageResult {
    let missed = Counts {
        tp: 0,
        fp: 0,
        fn_: gt.reactions.len() as u64,
    };
    let mut out = ImageResult {
        image_id: gt.image_id.clone(),
        diagram_type: DiagramType::bucket(gt.diagram_type),
        format: pred.map(|p| p.format),
        predicted: pred.is_some(),
        failure: None,
        soft: missed,
        hybrid: missed,
        unresolved: 0,
    };
    let Some(pred) = pred else { return out };
    let parsed = match parse_prediction(&pred.raw, pred.format) {
        Ok(p) => p,
        Err(f) => {
            out.failure = Some(f);
            return out;
        }
    };
    let derived;
    let map = match map {
        Some(m) => m,
        None => {
            derived = IdentifierMap::from_annotation(gt);
            &derived
        }
    };
    let resolution = resolve(&parsed, map);
    let gts = gt.resolved_reactions();
    out.soft = match_sets(&resolution.reactions, &gts, &MatchConfig::soft(t)).counts();
    out.hybrid = match_sets(&resolution.reactions, &gts, &MatchConfig::hybrid(t, parsed.format)).counts();
    out.unresolved = resolution.unresolved.len();
    out
}

/// Micro-averaged Soft and Hybrid scores. `maps` overrides the identifier
/// map derived from each annotation.
pub fn evaluate_corpus(
    gts: &[DiagramAnnotation],
    preds: &[PredictionRecord],
    maps: &HashMap<String, IdentifierMap>,
    t: Thresholds,
) -> Result<MatchReport, EvalError> {
    let mut gt_ids = HashMap::with_capacity(gts.len());
    for g in gts {
        if gt_ids.insert(g.image_id.as_str(), ()).is_some() {
            return Err(EvalError::DuplicateGroundTruth(g.image_id.clone()));
        }
    }
    let mut by_image: HashMap<&str, &PredictionRecord> = HashMap::with_capacity(preds.len());
    for p in preds {
        if !gt_ids.contains_key(p.image_id.as_str()) {
            return Err(EvalError::UnknownImage(p.image_id.clone()));
        }
        if by_image.insert(p.image_id.as_str(), p).is_some() {
            return Err(EvalError::DuplicatePrediction(p.image_id.clone()));
        }
    }

    let per_image: Vec<ImageResult> = gts
        .par_iter()
        .map(|g| {
            let id = g.image_id.as_str();
            evaluate_image(g, by_image.get(id).copied(), maps.get(id), t)
        })
        .collect();

    let (mut soft, mut hybrid) = (Counts::default(), Counts::default());
    let mut types: BTreeMap<&'static str, (usize, Counts, Counts)> = BTreeMap::new();
    for r in &per_image {
        soft += r.soft;
        hybrid += r.hybrid;
        let e = types.entry(r.diagram_type).or_default();
        e.0 += 1;
        e.1 += r.soft;
        e.2 += r.hybrid;
    }
    Ok(MatchReport {
        iou_threshold: t.iou,
        ned_threshold: t.ned,
        images: per_image.len(),
        predicted_images: per_image.iter().filter(|r| r.predicted).count(),
        parse_failures: per_image.iter().filter(|r| r.failure.is_some()).count(),
        soft: Prf1::from_counts(soft),
        hybrid: Prf1::from_counts(hybrid),
        by_type: types
            .into_iter()
            .map(|(k, (n, s, h))| {
                let row = TypeRow {
                    images: n,
                    soft: Prf1::from_counts(s),
                    hybrid: Prf1::from_counts(h),
                };
                (k, row)
            })
            .collect(),
        per_image,
    })
}

impl MatchReport {
    /// Plain-text table: one row per diagram type plus an overall row,
    /// with P/R/F1 (percent) under each criterion.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "images: {}  predicted: {}  parse failures: {}  iou > {}  ned <= {}",
            self.images, self.predicted_images, self.parse_failures, self.iou_threshold, self.ned_threshold
        );
        let _ = writeln!(
            s,
            "{:<12} {:>6} | {:>7} {:>7} {:>7} | {:>7} {:>7} {:>7}",
            "type", "images", "soft P", "soft R", "soft F1", "hyb P", "hyb R", "hyb F1"
        );
        let row = |s: &mut String, name: &str, n: usize, a: &Prf1, b: &Prf1| {
            let pct = |x: f64| format!("{:.2}", x * 100.0);
            let _ = writeln!(
                s,
                "{:<12} {:>6} | {:>7} {:>7} {:>7} | {:>7} {:>7} {:>7}",
                name,
                n,
                pct(a.precision),
                pct(a.recall),
                pct(a.f1),
                pct(b.precision),
                pct(b.recall),
                pct(b.f1)
            );
        };
        for (name, r) in &self.by_type {
            row(&mut s, name, r.images, &r.soft, &r.hybrid);
        }
        row(&mut s, "overall", self.images, &self.soft, &self.hybrid);
        s
    }
}
