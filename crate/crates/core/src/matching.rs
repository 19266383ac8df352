//! Reaction-level matching between predicted and ground-truth reaction sets.
//!
//! Two predicates decide whether a predicted reaction is a true positive for
//! a ground-truth reaction:
//!
//! * **Soft**: text is ignored and condition molecules are merged into the
//!   reactants; every molecule must pair one-to-one with IoU above the
//!   threshold, within the merged reactant group and within the products.
//! * **Hybrid**: roles are compared separately. For identifier/index outputs
//!   molecules pair by IoU and text pairs by normalized edit distance; for
//!   box-regression outputs only boxes are compared.
//!
//! Pairings, both inside a reaction and between reaction sets, are maximum
//! bipartite matchings, so results do not depend on list order.

use serde::{Deserialize, Serialize};

use crate::geometry::{iou, BBox};
use crate::model::{ResolvedComponent, ResolvedReaction, Role};
use crate::prediction::OutputFormat;
use crate::text::normalized_edit_distance;

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;
pub const DEFAULT_NED_THRESHOLD: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "criterion", content = "format")]
pub enum Criterion {
    Soft,
    /// Hybrid semantics depend on the output strategy being scored.
    Hybrid(OutputFormat),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub iou: f64,
    pub ned: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            iou: DEFAULT_IOU_THRESHOLD,
            ned: DEFAULT_NED_THRESHOLD,
        }
    }
}

impl Thresholds {
    /// Requires `0 < iou <= 1` and `0 <= ned < 1`.
    pub fn new(iou: f64, ned: f64) -> Result<Self, String> {
        if !(iou > 0.0 && iou <= 1.0) {
            return Err(format!("iou threshold {iou} outside (0, 1]"));
        }
        if !(0.0..1.0).contains(&ned) {
            return Err(format!("edit-distance threshold {ned} outside [0, 1)"));
        }
        Ok(Thresholds { iou, ned })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchConfig {
    pub thresholds: Thresholds,
    pub criterion: Criterion,
}

impl MatchConfig {
    pub fn soft(thresholds: Thresholds) -> Self {
        MatchConfig {
            thresholds,
            criterion: Criterion::Soft,
        }
    }

    pub fn hybrid(thresholds: Thresholds, format: OutputFormat) -> Self {
        MatchConfig {
            thresholds,
            criterion: Criterion::Hybrid(format),
        }
    }
}

/// Maximum-cardinality bipartite matching by augmenting paths.
///
/// `adj[l]` lists the right vertices adjacent to left vertex `l`. Returns,
/// for each left vertex, its matched right vertex.
pub fn maximum_matching(adj: &[Vec<usize>], n_right: usize) -> Vec<Option<usize>> {
    fn augment(
        l: usize,
        adj: &[Vec<usize>],
        seen: &mut [bool],
        owner: &mut [Option<usize>],
    ) -> bool {
        for &r in &adj[l] {
            if seen[r] {
                continue;
            }
            seen[r] = true;
            if owner[r].map_or(true, |o| augment(o, adj, seen, owner)) {
                owner[r] = Some(l);
                return true;
            }
        }
        false
    }

    let mut owner: Vec<Option<usize>> = vec![None; n_right];
    let mut seen = vec![false; n_right];
    for l in 0..adj.len() {
        if adj[l].is_empty() {
            continue;
        }
        seen.iter_mut().for_each(|s| *s = false);
        augment(l, adj, &mut seen, &mut owner);
    }
    let mut by_left = vec![None; adj.len()];
    for (r, o) in owner.iter().enumerate() {
        if let Some(l) = o {
            by_left[*l] = Some(r);
        }
    }
    by_left
}

/// True iff the two lists have equal length and a perfect pairing exists
/// under `related`.
fn perfect_pairing<A, B>(left: &[A], right: &[B], related: impl Fn(&A, &B) -> bool) -> bool {
    if left.len() != right.len() {
        return false;
    }
    if left.is_empty() {
        return true;
    }
    let adj: Vec<Vec<usize>> = left
        .iter()
        .map(|a| {
            right
                .iter()
                .enumerate()
                .filter(|(_, b)| related(a, b))
                .map(|(j, _)| j)
                .collect()
        })
        .collect();
    if adj.iter().any(Vec::is_empty) {
        return false;
    }
    maximum_matching(&adj, right.len())
        .iter()
        .all(Option::is_some)
}

fn molecules<'a>(comps: impl IntoIterator<Item = &'a ResolvedComponent>) -> Vec<Option<BBox>> {
    comps
        .into_iter()
        .filter_map(|c| match c {
            ResolvedComponent::Molecule(b) => Some(*b),
            ResolvedComponent::Text(_) => None,
        })
        .collect()
}

fn texts(comps: &[ResolvedComponent]) -> Vec<&str> {
    comps
        .iter()
        .filter_map(|c| match c {
            ResolvedComponent::Text(t) => Some(t.as_str()),
            ResolvedComponent::Molecule(_) => None,
        })
        .collect()
}

fn boxes_pair(pred: &[Option<BBox>], gt: &[Option<BBox>], iou_threshold: f64) -> bool {
    perfect_pairing(pred, gt, |p, g| match (p, g) {
        (Some(p), Some(g)) => iou(p, g) > iou_threshold,
        _ => false,
    })
}

/// Soft match: text dropped, conditions merged into reactants.
pub fn reaction_matches_soft(pred: &ResolvedReaction, gt: &ResolvedReaction, t: &Thresholds) -> bool {
    let merged = |r: &ResolvedReaction| molecules(r.reactants.iter().chain(r.conditions.iter()));
    boxes_pair(&molecules(&pred.products), &molecules(&gt.products), t.iou)
        && boxes_pair(&merged(pred), &merged(gt), t.iou)
}

/// Hybrid match: roles kept apart. Text is compared by edit distance for
/// identifier/index outputs and ignored for box-regression outputs.
pub fn reaction_matches_hybrid(
    pred: &ResolvedReaction,
    gt: &ResolvedReaction,
    format: OutputFormat,
    t: &Thresholds,
) -> bool {
    Role::ALL.into_iter().all(|role| {
        let (p, g) = (pred.role(role), gt.role(role));
        if !boxes_pair(&molecules(p), &molecules(g), t.iou) {
            return false;
        }
        match format {
            OutputFormat::Bros => true,
            OutputFormat::Bivp | OutputFormat::Idtvp => {
                perfect_pairing(&texts(p), &texts(g), |a, b| {
                    normalized_edit_distance(a, b) <= t.ned
                })
            }
        }
    })
}

pub fn reaction_matches(pred: &ResolvedReaction, gt: &ResolvedReaction, cfg: &MatchConfig) -> bool {
    match cfg.criterion {
        Criterion::Soft => reaction_matches_soft(pred, gt, &cfg.thresholds),
        Criterion::Hybrid(f) => reaction_matches_hybrid(pred, gt, f, &cfg.thresholds),
    }
}

/// One-to-one partial matching between predictions and ground truths.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct Assignment {
    /// `(prediction index, ground-truth index)`, sorted by prediction index.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_pred: Vec<usize>,
    pub unmatched_gt: Vec<usize>,
}

impl Assignment {
    pub fn counts(&self) -> Counts {
        Counts {
            tp: self.pairs.len() as u64,
            fp: self.unmatched_pred.len() as u64,
            fn_: self.unmatched_gt.len() as u64,
        }
    }
}

/// Boolean match relation between every prediction and ground truth.
pub fn match_relation(
    preds: &[ResolvedReaction],
    gts: &[ResolvedReaction],
    cfg: &MatchConfig,
) -> Vec<Vec<usize>> {
    preds
        .iter()
        .map(|p| {
            gts.iter()
                .enumerate()
                .filter(|(_, g)| reaction_matches(p, g, cfg))
                .map(|(j, _)| j)
                .collect()
        })
        .collect()
}

/// Maximum-cardinality assignment of predictions to ground truths under the
/// configured predicate. Each reaction is used at most once, so repeated
/// copies of a correct prediction count as false positives.
pub fn match_sets(preds: &[ResolvedReaction], gts: &[ResolvedReaction], cfg: &MatchConfig) -> Assignment {
    let adj = match_relation(preds, gts, cfg);
    assignment_from(&maximum_matching(&adj, gts.len()), gts.len())
}

pub(crate) fn assignment_from(by_pred: &[Option<usize>], n_gt: usize) -> Assignment {
    let mut out = Assignment::default();
    let mut gt_used = vec![false; n_gt];
    for (p, m) in by_pred.iter().enumerate() {
        match m {
            Some(g) => {
                out.pairs.push((p, *g));
                gt_used[*g] = true;
            }
            None => out.unmatched_pred.push(p),
        }
    }
    out.unmatched_gt = (0..n_gt).filter(|&g| !gt_used[g]).collect();
    out
}

/// Raw true-positive / false-positive / false-negative counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl std::ops::AddAssign for Counts {
    fn add_assign(&mut self, o: Counts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf1 {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf1 {
    /// Ratios with zero-denominator conventions (all 0). F1 is computed as
    /// `2tp / (2tp + fp + fn)`, the harmonic mean of precision and recall.
    pub fn from_counts(c: Counts) -> Self {
        let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        Prf1 {
            tp: c.tp,
            fp: c.fp,
            fn_: c.fn_,
            precision: ratio(c.tp, c.tp + c.fp),
            recall: ratio(c.tp, c.tp + c.fn_),
            f1: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
        }
    }
}
