//! Serialization-order analysis: for predictions that are exactly right as
//! sets, how often is the reaction order different from the annotation?

use std::collections::HashMap;
use std::fmt::Write as _;

use pathfinding::kuhn_munkres::kuhn_munkres_min;
use pathfinding::matrix::Matrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::idmap::{resolve, IdentifierMap};
use crate::lines::PredictionRecord;
use crate::matching::{match_relation, match_sets, MatchConfig, Thresholds};
use crate::model::DiagramAnnotation;
use crate::prediction::{parse_prediction, ParsedPrediction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct OrderOutcome {
    /// Hybrid precision and recall both 1 on a non-empty annotation.
    pub perfect: bool,
    pub reactions: usize,
    /// Matched predictions sitting at a different list position than
    /// their annotation partner. Zero unless `perfect`.
    pub misplacements: usize,
}

/// Minimum number of position disagreements over all perfect Hybrid
/// matchings (several exist when reactions repeat).
pub fn order_inconsistency(
    pred: &ParsedPrediction,
    gt: &DiagramAnnotation,
    map: &IdentifierMap,
    t: Thresholds,
) -> OrderOutcome {
    let preds = resolve(pred, map).reactions;
    let gts = gt.resolved_reactions();
    let n = gts.len();
    let cfg = MatchConfig::hybrid(t, pred.format);
    let tp = match_sets(&preds, &gts, &cfg).pairs.len();
    let perfect = n > 0 && preds.len() == n && tp == n;
    if !perfect {
        return OrderOutcome {
            perfect,
            reactions: n,
            misplacements: 0,
        };
    }
    let adj = match_relation(&preds, &gts, &cfg);
    // Non-edges cost more than any all-edge assignment can.
    let blocked = n as i64 + 1;
    let weights = Matrix::from_fn(n, n, |(p, g)| {
        if !adj[p].contains(&g) {
            blocked
        } else {
            i64::from(p != g)
        }
    });
    let (cost, _) = kuhn_munkres_min(&weights);
    OrderOutcome {
        perfect,
        reactions: n,
        misplacements: cost as usize,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct OrderReport {
    pub pairs: usize,
    pub perfect: usize,
    pub image_total: usize,
    pub image_errors: usize,
    pub image_rate: f64,
    pub reaction_total: usize,
    pub reaction_errors: usize,
    pub reaction_rate: f64,
    pub excluded_single_reaction_images: usize,
}

pub fn rate(errors: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        errors as f64 / total as f64
    }
}

/// Percentage with two decimals, e.g. `12.88`.
pub fn percent(r: f64) -> String {
    format!("{:.2}", r * 100.0)
}

/// Aggregates perfect samples only. Single-reaction images count toward
/// reaction-level totals but never toward image-level ones.
pub fn corpus_rates(outcomes: impl IntoIterator<Item = OrderOutcome>) -> OrderReport {
    let mut r = OrderReport::default();
    for o in outcomes {
        r.pairs += 1;
        if !o.perfect {
            continue;
        }
        r.perfect += 1;
        r.reaction_total += o.reactions;
        r.reaction_errors += o.misplacements;
        if o.reactions >= 2 {
            r.image_total += 1;
            r.image_errors += usize::from(o.misplacements > 0);
        } else {
            r.excluded_single_reaction_images += 1;
        }
    }
    r.image_rate = rate(r.image_errors, r.image_total);
    r.reaction_rate = rate(r.reaction_errors, r.reaction_total);
    r
}

/// Pairs predictions with annotations by `image_id`. Predictions that do
/// not parse, or whose image is unknown, count as non-perfect pairs.
pub fn analyze_records(
    gts: &[DiagramAnnotation],
    preds: &[PredictionRecord],
    maps: &HashMap<String, IdentifierMap>,
    t: Thresholds,
) -> OrderReport {
    let by_id: HashMap<&str, &DiagramAnnotation> = gts.iter().map(|g| (g.image_id.as_str(), g)).collect();
    let outcomes: Vec<OrderOutcome> = preds
        .par_iter()
        .map(|p| {
            let not_perfect = OrderOutcome {
                perfect: false,
                reactions: 0,
                misplacements: 0,
            };
            let Some(gt) = by_id.get(p.image_id.as_str()) else { return not_perfect };
            let Ok(parsed) = parse_prediction(&p.raw, p.format) else { return not_perfect };
            match maps.get(&p.image_id) {
                Some(m) => order_inconsistency(&parsed, gt, m, t),
                None => order_inconsistency(&parsed, gt, &IdentifierMap::from_annotation(gt), t),
            }
        })
        .collect();
    corpus_rates(outcomes)
}

impl OrderReport {
    /// Total / Errors / Rate (%) at image and reaction level.
    pub fn to_table(&self, label: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<10} | {:>8} {:>8} {:>8} | {:>8} {:>8} {:>8}",
            "", "img tot", "img err", "img %", "rxn tot", "rxn err", "rxn %"
        );
        let _ = writeln!(
            s,
            "{:<10} | {:>8} {:>8} {:>8} | {:>8} {:>8} {:>8}",
            label,
            self.image_total,
            self.image_errors,
            percent(self.image_rate),
            self.reaction_total,
            self.reaction_errors,
            percent(self.reaction_rate)
        );
        let _ = writeln!(
            s,
            "pairs: {}  perfect: {}  single-reaction images (image level excluded): {}",
            self.pairs, self.perfect, self.excluded_single_reaction_images
        );
        s
    }
}
