//! Per-sample verifiable reward.
//!
//! The reward of a raw model output is a weighted average of its per-sample
//! Soft-match F1 and Hybrid-match F1 against the ground truth. Output that
//! does not parse earns exactly zero. Because both F1 values come from
//! maximum set matchings, the reward is invariant to the order in which
//! reactions, and components within a role, are written.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::idmap::{resolve, IdentifierMap, UnresolvedHandle};
use crate::matching::{match_sets, Counts, MatchConfig, Prf1, Thresholds};
use crate::model::{DiagramAnnotation, ResolvedReaction};
use crate::prediction::{parse_prediction, OutputFormat, ParseFailure, ParsedPrediction};

/// Soft:Hybrid weighting plus per-criterion thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardSpec {
    pub soft_weight: f64,
    pub hybrid_weight: f64,
    pub soft: Thresholds,
    pub hybrid: Thresholds,
}

impl Default for RewardSpec {
    fn default() -> Self {
        RewardSpec::balanced()
    }
}

impl RewardSpec {
    /// Weights normalized to sum to one. Both must be finite and
    /// non-negative, and not both zero.
    pub fn from_ratio(soft: f64, hybrid: f64) -> Result<Self, String> {
        if !(soft.is_finite() && hybrid.is_finite()) || soft < 0.0 || hybrid < 0.0 {
            return Err(format!("invalid reward ratio {soft}:{hybrid}"));
        }
        let total = soft + hybrid;
        if total <= 0.0 {
            return Err("reward ratio must have a positive weight".into());
        }
        Ok(RewardSpec {
            soft_weight: soft / total,
            hybrid_weight: hybrid / total,
            soft: Thresholds::default(),
            hybrid: Thresholds::default(),
        })
    }

    /// Equal weighting of the two criteria (1:1).
    pub fn balanced() -> Self {
        RewardSpec::from_ratio(1.0, 1.0).expect("1:1 is a valid ratio")
    }

    pub fn soft_only() -> Self {
        RewardSpec::from_ratio(1.0, 0.0).expect("1:0 is a valid ratio")
    }

    pub fn hybrid_only() -> Self {
        RewardSpec::from_ratio(0.0, 1.0).expect("0:1 is a valid ratio")
    }

    pub fn with_thresholds(mut self, t: Thresholds) -> Self {
        self.soft = t;
        self.hybrid = t;
        self
    }

    pub fn ratio_string(&self) -> String {
        format!("{}:{}", self.soft_weight, self.hybrid_weight)
    }
}

impl FromStr for RewardSpec {
    type Err = String;

    /// Parses `"<soft>:<hybrid>"`, e.g. `"1:1"` or `"0.3:0.7"`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (a, b) = s
            .split_once(':')
            .ok_or_else(|| format!("ratio {s:?} must look like <soft>:<hybrid>"))?;
        let parse = |x: &str| {
            x.trim()
                .parse::<f64>()
                .map_err(|_| format!("ratio component {x:?} is not a number"))
        };
        RewardSpec::from_ratio(parse(a)?, parse(b)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RewardResult {
    pub reward: f64,
    pub soft_component: f64,
    pub hybrid_component: f64,
    pub parse_ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<ParseFailure>,
    pub soft: Counts,
    pub hybrid: Counts,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub unresolved: Vec<UnresolvedHandle>,
}

impl RewardResult {
    pub fn invalid(failure: ParseFailure, n_gt: usize) -> Self {
        let missed = Counts {
            tp: 0,
            fp: 0,
            fn_: n_gt as u64,
        };
        RewardResult {
            reward: 0.0,
            soft_component: 0.0,
            hybrid_component: 0.0,
            parse_ok: false,
            failure: Some(failure),
            soft: missed,
            hybrid: missed,
            unresolved: Vec::new(),
        }
    }
}

/// Per-sample F1; an empty prediction against an empty ground truth is a
/// perfect score.
pub fn sample_f1(c: Counts) -> f64 {
    if c.tp + c.fp + c.fn_ == 0 {
        1.0
    } else {
        Prf1::from_counts(c).f1
    }
}

/// Scores an already box-resolved prediction.
pub fn score_resolved(
    preds: &[ResolvedReaction],
    gts: &[ResolvedReaction],
    format: OutputFormat,
    spec: &RewardSpec,
) -> (f64, f64, f64, Counts, Counts) {
    let soft = match_sets(preds, gts, &MatchConfig::soft(spec.soft)).counts();
    let hybrid = match_sets(preds, gts, &MatchConfig::hybrid(spec.hybrid, format)).counts();
    let (rs, rh) = (sample_f1(soft), sample_f1(hybrid));
    let reward = (spec.soft_weight * rs + spec.hybrid_weight * rh).clamp(0.0, 1.0);
    (reward, rs, rh, soft, hybrid)
}

/// Scores a parsed prediction against an annotation.
pub fn score_prediction(
    pred: &ParsedPrediction,
    gt: &DiagramAnnotation,
    map: &IdentifierMap,
    spec: &RewardSpec,
) -> RewardResult {
    let resolution = resolve(pred, map);
    let gts = gt.resolved_reactions();
    let (reward, rs, rh, soft, hybrid) = score_resolved(&resolution.reactions, &gts, pred.format, spec);
    RewardResult {
        reward,
        soft_component: rs,
        hybrid_component: rh,
        parse_ok: true,
        failure: None,
        soft,
        hybrid,
        unresolved: resolution.unresolved,
    }
}

/// Reward of one raw rollout. Never fails: unparseable output scores 0 and
/// unresolvable handles leave their reaction unmatched.
pub fn sample_reward(
    raw: &str,
    gt: &DiagramAnnotation,
    map: &IdentifierMap,
    format: OutputFormat,
    spec: &RewardSpec,
) -> RewardResult {
    match parse_prediction(raw, format) {
        Ok(pred) => score_prediction(&pred, gt, map, spec),
        Err(f) => RewardResult::invalid(f, gt.reactions.len()),
    }
}
