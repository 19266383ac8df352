//! Joining diagram reactions with text-extracted records through the
//! author's molecule identifiers, then correcting diagram text and
//! attaching text-only attributes.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::lines::PredictionRecord;
use crate::model::{Component, MoleculeRef, Reaction, Role};
use crate::prediction::{parse_prediction, ParseFailure};
use crate::refine::StandardReaction;
use crate::text::normalized_edit_distance;

pub const DEFAULT_NED_GATE: f64 = 0.3;

/// A reaction parsed from one diagram, still keyed by identifier handles.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VisualReaction {
    pub image_id: String,
    pub index: usize,
    pub reaction: Reaction,
}

/// Parses each prediction line and numbers its reactions. Lines that do
/// not parse are returned separately.
pub fn visual_from_predictions(records: &[PredictionRecord]) -> (Vec<VisualReaction>, Vec<(String, ParseFailure)>) {
    let mut out = Vec::new();
    let mut failed = Vec::new();
    for r in records {
        match parse_prediction(&r.raw, r.format) {
            Ok(p) => out.extend(p.reactions.into_iter().enumerate().map(|(index, reaction)| VisualReaction {
                image_id: r.image_id.clone(),
                index,
                reaction,
            })),
            Err(f) => failed.push((r.image_id.clone(), f)),
        }
    }
    (out, failed)
}

fn handle_ids<'a>(comps: impl IntoIterator<Item = &'a Component>) -> BTreeSet<String> {
    comps
        .into_iter()
        .filter_map(|c| match c {
            Component::Molecule(MoleculeRef::Identifier(s)) => Some(s.trim().to_string()),
            _ => None,
        })
        .collect()
}

/// Identifiers naming the record's products: its own `id` plus every
/// product flagged as an identifier.
pub fn textual_product_ids(r: &StandardReaction) -> BTreeSet<String> {
    let mut ids: BTreeSet<String> = r
        .procedure
        .products
        .iter()
        .filter(|p| p.is_identifier == Some(true))
        .filter_map(|p| p.content.as_deref())
        .map(|s| s.trim().to_string())
        .collect();
    if let Some(id) = r.id.as_deref() {
        ids.insert(id.trim().to_string());
    }
    ids.retain(|s| !s.is_empty());
    ids
}

/// Identifier-flagged substances listed as reactants.
pub fn textual_reactant_ids(r: &StandardReaction) -> BTreeSet<String> {
    r.procedure
        .reactants
        .iter()
        .filter_map(|&i| r.procedure.substance(i))
        .filter(|s| s.is_identifier)
        .map(|s| s.content.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Refinement {
    pub role: Role,
    pub position: usize,
    pub original: String,
    pub replacement: String,
    pub ned: f64,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LowConfidence {
    pub role: Role,
    pub position: usize,
    pub text: String,
    pub closest: String,
    pub ned: f64,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Enrichment {
    pub value: String,
    /// `stage_id` of the stage, or `products[i]` for product attributes.
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JoinedReaction {
    pub image_id: String,
    pub reaction_index: usize,
    pub visual: Reaction,
    /// Position of the joined record in the textual input.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub textual: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub textual_id: Option<String>,
    pub refinements: Vec<Refinement>,
    pub low_confidence: Vec<LowConfidence>,
    pub enrichments: BTreeMap<String, Vec<Enrichment>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VisualOrphan {
    pub image_id: String,
    pub reaction_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TextualOrphan {
    pub position: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Orphans {
    pub visual: Vec<VisualOrphan>,
    pub textual: Vec<TextualOrphan>,
}

/// Textual record for one visual reaction: among records sharing a
/// product identifier, the one sharing the most reactant identifiers,
/// earliest first on ties.
pub fn best_match(visual: &Reaction, textual: &[StandardReaction]) -> Option<usize> {
    let products = handle_ids(&visual.products);
    let reactants = handle_ids(visual.reactants.iter().chain(&visual.conditions));
    let mut best: Option<(usize, usize)> = None;
    for (i, t) in textual.iter().enumerate() {
        if textual_product_ids(t).is_disjoint(&products) {
            continue;
        }
        let overlap = textual_reactant_ids(t).intersection(&reactants).count();
        if best.map_or(true, |(_, o)| overlap > o) {
            best = Some((i, overlap));
        }
    }
    best.map(|(i, _)| i)
}

/// Pairs every visual reaction with at most one textual record. Each
/// visual reaction is judged on its own, so one record may serve several.
pub fn join(visual: &[VisualReaction], textual: &[StandardReaction]) -> (Vec<JoinedReaction>, Orphans) {
    let mut used = vec![false; textual.len()];
    let mut orphans = Orphans::default();
    let joined = visual
        .iter()
        .map(|v| {
            let t = best_match(&v.reaction, textual);
            match t {
                Some(i) => used[i] = true,
                None => orphans.visual.push(VisualOrphan {
                    image_id: v.image_id.clone(),
                    reaction_index: v.index,
                }),
            }
            JoinedReaction {
                image_id: v.image_id.clone(),
                reaction_index: v.index,
                visual: v.reaction.clone(),
                textual: t,
                textual_id: t.and_then(|i| textual[i].id.clone()),
                refinements: Vec::new(),
                low_confidence: Vec::new(),
                enrichments: BTreeMap::new(),
            }
        })
        .collect();
    orphans.textual = used
        .iter()
        .enumerate()
        .filter(|(_, &u)| !u)
        .map(|(position, _)| TextualOrphan {
            position,
            id: textual[position].id.clone(),
        })
        .collect();
    (joined, orphans)
}

/// Candidate strings for text correction: stage condition fields (workup
/// excluded) in stage order, then substance contents.
pub fn text_candidates(t: &StandardReaction) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for (i, st) in t.procedure.stages.iter().enumerate() {
        let sid = st.stage_id.clone().unwrap_or_else(|| format!("stages[{i}]"));
        for (name, v) in st.condition_fields() {
            if let Some(v) = v.filter(|v| !v.trim().is_empty()) {
                out.push((v.to_string(), format!("{sid}.{name}")));
            }
        }
    }
    for s in &t.procedure.substances {
        if !s.content.trim().is_empty() {
            out.push((s.content.clone(), format!("substances[{}].content", s.idx)));
        }
    }
    out
}

/// Replaces each visual text component with its closest textual
/// candidate when the distance is positive and within `gate`; farther
/// matches are only flagged.
pub fn refine_text(j: &mut JoinedReaction, textual: &[StandardReaction], gate: f64) {
    let Some(t) = j.textual.map(|i| &textual[i]) else { return };
    let candidates = text_candidates(t);
    if candidates.is_empty() {
        return;
    }
    for role in Role::ALL {
        for (position, c) in j.visual.role_mut(role).iter_mut().enumerate() {
            let Component::Text(text) = c else { continue };
            let mut best: Option<(f64, &(String, String))> = None;
            for cand in &candidates {
                let d = normalized_edit_distance(text, &cand.0);
                if best.map_or(true, |(bd, _)| d < bd) {
                    best = Some((d, cand));
                }
            }
            let Some((ned, (value, source))) = best else { continue };
            if ned == 0.0 {
                continue;
            }
            if ned <= gate {
                j.refinements.push(Refinement {
                    role,
                    position,
                    original: text.clone(),
                    replacement: value.clone(),
                    ned,
                    source: source.clone(),
                });
                *text = value.clone();
            } else {
                j.low_confidence.push(LowConfidence {
                    role,
                    position,
                    text: text.clone(),
                    closest: value.clone(),
                    ned,
                    source: source.clone(),
                });
            }
        }
    }
}

/// Attaches product and stage attributes the diagram does not show.
/// Values equal to a visual text component are skipped.
pub fn enrich(j: &mut JoinedReaction, textual: &[StandardReaction]) {
    let Some(t) = j.textual.map(|i| &textual[i]) else { return };
    let shown: BTreeSet<String> = j
        .visual
        .components()
        .filter_map(|(_, c)| match c {
            Component::Text(s) => Some(crate::text::normalize_text(s)),
            _ => None,
        })
        .collect();
    let mut add = |key: &str, value: Option<&str>, source: String| {
        let Some(v) = value.filter(|v| !v.trim().is_empty()) else { return };
        if shown.contains(&crate::text::normalize_text(v)) {
            return;
        }
        j.enrichments.entry(key.to_string()).or_default().push(Enrichment {
            value: v.to_string(),
            source,
        });
    };

    let visual_products = handle_ids(&j.visual.products);
    let products = &t.procedure.products;
    let chosen = products
        .iter()
        .position(|p| p.is_identifier == Some(true) && p.content.as_deref().is_some_and(|c| visual_products.contains(c.trim())))
        .or(if products.is_empty() { None } else { Some(0) });
    if let Some(pi) = chosen {
        let p = &products[pi];
        let src = format!("products[{pi}]");
        add("yield_ratio", p.yield_ratio.as_deref(), src.clone());
        add("production", p.production.as_deref(), src.clone());
        add("appearance", p.appearance.as_deref(), src);
    }
    for (i, st) in t.procedure.stages.iter().enumerate() {
        let sid = st.stage_id.clone().unwrap_or_else(|| format!("stages[{i}]"));
        add("time", st.time.as_deref(), sid.clone());
        add("temperature", st.temperature.as_deref(), sid.clone());
        add("atmosphere", st.atmosphere.as_deref(), sid.clone());
        add("pressure", st.pressure.as_deref(), sid);
    }
}

/// Join, then refine and enrich every joined pair.
pub fn join_all(
    visual: &[VisualReaction],
    textual: &[StandardReaction],
    gate: f64,
) -> (Vec<JoinedReaction>, Orphans) {
    let (mut joined, orphans) = join(visual, textual);
    for j in &mut joined {
        refine_text(j, textual, gate);
        enrich(j, textual);
    }
    (joined, orphans)
}
