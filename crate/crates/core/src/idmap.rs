//! Identifier ↔ box mapping for identifier- and index-based predictions.
//!
//! A map lists every detected molecule with its box and the identifiers the
//! authors printed next to it (e.g. `"2a"`). Identifiers are globally unique
//! within a map; a molecule may carry several. Molecules without a printed
//! label receive a synthesized identifier flagged `is_virtual`.

use std::collections::{HashMap, HashSet};

use serde::Serialize;
use serde_json::Value;

use crate::error::ModelError;
use crate::geometry::BBox;
use crate::model::{
    as_array, as_object, bbox_from, mol_index_from, string_list, DiagramAnnotation, MoleculeRef,
    ResolvedReaction,
};
use crate::prediction::ParsedPrediction;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MapEntry {
    pub mol_index: i64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BBox>,
    #[serde(rename = "identifier")]
    pub identifiers: Vec<String>,
    pub is_virtual: bool,
}

/// A molecule that still needs an identifier.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledMolecule {
    pub mol_index: i64,
    pub bbox: Option<BBox>,
}

#[derive(Debug, Clone, Default)]
pub struct IdentifierMap {
    entries: Vec<MapEntry>,
    by_identifier: HashMap<String, usize>,
    by_index: HashMap<i64, usize>,
}

impl PartialEq for IdentifierMap {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
    }
}

impl IdentifierMap {
    /// Builds a map, enforcing non-empty identifier lists, unique
    /// `mol_index` values and collision-free identifiers.
    pub fn new(entries: Vec<MapEntry>) -> Result<Self, ModelError> {
        let mut by_identifier = HashMap::new();
        let mut by_index = HashMap::new();
        for (i, e) in entries.iter().enumerate() {
            let path = format!("[{i}]");
            if by_index.insert(e.mol_index, i).is_some() {
                return Err(ModelError::DuplicateMolIndex {
                    path: format!("{path}.mol_index"),
                    mol_index: e.mol_index,
                });
            }
            if e.identifiers.is_empty() {
                return Err(ModelError::EmptyIdentifiers { path });
            }
            for (j, ident) in e.identifiers.iter().enumerate() {
                let ipath = format!("{path}.identifier[{j}]");
                if ident.trim().is_empty() {
                    return Err(ModelError::schema(ipath, "identifier must be non-empty"));
                }
                if let Some(&owner) = by_identifier.get(ident.trim()) {
                    let first: &MapEntry = &entries[owner];
                    return Err(ModelError::DuplicateIdentifier {
                        path: ipath,
                        identifier: ident.clone(),
                        first: first.mol_index,
                    });
                }
                by_identifier.insert(ident.trim().to_string(), i);
            }
        }
        Ok(IdentifierMap {
            entries,
            by_identifier,
            by_index,
        })
    }

    pub fn entries(&self) -> &[MapEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn by_identifier(&self, identifier: &str) -> Option<&MapEntry> {
        self.by_identifier
            .get(identifier.trim())
            .map(|&i| &self.entries[i])
    }

    pub fn by_index(&self, mol_index: i64) -> Option<&MapEntry> {
        self.by_index.get(&mol_index).map(|&i| &self.entries[i])
    }

    /// Map derived from an annotation's molecule list. Molecules without
    /// identifiers are given virtual ones.
    pub fn from_annotation(ann: &DiagramAnnotation) -> Self {
        let labeled: Vec<MapEntry> = ann
            .molecules
            .iter()
            .filter(|m| !m.identifiers.is_empty())
            .map(|m| MapEntry {
                mol_index: m.mol_index,
                bbox: Some(m.bbox),
                identifiers: m.identifiers.clone(),
                is_virtual: m.is_virtual,
            })
            .collect();
        let unlabeled: Vec<UnlabeledMolecule> = ann
            .molecules
            .iter()
            .filter(|m| m.identifiers.is_empty())
            .map(|m| UnlabeledMolecule {
                mol_index: m.mol_index,
                bbox: Some(m.bbox),
            })
            .collect();
        let mut map = assign_virtual_ids(labeled, &unlabeled)
            .expect("validated annotations yield a valid identifier map");
        map.sort_by_index();
        map
    }

    fn sort_by_index(&mut self) {
        let mut entries = std::mem::take(&mut self.entries);
        entries.sort_by_key(|e| e.mol_index);
        *self = IdentifierMap::new(entries).expect("reordering preserves validity");
    }

    /// Looks up the box a molecule reference points at.
    pub fn lookup(&self, r: &MoleculeRef) -> Option<BBox> {
        match r {
            MoleculeRef::Box(b) => Some(*b),
            MoleculeRef::Index(i) => self.by_index(*i).and_then(|e| e.bbox),
            MoleculeRef::Identifier(s) => self.by_identifier(s).and_then(|e| e.bbox),
        }
    }

    /// One JSON array in the map-file entry shape.
    pub fn to_json(&self) -> Value {
        serde_json::to_value(&self.entries).expect("map serialization is infallible")
    }
}

/// Parses one map array, e.g.
/// `[{"mol_index": "1", "identifier": ["1"]}, {"mol_index": 3, "identifier": ["3c"], "is_virtual": true}]`.
///
/// `mol_index` may be an integer or a quoted integer; `identifiers` is
/// accepted as an alias of `identifier`; `bbox` is optional.
pub fn load_map(document: &[u8]) -> Result<IdentifierMap, ModelError> {
    let value: Value = serde_json::from_slice(document).map_err(|e| ModelError::Syntax {
        message: e.to_string(),
    })?;
    map_from_value(&value)
}

pub fn map_from_value(value: &Value) -> Result<IdentifierMap, ModelError> {
    let mut entries = Vec::new();
    for (i, v) in as_array(value, "")?.iter().enumerate() {
        let path = format!("[{i}]");
        let obj = as_object(v, &path)?;
        let mol_index = mol_index_from(
            obj.get("mol_index")
                .ok_or_else(|| ModelError::schema(format!("{path}.mol_index"), "missing required field"))?,
            &format!("{path}.mol_index"),
        )?;
        let bbox = match obj.get("bbox") {
            None | Some(Value::Null) => None,
            Some(b) => Some(bbox_from(b, &format!("{path}.bbox"))?),
        };
        let identifiers = match obj.get("identifier").or_else(|| obj.get("identifiers")) {
            None | Some(Value::Null) => Vec::new(),
            Some(Value::String(s)) => vec![s.clone()],
            Some(v) => string_list(v, &format!("{path}.identifier"))?,
        };
        let is_virtual = match obj.get("is_virtual") {
            None | Some(Value::Null) => false,
            Some(Value::Bool(b)) => *b,
            Some(_) => {
                return Err(ModelError::schema(format!("{path}.is_virtual"), "must be a boolean"))
            }
        };
        entries.push(MapEntry {
            mol_index,
            bbox,
            identifiers: identifiers.into_iter().map(|s| s.trim().to_string()).collect(),
            is_virtual,
        });
    }
    IdentifierMap::new(entries)
}

fn is_numeric(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit())
}

/// Gives every unlabeled molecule a fresh identifier, in the given order.
///
/// When every existing identifier is purely numeric (vacuously true for an
/// empty map) numbering continues from the maximum. Otherwise identifiers
/// `v1`, `v2`, … are issued, skipping any already taken. New entries are
/// flagged `is_virtual`.
pub fn assign_virtual_ids(
    existing: Vec<MapEntry>,
    unlabeled: &[UnlabeledMolecule],
) -> Result<IdentifierMap, ModelError> {
    let taken: HashSet<&str> = existing
        .iter()
        .flat_map(|e| e.identifiers.iter().map(|s| s.trim()))
        .collect();
    let numeric_max: Option<u64> = if taken.iter().all(|s| is_numeric(s)) {
        taken
            .iter()
            .map(|s| s.parse::<u64>())
            .try_fold(0u64, |m, n| n.map(|n| m.max(n)))
            .ok()
    } else {
        None
    };
    let mut fresh = Vec::with_capacity(unlabeled.len());
    match numeric_max {
        Some(max) => {
            for (k, u) in unlabeled.iter().enumerate() {
                fresh.push((u, (max + 1 + k as u64).to_string()));
            }
        }
        None => {
            let mut counter = 0u64;
            for u in unlabeled {
                let ident = loop {
                    counter += 1;
                    let candidate = format!("v{counter}");
                    if !taken.contains(candidate.as_str()) {
                        break candidate;
                    }
                };
                fresh.push((u, ident));
            }
        }
    }
    let mut entries = existing.clone();
    entries.extend(fresh.into_iter().map(|(u, ident)| MapEntry {
        mol_index: u.mol_index,
        bbox: u.bbox,
        identifiers: vec![ident],
        is_virtual: true,
    }));
    IdentifierMap::new(entries)
}

/// A molecule handle that could not be mapped to a box.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct UnresolvedHandle {
    pub reaction: usize,
    pub handle: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Resolution {
    pub reactions: Vec<ResolvedReaction>,
    pub unresolved: Vec<UnresolvedHandle>,
}

/// Replaces identifier and box-index handles by the boxes they name.
/// Unknown handles stay in place as unresolved molecules and are reported.
pub fn resolve(pred: &ParsedPrediction, map: &IdentifierMap) -> Resolution {
    let mut unresolved = Vec::new();
    let reactions = pred
        .reactions
        .iter()
        .enumerate()
        .map(|(k, r)| {
            ResolvedReaction::resolve_with(r, |m| {
                let found = map.lookup(m);
                if found.is_none() {
                    unresolved.push(UnresolvedHandle {
                        reaction: k,
                        handle: match m {
                            MoleculeRef::Identifier(s) => s.clone(),
                            other => other.to_string(),
                        },
                    });
                }
                found
            })
        })
        .collect();
    Resolution {
        reactions,
        unresolved,
    }
}
