//! Reaction data model and ground-truth annotation records.
//!
//! A reaction is a triple of role sets (reactants, conditions, products).
//! Each member is either a molecule reference (a box, a box index or an
//! identifier string) or a free-text string. Annotation records travel as
//! one JSON object per line:
//!
//! ```text
//! {"image_id":"img-1","width":800,"height":600,"diagram_type":"single",
//!  "molecules":[{"mol_index":1,"bbox":[10,10,90,80],"identifiers":["1"],"is_virtual":false}],
//!  "reactions":[{"reactants":[{"type":"molecule","ref":1}],"conditions":[],
//!                "products":[{"type":"molecule","ref":"2a"}]}]}
//! ```

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::ser::SerializeMap;
use serde::{Deserialize, Serialize, Serializer};
use serde_json::{Map, Value};

use crate::error::ModelError;
use crate::geometry::BBox;
use crate::text::normalize_text;

/// How a molecule component points at a structure in the image.
#[derive(Debug, Clone, PartialEq)]
pub enum MoleculeRef {
    Box(BBox),
    Index(i64),
    Identifier(String),
}

impl fmt::Display for MoleculeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MoleculeRef::Box(b) => write!(f, "{:?}", b.to_array()),
            MoleculeRef::Index(i) => write!(f, "#{i}"),
            MoleculeRef::Identifier(s) => write!(f, "{s:?}"),
        }
    }
}

impl Serialize for MoleculeRef {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            MoleculeRef::Box(b) => b.serialize(serializer),
            MoleculeRef::Index(i) => serializer.serialize_i64(*i),
            MoleculeRef::Identifier(s) => serializer.serialize_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Component {
    Molecule(MoleculeRef),
    Text(String),
}

impl Component {
    pub fn is_molecule(&self) -> bool {
        matches!(self, Component::Molecule(_))
    }

    /// Equality/ordering key: molecules by payload, text by normalized form.
    pub fn key(&self) -> ComponentKey {
        match self {
            Component::Molecule(MoleculeRef::Box(b)) => ComponentKey::Box(*b),
            Component::Molecule(MoleculeRef::Index(i)) => ComponentKey::Index(*i),
            Component::Molecule(MoleculeRef::Identifier(s)) => {
                ComponentKey::Identifier(s.clone())
            }
            Component::Text(t) => ComponentKey::Text(normalize_text(t)),
        }
    }

    /// Same component with text replaced by its normalized form.
    pub fn normalized(&self) -> Component {
        match self {
            Component::Text(t) => Component::Text(normalize_text(t)),
            other => other.clone(),
        }
    }
}

impl Serialize for Component {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(2))?;
        match self {
            Component::Molecule(r) => {
                map.serialize_entry("type", "molecule")?;
                map.serialize_entry("ref", r)?;
            }
            Component::Text(t) => {
                map.serialize_entry("type", "text")?;
                map.serialize_entry("value", t)?;
            }
        }
        map.end()
    }
}

/// Total order used for set semantics and canonical serialization:
/// boxes < indices < identifiers < text.
#[derive(Debug, Clone)]
pub enum ComponentKey {
    Box(BBox),
    Index(i64),
    Identifier(String),
    Text(String),
}

impl ComponentKey {
    fn rank(&self) -> u8 {
        match self {
            ComponentKey::Box(_) => 0,
            ComponentKey::Index(_) => 1,
            ComponentKey::Identifier(_) => 2,
            ComponentKey::Text(_) => 3,
        }
    }
}

impl Ord for ComponentKey {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (ComponentKey::Box(a), ComponentKey::Box(b)) => a.total_cmp(b),
            (ComponentKey::Index(a), ComponentKey::Index(b)) => a.cmp(b),
            (ComponentKey::Identifier(a), ComponentKey::Identifier(b))
            | (ComponentKey::Text(a), ComponentKey::Text(b)) => a.cmp(b),
            _ => self.rank().cmp(&other.rank()),
        }
    }
}

impl PartialOrd for ComponentKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for ComponentKey {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for ComponentKey {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Reactants,
    Conditions,
    Products,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Reactants, Role::Conditions, Role::Products];

    pub fn as_str(&self) -> &'static str {
        match self {
            Role::Reactants => "reactants",
            Role::Conditions => "conditions",
            Role::Products => "products",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Reaction {
    pub reactants: Vec<Component>,
    pub conditions: Vec<Component>,
    pub products: Vec<Component>,
}

impl Reaction {
    pub fn role(&self, role: Role) -> &[Component] {
        match role {
            Role::Reactants => &self.reactants,
            Role::Conditions => &self.conditions,
            Role::Products => &self.products,
        }
    }

    pub fn role_mut(&mut self, role: Role) -> &mut Vec<Component> {
        match role {
            Role::Reactants => &mut self.reactants,
            Role::Conditions => &mut self.conditions,
            Role::Products => &mut self.products,
        }
    }

    pub fn components(&self) -> impl Iterator<Item = (Role, &Component)> {
        Role::ALL
            .into_iter()
            .flat_map(move |r| self.role(r).iter().map(move |c| (r, c)))
    }

    /// Checks the structural invariants: at least one molecule among the
    /// reactants and among the products.
    pub fn check_roles(&self) -> Result<(), ModelError> {
        for role in [Role::Reactants, Role::Products] {
            if !self.role(role).iter().any(Component::is_molecule) {
                return Err(ModelError::schema(
                    role.as_str(),
                    "must contain at least one molecule component",
                ));
            }
        }
        Ok(())
    }

    /// First duplicate (under component equality) within a role, if any.
    pub fn find_duplicate(&self) -> Option<(Role, usize)> {
        for role in Role::ALL {
            let mut seen = Vec::new();
            for (i, c) in self.role(role).iter().enumerate() {
                let k = c.key();
                if seen.contains(&k) {
                    return Some((role, i));
                }
                seen.push(k);
            }
        }
        None
    }

    /// Removes duplicate components within each role, keeping first
    /// occurrences. Returns how many were removed.
    pub fn dedup_roles(&mut self) -> usize {
        let mut removed = 0;
        for role in Role::ALL {
            let comps = self.role_mut(role);
            let mut seen: Vec<ComponentKey> = Vec::new();
            comps.retain(|c| {
                let k = c.key();
                if seen.contains(&k) {
                    removed += 1;
                    false
                } else {
                    seen.push(k);
                    true
                }
            });
        }
        removed
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagramType {
    Single,
    MultiLine,
    Tree,
    Cyclic,
}

impl DiagramType {
    pub fn as_str(&self) -> &'static str {
        match self {
            DiagramType::Single => "single",
            DiagramType::MultiLine => "multi_line",
            DiagramType::Tree => "tree",
            DiagramType::Cyclic => "cyclic",
        }
    }

    pub fn parse(s: &str) -> Option<DiagramType> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "single" => Some(DiagramType::Single),
            "multi_line" | "multiline" => Some(DiagramType::MultiLine),
            "tree" => Some(DiagramType::Tree),
            "cyclic" => Some(DiagramType::Cyclic),
            _ => None,
        }
    }

    /// Bucket name used in reports; absent types land in `"unknown"`.
    pub fn bucket(t: Option<DiagramType>) -> &'static str {
        t.map_or("unknown", |t| t.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Molecule {
    pub mol_index: i64,
    pub bbox: BBox,
    pub identifiers: Vec<String>,
    pub is_virtual: bool,
}

/// Ground-truth record for one diagram image.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagramAnnotation {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub diagram_type: Option<DiagramType>,
    pub molecules: Vec<Molecule>,
    pub reactions: Vec<Reaction>,
}

/// A component after molecule references were looked up. `Molecule(None)`
/// marks a handle that did not resolve; it never matches anything.
#[derive(Debug, Clone, PartialEq)]
pub enum ResolvedComponent {
    Molecule(Option<BBox>),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResolvedReaction {
    pub reactants: Vec<ResolvedComponent>,
    pub conditions: Vec<ResolvedComponent>,
    pub products: Vec<ResolvedComponent>,
}

impl ResolvedReaction {
    pub fn role(&self, role: Role) -> &[ResolvedComponent] {
        match role {
            Role::Reactants => &self.reactants,
            Role::Conditions => &self.conditions,
            Role::Products => &self.products,
        }
    }

    pub fn role_mut(&mut self, role: Role) -> &mut Vec<ResolvedComponent> {
        match role {
            Role::Reactants => &mut self.reactants,
            Role::Conditions => &mut self.conditions,
            Role::Products => &mut self.products,
        }
    }

    /// Resolves every molecule reference through `lookup`.
    pub fn resolve_with<F>(reaction: &Reaction, mut lookup: F) -> ResolvedReaction
    where
        F: FnMut(&MoleculeRef) -> Option<BBox>,
    {
        let mut out = ResolvedReaction::default();
        for (role, c) in reaction.components() {
            let resolved = match c {
                Component::Molecule(r) => ResolvedComponent::Molecule(lookup(r)),
                Component::Text(t) => ResolvedComponent::Text(t.clone()),
            };
            out.role_mut(role).push(resolved);
        }
        out
    }
}

impl DiagramAnnotation {
    pub fn molecule_by_index(&self, mol_index: i64) -> Option<&Molecule> {
        self.molecules.iter().find(|m| m.mol_index == mol_index)
    }

    pub fn molecule_by_identifier(&self, identifier: &str) -> Option<&Molecule> {
        let identifier = identifier.trim();
        self.molecules
            .iter()
            .find(|m| m.identifiers.iter().any(|i| i == identifier))
    }

    pub fn lookup(&self, r: &MoleculeRef) -> Option<BBox> {
        match r {
            MoleculeRef::Box(b) => Some(*b),
            MoleculeRef::Index(i) => self.molecule_by_index(*i).map(|m| m.bbox),
            MoleculeRef::Identifier(s) => self.molecule_by_identifier(s).map(|m| m.bbox),
        }
    }

    /// Ground-truth reactions in box space.
    pub fn resolved_reactions(&self) -> Vec<ResolvedReaction> {
        self.reactions
            .iter()
            .map(|r| ResolvedReaction::resolve_with(r, |m| self.lookup(m)))
            .collect()
    }

    /// Verifies every record invariant, reporting the first violation.
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.image_id.trim().is_empty() {
            return Err(ModelError::schema("image_id", "must be a non-empty string"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(ModelError::schema("width", "image dimensions must be positive"));
        }
        let (w, h) = (f64::from(self.width), f64::from(self.height));
        let mut indices = HashSet::new();
        let mut owners: HashMap<&str, i64> = HashMap::new();
        for (i, m) in self.molecules.iter().enumerate() {
            let path = format!("molecules[{i}]");
            if !indices.insert(m.mol_index) {
                return Err(ModelError::DuplicateMolIndex {
                    path: format!("{path}.mol_index"),
                    mol_index: m.mol_index,
                });
            }
            m.bbox.check().map_err(|e| e.at(&format!("{path}.bbox")))?;
            if !m.bbox.within(w, h) {
                return Err(ModelError::BoxOutOfBounds {
                    path: format!("{path}.bbox"),
                    bbox: m.bbox.to_array(),
                    width: self.width,
                    height: self.height,
                });
            }
            for (j, ident) in m.identifiers.iter().enumerate() {
                let ipath = format!("{path}.identifiers[{j}]");
                if ident.trim().is_empty() || ident.trim() != ident {
                    return Err(ModelError::schema(
                        ipath,
                        "identifiers must be non-empty and carry no surrounding whitespace",
                    ));
                }
                if let Some(&first) = owners.get(ident.as_str()) {
                    return Err(ModelError::DuplicateIdentifier {
                        path: ipath,
                        identifier: ident.clone(),
                        first,
                    });
                }
                owners.insert(ident, m.mol_index);
            }
        }
        for (k, r) in self.reactions.iter().enumerate() {
            let rpath = format!("reactions[{k}]");
            for role in Role::ALL {
                for (i, c) in r.role(role).iter().enumerate() {
                    let cpath = format!("{rpath}.{}[{i}]", role.as_str());
                    match c {
                        Component::Molecule(MoleculeRef::Box(b)) => {
                            b.check().map_err(|e| e.at(&format!("{cpath}.ref")))?;
                            if !b.within(w, h) {
                                return Err(ModelError::BoxOutOfBounds {
                                    path: format!("{cpath}.ref"),
                                    bbox: b.to_array(),
                                    width: self.width,
                                    height: self.height,
                                });
                            }
                        }
                        Component::Molecule(m) => {
                            if self.lookup(m).is_none() {
                                return Err(ModelError::DanglingReference {
                                    path: format!("{cpath}.ref"),
                                    reference: m.to_string(),
                                });
                            }
                        }
                        Component::Text(t) => {
                            if normalize_text(t).is_empty() {
                                return Err(ModelError::schema(
                                    format!("{cpath}.value"),
                                    "text component must not be empty",
                                ));
                            }
                        }
                    }
                }
            }
            r.check_roles().map_err(|e| e.at(&rpath))?;
            if let Some((role, i)) = r.find_duplicate() {
                return Err(ModelError::schema(
                    format!("{rpath}.{}[{i}]", role.as_str()),
                    "duplicate component within role",
                ));
            }
        }
        Ok(())
    }

    /// One-line JSON form accepted by [`parse_ground_truth`].
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("annotation serialization is infallible")
    }
}

const GT_KEYS: &[&str] = &[
    "image_id",
    "width",
    "height",
    "diagram_type",
    "molecules",
    "reactions",
];
const MOLECULE_KEYS: &[&str] = &["mol_index", "bbox", "identifiers", "is_virtual"];
const REACTION_KEYS: &[&str] = &["reactants", "conditions", "products"];

/// Parses and fully validates one annotation record.
pub fn parse_ground_truth(document: &[u8]) -> Result<DiagramAnnotation, ModelError> {
    let value: Value = serde_json::from_slice(document).map_err(|e| ModelError::Syntax {
        message: e.to_string(),
    })?;
    let ann = annotation_from_value(&value)?;
    ann.validate()?;
    Ok(ann)
}

pub(crate) fn as_object<'a>(v: &'a Value, path: &str) -> Result<&'a Map<String, Value>, ModelError> {
    v.as_object()
        .ok_or_else(|| ModelError::schema(path, "expected an object"))
}

pub(crate) fn as_array<'a>(v: &'a Value, path: &str) -> Result<&'a Vec<Value>, ModelError> {
    v.as_array()
        .ok_or_else(|| ModelError::schema(path, "expected an array"))
}

fn reject_unknown(obj: &Map<String, Value>, allowed: &[&str], path: &str) -> Result<(), ModelError> {
    match obj.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(ModelError::schema(
            if path.is_empty() { k.clone() } else { format!("{path}.{k}") },
            "unknown field",
        )),
        None => Ok(()),
    }
}

fn required<'a>(obj: &'a Map<String, Value>, key: &str, path: &str) -> Result<&'a Value, ModelError> {
    obj.get(key).ok_or_else(|| {
        ModelError::schema(
            if path.is_empty() { key.to_string() } else { format!("{path}.{key}") },
            "missing required field",
        )
    })
}

/// Accepts an integer or a string holding one (map files quote indices).
pub(crate) fn mol_index_from(v: &Value, path: &str) -> Result<i64, ModelError> {
    match v {
        Value::Number(n) => n
            .as_i64()
            .ok_or_else(|| ModelError::schema(path, "mol_index must be an integer")),
        Value::String(s) => s
            .trim()
            .parse::<i64>()
            .map_err(|_| ModelError::schema(path, "mol_index must be an integer")),
        _ => Err(ModelError::schema(path, "mol_index must be an integer")),
    }
}

pub(crate) fn bbox_from(v: &Value, path: &str) -> Result<BBox, ModelError> {
    let arr = as_array(v, path)?;
    if arr.len() != 4 {
        return Err(ModelError::schema(path, "box must have exactly four coordinates"));
    }
    let mut c = [0.0; 4];
    for (slot, x) in c.iter_mut().zip(arr) {
        *slot = x
            .as_f64()
            .ok_or_else(|| ModelError::schema(path, "box coordinates must be numbers"))?;
    }
    BBox::new(c[0], c[1], c[2], c[3]).map_err(|e| e.at(path))
}

fn dimension(obj: &Map<String, Value>, key: &str) -> Result<u32, ModelError> {
    required(obj, key, "")?
        .as_u64()
        .and_then(|n| u32::try_from(n).ok())
        .ok_or_else(|| ModelError::schema(key, "must be a non-negative integer"))
}

fn annotation_from_value(v: &Value) -> Result<DiagramAnnotation, ModelError> {
    let obj = as_object(v, "")?;
    reject_unknown(obj, GT_KEYS, "")?;
    let image_id = required(obj, "image_id", "")?
        .as_str()
        .ok_or_else(|| ModelError::schema("image_id", "must be a string"))?
        .to_string();
    let width = dimension(obj, "width")?;
    let height = dimension(obj, "height")?;
    let diagram_type = match obj.get("diagram_type") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(DiagramType::parse(s).ok_or_else(|| {
            ModelError::schema("diagram_type", format!("unknown diagram type {s:?}"))
        })?),
        Some(_) => return Err(ModelError::schema("diagram_type", "must be a string")),
    };
    let mut molecules = Vec::new();
    for (i, m) in as_array(required(obj, "molecules", "")?, "molecules")?
        .iter()
        .enumerate()
    {
        let path = format!("molecules[{i}]");
        let mo = as_object(m, &path)?;
        reject_unknown(mo, MOLECULE_KEYS, &path)?;
        let mol_index = mol_index_from(required(mo, "mol_index", &path)?, &format!("{path}.mol_index"))?;
        let bbox = bbox_from(required(mo, "bbox", &path)?, &format!("{path}.bbox"))?;
        let identifiers = match mo.get("identifiers") {
            None | Some(Value::Null) => Vec::new(),
            Some(v) => string_list(v, &format!("{path}.identifiers"))?,
        };
        let is_virtual = match mo.get("is_virtual") {
            None | Some(Value::Null) => false,
            Some(Value::Bool(b)) => *b,
            Some(_) => return Err(ModelError::schema(format!("{path}.is_virtual"), "must be a boolean")),
        };
        molecules.push(Molecule {
            mol_index,
            bbox,
            identifiers,
            is_virtual,
        });
    }
    let mut reactions = Vec::new();
    for (k, r) in as_array(required(obj, "reactions", "")?, "reactions")?
        .iter()
        .enumerate()
    {
        reactions.push(gt_reaction(r).map_err(|e| e.at(&format!("reactions[{k}]")))?);
    }
    Ok(DiagramAnnotation {
        image_id,
        width,
        height,
        diagram_type,
        molecules,
        reactions,
    })
}

pub(crate) fn string_list(v: &Value, path: &str) -> Result<Vec<String>, ModelError> {
    as_array(v, path)?
        .iter()
        .enumerate()
        .map(|(i, s)| {
            s.as_str()
                .map(str::to_string)
                .ok_or_else(|| ModelError::schema(format!("{path}[{i}]"), "expected a string"))
        })
        .collect()
}

fn gt_reaction(v: &Value) -> Result<Reaction, ModelError> {
    let obj = as_object(v, "")?;
    reject_unknown(obj, REACTION_KEYS, "")?;
    let mut reaction = Reaction::default();
    for role in Role::ALL {
        let list = match obj.get(role.as_str()) {
            Some(v) => as_array(v, role.as_str())?,
            None if role == Role::Conditions => continue,
            None => return Err(ModelError::schema(role.as_str(), "missing required field")),
        };
        for (i, c) in list.iter().enumerate() {
            let path = format!("{}[{i}]", role.as_str());
            reaction.role_mut(role).push(gt_component(c).map_err(|e| e.at(&path))?);
        }
    }
    Ok(reaction)
}

fn gt_component(v: &Value) -> Result<Component, ModelError> {
    let obj = as_object(v, "")?;
    match obj.get("type").and_then(Value::as_str) {
        Some("molecule") => {
            reject_unknown(obj, &["type", "ref"], "")?;
            let r = required(obj, "ref", "")?;
            let mref = match r {
                Value::Number(_) => MoleculeRef::Index(mol_index_from(r, "ref")?),
                Value::String(s) if !s.trim().is_empty() => {
                    MoleculeRef::Identifier(s.trim().to_string())
                }
                Value::String(_) => {
                    return Err(ModelError::schema("ref", "identifier must be non-empty"))
                }
                Value::Array(_) => MoleculeRef::Box(bbox_from(r, "ref")?),
                _ => {
                    return Err(ModelError::schema(
                        "ref",
                        "expected an integer index, identifier string or box",
                    ))
                }
            };
            Ok(Component::Molecule(mref))
        }
        Some("text") => {
            reject_unknown(obj, &["type", "value"], "")?;
            let t = required(obj, "value", "")?
                .as_str()
                .ok_or_else(|| ModelError::schema("value", "must be a string"))?;
            Ok(Component::Text(t.to_string()))
        }
        _ => Err(ModelError::schema("type", "must be \"molecule\" or \"text\"")),
    }
}
