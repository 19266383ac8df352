//! Parsing raw model output into reactions.
//!
//! Accepted grammar (after stripping an optional Markdown code fence): either
//! a JSON array of reactions or an object with a `"reactions"` array. Each
//! reaction is `{"reactants": [...], "conditions": [...], "products": [...]}`
//! (`conditions` may be omitted). Components take the object form used by
//! annotation records, or a bare shorthand that depends on the strategy:
//!
//! | format  | bare molecule form            | example            |
//! |---------|-------------------------------|--------------------|
//! | `bros`  | `[x1, y1, x2, y2]`            | `[10, 12, 80, 90]` |
//! | `bivp`  | integer box index             | `3` or `"3"`       |
//! | `idtvp` | identifier string             | `"2a"`             |
//!
//! Text is always `{"type": "text", "value": "..."}`. Failures are values:
//! the reward path maps any [`ParseFailure`] to zero.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::model::{as_array, as_object, bbox_from, Component, MoleculeRef, Reaction, Role};
use crate::error::ModelError;
use crate::text::normalize_text;

/// Output strategy of the model that produced a prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    /// Boxes and roles in one step: molecules are regressed coordinates.
    Bros,
    /// Pre-drawn indexed boxes: molecules are box indices.
    Bivp,
    /// Native identifiers: molecules are identifier strings.
    Idtvp,
}

impl OutputFormat {
    pub fn as_str(&self) -> &'static str {
        match self {
            OutputFormat::Bros => "bros",
            OutputFormat::Bivp => "bivp",
            OutputFormat::Idtvp => "idtvp",
        }
    }
}

impl fmt::Display for OutputFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OutputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bros" => Ok(OutputFormat::Bros),
            "bivp" => Ok(OutputFormat::Bivp),
            "idtvp" => Ok(OutputFormat::Idtvp),
            other => Err(format!("unknown output format {other:?} (expected bros, bivp or idtvp)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedPrediction {
    pub format: OutputFormat,
    pub reactions: Vec<Reaction>,
    pub raw_valid: bool,
    /// Non-fatal notes, e.g. duplicate components that were dropped.
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FailureKind {
    /// Not valid JSON (including truncated output).
    Syntax,
    /// Valid JSON that does not describe reactions in this format.
    Schema,
    /// Nothing but whitespace.
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParseFailure {
    pub kind: FailureKind,
    pub message: String,
}

impl fmt::Display for ParseFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: {}", self.kind, self.message)
    }
}

impl From<ModelError> for ParseFailure {
    fn from(e: ModelError) -> Self {
        ParseFailure {
            kind: match e {
                ModelError::Syntax { .. } => FailureKind::Syntax,
                _ => FailureKind::Schema,
            },
            message: e.to_string(),
        }
    }
}

fn strip_code_fence(raw: &str) -> &str {
    let t = raw.trim();
    let Some(rest) = t.strip_prefix("```") else {
        return t;
    };
    // Drop the info string (e.g. "json") on the opening line.
    let body = rest.split_once('\n').map_or("", |(_, b)| b);
    body.trim_end().strip_suffix("```").unwrap_or(body).trim()
}

/// Parses raw model output. Never panics; every failure is a value.
pub fn parse_prediction(raw: &str, format: OutputFormat) -> Result<ParsedPrediction, ParseFailure> {
    let body = strip_code_fence(raw);
    if body.is_empty() {
        return Err(ParseFailure {
            kind: FailureKind::Empty,
            message: "prediction is empty".into(),
        });
    }
    let value: Value = serde_json::from_str(body).map_err(|e| ParseFailure {
        kind: FailureKind::Syntax,
        message: e.to_string(),
    })?;
    let list = match &value {
        Value::Array(a) => a,
        Value::Object(o) => match o.get("reactions") {
            Some(v) => as_array(v, "reactions")?,
            None => {
                return Err(ModelError::schema("reactions", "missing required field").into())
            }
        },
        _ => {
            return Err(ParseFailure {
                kind: FailureKind::Schema,
                message: "expected a reaction array or an object with \"reactions\"".into(),
            })
        }
    };
    let mut reactions = Vec::with_capacity(list.len());
    let mut warnings = Vec::new();
    for (k, r) in list.iter().enumerate() {
        let path = format!("reactions[{k}]");
        let mut reaction = prediction_reaction(r, format).map_err(|e| e.at(&path))?;
        reaction.check_roles().map_err(|e| e.at(&path))?;
        let removed = reaction.dedup_roles();
        if removed > 0 {
            log::warn!("{path}: dropped {removed} duplicate component(s)");
            warnings.push(format!("{path}: dropped {removed} duplicate component(s)"));
        }
        reactions.push(reaction);
    }
    Ok(ParsedPrediction {
        format,
        reactions,
        raw_valid: true,
        warnings,
    })
}

fn prediction_reaction(v: &Value, format: OutputFormat) -> Result<Reaction, ModelError> {
    let obj = as_object(v, "")?;
    let mut reaction = Reaction::default();
    for role in Role::ALL {
        let list = match obj.get(role.as_str()) {
            Some(Value::Null) | None if role == Role::Conditions => continue,
            Some(v) => as_array(v, role.as_str())?,
            None => return Err(ModelError::schema(role.as_str(), "missing required field")),
        };
        for (i, c) in list.iter().enumerate() {
            let path = format!("{}[{i}]", role.as_str());
            reaction
                .role_mut(role)
                .push(prediction_component(c, format).map_err(|e| e.at(&path))?);
        }
    }
    Ok(reaction)
}

fn prediction_component(v: &Value, format: OutputFormat) -> Result<Component, ModelError> {
    match v {
        Value::Object(obj) => match obj.get("type").and_then(Value::as_str) {
            Some("molecule") => {
                let r = obj
                    .get("ref")
                    .ok_or_else(|| ModelError::schema("ref", "missing required field"))?;
                molecule_ref(r, format).map(Component::Molecule).map_err(|e| e.at("ref"))
            }
            Some("text") => {
                let t = obj
                    .get("value")
                    .and_then(Value::as_str)
                    .ok_or_else(|| ModelError::schema("value", "must be a string"))?;
                if normalize_text(t).is_empty() {
                    return Err(ModelError::schema("value", "text component must not be empty"));
                }
                Ok(Component::Text(t.to_string()))
            }
            _ => Err(ModelError::schema("type", "must be \"molecule\" or \"text\"")),
        },
        other => molecule_ref(other, format).map(Component::Molecule),
    }
}

fn molecule_ref(v: &Value, format: OutputFormat) -> Result<MoleculeRef, ModelError> {
    match (format, v) {
        (OutputFormat::Bros, Value::Array(_)) => Ok(MoleculeRef::Box(bbox_from(v, "")?)),
        (OutputFormat::Bivp, Value::Number(n)) => n
            .as_i64()
            .map(MoleculeRef::Index)
            .ok_or_else(|| ModelError::schema("", "box index must be an integer")),
        (OutputFormat::Bivp, Value::String(s)) => s
            .trim()
            .parse::<i64>()
            .map(MoleculeRef::Index)
            .map_err(|_| ModelError::schema("", format!("box index expected, got {s:?}"))),
        (OutputFormat::Idtvp, Value::String(s)) if !s.trim().is_empty() => {
            Ok(MoleculeRef::Identifier(s.trim().to_string()))
        }
        (OutputFormat::Idtvp, Value::Number(n)) if n.is_i64() || n.is_u64() => {
            Ok(MoleculeRef::Identifier(n.to_string()))
        }
        (f, _) => Err(ModelError::schema(
            "",
            format!("not a valid {f} molecule reference"),
        )),
    }
}

#[derive(Serialize)]
struct CanonicalDoc<'a> {
    reactions: &'a [Reaction],
}

fn sorted_reaction(r: &Reaction) -> Reaction {
    let mut out = Reaction::default();
    for role in Role::ALL {
        let mut comps: Vec<Component> = r.role(role).iter().map(Component::normalized).collect();
        comps.sort_by_key(Component::key);
        comps.dedup_by(|a, b| a.key() == b.key());
        *out.role_mut(role) = comps;
    }
    out
}

/// Deterministic serialization: components sorted within roles, reactions
/// sorted by (smallest reactant, smallest product), ties broken by the
/// serialized reaction text. Set-equal predictions serialize identically and
/// the output parses back under the same format.
pub fn canonical_serialize(p: &ParsedPrediction) -> String {
    let mut keyed: Vec<(Reaction, String)> = p
        .reactions
        .iter()
        .map(|r| {
            let s = sorted_reaction(r);
            let text = serde_json::to_string(&s).expect("reaction serialization is infallible");
            (s, text)
        })
        .collect();
    keyed.sort_by(|(a, at), (b, bt)| {
        let first = |r: &Reaction, role: Role| r.role(role).first().map(Component::key);
        first(a, Role::Reactants)
            .cmp(&first(b, Role::Reactants))
            .then_with(|| first(a, Role::Products).cmp(&first(b, Role::Products)))
            .then_with(|| at.cmp(bt))
    });
    let reactions: Vec<Reaction> = keyed.into_iter().map(|(r, _)| r).collect();
    serde_json::to_string(&CanonicalDoc {
        reactions: &reactions,
    })
    .expect("prediction serialization is infallible")
}
