//! Typed view of a text-extracted reaction record.
//!
//! Field names follow the extraction schema exactly. Keys the schema does
//! not name are carried through untouched in `extras`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub type Extras = BTreeMap<String, Value>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextualRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iupac_name: Option<String>,
    pub procedure: Procedure,
    #[serde(flatten)]
    pub extras: Extras,
}

/// A record that has been through the whole funnel. Same shape as the input.
pub type StandardReaction = TextualRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Procedure {
    pub paragraph: String,
    pub substances: Vec<Substance>,
    #[serde(default)]
    pub reactants: Vec<i64>,
    #[serde(default)]
    pub catalyst: Vec<i64>,
    #[serde(default)]
    pub reagents: Vec<i64>,
    #[serde(default)]
    pub solvent: Vec<i64>,
    pub products: Vec<Product>,
    #[serde(default)]
    pub stages: Vec<Stage>,
    #[serde(flatten)]
    pub extras: Extras,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Substance {
    pub idx: i64,
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amount: Option<String>,
    pub chemical_name: String,
    pub is_identifier: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub equivalence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mmol: Option<f64>,
    pub role: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Product {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub production: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub yield_ratio: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conversion_rate: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stereo_selectivity: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ee: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dr: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rr: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub appearance: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chemical_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub is_identifier: Option<bool>,
    #[serde(flatten)]
    pub extras: Extras,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Stage {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage_id: Option<String>,
    #[serde(default)]
    pub substances: Vec<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atmosphere: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pressure: Option<String>,
    #[serde(rename = "PH", default, skip_serializing_if = "Option::is_none")]
    pub ph: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stirring_speed: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vacuum_condition: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub light_condition: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cooling_heating_condition: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workup: Option<String>,
    #[serde(flatten)]
    pub extras: Extras,
}

impl Stage {
    /// Reaction-condition fields by schema name, `workup` excluded.
    pub fn condition_fields(&self) -> [(&'static str, Option<&str>); 9] {
        [
            ("time", self.time.as_deref()),
            ("temperature", self.temperature.as_deref()),
            ("atmosphere", self.atmosphere.as_deref()),
            ("pressure", self.pressure.as_deref()),
            ("PH", self.ph.as_deref()),
            ("stirring_speed", self.stirring_speed.as_deref()),
            ("vacuum_condition", self.vacuum_condition.as_deref()),
            ("light_condition", self.light_condition.as_deref()),
            ("cooling_heating_condition", self.cooling_heating_condition.as_deref()),
        ]
    }
}

/// Substance roles and the role array each one lives in.
pub const ROLES: [(&str, &str); 4] = [
    ("reactant", "reactants"),
    ("catalyst", "catalyst"),
    ("reagent", "reagents"),
    ("solvent", "solvent"),
];

pub const MANDATORY_SUBSTANCE_KEYS: [&str; 5] = ["idx", "content", "chemical_name", "is_identifier", "role"];
pub const OPTIONAL_SUBSTANCE_KEYS: [&str; 3] = ["amount", "equivalence", "mmol"];

impl Procedure {
    pub fn role_array(&self, i: usize) -> &Vec<i64> {
        match i {
            0 => &self.reactants,
            1 => &self.catalyst,
            2 => &self.reagents,
            _ => &self.solvent,
        }
    }

    pub fn role_array_mut(&mut self, i: usize) -> &mut Vec<i64> {
        match i {
            0 => &mut self.reactants,
            1 => &mut self.catalyst,
            2 => &mut self.reagents,
            _ => &mut self.solvent,
        }
    }

    pub fn substance(&self, idx: i64) -> Option<&Substance> {
        usize::try_from(idx).ok().and_then(|i| self.substances.get(i))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeywordKind {
    Title,
    Id,
    IupacName,
    Method,
    LastCompound,
}

pub const LAST_COMPOUND: &str = "__last_compound__";

/// An external procedure reference, stored as `[keyword, kind]` pairs under
/// the record's `keyword` key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeywordDependency {
    pub keyword: String,
    pub kind: KeywordKind,
}

impl KeywordDependency {
    pub fn parse_list(v: &Value) -> Result<Vec<KeywordDependency>, String> {
        let items = v.as_array().ok_or("keyword must be an array")?;
        items
            .iter()
            .enumerate()
            .map(|(i, item)| {
                let pair = item.as_array().filter(|a| a.len() == 2);
                let (kw, kind) = match pair {
                    Some(a) => (a[0].as_str(), a[1].as_str()),
                    None => (None, None),
                };
                let (Some(kw), Some(kind)) = (kw, kind) else {
                    return Err(format!("keyword[{i}] must be a [keyword, kind] pair of strings"));
                };
                let kind: KeywordKind = serde_json::from_value(Value::String(kind.to_string()))
                    .map_err(|_| format!("keyword[{i}] has unknown kind {kind:?}"))?;
                if (kind == KeywordKind::LastCompound) != (kw == LAST_COMPOUND) {
                    return Err(format!("keyword[{i}]: {LAST_COMPOUND} and last_compound go together"));
                }
                if kw.trim().is_empty() {
                    return Err(format!("keyword[{i}] is empty"));
                }
                Ok(KeywordDependency {
                    keyword: kw.to_string(),
                    kind,
                })
            })
            .collect()
    }
}

impl TextualRecord {
    pub fn keywords(&self) -> Result<Vec<KeywordDependency>, String> {
        match self.extras.get("keyword") {
            None => Ok(Vec::new()),
            Some(v) => KeywordDependency::parse_list(v),
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serialization is infallible")
    }
}
