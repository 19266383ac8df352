//! Structural gate applied to raw records before any repair.

use std::sync::OnceLock;

use regex::Regex;
use serde_json::Value;

use super::canonical::sanitize_text;
use super::record::{KeywordDependency, TextualRecord, MANDATORY_SUBSTANCE_KEYS, OPTIONAL_SUBSTANCE_KEYS, ROLES};
use super::DropReason;

pub const MIN_PARAGRAPH_WORDS: usize = 3;

fn yield_token() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    R.get_or_init(|| Regex::new(r"\d+(?:\.\d+)?").expect("valid regex"))
}

/// First number in a yield string, read as a percentage. `None` when the
/// string has no number.
pub fn parse_yield(s: &str) -> Option<f64> {
    yield_token().find(s).and_then(|m| m.as_str().parse().ok())
}

fn non_empty_str(v: Option<&Value>) -> bool {
    v.and_then(Value::as_str).is_some_and(|s| !s.trim().is_empty())
}

fn non_empty_array(v: Option<&Value>) -> bool {
    v.and_then(Value::as_array).is_some_and(|a| !a.is_empty())
}

/// Every rule the record breaks, in a fixed order. An empty list means the
/// record passes and converts to a [`TextualRecord`].
pub fn validate_value(v: &Value) -> Result<TextualRecord, Vec<DropReason>> {
    let mut reasons = Vec::new();
    let Some(obj) = v.as_object() else {
        return Err(vec![DropReason::Malformed]);
    };
    let proc_ = obj.get("procedure").and_then(Value::as_object);
    match proc_.and_then(|p| p.get("paragraph")).and_then(Value::as_str) {
        None => reasons.push(DropReason::ProcedureMissing),
        Some(p) if sanitize_text(p).split_whitespace().count() < MIN_PARAGRAPH_WORDS => {
            reasons.push(DropReason::ParagraphTooShort)
        }
        Some(_) => {}
    }
    let field = |k: &str| proc_.and_then(|p| p.get(k));
    if !non_empty_array(field("substances")) {
        reasons.push(DropReason::SubstancesEmpty);
    }
    if !non_empty_array(field("reactants")) {
        reasons.push(DropReason::ReactantsEmpty);
    }
    if !non_empty_array(field("products")) {
        reasons.push(DropReason::ProductsEmpty);
    }
    if !non_empty_str(obj.get("id")) && !non_empty_str(obj.get("iupac_name")) {
        reasons.push(DropReason::NoIdentifier);
    }

    let substances = field("substances").and_then(Value::as_array).map(Vec::as_slice).unwrap_or(&[]);
    let continuous = substances
        .iter()
        .enumerate()
        .all(|(i, s)| s.get("idx").and_then(Value::as_i64) == Some(i as i64));
    if !continuous {
        reasons.push(DropReason::IdxDiscontinuous);
    }
    let (mut extraneous, mut missing, mut bad_role) = (false, false, false);
    for s in substances {
        let Some(s) = s.as_object() else {
            missing = true;
            continue;
        };
        extraneous |= s
            .keys()
            .any(|k| !MANDATORY_SUBSTANCE_KEYS.contains(&k.as_str()) && !OPTIONAL_SUBSTANCE_KEYS.contains(&k.as_str()));
        missing |= MANDATORY_SUBSTANCE_KEYS.iter().any(|k| !s.contains_key(*k));
        if let Some(role) = s.get("role").and_then(Value::as_str) {
            let role = role.trim();
            bad_role |= !role.is_empty() && !ROLES.iter().any(|(r, _)| *r == role);
        }
    }
    if extraneous {
        reasons.push(DropReason::ExtraneousSubstanceKeys);
    }
    if missing {
        reasons.push(DropReason::MissingSubstanceKeys);
    }
    if bad_role {
        reasons.push(DropReason::RoleInvalid);
    }

    let products = field("products").and_then(Value::as_array).map(Vec::as_slice).unwrap_or(&[]);
    let over = products.iter().any(|p| {
        p.get("yield_ratio")
            .and_then(Value::as_str)
            .and_then(parse_yield)
            .is_some_and(|y| y > 100.0)
    });
    if over {
        reasons.push(DropReason::YieldExceeds100);
    }
    if let Some(k) = obj.get("keyword") {
        if KeywordDependency::parse_list(k).is_err() {
            reasons.push(DropReason::KeywordInvalid);
        }
    }

    match serde_json::from_value::<TextualRecord>(v.clone()) {
        Ok(r) if reasons.is_empty() => Ok(r),
        // A type error not explained by any rule above.
        Err(_) if reasons.is_empty() => Err(vec![DropReason::Malformed]),
        _ => Err(reasons),
    }
}
