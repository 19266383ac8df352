//! Three-step funnel for text-extracted reaction records: validate, repair,
//! then sanitize and split.
//!
//! Records are independent. Output order follows input order, and running
//! the funnel on its own output changes nothing.

pub mod canonical;
pub mod correct;
pub mod record;
pub mod validate;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;

pub use canonical::{canonicalize, sanitize_name, sanitize_text, split_conjunction, split_record};
pub use correct::autocorrect;
pub use record::{KeywordDependency, KeywordKind, Procedure, Product, Stage, StandardReaction, Substance, TextualRecord};
pub use validate::{parse_yield, validate_value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    /// Not a JSON object, or a field of the wrong type.
    Malformed,
    ProcedureMissing,
    ParagraphTooShort,
    SubstancesEmpty,
    ReactantsEmpty,
    ProductsEmpty,
    NoIdentifier,
    IdxDiscontinuous,
    ExtraneousSubstanceKeys,
    MissingSubstanceKeys,
    RoleInvalid,
    #[serde(rename = "yield_exceeds_100")]
    YieldExceeds100,
    KeywordInvalid,
    RoleUnassignable,
    SubstanceUnnamed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ChangeAction {
    FilledChemicalName,
    RemovedDanglingPointer,
    RemovedDuplicatePointer,
    RemovedFromRoleArray,
    AppendedToRoleArray,
    RoleRewritten,
    Sanitized,
    Split,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Change {
    pub line: usize,
    pub field: String,
    pub action: ChangeAction,
    pub before: Value,
    pub after: Value,
}

/// Changes made to one input record.
#[derive(Debug, Clone, Default)]
pub struct ChangeLog {
    pub line: usize,
    pub changes: Vec<Change>,
}

impl ChangeLog {
    pub fn new(line: usize) -> Self {
        ChangeLog {
            line,
            changes: Vec::new(),
        }
    }

    pub fn push(&mut self, field: String, action: ChangeAction, before: Value, after: Value) {
        self.changes.push(Change {
            line: self.line,
            field,
            action,
            before,
            after,
        });
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DroppedRecord {
    pub line: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    pub reasons: Vec<DropReason>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Standard(Vec<StandardReaction>),
    Dropped(DroppedRecord),
}

fn drop_for(line: usize, v: Option<&Value>, reasons: Vec<DropReason>, detail: Option<String>) -> DroppedRecord {
    let s = |k: &str| v.and_then(|v| v.get(k)).and_then(Value::as_str).map(str::to_string);
    DroppedRecord {
        line,
        id: s("id"),
        title: s("title"),
        reasons,
        detail,
    }
}

/// Runs one JSON line through the funnel. `line` is 1-based and only used
/// for reporting.
pub fn refine_line(line: usize, text: &str) -> (Outcome, Vec<Change>) {
    let mut log = ChangeLog::new(line);
    let v: Value = match serde_json::from_str(text) {
        Ok(v) => v,
        Err(e) => {
            let d = drop_for(line, None, vec![DropReason::Malformed], Some(e.to_string()));
            return (Outcome::Dropped(d), log.changes);
        }
    };
    let outcome = refine_value(&v, &mut log);
    (outcome, log.changes)
}

pub fn refine_value(v: &Value, log: &mut ChangeLog) -> Outcome {
    let mut rec = match validate_value(v) {
        Ok(r) => r,
        Err(reasons) => return Outcome::Dropped(drop_for(log.line, Some(v), reasons, None)),
    };
    if let Err(reason) = autocorrect(&mut rec, log) {
        return Outcome::Dropped(drop_for(log.line, Some(v), vec![reason], None));
    }
    canonicalize(&mut rec, log);
    Outcome::Standard(split_record(rec, log))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct FunnelStats {
    pub inputs: usize,
    pub dropped: usize,
    /// Records that passed before splitting.
    pub survivors: usize,
    pub standards: usize,
}

#[derive(Debug, Clone, Default)]
pub struct RefineOutput {
    pub standard: Vec<StandardReaction>,
    pub dropped: Vec<DroppedRecord>,
    pub changelog: Vec<Change>,
    pub stats: FunnelStats,
}

/// Refines every non-blank line. Line numbers are 1-based positions in
/// `lines`.
pub fn refine_stream<S: AsRef<str> + Sync>(lines: &[S]) -> RefineOutput {
    let results: Vec<(Outcome, Vec<Change>)> = lines
        .par_iter()
        .enumerate()
        .filter(|(_, l)| !l.as_ref().trim().is_empty())
        .map(|(i, l)| refine_line(i + 1, l.as_ref()))
        .collect();
    let mut out = RefineOutput::default();
    for (outcome, changes) in results {
        out.stats.inputs += 1;
        out.changelog.extend(changes);
        match outcome {
            Outcome::Standard(v) => {
                out.stats.survivors += 1;
                out.stats.standards += v.len();
                out.standard.extend(v);
            }
            Outcome::Dropped(d) => {
                out.stats.dropped += 1;
                out.dropped.push(d);
            }
        }
    }
    out
}
