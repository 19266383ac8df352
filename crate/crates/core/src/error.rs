use thiserror::Error;

/// Errors raised while parsing or validating annotation and map records.
///
/// `path` fields use a dotted/indexed notation such as
/// `reactions[0].products[1].ref`.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("malformed record: {message}")]
    Syntax { message: String },
    #[error("{path}: {message}")]
    Schema { path: String, message: String },
    #[error("{path}: degenerate box {bbox:?} (requires x1 < x2 and y1 < y2)")]
    DegenerateBox { path: String, bbox: [f64; 4] },
    #[error("{path}: invalid box: {detail}")]
    InvalidBox { path: String, detail: String },
    #[error("{path}: box {bbox:?} lies outside the {width}x{height} image")]
    BoxOutOfBounds {
        path: String,
        bbox: [f64; 4],
        width: u32,
        height: u32,
    },
    #[error("{path}: reference {reference} does not resolve to a listed molecule")]
    DanglingReference { path: String, reference: String },
    #[error("{path}: duplicate mol_index {mol_index}")]
    DuplicateMolIndex { path: String, mol_index: i64 },
    #[error("{path}: identifier {identifier:?} is already used by mol_index {first}")]
    DuplicateIdentifier {
        path: String,
        identifier: String,
        first: i64,
    },
    #[error("{path}: molecule has no identifiers")]
    EmptyIdentifiers { path: String },
}

fn join_path(prefix: &str, path: &str) -> String {
    if path.is_empty() {
        prefix.to_string()
    } else if prefix.is_empty() || path.starts_with('[') {
        format!("{prefix}{path}")
    } else {
        format!("{prefix}.{path}")
    }
}

impl ModelError {
    pub(crate) fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        ModelError::Schema {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Prefixes the error's field path (nested parsers report relative to
    /// their own root).
    pub(crate) fn at(mut self, prefix: &str) -> Self {
        match &mut self {
            ModelError::Syntax { .. } => {}
            ModelError::Schema { path, .. }
            | ModelError::DegenerateBox { path, .. }
            | ModelError::InvalidBox { path, .. }
            | ModelError::BoxOutOfBounds { path, .. }
            | ModelError::DanglingReference { path, .. }
            | ModelError::DuplicateMolIndex { path, .. }
            | ModelError::DuplicateIdentifier { path, .. }
            | ModelError::EmptyIdentifiers { path } => *path = join_path(prefix, path),
        }
        self
    }
}
