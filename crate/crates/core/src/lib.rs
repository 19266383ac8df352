//! Deterministic core of reaction diagram parsing.
//!
//! * [`model`] and [`prediction`]: reaction records, ground-truth parsing and
//!   raw model output parsing for the three output strategies.
//! * [`matching`] and [`evaluate`]: Soft/Hybrid reaction matching, set
//!   assignment and corpus precision/recall/F1.
//! * [`reward`]: the permutation-invariant per-sample reward.
//! * [`idmap`]: identifier ↔ box maps, virtual identifiers, resolution.
//! * [`lines`]: readers for the line-delimited input files.
//! * [`render`]: ink-aware stamping of identifiers onto diagram images.
//! * [`refine`]: validation, auto-correction and canonicalization of
//!   text-extracted reaction records.
//! * [`join`]: identifier-keyed joining of visual and textual reactions.
//! * [`order`]: serialization-order analysis of set-perfect predictions.

pub mod error;
pub mod evaluate;
pub mod geometry;
pub mod idmap;
pub mod join;
pub mod lines;
pub mod matching;
pub mod model;
pub mod order;
pub mod prediction;
pub mod refine;
pub mod render;
pub mod reward;
pub mod text;

pub use error::ModelError;
pub use geometry::{iou, BBox};
pub use text::{normalize_text, normalized_edit_distance};
