//! Finite posets, sheaf diagrams over them, assignments and the consistency
//! radius.

mod assignment;
mod diagram;
mod json;
mod poset;

use thiserror::Error;

pub use assignment::{
    check_functoriality, consistency_radius, consistency_radius_weighted, is_section,
    residual_breakdown, Assignment, FunctorialityReport, FunctorialityViolation, PairResidual,
};
pub use diagram::{DiagramBuilder, PairScope, Restriction, SheafDiagram, Stalk};
pub use json::{AssignmentJson, CellJson, RestrictionJson, SheafJson};
pub use poset::{BitSet, CellId, Poset};

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("unknown cell {0}")]
    UnknownCell(String),
    #[error("duplicate cell label `{0}`")]
    DuplicateLabel(String),
    #[error("cell `{cell}` expects a value of dimension {expected}, got {got}")]
    DimensionMismatch {
        cell: String,
        expected: usize,
        got: usize,
    },
    #[error("restriction {source_cell} -> {target} has shape {map_in}->{map_out}, stalks are {src_dim}->{dst_dim}")]
    MapShape {
        source_cell: String,
        target: String,
        map_in: usize,
        map_out: usize,
        src_dim: usize,
        dst_dim: usize,
    },
    #[error("restriction {0} -> {1} declared twice")]
    DuplicateRestriction(String, String),
    #[error("restrictions form a cycle through `{0}`")]
    CyclicRestrictions(String),
    #[error("restriction from `{0}` to itself")]
    SelfRestriction(String),
    #[error("assignment is not global; missing {0:?}")]
    NotGlobal(Vec<String>),
    #[error("norm exponent must be at least 1, got {0}")]
    InvalidNorm(f64),
    #[error("stalk weight must be positive and finite, got {0}")]
    InvalidWeight(f64),
    #[error("weights override has {got} entries for {expected} cells")]
    WeightCount { expected: usize, got: usize },
    #[error("malformed diagram: {0}")]
    Malformed(String),
}
