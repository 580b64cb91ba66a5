use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid bounding box ({x1}, {y1}, {x2}, {y2})")]
    InvalidBox { x1: f64, y1: f64, x2: f64, y2: f64 },

    #[error("box center ({x}, {y}) lies outside the {width}x{height} motion field")]
    CenterOutOfField { x: f64, y: f64, width: usize, height: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("embedding {index} has zero or non-finite norm")]
    ZeroNormEmbedding { index: usize },

    #[error("cost matrix is already augmented with a dustbin")]
    AlreadyAugmented,

    #[error("cost matrix must be augmented with a dustbin")]
    NotAugmented,

    #[error("cost matrix contains a non-finite entry at ({row}, {col})")]
    NonFiniteCost { row: usize, col: usize },

    #[error("infeasible marginals: row mass {row_mass} vs column mass {col_mass}")]
    InfeasibleMarginals { row_mass: f64, col_mass: f64 },

    #[error("gradient requires a fixed-iteration forward pass ({expected} iterations), got {actual}")]
    IterationMismatch { expected: usize, actual: usize },

    #[error("label ({row}, {col}) is outside the real block of a {rows}x{cols} plan")]
    LabelOutOfRange { row: usize, col: usize, rows: usize, cols: usize },

    #[error("frame {frame}: {detections} detections but {embeddings} embeddings")]
    EmbeddingCountMismatch { frame: i64, detections: usize, embeddings: usize },

    #[error("frame {frame} does not follow frame {previous}")]
    NonMonotonicFrame { frame: i64, previous: i64 },

    #[error("cannot place {num_objects} latents in dimension {dim} with separation {separation}")]
    SeparationInfeasible { num_objects: usize, dim: usize, separation: f64 },

    #[error("problem too large for exhaustive search ({0} > 8)")]
    TooLarge(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("malformed {kind} file: {message}")]
    Format { kind: &'static str, message: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}
